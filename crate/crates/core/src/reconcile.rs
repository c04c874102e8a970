//! Tiered merge suggestions for one portal's tags and curator-approved
//! merges applied to snapshots.
//!
//! Tier 1 groups tags sharing a canonical key. Tier 2 pairs the survivors of
//! two clusters whose fuzzy-eligible keys are one or two edits apart. Tier 3
//! pairs survivors a [`SimilarityProvider`] scores at or above a threshold.
//! No unordered pair of raw tags is covered by more than one suggestion.
//!
//! Applied merges are appended to a merge log (`<portal>.mergelog`, one
//! `portal<TAB>survivor<TAB>m1,m2,...<TAB>timestamp` line per merge) and the
//! pre-merge snapshot is kept as `<portal>.base`, so that replaying the log
//! on the base reproduces the current snapshot.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{format_ts, parse_ts, Clock};
use crate::corpus::{load_snapshot, save_snapshot, snapshot_path, Corpus, CorpusError, PortalSnapshot};
use crate::fsutil::append_line;
use crate::metrics::{close_key_pairs, group_by_key};
use crate::normalize::{fuzzy_eligible, CanonicalKey};
use crate::semsim::SimilarityProvider;

/// Largest edit distance that still yields a tier-2 suggestion.
pub const MAX_TIER2_DISTANCE: usize = 2;
pub const MERGELOG_EXT: &str = "mergelog";
pub const BASE_EXT: &str = "base";
pub const REJECTIONS_EXT: &str = "rejections";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Tier {
    Canonical = 1,
    EditDistance = 2,
    Semantic = 3,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Canonical, Tier::EditDistance, Tier::Semantic];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl From<Tier> for u8 {
    fn from(t: Tier) -> u8 {
        t.number()
    }
}

impl TryFrom<u8> for Tier {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        match n {
            1 => Ok(Tier::Canonical),
            2 => Ok(Tier::EditDistance),
            3 => Ok(Tier::Semantic),
            _ => Err(format!("tier must be 1, 2 or 3, got {n}")),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Stable identifier: a truncated SHA-256 over portal, sorted members and
/// tier, so that recomputing suggestions yields the same ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuggestionId(String);

impl SuggestionId {
    pub fn compute(portal_id: &str, sorted_members: &[String], tier: Tier) -> Self {
        let mut h = Sha256::new();
        h.update(portal_id.as_bytes());
        for m in sorted_members {
            h.update([0u8]);
            h.update(m.as_bytes());
        }
        h.update([0u8, tier.number()]);
        let digest = h.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Self(hex)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for SuggestionId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl fmt::Display for SuggestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    SharedKey {
        key: CanonicalKey,
    },
    EditDistance {
        distance: usize,
        /// The edit is not a short change at the end of the word (as in
        /// plurals), so the pair is a likely false positive.
        low_confidence: bool,
    },
    Similarity {
        score: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeSuggestion {
    pub suggestion_id: SuggestionId,
    pub portal_id: String,
    pub tier: Tier,
    /// Sorted, distinct raw names; at least two.
    pub members: Vec<String>,
    pub proposed_survivor: String,
    pub evidence: Evidence,
    pub status: SuggestionStatus,
}

impl MergeSuggestion {
    fn new(
        snapshot: &PortalSnapshot,
        tier: Tier,
        mut members: Vec<String>,
        proposed_survivor: String,
        evidence: Evidence,
    ) -> Self {
        members.sort();
        members.dedup();
        Self {
            suggestion_id: SuggestionId::compute(&snapshot.portal_id, &members, tier),
            portal_id: snapshot.portal_id.clone(),
            tier,
            members,
            proposed_survivor,
            evidence,
            status: SuggestionStatus::Pending,
        }
    }

    /// Every unordered pair of members.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.members
            .iter()
            .enumerate()
            .flat_map(move |(i, a)| self.members[i + 1..].iter().map(move |b| (a.as_str(), b.as_str())))
    }
}

/// Survivor order: highest usage, then an all-lowercase name, then the
/// lexicographically smallest name.
pub fn choose_survivor<'a>(snapshot: &PortalSnapshot, names: &[&'a str]) -> &'a str {
    let usage = |n: &str| snapshot.tag(n).map_or(0, |t| t.usage_count);
    names
        .iter()
        .copied()
        .min_by(|a, b| {
            usage(b)
                .cmp(&usage(a))
                .then_with(|| is_lowercase(b).cmp(&is_lowercase(a)))
                .then_with(|| a.cmp(b))
        })
        .expect("survivor chosen from a non-empty set")
}

fn is_lowercase(s: &str) -> bool {
    s.chars().all(|c| !c.is_uppercase())
}

struct Clusters<'a> {
    groups: BTreeMap<CanonicalKey, Vec<&'a str>>,
    survivors: BTreeMap<CanonicalKey, &'a str>,
}

impl<'a> Clusters<'a> {
    fn of(snapshot: &'a PortalSnapshot) -> Self {
        let groups = group_by_key(snapshot);
        let survivors = groups
            .iter()
            .map(|(k, names)| (k.clone(), choose_survivor(snapshot, names)))
            .collect();
        Self { groups, survivors }
    }
}

pub fn suggest_tier1(snapshot: &PortalSnapshot) -> Vec<MergeSuggestion> {
    let clusters = Clusters::of(snapshot);
    clusters
        .groups
        .iter()
        .filter(|(_, names)| names.len() >= 2)
        .map(|(key, names)| {
            MergeSuggestion::new(
                snapshot,
                Tier::Canonical,
                names.iter().map(|n| n.to_string()).collect(),
                clusters.survivors[key].to_string(),
                Evidence::SharedKey { key: key.clone() },
            )
        })
        .collect()
}

// Stripping the common prefix isolates the edit; plural and spelling
// variants leave at most two trailing characters on each side.
fn low_confidence(a: &CanonicalKey, b: &CanonicalKey) -> bool {
    let prefix = a
        .as_str()
        .chars()
        .zip(b.as_str().chars())
        .take_while(|(x, y)| x == y)
        .count();
    a.char_len() - prefix > 2 || b.char_len() - prefix > 2
}

pub fn suggest_tier2(snapshot: &PortalSnapshot) -> Vec<MergeSuggestion> {
    let clusters = Clusters::of(snapshot);
    close_key_pairs(clusters.groups.keys(), MAX_TIER2_DISTANCE)
        .into_iter()
        .map(|(ka, kb, distance)| {
            let (sa, sb) = (clusters.survivors[&ka], clusters.survivors[&kb]);
            MergeSuggestion::new(
                snapshot,
                Tier::EditDistance,
                vec![sa.to_string(), sb.to_string()],
                choose_survivor(snapshot, &[sa, sb]).to_string(),
                Evidence::EditDistance {
                    distance,
                    low_confidence: low_confidence(&ka, &kb),
                },
            )
        })
        .collect()
}

/// Pairs of eligible cluster keys known to `provider` that score at least
/// `threshold` in the snapshot's locale, excluding pairs already suggested
/// by tier 2.
pub fn suggest_tier3<P: SimilarityProvider + ?Sized>(
    snapshot: &PortalSnapshot,
    provider: &P,
    threshold: f64,
) -> Vec<MergeSuggestion> {
    let clusters = Clusters::of(snapshot);
    let tier2: HashSet<(CanonicalKey, CanonicalKey)> = close_key_pairs(clusters.groups.keys(), MAX_TIER2_DISTANCE)
        .into_iter()
        .map(|(a, b, _)| (a, b))
        .collect();
    let lang = snapshot.locale.as_str();
    let known: Vec<&CanonicalKey> = clusters
        .groups
        .keys()
        .filter(|k| fuzzy_eligible(k) && provider.knows(k, lang))
        .collect();
    let mut out = Vec::new();
    for (i, ka) in known.iter().enumerate() {
        for kb in &known[i + 1..] {
            if tier2.contains(&((*ka).clone(), (*kb).clone())) {
                continue;
            }
            let score = provider.similarity(ka, kb, lang);
            if score >= threshold {
                let (sa, sb) = (clusters.survivors[*ka], clusters.survivors[*kb]);
                out.push(MergeSuggestion::new(
                    snapshot,
                    Tier::Semantic,
                    vec![sa.to_string(), sb.to_string()],
                    choose_survivor(snapshot, &[sa, sb]).to_string(),
                    Evidence::Similarity { score, threshold },
                ));
            }
        }
    }
    out
}

/// Suggestions of the requested tiers, ordered by tier then members.
/// Tier 3 is skipped when no provider is given.
pub fn suggest(
    snapshot: &PortalSnapshot,
    tiers: &[Tier],
    provider: Option<&dyn SimilarityProvider>,
    threshold: f64,
) -> Vec<MergeSuggestion> {
    let mut out = Vec::new();
    for tier in Tier::ALL.into_iter().filter(|t| tiers.contains(t)) {
        match tier {
            Tier::Canonical => out.extend(suggest_tier1(snapshot)),
            Tier::EditDistance => out.extend(suggest_tier2(snapshot)),
            Tier::Semantic => {
                if let Some(p) = provider {
                    out.extend(suggest_tier3(snapshot, p, threshold));
                }
            }
        }
    }
    out.sort_by(|a, b| (a.tier, &a.members).cmp(&(b.tier, &b.members)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRecord {
    pub portal_id: String,
    pub survivor: String,
    /// Sorted member names, survivor included.
    pub members: Vec<String>,
    pub timestamp: DateTime<Utc>,
}

impl MergeRecord {
    pub fn to_line(&self) -> String {
        let members: Vec<String> = self.members.iter().map(|m| escape(m)).collect();
        format!(
            "{}\t{}\t{}\t{}",
            escape(&self.portal_id),
            escape(&self.survivor),
            members.join(","),
            format_ts(&self.timestamp)
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [portal, survivor, members, ts] = fields[..] else {
            return Err(format!("expected 4 tab-separated fields, got {}", fields.len()));
        };
        let members: Vec<String> = split_unescaped(members, ',')
            .into_iter()
            .map(|m| unescape(&m))
            .collect();
        if members.len() < 2 {
            return Err("a merge needs at least two members".into());
        }
        let survivor = unescape(survivor);
        if !members.contains(&survivor) {
            return Err(format!("survivor {survivor:?} is not a member"));
        }
        Ok(Self {
            portal_id: unescape(portal),
            survivor,
            members,
            timestamp: parse_ts(ts).map_err(|e| format!("bad timestamp {ts:?}: {e}"))?,
        })
    }

    fn same_merge(&self, portal_id: &str, sorted_members: &[String]) -> bool {
        self.portal_id == portal_id && self.members == sorted_members
    }
}

// Tag names may hold any character, so separators are backslash-escaped.
fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ',' => out.push_str("\\,"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

// Splits on `sep` not preceded by an escaping backslash; parts stay escaped.
fn split_unescaped(s: &str, sep: char) -> Vec<String> {
    let mut parts = vec![String::new()];
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            parts.last_mut().unwrap().push(c);
            if let Some(n) = chars.next() {
                parts.last_mut().unwrap().push(n);
            }
        } else if c == sep {
            parts.push(String::new());
        } else {
            parts.last_mut().unwrap().push(c);
        }
    }
    parts
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeLog {
    pub records: Vec<MergeRecord>,
}

impl MergeLog {
    pub fn parse(text: &str) -> Result<Self, MergeError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            records.push(MergeRecord::parse_line(line).map_err(|message| MergeError::Log { line: i + 1, message })?);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, MergeError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(source) => Err(MergeError::Io {
                path: path.to_path_buf(),
                source,
            }),
        }
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }

    pub fn contains(&self, portal_id: &str, sorted_members: &[String]) -> bool {
        self.records.iter().any(|r| r.same_merge(portal_id, sorted_members))
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("suggestion {0} is stale: a member is no longer in the snapshot, re-run suggestions")]
    Stale(SuggestionId),
    #[error("unknown suggestion {0}")]
    UnknownSuggestion(SuggestionId),
    #[error("suggestion {0} is not pending")]
    NotPending(SuggestionId),
    #[error("survivor {survivor:?} is not a member of suggestion {id}")]
    BadSurvivor { id: SuggestionId, survivor: String },
    #[error("merge log entry for portal {record:?} does not apply to portal {portal:?}")]
    WrongPortal { record: String, portal: String },
    #[error("merge log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("unknown portal {0:?}")]
    UnknownPortal(String),
    #[error("storage error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Rewrites `snapshot` so every dataset carrying any of `members` carries
/// `survivor` instead (once), drops the other members from the tag list and
/// recounts usage. Returns `None` if a member is missing.
pub fn merge_tags(snapshot: &PortalSnapshot, members: &[String], survivor: &str) -> Option<PortalSnapshot> {
    let set: HashSet<&str> = members.iter().map(String::as_str).collect();
    if set.iter().any(|m| snapshot.tag(m).is_none()) {
        return None;
    }
    let mut out = snapshot.clone();
    for d in &mut out.datasets {
        let mut placed = false;
        d.tag_names.retain_mut(|t| {
            if !set.contains(t.as_str()) {
                return true;
            }
            if placed {
                return false;
            }
            placed = true;
            *t = survivor.to_string();
            true
        });
    }
    let registered = out.tags.iter().filter(|t| set.contains(t.name())).any(|t| t.registered);
    out.tags.retain(|t| t.name() == survivor || !set.contains(t.name()));
    if let Some(t) = out.tags.iter_mut().find(|t| t.name() == survivor) {
        t.registered = registered;
    }
    out.recount_in_place();
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub snapshot: PortalSnapshot,
    /// False when the same merge was already in the log.
    pub applied: bool,
}

/// Applies a pending suggestion with the curator's chosen survivor and
/// appends the merge to `log`. Re-applying an already logged merge is a
/// no-op.
pub fn apply_merge(
    snapshot: &PortalSnapshot,
    suggestion: &MergeSuggestion,
    survivor: &str,
    log: &mut MergeLog,
    clock: &dyn Clock,
) -> Result<MergeOutcome, MergeError> {
    let id = &suggestion.suggestion_id;
    if log.contains(&snapshot.portal_id, &suggestion.members) {
        return Ok(MergeOutcome {
            snapshot: snapshot.clone(),
            applied: false,
        });
    }
    if suggestion.status != SuggestionStatus::Pending {
        return Err(MergeError::NotPending(id.clone()));
    }
    if !suggestion.members.iter().any(|m| m == survivor) {
        return Err(MergeError::BadSurvivor {
            id: id.clone(),
            survivor: survivor.to_string(),
        });
    }
    let merged = merge_tags(snapshot, &suggestion.members, survivor).ok_or_else(|| MergeError::Stale(id.clone()))?;
    log.records.push(MergeRecord {
        portal_id: snapshot.portal_id.clone(),
        survivor: survivor.to_string(),
        members: suggestion.members.clone(),
        timestamp: clock.now(),
    });
    Ok(MergeOutcome {
        snapshot: merged,
        applied: true,
    })
}

/// Replays every record of `log` on `base`.
pub fn replay(base: &PortalSnapshot, log: &MergeLog) -> Result<PortalSnapshot, MergeError> {
    let mut current = base.clone();
    for r in &log.records {
        if r.portal_id != base.portal_id {
            return Err(MergeError::WrongPortal {
                record: r.portal_id.clone(),
                portal: base.portal_id.clone(),
            });
        }
        let id = SuggestionId::compute(&r.portal_id, &r.members, Tier::Canonical);
        current = merge_tags(&current, &r.members, &r.survivor).ok_or(MergeError::Stale(id))?;
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortalReduction {
    pub portal_id: String,
    pub total_tags: usize,
    pub distinct_keys: usize,
    pub tier1_removable: usize,
    pub tier2_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub portals: Vec<PortalReduction>,
    pub total_tags: usize,
    pub tier1_removable: usize,
    pub tier2_pairs: usize,
}

impl ReductionReport {
    pub fn tier1_fraction(&self) -> f64 {
        frac(self.tier1_removable, self.total_tags)
    }

    pub fn tier2_fraction(&self) -> f64 {
        frac(self.tier2_pairs, self.total_tags)
    }
}

fn frac(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn portal_reduction(snapshot: &PortalSnapshot) -> PortalReduction {
    let groups = group_by_key(snapshot);
    PortalReduction {
        portal_id: snapshot.portal_id.clone(),
        total_tags: snapshot.tags.len(),
        distinct_keys: groups.len(),
        tier1_removable: groups.values().map(|n| n.len() - 1).sum(),
        tier2_pairs: close_key_pairs(groups.keys(), MAX_TIER2_DISTANCE).len(),
    }
}

/// How many local tags tier-1 merges would remove, and how many tier-2
/// pairs remain once tier-1 clusters are collapsed.
pub fn reduction_report(corpus: &Corpus) -> ReductionReport {
    let portals: Vec<PortalReduction> = corpus.snapshots().iter().map(portal_reduction).collect();
    ReductionReport {
        total_tags: portals.iter().map(|p| p.total_tags).sum(),
        tier1_removable: portals.iter().map(|p| p.tier1_removable).sum(),
        tier2_pairs: portals.iter().map(|p| p.tier2_pairs).sum(),
        portals,
    }
}

/// A corpus directory seen as the curation state of its portals:
/// `<id>.snap`, `<id>.base`, `<id>.mergelog` and `<id>.rejections`.
#[derive(Debug, Clone)]
pub struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, portal_id: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{portal_id}.{ext}"))
    }

    pub fn mergelog_path(&self, portal_id: &str) -> PathBuf {
        self.path(portal_id, MERGELOG_EXT)
    }

    pub fn base_path(&self, portal_id: &str) -> PathBuf {
        self.path(portal_id, BASE_EXT)
    }

    pub fn rejections_path(&self, portal_id: &str) -> PathBuf {
        self.path(portal_id, REJECTIONS_EXT)
    }

    pub fn load(&self, portal_id: &str) -> Result<PortalSnapshot, MergeError> {
        let path = snapshot_path(&self.dir, portal_id);
        if portal_id.is_empty() || portal_id.contains(['/', '\\']) || !path.is_file() {
            return Err(MergeError::UnknownPortal(portal_id.to_string()));
        }
        Ok(load_snapshot(&path)?)
    }

    pub fn rejections(&self, portal_id: &str) -> Result<BTreeSet<SuggestionId>, MergeError> {
        let path = self.rejections_path(portal_id);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(text.lines().filter(|l| !l.is_empty()).map(SuggestionId::from).collect()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeSet::new()),
            Err(source) => Err(MergeError::Io { path, source }),
        }
    }

    /// Current suggestions with rejected ones marked as such.
    pub fn suggestions(
        &self,
        portal_id: &str,
        tiers: &[Tier],
        provider: Option<&dyn SimilarityProvider>,
        threshold: f64,
    ) -> Result<Vec<MergeSuggestion>, MergeError> {
        let snap = self.load(portal_id)?;
        let rejected = self.rejections(portal_id)?;
        let mut out = suggest(&snap, tiers, provider, threshold);
        for s in &mut out {
            if rejected.contains(&s.suggestion_id) {
                s.status = SuggestionStatus::Rejected;
            }
        }
        Ok(out)
    }

    fn find(
        &self,
        snap: &PortalSnapshot,
        id: &SuggestionId,
        provider: Option<&dyn SimilarityProvider>,
        threshold: f64,
    ) -> Option<MergeSuggestion> {
        suggest(snap, &Tier::ALL, provider, threshold)
            .into_iter()
            .find(|s| &s.suggestion_id == id)
    }

    // An id absent from the current suggestions was either already merged
    // (a logged merge hashes to it) or has gone stale.
    fn absent(&self, portal_id: &str, id: &SuggestionId) -> Result<MergeError, MergeError> {
        let log = MergeLog::load(&self.mergelog_path(portal_id))?;
        let logged = log.records.iter().any(|r| {
            Tier::ALL
                .iter()
                .any(|t| &SuggestionId::compute(portal_id, &r.members, *t) == id)
        });
        Ok(if logged {
            MergeError::NotPending(id.clone())
        } else {
            MergeError::Stale(id.clone())
        })
    }

    /// Accepts a suggestion: the merged snapshot replaces `<id>.snap`, the
    /// merge is appended to the log and the first merge preserves the
    /// original as `<id>.base`. Accepting an already applied suggestion is
    /// a no-op returning the current snapshot.
    pub fn accept(
        &self,
        portal_id: &str,
        id: &SuggestionId,
        survivor: &str,
        provider: Option<&dyn SimilarityProvider>,
        threshold: f64,
        clock: &dyn Clock,
    ) -> Result<MergeOutcome, MergeError> {
        let snap = self.load(portal_id)?;
        let Some(suggestion) = self.find(&snap, id, provider, threshold) else {
            return match self.absent(portal_id, id)? {
                MergeError::NotPending(_) => Ok(MergeOutcome {
                    snapshot: snap,
                    applied: false,
                }),
                e => Err(e),
            };
        };
        if self.rejections(portal_id)?.contains(id) {
            return Err(MergeError::NotPending(id.clone()));
        }
        let log_path = self.mergelog_path(portal_id);
        let mut log = MergeLog::load(&log_path)?;
        let outcome = apply_merge(&snap, &suggestion, survivor, &mut log, clock)?;
        if !outcome.applied {
            return Ok(outcome);
        }
        let base = self.base_path(portal_id);
        if !base.exists() {
            save_snapshot(&snap, &base)?;
        }
        let record = log.records.last().expect("apply_merge logged a record");
        append_line(&log_path, &record.to_line()).map_err(|source| MergeError::Io {
            path: log_path.clone(),
            source,
        })?;
        save_snapshot(&outcome.snapshot, &snapshot_path(&self.dir, portal_id))?;
        Ok(outcome)
    }

    /// Marks a current suggestion as rejected; it stays listed with that
    /// status until the snapshot changes it away.
    pub fn reject(
        &self,
        portal_id: &str,
        id: &SuggestionId,
        provider: Option<&dyn SimilarityProvider>,
        threshold: f64,
    ) -> Result<(), MergeError> {
        let snap = self.load(portal_id)?;
        if self.find(&snap, id, provider, threshold).is_none() {
            return Err(self.absent(portal_id, id)?);
        }
        if self.rejections(portal_id)?.contains(id) {
            return Ok(());
        }
        let path = self.rejections_path(portal_id);
        append_line(&path, id.as_str()).map_err(|source| MergeError::Io { path, source })
    }

    /// Original snapshot and merge log, for replay checks.
    pub fn history(&self, portal_id: &str) -> Result<(PortalSnapshot, MergeLog), MergeError> {
        let base = self.base_path(portal_id);
        let snap = if base.is_file() {
            load_snapshot(&base)?
        } else {
            self.load(portal_id)?
        };
        Ok((snap, MergeLog::load(&self.mergelog_path(portal_id))?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::corpus::Dataset;
    use crate::semsim::Lexicon;

    fn snap(datasets: Vec<Dataset>) -> PortalSnapshot {
        PortalSnapshot::from_datasets(
            "demo",
            "http://demo.example",
            Some("en"),
            parse_ts("2015-09-01T00:00:00Z").unwrap(),
            datasets,
            Vec::<String>::new(),
        )
    }

    fn clock() -> FixedClock {
        FixedClock::parse("2016-01-01T00:00:00Z").unwrap()
    }

    #[test]
    fn tier1_examples() {
        let s = snap(vec![
            Dataset::new("a", "", &["Birth", "x"]),
            Dataset::new("b", "", &["birth"]),
        ]);
        let t1 = suggest_tier1(&s);
        assert_eq!(t1.len(), 1);
        assert_eq!(t1[0].members, vec!["Birth", "birth"]);
        assert_eq!(t1[0].proposed_survivor, "birth");

        let s = snap(vec![Dataset::new("a", "", &["Open Data", "open-data", "open_data"])]);
        assert_eq!(suggest_tier1(&s)[0].members.len(), 3);
        let s = snap(vec![Dataset::new("a", "", &["alpha", "beta"])]);
        assert!(suggest_tier1(&s).is_empty());
    }

    #[test]
    fn survivor_prefers_usage_then_lowercase() {
        let s = snap(vec![
            Dataset::new("a", "", &["Health"]),
            Dataset::new("b", "", &["Health", "HEALTH"]),
            Dataset::new("c", "", &["health"]),
        ]);
        assert_eq!(choose_survivor(&s, &["HEALTH", "Health", "health"]), "Health");
        assert_eq!(choose_survivor(&s, &["HEALTH", "health"]), "health");
    }

    #[test]
    fn tier2_examples() {
        let s = snap(vec![Dataset::new(
            "a",
            "",
            &["worker", "workers", "widow", "window", "budget-2010", "budget-2011"],
        )]);
        let t2 = suggest_tier2(&s);
        assert_eq!(t2.len(), 2);
        let find = |m: &str| t2.iter().find(|s| s.members.contains(&m.to_string())).unwrap();
        assert_eq!(
            find("worker").evidence,
            Evidence::EditDistance {
                distance: 1,
                low_confidence: false
            }
        );
        assert_eq!(
            find("widow").evidence,
            Evidence::EditDistance {
                distance: 1,
                low_confidence: true
            }
        );
    }

    #[test]
    fn tier3_respects_threshold_and_disjointness() {
        let lex = Lexicon::parse("a\teng\tautumn\na\teng\tfall\nb\teng\tcolour\nb\teng\tcolor\n").unwrap();
        let s = snap(vec![Dataset::new("a", "", &["autumn", "fall", "colour", "color"])]);
        let t3 = suggest_tier3(&s, &lex, 0.9);
        assert_eq!(t3.len(), 1);
        assert_eq!(t3[0].members, vec!["autumn", "fall"]);
        assert!(matches!(t3[0].evidence, Evidence::Similarity { score, .. } if score == 1.0));
        assert!(suggest_tier3(&s, &lex, 1.01).is_empty());
        // colour/color is a tier-2 pair and is not repeated in tier 3
        assert_eq!(suggest_tier2(&s).len(), 1);
    }

    #[test]
    fn ids_are_stable_and_tier_sensitive() {
        let m = vec!["a".to_string(), "b".to_string()];
        let x = SuggestionId::compute("p", &m, Tier::Canonical);
        assert_eq!(x, SuggestionId::compute("p", &m, Tier::Canonical));
        assert_ne!(x, SuggestionId::compute("p", &m, Tier::EditDistance));
        assert_ne!(x, SuggestionId::compute("q", &m, Tier::Canonical));
        assert_eq!(x.as_str().len(), 16);
    }

    #[test]
    fn merge_birth_on_three_datasets() {
        let s = snap(vec![
            Dataset::new("a", "", &["Birth"]),
            Dataset::new("b", "", &["birth", "x"]),
            Dataset::new("c", "", &["Birth", "birth"]),
        ]);
        let sug = &suggest_tier1(&s)[0];
        let mut log = MergeLog::default();
        let out = apply_merge(&s, sug, "birth", &mut log, &clock()).unwrap();
        assert!(out.applied);
        assert_eq!(out.snapshot.tags.len(), s.tags.len() - 1);
        assert!(out
            .snapshot
            .datasets
            .iter()
            .all(|d| d.tag_names.contains(&"birth".into())));
        assert_eq!(out.snapshot.tag("birth").unwrap().usage_count, 3);
        out.snapshot.validate().unwrap();

        let again = apply_merge(&out.snapshot, sug, "birth", &mut log, &clock()).unwrap();
        assert!(!again.applied);
        assert_eq!(again.snapshot, out.snapshot);
        assert_eq!(log.records.len(), 1);

        assert_eq!(replay(&s, &log).unwrap(), out.snapshot);
    }

    #[test]
    fn merge_rejects_bad_survivor_and_stale_members() {
        let s = snap(vec![Dataset::new("a", "", &["Birth", "birth"])]);
        let sug = suggest_tier1(&s).remove(0);
        let mut log = MergeLog::default();
        assert!(matches!(
            apply_merge(&s, &sug, "nope", &mut log, &clock()),
            Err(MergeError::BadSurvivor { .. })
        ));
        let other = snap(vec![Dataset::new("a", "", &["birth"])]);
        assert!(matches!(
            apply_merge(&other, &sug, "birth", &mut log, &clock()),
            Err(MergeError::Stale(_))
        ));
    }

    #[test]
    fn log_lines_round_trip_with_awkward_names() {
        let r = MergeRecord {
            portal_id: "p".into(),
            survivor: "a,b".into(),
            members: vec!["a,b".into(), "A\\,B\t".into()],
            timestamp: parse_ts("2016-01-01T00:00:00Z").unwrap(),
        };
        assert_eq!(MergeRecord::parse_line(&r.to_line()).unwrap(), r);
        assert!(MergeLog::parse("p\tx\tx\t2016-01-01T00:00:00Z\n").is_err());
    }

    #[test]
    fn reduction_counts() {
        let s = snap(vec![Dataset::new(
            "a",
            "",
            &[
                "Birth",
                "birth",
                "Open Data",
                "open-data",
                "open_data",
                "worker",
                "workers",
            ],
        )]);
        let r = portal_reduction(&s);
        assert_eq!(r.tier1_removable, 3);
        assert_eq!(r.tier1_removable, r.total_tags - r.distinct_keys);
        assert_eq!(r.tier2_pairs, 1);
        let none = portal_reduction(&snap(vec![Dataset::new("a", "", &["alpha", "beta"])]));
        assert_eq!(none.tier1_removable, 0);
    }

    #[test]
    fn workspace_accept_reject_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let s = snap(vec![
            Dataset::new("a", "", &["Birth", "worker"]),
            Dataset::new("b", "", &["birth", "workers"]),
        ]);
        save_snapshot(&s, &snapshot_path(dir.path(), "demo")).unwrap();
        let ws = Workspace::new(dir.path());
        let all = ws.suggestions("demo", &Tier::ALL, None, 0.9).unwrap();
        assert_eq!(all.len(), 2);
        let (t1, t2) = (&all[0], &all[1]);

        ws.reject("demo", &t2.suggestion_id, None, 0.9).unwrap();
        let listed = ws.suggestions("demo", &Tier::ALL, None, 0.9).unwrap();
        assert_eq!(listed[1].status, SuggestionStatus::Rejected);

        let out = ws
            .accept("demo", &t1.suggestion_id, "birth", None, 0.9, &clock())
            .unwrap();
        assert!(out.applied);
        let again = ws
            .accept("demo", &t1.suggestion_id, "birth", None, 0.9, &clock())
            .unwrap();
        assert!(!again.applied);
        assert!(matches!(
            ws.accept("demo", &SuggestionId::from("0000"), "x", None, 0.9, &clock()),
            Err(MergeError::Stale(_))
        ));
        let (base, log) = ws.history("demo").unwrap();
        assert_eq!(base, s);
        assert_eq!(replay(&base, &log).unwrap(), ws.load("demo").unwrap());
        assert!(matches!(ws.load("ghost"), Err(MergeError::UnknownPortal(_))));
    }
}
