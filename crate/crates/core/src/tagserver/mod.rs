//! Global tags shared across portals: meanings, inter-tag relations and
//! links to local tags, persisted as an append-only journal plus a
//! compacted snapshot.
//!
//! Store directory: `journal.log` holds one JSON mutation per line with a
//! strictly increasing `seq`; `snapshot.json` holds the full state up to its
//! `watermark` seq. Loading reads the snapshot and replays newer journal
//! entries.

mod rdf;
mod seed;

pub use rdf::{export_dataset_links, export_turtle, local_tag_iri, RdfContext, MUTO, OWL, RDFS, SKOS};
pub use seed::{seed_from_corpus, CandidateOutcome, CandidateReport, SeedError, SeedParams, SeedReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::fsutil::write_atomic;
use crate::normalize::{canonicalize, CanonicalKey};

pub const JOURNAL_FILE: &str = "journal.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
/// Journal entries after which the store compacts itself.
pub const DEFAULT_COMPACT_EVERY: u64 = 1000;
pub const SEARCH_PAGE_SIZE: usize = 50;

/// URL-safe global tag identifier; always a non-empty canonical key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Slug(String);

impl Slug {
    pub fn from_label(label: &str) -> Result<Self, TagError> {
        let key = canonicalize(label);
        if key.is_empty() {
            return Err(TagError::Validation(format!(
                "label {label:?} has no letters or digits"
            )));
        }
        Ok(Self(key.into_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Slug {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s.is_empty() || canonicalize(&s).as_str() != s {
            Err(format!("{s:?} is not a slug"))
        } else {
            Ok(Self(s))
        }
    }
}

impl TryFrom<&str> for Slug {
    type Error = String;

    fn try_from(s: &str) -> Result<Self, String> {
        Self::try_from(s.to_string())
    }
}

impl From<Slug> for String {
    fn from(s: Slug) -> String {
        s.0
    }
}

impl fmt::Display for Slug {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Broader,
    Narrower,
    Related,
    SameAs,
}

impl RelationKind {
    pub const ALL: [RelationKind; 4] = [
        RelationKind::Broader,
        RelationKind::Narrower,
        RelationKind::Related,
        RelationKind::SameAs,
    ];

    /// The kind seen from the other end of the relation.
    pub fn inverse(self) -> Self {
        match self {
            RelationKind::Broader => RelationKind::Narrower,
            RelationKind::Narrower => RelationKind::Broader,
            k => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocalLink {
    pub portal_id: String,
    pub tag_name: String,
}

impl LocalLink {
    pub fn new(portal_id: impl Into<String>, tag_name: impl Into<String>) -> Self {
        Self {
            portal_id: portal_id.into(),
            tag_name: tag_name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub target: Slug,
}

/// A global tag as seen by readers; relations include inverses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GlobalTag {
    pub slug: Slug,
    pub label: String,
    pub meanings: Vec<String>,
    pub relations: Vec<Relation>,
    pub local_links: Vec<LocalLink>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum TagError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("storage error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store file {path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

// Narrower is stored as Broader with the ends swapped; symmetric kinds are
// stored with the smaller slug first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StoredKind {
    Broader,
    Related,
    SameAs,
}

fn normalize_relation(a: &Slug, kind: RelationKind, b: &Slug) -> (Slug, StoredKind, Slug) {
    match kind {
        RelationKind::Broader => (a.clone(), StoredKind::Broader, b.clone()),
        RelationKind::Narrower => (b.clone(), StoredKind::Broader, a.clone()),
        RelationKind::Related | RelationKind::SameAs => {
            let k = if kind == RelationKind::Related {
                StoredKind::Related
            } else {
                StoredKind::SameAs
            };
            if a <= b {
                (a.clone(), k, b.clone())
            } else {
                (b.clone(), k, a.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredTag {
    label: String,
    meanings: Vec<String>,
    links: BTreeSet<LocalLink>,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct State {
    tags: BTreeMap<Slug, StoredTag>,
    relations: BTreeSet<(Slug, StoredKind, Slug)>,
}

/// A journaled change. Every mutation in the journal applied cleanly when it
/// was written, so replay never fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Create {
        slug: Slug,
        label: String,
        meanings: Vec<String>,
        at: DateTime<Utc>,
    },
    Link {
        slug: Slug,
        link: LocalLink,
        at: DateTime<Utc>,
    },
    Unlink {
        slug: Slug,
        link: LocalLink,
        at: DateTime<Utc>,
    },
    Relate {
        from: Slug,
        kind: RelationKind,
        to: Slug,
        at: DateTime<Utc>,
    },
    Unrelate {
        from: Slug,
        kind: RelationKind,
        to: Slug,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct JournalEntry {
    seq: u64,
    #[serde(flatten)]
    mutation: Mutation,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    watermark: u64,
    state: SnapshotState,
}

// JSON object keys must be strings, so the state is stored as lists.
#[derive(Serialize, Deserialize)]
struct SnapshotState {
    tags: Vec<(Slug, StoredTag)>,
    relations: Vec<(Slug, StoredKind, Slug)>,
}

impl State {
    fn tag(&self, slug: &Slug) -> Result<&StoredTag, TagError> {
        self.tags
            .get(slug)
            .ok_or_else(|| TagError::NotFound(format!("global tag {slug:?}")))
    }

    /// Whether `m` would change the state; errors when it is invalid.
    fn check(&self, m: &Mutation) -> Result<bool, TagError> {
        match m {
            Mutation::Create { slug, .. } => {
                if self.tags.contains_key(slug) {
                    return Err(TagError::Conflict(format!("global tag {slug:?} already exists")));
                }
                Ok(true)
            }
            Mutation::Link { slug, link, .. } => Ok(!self.tag(slug)?.links.contains(link)),
            Mutation::Unlink { slug, link, .. } => {
                if !self.tag(slug)?.links.contains(link) {
                    return Err(TagError::NotFound(format!(
                        "link {}:{} on {slug:?}",
                        link.portal_id, link.tag_name
                    )));
                }
                Ok(true)
            }
            Mutation::Relate { from, kind, to, .. } => {
                self.tag(from)?;
                self.tag(to)?;
                if from == to {
                    return Err(TagError::Validation(format!("{from:?} cannot relate to itself")));
                }
                Ok(!self.relations.contains(&normalize_relation(from, *kind, to)))
            }
            Mutation::Unrelate { from, kind, to, .. } => {
                self.tag(from)?;
                self.tag(to)?;
                if !self.relations.contains(&normalize_relation(from, *kind, to)) {
                    return Err(TagError::NotFound(format!("relation {from:?} {kind:?} {to:?}")));
                }
                Ok(true)
            }
        }
    }

    fn touch(&mut self, slug: &Slug, at: DateTime<Utc>) {
        if let Some(t) = self.tags.get_mut(slug) {
            t.updated_at = at;
        }
    }

    fn apply(&mut self, m: &Mutation) {
        match m {
            Mutation::Create {
                slug,
                label,
                meanings,
                at,
            } => {
                self.tags.insert(
                    slug.clone(),
                    StoredTag {
                        label: label.clone(),
                        meanings: meanings.clone(),
                        links: BTreeSet::new(),
                        created_at: *at,
                        updated_at: *at,
                    },
                );
            }
            Mutation::Link { slug, link, at } => {
                if let Some(t) = self.tags.get_mut(slug) {
                    t.links.insert(link.clone());
                }
                self.touch(slug, *at);
            }
            Mutation::Unlink { slug, link, at } => {
                if let Some(t) = self.tags.get_mut(slug) {
                    t.links.remove(link);
                }
                self.touch(slug, *at);
            }
            Mutation::Relate { from, kind, to, at } => {
                self.relations.insert(normalize_relation(from, *kind, to));
                self.touch(from, *at);
                self.touch(to, *at);
            }
            Mutation::Unrelate { from, kind, to, at } => {
                self.relations.remove(&normalize_relation(from, *kind, to));
                self.touch(from, *at);
                self.touch(to, *at);
            }
        }
    }

    fn relations_of(&self, slug: &Slug) -> Vec<Relation> {
        let mut out = Vec::new();
        for (a, k, b) in &self.relations {
            let (kind, target) = match k {
                StoredKind::Broader if a == slug => (RelationKind::Broader, b),
                StoredKind::Broader if b == slug => (RelationKind::Narrower, a),
                StoredKind::Related | StoredKind::SameAs if a == slug || b == slug => {
                    let kind = if *k == StoredKind::Related {
                        RelationKind::Related
                    } else {
                        RelationKind::SameAs
                    };
                    (kind, if a == slug { b } else { a })
                }
                _ => continue,
            };
            out.push(Relation {
                kind,
                target: target.clone(),
            });
        }
        out.sort_by(|x, y| (x.kind, &x.target).cmp(&(y.kind, &y.target)));
        out
    }

    fn view(&self, slug: &Slug) -> Option<GlobalTag> {
        let t = self.tags.get(slug)?;
        Some(GlobalTag {
            slug: slug.clone(),
            label: t.label.clone(),
            meanings: t.meanings.clone(),
            relations: self.relations_of(slug),
            local_links: t.links.iter().cloned().collect(),
            created_at: t.created_at,
            updated_at: t.updated_at,
        })
    }
}

struct Writer {
    seq: u64,
    watermark: u64,
    journal: Option<File>,
}

/// Concurrent-read, single-writer global tag store.
pub struct TagStore {
    dir: Option<PathBuf>,
    state: RwLock<State>,
    writer: Mutex<Writer>,
    clock: Arc<dyn Clock>,
    compact_every: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub tags: Vec<GlobalTag>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TagError + '_ {
    move |source| TagError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn validate_iri(iri: &str) -> Result<(), TagError> {
    oxiri::Iri::parse(iri)
        .map(|_| ())
        .map_err(|e| TagError::Validation(format!("{iri:?} is not an absolute IRI: {e}")))
}

impl TagStore {
    /// A store that lives only in memory.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            dir: None,
            state: RwLock::new(State::default()),
            writer: Mutex::new(Writer {
                seq: 0,
                watermark: 0,
                journal: None,
            }),
            clock,
            compact_every: DEFAULT_COMPACT_EVERY,
        }
    }

    /// Opens (creating if needed) the store in `dir`, replaying the journal
    /// on top of the last compacted snapshot.
    pub fn open(dir: &Path, clock: Arc<dyn Clock>) -> Result<Self, TagError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (mut state, watermark) = match std::fs::read_to_string(&snap_path) {
            Ok(text) => {
                let file: SnapshotFile = serde_json::from_str(&text).map_err(|e| TagError::Corrupt {
                    path: snap_path.clone(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
                let state = State {
                    tags: file.state.tags.into_iter().collect(),
                    relations: file.state.relations.into_iter().collect(),
                };
                (state, file.watermark)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (State::default(), 0),
            Err(e) => return Err(io_err(&snap_path)(e)),
        };
        let journal_path = dir.join(JOURNAL_FILE);
        let mut seq = watermark;
        let (entries, repair) = read_journal(&journal_path)?;
        if let Some(len) = repair {
            repair_journal(&journal_path, len)?;
        }
        for entry in entries {
            if entry.seq > watermark {
                state.apply(&entry.mutation);
                seq = entry.seq;
            }
        }
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(io_err(&journal_path))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            state: RwLock::new(state),
            writer: Mutex::new(Writer {
                seq,
                watermark,
                journal: Some(journal),
            }),
            clock,
            compact_every: DEFAULT_COMPACT_EVERY,
        })
    }

    pub fn with_compact_every(mut self, n: u64) -> Self {
        self.compact_every = n.max(1);
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Validates, journals, then applies. Returns whether anything changed.
    fn commit(&self, m: Mutation) -> Result<bool, TagError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if !self.read().check(&m)? {
            return Ok(false);
        }
        let entry = JournalEntry {
            seq: w.seq + 1,
            mutation: m,
        };
        if let (Some(file), Some(dir)) = (w.journal.as_mut(), self.dir.as_ref()) {
            let path = dir.join(JOURNAL_FILE);
            let mut line = serde_json::to_string(&entry).expect("journal entries serialize");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io_err(&path))?;
            file.sync_data().map_err(io_err(&path))?;
        }
        w.seq = entry.seq;
        self.state
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .apply(&entry.mutation);
        if self.dir.is_some() && w.seq - w.watermark >= self.compact_every {
            self.compact_locked(&mut w)?;
        }
        Ok(true)
    }

    /// Writes the full state to the snapshot file and empties the journal.
    pub fn compact(&self) -> Result<(), TagError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        self.compact_locked(&mut w)
    }

    fn compact_locked(&self, w: &mut Writer) -> Result<(), TagError> {
        let Some(dir) = self.dir.as_ref() else {
            return Ok(());
        };
        let state = self.read().clone();
        let file = SnapshotFile {
            watermark: w.seq,
            state: SnapshotState {
                tags: state.tags.into_iter().collect(),
                relations: state.relations.into_iter().collect(),
            },
        };
        let snap_path = dir.join(SNAPSHOT_FILE);
        let bytes = serde_json::to_vec(&file).expect("snapshot serializes");
        write_atomic(&snap_path, &bytes).map_err(io_err(&snap_path))?;
        // Entries at or below the watermark are skipped on load, so a crash
        // between these two writes is harmless.
        let journal_path = dir.join(JOURNAL_FILE);
        write_atomic(&journal_path, b"").map_err(io_err(&journal_path))?;
        w.journal = Some(
            OpenOptions::new()
                .append(true)
                .open(&journal_path)
                .map_err(io_err(&journal_path))?,
        );
        w.watermark = w.seq;
        Ok(())
    }

    /// Sequence number of the last acknowledged mutation.
    pub fn seq(&self) -> u64 {
        self.writer.lock().unwrap_or_else(|e| e.into_inner()).seq
    }

    pub fn create_global_tag(&self, label: &str, meanings: &[String]) -> Result<GlobalTag, TagError> {
        let label = label.trim();
        if label.is_empty() {
            return Err(TagError::Validation("label must be non-empty".into()));
        }
        let slug = Slug::from_label(label)?;
        let mut clean: Vec<String> = Vec::new();
        for m in meanings {
            validate_iri(m)?;
            if !clean.contains(m) {
                clean.push(m.clone());
            }
        }
        self.commit(Mutation::Create {
            slug: slug.clone(),
            label: label.to_string(),
            meanings: clean,
            at: self.clock.now(),
        })?;
        Ok(self.get(&slug).expect("tag just created"))
    }

    pub fn link_local_tag(&self, slug: &Slug, link: LocalLink) -> Result<GlobalTag, TagError> {
        if link.portal_id.is_empty() || link.tag_name.is_empty() {
            return Err(TagError::Validation("portal_id and tag_name must be non-empty".into()));
        }
        self.commit(Mutation::Link {
            slug: slug.clone(),
            link,
            at: self.clock.now(),
        })?;
        Ok(self.get(slug).expect("linked tag exists"))
    }

    pub fn unlink_local_tag(&self, slug: &Slug, link: LocalLink) -> Result<GlobalTag, TagError> {
        self.commit(Mutation::Unlink {
            slug: slug.clone(),
            link,
            at: self.clock.now(),
        })?;
        Ok(self.get(slug).expect("unlinked tag exists"))
    }

    pub fn relate(&self, a: &Slug, kind: RelationKind, b: &Slug) -> Result<(), TagError> {
        self.commit(Mutation::Relate {
            from: a.clone(),
            kind,
            to: b.clone(),
            at: self.clock.now(),
        })
        .map(|_| ())
    }

    pub fn unrelate(&self, a: &Slug, kind: RelationKind, b: &Slug) -> Result<(), TagError> {
        self.commit(Mutation::Unrelate {
            from: a.clone(),
            kind,
            to: b.clone(),
            at: self.clock.now(),
        })
        .map(|_| ())
    }

    pub fn get(&self, slug: &Slug) -> Option<GlobalTag> {
        self.read().view(slug)
    }

    pub fn contains(&self, slug: &Slug) -> bool {
        self.read().tags.contains_key(slug)
    }

    pub fn len(&self) -> usize {
        self.read().tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every tag in slug order, from one consistent state.
    pub fn all(&self) -> Vec<GlobalTag> {
        let st = self.read();
        st.tags.keys().filter_map(|s| st.view(s)).collect()
    }

    /// Matches the query's canonical key against slugs, labels and linked
    /// local tag names. Ranked: exact slug, slug prefix, slug or label
    /// substring, local tag substring; then by slug. An empty query lists
    /// everything.
    pub fn search(&self, query: &str) -> Vec<GlobalTag> {
        let st = self.read();
        if query.trim().is_empty() {
            return st.tags.keys().filter_map(|s| st.view(s)).collect();
        }
        let q = canonicalize(query);
        if q.is_empty() {
            return Vec::new();
        }
        let q = q.as_str();
        let mut hits: Vec<(u8, &Slug)> = Vec::new();
        for (slug, t) in &st.tags {
            let s = slug.as_str();
            let rank = if s == q {
                0
            } else if s.starts_with(q) {
                1
            } else if s.contains(q) || canonicalize(&t.label).as_str().contains(q) {
                2
            } else if t.links.iter().any(|l| canonicalize(&l.tag_name).as_str().contains(q)) {
                3
            } else {
                continue;
            };
            hits.push((rank, slug));
        }
        hits.sort();
        hits.into_iter().filter_map(|(_, s)| st.view(s)).collect()
    }

    /// One page (1-based) of [`TagStore::search`] results.
    pub fn search_page(&self, query: &str, page: usize) -> SearchPage {
        let all = self.search(query);
        let page = page.max(1);
        let tags = all
            .iter()
            .skip((page - 1).saturating_mul(SEARCH_PAGE_SIZE))
            .take(SEARCH_PAGE_SIZE)
            .cloned()
            .collect();
        SearchPage {
            total: all.len(),
            page,
            page_size: SEARCH_PAGE_SIZE,
            tags,
        }
    }

    /// Global tags linked to any local tag whose canonical key is `key`.
    pub fn linked_to_key(&self, key: &CanonicalKey) -> Vec<Slug> {
        self.read()
            .tags
            .iter()
            .filter(|(_, t)| t.links.iter().any(|l| &canonicalize(&l.tag_name) == key))
            .map(|(s, _)| s.clone())
            .collect()
    }
}

/// Cuts the journal back to `len` bytes and restores the trailing newline.
fn repair_journal(path: &Path, len: u64) -> Result<(), TagError> {
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(len).map_err(io_err(path))?;
    let text = std::fs::read(path).map_err(io_err(path))?;
    if !text.is_empty() && !text.ends_with(b"\n") {
        let mut f = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        f.write_all(b"\n").map_err(io_err(path))?;
    }
    f.sync_data().map_err(io_err(path))
}

/// Parsed entries, plus the length to truncate the file to when its tail
/// is an unterminated line.
fn read_journal(path: &Path) -> Result<(Vec<JournalEntry>, Option<u64>), TagError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    let mut last = 0;
    for (i, line) in lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalEntry>(line) {
            Ok(e) if e.seq > last => {
                last = e.seq;
                out.push(e);
            }
            Ok(e) => {
                return Err(TagError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("seq {} does not follow {last}", e.seq),
                })
            }
            // A torn final line is a write that was never acknowledged.
            Err(_) if i + 1 == lines.len() && !complete => {
                let keep = text.rfind('\n').map_or(0, |p| p + 1);
                return Ok((out, Some(keep as u64)));
            }
            Err(e) => {
                return Err(TagError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    let repair = (!complete && !text.is_empty()).then_some(text.len() as u64);
    Ok((out, repair))
}
