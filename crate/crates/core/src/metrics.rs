//! Local (per-portal) and global (cross-portal) tag quality metrics, and
//! their CSV / text rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, PortalSnapshot};
use crate::fsutil::write_atomic;
use crate::lexlookup::{LexicalLookup, LookupError};
use crate::normalize::{fuzzy_eligible, levenshtein_within, CanonicalKey};

pub const CSV_HEADER: &str =
    "portal_id,dataset_count,tag_count,used_once_fraction,avg_tags_per_dataset,similar_pair_count,similar_tag_fraction";
pub const CORPUS_ROW_ID: &str = "__corpus__";
pub const HISTOGRAM_BINS: usize = 20;

/// Figures from a 2015 census of 90 CKAN portals. Shown next to computed
/// values for orientation only; live portals have changed since.
pub mod reference {
    pub const PORTALS: u64 = 90;
    pub const DATASETS: u64 = 389_913;
    pub const TOTAL_TAGS: u64 = 220_567;
    pub const UNIQUE_TAGS: u64 = 148_657;
    pub const AVG_TAGS_PER_DATASET: f64 = 3.88;
    pub const COINCIDENT_TAGS: u64 = 73_316;
    pub const COINCIDENT_FRACTION: f64 = 0.33;
    pub const ASSOCIATED: (f64, f64) = (0.2346, 0.2371);
    pub const NOT_ASSOCIATED: (f64, f64) = (0.6838, 0.6420);
    pub const NOT_CONSIDERED: (f64, f64) = (0.0816, 0.1209);
    pub const TIER1_REMOVABLE: u64 = 14_168;
    pub const TIER1_REMOVABLE_FRACTION: f64 = 0.064;
    pub const FUZZY_PAIRS: u64 = 35_066;
    pub const FUZZY_PAIRS_FRACTION: f64 = 0.158;
}

/// Fraction of tags carried by exactly one dataset; 0 when there are no tags.
pub fn tag_reuse(snapshot: &PortalSnapshot) -> f64 {
    if snapshot.tags.is_empty() {
        return 0.0;
    }
    let once = snapshot.tags.iter().filter(|t| t.usage_count == 1).count();
    once as f64 / snapshot.tags.len() as f64
}

/// Mean number of tags per dataset; 0 when there are no datasets.
pub fn tags_per_dataset(snapshot: &PortalSnapshot) -> f64 {
    if snapshot.datasets.is_empty() {
        return 0.0;
    }
    let total: usize = snapshot.datasets.iter().map(|d| d.tag_names.len()).sum();
    total as f64 / snapshot.datasets.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMode {
    /// Same canonical key, different raw name.
    Canonical,
    /// Fuzzy-eligible tags whose distinct canonical keys are within this
    /// edit distance (1 or 2).
    Levenshtein(usize),
}

/// An unordered pair of raw tag names, stored with `.0 < .1`.
pub type TagPair = (String, String);

fn ordered(a: &str, b: &str) -> TagPair {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Raw names grouped by canonical key.
pub(crate) fn group_by_key(snapshot: &PortalSnapshot) -> BTreeMap<CanonicalKey, Vec<&str>> {
    let mut groups: BTreeMap<CanonicalKey, Vec<&str>> = BTreeMap::new();
    for t in &snapshot.tags {
        groups.entry(t.canonical().clone()).or_default().push(t.name());
    }
    for names in groups.values_mut() {
        names.sort_unstable();
    }
    groups
}

/// Pairs of distinct fuzzy-eligible canonical keys with `1 <= d <= max`.
///
/// Keys are bucketed by length; since `d(a, b) >= |len(a) - len(b)|` only
/// buckets at most `max` apart can hold a match.
pub fn close_key_pairs<'a, I>(keys: I, max: usize) -> Vec<(CanonicalKey, CanonicalKey, usize)>
where
    I: IntoIterator<Item = &'a CanonicalKey>,
{
    let mut by_len: BTreeMap<usize, Vec<(&CanonicalKey, Vec<char>)>> = BTreeMap::new();
    for k in keys {
        if fuzzy_eligible(k) {
            let chars: Vec<char> = k.as_str().chars().collect();
            by_len.entry(chars.len()).or_default().push((k, chars));
        }
    }
    let mut out = Vec::new();
    for (&len, bucket) in &by_len {
        for (i, (ka, ca)) in bucket.iter().enumerate() {
            for (kb, cb) in &bucket[i + 1..] {
                if let Some(d) = levenshtein_within(ca, cb, max).filter(|d| *d >= 1) {
                    out.push(((*ka).clone(), (*kb).clone(), d));
                }
            }
            for other_len in len + 1..=len + max {
                let Some(other) = by_len.get(&other_len) else {
                    continue;
                };
                for (kb, cb) in other {
                    if let Some(d) = levenshtein_within(ca, cb, max).filter(|d| *d >= 1) {
                        out.push(((*ka).clone(), (*kb).clone(), d));
                    }
                }
            }
        }
    }
    for p in &mut out {
        if p.1 < p.0 {
            std::mem::swap(&mut p.0, &mut p.1);
        }
    }
    out.sort();
    out
}

/// All unordered raw-name pairs that are similar under `mode`, sorted.
pub fn similar_pairs(snapshot: &PortalSnapshot, mode: SimilarityMode) -> Vec<TagPair> {
    let groups = group_by_key(snapshot);
    let mut out = Vec::new();
    match mode {
        SimilarityMode::Canonical => {
            for names in groups.values() {
                for (i, a) in names.iter().enumerate() {
                    for b in &names[i + 1..] {
                        out.push(ordered(a, b));
                    }
                }
            }
        }
        SimilarityMode::Levenshtein(k) => {
            for (ka, kb, _) in close_key_pairs(groups.keys(), k) {
                for a in &groups[&ka] {
                    for b in &groups[&kb] {
                        out.push(ordered(a, b));
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Fraction of tags that share their canonical key with at least one other
/// tag of the same portal.
pub fn similar_fraction(snapshot: &PortalSnapshot) -> f64 {
    if snapshot.tags.is_empty() {
        return 0.0;
    }
    let in_clusters: usize = group_by_key(snapshot)
        .values()
        .filter(|names| names.len() >= 2)
        .map(Vec::len)
        .sum();
    in_clusters as f64 / snapshot.tags.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidentTags {
    /// Canonical keys present in at least two portals.
    pub keys: BTreeSet<CanonicalKey>,
    /// Local tags (summed over portals) whose key is coincident.
    pub occurrences: usize,
    pub total_tags: usize,
    pub unique_keys: usize,
}

impl CoincidentTags {
    pub fn count(&self) -> usize {
        self.keys.len()
    }

    pub fn fraction_of_total(&self) -> f64 {
        ratio(self.occurrences, self.total_tags)
    }

    pub fn fraction_of_unique(&self) -> f64 {
        ratio(self.keys.len(), self.unique_keys)
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Canonical key → set of portal ids using it.
pub(crate) fn key_portals(corpus: &Corpus) -> BTreeMap<CanonicalKey, BTreeSet<&str>> {
    let mut map: BTreeMap<CanonicalKey, BTreeSet<&str>> = BTreeMap::new();
    for s in corpus.snapshots() {
        for t in &s.tags {
            map.entry(t.canonical().clone())
                .or_default()
                .insert(s.portal_id.as_str());
        }
    }
    map
}

pub fn coincident_tags(corpus: &Corpus) -> CoincidentTags {
    let portals = key_portals(corpus);
    let keys: BTreeSet<CanonicalKey> = portals
        .iter()
        .filter(|(_, p)| p.len() >= 2)
        .map(|(k, _)| k.clone())
        .collect();
    let mut occurrences = 0;
    let mut total_tags = 0;
    for s in corpus.snapshots() {
        total_tags += s.tags.len();
        occurrences += s.tags.iter().filter(|t| keys.contains(t.canonical())).count();
    }
    CoincidentTags {
        keys,
        occurrences,
        total_tags,
        unique_keys: portals.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Expressiveness {
    Associated,
    NotAssociated,
    /// Contains a digit or is at most three characters long.
    NotConsidered,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpressivenessReport {
    pub classified: usize,
    pub associated: usize,
    pub not_associated: usize,
    pub not_considered: usize,
    pub weighted_total: u64,
    pub weighted_associated: u64,
    pub weighted_not_associated: u64,
    pub weighted_not_considered: u64,
    /// Portals whose locale was a fallback guess, so their lookups may have
    /// used the wrong language.
    pub estimated_locale_portals: Vec<String>,
    pub per_key: BTreeMap<CanonicalKey, Expressiveness>,
}

impl ExpressivenessReport {
    pub fn associated_fraction(&self) -> f64 {
        ratio(self.associated, self.classified)
    }
    pub fn not_associated_fraction(&self) -> f64 {
        ratio(self.not_associated, self.classified)
    }
    pub fn not_considered_fraction(&self) -> f64 {
        ratio(self.not_considered, self.classified)
    }

    // With no usage at all, usage weighting degenerates to the unweighted
    // fractions so both triples still sum to one.
    fn weighted(&self, part: u64, fallback: f64) -> f64 {
        if self.weighted_total == 0 {
            fallback
        } else {
            part as f64 / self.weighted_total as f64
        }
    }
    pub fn weighted_associated_fraction(&self) -> f64 {
        self.weighted(self.weighted_associated, self.associated_fraction())
    }
    pub fn weighted_not_associated_fraction(&self) -> f64 {
        self.weighted(self.weighted_not_associated, self.not_associated_fraction())
    }
    pub fn weighted_not_considered_fraction(&self) -> f64 {
        self.weighted(self.weighted_not_considered, self.not_considered_fraction())
    }
}

#[derive(Debug, Error)]
#[error("expressiveness aborted after {classified} of {total} terms (at {term:?}): {source}")]
pub struct ExpressivenessAborted {
    pub classified: usize,
    pub total: usize,
    pub term: String,
    #[source]
    pub source: LookupError,
}

/// The lookup term used for a canonical key: separators become spaces.
pub fn lookup_term(key: &CanonicalKey) -> String {
    key.as_str().replace('-', " ")
}

/// Locale shared by most portals using each key (ties: smallest code).
pub(crate) fn dominant_locales(corpus: &Corpus) -> BTreeMap<CanonicalKey, String> {
    let mut votes: BTreeMap<CanonicalKey, BTreeMap<&str, usize>> = BTreeMap::new();
    for s in corpus.snapshots() {
        let keys: BTreeSet<&CanonicalKey> = s.tags.iter().map(|t| t.canonical()).collect();
        for k in keys {
            *votes
                .entry(k.clone())
                .or_default()
                .entry(s.locale.as_str())
                .or_default() += 1;
        }
    }
    votes
        .into_iter()
        .map(|(k, v)| {
            let best = v
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(l, _)| l.to_string())
                .unwrap_or_default();
            (k, best)
        })
        .collect()
}

/// Classifies every unique canonical key of the corpus. A key is
/// associated when the lookup finds at least one meaning or see-also
/// resource for it in its dominant portal locale.
pub fn expressiveness<L: LexicalLookup + ?Sized>(
    corpus: &Corpus,
    lookup: &L,
) -> Result<ExpressivenessReport, ExpressivenessAborted> {
    let mut usage: BTreeMap<CanonicalKey, u64> = BTreeMap::new();
    for s in corpus.snapshots() {
        for t in &s.tags {
            *usage.entry(t.canonical().clone()).or_default() += t.usage_count;
        }
    }
    let locales = dominant_locales(corpus);
    let total = usage.len();
    let mut report = ExpressivenessReport {
        classified: 0,
        associated: 0,
        not_associated: 0,
        not_considered: 0,
        weighted_total: 0,
        weighted_associated: 0,
        weighted_not_associated: 0,
        weighted_not_considered: 0,
        estimated_locale_portals: corpus
            .snapshots()
            .iter()
            .filter(|s| s.locale_estimated)
            .map(|s| s.portal_id.clone())
            .collect(),
        per_key: BTreeMap::new(),
    };
    for (key, weight) in usage {
        let class = if !fuzzy_eligible(&key) {
            Expressiveness::NotConsidered
        } else {
            let term = lookup_term(&key);
            let entry = lookup
                .lookup(&term, &locales[&key])
                .map_err(|source| ExpressivenessAborted {
                    classified: report.classified,
                    total,
                    term: term.clone(),
                    source,
                })?;
            if entry.means.is_empty() && entry.see_also.is_empty() {
                Expressiveness::NotAssociated
            } else {
                Expressiveness::Associated
            }
        };
        report.classified += 1;
        report.weighted_total += weight;
        match class {
            Expressiveness::Associated => {
                report.associated += 1;
                report.weighted_associated += weight;
            }
            Expressiveness::NotAssociated => {
                report.not_associated += 1;
                report.weighted_not_associated += weight;
            }
            Expressiveness::NotConsidered => {
                report.not_considered += 1;
                report.weighted_not_considered += weight;
            }
        }
        report.per_key.insert(key, class);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortalMetrics {
    pub portal_id: String,
    pub dataset_count: usize,
    pub tag_count: usize,
    pub used_once_fraction: f64,
    pub avg_tags_per_dataset: f64,
    pub similar_pair_count: usize,
    pub similar_tag_fraction: f64,
}

pub fn portal_metrics(snapshot: &PortalSnapshot) -> PortalMetrics {
    PortalMetrics {
        portal_id: snapshot.portal_id.clone(),
        dataset_count: snapshot.datasets.len(),
        tag_count: snapshot.tags.len(),
        used_once_fraction: tag_reuse(snapshot),
        avg_tags_per_dataset: tags_per_dataset(snapshot),
        similar_pair_count: similar_pairs(snapshot, SimilarityMode::Canonical).len(),
        similar_tag_fraction: similar_fraction(snapshot),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusMetrics {
    pub portal_count: usize,
    pub dataset_count: usize,
    pub total_tags: usize,
    pub unique_canonical_tags: usize,
    pub coincident_tag_count: usize,
    pub coincident_fraction_of_total: f64,
    pub coincident_fraction_of_unique: f64,
    /// Pooled over all portals.
    pub used_once_fraction: f64,
    pub avg_tags_per_dataset: f64,
    pub similar_pair_count: usize,
    pub similar_tag_fraction: f64,
    pub expressiveness: Option<ExpressivenessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub portals: Vec<PortalMetrics>,
    pub corpus: CorpusMetrics,
}

/// Computes every metric. Expressiveness only runs when a lookup is given.
pub fn compute_report(
    corpus: &Corpus,
    lookup: Option<&dyn LexicalLookup>,
) -> Result<MetricsReport, ExpressivenessAborted> {
    let portals: Vec<PortalMetrics> = corpus.snapshots().iter().map(portal_metrics).collect();
    let coincident = coincident_tags(corpus);
    let dataset_count: usize = portals.iter().map(|p| p.dataset_count).sum();
    let total_tags = coincident.total_tags;
    let used_once: usize = corpus
        .snapshots()
        .iter()
        .map(|s| s.tags.iter().filter(|t| t.usage_count == 1).count())
        .sum();
    let assignments: usize = corpus
        .snapshots()
        .iter()
        .flat_map(|s| s.datasets.iter().map(|d| d.tag_names.len()))
        .sum();
    let similar_tags: usize = corpus
        .snapshots()
        .iter()
        .map(|s| {
            group_by_key(s)
                .values()
                .filter(|n| n.len() >= 2)
                .map(Vec::len)
                .sum::<usize>()
        })
        .sum();
    let expressiveness = match lookup {
        Some(l) => Some(expressiveness(corpus, l)?),
        None => None,
    };
    Ok(MetricsReport {
        corpus: CorpusMetrics {
            portal_count: portals.len(),
            dataset_count,
            total_tags,
            unique_canonical_tags: coincident.unique_keys,
            coincident_tag_count: coincident.count(),
            coincident_fraction_of_total: coincident.fraction_of_total(),
            coincident_fraction_of_unique: coincident.fraction_of_unique(),
            used_once_fraction: ratio(used_once, total_tags),
            avg_tags_per_dataset: ratio(assignments, dataset_count),
            similar_pair_count: portals.iter().map(|p| p.similar_pair_count).sum(),
            similar_tag_fraction: ratio(similar_tags, total_tags),
            expressiveness,
        },
        portals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Table,
}

#[derive(Debug, Error)]
#[error("cannot write report {path}: {source}")]
pub struct ReportError {
    pub path: std::path::PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_row(out: &mut String, m: &PortalMetrics) {
    let _ = writeln!(
        out,
        "{},{},{},{:.6},{:.6},{},{:.6}",
        csv_field(&m.portal_id),
        m.dataset_count,
        m.tag_count,
        m.used_once_fraction,
        m.avg_tags_per_dataset,
        m.similar_pair_count,
        m.similar_tag_fraction
    );
}

/// Per-portal CSV rows plus a `__corpus__` summary row; header only for an
/// empty corpus.
pub fn render_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    if report.portals.is_empty() {
        return out;
    }
    for p in &report.portals {
        csv_row(&mut out, p);
    }
    let c = &report.corpus;
    let corpus = PortalMetrics {
        portal_id: CORPUS_ROW_ID.to_string(),
        dataset_count: c.dataset_count,
        tag_count: c.total_tags,
        used_once_fraction: c.used_once_fraction,
        avg_tags_per_dataset: c.avg_tags_per_dataset,
        similar_pair_count: c.similar_pair_count,
        similar_tag_fraction: c.similar_tag_fraction,
    };
    csv_row(&mut out, &corpus);
    out
}

pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let id_w = report
        .portals
        .iter()
        .map(|p| p.portal_id.chars().count())
        .chain([CORPUS_ROW_ID.len(), "portal".len()])
        .max()
        .unwrap_or(6);
    let _ = writeln!(
        out,
        "{:<id_w$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>8}  {:>9}",
        "portal", "datasets", "tags", "used-once", "tags/ds", "sim-pairs", "sim-frac"
    );
    let row = |out: &mut String, id: &str, d, t, once: f64, avg: f64, pairs, sim: f64| {
        let _ = writeln!(
            out,
            "{id:<id_w$}  {d:>8}  {t:>8}  {:>8.2}%  {avg:>8.2}  {pairs:>9}  {:>8.2}%",
            once * 100.0,
            sim * 100.0
        );
    };
    for p in &report.portals {
        row(
            &mut out,
            &p.portal_id,
            p.dataset_count,
            p.tag_count,
            p.used_once_fraction,
            p.avg_tags_per_dataset,
            p.similar_pair_count,
            p.similar_tag_fraction,
        );
    }
    let c = &report.corpus;
    if !report.portals.is_empty() {
        row(
            &mut out,
            CORPUS_ROW_ID,
            c.dataset_count,
            c.total_tags,
            c.used_once_fraction,
            c.avg_tags_per_dataset,
            c.similar_pair_count,
            c.similar_tag_fraction,
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "portals                      {}", c.portal_count);
    let _ = writeln!(out, "total tags                   {}", c.total_tags);
    let _ = writeln!(out, "unique canonical tags        {}", c.unique_canonical_tags);
    let _ = writeln!(
        out,
        "coincident tags              {} ({:.2}% of total tags, {:.2}% of unique)",
        c.coincident_tag_count,
        c.coincident_fraction_of_total * 100.0,
        c.coincident_fraction_of_unique * 100.0
    );
    if let Some(e) = &c.expressiveness {
        let _ = writeln!(out, "expressiveness (absolute / weighted by usage_count):");
        let _ = writeln!(
            out,
            "  associated                 {:>6.2}% / {:>6.2}%",
            e.associated_fraction() * 100.0,
            e.weighted_associated_fraction() * 100.0
        );
        let _ = writeln!(
            out,
            "  not associated             {:>6.2}% / {:>6.2}%",
            e.not_associated_fraction() * 100.0,
            e.weighted_not_associated_fraction() * 100.0
        );
        let _ = writeln!(
            out,
            "  not considered             {:>6.2}% / {:>6.2}%",
            e.not_considered_fraction() * 100.0,
            e.weighted_not_considered_fraction() * 100.0
        );
        if !e.estimated_locale_portals.is_empty() {
            let _ = writeln!(
                out,
                "  caveat: locale estimated for {}",
                e.estimated_locale_portals.join(", ")
            );
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "reference (2015 census, {} portals; not reproducible): {} tags, {} unique, {:.2} tags/dataset, {} coincident ({:.0}%)",
        reference::PORTALS,
        reference::TOTAL_TAGS,
        reference::UNIQUE_TAGS,
        reference::AVG_TAGS_PER_DATASET,
        reference::COINCIDENT_TAGS,
        reference::COINCIDENT_FRACTION * 100.0
    );
    out
}

/// Writes the report to `path` in the requested format.
pub fn emit_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<(), ReportError> {
    let text = match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Table => render_table(report),
    };
    write_atomic(path, text.as_bytes()).map_err(|source| ReportError {
        path: path.to_path_buf(),
        source,
    })
}

/// Equal-width histogram over `[lo, hi]`; the upper bound falls in the
/// last bin.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + width * i as f64, lo + width * (i + 1) as f64, c))
        .collect()
}

/// Distribution data for the per-portal metrics as CSV:
/// `metric,bin_start,bin_end,count`.
pub fn render_histograms(report: &MetricsReport) -> String {
    let mut out = String::from("metric,bin_start,bin_end,count\n");
    let once: Vec<f64> = report.portals.iter().map(|p| p.used_once_fraction).collect();
    let sim: Vec<f64> = report.portals.iter().map(|p| p.similar_tag_fraction).collect();
    let avg: Vec<f64> = report.portals.iter().map(|p| p.avg_tags_per_dataset).collect();
    let max_avg = avg.iter().copied().fold(0.0, f64::max);
    for (name, values, hi) in [
        ("used_once_fraction", &once, 1.0),
        ("avg_tags_per_dataset", &avg, max_avg),
        ("similar_tag_fraction", &sim, 1.0),
    ] {
        for (a, b, c) in histogram(values, 0.0, hi, HISTOGRAM_BINS) {
            let _ = writeln!(out, "{name},{a:.6},{b:.6},{c}");
        }
    }
    out
}

pub fn emit_histograms(report: &MetricsReport, path: &Path) -> Result<(), ReportError> {
    write_atomic(path, render_histograms(report).as_bytes()).map_err(|source| ReportError {
        path: path.to_path_buf(),
        source,
    })
}

/// Count of raw tags per canonical key across a snapshot, for callers that
/// only need the numbers.
pub fn cluster_sizes(snapshot: &PortalSnapshot) -> HashMap<CanonicalKey, usize> {
    group_by_key(snapshot).into_iter().map(|(k, v)| (k, v.len())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::parse_ts;
    use crate::corpus::Dataset;
    use crate::lexlookup::LexicalEntry;

    fn snap_with_counts(id: &str, counts: &[(&str, usize)]) -> PortalSnapshot {
        let max = counts.iter().map(|c| c.1).max().unwrap_or(0);
        let datasets = (0..max)
            .map(|i| Dataset {
                dataset_id: format!("d{i}"),
                title: String::new(),
                tag_names: counts
                    .iter()
                    .filter(|(_, c)| *c > i)
                    .map(|(n, _)| n.to_string())
                    .collect(),
            })
            .collect();
        PortalSnapshot::from_datasets(
            id,
            "http://x.example",
            Some("en"),
            parse_ts("2015-09-01T00:00:00Z").unwrap(),
            datasets,
            counts.iter().map(|c| c.0),
        )
    }

    #[test]
    fn reuse_examples() {
        let s = snap_with_counts("p", &[("a", 1), ("b", 1), ("c", 2), ("d", 5)]);
        assert_eq!(tag_reuse(&s), 0.5);
        let s = snap_with_counts("p", &[("a", 1), ("b", 1)]);
        assert_eq!(tag_reuse(&s), 1.0);
        assert_eq!(tag_reuse(&snap_with_counts("p", &[])), 0.0);
    }

    #[test]
    fn tags_per_dataset_examples() {
        let mut s = snap_with_counts("p", &[]);
        s.datasets = vec![
            Dataset::new("a", "", &["w", "x"]),
            Dataset::new("b", "", &["w", "x", "y", "z"]),
        ];
        assert_eq!(tags_per_dataset(&s), 3.0);
        s.datasets = vec![Dataset::new("a", "", &[])];
        assert_eq!(tags_per_dataset(&s), 0.0);
    }

    #[test]
    fn pair_examples() {
        let s = snap_with_counts("p", &[("Birth", 1), ("birth", 1)]);
        assert_eq!(
            similar_pairs(&s, SimilarityMode::Canonical),
            vec![("Birth".to_string(), "birth".to_string())]
        );
        let s = snap_with_counts(
            "p",
            &[("worker", 1), ("workers", 1), ("budget-2010", 1), ("budget-2011", 1)],
        );
        assert_eq!(
            similar_pairs(&s, SimilarityMode::Levenshtein(2)),
            vec![("worker".to_string(), "workers".to_string())]
        );
        assert!(similar_pairs(&s, SimilarityMode::Canonical).is_empty());
    }

    #[test]
    fn similar_fraction_examples() {
        let s = snap_with_counts("p", &[("a", 1), ("A", 1), ("b", 1)]);
        assert!((similar_fraction(&s) - 2.0 / 3.0).abs() < 1e-12);
        let s = snap_with_counts("p", &[("a", 1), ("b", 1)]);
        assert_eq!(similar_fraction(&s), 0.0);
        let s = snap_with_counts("p", &[("a", 1), ("A", 1), ("a!", 1)]);
        assert_eq!(similar_fraction(&s), 1.0);
    }

    #[test]
    fn coincidence_examples() {
        let p1 = snap_with_counts("p1", &[("budget", 1), ("alpha", 1)]);
        let p2 = snap_with_counts("p2", &[("Budget", 1), ("beta", 1)]);
        let single = Corpus::new(vec![p1.clone()]).unwrap();
        assert!(coincident_tags(&single).keys.is_empty());
        let c = coincident_tags(&Corpus::new(vec![p1, p2]).unwrap());
        assert_eq!(c.count(), 1);
        assert!(c.keys.contains(&crate::canonicalize("budget")));
        assert_eq!(c.occurrences, 2);
        assert_eq!(c.fraction_of_total(), 0.5);
        assert_eq!(c.fraction_of_unique(), 1.0 / 3.0);
    }

    struct Table;
    impl LexicalLookup for Table {
        fn lookup(&self, term: &str, language: &str) -> Result<LexicalEntry, LookupError> {
            let mut e = LexicalEntry::empty(term, language);
            if term == "budget" {
                e.means.push("http://m.example/budget".into());
            }
            Ok(e)
        }
    }

    struct Down;
    impl LexicalLookup for Down {
        fn lookup(&self, _: &str, _: &str) -> Result<LexicalEntry, LookupError> {
            Err(LookupError::Network {
                url: "http://lexvo.example".into(),
                message: "down".into(),
            })
        }
    }

    #[test]
    fn expressiveness_classes() {
        let p = snap_with_counts("p", &[("budget", 3), ("2010", 1), ("gdp", 1), ("zzzzz", 1)]);
        let corpus = Corpus::new(vec![p]).unwrap();
        let r = expressiveness(&corpus, &Table).unwrap();
        let k = crate::canonicalize;
        assert_eq!(r.per_key[&k("2010")], Expressiveness::NotConsidered);
        assert_eq!(r.per_key[&k("gdp")], Expressiveness::NotConsidered);
        assert_eq!(r.per_key[&k("budget")], Expressiveness::Associated);
        assert_eq!(r.per_key[&k("zzzzz")], Expressiveness::NotAssociated);
        assert_eq!(r.associated_fraction(), 0.25);
        assert_eq!(r.weighted_associated_fraction(), 0.5);
        let sum = r.associated_fraction() + r.not_associated_fraction() + r.not_considered_fraction();
        assert!((sum - 1.0).abs() < 1e-9);

        let err = expressiveness(&corpus, &Down).unwrap_err();
        assert_eq!(err.total, 4);
    }

    #[test]
    fn csv_shapes() {
        let empty = compute_report(&Corpus::default(), None).unwrap();
        assert_eq!(render_csv(&empty), format!("{CSV_HEADER}\n"));
        let corpus = Corpus::new(vec![
            snap_with_counts("p1", &[("a", 1)]),
            snap_with_counts("p2", &[("b", 2)]),
        ])
        .unwrap();
        let r = compute_report(&corpus, None).unwrap();
        let csv = render_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("__corpus__,"));
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.0, 0.5, 1.0, 0.049], 0.0, 1.0, 20);
        assert_eq!(h.len(), 20);
        assert_eq!(h[0].2, 2);
        assert_eq!(h[10].2, 1);
        assert_eq!(h[19].2, 1);
        let flat = histogram(&[0.0, 0.0], 0.0, 0.0, 20);
        assert_eq!(flat[0].2, 2);
    }
}
