//! Harvested portal metadata and the file-backed snapshot store.
//!
//! A snapshot file is UTF-8, one JSON record per line: a `portal` header,
//! then one `dataset` record per dataset, then one `tag` record per local
//! tag. Snapshots live at `<corpus_dir>/<portal_id>.snap`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{format_ts, parse_ts};
use crate::fsutil::write_atomic;
use crate::normalize::{canonicalize, CanonicalKey};

pub const SNAPSHOT_EXT: &str = "snap";
pub const SNAPSHOT_FORMAT: u32 = 1;
/// Locale assumed when a portal does not advertise one.
pub const DEFAULT_LOCALE: &str = "en";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("storage error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid snapshot {}: {source}", path_label(.path))]
    Validation {
        #[source]
        source: ValidationError,
        path: Option<PathBuf>,
    },
    #[error("duplicate portal id {0:?} in corpus")]
    DuplicatePortal(String),
}

fn path_label(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<memory>".into())
}

/// A violated snapshot invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("portal_id must be non-empty")]
    EmptyPortalId,
    #[error("locale must be non-empty")]
    EmptyLocale,
    #[error("base_url {0:?} is not an absolute http(s) URL")]
    BadBaseUrl(String),
    #[error("dataset_id must be non-empty")]
    EmptyDatasetId,
    #[error("dataset_id {0:?} appears more than once")]
    DuplicateDataset(String),
    #[error("dataset {dataset:?} lists tag {tag:?} more than once")]
    DuplicateDatasetTag { dataset: String, tag: String },
    #[error("tag name must be non-empty")]
    EmptyTagName,
    #[error("tag {0:?} is listed more than once")]
    DuplicateTag(String),
    #[error("dataset {dataset:?} references unlisted tag {tag:?}")]
    UnlistedTag { dataset: String, tag: String },
    #[error("tag {tag:?} has usage_count {stored} but {actual} datasets carry it")]
    UsageMismatch { tag: String, stored: u64, actual: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub dataset_id: String,
    pub title: String,
    pub tag_names: Vec<String>,
}

impl Dataset {
    /// Repeated and empty tag names are dropped; first occurrence wins.
    pub fn new(id: impl Into<String>, title: impl Into<String>, tags: &[&str]) -> Self {
        let mut seen = HashSet::with_capacity(tags.len());
        Self {
            dataset_id: id.into(),
            title: title.into(),
            tag_names: tags
                .iter()
                .filter(|t| !t.is_empty() && seen.insert(**t))
                .map(|t| t.to_string())
                .collect(),
        }
    }
}

/// A tag as published by one portal.
///
/// The raw name is the identity; the canonical key is derived from it once
/// and never drifts because the name cannot be changed after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalTag {
    name: String,
    canonical: CanonicalKey,
    pub usage_count: u64,
    /// Whether the portal's own tag registry listed this tag.
    pub registered: bool,
}

impl LocalTag {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        let canonical = canonicalize(&name);
        Self {
            name,
            canonical,
            usage_count: 0,
            registered: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn canonical(&self) -> &CanonicalKey {
        &self.canonical
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortalSnapshot {
    pub portal_id: String,
    pub base_url: String,
    pub locale: String,
    /// True when the locale was not advertised by the portal and fell back
    /// to [`DEFAULT_LOCALE`].
    pub locale_estimated: bool,
    pub fetched_at: DateTime<Utc>,
    pub datasets: Vec<Dataset>,
    pub tags: Vec<LocalTag>,
}

impl PortalSnapshot {
    /// Builds a snapshot whose tag list is the union of the datasets' tags
    /// (first-appearance order) followed by any `registered` tag not used by
    /// a dataset. Usage counts are computed here.
    pub fn from_datasets<I, S>(
        portal_id: impl Into<String>,
        base_url: impl Into<String>,
        locale: Option<&str>,
        fetched_at: DateTime<Utc>,
        datasets: Vec<Dataset>,
        registered: I,
    ) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let (locale, locale_estimated) = match locale.map(str::trim).filter(|l| !l.is_empty()) {
            Some(l) => (l.to_lowercase(), false),
            None => (DEFAULT_LOCALE.to_string(), true),
        };
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut tags: Vec<LocalTag> = Vec::new();
        for d in &datasets {
            for t in &d.tag_names {
                if !index.contains_key(t) {
                    index.insert(t.clone(), tags.len());
                    tags.push(LocalTag::new(t.clone()));
                }
            }
        }
        for t in registered {
            let t: String = t.into();
            if t.is_empty() {
                continue;
            }
            match index.get(&t) {
                Some(&i) => tags[i].registered = true,
                None => {
                    index.insert(t.clone(), tags.len());
                    let mut tag = LocalTag::new(t);
                    tag.registered = true;
                    tags.push(tag);
                }
            }
        }
        let mut snap = Self {
            portal_id: portal_id.into(),
            base_url: base_url.into(),
            locale,
            locale_estimated,
            fetched_at: fetched_at.trunc_subsecs(0),
            datasets,
            tags,
        };
        snap.recount_in_place();
        snap
    }

    pub fn tag(&self, name: &str) -> Option<&LocalTag> {
        self.tags.iter().find(|t| t.name == name)
    }

    pub fn recount_in_place(&mut self) {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for d in &self.datasets {
            for t in &d.tag_names {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        for tag in &mut self.tags {
            tag.usage_count = counts.get(tag.name.as_str()).copied().unwrap_or(0);
        }
    }

    /// Checks every snapshot invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.portal_id.is_empty() {
            return Err(ValidationError::EmptyPortalId);
        }
        if self.locale.is_empty() {
            return Err(ValidationError::EmptyLocale);
        }
        match url::Url::parse(&self.base_url) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => {}
            _ => return Err(ValidationError::BadBaseUrl(self.base_url.clone())),
        }
        let mut listed: HashMap<&str, u64> = HashMap::with_capacity(self.tags.len());
        for t in &self.tags {
            if t.name.is_empty() {
                return Err(ValidationError::EmptyTagName);
            }
            if listed.insert(t.name.as_str(), 0).is_some() {
                return Err(ValidationError::DuplicateTag(t.name.clone()));
            }
        }
        let mut ids = HashSet::with_capacity(self.datasets.len());
        for d in &self.datasets {
            if d.dataset_id.is_empty() {
                return Err(ValidationError::EmptyDatasetId);
            }
            if !ids.insert(d.dataset_id.as_str()) {
                return Err(ValidationError::DuplicateDataset(d.dataset_id.clone()));
            }
            let mut seen = HashSet::with_capacity(d.tag_names.len());
            for name in &d.tag_names {
                if !seen.insert(name.as_str()) {
                    return Err(ValidationError::DuplicateDatasetTag {
                        dataset: d.dataset_id.clone(),
                        tag: name.clone(),
                    });
                }
                match listed.get_mut(name.as_str()) {
                    Some(c) => *c += 1,
                    None => {
                        return Err(ValidationError::UnlistedTag {
                            dataset: d.dataset_id.clone(),
                            tag: name.clone(),
                        })
                    }
                }
            }
        }
        for t in &self.tags {
            let actual = listed[t.name.as_str()];
            if actual != t.usage_count {
                return Err(ValidationError::UsageMismatch {
                    tag: t.name.clone(),
                    stored: t.usage_count,
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Serializes to the line-delimited snapshot format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        let header = Record::Portal {
            format: SNAPSHOT_FORMAT,
            portal_id: self.portal_id.clone(),
            base_url: self.base_url.clone(),
            locale: self.locale.clone(),
            locale_estimated: self.locale_estimated,
            fetched_at: format_ts(&self.fetched_at),
        };
        push_record(&mut out, &header);
        for d in &self.datasets {
            push_record(
                &mut out,
                &Record::Dataset {
                    id: d.dataset_id.clone(),
                    title: d.title.clone(),
                    tags: d.tag_names.clone(),
                },
            );
        }
        for t in &self.tags {
            push_record(
                &mut out,
                &Record::Tag {
                    name: t.name.clone(),
                    usage_count: t.usage_count,
                    registered: t.registered,
                },
            );
        }
        out.into_bytes()
    }

    /// Parses and validates the line-delimited snapshot format. `origin` is
    /// only used to label errors.
    pub fn from_str_checked(text: &str, origin: &Path) -> Result<Self, CorpusError> {
        let parse_err = |line: usize, message: String| CorpusError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut header = None;
        let mut datasets = Vec::new();
        let mut tags = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
            match rec {
                Record::Portal {
                    format,
                    portal_id,
                    base_url,
                    locale,
                    locale_estimated,
                    fetched_at,
                } => {
                    if header.is_some() {
                        return Err(parse_err(lineno, "second portal header".into()));
                    }
                    if format != SNAPSHOT_FORMAT {
                        return Err(parse_err(lineno, format!("unsupported format {format}")));
                    }
                    let fetched_at =
                        parse_ts(&fetched_at).map_err(|e| parse_err(lineno, format!("fetched_at: {e}")))?;
                    header = Some((portal_id, base_url, locale, locale_estimated, fetched_at));
                }
                Record::Dataset { id, title, tags: t } => {
                    if header.is_none() {
                        return Err(parse_err(lineno, "dataset record before header".into()));
                    }
                    datasets.push(Dataset {
                        dataset_id: id,
                        title,
                        tag_names: t,
                    });
                }
                Record::Tag {
                    name,
                    usage_count,
                    registered,
                } => {
                    if header.is_none() {
                        return Err(parse_err(lineno, "tag record before header".into()));
                    }
                    let mut tag = LocalTag::new(name);
                    tag.usage_count = usage_count;
                    tag.registered = registered;
                    tags.push(tag);
                }
            }
        }
        let (portal_id, base_url, locale, locale_estimated, fetched_at) =
            header.ok_or_else(|| parse_err(1, "missing portal header".into()))?;
        let snap = Self {
            portal_id,
            base_url,
            locale,
            locale_estimated,
            fetched_at,
            datasets,
            tags,
        };
        snap.validate().map_err(|source| CorpusError::Validation {
            source,
            path: Some(origin.to_path_buf()),
        })?;
        Ok(snap)
    }
}

fn push_record(out: &mut String, rec: &Record) {
    out.push_str(&serde_json::to_string(rec).expect("snapshot records always serialize"));
    out.push('\n');
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Portal {
        format: u32,
        portal_id: String,
        base_url: String,
        locale: String,
        #[serde(default)]
        locale_estimated: bool,
        fetched_at: String,
    },
    Dataset {
        id: String,
        #[serde(default)]
        title: String,
        #[serde(default)]
        tags: Vec<String>,
    },
    Tag {
        name: String,
        usage_count: u64,
        #[serde(default)]
        registered: bool,
    },
}

/// Returns a copy of `snapshot` with every usage count recomputed from its
/// datasets. Unused tags stay with a count of zero.
pub fn recount_usage(snapshot: &PortalSnapshot) -> PortalSnapshot {
    let mut s = snapshot.clone();
    s.recount_in_place();
    s
}

pub fn save_snapshot(snapshot: &PortalSnapshot, path: &Path) -> Result<(), CorpusError> {
    write_atomic(path, &snapshot.to_bytes()).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_snapshot(path: &Path) -> Result<PortalSnapshot, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| CorpusError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    PortalSnapshot::from_str_checked(&text, path)
}

pub fn snapshot_path(dir: &Path, portal_id: &str) -> PathBuf {
    dir.join(format!("{portal_id}.{SNAPSHOT_EXT}"))
}

/// A set of portal snapshots, kept in `portal_id` order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    snapshots: Vec<PortalSnapshot>,
}

impl Corpus {
    pub fn new(mut snapshots: Vec<PortalSnapshot>) -> Result<Self, CorpusError> {
        snapshots.sort_by(|a, b| a.portal_id.cmp(&b.portal_id));
        for w in snapshots.windows(2) {
            if w[0].portal_id == w[1].portal_id {
                return Err(CorpusError::DuplicatePortal(w[0].portal_id.clone()));
            }
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[PortalSnapshot] {
        &self.snapshots
    }

    pub fn get(&self, portal_id: &str) -> Option<&PortalSnapshot> {
        self.snapshots
            .binary_search_by(|s| s.portal_id.as_str().cmp(portal_id))
            .ok()
            .map(|i| &self.snapshots[i])
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// portal_id → base_url for every snapshot.
    pub fn base_urls(&self) -> BTreeMap<String, String> {
        self.snapshots
            .iter()
            .map(|s| (s.portal_id.clone(), s.base_url.clone()))
            .collect()
    }

    /// Loads every `*.snap` file in `dir`. A missing directory is an empty
    /// corpus.
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(io_err(e)),
        };
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(io_err)?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(SNAPSHOT_EXT) {
                paths.push(path);
            }
        }
        paths.sort();
        let snaps = paths.iter().map(|p| load_snapshot(p)).collect::<Result<Vec<_>, _>>()?;
        Self::new(snaps)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        for s in &self.snapshots {
            save_snapshot(s, &snapshot_path(dir, &s.portal_id))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::parse_ts;

    fn ts() -> DateTime<Utc> {
        parse_ts("2015-09-01T00:00:00Z").unwrap()
    }

    fn snap(datasets: Vec<Dataset>) -> PortalSnapshot {
        PortalSnapshot::from_datasets(
            "demo",
            "http://demo.example",
            Some("en"),
            ts(),
            datasets,
            Vec::<String>::new(),
        )
    }

    #[test]
    fn empty_snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.snap");
        let s = snap(vec![]);
        save_snapshot(&s, &path).unwrap();
        assert_eq!(load_snapshot(&path).unwrap(), s);
    }

    #[test]
    fn shared_tag_counted_twice() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.snap");
        let s = snap(vec![
            Dataset::new("a", "A", &["budget", "health"]),
            Dataset::new("b", "B", &["budget"]),
        ]);
        save_snapshot(&s, &path).unwrap();
        let back = load_snapshot(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.tag("budget").unwrap().usage_count, 2);
    }

    #[test]
    fn non_ascii_tag_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.snap");
        let s = snap(vec![Dataset::new("a", "Saúde", &["saúde"])]);
        save_snapshot(&s, &path).unwrap();
        let raw = fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"saúde\""));
        let back = load_snapshot(&path).unwrap();
        assert_eq!(back.tags[0].name().as_bytes(), "saúde".as_bytes());
    }

    #[test]
    fn unlisted_tag_rejected() {
        let text = concat!(
            r#"{"record":"portal","format":1,"portal_id":"p","base_url":"http://p.example","locale":"en","fetched_at":"2015-09-01T00:00:00Z"}"#,
            "\n",
            r#"{"record":"dataset","id":"d1","title":"","tags":["ghost"]}"#,
            "\n",
        );
        let err = PortalSnapshot::from_str_checked(text, Path::new("p.snap")).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Validation {
                source: ValidationError::UnlistedTag { .. },
                ..
            }
        ));
    }

    #[test]
    fn duplicate_tag_entries_rejected() {
        let text = concat!(
            r#"{"record":"portal","format":1,"portal_id":"p","base_url":"http://p.example","locale":"en","fetched_at":"2015-09-01T00:00:00Z"}"#,
            "\n",
            r#"{"record":"tag","name":"x","usage_count":0}"#,
            "\n",
            r#"{"record":"tag","name":"x","usage_count":0}"#,
            "\n",
        );
        let err = PortalSnapshot::from_str_checked(text, Path::new("p.snap")).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Validation {
                source: ValidationError::DuplicateTag(ref t),
                ..
            } if t == "x"
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = concat!(
            r#"{"record":"portal","format":1,"portal_id":"p","base_url":"http://p.example","locale":"en","fetched_at":"2015-09-01T00:00:00Z"}"#,
            "\n",
            "{not json\n",
        );
        match PortalSnapshot::from_str_checked(text, Path::new("p.snap")) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_usage_count_rejected() {
        let mut s = snap(vec![Dataset::new("a", "A", &["x"])]);
        s.tags[0].usage_count = 5;
        assert_eq!(
            s.validate(),
            Err(ValidationError::UsageMismatch {
                tag: "x".into(),
                stored: 5,
                actual: 1
            })
        );
    }

    #[test]
    fn recount_cases() {
        let s = PortalSnapshot::from_datasets(
            "demo",
            "http://demo.example",
            None,
            ts(),
            vec![
                Dataset::new("a", "", &["x"]),
                Dataset::new("b", "", &["x"]),
                Dataset::new("c", "", &["x", "y"]),
            ],
            ["unused"],
        );
        let mut broken = s.clone();
        for t in &mut broken.tags {
            t.usage_count = 99;
        }
        let fixed = recount_usage(&broken);
        assert_eq!(fixed.tag("x").unwrap().usage_count, 3);
        assert_eq!(fixed.tag("unused").unwrap().usage_count, 0);
        assert_eq!(fixed, s);
        assert!(s.locale_estimated);
        assert_eq!(s.locale, "en");
        let empty = snap(vec![]);
        assert_eq!(recount_usage(&empty), empty);
    }

    #[test]
    fn corpus_rejects_duplicate_ids_and_sorts() {
        let mut b = snap(vec![]);
        b.portal_id = "b".into();
        let mut a = snap(vec![]);
        a.portal_id = "a".into();
        let c = Corpus::new(vec![b.clone(), a.clone()]).unwrap();
        assert_eq!(c.snapshots()[0].portal_id, "a");
        assert!(c.get("b").is_some());
        assert!(matches!(
            Corpus::new(vec![a.clone(), a]),
            Err(CorpusError::DuplicatePortal(_))
        ));
    }

    #[test]
    fn missing_corpus_dir_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::load_dir(&dir.path().join("nope")).unwrap();
        assert!(c.is_empty());
    }
}
