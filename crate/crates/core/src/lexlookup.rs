//! Term lookup against a Lexvo-style linked-data service.
//!
//! [`LexvoClient`] speaks HTTP and parses the returned RDF, [`CachedLookup`]
//! puts a persistent per-language cache in front of any lookup and doubles as
//! the offline fixture mode (`CachedLookup::offline`).
//!
//! Cache files are `<dir>/<iso639-3>.tsv` with `term<TAB>kind<TAB>value`
//! records, `kind` one of `means`, `seeAlso`, `translation` (value
//! `<lang>:<term>`) or `empty` (the service knows nothing about the term).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use percent_encoding::{percent_decode_str, utf8_percent_encode, NON_ALPHANUMERIC};
use rio_api::model::{Subject, Term};
use rio_api::parser::TriplesParser;
use rio_turtle::{TurtleError, TurtleParser};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::append_line;
use crate::normalize::canonicalize;
use crate::transport::Transport;

pub const LEXVO_DATA_BASE: &str = "http://www.lexvo.org/data/term";
pub const LEXVO_TERM_PREFIXES: [&str; 2] = ["http://lexvo.org/id/term/", "http://www.lexvo.org/id/term/"];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LexicalEntry {
    pub term: String,
    /// ISO 639-3 code.
    pub language: String,
    pub means: Vec<String>,
    pub see_also: Vec<String>,
    /// `(language, term)` pairs in languages other than `language`.
    pub translations: Vec<(String, String)>,
}

impl LexicalEntry {
    pub fn empty(term: &str, language: &str) -> Self {
        Self {
            term: term.to_string(),
            language: language.to_string(),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty() && self.see_also.is_empty() && self.translations.is_empty()
    }

    /// Sorts and dedupes every list and drops translations in the entry's own
    /// language, so equal knowledge always yields equal entries.
    fn normalized(mut self) -> Self {
        self.means = sorted_unique(self.means);
        self.see_also = sorted_unique(self.see_also);
        let lang = self.language.clone();
        let set: BTreeSet<(String, String)> = self.translations.into_iter().filter(|(l, _)| *l != lang).collect();
        self.translations = set.into_iter().collect();
        self
    }
}

fn sorted_unique(v: Vec<String>) -> Vec<String> {
    v.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

#[derive(Debug, Error)]
pub enum LookupError {
    #[error("lookup term must be non-empty")]
    EmptyTerm,
    #[error("unknown language code {0:?}")]
    BadLanguage(String),
    #[error("lookup service unreachable for {url}: {message}")]
    Network { url: String, message: String },
    #[error("unparseable lookup response from {url}: {message}; payload starts {excerpt:?}")]
    Protocol {
        url: String,
        message: String,
        excerpt: String,
    },
    #[error("lookup cache error at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub trait LexicalLookup: Send + Sync {
    /// Looks up `term` in `language` (2- or 3-letter code).
    fn lookup(&self, term: &str, language: &str) -> Result<LexicalEntry, LookupError>;
}

impl<L: LexicalLookup + ?Sized> LexicalLookup for &L {
    fn lookup(&self, term: &str, language: &str) -> Result<LexicalEntry, LookupError> {
        (**self).lookup(term, language)
    }
}

impl<L: LexicalLookup + ?Sized> LexicalLookup for Arc<L> {
    fn lookup(&self, term: &str, language: &str) -> Result<LexicalEntry, LookupError> {
        (**self).lookup(term, language)
    }
}

impl<L: LexicalLookup + ?Sized> LexicalLookup for Box<L> {
    fn lookup(&self, term: &str, language: &str) -> Result<LexicalEntry, LookupError> {
        (**self).lookup(term, language)
    }
}

const ISO639_1_TO_3: &[(&str, &str)] = &[
    ("ar", "ara"),
    ("ca", "cat"),
    ("cs", "ces"),
    ("da", "dan"),
    ("de", "deu"),
    ("el", "ell"),
    ("en", "eng"),
    ("es", "spa"),
    ("et", "est"),
    ("eu", "eus"),
    ("fi", "fin"),
    ("fr", "fra"),
    ("ga", "gle"),
    ("gl", "glg"),
    ("hr", "hrv"),
    ("hu", "hun"),
    ("id", "ind"),
    ("is", "isl"),
    ("it", "ita"),
    ("ja", "jpn"),
    ("ko", "kor"),
    ("lt", "lit"),
    ("lv", "lav"),
    ("nl", "nld"),
    ("no", "nor"),
    ("nb", "nob"),
    ("pl", "pol"),
    ("pt", "por"),
    ("ro", "ron"),
    ("ru", "rus"),
    ("sk", "slk"),
    ("sl", "slv"),
    ("sr", "srp"),
    ("sv", "swe"),
    ("tr", "tur"),
    ("uk", "ukr"),
    ("zh", "zho"),
];

/// Maps a portal locale (`pt_BR`, `de`, `eng`, ...) to an ISO 639-3 code.
pub fn iso639_3(code: &str) -> Result<String, LookupError> {
    let lower = code.trim().to_ascii_lowercase();
    let primary = lower.split(['_', '-']).next().unwrap_or("");
    if !primary.chars().all(|c| c.is_ascii_lowercase()) {
        return Err(LookupError::BadLanguage(code.to_string()));
    }
    match primary.len() {
        2 => ISO639_1_TO_3
            .iter()
            .find(|(two, _)| *two == primary)
            .map(|(_, three)| three.to_string())
            .ok_or_else(|| LookupError::BadLanguage(code.to_string())),
        3 => Ok(primary.to_string()),
        _ => Err(LookupError::BadLanguage(code.to_string())),
    }
}

/// Splits a Lexvo term IRI (`http://lexvo.org/id/term/deu/Haushalt`) into
/// `(language, term)`.
pub fn parse_term_iri(iri: &str) -> Option<(String, String)> {
    let rest = LEXVO_TERM_PREFIXES.iter().find_map(|p| iri.strip_prefix(p))?;
    let (lang, term) = rest.split_once('/')?;
    if lang.len() != 3 || term.is_empty() {
        return None;
    }
    let term = percent_decode_str(term).decode_utf8().ok()?.into_owned();
    Some((lang.to_string(), term))
}

pub fn term_data_url(language: &str, term: &str) -> String {
    format!(
        "{LEXVO_DATA_BASE}/{language}/{}",
        utf8_percent_encode(term, NON_ALPHANUMERIC)
    )
}

/// Live client. Fetches `http://www.lexvo.org/data/term/{lang}/{term}` as
/// Turtle and keeps only `means`, `seeAlso` and `translation`/`translate`
/// triples.
pub struct LexvoClient<T> {
    transport: T,
}

impl<T: Transport> LexvoClient<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

impl<T: Transport> LexicalLookup for LexvoClient<T> {
    fn lookup(&self, term: &str, language: &str) -> Result<LexicalEntry, LookupError> {
        if term.is_empty() {
            return Err(LookupError::EmptyTerm);
        }
        let lang = iso639_3(language)?;
        let url = term_data_url(&lang, term);
        let resp = self
            .transport
            .get(&url, "text/turtle, application/n-triples;q=0.9")
            .map_err(|e| LookupError::Network {
                url: url.clone(),
                message: e.message,
            })?;
        if resp.status == 404 {
            return Ok(LexicalEntry::empty(term, &lang));
        }
        if !resp.is_success() {
            return Err(LookupError::Network {
                url,
                message: format!("HTTP status {}", resp.status),
            });
        }
        parse_rdf_entry(term, &lang, &url, &resp.body)
    }
}

fn local_name(iri: &str) -> &str {
    iri.rsplit(['#', '/']).next().unwrap_or(iri)
}

/// Extracts an entry from a Turtle/N-Triples document.
pub fn parse_rdf_entry(term: &str, language: &str, base: &str, body: &str) -> Result<LexicalEntry, LookupError> {
    let mut entry = LexicalEntry::empty(term, language);
    let base_iri = oxiri_base(base);
    let mut parser = TurtleParser::new(body.as_bytes(), base_iri);
    let res: Result<(), TurtleError> = parser.parse_all(&mut |t| {
        let object = match t.object {
            Term::NamedNode(n) => n.iri,
            _ => return Ok(()),
        };
        if !matches!(t.subject, Subject::NamedNode(_) | Subject::BlankNode(_)) {
            return Ok(());
        }
        match local_name(t.predicate.iri) {
            "means" => entry.means.push(object.to_string()),
            "seeAlso" => entry.see_also.push(object.to_string()),
            "translation" | "translate" => {
                if let Some(pair) = parse_term_iri(object) {
                    entry.translations.push(pair);
                }
            }
            _ => {}
        }
        Ok(())
    });
    res.map_err(|e| LookupError::Protocol {
        url: base.to_string(),
        message: e.to_string(),
        excerpt: body.chars().take(120).collect(),
    })?;
    Ok(entry.normalized())
}

fn oxiri_base(base: &str) -> Option<oxiri::Iri<String>> {
    oxiri::Iri::parse(base.to_string()).ok()
}

/// Translations plus same-language synonyms (see-also links that point at
/// other Lexvo terms), deduplicated and ordered by canonical key.
pub fn translations_and_synonyms(entry: &LexicalEntry) -> Vec<(String, String)> {
    let own = canonicalize(&entry.term);
    let mut set: BTreeSet<(String, String, String)> = BTreeSet::new();
    for (lang, term) in &entry.translations {
        if *lang != entry.language {
            set.insert((canonicalize(term).into_string(), lang.clone(), term.clone()));
        }
    }
    for iri in &entry.see_also {
        if let Some((lang, term)) = parse_term_iri(iri) {
            let key = canonicalize(&term);
            if lang == entry.language && key != own {
                set.insert((key.into_string(), lang, term));
            }
        }
    }
    set.into_iter().map(|(_, l, t)| (l, t)).collect()
}

type CacheKey = (String, String);

/// Persistent cache in front of an optional upstream lookup.
///
/// Concurrent readers share a read lock; misses for the same key are
/// coalesced so the upstream sees one request, and cache writes are
/// serialized.
pub struct CachedLookup<L> {
    upstream: Option<L>,
    dir: PathBuf,
    entries: RwLock<HashMap<CacheKey, LexicalEntry>>,
    loaded: Mutex<HashSet<String>>,
    in_flight: Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>,
    writer: Mutex<()>,
}

impl CachedLookup<LexvoClient<crate::transport::LiveTransport>> {
    /// Cache-only lookup: unknown terms resolve to empty entries.
    pub fn offline(dir: impl Into<PathBuf>) -> Self {
        Self::build(None, dir.into())
    }
}

impl<L: LexicalLookup> CachedLookup<L> {
    pub fn new(upstream: L, dir: impl Into<PathBuf>) -> Self {
        Self::build(Some(upstream), dir.into())
    }

    fn build(upstream: Option<L>, dir: PathBuf) -> Self {
        Self {
            upstream,
            dir,
            entries: RwLock::new(HashMap::new()),
            loaded: Mutex::new(HashSet::new()),
            in_flight: Mutex::new(HashMap::new()),
            writer: Mutex::new(()),
        }
    }

    pub fn cache_path(&self, lang: &str) -> PathBuf {
        self.dir.join(format!("{lang}.tsv"))
    }

    fn ensure_loaded(&self, lang: &str) -> Result<(), LookupError> {
        let mut loaded = self.loaded.lock().unwrap();
        if loaded.contains(lang) {
            return Ok(());
        }
        let path = self.cache_path(lang);
        let parsed = match fs::read_to_string(&path) {
            Ok(text) => parse_cache(&text, lang),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(source) => return Err(LookupError::Cache { path, source }),
        };
        let mut entries = self.entries.write().unwrap();
        for (term, entry) in parsed {
            entries.entry((lang.to_string(), term)).or_insert(entry);
        }
        loaded.insert(lang.to_string());
        Ok(())
    }

    fn cached(&self, key: &CacheKey) -> Option<LexicalEntry> {
        self.entries.read().unwrap().get(key).cloned()
    }

    fn persist(&self, entry: &LexicalEntry) -> Result<(), LookupError> {
        let _guard = self.writer.lock().unwrap();
        let path = self.cache_path(&entry.language);
        let term = escape_field(&entry.term);
        let mut lines = Vec::new();
        for m in &entry.means {
            lines.push(format!("{term}\tmeans\t{}", escape_field(m)));
        }
        for s in &entry.see_also {
            lines.push(format!("{term}\tseeAlso\t{}", escape_field(s)));
        }
        for (l, t) in &entry.translations {
            lines.push(format!("{term}\ttranslation\t{l}:{}", escape_field(t)));
        }
        if lines.is_empty() {
            lines.push(format!("{term}\tempty\t"));
        }
        append_line(&path, &lines.join("\n")).map_err(|source| LookupError::Cache { path, source })
    }
}

impl<L: LexicalLookup> LexicalLookup for CachedLookup<L> {
    fn lookup(&self, term: &str, language: &str) -> Result<LexicalEntry, LookupError> {
        if term.is_empty() {
            return Err(LookupError::EmptyTerm);
        }
        let lang = iso639_3(language)?;
        self.ensure_loaded(&lang)?;
        let key = (lang.clone(), term.to_string());
        if let Some(e) = self.cached(&key) {
            return Ok(e);
        }
        let Some(upstream) = &self.upstream else {
            return Ok(LexicalEntry::empty(term, &lang));
        };
        let gate = self.in_flight.lock().unwrap().entry(key.clone()).or_default().clone();
        let _held = gate.lock().unwrap();
        if let Some(e) = self.cached(&key) {
            return Ok(e);
        }
        let entry = upstream.lookup(term, &lang)?.normalized();
        self.persist(&entry)?;
        self.entries.write().unwrap().insert(key.clone(), entry.clone());
        self.in_flight.lock().unwrap().remove(&key);
        Ok(entry)
    }
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str) -> String {
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

/// Parses a cache/fixture file. Unknown kinds and malformed lines are
/// skipped so that a hand-edited fixture with comments still loads.
pub fn parse_cache(text: &str, lang: &str) -> HashMap<String, LexicalEntry> {
    let mut out: HashMap<String, LexicalEntry> = HashMap::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(term), Some(kind)) = (parts.next(), parts.next()) else {
            continue;
        };
        let value = unescape_field(parts.next().unwrap_or(""));
        let term = unescape_field(term);
        let entry = out
            .entry(term.clone())
            .or_insert_with(|| LexicalEntry::empty(&term, lang));
        match kind {
            "means" if !value.is_empty() => entry.means.push(value),
            "seeAlso" if !value.is_empty() => entry.see_also.push(value),
            "translation" => {
                if let Some((l, t)) = value.split_once(':') {
                    if !t.is_empty() {
                        entry.translations.push((l.to_string(), t.to_string()));
                    }
                }
            }
            _ => {}
        }
    }
    out.into_iter().map(|(k, v)| (k, v.normalized())).collect()
}

/// Loads a whole fixture directory eagerly (one `<lang>.tsv` per language).
pub fn load_fixture_dir(dir: &Path) -> std::io::Result<HashMap<(String, String), LexicalEntry>> {
    let mut out = HashMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("tsv") {
            continue;
        }
        let Some(lang) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        let text = fs::read_to_string(&path)?;
        for (term, e) in parse_cache(&text, &lang) {
            out.insert((lang.clone(), term), e);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{HttpResponse, ReplayTransport};

    const BUDGET_TTL: &str = r#"
@prefix lvont: <http://lexvo.org/ontology#> .
@prefix rdfs: <http://www.w3.org/2000/01/rdf-schema#> .
<http://lexvo.org/id/term/eng/budget>
    lvont:means <http://wordnet.example/synset-budget-noun-1> ;
    rdfs:seeAlso <http://lexvo.org/id/term/eng/spending-plan> ;
    lvont:translation <http://lexvo.org/id/term/deu/Haushalt> ,
        <http://lexvo.org/id/term/por/or%C3%A7amento> ,
        <http://lexvo.org/id/term/eng/budget> ;
    rdfs:label "budget"@en .
"#;

    fn budget_transport() -> ReplayTransport {
        ReplayTransport::new().with_response(term_data_url("eng", "budget"), HttpResponse::ok(BUDGET_TTL))
    }

    #[test]
    fn language_codes() {
        assert_eq!(iso639_3("en").unwrap(), "eng");
        assert_eq!(iso639_3("pt_BR").unwrap(), "por");
        assert_eq!(iso639_3("DEU").unwrap(), "deu");
        assert!(iso639_3("x").is_err());
        assert!(iso639_3("qq").is_err());
    }

    #[test]
    fn parses_lexvo_document() {
        let client = LexvoClient::new(budget_transport());
        let e = client.lookup("budget", "en").unwrap();
        assert_eq!(e.language, "eng");
        assert_eq!(e.means, vec!["http://wordnet.example/synset-budget-noun-1"]);
        assert!(e.translations.contains(&("deu".into(), "Haushalt".into())));
        assert!(e.translations.contains(&("por".into(), "orçamento".into())));
        assert!(!e.translations.iter().any(|(l, _)| l == "eng"));
    }

    #[test]
    fn unknown_term_is_empty_and_empty_term_rejected() {
        let client = LexvoClient::new(budget_transport());
        let e = client.lookup("zzzz", "en").unwrap();
        assert!(e.is_empty());
        assert!(matches!(client.lookup("", "en"), Err(LookupError::EmptyTerm)));
    }

    #[test]
    fn garbage_is_protocol_error() {
        let t = ReplayTransport::new().with_response(term_data_url("eng", "bad"), HttpResponse::ok("<<< not turtle"));
        match LexvoClient::new(t).lookup("bad", "en") {
            Err(LookupError::Protocol { excerpt, .. }) => assert!(excerpt.starts_with("<<<")),
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn outage_is_network_error() {
        let mut t = ReplayTransport::new();
        t.insert_failure(term_data_url("eng", "budget"), "timed out");
        assert!(matches!(
            LexvoClient::new(t).lookup("budget", "en"),
            Err(LookupError::Network { .. })
        ));
    }

    #[test]
    fn warm_cache_makes_no_requests() {
        let dir = tempfile::tempdir().unwrap();
        let transport = budget_transport();
        let cold = CachedLookup::new(LexvoClient::new(&transport), dir.path());
        let first = cold.lookup("budget", "en").unwrap();
        let _ = cold.lookup("nothing", "en").unwrap();
        assert_eq!(transport.call_count(), 2);
        let again = cold.lookup("budget", "eng").unwrap();
        assert_eq!(again, first);
        assert_eq!(transport.call_count(), 2);

        // a fresh instance over the same directory is warm from disk
        let warm = CachedLookup::new(LexvoClient::new(&transport), dir.path());
        assert_eq!(warm.lookup("budget", "en").unwrap(), first);
        assert!(warm.lookup("nothing", "en").unwrap().is_empty());
        assert_eq!(transport.call_count(), 2);
    }

    #[test]
    fn concurrent_misses_are_coalesced() {
        let dir = tempfile::tempdir().unwrap();
        let transport = budget_transport().with_latency(std::time::Duration::from_millis(20));
        let cache = CachedLookup::new(LexvoClient::new(&transport), dir.path());
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.lookup("budget", "en").unwrap());
            }
        });
        assert_eq!(transport.call_count(), 1);
    }

    #[test]
    fn offline_fixture_lookup() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("eng.tsv"),
            "# fixture\nbudget\tmeans\thttp://m.example/budget\nbudget\ttranslation\tdeu:Haushalt\n",
        )
        .unwrap();
        let lookup = CachedLookup::offline(dir.path());
        let e = lookup.lookup("budget", "en").unwrap();
        assert_eq!(e.means.len(), 1);
        assert_eq!(e.translations, vec![("deu".to_string(), "Haushalt".to_string())]);
        assert!(lookup.lookup("unknown", "en").unwrap().is_empty());
    }

    #[test]
    fn translations_and_synonyms_cases() {
        let mut e = LexicalEntry::empty("budget", "eng");
        e.translations = vec![("deu".into(), "Haushalt".into()), ("deu".into(), "Haushalt".into())];
        assert_eq!(
            translations_and_synonyms(&e),
            vec![("deu".to_string(), "Haushalt".to_string())]
        );
        assert!(translations_and_synonyms(&LexicalEntry::empty("x", "eng")).is_empty());

        e.see_also = vec![
            "http://lexvo.org/id/term/eng/spending%20plan".into(),
            "http://lexvo.org/id/term/eng/Budget".into(),
            "http://dbpedia.example/Budget".into(),
        ];
        assert_eq!(
            translations_and_synonyms(&e),
            vec![
                ("deu".to_string(), "Haushalt".to_string()),
                ("eng".to_string(), "spending plan".to_string()),
            ]
        );
    }

    #[test]
    fn cache_escaping_round_trips() {
        let s = "a\tb\\c\nd";
        assert_eq!(unescape_field(&escape_field(s)), s);
    }
}
