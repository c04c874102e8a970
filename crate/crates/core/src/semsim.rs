//! Lexicon-backed semantic similarity.
//!
//! Similarity providers score two canonical keys in `[0, 1]`. The bundled
//! [`Lexicon`] scores shared-synset pairs 1.0 and otherwise uses
//! `1 / (1 + d)` where `d` is the shortest path between the terms' synsets in
//! the (undirected) synset hierarchy.
//!
//! Lexicon file lines: `synset_id<TAB>language<TAB>term` and
//! `synset_id<TAB>PARENT<TAB>parent_synset_id`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use thiserror::Error;

use crate::lexlookup::iso639_3;
use crate::normalize::{canonicalize, CanonicalKey};

/// Default score a pair must reach to become a semantic merge suggestion.
pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.9;

const STARTER_LEXICON: &str = include_str!("../data/starter_lexicon.tsv");

pub trait SimilarityProvider: Send + Sync {
    fn similarity(&self, a: &CanonicalKey, b: &CanonicalKey, language: &str) -> f64;

    /// Whether the provider has any knowledge of `key` in `language`.
    fn knows(&self, key: &CanonicalKey, language: &str) -> bool;
}

impl<P: SimilarityProvider + ?Sized> SimilarityProvider for &P {
    fn similarity(&self, a: &CanonicalKey, b: &CanonicalKey, language: &str) -> f64 {
        (**self).similarity(a, b, language)
    }

    fn knows(&self, key: &CanonicalKey, language: &str) -> bool {
        (**self).knows(key, language)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {line}: expected three tab-separated fields")]
    Malformed { line: usize },
    #[error("line {line}: bad language code {code:?}")]
    Language { line: usize, code: String },
    #[error("synset {0:?} has a parent link but no terms")]
    UnknownSynset(String),
    #[error("synset hierarchy has a cycle through {0:?}")]
    Cycle(String),
    #[error("cannot read lexicon: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    synsets: BTreeMap<String, BTreeSet<(String, CanonicalKey)>>,
    parents: BTreeMap<String, BTreeSet<String>>,
    index: HashMap<(String, CanonicalKey), Vec<usize>>,
    // Undirected adjacency over synset ordinals.
    neighbours: Vec<Vec<usize>>,
}

impl Lexicon {
    /// The lexicon shipped with the crate (~100 synsets in eng, deu, por,
    /// spa and fra).
    pub fn starter() -> Self {
        Self::parse(STARTER_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|e| LexiconError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut synsets: BTreeMap<String, BTreeSet<(String, CanonicalKey)>> = BTreeMap::new();
        let mut parents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, second, third] = fields[..] else {
                return Err(LexiconError::Malformed { line: line_no });
            };
            if second == "PARENT" {
                parents.entry(id.to_string()).or_default().insert(third.to_string());
            } else {
                let lang = iso639_3(second).map_err(|_| LexiconError::Language {
                    line: line_no,
                    code: second.to_string(),
                })?;
                let key = canonicalize(third);
                if key.is_empty() {
                    return Err(LexiconError::Malformed { line: line_no });
                }
                synsets.entry(id.to_string()).or_default().insert((lang, key));
            }
        }
        for (child, ps) in &parents {
            if !synsets.contains_key(child) {
                return Err(LexiconError::UnknownSynset(child.clone()));
            }
            if let Some(p) = ps.iter().find(|p| !synsets.contains_key(*p)) {
                return Err(LexiconError::UnknownSynset(p.clone()));
            }
        }
        check_acyclic(&parents)?;

        let ordinal: HashMap<&str, usize> = synsets.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let mut neighbours = vec![Vec::new(); synsets.len()];
        for (child, ps) in &parents {
            for p in ps {
                let (c, p) = (ordinal[child.as_str()], ordinal[p.as_str()]);
                neighbours[c].push(p);
                neighbours[p].push(c);
            }
        }
        let mut index: HashMap<(String, CanonicalKey), Vec<usize>> = HashMap::new();
        for (i, terms) in synsets.values().enumerate() {
            for t in terms {
                index.entry(t.clone()).or_default().push(i);
            }
        }
        Ok(Self {
            synsets,
            parents,
            index,
            neighbours,
        })
    }

    pub fn synset_count(&self) -> usize {
        self.synsets.len()
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.synsets
            .values()
            .flat_map(|ts| ts.iter().map(|(l, _)| l.clone()))
            .collect()
    }

    pub fn parents_of(&self, synset: &str) -> impl Iterator<Item = &str> {
        self.parents
            .get(synset)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    fn synsets_of(&self, key: &CanonicalKey, language: &str) -> &[usize] {
        let lang = iso639_3(language).unwrap_or_else(|_| language.to_ascii_lowercase());
        self.index.get(&(lang, key.clone())).map(Vec::as_slice).unwrap_or(&[])
    }

    fn distance(&self, from: &[usize], to: &[usize]) -> Option<usize> {
        let targets: HashSet<usize> = to.iter().copied().collect();
        let mut seen = vec![false; self.neighbours.len()];
        let mut queue = VecDeque::new();
        for &s in from {
            seen[s] = true;
            queue.push_back((s, 0usize));
        }
        while let Some((node, d)) = queue.pop_front() {
            if targets.contains(&node) {
                return Some(d);
            }
            for &n in &self.neighbours[node] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back((n, d + 1));
                }
            }
        }
        None
    }
}

fn check_acyclic(parents: &BTreeMap<String, BTreeSet<String>>) -> Result<(), LexiconError> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&str, u8> = HashMap::new();
    fn visit<'a>(
        node: &'a str,
        parents: &'a BTreeMap<String, BTreeSet<String>>,
        state: &mut HashMap<&'a str, u8>,
    ) -> Result<(), LexiconError> {
        match state.get(node) {
            Some(1) => return Err(LexiconError::Cycle(node.to_string())),
            Some(2) => return Ok(()),
            _ => {}
        }
        state.insert(node, 1);
        if let Some(ps) = parents.get(node) {
            for p in ps {
                visit(p, parents, state)?;
            }
        }
        state.insert(node, 2);
        Ok(())
    }
    for node in parents.keys() {
        visit(node, parents, &mut state)?;
    }
    Ok(())
}

impl SimilarityProvider for Lexicon {
    fn similarity(&self, a: &CanonicalKey, b: &CanonicalKey, language: &str) -> f64 {
        if a == b && !a.is_empty() {
            return 1.0;
        }
        let (sa, sb) = (self.synsets_of(a, language), self.synsets_of(b, language));
        if sa.is_empty() || sb.is_empty() {
            return 0.0;
        }
        match self.distance(sa, sb) {
            Some(d) => 1.0 / (1.0 + d as f64),
            None => 0.0,
        }
    }

    fn knows(&self, key: &CanonicalKey, language: &str) -> bool {
        !self.synsets_of(key, language).is_empty()
    }
}

/// Members of `pool` (other than `key`) known to the provider whose score
/// reaches `threshold`, best first, ties by key.
pub fn related_candidates<P: SimilarityProvider + ?Sized>(
    provider: &P,
    key: &CanonicalKey,
    pool: &BTreeSet<CanonicalKey>,
    threshold: f64,
    language: &str,
) -> Vec<(CanonicalKey, f64)> {
    let mut out: Vec<(CanonicalKey, f64)> = pool
        .iter()
        .filter(|c| *c != key && provider.knows(c, language))
        .map(|c| (c.clone(), provider.similarity(key, c, language)))
        .filter(|(_, s)| *s >= threshold)
        .collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    out
}
