//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tagbridge_core::clock::{parse_ts, Clock, FixedClock};
use tagbridge_core::corpus::{Corpus, Dataset, PortalSnapshot};
use tagbridge_core::lexlookup::{CachedLookup, LexvoClient};
use tagbridge_core::metrics::{SimilarityMode, TagPair};
use tagbridge_core::normalize::{canonicalize, fuzzy_eligible, levenshtein, CanonicalKey};
use tagbridge_core::semsim::Lexicon;
use tagbridge_core::transport::LiveTransport;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock::parse("2016-01-01T00:00:00Z").unwrap())
}

/// Cache-only lookup over `fixtures/lex`.
pub fn fixture_lookup() -> CachedLookup<LexvoClient<LiveTransport>> {
    CachedLookup::offline(fixtures_dir().join("lex"))
}

pub fn fixture_lexicon() -> Lexicon {
    Lexicon::load(&fixtures_dir().join("lexicon.tsv")).unwrap()
}

pub fn snapshot(id: &str, locale: &str, datasets: &[(&str, &[&str])]) -> PortalSnapshot {
    PortalSnapshot::from_datasets(
        id,
        format!("http://{id}.example"),
        Some(locale),
        parse_ts("2015-09-01T00:00:00Z").unwrap(),
        datasets.iter().map(|(d, tags)| Dataset::new(*d, *d, tags)).collect(),
        std::iter::empty::<String>(),
    )
}

/// Three portals whose counts are enumerated in `fixtures/README.md`.
///
/// alpha (en): a1 {Birth, health, 2010}, a2 {birth, health},
/// a3 {health, worker}, a4 {workers}.
/// beta (en): b1 {budget, Health}, b2 {Budget, finance}, b3 {budget}.
/// gamma (pt): c1 {saúde, Saúde, orçamento}, c2 {saude, gdp}.
pub fn metrics_corpus() -> Corpus {
    Corpus::new(vec![
        snapshot(
            "alpha",
            "en",
            &[
                ("a1", &["Birth", "health", "2010"]),
                ("a2", &["birth", "health"]),
                ("a3", &["health", "worker"]),
                ("a4", &["workers"]),
            ],
        ),
        snapshot(
            "beta",
            "en",
            &[
                ("b1", &["budget", "Health"]),
                ("b2", &["Budget", "finance"]),
                ("b3", &["budget"]),
            ],
        ),
        snapshot(
            "gamma",
            "pt",
            &[("c1", &["saúde", "Saúde", "orçamento"]), ("c2", &["saude", "gdp"])],
        ),
    ])
    .unwrap()
}

/// Seeding corpus: 23 canonical keys over three English portals and one
/// German portal. "budget" is in p1, p2 and p3; de1 carries "Haushalt",
/// the fixture translation of budget. Ranking and expected outcomes are in
/// `fixtures/README.md`.
pub fn seed_corpus() -> Corpus {
    Corpus::new(vec![
        snapshot(
            "p1",
            "en",
            &[
                ("p1-1", &["Budget", "2010", "health", "education"]),
                ("p1-2", &["Budget", "2011", "autumn", "population"]),
                ("p1-3", &["transport", "water", "tourism", "roads"]),
                ("p1-4", &["health", "2010"]),
            ],
        ),
        snapshot(
            "p2",
            "en",
            &[
                ("p2-1", &["budget", "2010", "health", "education", "environment"]),
                ("p2-2", &["budget", "2011", "autumn", "agriculture"]),
                ("p2-3", &["housing", "crime", "schools"]),
            ],
        ),
        snapshot(
            "p3",
            "en",
            &[
                ("p3-1", &["budget", "2010", "health", "transport", "environment"]),
                ("p3-2", &["fall", "energy", "employment"]),
                ("p3-3", &["fall", "census"]),
                ("p3-4", &["fall"]),
            ],
        ),
        snapshot(
            "de1",
            "de",
            &[
                ("de1-1", &["Haushalt", "2010", "Gesundheit"]),
                ("de1-2", &["Haushalt", "2012"]),
            ],
        ),
    ])
    .unwrap()
}

/// A generated portal with known duplicate structure.
pub struct TierFixture {
    pub snapshot: PortalSnapshot,
    /// Raw names of each injected canonical-duplicate cluster.
    pub clusters: Vec<BTreeSet<String>>,
    /// Injected eligible near pairs, as sorted canonical keys.
    pub eligible_pairs: BTreeSet<(CanonicalKey, CanonicalKey)>,
    /// Injected near pairs with a digit or a key shorter than four chars.
    pub ineligible_pairs: Vec<(String, String)>,
}

pub const TIER_TAGS: usize = 500;
pub const TIER_CLUSTERS: usize = 40;
pub const TIER_ELIGIBLE_PAIRS: usize = 15;
pub const TIER_INELIGIBLE_PAIRS: usize = 10;

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const VOWELS: [(char, char); 5] = [('a', 'á'), ('e', 'é'), ('i', 'í'), ('o', 'ó'), ('u', 'ú')];

struct KeySpace {
    all: BTreeSet<CanonicalKey>,
    eligible: Vec<CanonicalKey>,
}

impl KeySpace {
    // Free means unused and, if eligible, more than two edits from every
    // eligible key.
    fn free(&self, key: &CanonicalKey) -> bool {
        if self.all.contains(key) {
            return false;
        }
        !fuzzy_eligible(key) || self.eligible.iter().all(|k| levenshtein(k.as_str(), key.as_str()) > 2)
    }

    fn take(&mut self, key: CanonicalKey) {
        if fuzzy_eligible(&key) {
            self.eligible.push(key.clone());
        }
        self.all.insert(key);
    }
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut w: String = (0..len)
        .map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char)
        .collect();
    // A vowel at position 1 guarantees an accented spelling exists.
    let v = VOWELS[rng.gen_range(0..VOWELS.len())].0;
    w.replace_range(1..2, &v.to_string());
    w
}

fn fresh(rng: &mut ChaCha8Rng, space: &KeySpace, lens: std::ops::RangeInclusive<usize>) -> String {
    loop {
        let len = rng.gen_range(lens.clone());
        let w = random_word(rng, len);
        if space.free(&canonicalize(&w)) {
            return w;
        }
    }
}

fn capitalized(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn accented(w: &str) -> String {
    let mut done = false;
    w.chars()
        .map(|c| match VOWELS.iter().find(|(plain, _)| *plain == c) {
            Some((_, acc)) if !done => {
                done = true;
                *acc
            }
            _ => c,
        })
        .collect()
}

fn mutate(rng: &mut ChaCha8Rng, w: &str, edits: usize) -> String {
    let mut chars: Vec<char> = w.chars().collect();
    for _ in 0..edits {
        let letter = LETTERS[rng.gen_range(0..LETTERS.len())] as char;
        match rng.gen_range(0..3) {
            0 => {
                let i = rng.gen_range(0..chars.len());
                chars[i] = letter;
            }
            1 => {
                let i = rng.gen_range(0..=chars.len());
                chars.insert(i, letter);
            }
            _ => {
                let i = rng.gen_range(0..chars.len());
                chars.remove(i);
            }
        }
    }
    chars.into_iter().collect()
}

/// 500 tags with 40 canonical-duplicate clusters (2 to 4 spellings each),
/// 15 eligible pairs at edit distance 1 or 2, 5 year-suffixed pairs, 5
/// short-key pairs and random filler words far from everything else.
pub fn tier_fixture(seed: u64) -> TierFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut space = KeySpace {
        all: BTreeSet::new(),
        eligible: Vec::new(),
    };
    let mut names: Vec<String> = Vec::new();

    let mut clusters = Vec::new();
    for _ in 0..TIER_CLUSTERS {
        let w = fresh(&mut rng, &space, 6..=10);
        let mut spellings = vec![w.clone(), capitalized(&w), w.to_uppercase(), accented(&w)];
        spellings.shuffle(&mut rng);
        let size = rng.gen_range(2..=4);
        let cluster: BTreeSet<String> = spellings.into_iter().take(size).collect();
        names.extend(cluster.iter().cloned());
        space.take(canonicalize(&w));
        clusters.push(cluster);
    }

    let mut eligible_pairs = BTreeSet::new();
    while eligible_pairs.len() < TIER_ELIGIBLE_PAIRS {
        let a = fresh(&mut rng, &space, 7..=10);
        let ka = canonicalize(&a);
        let edits = rng.gen_range(1..=2);
        let b = mutate(&mut rng, &a, edits);
        let kb = canonicalize(&b);
        let d = levenshtein(ka.as_str(), kb.as_str());
        if !(1..=2).contains(&d) || !fuzzy_eligible(&kb) || !space.free(&kb) {
            continue;
        }
        space.take(ka.clone());
        space.take(kb.clone());
        names.push(if rng.gen_bool(0.5) { capitalized(&a) } else { a });
        names.push(b);
        eligible_pairs.insert(if ka < kb { (ka, kb) } else { (kb, ka) });
    }

    let mut ineligible_pairs = Vec::new();
    while ineligible_pairs.len() < TIER_INELIGIBLE_PAIRS / 2 {
        let stem = fresh(&mut rng, &space, 5..=8);
        let year = rng.gen_range(1990..2020);
        let (a, b) = (format!("{stem}-{year}"), format!("{stem}-{}", year + 1));
        let (ka, kb) = (canonicalize(&a), canonicalize(&b));
        if space.all.contains(&ka) || space.all.contains(&kb) {
            continue;
        }
        space.take(ka);
        space.take(kb);
        names.push(a.clone());
        names.push(b.clone());
        ineligible_pairs.push((a, b));
    }
    while ineligible_pairs.len() < TIER_INELIGIBLE_PAIRS {
        let a = random_word(&mut rng, 3);
        let b = mutate(&mut rng, &a, 1);
        let (ka, kb) = (canonicalize(&a), canonicalize(&b));
        if b.chars().count() != 3 || ka == kb || space.all.contains(&ka) || space.all.contains(&kb) {
            continue;
        }
        space.take(ka);
        space.take(kb);
        names.push(a.clone());
        names.push(b.clone());
        ineligible_pairs.push((a, b));
    }

    while names.len() < TIER_TAGS {
        let w = fresh(&mut rng, &space, 8..=12);
        space.take(canonicalize(&w));
        names.push(w);
    }

    let mut order = names.clone();
    order.shuffle(&mut rng);
    let mut datasets = Vec::new();
    let mut rest = order.as_slice();
    while !rest.is_empty() {
        let n = rng.gen_range(1..=5).min(rest.len());
        let (chunk, tail) = rest.split_at(n);
        rest = tail;
        let mut tags: Vec<&str> = chunk.iter().map(String::as_str).collect();
        for _ in 0..rng.gen_range(0..=2) {
            let extra = names[rng.gen_range(0..names.len())].as_str();
            if !tags.contains(&extra) {
                tags.push(extra);
            }
        }
        datasets.push(Dataset::new(format!("ds-{:04}", datasets.len()), "", &tags));
    }
    let snapshot = PortalSnapshot::from_datasets(
        "tiers",
        "http://tiers.example",
        Some("en"),
        parse_ts("2015-09-01T00:00:00Z").unwrap(),
        datasets,
        std::iter::empty::<String>(),
    );
    TierFixture {
        snapshot,
        clusters,
        eligible_pairs,
        ineligible_pairs,
    }
}

/// Edit distance by memoized recursion over suffixes; deliberately shares
/// no code or formulation with the library's row-based DP.
pub fn oracle_levenshtein(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut [Option<usize>]) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        let slot = i * (b.len() + 1) + j;
        if let Some(v) = memo[slot] {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo[slot] = Some(v);
        v
    }
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut memo = vec![None; (a.len() + 1) * (b.len() + 1)];
    go(&a, &b, 0, 0, &mut memo)
}

/// Quadratic reference for `similar_pairs`, straight from the definitions.
pub fn brute_similar_pairs(snapshot: &PortalSnapshot, mode: SimilarityMode) -> Vec<TagPair> {
    let tags: Vec<(&str, CanonicalKey)> = snapshot
        .tags
        .iter()
        .map(|t| (t.name(), canonicalize(t.name())))
        .collect();
    let mut out = Vec::new();
    for (i, (na, ka)) in tags.iter().enumerate() {
        for (nb, kb) in &tags[i + 1..] {
            let similar = match mode {
                SimilarityMode::Canonical => ka == kb,
                SimilarityMode::Levenshtein(k) => {
                    ka != kb
                        && fuzzy_eligible(ka)
                        && fuzzy_eligible(kb)
                        && oracle_levenshtein(ka.as_str(), kb.as_str()) <= k
                }
            };
            if similar {
                out.push(if na <= nb {
                    (na.to_string(), nb.to_string())
                } else {
                    (nb.to_string(), na.to_string())
                });
            }
        }
    }
    out.sort();
    out
}
