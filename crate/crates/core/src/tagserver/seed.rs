//! Bootstrapping global tags from the tags most portals share.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use super::{LocalLink, RelationKind, Slug, TagError, TagStore};
use crate::clock::Clock;
use crate::corpus::Corpus;
use crate::lexlookup::{translations_and_synonyms, LexicalLookup, LookupError};
use crate::metrics::{dominant_locales, key_portals, lookup_term};
use crate::normalize::{canonicalize, fuzzy_eligible, CanonicalKey};
use crate::semsim::{SimilarityProvider, DEFAULT_SEMANTIC_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedParams {
    /// Candidates taken from the portal-frequency ranking.
    pub top_n: usize,
    /// Upper bound on global tags created.
    pub create_n: usize,
    /// Skip candidates whose lookup found no meaning.
    pub require_meaning: bool,
    /// Similarity at which two created tags become `Related`.
    pub related_threshold: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self {
            top_n: 200,
            create_n: 100,
            require_meaning: false,
            related_threshold: DEFAULT_SEMANTIC_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOutcome {
    Created,
    /// The slug already existed; links were added to it.
    Existing,
    SkippedNoMeaning,
    OverLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    pub rank: usize,
    pub key: CanonicalKey,
    pub portal_count: usize,
    pub usage: u64,
    pub language: String,
    pub meanings: Vec<String>,
    pub variants: Vec<(String, String)>,
    /// Distinct (portal, raw name) pairs sharing the candidate's key.
    pub exact_links: usize,
    /// Distinct pairs once translation and synonym matches are added.
    pub links: usize,
    pub increment: usize,
    pub outcome: CandidateOutcome,
    pub slug: Option<Slug>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub generated_at: DateTime<Utc>,
    pub params: SeedParams,
    pub candidates: Vec<CandidateReport>,
    /// Newly created slugs; candidates whose slug already existed are
    /// reported per candidate only.
    pub created: Vec<Slug>,
    pub related: Vec<(Slug, Slug, f64)>,
    pub exact_links: usize,
    pub links: usize,
}

impl SeedReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("corpus is empty")]
    EmptyCorpus,
    /// Completed lookups are cached by the lookup layer, so re-running the
    /// same seed resumes at `next_key`.
    #[error("lookup failed for {next_key} after {completed} of {total} candidates: {source}")]
    LookupAborted {
        completed: usize,
        total: usize,
        next_key: CanonicalKey,
        #[source]
        source: LookupError,
    },
    #[error(transparent)]
    Store(#[from] TagError),
}

struct Candidate {
    key: CanonicalKey,
    portal_count: usize,
    usage: u64,
}

/// Ranks canonical keys by distinct portals, then total usage, then key.
fn rank(corpus: &Corpus) -> Vec<Candidate> {
    let mut usage: BTreeMap<CanonicalKey, u64> = BTreeMap::new();
    for s in corpus.snapshots() {
        for t in &s.tags {
            *usage.entry(t.canonical().clone()).or_default() += t.usage_count;
        }
    }
    let mut out: Vec<Candidate> = key_portals(corpus)
        .into_iter()
        .map(|(key, portals)| Candidate {
            usage: usage[&key],
            portal_count: portals.len(),
            key,
        })
        .collect();
    out.sort_by(|a, b| {
        b.portal_count
            .cmp(&a.portal_count)
            .then(b.usage.cmp(&a.usage))
            .then_with(|| a.key.cmp(&b.key))
    });
    out
}

/// Runs the seeding procedure: rank, look up meanings and variants, match
/// variants across the corpus, create global tags with their local links,
/// then relate similar created tags.
pub fn seed_from_corpus(
    corpus: &Corpus,
    lookup: &dyn LexicalLookup,
    provider: &dyn SimilarityProvider,
    params: &SeedParams,
    store: &TagStore,
    clock: &dyn Clock,
) -> Result<SeedReport, SeedError> {
    if corpus.is_empty() {
        return Err(SeedError::EmptyCorpus);
    }
    let locales = dominant_locales(corpus);
    let mut by_key: BTreeMap<CanonicalKey, BTreeMap<LocalLink, u64>> = BTreeMap::new();
    for s in corpus.snapshots() {
        for t in &s.tags {
            by_key
                .entry(t.canonical().clone())
                .or_default()
                .insert(LocalLink::new(&s.portal_id, t.name()), t.usage_count);
        }
    }
    let ranked: Vec<Candidate> = rank(corpus).into_iter().take(params.top_n).collect();

    struct Gathered {
        meanings: Vec<String>,
        variants: Vec<(String, String)>,
        exact: BTreeSet<LocalLink>,
        all: BTreeSet<LocalLink>,
    }
    let mut gathered = Vec::with_capacity(ranked.len());
    for (i, c) in ranked.iter().enumerate() {
        let entry = lookup
            .lookup(&lookup_term(&c.key), &locales[&c.key])
            .map_err(|source| SeedError::LookupAborted {
                completed: i,
                total: ranked.len(),
                next_key: c.key.clone(),
                source,
            })?;
        let variants = translations_and_synonyms(&entry);
        let exact: BTreeSet<LocalLink> = by_key[&c.key].keys().cloned().collect();
        let mut all = exact.clone();
        for (_, term) in &variants {
            if let Some(links) = by_key.get(&canonicalize(term)) {
                all.extend(links.keys().cloned());
            }
        }
        gathered.push(Gathered {
            meanings: entry.means,
            variants,
            exact,
            all,
        });
    }

    let mut candidates = Vec::with_capacity(ranked.len());
    // Seeded tags, new or pre-existing; both count towards create_n.
    let mut seeded: Vec<(Slug, &Candidate)> = Vec::new();
    for (i, (c, g)) in ranked.iter().zip(gathered).enumerate() {
        let label = preferred_label(&by_key[&c.key]);
        let outcome = if params.require_meaning && g.meanings.is_empty() {
            CandidateOutcome::SkippedNoMeaning
        } else if seeded.len() >= params.create_n {
            CandidateOutcome::OverLimit
        } else {
            let slug = Slug::from_label(&label)?;
            let outcome = if store.contains(&slug) {
                CandidateOutcome::Existing
            } else {
                store.create_global_tag(&label, &g.meanings)?;
                CandidateOutcome::Created
            };
            for link in &g.all {
                store.link_local_tag(&slug, link.clone())?;
            }
            seeded.push((slug, c));
            outcome
        };
        let slug = matches!(outcome, CandidateOutcome::Created | CandidateOutcome::Existing)
            .then(|| seeded.last().map(|(s, _)| s.clone()))
            .flatten();
        candidates.push(CandidateReport {
            rank: i + 1,
            key: c.key.clone(),
            portal_count: c.portal_count,
            usage: c.usage,
            language: locales[&c.key].clone(),
            meanings: g.meanings,
            variants: g.variants,
            exact_links: g.exact.len(),
            links: g.all.len(),
            increment: g.all.len() - g.exact.len(),
            outcome,
            slug,
        });
    }

    let mut related = Vec::new();
    for (i, (sa, ca)) in seeded.iter().enumerate() {
        for (sb, cb) in &seeded[i + 1..] {
            if !fuzzy_eligible(&ca.key) || !fuzzy_eligible(&cb.key) {
                continue;
            }
            let score = [&locales[&ca.key], &locales[&cb.key]]
                .iter()
                .map(|lang| provider.similarity(&ca.key, &cb.key, lang))
                .fold(0.0, f64::max);
            if score >= params.related_threshold {
                store.relate(sa, RelationKind::Related, sb)?;
                related.push((sa.clone(), sb.clone(), score));
            }
        }
    }

    Ok(SeedReport {
        generated_at: clock.now(),
        params: params.clone(),
        exact_links: candidates
            .iter()
            .filter(|c| c.slug.is_some())
            .map(|c| c.exact_links)
            .sum(),
        links: candidates.iter().filter(|c| c.slug.is_some()).map(|c| c.links).sum(),
        created: candidates
            .iter()
            .filter(|c| c.outcome == CandidateOutcome::Created)
            .filter_map(|c| c.slug.clone())
            .collect(),
        candidates,
        related,
    })
}

/// The most used raw spelling; ties go to the smallest name.
fn preferred_label(links: &BTreeMap<LocalLink, u64>) -> String {
    let mut usage: BTreeMap<&str, u64> = BTreeMap::new();
    for (l, u) in links {
        *usage.entry(l.tag_name.as_str()).or_default() += u;
    }
    usage
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(n, _)| n.trim().to_string())
        .unwrap_or_default()
}
