mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use proptest::prelude::*;
use rio_api::model::{Literal, Term};
use rio_api::parser::TriplesParser;
use rio_turtle::{TurtleError, TurtleParser};

use common::*;
use tagbridge_core::corpus::{recount_usage, Corpus, Dataset, PortalSnapshot};
use tagbridge_core::metrics::{compute_report, similar_pairs, SimilarityMode};
use tagbridge_core::normalize::{canonicalize, levenshtein};
use tagbridge_core::reconcile::{apply_merge, replay, suggest_tier1, MergeLog};
use tagbridge_core::semsim::SimilarityProvider;
use tagbridge_core::tagserver::{export_turtle, LocalLink, RdfContext, RelationKind, Slug, TagStore};

fn tag_name() -> impl Strategy<Value = String> {
    prop_oneof![
        "[abcá]{1,6}",
        "[AaBb -]{1,6}",
        "[ab]{1,3}[0-9]{1,2}",
        "[a-zA-Z0-9 çãé.\"\\\\]{1,10}",
    ]
}

fn arb_snapshot(max_datasets: usize) -> impl Strategy<Value = PortalSnapshot> {
    let dataset = prop::collection::vec(tag_name(), 0..6);
    (
        prop::collection::vec(dataset, 0..max_datasets),
        prop::collection::vec(tag_name(), 0..4),
        prop::option::of("[a-z]{2}(_[A-Z]{2})?"),
    )
        .prop_map(|(sets, registered, locale)| {
            let datasets = sets
                .iter()
                .enumerate()
                .map(|(i, tags)| {
                    let tags: Vec<&str> = tags.iter().map(String::as_str).collect();
                    Dataset::new(format!("d{i}"), format!("Dataset {i}"), &tags)
                })
                .collect();
            PortalSnapshot::from_datasets(
                "prop",
                "http://prop.example",
                locale.as_deref(),
                clock().now(),
                datasets,
                registered,
            )
        })
}

fn pair_set(pairs: Vec<(String, String)>) -> BTreeSet<(String, String)> {
    pairs.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn snapshot_round_trips(s in arb_snapshot(12)) {
        prop_assert!(s.validate().is_ok());
        let text = String::from_utf8(s.to_bytes()).unwrap();
        let back = PortalSnapshot::from_str_checked(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_bytes(), s.to_bytes());
    }

    #[test]
    fn recount_is_idempotent_and_counts_datasets(s in arb_snapshot(12)) {
        let once = recount_usage(&s);
        prop_assert_eq!(&recount_usage(&once), &once);
        for t in &once.tags {
            let carriers = once.datasets.iter().filter(|d| d.tag_names.iter().any(|n| n == t.name())).count();
            prop_assert_eq!(t.usage_count as usize, carriers);
        }
        for d in &once.datasets {
            let unique: BTreeSet<&String> = d.tag_names.iter().collect();
            prop_assert_eq!(unique.len(), d.tag_names.len());
        }
    }

    #[test]
    fn similar_pairs_match_brute_force(s in arb_snapshot(40)) {
        for mode in [SimilarityMode::Canonical, SimilarityMode::Levenshtein(1), SimilarityMode::Levenshtein(2)] {
            prop_assert_eq!(similar_pairs(&s, mode), brute_similar_pairs(&s, mode));
        }
    }

    #[test]
    fn metrics_ignore_dataset_order(s in arb_snapshot(12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = s.datasets.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let registered: Vec<String> = s.tags.iter().filter(|t| t.registered).map(|t| t.name().to_string()).collect();
        let other = PortalSnapshot::from_datasets("prop", "http://prop.example", Some(&s.locale), s.fetched_at, shuffled, registered);
        for mode in [SimilarityMode::Canonical, SimilarityMode::Levenshtein(2)] {
            prop_assert_eq!(pair_set(similar_pairs(&s, mode)), pair_set(similar_pairs(&other, mode)));
        }
        let a = compute_report(&Corpus::new(vec![s]).unwrap(), None).unwrap();
        let b = compute_report(&Corpus::new(vec![other]).unwrap(), None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tier1_merges_replay_and_preserve_coverage(s in arb_snapshot(20)) {
        let clock = clock();
        let mut log = MergeLog::default();
        let mut merged = s.clone();
        for sug in suggest_tier1(&s) {
            merged = apply_merge(&merged, &sug, &sug.proposed_survivor, &mut log, clock.as_ref()).unwrap().snapshot;
        }
        let keys = |snap: &PortalSnapshot| -> BTreeMap<String, BTreeSet<String>> {
            snap.datasets
                .iter()
                .map(|d| (d.dataset_id.clone(), d.tag_names.iter().map(|n| canonicalize(n).into_string()).collect()))
                .collect()
        };
        prop_assert_eq!(keys(&merged), keys(&s));
        prop_assert!(suggest_tier1(&merged).is_empty());
        let reparsed = MergeLog::parse(&log.to_text()).unwrap();
        prop_assert_eq!(replay(&s, &reparsed).unwrap().to_bytes(), merged.to_bytes());
    }

    #[test]
    fn lexicon_similarity_is_symmetric_and_bounded(a in 0usize..64, b in 0usize..64) {
        let lex = fixture_lexicon();
        const WORDS: [&str; 8] = ["autumn", "fall", "budget", "finance", "health", "herbst", "money", "season"];
        let (ka, kb) = (canonicalize(WORDS[a % 8]), canonicalize(WORDS[b % 8]));
        for lang in ["en", "de", "pt"] {
            let ab = lex.similarity(&ka, &kb, lang);
            prop_assert_eq!(ab, lex.similarity(&kb, &ka, lang));
            prop_assert!((0.0..=1.0).contains(&ab));
            if ka == kb && lex.knows(&ka, lang) {
                prop_assert_eq!(ab, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Create(usize, bool),
    Link(usize, u8, u8),
    Unlink(usize, u8, u8),
    Relate(usize, u8, usize),
    Unrelate(usize, u8, usize),
}

const LABELS: [&str; 6] = ["Budget", "Finance", "Economy", "Autumn", "Fall", "Água"];
const KINDS: [RelationKind; 4] = [
    RelationKind::Broader,
    RelationKind::Narrower,
    RelationKind::Related,
    RelationKind::SameAs,
];

fn op() -> impl Strategy<Value = Op> {
    let i = 0usize..LABELS.len();
    prop_oneof![
        (i.clone(), any::<bool>()).prop_map(|(i, m)| Op::Create(i, m)),
        (i.clone(), 0u8..3, 0u8..4).prop_map(|(i, p, t)| Op::Link(i, p, t)),
        (i.clone(), 0u8..3, 0u8..4).prop_map(|(i, p, t)| Op::Unlink(i, p, t)),
        (i.clone(), 0u8..4, i.clone()).prop_map(|(a, k, b)| Op::Relate(a, k, b)),
        (i.clone(), 0u8..4, i).prop_map(|(a, k, b)| Op::Unrelate(a, k, b)),
    ]
}

fn apply(store: &TagStore, op: &Op) {
    let slug = |i: usize| Slug::from_label(LABELS[i]).unwrap();
    let link = |p: u8, t: u8| LocalLink::new(format!("p{p}"), format!("Tag {t}"));
    // Failures (missing slugs, conflicts, self relations) must leave no trace.
    let _ = match *op {
        Op::Create(i, m) => {
            let meanings = if m {
                vec![format!("http://meaning.example/{i}")]
            } else {
                vec![]
            };
            store.create_global_tag(LABELS[i], &meanings).map(drop)
        }
        Op::Link(i, p, t) => store.link_local_tag(&slug(i), link(p, t)).map(drop),
        Op::Unlink(i, p, t) => store.unlink_local_tag(&slug(i), link(p, t)).map(drop),
        Op::Relate(a, k, b) => store.relate(&slug(a), KINDS[k as usize], &slug(b)),
        Op::Unrelate(a, k, b) => store.unrelate(&slug(a), KINDS[k as usize], &slug(b)),
    };
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn journal_replay_matches_live_state(ops in prop::collection::vec(op(), 0..80), every in 1u64..20) {
        let dir = tempfile::tempdir().unwrap();
        let live = {
            let store = TagStore::open(dir.path(), clock()).unwrap().with_compact_every(every);
            let memory = TagStore::in_memory(clock());
            for o in &ops {
                apply(&store, o);
                apply(&memory, o);
            }
            prop_assert_eq!(store.all(), memory.all());
            store.all()
        };
        prop_assert_eq!(TagStore::open(dir.path(), clock()).unwrap().all(), live);
    }

    #[test]
    fn exported_labels_parse_back(labels in prop::collection::btree_set("[a-zA-Z0-9 \"\\\\\n\tçãé'<>]{1,12}", 1..6)) {
        let store = TagStore::in_memory(clock());
        for l in &labels {
            let _ = store.create_global_tag(l, &[]);
        }
        let tags = store.all();
        let ctx = RdfContext::new("http://tags.example", BTreeMap::new());
        let ttl = export_turtle(&tags, &ctx);
        let mut parsed = BTreeMap::new();
        TurtleParser::new(ttl.as_bytes(), None)
            .parse_all(&mut |t| {
                if let Term::Literal(Literal::Simple { value }) = t.object {
                    parsed.insert(t.subject.to_string(), value.to_string());
                }
                Ok::<_, TurtleError>(())
            })
            .unwrap();
        let expected: BTreeMap<String, String> = tags
            .iter()
            .map(|t| (format!("<http://tags.example/tags/{}>", t.slug.as_str()), t.label.clone()))
            .collect();
        prop_assert_eq!(parsed, expected);
    }

    #[test]
    fn levenshtein_bounded_by_lengths(a in ".{0,20}", b in ".{0,20}") {
        let (la, lb) = (a.chars().count(), b.chars().count());
        let d = levenshtein(&a, &b);
        prop_assert!(d <= la.max(lb));
        prop_assert!(d >= la.abs_diff(lb));
    }
}
