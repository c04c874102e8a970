//! Tag metadata toolkit for open data portals: harvesting, quality metrics,
//! tiered tag reconciliation and a global tag store with RDF export.

pub mod clock;
pub mod corpus;
mod fsutil;
pub mod harvester;
pub mod lexlookup;
pub mod metrics;
pub mod normalize;
pub mod reconcile;
pub mod semsim;
pub mod tagserver;
pub mod transport;

pub use clock::{Clock, FixedClock, SystemClock};
pub use corpus::{Corpus, CorpusError, Dataset, LocalTag, PortalSnapshot};
pub use normalize::{canonicalize, fuzzy_eligible, levenshtein, CanonicalKey};
