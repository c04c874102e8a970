//! `tagbridge`: harvest portals, profile their tags, reconcile duplicates,
//! seed and serve the global tag store.
//!
//! Exit status is 0 on success, 1 on an operational failure and 2 on a usage
//! error. Failures print one JSON line `{"error": kind, "message": text}` on
//! stderr.

use std::fmt::Display;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tagbridge_core::clock::{Clock, FixedClock, SystemClock};
use tagbridge_core::corpus::Corpus;
use tagbridge_core::harvester::{parse_endpoints, HarvestConfig, Harvester};
use tagbridge_core::lexlookup::{CachedLookup, LexicalLookup, LexvoClient};
use tagbridge_core::metrics::{compute_report, emit_histograms, emit_report, ReportFormat};
use tagbridge_core::reconcile::{SuggestionId, Tier, Workspace};
use tagbridge_core::semsim::{Lexicon, SimilarityProvider, DEFAULT_SEMANTIC_THRESHOLD};
use tagbridge_core::tagserver::{
    export_dataset_links, export_turtle, seed_from_corpus, RdfContext, SeedParams, TagStore,
};
use tagbridge_core::transport::{LiveTransport, RecordingTransport, ReplayTransport, Transport};

#[derive(Debug, Parser)]
#[command(name = "tagbridge", version, about = "Tag metadata toolkit for open data portals")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Directory of portal snapshots (`<portal_id>.snap`).
    #[arg(long, global = true, value_name = "DIR", default_value = "corpus")]
    corpus: PathBuf,
    /// Global tag store directory (journal and snapshot).
    #[arg(long, global = true, value_name = "DIR", default_value = "store")]
    store: PathBuf,
    /// Cache directory for lexical lookups, one `<lang>.tsv` per language.
    #[arg(long = "lex-cache", global = true, value_name = "DIR", default_value = "cache/lex")]
    lex_cache: PathBuf,
    /// Answer lexical lookups from the cache only.
    #[arg(long, global = true)]
    offline: bool,
    /// Multilingual lexicon TSV for semantic similarity [default: bundled starter lexicon].
    #[arg(long, global = true, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Tier-3 similarity threshold, in [0, 1].
    #[arg(long, global = true, value_name = "X", default_value_t = DEFAULT_SEMANTIC_THRESHOLD, value_parser = unit_interval)]
    threshold: f64,
    /// Base URL under which global tag IRIs are minted.
    #[arg(
        long = "server-base",
        global = true,
        value_name = "URL",
        default_value = "http://localhost:8080"
    )]
    server_base: String,
    /// Use this RFC 3339 instant for every timestamp.
    #[arg(long = "fixed-clock", global = true, value_name = "RFC3339", value_parser = fixed_clock)]
    fixed_clock: Option<FixedClock>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Harvest CKAN portals into snapshots.
    Harvest(HarvestArgs),
    /// Compute tag quality metrics over the corpus.
    Metrics(MetricsArgs),
    /// Review and apply tag merge suggestions.
    #[command(subcommand)]
    Reconcile(ReconcileCommand),
    /// Run the tag server and curation API.
    Serve(ServeArgs),
    /// Create global tags from the tags most portals share.
    Seed(SeedArgs),
    /// Export the global tag store as Turtle.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct HarvestArgs {
    /// Endpoints file: `portal_id<TAB>base_url[<TAB>locale]` per line.
    #[arg(long, value_name = "FILE")]
    endpoints: PathBuf,
    /// Output directory for snapshots and `failures.json`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Portals harvested concurrently.
    #[arg(long, value_name = "N", default_value_t = 4, value_parser = clap::value_parser!(u16).range(1..=64))]
    parallelism: u16,
    /// Datasets requested per catalog page.
    #[arg(long = "page-size", value_name = "N", default_value_t = 100, value_parser = clap::value_parser!(u16).range(1..=1000))]
    page_size: u16,
    /// Stop each portal after this many datasets.
    #[arg(long = "max-datasets", value_name = "N")]
    max_datasets: Option<usize>,
    /// Serve requests from a recorded directory (`index.tsv`) instead of the network.
    #[arg(long, value_name = "DIR", conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Record every live response into this directory for later replay.
    #[arg(long, value_name = "DIR")]
    record: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Report file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Classify tags by lexical lookup (network unless --offline).
    #[arg(long = "with-expressiveness")]
    with_expressiveness: bool,
    /// Also write per-portal metric histograms as CSV.
    #[arg(long, value_name = "FILE")]
    histograms: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ReconcileCommand {
    /// List merge suggestions for one portal.
    Suggest {
        #[arg(long, value_name = "ID")]
        portal: String,
        /// 1, 2, 3 or all.
        #[arg(long, value_name = "TIER", default_value = "all", value_parser = tiers)]
        tier: TierSel,
        /// Print a JSON array instead of TSV.
        #[arg(long)]
        json: bool,
    },
    /// Accept a suggestion and merge its members into the survivor.
    Apply {
        #[arg(long, value_name = "ID")]
        portal: String,
        #[arg(long, value_name = "SID")]
        suggestion: String,
        #[arg(long, value_name = "NAME")]
        survivor: String,
    },
    /// Reject a suggestion.
    Reject {
        #[arg(long, value_name = "ID")]
        portal: String,
        #[arg(long, value_name = "SID")]
        suggestion: String,
    },
}

#[derive(Debug, Clone)]
struct TierSel(Vec<Tier>);

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, value_name = "ADDR:PORT", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Static UI assets [default: ui/dist when present].
    #[arg(long, value_name = "DIR")]
    assets: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeedArgs {
    /// Candidates taken from the portal-frequency ranking.
    #[arg(long, value_name = "N", default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    top: u32,
    /// Upper bound on global tags created.
    #[arg(long, value_name = "N", default_value_t = 100)]
    create: u32,
    /// Skip candidates without a looked-up meaning.
    #[arg(long = "require-meaning")]
    require_meaning: bool,
    /// Similarity at which two seeded tags become related.
    #[arg(long = "related-threshold", value_name = "X", default_value_t = DEFAULT_SEMANTIC_THRESHOLD, value_parser = unit_interval)]
    related_threshold: f64,
    /// Also write the report to this file.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Turtle output file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write dataset-side `muto:hasTag` triples (reads the corpus).
    #[arg(long = "dataset-links", value_name = "FILE")]
    dataset_links: Option<PathBuf>,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} is outside [0, 1]"))
    }
}

fn fixed_clock(s: &str) -> Result<FixedClock, String> {
    FixedClock::parse(s).map_err(|e| format!("{e}"))
}

fn tiers(s: &str) -> Result<TierSel, String> {
    match s {
        "1" => Ok(TierSel(vec![Tier::Canonical])),
        "2" => Ok(TierSel(vec![Tier::EditDistance])),
        "3" => Ok(TierSel(vec![Tier::Semantic])),
        "all" => Ok(TierSel(Tier::ALL.to_vec())),
        _ => Err("expected 1, 2, 3 or all".into()),
    }
}

/// An operational failure, reported as one JSON line.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

trait OrFail<T> {
    fn or_fail(self, kind: &'static str) -> Result<T, Failure>;
}

impl<T, E: Display> OrFail<T> for Result<T, E> {
    fn or_fail(self, kind: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            kind,
            message: e.to_string(),
        })
    }
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({"error": kind, "message": message}));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            emit_error("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            emit_error(f.kind, &f.message);
            ExitCode::from(1)
        }
    }
}

impl Global {
    fn clock(&self) -> Arc<dyn Clock> {
        match self.fixed_clock {
            Some(c) => Arc::new(c),
            None => Arc::new(SystemClock),
        }
    }

    fn lookup(&self) -> Box<dyn LexicalLookup> {
        if self.offline {
            Box::new(CachedLookup::offline(&self.lex_cache))
        } else {
            Box::new(CachedLookup::new(
                LexvoClient::new(LiveTransport::new()),
                &self.lex_cache,
            ))
        }
    }

    fn lexicon(&self) -> Result<Lexicon, Failure> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p).or_fail("lexicon"),
            None => Ok(Lexicon::starter()),
        }
    }

    fn corpus(&self) -> Result<Corpus, Failure> {
        Corpus::load_dir(&self.corpus).or_fail("corpus")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).or_fail("io")?;
    }
    fs::write(path, contents)
        .map_err(|e| format!("{}: {e}", path.display()))
        .or_fail("io")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Harvest(a) => harvest(g, a),
        Command::Metrics(a) => metrics(g, a),
        Command::Reconcile(c) => reconcile(g, c),
        Command::Serve(a) => serve(g, a),
        Command::Seed(a) => seed(g, a),
        Command::Export(a) => export(g, a),
    }
}

fn harvest(g: &Global, a: HarvestArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.endpoints)
        .map_err(|e| format!("{}: {e}", a.endpoints.display()))
        .or_fail("io")?;
    let endpoints = parse_endpoints(&text)
        .or_fail("endpoints")?
        .into_iter()
        .map(|ep| {
            let ep = ep.with_page_size(a.page_size.into())?;
            Ok(match a.max_datasets {
                Some(n) => ep.with_max_datasets(n),
                None => ep,
            })
        })
        .collect::<Result<Vec<_>, tagbridge_core::harvester::EndpointError>>()
        .or_fail("endpoints")?;
    let parallelism = usize::from(a.parallelism);
    let report = match (&a.replay, &a.record) {
        (Some(dir), _) => {
            let t = ReplayTransport::load_dir(dir)
                .map_err(|e| format!("{}: {e}", dir.display()))
                .or_fail("replay")?;
            Harvester::new(t, HarvestConfig::immediate(), g.clock()).harvest_all(&endpoints, parallelism)
        }
        (None, Some(dir)) => {
            let t = RecordingTransport::new(LiveTransport::new(), dir).or_fail("io")?;
            run_live(t, g, &endpoints, parallelism)
        }
        (None, None) => run_live(LiveTransport::new(), g, &endpoints, parallelism),
    };
    report.corpus.save_dir(&a.out).or_fail("corpus")?;
    let failures = serde_json::to_string_pretty(&report.failures).expect("failures serialize");
    write_file(&a.out.join("failures.json"), &(failures + "\n"))?;
    for s in report.corpus.snapshots() {
        println!("harvested\t{}\t{}\t{}", s.portal_id, s.datasets.len(), s.tags.len());
    }
    for f in &report.failures {
        println!("failed\t{}\t{}", f.portal_id, f.phase);
    }
    if report.corpus.is_empty() {
        return Err(Failure {
            kind: "harvest",
            message: format!("no portal harvested ({} failures)", report.failures.len()),
        });
    }
    Ok(())
}

fn run_live<T: Transport>(
    t: T,
    g: &Global,
    endpoints: &[tagbridge_core::harvester::PortalEndpoint],
    parallelism: usize,
) -> tagbridge_core::harvester::HarvestReport {
    Harvester::new(t, HarvestConfig::default(), g.clock()).harvest_all(endpoints, parallelism)
}

fn metrics(g: &Global, a: MetricsArgs) -> Result<(), Failure> {
    let corpus = g.corpus()?;
    let lookup = a.with_expressiveness.then(|| g.lookup());
    let report = compute_report(&corpus, lookup.as_deref()).or_fail("lookup")?;
    let format = match a.format {
        Format::Csv => ReportFormat::Csv,
        Format::Table => ReportFormat::Table,
    };
    emit_report(&report, &a.out, format).or_fail("io")?;
    if let Some(h) = &a.histograms {
        emit_histograms(&report, h).or_fail("io")?;
    }
    Ok(())
}

fn reconcile(g: &Global, c: ReconcileCommand) -> Result<(), Failure> {
    let ws = Workspace::new(&g.corpus);
    let lexicon = g.lexicon()?;
    let provider: Option<&dyn SimilarityProvider> = Some(&lexicon);
    match c {
        ReconcileCommand::Suggest { portal, tier, json } => {
            let list = ws
                .suggestions(&portal, &tier.0, provider, g.threshold)
                .or_fail("reconcile")?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&list).expect("suggestions serialize")
                );
                return Ok(());
            }
            println!("suggestion_id\ttier\tstatus\tproposed_survivor\tmembers\tevidence");
            for s in &list {
                let status = serde_json::to_value(s.status).expect("status serializes");
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    s.suggestion_id.as_str(),
                    s.tier.number(),
                    status.as_str().unwrap_or_default(),
                    s.proposed_survivor,
                    json!(s.members),
                    json!(s.evidence),
                );
            }
            Ok(())
        }
        ReconcileCommand::Apply {
            portal,
            suggestion,
            survivor,
        } => {
            let clock = g.clock();
            let outcome = ws
                .accept(
                    &portal,
                    &SuggestionId::from(suggestion.as_str()),
                    &survivor,
                    provider,
                    g.threshold,
                    clock.as_ref(),
                )
                .or_fail("reconcile")?;
            println!(
                "{}",
                json!({
                    "applied": outcome.applied,
                    "portal_id": portal,
                    "tag_count": outcome.snapshot.tags.len(),
                    "dataset_count": outcome.snapshot.datasets.len(),
                })
            );
            Ok(())
        }
        ReconcileCommand::Reject { portal, suggestion } => {
            ws.reject(&portal, &SuggestionId::from(suggestion.as_str()), provider, g.threshold)
                .or_fail("reconcile")?;
            println!("{}", json!({"rejected": suggestion, "portal_id": portal}));
            Ok(())
        }
    }
}

fn serve(g: &Global, a: ServeArgs) -> Result<(), Failure> {
    let clock = g.clock();
    let store = TagStore::open(&g.store, clock.clone()).or_fail("store")?;
    let lexicon = g.lexicon()?;
    let state = tagbridge_server::AppState::new(
        Arc::new(store),
        Workspace::new(&g.corpus),
        Some(Arc::new(lexicon)),
        g.threshold,
        clock,
        g.server_base.clone(),
    );
    let assets = a.assets.or_else(|| {
        let default = PathBuf::from("ui/dist");
        default.is_dir().then_some(default)
    });
    let app = tagbridge_server::router(Arc::new(state), assets);
    let rt = tokio::runtime::Runtime::new().or_fail("runtime")?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .map_err(|e| format!("{}: {e}", a.bind))
            .or_fail("bind")?;
        let addr = listener.local_addr().or_fail("bind")?;
        eprintln!("listening on http://{addr}");
        tagbridge_server::serve(listener, app).await.or_fail("serve")
    })
}

fn seed(g: &Global, a: SeedArgs) -> Result<(), Failure> {
    let corpus = g.corpus()?;
    let clock = g.clock();
    let store = TagStore::open(&g.store, clock.clone()).or_fail("store")?;
    let lexicon = g.lexicon()?;
    let lookup = g.lookup();
    let params = SeedParams {
        top_n: a.top as usize,
        create_n: a.create as usize,
        require_meaning: a.require_meaning,
        related_threshold: a.related_threshold,
    };
    let report =
        seed_from_corpus(&corpus, lookup.as_ref(), &lexicon, &params, &store, clock.as_ref()).or_fail("seed")?;
    let text = report.to_json();
    if let Some(p) = &a.report {
        write_file(p, &format!("{text}\n"))?;
    }
    println!("{text}");
    Ok(())
}

fn export(g: &Global, a: ExportArgs) -> Result<(), Failure> {
    let store = TagStore::open(&g.store, g.clock()).or_fail("store")?;
    let corpus = g.corpus()?;
    let ctx = RdfContext::new(&g.server_base, corpus.base_urls());
    let tags = store.all();
    write_file(&a.out, &export_turtle(&tags, &ctx))?;
    if let Some(p) = &a.dataset_links {
        write_file(p, &export_dataset_links(&tags, &corpus, &ctx))?;
    }
    Ok(())
}
