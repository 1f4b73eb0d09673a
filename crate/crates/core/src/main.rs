use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use csi_core::bots::DEFAULT_BOT_THRESHOLD;
use csi_core::csi::{self, CsiConfig, CsiTables, Normalization, PairFormula};
use csi_core::graph;
use csi_core::ingest;
use csi_core::metrics::{self, HierarchyOrientation};
use csi_core::report::{self, create, open, PipelineConfig, PipelineError, PipelineInputs};
use csi_core::simulate::{self, SimConfig};
use csi_core::synchrony::{self, PairSyncCounts, SyncWindowConfig};

#[derive(Parser)]
#[command(name = "csi", version, about = "Synchronized-behavior detection and CSI scoring for event data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Args, Clone)]
struct Options {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true, default_value_t = synchrony::DEFAULT_WINDOW_SECONDS)]
    window: u64,
    #[arg(long, global = true, default_value_t = PairFormula::Anchored)]
    pair_formula: PairFormula,
    #[arg(long, global = true, default_value_t = Normalization::None)]
    normalization: Normalization,
    #[arg(long, global = true, default_value_t = DEFAULT_BOT_THRESHOLD)]
    bot_threshold: f64,
    #[arg(long, global = true, default_value_t = 5)]
    min_partners: usize,
    /// Keep only posts with this language tag; empty keeps all.
    #[arg(long, global = true, default_value = "")]
    lang: String,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = HierarchyOrientation::CsiOrder)]
    hierarchy: HierarchyOrientation,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize events; writes events.jsonl and actions.csv.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        interactions: Option<PathBuf>,
    },
    /// Count synchronized actions per user pair; writes pair_counts.csv.
    Detect {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        interactions: Option<PathBuf>,
    },
    /// Compute CSI scores from pair counts.
    Score {
        #[arg(long)]
        counts: PathBuf,
    },
    /// Build the synchronization graph from pair scores.
    Graph {
        #[arg(long)]
        pair_scores: PathBuf,
        #[arg(long)]
        bots: Option<PathBuf>,
    },
    /// Structure metrics of a synchronization graph edge list.
    Metrics {
        #[arg(long)]
        edges: PathBuf,
        /// Needed for the csi_order hierarchy orientation.
        #[arg(long)]
        user_scores: Option<PathBuf>,
    },
    /// Run the whole pipeline and write the event report.
    Report {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        interactions: Option<PathBuf>,
        #[arg(long)]
        bots: Option<PathBuf>,
    },
    /// Generate synthetic events with planted coordination.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rank events by CSI-Network from report files.
    Compare {
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
    },
}

impl Options {
    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window_seconds: self.window,
            csi: CsiConfig { pair_formula: self.pair_formula, normalization: self.normalization },
            bot_threshold: self.bot_threshold,
            min_partners: self.min_partners,
            lang: self.lang.clone(),
            seed: self.seed,
            hierarchy_orientation: self.hierarchy,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("--window must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bot_threshold) {
            return Err("--bot-threshold must lie in [0, 1]".into());
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = cli.opts.validate() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command, &cli.opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), PipelineError> {
    report::write_json(value, std::io::stdout().lock())
}

fn filtered_actions(parsed: &ingest::ParseOutcome, lang: &str) -> Vec<ingest::ActionRecord> {
    let originals = ingest::filter_originals(parsed.dataset.clone());
    ingest::extract_actions(&ingest::filter_language(originals, lang).dataset)
}

fn run(command: Command, opts: &Options) -> Result<(), PipelineError> {
    let out = opts.out.as_path();
    match command {
        Command::Ingest { events, interactions } => {
            let parsed = report::load_events(&events, interactions.as_deref())?;
            std::fs::create_dir_all(out)?;
            ingest::write_jsonl(&parsed.dataset, create(&out.join("events.jsonl"))?)?;
            let mut w = csv::Writer::from_writer(create(&out.join("actions.csv"))?);
            for a in filtered_actions(&parsed, &opts.lang) {
                w.serialize(a)?;
            }
            w.flush()?;
            for m in &parsed.malformed {
                log::warn!("record {}: {}", m.line, m.reason);
            }
            print_json(&serde_json::json!({
                "records": parsed.total_records,
                "malformed": parsed.malformed_count(),
                "posts": parsed.dataset.posts.len(),
                "interactions": parsed.dataset.interactions.len(),
            }))
        }
        Command::Detect { events, interactions } => {
            let parsed = report::load_events(&events, interactions.as_deref())?;
            let counts =
                synchrony::detect(&filtered_actions(&parsed, &opts.lang), &SyncWindowConfig::new(opts.window)?);
            std::fs::create_dir_all(out)?;
            counts.write_csv(create(&out.join("pair_counts.csv"))?)?;
            print_json(&synchrony::action_type_participation(&counts))
        }
        Command::Score { counts } => {
            let counts = PairSyncCounts::read_csv(open(&counts)?)?;
            let tables = CsiTables::compute(&counts, &opts.pipeline().csi);
            std::fs::create_dir_all(out)?;
            csi::write_pair_scores(&tables.pair_scores, create(&out.join("pair_scores.csv"))?)?;
            csi::write_user_scores(&tables.user_scores, create(&out.join("user_scores.csv"))?)?;
            report::write_json(&tables.summary(), create(&out.join("network.json"))?)?;
            print_json(&tables.summary())
        }
        Command::Graph { pair_scores, bots } => {
            let scores = csi::read_pair_scores(open(&pair_scores)?)?;
            let mut g = graph::build_sync_graph(&scores);
            g.set_csi_user(&csi::csi_user(&scores));
            if let Some(path) = bots {
                g.set_classes(&report::load_bots(&path, opts.bot_threshold)?);
            }
            let pruned = graph::prune_by_partner_count(&g, opts.min_partners);
            std::fs::create_dir_all(out)?;
            graph::write_graphml(&g, create(&out.join("sync_graph.graphml"))?)?;
            graph::write_graphml(&pruned, create(&out.join("sync_graph_pruned.graphml"))?)?;
            graph::write_edge_csv(&g, create(&out.join("sync_edges.csv"))?)?;
            graph::write_dot(&g, create(&out.join("sync_graph.dot"))?)?;
            print_json(&serde_json::json!({
                "nodes": g.node_count(),
                "edges": g.edge_count(),
                "pruned_nodes": pruned.node_count(),
                "pruned_edges": pruned.edge_count(),
            }))
        }
        Command::Metrics { edges, user_scores } => {
            let g = graph::read_edge_csv(open(&edges)?)?;
            let csi_user = match user_scores {
                Some(p) => csi::read_user_scores(open(&p)?)?,
                None if opts.hierarchy == HierarchyOrientation::CsiOrder => {
                    return Err(PipelineError::Config("--user-scores is required for csi_order hierarchy".into()));
                }
                None => Default::default(),
            };
            let structure = metrics::structure_report(&g, &csi_user, opts.hierarchy, opts.seed);
            std::fs::create_dir_all(out)?;
            report::write_json(&structure, create(&out.join("metrics.json"))?)?;
            print_json(&structure)
        }
        Command::Report { events, interactions, bots } => {
            let inputs = PipelineInputs { events, interactions, bots };
            let report = report::run_pipeline(&inputs, &opts.pipeline(), out)?;
            let text = match opts.format {
                Format::Json => report::report_json(&report)?,
                Format::Csv => report::report_csv(&report)?,
            };
            print!("{text}");
            Ok(())
        }
        Command::Simulate { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|source| PipelineError::Open { path: config.clone(), source })?;
            let cfg = SimConfig::from_toml(&text)?;
            let (dataset, truth) = simulate::generate(&cfg)?;
            std::fs::create_dir_all(out)?;
            ingest::write_jsonl(&dataset, create(&out.join("events.jsonl"))?)?;
            truth.write_csv(create(&out.join("ground_truth.csv"))?)?;
            truth.write_bot_scores(create(&out.join("bots.csv"))?)?;
            print_json(&serde_json::json!({
                "posts": dataset.posts.len(),
                "interactions": dataset.interactions.len(),
                "planted_pairs": truth.pairs.len(),
            }))
        }
        Command::Compare { reports } => {
            let ranking = report::compare_files(&reports)?;
            match opts.format {
                Format::Json => print_json(&ranking),
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
                    for e in &ranking.events {
                        w.serialize(e)?;
                    }
                    w.flush()?;
                    Ok(())
                }
            }
        }
    }
}
