//! End-to-end pipeline: detect → CSI → graphs → metrics → bot overlay, and the
//! event-level report that collects the results.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bots::{
    self, BotError, BotScoreTable, CentralityMeans, ClassMean, MeanSd, PairClass, UserClass, DEFAULT_BOT_THRESHOLD,
};
use crate::csi::{self, CsiConfig, CsiError, CsiTables};
use crate::graph::{self, AllCommGraph, GraphError, SyncGraph};
use crate::ingest::{self, ActionRecord, ActionType, EventDataset, IngestError, InputFormat, ParseOutcome};
use crate::metrics::{self, ActionTypeCentrality, CentralityReport, HierarchyOrientation, LevelStats, StructureReport};
use crate::synchrony::{self, PairSyncCounts, Participation, SyncError, SyncWindowConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Csi(#[from] CsiError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bots(#[from] BotError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] crate::simulate::SimError),
    #[error("malformed report {path}: {reason}")]
    MalformedReport { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(|source| PipelineError::Open { path: path.to_path_buf(), source })
}

pub fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path).map(BufWriter::new).map_err(|source| PipelineError::Open { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub window_seconds: u64,
    pub csi: CsiConfig,
    pub bot_threshold: f64,
    pub min_partners: usize,
    /// Empty disables the language filter.
    pub lang: String,
    pub seed: u64,
    pub hierarchy_orientation: HierarchyOrientation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_seconds: synchrony::DEFAULT_WINDOW_SECONDS,
            csi: CsiConfig::default(),
            bot_threshold: DEFAULT_BOT_THRESHOLD,
            min_partners: 5,
            lang: String::new(),
            seed: 0,
            hierarchy_orientation: HierarchyOrientation::CsiOrder,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineInputs {
    pub events: PathBuf,
    pub interactions: Option<PathBuf>,
    pub bots: Option<PathBuf>,
}

/// Event label derived from a file name: `data/capitol.jsonl` → `capitol`.
pub fn label_from_path(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("event").to_string()
}

/// Parses the events file and, if given, a separate interactions file.
pub fn load_events(events: &Path, interactions: Option<&Path>) -> Result<ParseOutcome, PipelineError> {
    let label = label_from_path(events);
    let mut outcome = ingest::parse_events(open(events)?, InputFormat::from_path(events), &label)?;
    if let Some(path) = interactions {
        let more = ingest::parse_events(open(path)?, InputFormat::from_path(path), &label)?;
        outcome.merge(more);
    }
    Ok(outcome)
}

pub fn load_bots(path: &Path, threshold: f64) -> Result<BotScoreTable, PipelineError> {
    let load = BotScoreTable::read_csv(open(path)?, threshold)?;
    Ok(load.table)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub records: usize,
    pub malformed_records: usize,
    pub posts: usize,
    pub original_posts: usize,
    pub posts_after_language_filter: usize,
    pub untagged_language: usize,
    pub interactions: usize,
    pub actions: usize,
    pub synchronizing_pairs: usize,
    pub synchronizing_users: usize,
}

/// Every intermediate table of one pipeline run.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub label: String,
    pub config: PipelineConfig,
    pub counts: DatasetCounts,
    pub actions: Vec<ActionRecord>,
    pub pair_counts: PairSyncCounts,
    pub tables: CsiTables,
    pub participation: Participation,
    pub sync_graph: SyncGraph,
    pub pruned_graph: SyncGraph,
    pub allcomm_graph: AllCommGraph,
    pub centrality: Option<CentralityReport>,
    pub action_type_centrality: Option<ActionTypeCentrality>,
    pub structure: StructureReport,
    pub bots: Option<BotScoreTable>,
}

/// Runs every stage on an already parsed dataset.
pub fn analyze(
    parsed: &ParseOutcome,
    bots: Option<BotScoreTable>,
    config: &PipelineConfig,
) -> Result<Analysis, PipelineError> {
    let window = SyncWindowConfig::new(config.window_seconds)?;
    let dataset: &EventDataset = &parsed.dataset;
    let mut counts = DatasetCounts {
        records: parsed.total_records,
        malformed_records: parsed.malformed_count(),
        posts: dataset.posts.len(),
        interactions: dataset.interactions.len(),
        ..Default::default()
    };

    let originals = ingest::filter_originals(dataset.clone());
    counts.original_posts = originals.posts.len();
    let filtered = ingest::filter_language(originals, &config.lang);
    counts.posts_after_language_filter = filtered.dataset.posts.len();
    counts.untagged_language = filtered.untagged;

    let actions = ingest::extract_actions(&filtered.dataset);
    counts.actions = actions.len();
    let pair_counts = synchrony::detect(&actions, &window);
    let tables = CsiTables::compute(&pair_counts, &config.csi);
    counts.synchronizing_pairs = tables.pair_scores.len();
    counts.synchronizing_users = tables.user_scores.len();
    let participation = synchrony::action_type_participation(&pair_counts);

    let mut sync_graph = graph::build_sync_graph(&tables.pair_scores);
    sync_graph.set_csi_user(&tables.user_scores);
    if let Some(b) = &bots {
        sync_graph.set_classes(b);
    }
    let pruned_graph = graph::prune_by_partner_count(&sync_graph, config.min_partners);
    let structure =
        metrics::structure_report(&sync_graph, &tables.user_scores, config.hierarchy_orientation, config.seed);

    let allcomm_graph =
        graph::build_allcomm_graph(&dataset.interactions, dataset.posts.iter().map(|p| p.user_id.as_str()));
    let centrality = match metrics::centrality_report(&allcomm_graph) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("interaction graph centralities unavailable: {e}");
            None
        }
    };
    let action_type_centrality =
        centrality.as_ref().map(|c| metrics::centrality_by_action_type_count(c, &participation));

    Ok(Analysis {
        label: dataset.label.clone(),
        config: config.clone(),
        counts,
        actions,
        pair_counts,
        tables,
        participation,
        sync_graph,
        pruned_graph,
        allcomm_graph,
        centrality,
        action_type_centrality,
        structure,
        bots,
    })
}

/// Loads inputs, runs every stage, and writes the report plus all side outputs into `out_dir`.
pub fn run_pipeline(
    inputs: &PipelineInputs,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<EventReport, PipelineError> {
    let parsed = load_events(&inputs.events, inputs.interactions.as_deref())?;
    let bots = inputs.bots.as_deref().map(|p| load_bots(p, config.bot_threshold)).transpose()?;
    let analysis = analyze(&parsed, bots, config)?;
    analysis.write_artifacts(out_dir)?;
    let report = analysis.report();
    write_report_json(&report, create(&out_dir.join("report.json"))?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSize {
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSection {
    pub sync_graph: GraphSize,
    pub density: Option<f64>,
    pub modularity: Option<f64>,
    pub partition_method: String,
    pub communities: usize,
    pub hierarchy: f64,
    pub hierarchy_orientation: HierarchyOrientation,
    pub transitivity: f64,
    pub avg_local_clustering: f64,
    /// Transitivity of each class's induced subgraph; absent without bot scores.
    pub clustering_by_class: Option<BTreeMap<UserClass, f64>>,
    pub pruned_graph: GraphSize,
    pub min_partners: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub window_seconds: u64,
    pub pair_formula: csi::PairFormula,
    pub normalization: csi::Normalization,
    pub bot_threshold: f64,
    pub min_partners: usize,
    pub lang: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub event_label: String,
    pub config: ReportConfig,
    pub counts: DatasetCounts,
    /// Share of synchronizing users by number of action types (keys "1", "2", "3").
    pub action_type_participation: BTreeMap<usize, f64>,
    pub csi_network_combined: Option<f64>,
    /// Set when `csi_network_combined` is absent.
    pub csi_network_reason: Option<String>,
    pub csi_network_per_action: BTreeMap<ActionType, f64>,
    pub avg_csi_userpair_by_pair_class: Option<BTreeMap<PairClass, ClassMean>>,
    pub avg_csi_user_by_user_class: Option<BTreeMap<UserClass, MeanSd>>,
    pub unscored_synchronizing_users: Option<usize>,
    pub centrality_by_class: Option<BTreeMap<UserClass, CentralityMeans>>,
    /// Interaction-graph centrality of synchronizing users by number of action types.
    pub centrality_by_action_type_count: Option<BTreeMap<usize, LevelStats>>,
    pub structure: StructureSection,
    /// Class with the higher mean CSI-User; absent on a tie or without bot scores.
    pub dominant_sync_class: Option<UserClass>,
    /// Explains omitted class sections.
    pub notices: Vec<String>,
}

impl Analysis {
    pub fn report(&self) -> EventReport {
        let mut notices = Vec::new();
        let csi_network_reason = match self.tables.network_score {
            Some(_) => None,
            None => Some("no synchrony: no pair of users shared an artifact within one window".to_string()),
        };

        let (pair_class, user_class, unscored, centrality_by_class, clustering, dominant) = match &self.bots {
            Some(b) => {
                let pc = bots::average_csi_by_pair_class(&self.tables.pair_scores, b).means;
                let uc = bots::average_csi_by_user_class(&self.tables.user_scores, b);
                let cc = self
                    .centrality
                    .as_ref()
                    .map(|c| bots::centrality_by_class(c, b, self.tables.user_scores.keys().map(String::as_str)));
                if cc.is_none() {
                    notices.push("centrality_by_class omitted: interaction graph has fewer than two users".into());
                }
                let cl = bots::clustering_by_class(&self.sync_graph, b);
                let dom = dominant_class(&uc.stats);
                (Some(pc), Some(uc.stats), Some(uc.unknown), cc, Some(cl), dom)
            }
            None => {
                notices.push("bot scores not provided: class sections omitted".into());
                (None, None, None, None, None, None)
            }
        };

        EventReport {
            event_label: self.label.clone(),
            config: ReportConfig {
                window_seconds: self.config.window_seconds,
                pair_formula: self.config.csi.pair_formula,
                normalization: self.config.csi.normalization,
                bot_threshold: self.config.bot_threshold,
                min_partners: self.config.min_partners,
                lang: self.config.lang.clone(),
                seed: self.config.seed,
            },
            counts: self.counts,
            action_type_participation: self.participation.fractions.clone(),
            csi_network_combined: self.tables.network_score,
            csi_network_reason,
            csi_network_per_action: self.tables.per_action_network.clone(),
            avg_csi_userpair_by_pair_class: pair_class,
            avg_csi_user_by_user_class: user_class,
            unscored_synchronizing_users: unscored,
            centrality_by_class,
            centrality_by_action_type_count: self.action_type_centrality.as_ref().map(|a| a.levels.clone()),
            structure: StructureSection {
                sync_graph: GraphSize { nodes: self.sync_graph.node_count(), edges: self.sync_graph.edge_count() },
                density: self.structure.density,
                modularity: self.structure.modularity,
                partition_method: self.structure.partition_method.clone(),
                communities: self.structure.communities,
                hierarchy: self.structure.hierarchy,
                hierarchy_orientation: self.structure.hierarchy_orientation,
                transitivity: self.structure.transitivity,
                avg_local_clustering: self.structure.avg_local_clustering,
                clustering_by_class: clustering,
                pruned_graph: GraphSize {
                    nodes: self.pruned_graph.node_count(),
                    edges: self.pruned_graph.edge_count(),
                },
                min_partners: self.config.min_partners,
            },
            dominant_sync_class: dominant,
            notices,
        }
    }

    /// Writes the intermediate tables, graphs and metrics next to the report.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        self.pair_counts.write_csv(create(&dir.join("pair_counts.csv"))?)?;
        csi::write_pair_scores(&self.tables.pair_scores, create(&dir.join("pair_scores.csv"))?)?;
        csi::write_user_scores(&self.tables.user_scores, create(&dir.join("user_scores.csv"))?)?;
        write_json(&self.tables.summary(), create(&dir.join("network.json"))?)?;
        graph::write_graphml(&self.sync_graph, create(&dir.join("sync_graph.graphml"))?)?;
        graph::write_graphml(&self.pruned_graph, create(&dir.join("sync_graph_pruned.graphml"))?)?;
        graph::write_edge_csv(&self.sync_graph, create(&dir.join("sync_edges.csv"))?)?;
        graph::write_dot(&self.sync_graph, create(&dir.join("sync_graph.dot"))?)?;
        write_json(&self.structure, create(&dir.join("metrics.json"))?)?;
        if let Some(c) = &self.centrality {
            c.write_csv(create(&dir.join("centrality.csv"))?)?;
        }
        if let Some(a) = &self.action_type_centrality {
            a.write_csv(create(&dir.join("centrality_by_action_types.csv"))?)?;
        }
        Ok(())
    }
}

fn dominant_class(stats: &BTreeMap<UserClass, MeanSd>) -> Option<UserClass> {
    match (stats.get(&UserClass::Bot), stats.get(&UserClass::Human)) {
        (Some(b), Some(h)) if b.mean > h.mean => Some(UserClass::Bot),
        (Some(b), Some(h)) if h.mean > b.mean => Some(UserClass::Human),
        (Some(_), None) => Some(UserClass::Bot),
        (None, Some(_)) => Some(UserClass::Human),
        _ => None,
    }
}

/// Pretty JSON at full precision, newline-terminated.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<(), PipelineError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Rounds to six significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Report JSON with every floating-point value rounded to six significant digits.
pub fn report_json(report: &EventReport) -> Result<String, PipelineError> {
    let mut value = serde_json::to_value(report)?;
    round_floats(&mut value);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_report_json<W: Write>(report: &EventReport, mut out: W) -> Result<(), PipelineError> {
    out.write_all(report_json(report)?.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Flat `key,value` rendering of the report's scalar fields.
pub fn report_csv(report: &EventReport) -> Result<String, PipelineError> {
    let mut value = serde_json::to_value(report)?;
    round_floats(&mut value);
    let mut rows = Vec::new();
    flatten("", &value, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEvent {
    pub rank: usize,
    pub event_label: String,
    pub csi_network: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub events: Vec<RankedEvent>,
    /// Reports without a CSI-Network value.
    pub unranked: Vec<String>,
}

#[derive(Deserialize)]
struct ReportHeader {
    event_label: String,
    csi_network_combined: Option<f64>,
}

/// Parses the fields of a report needed for ranking.
pub fn parse_report_header(name: &str, text: &str) -> Result<(String, Option<f64>), PipelineError> {
    let h: ReportHeader = serde_json::from_str(text)
        .map_err(|e| PipelineError::MalformedReport { path: name.to_string(), reason: e.to_string() })?;
    Ok((h.event_label, h.csi_network_combined))
}

/// Orders events by ascending CSI-Network; equal scores fall back to label order.
pub fn compare<I, S>(reports: I) -> Ranking
where
    I: IntoIterator<Item = (S, Option<f64>)>,
    S: Into<String>,
{
    let mut scored = Vec::new();
    let mut unranked = Vec::new();
    for (label, score) in reports {
        match score {
            Some(s) if s.is_finite() => scored.push((label.into(), s)),
            _ => unranked.push(label.into()),
        }
    }
    scored.sort_by(|a: &(String, f64), b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    unranked.sort();
    let events = scored
        .into_iter()
        .enumerate()
        .map(|(i, (event_label, csi_network))| RankedEvent { rank: i + 1, event_label, csi_network })
        .collect();
    Ranking { events, unranked }
}

pub fn compare_files(paths: &[PathBuf]) -> Result<Ranking, PipelineError> {
    let mut entries = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|source| PipelineError::Open { path: p.clone(), source })?;
        entries.push(parse_report_header(&p.display().to_string(), &text)?);
    }
    Ok(compare(entries))
}
