//! Combined Synchronization Index: pair, user and network levels.
//!
//! A pair's score combines its per-action counts, corrects for the pair being
//! counted once per action type, and scales by the number of action types `k`.
//! A user's score is the sum of its pair scores, each weighted by the pair's total
//! synchrony count. The network score is the mean user score over synchronizing
//! users. All sums run in lexicographic pair/user order so results are bit-stable.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ActionType;
use crate::synchrony::{PairSyncCounts, UserPair};

#[derive(Debug, Error)]
pub enum CsiError {
    #[error("no synchronizing users: the network index is undefined")]
    EmptyNetwork,
    #[error("pair {0} has no synchrony counts")]
    UnknownPair(UserPair),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// How per-action counts are combined into a pair score, with `Σ` the summed
/// normalized counts and `k` the number of synchronized action types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairFormula {
    /// `k · (Σ − (k − 1))`: a single synchrony on one action scores one point.
    #[default]
    Anchored,
    /// `k · (Σ − k)`
    Prose,
    /// `Σ − k²`
    Literal,
}

impl PairFormula {
    pub fn as_str(self) -> &'static str {
        match self {
            PairFormula::Anchored => "anchored",
            PairFormula::Prose => "prose",
            PairFormula::Literal => "literal",
        }
    }

    pub fn evaluate(self, sum: f64, k: usize) -> f64 {
        let k = k as f64;
        match self {
            PairFormula::Anchored => k * (sum - (k - 1.0)),
            PairFormula::Prose => k * (sum - k),
            PairFormula::Literal => sum - k * k,
        }
    }
}

impl FromStr for PairFormula {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anchored" => Ok(PairFormula::Anchored),
            "prose" => Ok(PairFormula::Prose),
            "literal" => Ok(PairFormula::Literal),
            other => Err(format!("unknown pair formula `{other}`")),
        }
    }
}

impl fmt::Display for PairFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Divide each count by the largest count of its action type.
    PerActionMax,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PerActionMax => "per_action_max",
        }
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Normalization::None),
            "per_action_max" => Ok(Normalization::PerActionMax),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CsiConfig {
    pub pair_formula: PairFormula,
    pub normalization: Normalization,
}

/// Normalized per-action counts ñ(u,v,a); zero where S(u,v,a) = 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalizedCounts {
    pairs: BTreeMap<UserPair, [f64; 3]>,
}

impl NormalizedCounts {
    pub fn get(&self, pair: &UserPair, action: ActionType) -> Option<f64> {
        self.pairs.get(pair).map(|v| v[action.index()])
    }

    pub fn values(&self, pair: &UserPair) -> Option<&[f64; 3]> {
        self.pairs.get(pair)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UserPair, &[f64; 3])> {
        self.pairs.iter()
    }
}

pub fn normalize_counts(counts: &PairSyncCounts, strategy: Normalization) -> NormalizedCounts {
    let mut max = [0u64; 3];
    if strategy == Normalization::PerActionMax {
        for (_, c) in counts.iter() {
            for a in ActionType::ALL {
                max[a.index()] = max[a.index()].max(c.get(a));
            }
        }
    }
    let pairs = counts
        .iter()
        .map(|(pair, c)| {
            let mut v = [0.0; 3];
            for (a, n) in c.active() {
                v[a.index()] = match strategy {
                    Normalization::None => n as f64,
                    Normalization::PerActionMax => n as f64 / max[a.index()] as f64,
                };
            }
            (pair.clone(), v)
        })
        .collect();
    NormalizedCounts { pairs }
}

/// CSI-UserPair for one pair. Action types with ñ = 0 do not count toward `k`.
pub fn csi_userpair(normalized: &NormalizedCounts, pair: &UserPair, formula: PairFormula) -> Result<f64, CsiError> {
    let values = normalized.values(pair).ok_or_else(|| CsiError::UnknownPair(pair.clone()))?;
    let k = values.iter().filter(|&&x| x > 0.0).count();
    if k == 0 {
        return Err(CsiError::UnknownPair(pair.clone()));
    }
    let sum: f64 = values.iter().sum();
    Ok(formula.evaluate(sum, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub num_action_types: usize,
    pub s_total: u64,
    pub csi_userpair: f64,
}

pub fn pair_scores(counts: &PairSyncCounts, config: &CsiConfig) -> BTreeMap<UserPair, PairScore> {
    let normalized = normalize_counts(counts, config.normalization);
    counts
        .iter()
        .map(|(pair, c)| {
            let score = csi_userpair(&normalized, pair, config.pair_formula)
                .expect("every stored pair has at least one nonzero count");
            (
                pair.clone(),
                PairScore { num_action_types: c.num_action_types(), s_total: c.total(), csi_userpair: score },
            )
        })
        .collect()
}

/// CSI-User(u) = Σ over u's pairs of S_total(u,v) · CSI-UserPair(u,v).
pub fn csi_user(pair_scores: &BTreeMap<UserPair, PairScore>) -> BTreeMap<String, f64> {
    let mut users: BTreeMap<String, f64> = BTreeMap::new();
    for (pair, score) in pair_scores {
        let term = score.s_total as f64 * score.csi_userpair;
        for user in pair.members() {
            *users.entry(user.to_string()).or_default() += term;
        }
    }
    users
}

/// Mean CSI-User over synchronizing users.
pub fn csi_network(user_scores: &BTreeMap<String, f64>) -> Result<f64, CsiError> {
    if user_scores.is_empty() {
        return Err(CsiError::EmptyNetwork);
    }
    let sum: f64 = user_scores.values().sum();
    Ok(sum / user_scores.len() as f64)
}

/// The full pipeline restricted to the pairs of one action type.
pub fn csi_single_action(counts: &PairSyncCounts, action: ActionType, config: &CsiConfig) -> Result<f64, CsiError> {
    let restricted = counts.restrict_to(action);
    csi_network(&csi_user(&pair_scores(&restricted, config)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiTables {
    pub config: CsiConfig,
    pub pair_scores: BTreeMap<UserPair, PairScore>,
    pub user_scores: BTreeMap<String, f64>,
    /// `None` when nothing synchronizes.
    pub network_score: Option<f64>,
    /// Only action types with at least one synchronizing pair appear.
    pub per_action_network: BTreeMap<ActionType, f64>,
}

impl CsiTables {
    pub fn compute(counts: &PairSyncCounts, config: &CsiConfig) -> Self {
        let pair_scores = pair_scores(counts, config);
        let user_scores = csi_user(&pair_scores);
        let network_score = csi_network(&user_scores).ok();
        let per_action_network = ActionType::ALL
            .into_iter()
            .filter_map(|a| csi_single_action(counts, a, config).ok().map(|v| (a, v)))
            .collect();
        CsiTables { config: *config, pair_scores, user_scores, network_score, per_action_network }
    }

    pub fn summary(&self) -> NetworkSummary {
        NetworkSummary {
            csi_network: self.network_score,
            per_action: PerActionNetwork {
                hashtag: self.per_action_network.get(&ActionType::Hashtag).copied(),
                url: self.per_action_network.get(&ActionType::Url).copied(),
                mention: self.per_action_network.get(&ActionType::Mention).copied(),
            },
            formula: self.config.pair_formula,
            normalization: self.config.normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerActionNetwork {
    pub hashtag: Option<f64>,
    pub url: Option<f64>,
    pub mention: Option<f64>,
}

/// Network-level summary, serialized at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub csi_network: Option<f64>,
    pub per_action: PerActionNetwork,
    pub formula: PairFormula,
    pub normalization: Normalization,
}

/// `user_u,user_v,num_action_types,s_total,csi_userpair`
pub fn write_pair_scores<W: Write>(scores: &BTreeMap<UserPair, PairScore>, out: W) -> Result<(), CsiError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_u", "user_v", "num_action_types", "s_total", "csi_userpair"])?;
    for (pair, s) in scores {
        w.write_record([
            pair.first(),
            pair.second(),
            &s.num_action_types.to_string(),
            &s.s_total.to_string(),
            &s.csi_userpair.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_pair_scores<R: Read>(input: R) -> Result<BTreeMap<UserPair, PairScore>, CsiError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |reason: String| CsiError::BadRow { row: i + 2, reason };
        if row.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", row.len())));
        }
        let pair = UserPair::new(&row[0], &row[1]).ok_or_else(|| bad("self-pair".into()))?;
        let score = PairScore {
            num_action_types: row[2].parse().map_err(|e| bad(format!("num_action_types: {e}")))?,
            s_total: row[3].parse().map_err(|e| bad(format!("s_total: {e}")))?,
            csi_userpair: row[4].parse().map_err(|e| bad(format!("csi_userpair: {e}")))?,
        };
        out.insert(pair, score);
    }
    Ok(out)
}

/// `user_id,csi_user`
pub fn write_user_scores<W: Write>(scores: &BTreeMap<String, f64>, out: W) -> Result<(), CsiError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "csi_user"])?;
    for (user, s) in scores {
        w.write_record([user.as_str(), &s.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_user_scores<R: Read>(input: R) -> Result<BTreeMap<String, f64>, CsiError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |reason: String| CsiError::BadRow { row: i + 2, reason };
        if row.len() != 2 {
            return Err(bad(format!("expected 2 fields, got {}", row.len())));
        }
        let score: f64 = row[1].parse().map_err(|e| bad(format!("csi_user: {e}")))?;
        out.insert(row[0].to_string(), score);
    }
    Ok(out)
}
