//! Bot-likelihood overlay: classify users from externally supplied scores and
//! summarize synchronization and centrality by bot/human class.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csi::PairScore;
use crate::graph::{induced_subgraph, SyncGraph};
use crate::metrics::{self, CentralityReport};
use crate::synchrony::UserPair;

pub const DEFAULT_BOT_THRESHOLD: f64 = 0.70;

#[derive(Debug, Error)]
pub enum BotError {
    #[error("bot score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("bot threshold {0} is not a finite number")]
    BadThreshold(f64),
    #[error("bot score file must start with a `user_id,score` header")]
    MissingHeader,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserClass {
    Bot,
    Human,
    Unknown,
}

impl UserClass {
    pub fn as_str(self) -> &'static str {
        match self {
            UserClass::Bot => "bot",
            UserClass::Human => "human",
            UserClass::Unknown => "unknown",
        }
    }
}

impl fmt::Display for UserClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairClass {
    #[serde(rename = "bot-bot")]
    BotBot,
    #[serde(rename = "bot-human")]
    BotHuman,
    #[serde(rename = "human-human")]
    HumanHuman,
    #[serde(rename = "unknown-involved")]
    UnknownInvolved,
}

impl PairClass {
    pub fn of(a: UserClass, b: UserClass) -> Self {
        match (a, b) {
            (UserClass::Unknown, _) | (_, UserClass::Unknown) => PairClass::UnknownInvolved,
            (UserClass::Bot, UserClass::Bot) => PairClass::BotBot,
            (UserClass::Human, UserClass::Human) => PairClass::HumanHuman,
            _ => PairClass::BotHuman,
        }
    }
}

/// "Above the threshold" is strict: a score equal to the threshold is human.
pub fn classify_user(score: f64, threshold: f64) -> Result<UserClass, BotError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(BotError::ScoreOutOfRange(score));
    }
    Ok(if score > threshold { UserClass::Bot } else { UserClass::Human })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BotScoreTable {
    scores: BTreeMap<String, f64>,
    threshold: f64,
}

#[derive(Debug, Clone)]
pub struct BotScoreLoad {
    pub table: BotScoreTable,
    /// (1-based record number, reason) for rows that were skipped.
    pub rejected: Vec<(usize, String)>,
}

impl BotScoreTable {
    pub fn from_scores<I, S>(scores: I, threshold: f64) -> Result<Self, BotError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        if !threshold.is_finite() {
            return Err(BotError::BadThreshold(threshold));
        }
        let mut map = BTreeMap::new();
        for (user, score) in scores {
            classify_user(score, threshold)?;
            map.insert(user.into(), score);
        }
        Ok(BotScoreTable { scores: map, threshold })
    }

    /// Reads a `user_id,score` CSV. Rows with unparseable or out-of-range scores are skipped and reported.
    pub fn read_csv<R: Read>(input: R, threshold: f64) -> Result<BotScoreLoad, BotError> {
        if !threshold.is_finite() {
            return Err(BotError::BadThreshold(threshold));
        }
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let user_col = headers.iter().position(|h| h.trim() == "user_id").ok_or(BotError::MissingHeader)?;
        let score_col = headers.iter().position(|h| h.trim() == "score").ok_or(BotError::MissingHeader)?;
        let mut scores = BTreeMap::new();
        let mut rejected = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    rejected.push((line, e.to_string()));
                    continue;
                }
            };
            let user = row.get(user_col).unwrap_or("").trim();
            if user.is_empty() {
                rejected.push((line, "missing user_id".into()));
                continue;
            }
            match row.get(score_col).unwrap_or("").trim().parse::<f64>() {
                Ok(s) if (0.0..=1.0).contains(&s) => {
                    scores.insert(user.to_string(), s);
                }
                Ok(s) => rejected.push((line, format!("score {s} outside [0, 1]"))),
                Err(e) => rejected.push((line, format!("score: {e}"))),
            }
        }
        if !rejected.is_empty() {
            log::warn!("bot scores: skipped {} rows", rejected.len());
        }
        Ok(BotScoreLoad { table: BotScoreTable { scores, threshold }, rejected })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn score(&self, user: &str) -> Option<f64> {
        self.scores.get(user).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn class_of(&self, user: &str) -> UserClass {
        match self.scores.get(user) {
            Some(&s) if s > self.threshold => UserClass::Bot,
            Some(_) => UserClass::Human,
            None => UserClass::Unknown,
        }
    }

    pub fn pair_class(&self, pair: &UserPair) -> PairClass {
        PairClass::of(self.class_of(pair.first()), self.class_of(pair.second()))
    }

    /// Same scores under a different threshold.
    pub fn with_threshold(&self, threshold: f64) -> BotScoreTable {
        BotScoreTable { scores: self.scores.clone(), threshold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMean {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairClassAverages {
    /// Mean CSI-UserPair per pair class; classes without pairs are absent.
    pub means: BTreeMap<PairClass, ClassMean>,
}

impl PairClassAverages {
    pub fn total_pairs(&self) -> usize {
        self.means.values().map(|m| m.count).sum()
    }
}

pub fn average_csi_by_pair_class(
    pair_scores: &BTreeMap<UserPair, PairScore>,
    bots: &BotScoreTable,
) -> PairClassAverages {
    let mut acc: BTreeMap<PairClass, (f64, usize)> = BTreeMap::new();
    for (pair, score) in pair_scores {
        let e = acc.entry(bots.pair_class(pair)).or_default();
        e.0 += score.csi_userpair;
        e.1 += 1;
    }
    let means = acc.into_iter().map(|(c, (sum, n))| (c, ClassMean { mean: sum / n as f64, count: n })).collect();
    PairClassAverages { means }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub count: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanSd { mean, sd: var.sqrt(), count: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserClassAverages {
    /// Bot and human entries only; a class with no users is absent.
    pub stats: BTreeMap<UserClass, MeanSd>,
    pub unknown: usize,
}

pub fn average_csi_by_user_class(user_scores: &BTreeMap<String, f64>, bots: &BotScoreTable) -> UserClassAverages {
    let mut by_class: BTreeMap<UserClass, Vec<f64>> = BTreeMap::new();
    let mut unknown = 0;
    for (user, &score) in user_scores {
        match bots.class_of(user) {
            UserClass::Unknown => unknown += 1,
            class => by_class.entry(class).or_default().push(score),
        }
    }
    let stats = by_class.into_iter().filter_map(|(c, v)| MeanSd::of(&v).map(|m| (c, m))).collect();
    UserClassAverages { stats, unknown }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralityMeans {
    pub total_degree: f64,
    pub betweenness: f64,
    pub eigenvector: f64,
    pub count: usize,
}

/// Per-class mean centralities over `participants` (the synchronizing users)
/// that appear in the centrality report. Unknown-class users are skipped.
pub fn centrality_by_class<'a, I>(
    centrality: &CentralityReport,
    bots: &BotScoreTable,
    participants: I,
) -> BTreeMap<UserClass, CentralityMeans>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut acc: BTreeMap<UserClass, [f64; 3]> = BTreeMap::new();
    let mut counts: BTreeMap<UserClass, usize> = BTreeMap::new();
    let users: BTreeSet<&str> = participants.into_iter().collect();
    for user in users {
        let class = bots.class_of(user);
        if class == UserClass::Unknown {
            continue;
        }
        let Some(values) = centrality.get(user) else { continue };
        let e = acc.entry(class).or_default();
        e[0] += values.total_degree;
        e[1] += values.betweenness;
        e[2] += values.eigenvector;
        *counts.entry(class).or_default() += 1;
    }
    acc.into_iter()
        .map(|(c, s)| {
            let n = counts[&c];
            let d = n as f64;
            (c, CentralityMeans { total_degree: s[0] / d, betweenness: s[1] / d, eigenvector: s[2] / d, count: n })
        })
        .collect()
}

/// Transitivity of each class's induced subgraph; classes with no nodes are absent.
pub fn clustering_by_class(sync_graph: &SyncGraph, bots: &BotScoreTable) -> BTreeMap<UserClass, f64> {
    let mut g = sync_graph.clone();
    g.set_classes(bots);
    [UserClass::Bot, UserClass::Human]
        .into_iter()
        .filter_map(|class| {
            let sub = induced_subgraph(&g, class);
            (!sub.is_empty()).then(|| (class, metrics::transitivity(&sub)))
        })
        .collect()
}
