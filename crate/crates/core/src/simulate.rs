//! Synthetic event generator with planted coordinated cohorts.
//!
//! Background users post at Poisson rates and draw artifacts uniformly from large
//! vocabularies. Each cohort posts a shared artifact inside one detection bucket
//! for every active window, so every member pair is guaranteed a synchrony count
//! of at least `windows_active` per action type the cohort uses.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bots::UserClass;
use crate::ingest::{ActionType, EventDataset, InteractionRecord, InteractionType, PostEvent, PostType};
use crate::synchrony::UserPair;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularySizes {
    pub hashtag: u64,
    pub url: u64,
    pub mention: u64,
}

impl Default for VocabularySizes {
    fn default() -> Self {
        VocabularySizes { hashtag: 10_000, url: 10_000, mention: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    pub users: usize,
    /// Mean posts per user per hour.
    pub posts_per_hour: f64,
    /// Share of background users that receive a bot-range score.
    pub bot_fraction: f64,
    /// Probability that a post is a retweet rather than an original.
    pub retweet_probability: f64,
    /// Per-type probability that an original post carries one artifact of that type.
    pub hashtag_probability: f64,
    pub url_probability: f64,
    pub mention_probability: f64,
    /// Probability that an original post also yields a mention/reply/quote interaction.
    pub interaction_probability: f64,
    pub vocabulary: VocabularySizes,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            users: 100,
            posts_per_hour: 0.5,
            bot_fraction: 0.1,
            retweet_probability: 0.2,
            hashtag_probability: 0.8,
            url_probability: 0.4,
            mention_probability: 0.3,
            interaction_probability: 0.3,
            vocabulary: VocabularySizes::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub members: usize,
    pub user_class: UserClass,
    pub action_types: Vec<ActionType>,
    /// Size of the cohort's private artifact pool per action type.
    #[serde(default = "one")]
    pub artifacts: usize,
    pub windows_active: usize,
    #[serde(default = "one")]
    pub posts_per_window: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub label: String,
    pub start_timestamp: i64,
    pub duration_seconds: u64,
    pub window_seconds: u64,
    pub lang: String,
    pub background: BackgroundConfig,
    pub cohorts: Vec<CohortConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            label: "synthetic".into(),
            start_timestamp: 1_600_000_200,
            duration_seconds: 86_400,
            window_seconds: 300,
            lang: "en".into(),
            background: BackgroundConfig::default(),
            cohorts: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        let cohort_users: usize = self.cohorts.iter().map(|c| c.members).sum();
        if self.background.users + cohort_users == 0 {
            return bad("no users: background.users and all cohort sizes are zero");
        }
        if self.duration_seconds == 0 {
            return bad("duration_seconds must be positive");
        }
        if self.window_seconds == 0 {
            return bad("window_seconds must be positive");
        }
        if self.start_timestamp < 0 {
            return bad("start_timestamp must be non-negative");
        }
        let b = &self.background;
        if !(b.posts_per_hour.is_finite() && b.posts_per_hour >= 0.0) {
            return bad("background.posts_per_hour must be a non-negative number");
        }
        for (name, p) in [
            ("bot_fraction", b.bot_fraction),
            ("retweet_probability", b.retweet_probability),
            ("hashtag_probability", b.hashtag_probability),
            ("url_probability", b.url_probability),
            ("mention_probability", b.mention_probability),
            ("interaction_probability", b.interaction_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Config(format!("background.{name} must lie in [0, 1]")));
            }
        }
        if b.vocabulary.hashtag == 0 || b.vocabulary.url == 0 || b.vocabulary.mention == 0 {
            return bad("vocabulary sizes must be positive");
        }
        let buckets = self.bucket_range().count();
        for (i, c) in self.cohorts.iter().enumerate() {
            let err = |m: String| Err(SimError::Config(format!("cohort {i}: {m}")));
            if c.members == 0 {
                return err("members must be positive".into());
            }
            if c.action_types.is_empty() {
                return err("action_types is empty".into());
            }
            if c.artifacts == 0 || c.posts_per_window == 0 {
                return err("artifacts and posts_per_window must be positive".into());
            }
            if c.user_class == UserClass::Unknown {
                return err("user_class must be bot or human".into());
            }
            if c.windows_active > buckets {
                return err(format!(
                    "windows_active {} exceeds the {buckets} whole windows in the duration",
                    c.windows_active
                ));
            }
        }
        Ok(())
    }

    /// Buckets lying entirely inside the simulated time span.
    fn bucket_range(&self) -> std::ops::Range<i64> {
        let w = self.window_seconds.max(1) as i64;
        let first = (self.start_timestamp + w - 1).div_euclid(w);
        let end = (self.start_timestamp + self.duration_seconds as i64).div_euclid(w);
        first..end.max(first)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlantedPair {
    pub pair: UserPair,
    pub action_type: ActionType,
    pub min_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub pairs: Vec<PlantedPair>,
    /// Bot likelihood per generated user.
    pub bot_scores: BTreeMap<String, f64>,
    pub cohort_members: Vec<Vec<String>>,
}

impl GroundTruth {
    /// `user_u,user_v,action_type,min_count`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_u", "user_v", "action_type", "min_count"])?;
        for p in &self.pairs {
            w.write_record([p.pair.first(), p.pair.second(), p.action_type.as_str(), &p.min_count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `user_id,score`, the format read by the bot overlay.
    pub fn write_bot_scores<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "score"])?;
        for (user, score) in &self.bot_scores {
            w.write_record([user.as_str(), &score.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Independent stream per (seed, purpose, indices), so changing one cohort's
/// volume never shifts the draws of anything else.
fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = splitmix(h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const BACKGROUND: u64 = 1;
const COHORT_WINDOWS: u64 = 2;
const COHORT_POSTS: u64 = 3;
const SCORES: u64 = 4;

fn background_artifact(action: ActionType, k: u64) -> String {
    match action {
        ActionType::Hashtag => format!("#topic{k}"),
        ActionType::Url => format!("https://news.example/{k}"),
        ActionType::Mention => format!("@account{k}"),
    }
}

fn cohort_artifact(cohort: usize, action: ActionType, k: usize) -> String {
    match action {
        ActionType::Hashtag => format!("#cohort{cohort}tag{k}"),
        ActionType::Url => format!("https://cohort{cohort}.example/item/{k}"),
        ActionType::Mention => format!("@cohort{cohort}target{k}"),
    }
}

pub fn generate(config: &SimConfig) -> Result<(EventDataset, GroundTruth), SimError> {
    config.validate()?;
    let mut dataset = EventDataset::new(config.label.clone());
    let mut truth = GroundTruth::default();
    let start = config.start_timestamp;
    let duration = config.duration_seconds as i64;
    let w = config.window_seconds as i64;
    let lang = (!config.lang.is_empty()).then(|| config.lang.clone());

    let background: Vec<String> = (0..config.background.users).map(|i| format!("bg{i:05}")).collect();
    let cohorts: Vec<Vec<String>> = config
        .cohorts
        .iter()
        .enumerate()
        .map(|(c, cfg)| (0..cfg.members).map(|m| format!("c{c:02}m{m:03}")).collect())
        .collect();
    let everyone: Vec<&String> = background.iter().chain(cohorts.iter().flatten()).collect();

    let mut post_seq = 0u64;
    let mut next_id = |prefix: &str| {
        post_seq += 1;
        format!("{prefix}{post_seq:07}")
    };

    let bg = &config.background;
    let mut rng = stream(config.seed, &[BACKGROUND]);
    let expected = bg.posts_per_hour * config.duration_seconds as f64 / 3600.0;
    let poisson =
        if expected > 0.0 { Some(Poisson::new(expected).map_err(|e| SimError::Config(e.to_string()))?) } else { None };
    for user in &background {
        let n = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        for _ in 0..n {
            let timestamp = start + rng.random_range(0..duration);
            let retweet = rng.random_bool(bg.retweet_probability);
            let mut post = PostEvent {
                post_id: next_id("bp"),
                user_id: user.clone(),
                timestamp,
                post_type: if retweet { PostType::Retweet } else { PostType::Original },
                lang: lang.clone(),
                hashtags: vec![],
                urls: vec![],
                mentions: vec![],
            };
            for (action, p, vocab) in [
                (ActionType::Hashtag, bg.hashtag_probability, bg.vocabulary.hashtag),
                (ActionType::Url, bg.url_probability, bg.vocabulary.url),
                (ActionType::Mention, bg.mention_probability, bg.vocabulary.mention),
            ] {
                if rng.random_bool(p) {
                    let artifact = background_artifact(action, rng.random_range(0..vocab));
                    match action {
                        ActionType::Hashtag => post.hashtags.push(artifact),
                        ActionType::Url => post.urls.push(artifact),
                        ActionType::Mention => post.mentions.push(artifact),
                    }
                }
            }
            let target = everyone[rng.random_range(0..everyone.len())];
            if retweet {
                dataset.interactions.push(InteractionRecord {
                    source_user: user.clone(),
                    target_user: target.clone(),
                    interaction_type: InteractionType::Retweet,
                    timestamp,
                });
            } else if rng.random_bool(bg.interaction_probability) {
                let kind =
                    [InteractionType::Mention, InteractionType::Reply, InteractionType::Quote][rng.random_range(0..3)];
                dataset.interactions.push(InteractionRecord {
                    source_user: user.clone(),
                    target_user: target.clone(),
                    interaction_type: kind,
                    timestamp,
                });
            }
            dataset.posts.push(post);
        }
    }

    let buckets = config.bucket_range();
    let bucket_count = (buckets.end - buckets.start) as usize;
    for (ci, cohort) in config.cohorts.iter().enumerate() {
        let members = &cohorts[ci];
        let mut window_rng = stream(config.seed, &[COHORT_WINDOWS, ci as u64]);
        let mut chosen: Vec<usize> = sample(&mut window_rng, bucket_count, cohort.windows_active).into_vec();
        chosen.sort_unstable();
        for (wi, &offset) in chosen.iter().enumerate() {
            let bucket_start = (buckets.start + offset as i64) * w;
            for j in 0..cohort.posts_per_window {
                let artifact_idx = (wi + j) % cohort.artifacts;
                for (mi, member) in members.iter().enumerate() {
                    let mut prng = stream(config.seed, &[COHORT_POSTS, ci as u64, wi as u64, j as u64, mi as u64]);
                    let timestamp = bucket_start + prng.random_range(0..w);
                    let mut post = PostEvent {
                        post_id: format!("cp{ci:02}w{wi:04}j{j:03}m{mi:03}"),
                        user_id: member.clone(),
                        timestamp,
                        post_type: PostType::Original,
                        lang: lang.clone(),
                        hashtags: vec![],
                        urls: vec![],
                        mentions: vec![],
                    };
                    for &action in &cohort.action_types {
                        let artifact = cohort_artifact(ci, action, artifact_idx);
                        match action {
                            ActionType::Hashtag => post.hashtags.push(artifact),
                            ActionType::Url => post.urls.push(artifact),
                            ActionType::Mention => post.mentions.push(artifact),
                        }
                    }
                    dataset.posts.push(post);
                }
            }
        }
        let mut actions = cohort.action_types.clone();
        actions.sort();
        actions.dedup();
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                for &action in &actions {
                    truth.pairs.push(PlantedPair {
                        pair: UserPair::new(a.as_str(), b.as_str()).expect("distinct member ids"),
                        action_type: action,
                        min_count: cohort.windows_active as u64,
                    });
                }
            }
        }
    }
    truth.pairs.sort();
    truth.cohort_members = cohorts.clone();

    let mut score_rng = stream(config.seed, &[SCORES]);
    for user in &background {
        let bot = score_rng.random_bool(bg.bot_fraction);
        truth.bot_scores.insert(user.clone(), class_score(&mut score_rng, bot));
    }
    for (ci, cohort) in config.cohorts.iter().enumerate() {
        for member in &cohorts[ci] {
            let s = class_score(&mut score_rng, cohort.user_class == UserClass::Bot);
            truth.bot_scores.insert(member.clone(), s);
        }
    }

    dataset.posts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.post_id.cmp(&b.post_id)));
    dataset.interactions.sort_by_key(|i| i.timestamp);
    Ok((dataset, truth))
}

/// Bot scores land in (0.75, 1.0], human scores in [0, 0.65), well clear of the default threshold.
fn class_score(rng: &mut ChaCha8Rng, bot: bool) -> f64 {
    let u: f64 = rng.random();
    let raw = if bot { 1.0 - 0.25 * u } else { 0.65 * u };
    (raw * 1e4).round() / 1e4
}
