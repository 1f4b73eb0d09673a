//! Co-timed action detection.
//!
//! Timestamps are grouped into fixed, epoch-aligned buckets of `window_seconds`.
//! Every set of distinct users that posted the same canonical artifact of one
//! action type inside one bucket forms a group, and each unordered pair in the
//! group gains one synchrony count for that action type.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ActionRecord, ActionType};

pub const DEFAULT_WINDOW_SECONDS: u64 = 300;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("window_seconds must be positive")]
    ZeroWindow,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("pair count row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAlignment {
    /// bucket = floor(timestamp / window_seconds)
    EpochBuckets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncWindowConfig {
    window_seconds: u64,
    pub alignment: WindowAlignment,
}

impl SyncWindowConfig {
    pub fn new(window_seconds: u64) -> Result<Self, SyncError> {
        if window_seconds == 0 {
            return Err(SyncError::ZeroWindow);
        }
        Ok(SyncWindowConfig { window_seconds, alignment: WindowAlignment::EpochBuckets })
    }

    pub fn window_seconds(&self) -> u64 {
        self.window_seconds
    }

    pub fn bucket(&self, timestamp: i64) -> i64 {
        timestamp.div_euclid(self.window_seconds as i64)
    }
}

impl Default for SyncWindowConfig {
    fn default() -> Self {
        SyncWindowConfig { window_seconds: DEFAULT_WINDOW_SECONDS, alignment: WindowAlignment::EpochBuckets }
    }
}

/// Unordered pair of distinct users, stored with `first < second`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserPair {
    first: String,
    second: String,
}

impl UserPair {
    /// Returns `None` for a self-pair.
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Option<Self> {
        let (a, b) = (a.into(), b.into());
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(UserPair { first: a, second: b }),
            std::cmp::Ordering::Greater => Some(UserPair { first: b, second: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn first(&self) -> &str {
        &self.first
    }

    pub fn second(&self) -> &str {
        &self.second
    }

    pub fn contains(&self, user: &str) -> bool {
        self.first == user || self.second == user
    }

    pub fn members(&self) -> [&str; 2] {
        [&self.first, &self.second]
    }
}

impl fmt::Display for UserPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}}}", self.first, self.second)
    }
}

/// Per-action synchrony counts for one pair, indexed by [`ActionType::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActionCounts([u64; 3]);

impl ActionCounts {
    pub fn get(&self, action: ActionType) -> u64 {
        self.0[action.index()]
    }

    pub fn add(&mut self, action: ActionType, n: u64) {
        self.0[action.index()] += n;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Number of action types with a nonzero count.
    pub fn num_action_types(&self) -> usize {
        self.0.iter().filter(|&&c| c > 0).count()
    }

    pub fn active(&self) -> impl Iterator<Item = (ActionType, u64)> + '_ {
        ActionType::ALL.into_iter().map(|a| (a, self.get(a))).filter(|&(_, c)| c > 0)
    }
}

/// S(u,v,a) for every synchronizing pair; pairs with all-zero counts are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSyncCounts {
    pairs: BTreeMap<UserPair, ActionCounts>,
}

impl PairSyncCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pair: UserPair, action: ActionType, n: u64) {
        if n > 0 {
            self.pairs.entry(pair).or_default().add(action, n);
        }
    }

    pub fn get(&self, pair: &UserPair) -> Option<&ActionCounts> {
        self.pairs.get(pair)
    }

    pub fn count(&self, pair: &UserPair, action: ActionType) -> u64 {
        self.pairs.get(pair).map_or(0, |c| c.get(action))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&UserPair, &ActionCounts)> {
        self.pairs.iter()
    }

    pub fn users(&self) -> BTreeSet<&str> {
        self.pairs.keys().flat_map(|p| p.members()).collect()
    }

    /// The counts table restricted to one action type.
    pub fn restrict_to(&self, action: ActionType) -> PairSyncCounts {
        let mut out = PairSyncCounts::new();
        for (pair, counts) in &self.pairs {
            out.add(pair.clone(), action, counts.get(action));
        }
        out
    }

    /// Writes `user_u,user_v,action_type,count`, one row per nonzero (pair, action).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SyncError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_u", "user_v", "action_type", "count"])?;
        for (pair, counts) in &self.pairs {
            for (action, n) in counts.active() {
                w.write_record([pair.first(), pair.second(), action.as_str(), &n.to_string()])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, SyncError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut out = PairSyncCounts::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |reason: String| SyncError::BadRow { row: i + 2, reason };
            if row.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", row.len())));
            }
            let pair = UserPair::new(&row[0], &row[1]).ok_or_else(|| bad("self-pair".into()))?;
            let action: ActionType = row[2].parse().map_err(bad)?;
            let n: u64 = row[3].parse().map_err(|e| bad(format!("count: {e}")))?;
            if n == 0 {
                return Err(bad("zero count".into()));
            }
            out.add(pair, action, n);
        }
        Ok(out)
    }
}

impl FromIterator<(UserPair, ActionType, u64)> for PairSyncCounts {
    fn from_iter<I: IntoIterator<Item = (UserPair, ActionType, u64)>>(iter: I) -> Self {
        let mut out = PairSyncCounts::new();
        for (pair, action, n) in iter {
            out.add(pair, action, n);
        }
        out
    }
}

type GroupKey<'a> = (ActionType, &'a str, i64);

/// Distinct members of every (action type, artifact, bucket) group with two or more users.
fn groups<'a>(actions: &'a [ActionRecord], config: &SyncWindowConfig) -> Vec<(ActionType, Vec<&'a str>)> {
    let mut groups: HashMap<GroupKey<'a>, BTreeSet<&'a str>> = HashMap::new();
    for rec in actions {
        groups
            .entry((rec.action_type, rec.artifact_id.as_str(), config.bucket(rec.timestamp)))
            .or_default()
            .insert(rec.user_id.as_str());
    }
    groups
        .into_iter()
        .filter(|(_, users)| users.len() >= 2)
        .map(|((action, _, _), users)| (action, users.into_iter().collect()))
        .collect()
}

/// Builds S(u,v,a) using the current rayon pool.
///
/// Groups are expanded to pairs in parallel; the merge only sums integers, so the
/// result does not depend on scheduling or input order.
pub fn detect(actions: &[ActionRecord], config: &SyncWindowConfig) -> PairSyncCounts {
    let groups = groups(actions, config);
    let tallies = groups
        .par_iter()
        .fold(HashMap::new, |mut tally: HashMap<(UserPair, ActionType), u64>, (action, members)| {
            for (i, a) in members.iter().enumerate() {
                for b in &members[i + 1..] {
                    let pair = UserPair { first: (*a).to_string(), second: (*b).to_string() };
                    *tally.entry((pair, *action)).or_default() += 1;
                }
            }
            tally
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, n) in b {
                *a.entry(k).or_default() += n;
            }
            a
        });
    tallies.into_iter().map(|((pair, action), n)| (pair, action, n)).collect()
}

/// Runs [`detect`] inside a dedicated pool with `threads` workers.
pub fn detect_with_threads(
    actions: &[ActionRecord],
    config: &SyncWindowConfig,
    threads: usize,
) -> Result<PairSyncCounts, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    Ok(pool.install(|| detect(actions, config)))
}

/// Naive reference: compares every pair of action records directly.
///
/// Quadratic in the number of records; meant for cross-checking [`detect`].
pub fn brute_force_detect(actions: &[ActionRecord], config: &SyncWindowConfig) -> PairSyncCounts {
    let mut hits: BTreeSet<(ActionType, &str, i64, UserPair)> = BTreeSet::new();
    for (i, x) in actions.iter().enumerate() {
        for y in &actions[i + 1..] {
            if x.action_type != y.action_type || x.artifact_id != y.artifact_id {
                continue;
            }
            let bucket = config.bucket(x.timestamp);
            if bucket != config.bucket(y.timestamp) {
                continue;
            }
            if let Some(pair) = UserPair::new(x.user_id.as_str(), y.user_id.as_str()) {
                hits.insert((x.action_type, x.artifact_id.as_str(), bucket, pair));
            }
        }
    }
    hits.into_iter().map(|(action, _, _, pair)| (pair, action, 1)).collect()
}

/// Share of synchronizing users at each number of action types (1, 2, 3).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Participation {
    /// Number of distinct action types each synchronizing user takes part in.
    pub per_user: BTreeMap<String, usize>,
    /// Fraction of users at 1, 2 and 3 action types; empty when there are no pairs.
    pub fractions: BTreeMap<usize, f64>,
}

pub fn action_type_participation(counts: &PairSyncCounts) -> Participation {
    let mut types: BTreeMap<&str, [bool; 3]> = BTreeMap::new();
    for (pair, c) in counts.iter() {
        for user in pair.members() {
            let seen = types.entry(user).or_default();
            for (action, _) in c.active() {
                seen[action.index()] = true;
            }
        }
    }
    let per_user: BTreeMap<String, usize> =
        types.into_iter().map(|(u, seen)| (u.to_string(), seen.iter().filter(|&&s| s).count())).collect();
    let mut fractions = BTreeMap::new();
    if !per_user.is_empty() {
        let n = per_user.len() as f64;
        for level in 1..=3 {
            let k = per_user.values().filter(|&&v| v == level).count();
            fractions.insert(level, k as f64 / n);
        }
    }
    Participation { per_user, fractions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(user: &str, ts: i64, action: ActionType, artifact: &str) -> ActionRecord {
        ActionRecord {
            post_id: format!("{user}-{ts}-{artifact}"),
            user_id: user.into(),
            timestamp: ts,
            action_type: action,
            artifact_id: artifact.into(),
        }
    }

    fn pair(a: &str, b: &str) -> UserPair {
        UserPair::new(a, b).unwrap()
    }

    #[test]
    fn same_bucket_pairs() {
        let cfg = SyncWindowConfig::default();
        let counts = detect(&[rec("u", 100, ActionType::Hashtag, "x"), rec("v", 250, ActionType::Hashtag, "x")], &cfg);
        assert_eq!(counts.count(&pair("u", "v"), ActionType::Hashtag), 1);
        assert_eq!(counts.len(), 1);
    }

    #[test]
    fn bucket_boundary_splits() {
        let cfg = SyncWindowConfig::default();
        let counts = detect(&[rec("u", 299, ActionType::Hashtag, "x"), rec("v", 301, ActionType::Hashtag, "x")], &cfg);
        assert!(counts.is_empty());
    }

    #[test]
    fn no_self_synchrony() {
        let cfg = SyncWindowConfig::default();
        let actions: Vec<_> = (0..5).map(|i| rec("u", 10 + i, ActionType::Url, "x")).collect();
        assert!(detect(&actions, &cfg).is_empty());
        assert!(brute_force_detect(&actions, &cfg).is_empty());
    }

    #[test]
    fn three_users_three_pairs() {
        let cfg = SyncWindowConfig::default();
        let actions = [
            rec("a", 1, ActionType::Mention, "m"),
            rec("b", 2, ActionType::Mention, "m"),
            rec("c", 3, ActionType::Mention, "m"),
        ];
        let brute = brute_force_detect(&actions, &cfg);
        assert_eq!(brute.len(), 3);
        assert!(brute.iter().all(|(_, c)| c.get(ActionType::Mention) == 1));
        assert_eq!(detect(&actions, &cfg), brute);
        assert!(brute_force_detect(&[], &cfg).is_empty());
    }

    #[test]
    fn repeated_member_counts_once_per_group() {
        let cfg = SyncWindowConfig::default();
        let actions = [
            rec("a", 1, ActionType::Hashtag, "h"),
            rec("a", 2, ActionType::Hashtag, "h"),
            rec("b", 3, ActionType::Hashtag, "h"),
        ];
        assert_eq!(detect(&actions, &cfg).count(&pair("a", "b"), ActionType::Hashtag), 1);
    }

    #[test]
    fn zero_window_rejected() {
        assert!(matches!(SyncWindowConfig::new(0), Err(SyncError::ZeroWindow)));
    }

    #[test]
    fn participation_levels() {
        let counts: PairSyncCounts = [
            (pair("u", "v"), ActionType::Hashtag, 1),
            (pair("u", "v"), ActionType::Url, 2),
            (pair("u", "w"), ActionType::Hashtag, 1),
        ]
        .into_iter()
        .collect();
        let p = action_type_participation(&counts);
        assert_eq!(p.per_user["u"], 2);
        assert_eq!(p.per_user["w"], 1);
        assert!((p.fractions[&1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.fractions[&2] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.fractions[&3], 0.0);

        let single: PairSyncCounts = [(pair("a", "b"), ActionType::Url, 4)].into_iter().collect();
        assert_eq!(action_type_participation(&single).fractions[&1], 1.0);

        let all: PairSyncCounts = ActionType::ALL.into_iter().map(|a| (pair("a", "b"), a, 1)).collect();
        assert_eq!(action_type_participation(&all).fractions[&3], 1.0);

        assert!(action_type_participation(&PairSyncCounts::new()).fractions.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let counts: PairSyncCounts =
            [(pair("b", "a"), ActionType::Hashtag, 3), (pair("a", "c"), ActionType::Mention, 1)].into_iter().collect();
        let mut buf = Vec::new();
        counts.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "user_u,user_v,action_type,count\na,b,hashtag,3\na,c,mention,1\n");
        assert_eq!(PairSyncCounts::read_csv(buf.as_slice()).unwrap(), counts);
    }

    fn arb_actions() -> impl Strategy<Value = Vec<ActionRecord>> {
        proptest::collection::vec((0usize..12, 0i64..3_000, 0usize..3, 0usize..6), 0..120).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (u, t, a, art))| ActionRecord {
                    post_id: format!("p{i}"),
                    user_id: format!("user{u}"),
                    timestamp: t,
                    action_type: ActionType::ALL[a],
                    artifact_id: format!("art{art}"),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(actions in arb_actions()) {
            let cfg = SyncWindowConfig::default();
            prop_assert_eq!(detect(&actions, &cfg), brute_force_detect(&actions, &cfg));
        }

        #[test]
        fn permutation_invariant(actions in arb_actions(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cfg = SyncWindowConfig::default();
            let mut shuffled = actions.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(detect(&actions, &cfg), detect(&shuffled, &cfg));
        }

        #[test]
        fn appending_never_decreases(actions in arb_actions(), extra in (0usize..12, 0i64..3_000, 0usize..3, 0usize..6)) {
            let cfg = SyncWindowConfig::default();
            let before = detect(&actions, &cfg);
            let mut more = actions.clone();
            more.push(ActionRecord {
                post_id: "extra".into(),
                user_id: format!("user{}", extra.0),
                timestamp: extra.1,
                action_type: ActionType::ALL[extra.2],
                artifact_id: format!("art{}", extra.3),
            });
            let after = detect(&more, &cfg);
            for (p, c) in before.iter() {
                for a in ActionType::ALL {
                    prop_assert!(after.count(p, a) >= c.get(a));
                }
            }
        }

        #[test]
        fn group_of_k_yields_k_choose_2(k in 0usize..15) {
            let cfg = SyncWindowConfig::default();
            let actions: Vec<_> = (0..k).map(|i| rec(&format!("u{i:02}"), 42, ActionType::Url, "same")).collect();
            let counts = detect(&actions, &cfg);
            prop_assert_eq!(counts.len(), k * k.saturating_sub(1) / 2);
            prop_assert!(counts.iter().all(|(_, c)| c.total() == 1));
        }
    }
}
