//! Event ingestion: parsing, validation, filtering and artifact canonicalization.
//!
//! Two input formats are accepted. JSONL is canonical: each line is either a post
//! record (has a `post_id` key) or an interaction record (has a `source_user` key).
//! CSV files carry one record kind per file, selected by the header, with list
//! fields pipe-delimited.
//!
//! Malformed records are counted and reported rather than aborting the parse,
//! unless more than half of the records in a stream are malformed.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("corpus rejected: {malformed} of {total} records are malformed")]
    CorpusRejected { malformed: usize, total: usize },
    #[error("csv header names neither `post_id` nor `source_user`")]
    UnknownCsvSchema,
    #[error("unknown input format `{0}` (expected jsonl or csv)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArtifactError {
    #[error("artifact is empty or whitespace-only")]
    Blank,
    #[error("artifact `{0}` is empty once its prefix is stripped")]
    EmptyAfterPrefix(String),
}

/// The three post artifacts whose co-occurrence defines synchrony.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionType {
    Hashtag,
    Url,
    Mention,
}

impl ActionType {
    pub const ALL: [ActionType; 3] = [ActionType::Hashtag, ActionType::Url, ActionType::Mention];

    /// Dense index used by fixed-size per-action arrays.
    pub fn index(self) -> usize {
        match self {
            ActionType::Hashtag => 0,
            ActionType::Url => 1,
            ActionType::Mention => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::Hashtag => "hashtag",
            ActionType::Url => "url",
            ActionType::Mention => "mention",
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hashtag" | "hashtags" => Ok(ActionType::Hashtag),
            "url" | "urls" => Ok(ActionType::Url),
            "mention" | "mentions" => Ok(ActionType::Mention),
            other => Err(format!("unknown action type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostType {
    Original,
    Retweet,
    Quote,
    Reply,
}

impl FromStr for PostType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(PostType::Original),
            "retweet" => Ok(PostType::Retweet),
            "quote" => Ok(PostType::Quote),
            "reply" => Ok(PostType::Reply),
            other => Err(format!("unknown post_type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionType {
    Retweet,
    Quote,
    Mention,
    Reply,
}

impl FromStr for InteractionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retweet" => Ok(InteractionType::Retweet),
            "quote" => Ok(InteractionType::Quote),
            "mention" => Ok(InteractionType::Mention),
            "reply" => Ok(InteractionType::Reply),
            other => Err(format!("unknown interaction_type `{other}`")),
        }
    }
}

/// One authored post with its raw artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostEvent {
    pub post_id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub post_type: PostType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    pub hashtags: Vec<String>,
    pub urls: Vec<String>,
    pub mentions: Vec<String>,
}

impl PostEvent {
    pub fn artifacts(&self, action: ActionType) -> &[String] {
        match action {
            ActionType::Hashtag => &self.hashtags,
            ActionType::Url => &self.urls,
            ActionType::Mention => &self.mentions,
        }
    }
}

/// A directed user-to-user interaction (retweet, quote, mention, reply).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub source_user: String,
    pub target_user: String,
    pub interaction_type: InteractionType,
    pub timestamp: i64,
}

/// A single (post, action type, canonical artifact) occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ActionRecord {
    pub post_id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub action_type: ActionType,
    pub artifact_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventDataset {
    pub label: String,
    pub posts: Vec<PostEvent>,
    pub interactions: Vec<InteractionRecord>,
}

impl EventDataset {
    pub fn new(label: impl Into<String>) -> Self {
        EventDataset { label: label.into(), ..Default::default() }
    }

    /// Every user id seen as a post author or an interaction endpoint.
    pub fn users(&self) -> BTreeSet<&str> {
        let mut users: BTreeSet<&str> = self.posts.iter().map(|p| p.user_id.as_str()).collect();
        for i in &self.interactions {
            users.insert(&i.source_user);
            users.insert(&i.target_user);
        }
        users
    }

    fn sort_by_time(&mut self) {
        self.posts.sort_by_key(|p| p.timestamp);
        self.interactions.sort_by_key(|i| i.timestamp);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// Picks CSV for `.csv` paths and JSONL for everything else.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

impl FromStr for InputFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRecord {
    /// 1-based line (JSONL) or record (CSV) number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub dataset: EventDataset,
    pub total_records: usize,
    pub malformed: Vec<MalformedRecord>,
}

impl ParseOutcome {
    pub fn malformed_count(&self) -> usize {
        self.malformed.len()
    }

    /// Folds another parsed stream (e.g. a separate interactions file) into this one.
    pub fn merge(&mut self, other: ParseOutcome) {
        self.total_records += other.total_records;
        self.malformed.extend(other.malformed);
        self.dataset.posts.extend(other.dataset.posts);
        self.dataset.interactions.extend(other.dataset.interactions);
        self.dataset.sort_by_time();
    }
}

enum Record {
    Post(PostEvent),
    Interaction(InteractionRecord),
}

/// A parsed record or the reason it was rejected, keyed by line number.
type NumberedRecord = (usize, Result<Record, String>);

/// Parses a line-delimited event stream.
pub fn parse_events<R: BufRead>(reader: R, format: InputFormat, label: &str) -> Result<ParseOutcome, IngestError> {
    let parsed: Vec<NumberedRecord> = match format {
        InputFormat::Jsonl => {
            let mut lines = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if !line.trim().is_empty() {
                    lines.push((i + 1, line));
                }
            }
            lines.par_iter().map(|(n, line)| (*n, parse_json_line(line))).collect()
        }
        InputFormat::Csv => parse_csv(reader)?,
    };

    let total = parsed.len();
    let mut dataset = EventDataset::new(label);
    let mut malformed = Vec::new();
    let mut seen_ids = HashSet::new();
    for (line, rec) in parsed {
        match rec {
            Ok(Record::Post(p)) => {
                if seen_ids.insert(p.post_id.clone()) {
                    dataset.posts.push(p);
                } else {
                    malformed.push(MalformedRecord { line, reason: format!("duplicate post_id `{}`", p.post_id) });
                }
            }
            Ok(Record::Interaction(i)) => dataset.interactions.push(i),
            Err(reason) => malformed.push(MalformedRecord { line, reason }),
        }
    }
    if total > 0 && malformed.len() * 2 > total {
        return Err(IngestError::CorpusRejected { malformed: malformed.len(), total });
    }
    if !malformed.is_empty() {
        log::warn!("{}: skipped {} malformed of {} records", label, malformed.len(), total);
    }
    dataset.sort_by_time();
    Ok(ParseOutcome { dataset, total_records: total, malformed })
}

fn parse_json_line(line: &str) -> Result<Record, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("record is not a json object")?;
    if obj.contains_key("post_id") {
        post_from_json(obj).map(Record::Post)
    } else if obj.contains_key("source_user") {
        interaction_from_json(obj).map(Record::Interaction)
    } else {
        Err("record has neither post_id nor source_user".to_string())
    }
}

fn required_str<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s),
        Some(Value::String(_)) => Err(format!("`{key}` is empty")),
        Some(_) => Err(format!("`{key}` is not a string")),
        None => Err(format!("missing `{key}`")),
    }
}

fn json_string_list(obj: &Map<String, Value>, key: &str) -> Result<Vec<String>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| format!("`{key}` holds a non-string")))
            .collect(),
        Some(_) => Err(format!("`{key}` is not a list")),
    }
}

fn json_timestamp(obj: &Map<String, Value>) -> Result<i64, String> {
    match obj.get("timestamp") {
        Some(Value::Number(n)) => {
            let secs = if let Some(i) = n.as_i64() {
                i
            } else {
                let f = n.as_f64().ok_or("timestamp out of range")?;
                if !f.is_finite() || f >= i64::MAX as f64 {
                    return Err("timestamp out of range".to_string());
                }
                f.floor() as i64
            };
            check_timestamp(secs)
        }
        Some(Value::String(s)) => parse_timestamp(s),
        Some(_) => Err("timestamp is neither a number nor a string".to_string()),
        None => Err("missing `timestamp`".to_string()),
    }
}

fn check_timestamp(secs: i64) -> Result<i64, String> {
    if secs < 0 {
        Err(format!("negative timestamp {secs}"))
    } else {
        Ok(secs)
    }
}

/// Parses integer epoch seconds or an ISO-8601 date-time, truncating to whole seconds (UTC).
pub fn parse_timestamp(raw: &str) -> Result<i64, String> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return check_timestamp(secs);
    }
    if let Ok(f) = raw.parse::<f64>() {
        if f.is_finite() && f < i64::MAX as f64 {
            return check_timestamp(f.floor() as i64);
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return check_timestamp(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return check_timestamp(dt.and_utc().timestamp());
        }
    }
    Err(format!("unparseable timestamp `{raw}`"))
}

fn build_post(
    post_id: &str,
    user_id: &str,
    timestamp: i64,
    post_type: &str,
    lang: Option<&str>,
    [hashtags, urls, mentions]: [Vec<String>; 3],
) -> Result<PostEvent, String> {
    let post_type = PostType::from_str(post_type)?;
    let post = PostEvent {
        post_id: post_id.to_string(),
        user_id: user_id.to_string(),
        timestamp,
        post_type,
        lang: lang.map(str::trim).filter(|l| !l.is_empty()).map(str::to_string),
        hashtags,
        urls,
        mentions,
    };
    for action in ActionType::ALL {
        for raw in post.artifacts(action) {
            canonicalize_artifact(action, raw).map_err(|e| format!("{action} artifact: {e}"))?;
        }
    }
    Ok(post)
}

fn post_from_json(obj: &Map<String, Value>) -> Result<PostEvent, String> {
    let lang = match obj.get("lang") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.as_str()),
        Some(_) => return Err("`lang` is not a string".to_string()),
    };
    build_post(
        required_str(obj, "post_id")?,
        required_str(obj, "user_id")?,
        json_timestamp(obj)?,
        required_str(obj, "post_type")?,
        lang,
        [json_string_list(obj, "hashtags")?, json_string_list(obj, "urls")?, json_string_list(obj, "mentions")?],
    )
}

fn build_interaction(source: &str, target: &str, kind: &str, timestamp: i64) -> Result<InteractionRecord, String> {
    Ok(InteractionRecord {
        source_user: source.to_string(),
        target_user: target.to_string(),
        interaction_type: InteractionType::from_str(kind)?,
        timestamp,
    })
}

fn interaction_from_json(obj: &Map<String, Value>) -> Result<InteractionRecord, String> {
    build_interaction(
        required_str(obj, "source_user")?,
        required_str(obj, "target_user")?,
        required_str(obj, "interaction_type")?,
        json_timestamp(obj)?,
    )
}

fn parse_csv<R: BufRead>(reader: R) -> Result<Vec<NumberedRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let is_post = col("post_id").is_some();
    if !is_post && col("source_user").is_none() {
        // A header-only or empty file carries no records of either kind.
        if headers.is_empty() {
            return Ok(Vec::new());
        }
        return Err(IngestError::UnknownCsvSchema);
    }

    let cols: Vec<Option<usize>> = if is_post {
        ["post_id", "user_id", "timestamp", "post_type", "lang", "hashtags", "urls", "mentions"]
            .iter()
            .map(|c| col(c))
            .collect()
    } else {
        ["source_user", "target_user", "interaction_type", "timestamp"].iter().map(|c| col(c)).collect()
    };

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.push((line, Err(format!("invalid csv row: {e}"))));
                continue;
            }
        };
        let field = |idx: usize| cols[idx].and_then(|c| row.get(c)).unwrap_or("");
        let need = |idx: usize, name: &str| -> Result<&str, String> {
            let v = field(idx);
            if v.trim().is_empty() {
                Err(format!("missing `{name}`"))
            } else {
                Ok(v)
            }
        };
        let rec = if is_post {
            (|| {
                build_post(
                    need(0, "post_id")?,
                    need(1, "user_id")?,
                    parse_timestamp(need(2, "timestamp")?)?,
                    need(3, "post_type")?,
                    Some(field(4)),
                    [pipe_list(field(5)), pipe_list(field(6)), pipe_list(field(7))],
                )
                .map(Record::Post)
            })()
        } else {
            (|| {
                build_interaction(
                    need(0, "source_user")?,
                    need(1, "target_user")?,
                    need(2, "interaction_type")?,
                    parse_timestamp(need(3, "timestamp")?)?,
                )
                .map(Record::Interaction)
            })()
        };
        out.push((line, rec));
    }
    Ok(out)
}

fn pipe_list(cell: &str) -> Vec<String> {
    if cell.is_empty() {
        Vec::new()
    } else {
        cell.split('|').map(str::to_string).collect()
    }
}

/// Writes a dataset as canonical JSONL: posts first, then interactions.
pub fn write_jsonl<W: Write>(dataset: &EventDataset, mut out: W) -> std::io::Result<()> {
    for p in &dataset.posts {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    for i in &dataset.interactions {
        serde_json::to_writer(&mut out, i)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Keeps only original posts; interactions are left untouched.
pub fn filter_originals(dataset: EventDataset) -> EventDataset {
    let EventDataset { label, posts, interactions } = dataset;
    let posts = posts.into_iter().filter(|p| p.post_type == PostType::Original).collect();
    EventDataset { label, posts, interactions }
}

#[derive(Debug, Clone)]
pub struct LanguageFiltered {
    pub dataset: EventDataset,
    /// Posts dropped because they carried no language tag at all.
    pub untagged: usize,
}

/// Keeps posts whose language tag equals `lang`. An empty code disables the filter.
pub fn filter_language(dataset: EventDataset, lang: &str) -> LanguageFiltered {
    let lang = lang.trim();
    if lang.is_empty() {
        return LanguageFiltered { dataset, untagged: 0 };
    }
    let EventDataset { label, posts, interactions } = dataset;
    let untagged = posts.iter().filter(|p| p.lang.is_none()).count();
    let posts: Vec<_> =
        posts.into_iter().filter(|p| p.lang.as_deref().is_some_and(|l| l.eq_ignore_ascii_case(lang))).collect();
    if untagged > 0 {
        log::warn!("language filter: {untagged} posts had no language tag");
    }
    LanguageFiltered { dataset: EventDataset { label, posts, interactions }, untagged }
}

/// Maps a raw artifact to the exact-match key used by synchrony detection.
///
/// Hashtags and mentions lose their leading `#` / `@` and are lowercased. URLs get
/// a lowercased scheme and host, lose any fragment and trailing `/`, and keep
/// path and query byte-for-byte.
pub fn canonicalize_artifact(action: ActionType, raw: &str) -> Result<String, ArtifactError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(ArtifactError::Blank);
    }
    let out = match action {
        ActionType::Hashtag => strip_prefix_lower(trimmed, '#'),
        ActionType::Mention => strip_prefix_lower(trimmed, '@'),
        ActionType::Url => canonical_url(trimmed),
    };
    if out.is_empty() {
        Err(ArtifactError::EmptyAfterPrefix(raw.to_string()))
    } else {
        Ok(out)
    }
}

fn strip_prefix_lower(s: &str, prefix: char) -> String {
    s.trim_start_matches(|c: char| c == prefix || c.is_whitespace()).to_lowercase()
}

fn canonical_url(s: &str) -> String {
    let without_fragment = match s.find('#') {
        Some(i) => &s[..i],
        None => s,
    };
    let (scheme, rest) = match without_fragment.find("://") {
        Some(i) => (Some(&without_fragment[..i]), &without_fragment[i + 3..]),
        None => (None, without_fragment),
    };
    let host_end = rest.find(['/', '?']).unwrap_or(rest.len());
    let (host, tail) = rest.split_at(host_end);

    let mut out = String::with_capacity(s.len());
    if let Some(scheme) = scheme {
        out.push_str(&scheme.to_ascii_lowercase());
        out.push_str("://");
    }
    out.push_str(&host.to_lowercase());
    out.push_str(tail);
    let keep = out.trim_end_matches(|c: char| c == '/' || c.is_whitespace()).len();
    out.truncate(keep);
    out
}

/// Emits one record per (post, action type, distinct canonical artifact).
pub fn extract_actions(dataset: &EventDataset) -> Vec<ActionRecord> {
    let mut out = Vec::new();
    for post in &dataset.posts {
        for action in ActionType::ALL {
            let canon: BTreeSet<String> =
                post.artifacts(action).iter().filter_map(|raw| canonicalize_artifact(action, raw).ok()).collect();
            out.extend(canon.into_iter().map(|artifact_id| ActionRecord {
                post_id: post.post_id.clone(),
                user_id: post.user_id.clone(),
                timestamp: post.timestamp,
                action_type: action,
                artifact_id,
            }));
        }
    }
    out
}
