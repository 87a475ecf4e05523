//! Raw social-media records and line-delimited JSON ingestion.
//!
//! Three input files drive the pipeline: `tweets.jsonl`, `users.jsonl` and
//! the optional `timelines.jsonl`. Each line is one JSON object. Timestamps
//! are accepted either as epoch seconds or as ISO-8601 strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::DateTime;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Binary news label: the unit of classification is a whole propagation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index used by the model head: Real = 0, Fake = 1.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(idx: usize) -> Option<Label> {
        match idx {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Real => write!(f, "real"),
            Label::Fake => write!(f, "fake"),
        }
    }
}

/// A single tweet (root tweet or retweet) of one news item.
///
/// `root_tweet_id` absent means this tweet directly references the news URL
/// and starts its own cascade.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub news_id: String,
    pub user_id: String,
    #[serde(deserialize_with = "deserialize_timestamp")]
    pub timestamp_s: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_tweet_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub mentioned_user_ids: BTreeSet<String>,
    #[serde(default = "default_true")]
    pub is_public: bool,
}

impl TweetRecord {
    pub fn is_root(&self) -> bool {
        self.root_tweet_id.is_none()
    }

    /// Global ordering key: timestamp first, tweet id as deterministic
    /// tie-break.
    pub fn order_key(&self) -> (i64, &str) {
        (self.timestamp_s, &self.tweet_id)
    }
}

fn default_true() -> bool {
    true
}

/// Accepts either epoch seconds (integer) or an ISO-8601 datetime string.
fn deserialize_timestamp<'de, D>(deserializer: D) -> Result<i64, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Seconds(i64),
        Text(String),
    }
    match Raw::deserialize(deserializer)? {
        Raw::Seconds(s) => Ok(s),
        Raw::Text(t) => DateTime::parse_from_rfc3339(&t)
            .map(|dt| dt.timestamp())
            .map_err(|e| D::Error::custom(format!("bad timestamp {t:?}: {e}"))),
    }
}

/// Profile of one Twitter user; the source of the 8 profile features.
///
/// `created_months` counts months since March 2006. `follows` is only needed
/// for the optional follower/following edge rule and may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub verified: bool,
    #[serde(default)]
    pub created_months: u32,
    #[serde(default)]
    pub followers: u64,
    #[serde(default)]
    pub friends: u64,
    #[serde(default)]
    pub lists: u64,
    #[serde(default)]
    pub favourites: u64,
    #[serde(default)]
    pub statuses: u64,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub follows: BTreeSet<String>,
}

/// At most this many timeline tweets are collected per user; larger reported
/// counts are clamped at ingestion.
pub const MAX_TIMELINE_TWEETS: u32 = 200;

/// Per-user timeline summary: who the user mentioned across their timeline
/// tweets, plus how many timeline tweets were collected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub user_id: String,
    /// One entry per mention occurrence (repeats increase edge weight).
    #[serde(default)]
    pub mentions: Vec<String>,
    #[serde(default)]
    pub timeline_tweet_count: u32,
}

/// Ground-truth label for one news item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub news_id: String,
    #[serde(deserialize_with = "deserialize_label")]
    pub label: Label,
}

/// Accepts 0/1, "real"/"fake" (any case), or the canonical enum spelling.
fn deserialize_label<'de, D>(deserializer: D) -> Result<Label, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u8),
        Text(String),
    }
    match Raw::deserialize(deserializer)? {
        Raw::Num(0) => Ok(Label::Real),
        Raw::Num(1) => Ok(Label::Fake),
        Raw::Num(other) => Err(D::Error::custom(format!("label must be 0 or 1, got {other}"))),
        Raw::Text(t) => match t.to_ascii_lowercase().as_str() {
            "real" | "0" => Ok(Label::Real),
            "fake" | "1" => Ok(Label::Fake),
            other => Err(D::Error::custom(format!("unknown label {other:?}"))),
        },
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: String,
        line: usize,
        message: String,
    },
}

fn read_jsonl<T, P>(path: P) -> Result<Vec<(usize, T)>, IngestError>
where
    T: for<'de> Deserialize<'de>,
    P: AsRef<Path>,
{
    let path_str = path.as_ref().display().to_string();
    let file = File::open(&path).map_err(|source| IngestError::Io {
        path: path_str.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            path: path_str.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

/// Reads `tweets.jsonl`, validating per-record invariants.
pub fn read_tweets<P: AsRef<Path>>(path: P) -> Result<Vec<TweetRecord>, IngestError> {
    let path_str = path.as_ref().display().to_string();
    let rows: Vec<(usize, TweetRecord)> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, tweet) in rows {
        if tweet.timestamp_s < 0 {
            return Err(IngestError::Invalid {
                path: path_str,
                line,
                message: format!("negative timestamp for tweet {}", tweet.tweet_id),
            });
        }
        out.push(tweet);
    }
    Ok(out)
}

/// Reads `users.jsonl` into a user-id keyed map. Later lines win on
/// duplicate ids.
pub fn read_users<P: AsRef<Path>>(path: P) -> Result<BTreeMap<String, UserProfile>, IngestError> {
    let rows: Vec<(usize, UserProfile)> = read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|(_, u)| (u.user_id.clone(), u))
        .collect())
}

/// Reads `timelines.jsonl`, clamping timeline tweet counts to
/// [`MAX_TIMELINE_TWEETS`].
pub fn read_timelines<P: AsRef<Path>>(
    path: P,
) -> Result<BTreeMap<String, TimelineRecord>, IngestError> {
    let rows: Vec<(usize, TimelineRecord)> = read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|(_, mut t)| {
            t.timeline_tweet_count = t.timeline_tweet_count.min(MAX_TIMELINE_TWEETS);
            (t.user_id.clone(), t)
        })
        .collect())
}

/// Reads `labels.jsonl` into a news-id keyed map.
pub fn read_labels<P: AsRef<Path>>(path: P) -> Result<BTreeMap<String, Label>, IngestError> {
    let rows: Vec<(usize, LabelRecord)> = read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|(_, l)| (l.news_id, l.label))
        .collect())
}

/// Writes records as line-delimited JSON, one object per line.
pub fn write_jsonl<T: Serialize, P: AsRef<Path>>(
    path: P,
    records: &[T],
) -> Result<(), std::io::Error> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    file.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_accepts_epoch_and_iso8601() {
        let a: TweetRecord = serde_json::from_str(
            r#"{"tweet_id":"t1","news_id":"n1","user_id":"u1","timestamp_s":1500000000}"#,
        )
        .unwrap();
        let b: TweetRecord = serde_json::from_str(
            r#"{"tweet_id":"t2","news_id":"n1","user_id":"u1","timestamp_s":"2017-07-14T02:40:00+00:00"}"#,
        )
        .unwrap();
        assert_eq!(a.timestamp_s, 1_500_000_000);
        assert_eq!(b.timestamp_s, 1_500_000_000);
        assert!(a.is_public, "is_public defaults to true");
        assert!(a.is_root());
    }

    #[test]
    fn label_accepts_numeric_and_text_forms() {
        for (raw, expected) in [
            (r#"{"news_id":"n","label":0}"#, Label::Real),
            (r#"{"news_id":"n","label":1}"#, Label::Fake),
            (r#"{"news_id":"n","label":"Fake"}"#, Label::Fake),
            (r#"{"news_id":"n","label":"real"}"#, Label::Real),
        ] {
            let rec: LabelRecord = serde_json::from_str(raw).unwrap();
            assert_eq!(rec.label, expected, "{raw}");
        }
        assert!(serde_json::from_str::<LabelRecord>(r#"{"news_id":"n","label":2}"#).is_err());
    }

    #[test]
    fn negative_timestamp_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tweets.jsonl");
        std::fs::write(
            &path,
            r#"{"tweet_id":"t1","news_id":"n1","user_id":"u1","timestamp_s":-5}"#,
        )
        .unwrap();
        let err = read_tweets(&path).unwrap_err();
        assert!(matches!(err, IngestError::Invalid { line: 1, .. }));
    }

    #[test]
    fn parse_error_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tweets.jsonl");
        std::fs::write(
            &path,
            "{\"tweet_id\":\"t1\",\"news_id\":\"n1\",\"user_id\":\"u1\",\"timestamp_s\":0}\nnot json\n",
        )
        .unwrap();
        let err = read_tweets(&path).unwrap_err();
        match err {
            IngestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn timeline_count_clamped_to_cap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("timelines.jsonl");
        std::fs::write(
            &path,
            r#"{"user_id":"u1","mentions":["u2","u2"],"timeline_tweet_count":900}"#,
        )
        .unwrap();
        let map = read_timelines(&path).unwrap();
        assert_eq!(map["u1"].timeline_tweet_count, MAX_TIMELINE_TWEETS);
    }
}
