//! Propagation-graph construction from tweet records.
//!
//! A news item is represented as one directed graph: every root tweet and its
//! retweets form a cascade, cascades are sorted in time, edges are inferred
//! inside each cascade (mention, time-window and optional follow rules), and
//! a virtual news node (node 0) connects the roots of all cascades. Early
//! detection clips the tweet sequence before any edge inference happens.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{Label, TweetRecord, UserProfile};

/// One root tweet plus all of its retweets, sorted ascending by
/// `(timestamp_s, tweet_id)`. The root is always the first element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cascade {
    pub root_tweet_id: String,
    pub tweets: Vec<TweetRecord>,
}

impl Cascade {
    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }
}

/// Early-detection bound: keep the first `max_tweets` tweets and/or the
/// tweets from the first `max_hours` hours, whichever yields fewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub max_tweets: Option<usize>,
    pub max_hours: Option<u32>,
}

impl ClipSpec {
    pub fn tweets(max_tweets: usize) -> Self {
        ClipSpec {
            max_tweets: Some(max_tweets),
            max_hours: None,
        }
    }

    pub fn hours(max_hours: u32) -> Self {
        ClipSpec {
            max_tweets: None,
            max_hours: Some(max_hours),
        }
    }

    pub fn both(max_tweets: usize, max_hours: u32) -> Self {
        ClipSpec {
            max_tweets: Some(max_tweets),
            max_hours: Some(max_hours),
        }
    }

    /// At least one bound must be present for the spec to mean anything.
    pub fn is_valid(&self) -> bool {
        (self.max_tweets.is_some() || self.max_hours.is_some())
            && self.max_tweets.map_or(true, |t| t >= 1)
    }
}

/// Identity of the tweet behind a graph node. Node 0 (the news node) has no
/// meta.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub tweet_id: String,
    pub user_id: String,
    pub timestamp_s: i64,
}

/// The classification unit: all cascades of one news item joined by a
/// virtual news node.
///
/// Node 0 is the news node: its feature row is all zeros, it has an outgoing
/// edge to every cascade root and no incoming edges. Tweet nodes are numbered
/// in global `(timestamp_s, tweet_id)` order starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationGraph {
    pub news_id: String,
    pub n: usize,
    pub edges: BTreeSet<(u32, u32)>,
    pub features: Array2<f64>,
    pub label: Label,
    pub node_meta: Vec<Option<NodeMeta>>,
}

impl PropagationGraph {
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn out_degree(&self, node: u32) -> usize {
        self.edges.iter().filter(|(s, _)| *s == node).count()
    }

    pub fn in_degree(&self, node: u32) -> usize {
        self.edges.iter().filter(|(_, d)| *d == node).count()
    }

    /// Checks the structural invariants that hold for every well-formed
    /// propagation graph.
    pub fn validate(&self) -> Result<(), String> {
        if self.features.nrows() != self.n || self.node_meta.len() != self.n {
            return Err(format!(
                "inconsistent sizes: n={}, feature rows={}, meta rows={}",
                self.n,
                self.features.nrows(),
                self.node_meta.len()
            ));
        }
        if self.n == 0 {
            return Err("empty graph".into());
        }
        if self.node_meta[0].is_some() {
            return Err("news node must have empty meta".into());
        }
        if self.features.row(0).iter().any(|&v| v != 0.0) {
            return Err("news node feature row must be all zeros".into());
        }
        for &(s, d) in &self.edges {
            if s as usize >= self.n || d as usize >= self.n {
                return Err(format!("edge ({s},{d}) out of range n={}", self.n));
            }
            if s == d {
                return Err(format!("self-loop at node {s}"));
            }
            if d == 0 {
                return Err("news node must have no incoming edges".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CascadeError {
    #[error("retweet {tweet_id} references missing root {root_tweet_id}")]
    OrphanRetweet {
        tweet_id: String,
        root_tweet_id: String,
    },
    #[error("tweets span multiple news ids ({first} and {second})")]
    MixedNews { first: String, second: String },
    #[error("tweet {tweet_id} references user {user_id} absent from the user map")]
    UnknownUser { tweet_id: String, user_id: String },
    #[error("retweet {tweet_id} is timestamped before its root {root_tweet_id}")]
    RetweetBeforeRoot {
        tweet_id: String,
        root_tweet_id: String,
    },
    #[error("feature row {row} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("clip bounds eliminate all tweets")]
    EmptyResult,
}

/// Groups one news item's tweets into cascades, one per root tweet.
///
/// Every cascade is sorted ascending by `(timestamp_s, tweet_id)` and the
/// returned cascades are themselves ordered by their root's sort key, so the
/// result is deterministic for any input order.
pub fn group_cascades(tweets: &[TweetRecord]) -> Result<Vec<Cascade>, CascadeError> {
    if tweets.is_empty() {
        return Ok(Vec::new());
    }
    let news_id = &tweets[0].news_id;
    if let Some(other) = tweets.iter().find(|t| &t.news_id != news_id) {
        return Err(CascadeError::MixedNews {
            first: news_id.clone(),
            second: other.news_id.clone(),
        });
    }

    let mut by_root: BTreeMap<&str, Vec<&TweetRecord>> = BTreeMap::new();
    for t in tweets {
        if t.is_root() {
            by_root.entry(&t.tweet_id).or_default();
        }
    }
    for t in tweets {
        if let Some(root_id) = &t.root_tweet_id {
            match by_root.get_mut(root_id.as_str()) {
                Some(members) => members.push(t),
                None => {
                    return Err(CascadeError::OrphanRetweet {
                        tweet_id: t.tweet_id.clone(),
                        root_tweet_id: root_id.clone(),
                    })
                }
            }
        }
    }

    let mut cascades = Vec::with_capacity(by_root.len());
    for t in tweets.iter().filter(|t| t.is_root()) {
        let mut members: Vec<TweetRecord> = vec![t.clone()];
        members.extend(by_root[t.tweet_id.as_str()].iter().map(|r| (*r).clone()));
        members.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        if !members[0].is_root() {
            return Err(CascadeError::RetweetBeforeRoot {
                tweet_id: members[0].tweet_id.clone(),
                root_tweet_id: t.tweet_id.clone(),
            });
        }
        cascades.push(Cascade {
            root_tweet_id: t.tweet_id.clone(),
            tweets: members,
        });
    }
    cascades.sort_by(|a, b| a.tweets[0].order_key().cmp(&b.tweets[0].order_key()));
    Ok(cascades)
}

/// Infers directed intra-cascade edges between tweet positions `(i, j)` with
/// `i` earlier than `j`.
///
/// An edge `i -> j` exists iff (a) tweet `i` mentions the user of tweet `j`,
/// or (b) tweet `i` is public and `j` was posted within `time_window_h` hours
/// after `i`, or (c) `use_follow` is set and user `j` follows user `i`.
/// Returned pairs are indices into `cascade.tweets`. The root (position 0)
/// can never receive an intra-cascade edge. `time_window_h` is meaningful in
/// the 1..=10 hour range.
pub fn infer_edges(
    cascade: &Cascade,
    users: &BTreeMap<String, UserProfile>,
    time_window_h: u32,
    use_follow: bool,
) -> Result<BTreeSet<(usize, usize)>, CascadeError> {
    for t in &cascade.tweets {
        if !users.contains_key(&t.user_id) {
            return Err(CascadeError::UnknownUser {
                tweet_id: t.tweet_id.clone(),
                user_id: t.user_id.clone(),
            });
        }
    }
    let window_s = i64::from(time_window_h) * 3600;
    let mut edges = BTreeSet::new();
    for i in 0..cascade.tweets.len() {
        let ti = &cascade.tweets[i];
        for j in (i + 1)..cascade.tweets.len() {
            let tj = &cascade.tweets[j];
            let mentions = ti.mentioned_user_ids.contains(&tj.user_id);
            let in_window = ti.is_public && tj.timestamp_s - ti.timestamp_s <= window_s;
            let follows = use_follow && users[&tj.user_id].follows.contains(&ti.user_id);
            if mentions || in_window || follows {
                edges.insert((i, j));
            }
        }
    }
    Ok(edges)
}

/// Keeps the prefix of a globally sorted tweet sequence that satisfies both
/// clip bounds; the hour bound is measured inclusively from the earliest
/// tweet of the news item.
pub fn clip_tweets(
    tweets: &[TweetRecord],
    spec: &ClipSpec,
) -> Result<Vec<TweetRecord>, CascadeError> {
    debug_assert!(spec.is_valid(), "clip spec must carry at least one bound");
    debug_assert!(
        tweets.windows(2).all(|w| w[0].order_key() <= w[1].order_key()),
        "clip input must be globally sorted"
    );
    if tweets.is_empty() {
        return Err(CascadeError::EmptyResult);
    }
    let t0 = tweets[0].timestamp_s;
    let keep_count = spec.max_tweets.unwrap_or(usize::MAX);
    let keep_until = spec
        .max_hours
        .map(|h| t0 + i64::from(h) * 3600)
        .unwrap_or(i64::MAX);
    let kept: Vec<TweetRecord> = tweets
        .iter()
        .take(keep_count)
        .take_while(|t| t.timestamp_s <= keep_until)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(CascadeError::EmptyResult);
    }
    Ok(kept)
}

/// Assembles cascades, their inferred edge sets and per-node feature rows
/// into one propagation graph.
///
/// `feature_rows` must be in global tweet order (the node-numbering order),
/// one row per tweet node; the news node's zero row is added here.
pub fn assemble_graph(
    news_id: &str,
    label: Label,
    cascades: &[Cascade],
    edge_sets: &[BTreeSet<(usize, usize)>],
    feature_rows: &[Vec<f64>],
) -> Result<PropagationGraph, CascadeError> {
    assert_eq!(
        cascades.len(),
        edge_sets.len(),
        "one edge set per cascade required"
    );
    let total_tweets: usize = cascades.iter().map(Cascade::len).sum();
    assert_eq!(
        feature_rows.len(),
        total_tweets,
        "one feature row per tweet node required"
    );

    let d = feature_rows.first().map_or(0, Vec::len);
    for (row, fr) in feature_rows.iter().enumerate() {
        if fr.len() != d {
            return Err(CascadeError::DimensionMismatch {
                row,
                got: fr.len(),
                expected: d,
            });
        }
    }

    // Global numbering: sort (cascade, position) pairs by tweet order key.
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(total_tweets);
    for (ci, c) in cascades.iter().enumerate() {
        for pi in 0..c.len() {
            order.push((ci, pi));
        }
    }
    order.sort_by(|a, b| {
        cascades[a.0].tweets[a.1]
            .order_key()
            .cmp(&cascades[b.0].tweets[b.1].order_key())
    });
    let mut global_id = vec![vec![0u32; 0]; cascades.len()];
    for (ci, c) in cascades.iter().enumerate() {
        global_id[ci] = vec![0; c.len()];
    }
    for (rank, &(ci, pi)) in order.iter().enumerate() {
        global_id[ci][pi] = (rank + 1) as u32;
    }

    let n = total_tweets + 1;
    let mut edges = BTreeSet::new();
    for (ci, set) in edge_sets.iter().enumerate() {
        for &(i, j) in set {
            edges.insert((global_id[ci][i], global_id[ci][j]));
        }
    }
    for (ci, _) in cascades.iter().enumerate() {
        edges.insert((0, global_id[ci][0]));
    }

    let mut features = Array2::<f64>::zeros((n, d));
    let mut node_meta: Vec<Option<NodeMeta>> = vec![None; n];
    for (rank, &(ci, pi)) in order.iter().enumerate() {
        let node = rank + 1;
        let t = &cascades[ci].tweets[pi];
        for (col, &v) in feature_rows[rank].iter().enumerate() {
            features[(node, col)] = v;
        }
        node_meta[node] = Some(NodeMeta {
            tweet_id: t.tweet_id.clone(),
            user_id: t.user_id.clone(),
            timestamp_s: t.timestamp_s,
        });
    }

    Ok(PropagationGraph {
        news_id: news_id.to_string(),
        n,
        edges,
        features,
        label,
        node_meta,
    })
}
