//! Per-node feature extraction and dataset-level normalization.
//!
//! Two non-textual feature families are supported: an 8-dimensional profile
//! vector read off the posting user's account, and a 7-dimensional vector of
//! structural statistics from a global user-mention graph built out of
//! per-user timelines. Either family can be used alone or concatenated.
//! Normalization is a per-column z-score fitted on training data only, with
//! the binary `verified` column exempt.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::PropagationGraph;
use crate::records::{TimelineRecord, TweetRecord, UserProfile};

pub const PROFILE_DIM: usize = 8;
pub const TIMELINE_DIM: usize = 7;

/// Profile vector layout:
/// `[verified, created_months, followers, friends, lists, favourites,
/// statuses, tweet_offset_s]`.
pub type ProfileFeatures = [f64; PROFILE_DIM];

/// Timeline vector layout:
/// `[in_degree, out_degree, weighted_in, weighted_out, hop2_in, hop2_out,
/// timeline_tweet_count]`.
pub type TimelineFeatures = [f64; TIMELINE_DIM];

/// Which feature family (or both concatenated) a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    ProfileOnly,
    TimelineOnly,
    Combined,
}

impl FeatureMode {
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::ProfileOnly => PROFILE_DIM,
            FeatureMode::TimelineOnly => TIMELINE_DIM,
            FeatureMode::Combined => PROFILE_DIM + TIMELINE_DIM,
        }
    }

    /// Columns that z-scoring must leave untouched (binary indicators).
    pub fn exempt_columns(self) -> &'static [usize] {
        match self {
            FeatureMode::ProfileOnly | FeatureMode::Combined => &[0],
            FeatureMode::TimelineOnly => &[],
        }
    }

    pub fn needs_timelines(self) -> bool {
        !matches!(self, FeatureMode::ProfileOnly)
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "profile" | "profile-only" => Ok(FeatureMode::ProfileOnly),
            "timeline" | "timeline-only" => Ok(FeatureMode::TimelineOnly),
            "combined" => Ok(FeatureMode::Combined),
            other => Err(format!(
                "unknown feature mode `{other}` (expected profile, timeline or combined)"
            )),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::ProfileOnly => "profile",
            FeatureMode::TimelineOnly => "timeline",
            FeatureMode::Combined => "combined",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("tweet {tweet_id} is timestamped {offset_s}s before the first tweet of its news item")]
    NegativeOffset { tweet_id: String, offset_s: i64 },
    #[error("user {user_id} is not a node of the mention graph")]
    UnknownUser { user_id: String },
}

/// Reads the 8 profile features for one tweet; `t0` is the timestamp of the
/// earliest tweet referencing the same news item, so the earliest tweet gets
/// offset 0.
pub fn profile_features(
    user: &UserProfile,
    tweet: &TweetRecord,
    t0: i64,
) -> Result<ProfileFeatures, FeatureError> {
    let offset_s = tweet.timestamp_s - t0;
    if offset_s < 0 {
        return Err(FeatureError::NegativeOffset {
            tweet_id: tweet.tweet_id.clone(),
            offset_s,
        });
    }
    Ok([
        if user.verified { 1.0 } else { 0.0 },
        user.created_months as f64,
        user.followers as f64,
        user.friends as f64,
        user.lists as f64,
        user.favourites as f64,
        user.statuses as f64,
        offset_s as f64,
    ])
}

/// Weighted directed graph over user ids: an edge `i -> j` means user `i`
/// mentioned user `j` in their timeline, with the weight counting how often.
/// Mentioned users are nodes even when they have no timeline of their own.
#[derive(Debug, Clone, Default)]
pub struct MentionGraph {
    nodes: BTreeSet<String>,
    out: BTreeMap<String, BTreeMap<String, u64>>,
    inn: BTreeMap<String, BTreeMap<String, u64>>,
}

impl MentionGraph {
    pub fn contains(&self, user: &str) -> bool {
        self.nodes.contains(user)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.values().map(BTreeMap::len).sum()
    }

    pub fn weight(&self, from: &str, to: &str) -> Option<u64> {
        self.out.get(from).and_then(|m| m.get(to)).copied()
    }

    fn out_neighbours(&self, user: &str) -> impl Iterator<Item = &str> {
        self.out.get(user).into_iter().flatten().map(|(k, _)| k.as_str())
    }

    fn in_neighbours(&self, user: &str) -> impl Iterator<Item = &str> {
        self.inn.get(user).into_iter().flatten().map(|(k, _)| k.as_str())
    }
}

/// Distinct nodes at directed distance exactly 2 from `user` in the given
/// adjacency map, excluding `user` and its direct neighbours.
fn hop2_count(adjacency: &BTreeMap<String, BTreeMap<String, u64>>, user: &str) -> usize {
    let direct: BTreeSet<&str> = adjacency
        .get(user)
        .into_iter()
        .flat_map(|m| m.keys().map(String::as_str))
        .collect();
    let mut second = BTreeSet::new();
    for v in &direct {
        if let Some(next) = adjacency.get(*v) {
            for w in next.keys() {
                if w != user && !direct.contains(w.as_str()) {
                    second.insert(w.as_str());
                }
            }
        }
    }
    second.len()
}

/// Builds the global mention graph from per-user timelines. Self-mentions
/// are dropped; repeated mentions accumulate into the edge weight.
pub fn build_mention_graph(timelines: &BTreeMap<String, TimelineRecord>) -> MentionGraph {
    let mut g = MentionGraph::default();
    for (user_id, record) in timelines {
        g.nodes.insert(user_id.clone());
        for mentioned in &record.mentions {
            if mentioned == user_id {
                continue;
            }
            g.nodes.insert(mentioned.clone());
            *g.out
                .entry(user_id.clone())
                .or_default()
                .entry(mentioned.clone())
                .or_insert(0) += 1;
            *g.inn
                .entry(mentioned.clone())
                .or_default()
                .entry(user_id.clone())
                .or_insert(0) += 1;
        }
    }
    g
}

/// Computes the 7 mention-graph statistics for one user. Hop-2 neighbours
/// are the distinct nodes at directed distance exactly 2 — the user itself
/// and direct neighbours are excluded.
pub fn timeline_features(
    g: &MentionGraph,
    user: &str,
    timeline_count: u32,
) -> Result<TimelineFeatures, FeatureError> {
    if !g.contains(user) {
        return Err(FeatureError::UnknownUser {
            user_id: user.to_string(),
        });
    }
    let in_deg = g.in_neighbours(user).count();
    let out_deg = g.out_neighbours(user).count();
    let weighted_in: u64 = g
        .inn
        .get(user)
        .map(|m| m.values().sum())
        .unwrap_or(0);
    let weighted_out: u64 = g
        .out
        .get(user)
        .map(|m| m.values().sum())
        .unwrap_or(0);

    let hop2_in = hop2_count(&g.inn, user);
    let hop2_out = hop2_count(&g.out, user);

    Ok([
        in_deg as f64,
        out_deg as f64,
        weighted_in as f64,
        weighted_out as f64,
        hop2_in as f64,
        hop2_out as f64,
        f64::from(timeline_count),
    ])
}

/// Concatenates the per-node feature families according to `mode`. A `None`
/// timeline entry (user without timeline data) zero-fills the timeline
/// segment; the second return value counts how many nodes were affected.
pub fn assemble_features(
    mode: FeatureMode,
    profile_rows: &[ProfileFeatures],
    timeline_rows: &[Option<TimelineFeatures>],
) -> (Vec<Vec<f64>>, usize) {
    if mode.needs_timelines() {
        assert_eq!(
            profile_rows.len(),
            timeline_rows.len(),
            "one timeline entry per node required"
        );
    }
    let mut missing = 0usize;
    let rows = profile_rows
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = Vec::with_capacity(mode.dim());
            if matches!(mode, FeatureMode::ProfileOnly | FeatureMode::Combined) {
                row.extend_from_slice(p);
            }
            if mode.needs_timelines() {
                match &timeline_rows[i] {
                    Some(t) => row.extend_from_slice(t),
                    None => {
                        missing += 1;
                        row.extend_from_slice(&[0.0; TIMELINE_DIM]);
                    }
                }
            }
            row
        })
        .collect();
    (rows, missing)
}

/// Per-column z-score parameters fitted on a training split. Constant
/// columns (std = 0) and exempt binary columns pass through unchanged when
/// applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: FeatureMode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits mean and population standard deviation per column over the
    /// tweet-node rows (row 0, the news node, is skipped) of the given
    /// graphs.
    pub fn fit(graphs: &[PropagationGraph], mode: FeatureMode) -> NormStats {
        let d = mode.dim();
        let mut mean = vec![0.0; d];
        let mut count = 0u64;
        for g in graphs {
            for row in g.features.rows().into_iter().skip(1) {
                for (c, &v) in row.iter().enumerate() {
                    mean[c] += v;
                }
                count += 1;
            }
        }
        if count > 0 {
            for m in &mut mean {
                *m /= count as f64;
            }
        }
        let mut var = vec![0.0; d];
        for g in graphs {
            for row in g.features.rows().into_iter().skip(1) {
                for (c, &v) in row.iter().enumerate() {
                    var[c] += (v - mean[c]).powi(2);
                }
            }
        }
        let std = var
            .iter()
            .map(|&v| if count > 0 { (v / count as f64).sqrt() } else { 0.0 })
            .collect();
        NormStats { mode, mean, std }
    }

    /// Transforms one feature row in place.
    pub fn apply_row(&self, row: &mut [f64]) {
        let exempt = self.mode.exempt_columns();
        for (c, v) in row.iter_mut().enumerate() {
            if exempt.contains(&c) || self.std[c] == 0.0 {
                continue;
            }
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }

    /// Transforms every tweet-node row of a graph in place; the news node's
    /// zero row is left untouched.
    pub fn apply_graph(&self, g: &mut PropagationGraph) {
        for mut row in g.features.rows_mut().into_iter().skip(1) {
            self.apply_row(row.as_slice_mut().expect("contiguous feature row"));
        }
    }

    pub fn apply_all(&self, graphs: &mut [PropagationGraph]) {
        for g in graphs.iter_mut() {
            self.apply_graph(g);
        }
    }
}
