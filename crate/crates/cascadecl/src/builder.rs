//! End-to-end dataset construction: raw tweet/user/timeline records in,
//! labeled propagation graphs out.
//!
//! Per news item the pipeline is: sort globally, apply the optional
//! early-detection clip, drop retweets orphaned by the clip, group into
//! cascades, infer intra-cascade edges, extract per-node features and
//! assemble the graph. Items with corrupt data are skipped with a warning
//! (or fail the whole build under `strict`), and every drop is counted in
//! the manifest.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::archive::{DatasetManifest, GraphDataset, ARCHIVE_FORMAT_VERSION};
use crate::cascade::{
    assemble_graph, clip_tweets, group_cascades, infer_edges, CascadeError, ClipSpec,
    PropagationGraph,
};
use crate::features::{
    assemble_features, build_mention_graph, profile_features, timeline_features, FeatureMode,
    MentionGraph, ProfileFeatures, TimelineFeatures,
};
use crate::records::{Label, TimelineRecord, TweetRecord, UserProfile};

/// Knobs of the record-to-graph pipeline.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub feature_mode: FeatureMode,
    /// Time-window edge rule bound in hours; meaningful range 1..=10.
    pub time_window_h: u32,
    /// Enables the follower-edge rule (user j follows user i).
    pub use_follow: bool,
    pub clip: Option<ClipSpec>,
    /// Fail the whole build on the first bad news item instead of skipping.
    pub strict: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            feature_mode: FeatureMode::ProfileOnly,
            time_window_h: 5,
            use_follow: false,
            clip: None,
            strict: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("no news items")]
    NoNewsItems,
    #[error("feature mode `{0}` requires timeline data but none was provided")]
    MissingTimelines(FeatureMode),
    #[error("time window must be within 1..=10 hours, got {0}")]
    InvalidWindow(u32),
    #[error("clip spec must carry at least one bound with max_tweets >= 1")]
    InvalidClip,
    #[error("news item {news_id}: {message}")]
    Item { news_id: String, message: String },
}

/// A successful build: the dataset plus human-readable warnings about
/// skipped or degraded items, in deterministic news-id order.
#[derive(Debug)]
pub struct BuildOutcome {
    pub dataset: GraphDataset,
    pub warnings: Vec<String>,
}

enum ItemOutcome {
    Built {
        graph: PropagationGraph,
        orphaned_dropped: usize,
        missing_timeline_nodes: usize,
    },
    DroppedEmptyClip,
    Failed(String),
}

/// Builds one labeled propagation graph per news item found in `tweets`.
///
/// `timelines` is required for timeline-bearing feature modes. Items without
/// a label, with orphan retweets or with unknown users are skipped and
/// reported (or abort the build under `strict`); items clipped to nothing
/// are dropped and counted.
pub fn build_dataset(
    tweets: &[TweetRecord],
    users: &BTreeMap<String, UserProfile>,
    timelines: Option<&BTreeMap<String, TimelineRecord>>,
    labels: &BTreeMap<String, Label>,
    opts: &BuildOptions,
) -> Result<BuildOutcome, BuildError> {
    if !(1..=10).contains(&opts.time_window_h) {
        return Err(BuildError::InvalidWindow(opts.time_window_h));
    }
    if let Some(clip) = &opts.clip {
        if !clip.is_valid() {
            return Err(BuildError::InvalidClip);
        }
    }
    if opts.feature_mode.needs_timelines() && timelines.is_none() {
        return Err(BuildError::MissingTimelines(opts.feature_mode));
    }
    if tweets.is_empty() {
        return Err(BuildError::NoNewsItems);
    }

    let mention_graph = timelines.map(build_mention_graph);

    let mut by_news: BTreeMap<&str, Vec<&TweetRecord>> = BTreeMap::new();
    for t in tweets {
        by_news.entry(t.news_id.as_str()).or_default().push(t);
    }
    let items: Vec<(&str, Vec<&TweetRecord>)> = by_news.into_iter().collect();

    let outcomes: Vec<(String, ItemOutcome)> = items
        .par_iter()
        .map(|(news_id, item_tweets)| {
            let outcome = build_one(
                news_id,
                item_tweets,
                users,
                timelines,
                mention_graph.as_ref(),
                labels,
                opts,
            );
            (news_id.to_string(), outcome)
        })
        .collect();

    let mut graphs = Vec::new();
    let mut warnings = Vec::new();
    let mut dropped_empty_clip = 0usize;
    let mut dropped_invalid = 0usize;
    let mut orphaned_retweets_dropped = 0usize;
    let mut missing_timeline_nodes = 0usize;
    for (news_id, outcome) in outcomes {
        match outcome {
            ItemOutcome::Built {
                graph,
                orphaned_dropped,
                missing_timeline_nodes: missing,
            } => {
                if orphaned_dropped > 0 {
                    warnings.push(format!(
                        "news item {news_id}: dropped {orphaned_dropped} retweet(s) whose root was clipped away"
                    ));
                }
                orphaned_retweets_dropped += orphaned_dropped;
                missing_timeline_nodes += missing;
                graphs.push(graph);
            }
            ItemOutcome::DroppedEmptyClip => {
                dropped_empty_clip += 1;
                warnings.push(format!(
                    "news item {news_id}: dropped (clip bounds eliminate all tweets)"
                ));
            }
            ItemOutcome::Failed(message) => {
                if opts.strict {
                    return Err(BuildError::Item { news_id, message });
                }
                dropped_invalid += 1;
                warnings.push(format!("news item {news_id}: skipped ({message})"));
            }
        }
    }

    if graphs.is_empty() {
        return Err(BuildError::NoNewsItems);
    }

    let manifest = summarize(
        &graphs,
        opts,
        dropped_empty_clip,
        dropped_invalid,
        orphaned_retweets_dropped,
        missing_timeline_nodes,
        "build",
    );
    Ok(BuildOutcome {
        dataset: GraphDataset { graphs, manifest },
        warnings,
    })
}

/// Recomputes the manifest statistics from a finished graph list.
pub fn summarize(
    graphs: &[PropagationGraph],
    opts: &BuildOptions,
    dropped_empty_clip: usize,
    dropped_invalid: usize,
    orphaned_retweets_dropped: usize,
    missing_timeline_nodes: usize,
    source: &str,
) -> DatasetManifest {
    let count = graphs.len().max(1) as f64;
    let mut label_counts = BTreeMap::new();
    for g in graphs {
        *label_counts.entry(g.label.to_string()).or_insert(0usize) += 1;
    }
    DatasetManifest {
        format_version: ARCHIVE_FORMAT_VERSION,
        feature_mode: opts.feature_mode,
        feature_dim: opts.feature_mode.dim(),
        graph_count: graphs.len(),
        label_counts,
        mean_nodes: graphs.iter().map(|g| g.n as f64).sum::<f64>() / count,
        mean_edges: graphs.iter().map(|g| g.edges.len() as f64).sum::<f64>() / count,
        time_window_h: opts.time_window_h,
        use_follow: opts.use_follow,
        clip: opts.clip,
        dropped_empty_clip,
        dropped_invalid,
        orphaned_retweets_dropped,
        missing_timeline_nodes,
        source: source.to_string(),
    }
}

fn build_one(
    news_id: &str,
    item_tweets: &[&TweetRecord],
    users: &BTreeMap<String, UserProfile>,
    timelines: Option<&BTreeMap<String, TimelineRecord>>,
    mention_graph: Option<&MentionGraph>,
    labels: &BTreeMap<String, Label>,
    opts: &BuildOptions,
) -> ItemOutcome {
    let label = match labels.get(news_id) {
        Some(l) => *l,
        None => return ItemOutcome::Failed("no label for this news id".into()),
    };

    let mut seen = BTreeSet::new();
    for t in item_tweets {
        if !seen.insert(t.tweet_id.as_str()) {
            return ItemOutcome::Failed(format!("duplicate tweet id {}", t.tweet_id));
        }
    }

    let mut sorted: Vec<TweetRecord> = item_tweets.iter().map(|t| (*t).clone()).collect();
    sorted.sort_by(|a, b| a.order_key().cmp(&b.order_key()));

    let mut orphaned_dropped = 0usize;
    let kept = match &opts.clip {
        Some(spec) => match clip_tweets(&sorted, spec) {
            Ok(mut kept) => {
                // A clip can separate a retweet from its root only through
                // timestamp ties; such strays cannot be attached any more.
                let roots: BTreeSet<String> = kept
                    .iter()
                    .filter(|t| t.is_root())
                    .map(|t| t.tweet_id.clone())
                    .collect();
                let before = kept.len();
                kept.retain(|t| match &t.root_tweet_id {
                    Some(r) => roots.contains(r),
                    None => true,
                });
                orphaned_dropped = before - kept.len();
                if kept.is_empty() {
                    return ItemOutcome::DroppedEmptyClip;
                }
                kept
            }
            Err(CascadeError::EmptyResult) => return ItemOutcome::DroppedEmptyClip,
            Err(e) => return ItemOutcome::Failed(e.to_string()),
        },
        None => sorted,
    };

    let cascades = match group_cascades(&kept) {
        Ok(c) => c,
        Err(e) => return ItemOutcome::Failed(e.to_string()),
    };
    let mut edge_sets = Vec::with_capacity(cascades.len());
    for c in &cascades {
        match infer_edges(c, users, opts.time_window_h, opts.use_follow) {
            Ok(set) => edge_sets.push(set),
            Err(e) => return ItemOutcome::Failed(e.to_string()),
        }
    }

    // Feature rows in global node order = the globally sorted tweet order.
    let t0 = kept[0].timestamp_s;
    let mut profile_rows: Vec<ProfileFeatures> = Vec::with_capacity(kept.len());
    let mut timeline_rows: Vec<Option<TimelineFeatures>> = Vec::with_capacity(kept.len());
    for t in &kept {
        let user = &users[&t.user_id]; // presence checked by infer_edges
        match profile_features(user, t, t0) {
            Ok(row) => profile_rows.push(row),
            Err(e) => return ItemOutcome::Failed(e.to_string()),
        }
        if opts.feature_mode.needs_timelines() {
            let row = timelines
                .and_then(|tl| tl.get(&t.user_id))
                .map(|rec| {
                    timeline_features(
                        mention_graph.expect("mention graph built for timeline modes"),
                        &t.user_id,
                        rec.timeline_tweet_count,
                    )
                    .expect("timeline owner is a mention-graph node")
                });
            timeline_rows.push(row);
        }
    }
    let (rows, missing_timeline_nodes) =
        assemble_features(opts.feature_mode, &profile_rows, &timeline_rows);

    match assemble_graph(news_id, label, &cascades, &edge_sets, &rows) {
        Ok(graph) => {
            debug_assert_eq!(graph.validate(), Ok(()));
            ItemOutcome::Built {
                graph,
                orphaned_dropped,
                missing_timeline_nodes,
            }
        }
        Err(e) => ItemOutcome::Failed(e.to_string()),
    }
}
