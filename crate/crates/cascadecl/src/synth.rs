//! Synthetic propagation-data generator: two structurally distinct
//! "regimes" stand in for real crawled corpora, so single-dataset
//! learning, cross-regime forgetting, and its mitigation can all be
//! demonstrated from scratch.
//!
//! The generator emits raw tweet and user records — not graphs — and runs
//! them through the real dataset builder, so every ingestion code path is
//! exercised. Cascades are Galton–Watson trees (Poisson offspring,
//! exponential waiting times); class signal comes from per-feature mean
//! shifts applied to fake items in the samplers' log space. The built-in
//! regimes keep the user-profile shifts identical and differ in structure
//! (cascade counts, branching factor, time scale) plus the direction of
//! the class-conditional timing shift — a structural property, since
//! timing decides which edges the time-window rule creates. Cross-regime
//! performance gaps are therefore attributable to propagation structure,
//! which is the effect the incremental experiments need to reproduce.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::GraphDataset;
use crate::builder::{build_dataset, BuildError, BuildOptions};
use crate::derive_seed;
use crate::features::{FeatureMode, PROFILE_DIM};
use crate::records::{Label, TweetRecord, UserProfile};

/// Per-cascade tweet cap: supercritical branching factors would otherwise
/// grow without bound.
pub const MAX_CASCADE_TWEETS: usize = 60;
/// Upper clamp on the sampled number of cascades per news item.
pub const MAX_CASCADES: usize = 64;

pub const GEN_MANIFEST_FILE: &str = "gen-manifest.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("degenerate regime config: {0}")]
    DegenerateRegime(String),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// Knobs for one synthetic regime. `fake_shift` holds additive shifts in
/// the samplers' log space (probability space for `verified`, log-gap
/// space for the tweet-offset entry), applied only when an item is fake;
/// the base distributions are fixed constants shared by every regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub name: String,
    pub n_news: usize,
    /// (mean, dispersion) of a rounded-normal cascade count, clamped to
    /// 1..=MAX_CASCADES.
    pub cascade_count_dist: (f64, f64),
    /// Expected retweets per tweet (Poisson offspring mean).
    pub branching: f64,
    /// Mean inter-tweet gap in seconds.
    pub time_scale_s: f64,
    /// Per-feature shifts for fake items, indexed like the profile
    /// feature vector.
    pub fake_shift: [f64; PROFILE_DIM],
    /// Probability that a tweet mentions the author of a later tweet in
    /// its cascade.
    pub mention_prob: f64,
    /// Fraction of items labeled fake.
    pub label_balance: f64,
    pub seed: u64,
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::DegenerateRegime(msg.to_string()));
        if self.n_news < 8 {
            return bad("n_news must be at least 8");
        }
        if !(self.label_balance > 0.0 && self.label_balance < 1.0) {
            return bad("label_balance must lie strictly between 0 and 1");
        }
        if !(self.cascade_count_dist.0 > 0.0) || self.cascade_count_dist.1 < 0.0 {
            return bad("expected cascade count must be positive (dispersion nonnegative)");
        }
        if !(self.time_scale_s > 0.0) {
            return bad("time_scale_s must be positive");
        }
        if !(self.branching >= 0.0 && self.branching.is_finite()) {
            return bad("branching must be a finite nonnegative number");
        }
        if !(0.0..=1.0).contains(&self.mention_prob) {
            return bad("mention_prob must lie in [0, 1]");
        }
        Ok(())
    }

    /// Indices of profile features with a nonzero class-conditional shift.
    pub fn shifted_features(&self) -> Vec<usize> {
        self.fake_shift
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Regime echo plus realized statistics of the emitted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub regime: RegimeConfig,
    pub graph_count: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub mean_nodes: f64,
    pub mean_edges: f64,
}

// Base sampling constants shared by all regimes: (ln-mean, ln-std) per
// log-normal profile feature, and the baseline verification rate.
const VERIFIED_RATE: f64 = 0.30;
const LN_CREATED_MONTHS: (f64, f64) = (3.2, 0.6); // ~24 months
const LN_FOLLOWERS: (f64, f64) = (5.3, 1.0); // ~200
const LN_FRIENDS: (f64, f64) = (5.0, 0.8); // ~150
const LN_LISTS: (f64, f64) = (1.1, 1.0); // ~3
const LN_FAVOURITES: (f64, f64) = (4.6, 1.2); // ~100
const LN_STATUSES: (f64, f64) = (6.2, 1.0); // ~500

fn sample_count(rng: &mut ChaCha8Rng, (mu, sigma): (f64, f64), shift: f64) -> u64 {
    let d = LogNormal::new(mu + shift, sigma).expect("valid log-normal");
    d.sample(rng).round().max(0.0) as u64
}

fn sample_profile(rng: &mut ChaCha8Rng, user_id: String, shift: &[f64; PROFILE_DIM]) -> UserProfile {
    let p_verified = (VERIFIED_RATE + shift[0]).clamp(0.01, 0.99);
    UserProfile {
        user_id,
        verified: rng.gen::<f64>() < p_verified,
        created_months: sample_count(rng, LN_CREATED_MONTHS, shift[1]).max(1) as u32,
        followers: sample_count(rng, LN_FOLLOWERS, shift[2]),
        friends: sample_count(rng, LN_FRIENDS, shift[3]),
        lists: sample_count(rng, LN_LISTS, shift[4]),
        favourites: sample_count(rng, LN_FAVOURITES, shift[5]),
        statuses: sample_count(rng, LN_STATUSES, shift[6]),
        follows: BTreeSet::new(),
    }
}

const NO_SHIFT: [f64; PROFILE_DIM] = [0.0; PROFILE_DIM];

/// Raw records for one regime: tweets, user profiles and labels, ready
/// for the dataset builder. Deterministic in the regime seed; every item
/// draws from its own sub-stream.
pub fn emit_records(
    regime: &RegimeConfig,
) -> Result<
    (
        Vec<TweetRecord>,
        BTreeMap<String, UserProfile>,
        BTreeMap<String, Label>,
    ),
    SynthError,
> {
    regime.validate()?;

    // Deterministic label assignment at the exact configured balance.
    let n = regime.n_news;
    let n_fake = ((regime.label_balance * n as f64).round() as usize).clamp(1, n - 1);
    let mut item_labels = vec![Label::Fake; n_fake];
    item_labels.resize(n, Label::Real);
    let mut label_rng = ChaCha8Rng::seed_from_u64(derive_seed(regime.seed, 1));
    item_labels.shuffle(&mut label_rng);

    let mut tweets = Vec::new();
    let mut users = BTreeMap::new();
    let mut labels = BTreeMap::new();

    for (item, &label) in item_labels.iter().enumerate() {
        let news_id = format!("{}-{item:05}", regime.name);
        labels.insert(news_id.clone(), label);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(regime.seed, 0x1_0000 + item as u64));
        let shift: &[f64; PROFILE_DIM] = if label == Label::Fake {
            &regime.fake_shift
        } else {
            &NO_SHIFT
        };

        // Fake items get "burstier" timing when the offset entry is
        // shifted: the mean gap scales by exp(shift).
        let gap_mean = regime.time_scale_s * shift[7].exp();
        let gap = Exp::new(1.0 / gap_mean).expect("positive gap mean");

        let (mean, dispersion) = regime.cascade_count_dist;
        let count_dist = Normal::new(mean, dispersion).expect("valid cascade count");
        let cascades = (count_dist.sample(&mut rng).round() as i64)
            .clamp(1, MAX_CASCADES as i64) as usize;

        let base_t = item as i64 * 100_000_000;
        let mut root_t = base_t;
        let mut counter = 0usize;
        for _ in 0..cascades {
            root_t += gap.sample(&mut rng).round().max(1.0) as i64;

            // Galton–Watson cascade: indices into `cascade` double as a
            // BFS queue; each tweet draws Poisson offspring.
            let mut cascade: Vec<(String, String, i64)> = Vec::new(); // (tweet, user, time)
            let make_ids = |c: usize| {
                (
                    format!("{news_id}-t{c:05}"),
                    format!("{news_id}-u{c:05}"),
                )
            };
            let (root_tweet, root_user) = make_ids(counter);
            counter += 1;
            cascade.push((root_tweet.clone(), root_user, root_t));
            let mut cursor = 0;
            while cursor < cascade.len() && cascade.len() < MAX_CASCADE_TWEETS {
                let parent_t = cascade[cursor].2;
                let offspring = if regime.branching > 0.0 {
                    Poisson::new(regime.branching)
                        .expect("positive branching")
                        .sample(&mut rng) as usize
                } else {
                    0
                };
                for _ in 0..offspring {
                    if cascade.len() >= MAX_CASCADE_TWEETS {
                        break;
                    }
                    let t = parent_t + gap.sample(&mut rng).round().max(1.0) as i64;
                    let (tweet_id, user_id) = make_ids(counter);
                    counter += 1;
                    cascade.push((tweet_id, user_id, t));
                }
                cursor += 1;
            }

            // Mentions: a tweet may name the author of a later tweet in
            // the same cascade, which the edge rules turn into an edge.
            // Both draws happen unconditionally so that mention_prob only
            // toggles inclusion and never shifts the random stream — two
            // regimes differing only in mention_prob share cascade
            // structure and profiles exactly.
            let mut mentions: Vec<BTreeSet<String>> = vec![BTreeSet::new(); cascade.len()];
            for p in 0..cascade.len().saturating_sub(1) {
                let fire = rng.gen::<f64>() < regime.mention_prob;
                let q = rng.gen_range(p + 1..cascade.len());
                if fire {
                    mentions[p].insert(cascade[q].1.clone());
                }
            }

            for (c, (tweet_id, user_id, t)) in cascade.into_iter().enumerate() {
                users.insert(user_id.clone(), sample_profile(&mut rng, user_id.clone(), shift));
                tweets.push(TweetRecord {
                    tweet_id,
                    news_id: news_id.clone(),
                    user_id,
                    timestamp_s: t,
                    root_tweet_id: if c == 0 { None } else { Some(root_tweet.clone()) },
                    mentioned_user_ids: std::mem::take(&mut mentions[c]),
                    is_public: true,
                });
            }
        }
    }
    Ok((tweets, users, labels))
}

/// Generates a regime's dataset by running its raw records through the
/// real builder pipeline (strict mode: the generator guarantees its
/// records are well-formed).
pub fn generate(regime: &RegimeConfig) -> Result<(GraphDataset, GeneratorManifest), SynthError> {
    let (tweets, users, labels) = emit_records(regime)?;
    let opts = BuildOptions {
        feature_mode: FeatureMode::ProfileOnly,
        strict: true,
        ..BuildOptions::default()
    };
    let outcome = build_dataset(&tweets, &users, None, &labels, &opts)?;
    debug_assert!(
        outcome.warnings.is_empty(),
        "generator records must build cleanly: {:?}",
        outcome.warnings
    );
    let mut dataset = outcome.dataset;
    dataset.manifest.source = format!("synthetic:{}", regime.name);
    let manifest = GeneratorManifest {
        regime: regime.clone(),
        graph_count: dataset.len(),
        label_counts: dataset.manifest.label_counts.clone(),
        mean_nodes: dataset.manifest.mean_nodes,
        mean_edges: dataset.manifest.mean_edges,
    };
    Ok((dataset, manifest))
}

/// The two built-in regimes: identical user-profile class shifts but
/// opposite structural profiles. Regime A grows few, deep, fast cascades;
/// regime B grows many, shallow, slow ones.
///
/// The timing entry of `fake_shift` deliberately points in opposite
/// directions: fake news spreads in fast bursts in regime A but stalls in
/// regime B. Timing is a structural property — through the time-window
/// rule it decides which edges exist — so the two regimes demand
/// conflicting structural decision rules from one model. That conflict is
/// what makes naive incremental training forget the first regime, while
/// the shared (deliberately mild) profile shifts give continual methods a
/// task-neutral channel to keep learning through.
pub fn default_regimes() -> (RegimeConfig, RegimeConfig) {
    let profile_shift = [-0.07, -0.12, -0.27, 0.15, -0.18, 0.0, 0.12];
    let mut fake_shift_a: [f64; PROFILE_DIM] = [0.0; PROFILE_DIM];
    fake_shift_a[..7].copy_from_slice(&profile_shift);
    let mut fake_shift_b = fake_shift_a;
    fake_shift_a[7] = -1.2; // bursty: gaps shrink to ~30%
    fake_shift_b[7] = 1.2; // stalling: gaps stretch to ~330%
    let a = RegimeConfig {
        name: "regime-a".into(),
        n_news: 400,
        cascade_count_dist: (3.0, 1.0),
        branching: 1.5,
        time_scale_s: 600.0,
        fake_shift: fake_shift_a,
        mention_prob: 0.3,
        label_balance: 0.5,
        seed: 0xA11CE,
    };
    let b = RegimeConfig {
        name: "regime-b".into(),
        n_news: 400,
        cascade_count_dist: (12.0, 2.0),
        branching: 0.6,
        time_scale_s: 18_000.0,
        fake_shift: fake_shift_b,
        mention_prob: 0.1,
        label_balance: 0.5,
        seed: 0xB0B,
    };
    (a, b)
}
