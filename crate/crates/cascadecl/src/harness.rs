//! The experiment protocol: stratified 75/25 splits, repeated
//! train/evaluate cycles with averaged metrics, two-phase incremental
//! scenarios, early-detection clipping sweeps, and report emission.
//!
//! Every run is a pure function of (spec, seed): each repeat re-derives
//! its split, its weight initialization and its shuffling from
//! [`derive_seed`] sub-streams, so re-running a spec reproduces the report
//! exactly (only the wall-clock field differs, and it is excluded from the
//! CSV form).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{DatasetManifest, GraphDataset};
use crate::builder::{build_dataset, BuildError, BuildOptions};
use crate::cascade::{ClipSpec, PropagationGraph};
use crate::checkpoint::{Checkpoint, CheckpointError, TrainMeta};
use crate::continual::{
    estimate_fisher, sample_indices, train_incremental, ContinualError, EpisodicMemory,
    EpochRecord, FisherState, Method, MethodState, EWC_PATIENCE,
};
use crate::derive_seed;
use crate::features::NormStats;
use crate::gnn::{DiffPoolModel, ModelConfig, ModelError};
use crate::metrics::{compute_metrics_detailed, mean_std, Metrics, MetricsError};
use crate::optim::{OptimError, TrainOptions};
use crate::records::{Label, TimelineRecord, TweetRecord, UserProfile};

pub const DEFAULT_REPEATS: u32 = 5;
pub const DEFAULT_TRAIN_FRAC: f64 = 0.75;
/// Fraction of a training split kept for training when a validation
/// holdout is carved out (EWC early stopping).
pub const VALIDATION_KEEP_FRAC: f64 = 0.9;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const HISTORY_CSV: &str = "history.csv";

// Sub-streams carved from each repeat's seed; evaluation re-derives splits
// from these, so the constants are part of the checkpoint contract.
// Sub-stream indices fed to `derive_seed(rep_seed, _)`. Their assignment
// is part of the checkpoint contract: every consumer draws from its own
// stream, so e.g. adding a GEM memory never perturbs the phase-1 split or
// initialization, and external code can reproduce any single stage.
pub const STREAM_SPLIT1: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_TRAIN1: u64 = 3;
pub const STREAM_MEMORY: u64 = 4;
pub const STREAM_FISHER: u64 = 5;
pub const STREAM_SPLIT2: u64 = 6;
pub const STREAM_VAL1: u64 = 7;
pub const STREAM_VAL2: u64 = 8;
pub const STREAM_TRAIN2: u64 = 9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset has {size} items; at least {minimum} required")]
    TooSmall { size: usize, minimum: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error(
        "checkpoint expects feature dimension {expected} but dataset has {got}"
    )]
    IncompatibleCheckpoint { expected: usize, got: usize },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Continual(#[from] ContinualError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded stratified split: the train side gets `ceil(frac·n)` items
/// (capped at n−1 so the test side is never empty), apportioned per label
/// by largest remainder — ties favour the lower class index. Item order
/// within each class is a seeded shuffle; the returned index lists are
/// sorted.
pub fn stratified_split(
    labels: &[Label],
    frac: f64,
    seed: u64,
) -> Result<SplitIndices, HarnessError> {
    let n = labels.len();
    if n < 4 {
        return Err(HarnessError::TooSmall {
            size: n,
            minimum: 4,
        });
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(HarnessError::InvalidFraction(frac));
    }
    let total_train = ((frac * n as f64).ceil() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut per_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in &order {
        per_class[labels[i].index()].push(i);
    }

    // Largest-remainder apportionment of the train quota over classes.
    let exact: Vec<f64> = per_class.iter().map(|c| frac * c.len() as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = total_train.saturating_sub(take.iter().sum::<usize>());
    let mut by_remainder: Vec<usize> = (0..2).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - take[a] as f64;
        let rb = exact[b] - take[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &c in by_remainder.iter().cycle().take(2) {
        if leftover == 0 {
            break;
        }
        if take[c] < per_class[c].len() {
            take[c] += 1;
            leftover -= 1;
        }
    }

    let mut train = Vec::with_capacity(total_train);
    let mut test = Vec::with_capacity(n - total_train);
    for (c, members) in per_class.iter().enumerate() {
        train.extend_from_slice(&members[..take[c]]);
        test.extend_from_slice(&members[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

// ---------------------------------------------------------------------------
// Specs and reports
// ---------------------------------------------------------------------------

/// Everything a run needs besides the data. Serialized verbatim into the
/// report so results stay attributable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub repeats: u32,
    pub seed: u64,
    pub train_frac: f64,
    pub model: ModelConfig,
    pub train: TrainOptions,
    /// Options for the incremental phase (phase 2); single-dataset runs
    /// ignore this.
    pub phase2: TrainOptions,
}

impl ExperimentSpec {
    pub fn new(model: ModelConfig) -> Self {
        ExperimentSpec {
            repeats: DEFAULT_REPEATS,
            seed: 0,
            train_frac: DEFAULT_TRAIN_FRAC,
            model,
            train: TrainOptions::default(),
            phase2: TrainOptions::default(),
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.repeats < 1 {
            return Err(HarnessError::InvalidSpec("repeats must be at least 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(HarnessError::InvalidFraction(self.train_frac));
        }
        Ok(())
    }
}

/// One measured test-set result: repeat × phase × dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRow {
    pub repeat: u32,
    /// 1 = after initial training, 2 = after incremental training.
    pub phase: u8,
    /// "task1" or "task2".
    pub dataset: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub phase: u8,
    pub dataset: String,
    pub mean: Metrics,
    pub std: Metrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub spec: ExperimentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub rows: Vec<RepeatRow>,
    pub summary: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Per-repeat epoch history of incremental runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub histories: Vec<Vec<EpochRecord>>,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    /// Groups rows by (phase, dataset) and attaches mean and population
    /// standard deviation over repeats.
    pub fn summarize(rows: &[RepeatRow]) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(u8, &str), Vec<Metrics>> = BTreeMap::new();
        for r in rows {
            groups
                .entry((r.phase, r.dataset.as_str()))
                .or_default()
                .push(r.metrics);
        }
        groups
            .into_iter()
            .map(|((phase, dataset), ms)| {
                let (mean, std) = mean_std(&ms);
                SummaryRow {
                    phase,
                    dataset: dataset.to_string(),
                    mean,
                    std,
                }
            })
            .collect()
    }

    /// Mean metrics for one (phase, dataset) group, if present.
    pub fn mean_of(&self, phase: u8, dataset: &str) -> Option<Metrics> {
        self.summary
            .iter()
            .find(|s| s.phase == phase && s.dataset == dataset)
            .map(|s| s.mean)
    }

    /// Mean accuracy drop on task 1 between phases (positive = forgetting).
    pub fn forgetting(&self) -> Option<f64> {
        let before = self.mean_of(1, "task1")?;
        let after = self.mean_of(2, "task1")?;
        Some(before.accuracy - after.accuracy)
    }

    /// Flat CSV form: one line per repeat row, then mean/std lines per
    /// group. Fixed six-decimal formatting keeps output byte-stable.
    pub fn csv(&self) -> String {
        let mut out = String::from("scenario,phase,dataset,repeat,acc,pre,rec,f1\n");
        let fmt = |m: &Metrics| {
            format!(
                "{:.6},{:.6},{:.6},{:.6}",
                m.accuracy, m.precision, m.recall, m.f1
            )
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.scenario,
                r.phase,
                r.dataset,
                r.repeat,
                fmt(&r.metrics)
            ));
        }
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},mean,{}\n",
                self.scenario,
                s.phase,
                s.dataset,
                fmt(&s.mean)
            ));
            out.push_str(&format!(
                "{},{},{},std,{}\n",
                self.scenario,
                s.phase,
                s.dataset,
                fmt(&s.std)
            ));
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir` atomically.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let io_err = |path: &Path, source: std::io::Error| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let json_path = dir.join(REPORT_JSON);
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        crate::archive::write_atomic(&json_path, json.as_bytes())
            .map_err(|e| io_err(&json_path, e))?;
        let csv_path = dir.join(REPORT_CSV);
        crate::archive::write_atomic(&csv_path, self.csv().as_bytes())
            .map_err(|e| io_err(&csv_path, e))?;
        Ok(())
    }
}

/// CSV form of one incremental run's epoch history.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,task1_acc,task1_pre,task1_rec,task1_f1,\
         task2_acc,task2_pre,task2_rec,task2_f1,constraint_violations\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.epoch,
            r.task1.accuracy,
            r.task1.precision,
            r.task1.recall,
            r.task1.f1,
            r.task2.accuracy,
            r.task2.precision,
            r.task2.recall,
            r.task2.f1,
            r.constraint_violations
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
}

/// Plain mini-batch training with patience-based early stopping on the
/// training loss. Shares its loop with the incremental methods (it is the
/// naive method against an empty evaluation hook).
pub fn train_plain(
    model: &mut DiffPoolModel,
    train: &[&PropagationGraph],
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainResult, HarnessError> {
    let out = train_incremental(model, train, &MethodState::Naive, opts, seed, &mut |_| {
        Ok((Metrics::ZERO, Metrics::ZERO))
    })?;
    Ok(TrainResult {
        epochs_run: out.epochs_run,
        train_losses: out.train_losses,
    })
}

fn labels_of(graphs: &[PropagationGraph]) -> Vec<Label> {
    graphs.iter().map(|g| g.label).collect()
}

/// Clones the selected graphs and applies normalization in place.
fn select_normalized(
    graphs: &[PropagationGraph],
    indices: &[usize],
    norm: &NormStats,
) -> Vec<PropagationGraph> {
    let mut out: Vec<PropagationGraph> = indices.iter().map(|&i| graphs[i].clone()).collect();
    norm.apply_all(&mut out);
    out
}

fn eval_metrics(
    model: &DiffPoolModel,
    graphs: &[PropagationGraph],
) -> Result<(Metrics, Vec<usize>), HarnessError> {
    let refs: Vec<&PropagationGraph> = graphs.iter().collect();
    let preds = model.predict_all(&refs)?;
    let truth: Vec<Label> = graphs.iter().map(|g| g.label).collect();
    let detail = compute_metrics_detailed(&preds, &truth)?;
    Ok((detail.summary, detail.undefined_precision))
}

/// Per-epoch history hook helper; the evaluation sets are never empty, so
/// the metrics computation cannot fail.
fn eval_summary(model: &DiffPoolModel, graphs: &[PropagationGraph]) -> Result<Metrics, ModelError> {
    let refs: Vec<&PropagationGraph> = graphs.iter().collect();
    let preds = model.predict_all(&refs)?;
    let truth: Vec<Label> = graphs.iter().map(|g| g.label).collect();
    Ok(crate::metrics::compute_metrics(&preds, &truth).expect("non-empty evaluation set"))
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// Single-dataset protocol: `repeats` independent split/init/train/test
/// cycles, averaged. Returns the report and a checkpoint of the last
/// repeat's model.
pub fn run_single(
    dataset: &GraphDataset,
    spec: &ExperimentSpec,
) -> Result<(ExperimentReport, Checkpoint), HarnessError> {
    run_single_named(dataset, spec, "single")
}

fn run_single_named(
    dataset: &GraphDataset,
    spec: &ExperimentSpec,
    scenario: &str,
) -> Result<(ExperimentReport, Checkpoint), HarnessError> {
    spec.validate()?;
    let start = Instant::now();
    let labels = labels_of(&dataset.graphs);
    let mode = dataset.manifest.feature_mode;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut last: Option<(DiffPoolModel, NormStats)> = None;

    for repeat in 0..spec.repeats {
        let rep_seed = derive_seed(spec.seed, repeat as u64);
        let split = stratified_split(&labels, spec.train_frac, derive_seed(rep_seed, STREAM_SPLIT1))?;

        let mut train_graphs: Vec<PropagationGraph> =
            split.train.iter().map(|&i| dataset.graphs[i].clone()).collect();
        let norm = NormStats::fit(&train_graphs, mode);
        norm.apply_all(&mut train_graphs);
        let test_graphs = select_normalized(&dataset.graphs, &split.test, &norm);

        let mut model = DiffPoolModel::new(spec.model.clone(), derive_seed(rep_seed, STREAM_INIT))?;
        let train_refs: Vec<&PropagationGraph> = train_graphs.iter().collect();
        train_plain(&mut model, &train_refs, &spec.train, derive_seed(rep_seed, STREAM_TRAIN1))?;

        let (metrics, undefined) = eval_metrics(&model, &test_graphs)?;
        for class in undefined {
            warnings.push(format!(
                "repeat {repeat}: class {class} precision undefined (no predictions), counted as 0"
            ));
        }
        rows.push(RepeatRow {
            repeat,
            phase: 1,
            dataset: "task1".into(),
            metrics,
        });
        last = Some((model, norm));
    }

    let (model, norm) = last.expect("at least one repeat");
    let checkpoint = Checkpoint {
        config: spec.model.clone(),
        params: model.flat_params(),
        adam: None,
        norms: vec![norm],
        meta: TrainMeta {
            seed: spec.seed,
            train_frac: spec.train_frac,
            repeat_index: spec.repeats - 1,
            phase: 1,
            method: "single".into(),
        },
    };
    let summary = ExperimentReport::summarize(&rows);
    Ok((
        ExperimentReport {
            scenario: scenario.to_string(),
            spec: spec.clone(),
            method: None,
            rows,
            summary,
            warnings,
            histories: Vec::new(),
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        checkpoint,
    ))
}

/// Two-phase cross-dataset protocol: per repeat, train on the first
/// dataset, measure both test sets, run the continual method on the
/// second dataset, measure both again.
pub fn run_incremental(
    d1: &GraphDataset,
    d2: &GraphDataset,
    spec: &ExperimentSpec,
    method: Method,
) -> Result<(ExperimentReport, Checkpoint), HarnessError> {
    spec.validate()?;
    if d1.manifest.feature_dim != d2.manifest.feature_dim {
        return Err(HarnessError::InvalidSpec(format!(
            "datasets disagree on feature dimension: {} vs {}",
            d1.manifest.feature_dim, d2.manifest.feature_dim
        )));
    }
    let start = Instant::now();
    let labels1 = labels_of(&d1.graphs);
    let labels2 = labels_of(&d2.graphs);
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut histories = Vec::new();
    let mut last: Option<(DiffPoolModel, NormStats, NormStats)> = None;

    for repeat in 0..spec.repeats {
        let rep_seed = derive_seed(spec.seed, repeat as u64);
        let split1 =
            stratified_split(&labels1, spec.train_frac, derive_seed(rep_seed, STREAM_SPLIT1))?;
        let split2 =
            stratified_split(&labels2, spec.train_frac, derive_seed(rep_seed, STREAM_SPLIT2))?;

        let mut train1: Vec<PropagationGraph> =
            split1.train.iter().map(|&i| d1.graphs[i].clone()).collect();
        let norm1 = NormStats::fit(&train1, d1.manifest.feature_mode);
        norm1.apply_all(&mut train1);
        let test1 = select_normalized(&d1.graphs, &split1.test, &norm1);

        let mut train2: Vec<PropagationGraph> =
            split2.train.iter().map(|&i| d2.graphs[i].clone()).collect();
        let norm2 = NormStats::fit(&train2, d2.manifest.feature_mode);
        norm2.apply_all(&mut train2);
        let test2 = select_normalized(&d2.graphs, &split2.test, &norm2);

        // Phase 1: plain training on the first dataset.
        let mut model = DiffPoolModel::new(spec.model.clone(), derive_seed(rep_seed, STREAM_INIT))?;
        let train1_refs: Vec<&PropagationGraph> = train1.iter().collect();
        train_plain(&mut model, &train1_refs, &spec.train, derive_seed(rep_seed, STREAM_TRAIN1))?;

        for (name, graphs) in [("task1", &test1), ("task2", &test2)] {
            let (metrics, _) = eval_metrics(&model, graphs)?;
            rows.push(RepeatRow {
                repeat,
                phase: 1,
                dataset: name.into(),
                metrics,
            });
        }

        // Phase 2: continual method on the second dataset. The bindings
        // below are declared ahead of the match so method state borrowed
        // by `state` stays alive through training.
        let train2_refs: Vec<&PropagationGraph> = train2.iter().collect();
        let memory: EpisodicMemory;
        let fisher_state: FisherState;
        let val1_graphs: Vec<PropagationGraph>;
        let val2_graphs: Vec<PropagationGraph>;
        let train2_core: Vec<PropagationGraph>;
        let val1_refs: Vec<&PropagationGraph>;
        let val2_refs: Vec<&PropagationGraph>;
        let core_refs: Vec<&PropagationGraph>;

        let (state, phase2_train): (MethodState<'_>, &[&PropagationGraph]) = match method {
            Method::Naive => (MethodState::Naive, &train2_refs),
            Method::Gem { mem_size } => {
                memory = EpisodicMemory::sample(
                    &model,
                    &train1_refs,
                    mem_size.min(train1_refs.len()),
                    derive_seed(rep_seed, STREAM_MEMORY),
                )?;
                (MethodState::Gem { memory: &memory }, &train2_refs)
            }
            Method::Ewc {
                lambda,
                fisher_samples,
                empirical_fisher,
            } => {
                let sample = sample_indices(
                    train1_refs.len(),
                    fisher_samples.min(train1_refs.len()).max(1),
                    derive_seed(rep_seed, STREAM_FISHER),
                )?;
                let sampled: Vec<&PropagationGraph> =
                    sample.iter().map(|&i| train1_refs[i]).collect();
                let diag = estimate_fisher(
                    &model,
                    &sampled,
                    empirical_fisher,
                    derive_seed(rep_seed, STREAM_FISHER),
                )?;
                fisher_state = FisherState::new(&model, diag, lambda)?;

                // 10% validation holdouts from each training split drive
                // the balanced early-stopping criterion; EWC trains on
                // what remains of the task-2 split.
                let hold1 = stratified_split(
                    &labels_of(&train1),
                    VALIDATION_KEEP_FRAC,
                    derive_seed(rep_seed, STREAM_VAL1),
                )?;
                let hold2 = stratified_split(
                    &labels_of(&train2),
                    VALIDATION_KEEP_FRAC,
                    derive_seed(rep_seed, STREAM_VAL2),
                )?;
                val1_graphs = hold1.test.iter().map(|&i| train1[i].clone()).collect();
                val2_graphs = hold2.test.iter().map(|&i| train2[i].clone()).collect();
                train2_core = hold2.train.iter().map(|&i| train2[i].clone()).collect();
                val1_refs = val1_graphs.iter().collect();
                val2_refs = val2_graphs.iter().collect();
                core_refs = train2_core.iter().collect();
                (
                    MethodState::Ewc {
                        fisher: &fisher_state,
                        val1: &val1_refs,
                        val2: &val2_refs,
                        patience: EWC_PATIENCE,
                    },
                    &core_refs,
                )
            }
        };

        let outcome = train_incremental(
            &mut model,
            phase2_train,
            &state,
            &spec.phase2,
            derive_seed(rep_seed, STREAM_TRAIN2),
            &mut |m| {
                let m1 = eval_summary(m, &test1)?;
                let m2 = eval_summary(m, &test2)?;
                Ok((m1, m2))
            },
        )?;
        if outcome.rollbacks > 0 {
            warnings.push(format!(
                "repeat {repeat}: memory-loss audit rolled back {} epoch(s)",
                outcome.rollbacks
            ));
        }
        if outcome.zero_memory_events > 0 {
            warnings.push(format!(
                "repeat {repeat}: zero memory gradient on {} step(s), applied unprojected",
                outcome.zero_memory_events
            ));
        }
        histories.push(outcome.history);

        for (name, graphs) in [("task1", &test1), ("task2", &test2)] {
            let (metrics, _) = eval_metrics(&model, graphs)?;
            rows.push(RepeatRow {
                repeat,
                phase: 2,
                dataset: name.into(),
                metrics,
            });
        }
        last = Some((model, norm1, norm2));
    }

    let (model, norm1, norm2) = last.expect("at least one repeat");
    let checkpoint = Checkpoint {
        config: spec.model.clone(),
        params: model.flat_params(),
        adam: None,
        norms: vec![norm1, norm2],
        meta: TrainMeta {
            seed: spec.seed,
            train_frac: spec.train_frac,
            repeat_index: spec.repeats - 1,
            phase: 2,
            method: method.name().into(),
        },
    };
    let summary = ExperimentReport::summarize(&rows);
    Ok((
        ExperimentReport {
            scenario: format!("incremental-{}", method.name()),
            spec: spec.clone(),
            method: Some(method),
            rows,
            summary,
            warnings,
            histories,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        checkpoint,
    ))
}

/// One sweep entry: the clip that produced it, the built dataset's
/// manifest, and the training report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipReport {
    pub clip: Option<ClipSpec>,
    pub manifest: DatasetManifest,
    pub report: ExperimentReport,
}

/// Human-readable scenario suffix for a clip.
pub fn clip_name(clip: Option<&ClipSpec>) -> String {
    match clip {
        None => "full".to_string(),
        Some(c) => {
            let mut parts = Vec::new();
            if let Some(t) = c.max_tweets {
                parts.push(format!("t{t}"));
            }
            if let Some(h) = c.max_hours {
                parts.push(format!("h{h}"));
            }
            if parts.is_empty() {
                "full".to_string()
            } else {
                parts.join("-")
            }
        }
    }
}

/// Early-detection sweep: rebuilds the dataset from raw records under each
/// clip (clipping happens before edge inference, so graphs must be
/// re-derived, not trimmed) and runs the single-dataset protocol with
/// shared seeds for paired comparison.
#[allow(clippy::too_many_arguments)]
pub fn clip_sweep(
    tweets: &[TweetRecord],
    users: &BTreeMap<String, UserProfile>,
    timelines: Option<&BTreeMap<String, TimelineRecord>>,
    labels: &BTreeMap<String, Label>,
    base: &BuildOptions,
    clips: &[Option<ClipSpec>],
    spec: &ExperimentSpec,
) -> Result<Vec<ClipReport>, HarnessError> {
    let mut out = Vec::with_capacity(clips.len());
    for clip in clips {
        let mut opts = base.clone();
        opts.clip = *clip;
        let built = build_dataset(tweets, users, timelines, labels, &opts)?;
        let scenario = format!("clip-{}", clip_name(clip.as_ref()));
        let (report, _) = run_single_named(&built.dataset, spec, &scenario)?;
        out.push(ClipReport {
            clip: *clip,
            manifest: built.dataset.manifest.clone(),
            report,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoint evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
    All,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            other => Err(format!("unknown split {other:?} (use train, test or all)")),
        }
    }
}

/// Evaluates a checkpoint on a dataset, re-deriving the checkpointed
/// repeat's split. `task` selects which task's split stream and stored
/// normalization apply (1 for the first dataset, 2 for the incremental
/// one); if the checkpoint carries no stats for that task, features are
/// used as stored.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    dataset: &GraphDataset,
    task: u8,
    split: EvalSplit,
) -> Result<crate::metrics::MetricsDetail, HarnessError> {
    if !(task == 1 || task == 2) {
        return Err(HarnessError::InvalidSpec(format!(
            "task must be 1 or 2, got {task}"
        )));
    }
    if dataset.feature_dim() != ck.config.input_dim {
        return Err(HarnessError::IncompatibleCheckpoint {
            expected: ck.config.input_dim,
            got: dataset.feature_dim(),
        });
    }
    let model = ck.build_model()?;
    let labels = labels_of(&dataset.graphs);
    let rep_seed = derive_seed(ck.meta.seed, ck.meta.repeat_index as u64);
    let stream = if task == 1 { STREAM_SPLIT1 } else { STREAM_SPLIT2 };
    let indices: Vec<usize> = match split {
        EvalSplit::All => (0..dataset.len()).collect(),
        _ => {
            let s = stratified_split(&labels, ck.meta.train_frac, derive_seed(rep_seed, stream))?;
            match split {
                EvalSplit::Train => s.train,
                _ => s.test,
            }
        }
    };
    let mut graphs: Vec<PropagationGraph> =
        indices.iter().map(|&i| dataset.graphs[i].clone()).collect();
    if let Some(norm) = ck.norms.get((task - 1) as usize) {
        norm.apply_all(&mut graphs);
    }
    let refs: Vec<&PropagationGraph> = graphs.iter().collect();
    let preds = model.predict_all(&refs)?;
    let truth: Vec<Label> = graphs.iter().map(|g| g.label).collect();
    Ok(compute_metrics_detailed(&preds, &truth)?)
}
