//! Retains the first task with elastic weight consolidation (EWC).
//!
//! After the first task, a diagonal Fisher information estimate scores
//! how much each parameter mattered. Fine-tuning on the second task then
//! pays a quadratic penalty for moving important parameters, scaled by a
//! strength lambda. Small lambda lets the trajectory forget like naive
//! training; huge lambda pins the weights and underfits the new task.
//!
//! Model selection then walks the trajectory and keeps the epoch with the
//! best harmonic mean of the two validation accuracies — the initial
//! weights count as a candidate, so a trajectory that only destroys task
//! A is rejected wholesale. Run with:
//!
//! ```text
//! cargo run --example continual_ewc
//! ```

use cascadecl::continual::Method;
use cascadecl::gnn::ModelConfig;
use cascadecl::harness::{run_incremental, ExperimentSpec};
use cascadecl::synth::{default_regimes, generate};

fn main() {
    let (mut ra, mut rb) = default_regimes();
    ra.n_news = 120;
    rb.n_news = 120;
    let (da, _) = generate(&ra).expect("valid regime");
    let (db, _) = generate(&rb).expect("valid regime");

    let mut model = ModelConfig::new(da.manifest.feature_dim);
    model.pool_layers = 2;
    model.hidden_dim = 16;
    model.embed_dim = 16;
    model.max_nodes = 64;

    let mut spec = ExperimentSpec::new(model);
    spec.repeats = 1;
    spec.seed = 42;
    spec.train.epochs = 30;
    spec.train.batch_size = 32;
    spec.phase2.epochs = 30;
    spec.phase2.batch_size = 32;
    spec.phase2.lr = 3e-3;
    spec.phase2.patience = 5; // stop once the harmonic mean stalls

    let acc = |report: &cascadecl::harness::ExperimentReport, phase: u8, dataset: &str| {
        report
            .summary
            .iter()
            .find(|s| s.phase == phase && s.dataset == dataset)
            .map(|s| s.mean.accuracy)
            .unwrap_or(f64::NAN)
    };

    // "end" = last epoch of the fine-tuning trajectory; "kept" = what the
    // harmonic-mean selection actually returns.
    println!(
        "{:>10} | {:>8} {:>8} | {:>8} {:>8}",
        "lambda", "end A", "end B", "kept A", "kept B"
    );
    for lambda in [1.0, 1e3, 1e5] {
        let method = Method::Ewc {
            lambda,
            fisher_samples: 200,
            empirical_fisher: false,
        };
        let (report, _) = run_incremental(&da, &db, &spec, method).expect("runs");
        let last = report
            .histories
            .last()
            .and_then(|h| h.last())
            .expect("history recorded");
        println!(
            "{:>10} | {:>8.3} {:>8.3} | {:>8.3} {:>8.3}",
            lambda,
            last.task1.accuracy,
            last.task2.accuracy,
            acc(&report, 2, "task1"),
            acc(&report, 2, "task2")
        );
    }
    println!("\nsmall lambda drifts into forgetting (trajectory), so selection");
    println!("falls back toward the initial weights; large lambda holds task A");
    println!("along the whole trajectory at some cost to task B");
}
