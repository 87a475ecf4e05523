//! Shows a model forgetting its first task while learning a second one.
//!
//! The two built-in regimes encode opposite rules: in regime A fake news
//! spreads in fast bursts, in regime B it stalls. Fine-tuning an
//! A-trained model on B with no safeguard ("naive" incremental training)
//! overwrites the A rule — accuracy on A collapses below chance while B
//! climbs. Run with:
//!
//! ```text
//! cargo run --example catastrophic_forgetting
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
    spec.repeats = 2;
    spec.seed = 42;
    spec.train.epochs = 30;
    spec.train.batch_size = 32;
    spec.phase2.epochs = 30;
    spec.phase2.batch_size = 32;
    spec.phase2.lr = 3e-3;
    spec.phase2.patience = 30;

    let (report, _ck) = run_incremental(&da, &db, &spec, Method::Naive).expect("runs");

    // Phase 1 = after training on A only; phase 2 = after fine-tuning on B.
    let acc = |phase: u8, dataset: &str| {
        report
            .summary
            .iter()
            .find(|s| s.phase == phase && s.dataset == dataset)
            .map(|s| s.mean.accuracy)
            .unwrap_or(f64::NAN)
    };
    println!("                 task A   task B");
    println!("after phase 1    {:.3}    {:.3}", acc(1, "task1"), acc(1, "task2"));
    println!("after phase 2    {:.3}    {:.3}", acc(2, "task1"), acc(2, "task2"));

    let forgetting = acc(1, "task1") - acc(2, "task1");
    println!("\nforgetting on task A: {forgetting:.3}");

    // The per-epoch history shows the collapse happening within the first
    // few fine-tuning epochs.
    if let Some(history) = report.histories.last() {
        println!("\nepoch  acc(A)  acc(B)");
        for rec in history.iter().take(8) {
            println!(
                "{:>5}  {:>6.3}  {:>6.3}",
                rec.epoch, rec.task1.accuracy, rec.task2.accuracy
            );
        }
        if history.len() > 8 {
            println!("  ...   (through epoch {})", history.last().unwrap().epoch);
        }
    }
}
