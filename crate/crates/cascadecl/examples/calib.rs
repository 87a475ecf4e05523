// Scratch calibration driver (not part of the crate surface): prints
// within- and cross-regime accuracies plus naive forgetting for candidate
// generator/model settings, given as key=value args.
use std::collections::BTreeMap;

use cascadecl::continual::Method;
use cascadecl::gnn::ModelConfig;
use cascadecl::harness::{
    evaluate_checkpoint, run_incremental, run_single, EvalSplit, ExperimentSpec,
};
use cascadecl::optim::TrainOptions;
use cascadecl::synth::{default_regimes, generate};

fn main() {
    let kv: BTreeMap<String, f64> = std::env::args()
        .skip(1)
        .map(|a| {
            let (k, v) = a.split_once('=').expect("key=value");
            (k.to_string(), v.parse().expect("numeric value"))
        })
        .collect();
    let get = |k: &str, d: f64| kv.get(k).copied().unwrap_or(d);

    let (mut a, mut b) = default_regimes();
    let base = a.fake_shift;
    let fscale = get("fscale", 1.0);
    for i in 0..7 {
        a.fake_shift[i] = base[i] * fscale;
        b.fake_shift[i] = base[i] * fscale;
    }
    // shift7 overrides both regimes; ashift7/bshift7 override one each.
    // With no keys, each regime keeps its own built-in timing shift.
    if let Some(&s) = kv.get("shift7") {
        a.fake_shift[7] = s;
        b.fake_shift[7] = s;
    }
    a.fake_shift[7] = get("ashift7", a.fake_shift[7]);
    b.fake_shift[7] = get("bshift7", b.fake_shift[7]);
    b.time_scale_s = get("bts", b.time_scale_s);
    a.time_scale_s = get("ats", a.time_scale_s);
    a.branching = get("abr", a.branching);
    b.branching = get("bbr", b.branching);
    a.cascade_count_dist.0 = get("acas", a.cascade_count_dist.0);
    b.cascade_count_dist.0 = get("bcas", b.cascade_count_dist.0);

    let (da, ma) = generate(&a).unwrap();
    let (db, mb) = generate(&b).unwrap();
    eprintln!(
        "A nodes {:.1} edges {:.1} | B nodes {:.1} edges {:.1}",
        ma.mean_nodes, ma.mean_edges, mb.mean_nodes, mb.mean_edges
    );

    let mut model = ModelConfig::new(8);
    model.pool_layers = get("layers", 2.0) as usize;
    model.hidden_dim = get("hidden", 32.0) as usize;
    model.embed_dim = get("embed", get("hidden", 32.0)) as usize;
    model.max_nodes = get("maxn", 256.0) as usize;
    model.pool_ratio = get("ratio", 0.25);
    let mut spec = ExperimentSpec::new(model);
    spec.repeats = get("reps", 1.0) as u32;
    spec.seed = get("seed", 42.0) as u64;
    spec.train = TrainOptions {
        epochs: get("ep", 25.0) as usize,
        batch_size: get("bs", 16.0) as usize,
        lr: get("lr", 1e-3),
        patience: get("pat", 10.0) as usize,
    };
    spec.phase2 = TrainOptions {
        epochs: get("ep2", get("ep", 25.0)) as usize,
        batch_size: spec.train.batch_size,
        lr: get("lr2", get("lr", 1e-3)),
        patience: get("pat2", get("pat", 10.0)) as usize,
    };

    let (ra, cka) = run_single(&da, &spec).unwrap();
    let (rb, ckb) = run_single(&db, &spec).unwrap();
    let a_on_b = evaluate_checkpoint(&cka, &db, 1, EvalSplit::All)
        .unwrap()
        .summary
        .accuracy;
    let b_on_a = evaluate_checkpoint(&ckb, &da, 1, EvalSplit::All)
        .unwrap()
        .summary
        .accuracy;
    println!(
        "A->A {:.3}  A->B {:.3}  B->B {:.3}  B->A {:.3}",
        ra.summary[0].mean.accuracy, a_on_b, rb.summary[0].mean.accuracy, b_on_a
    );

    let mut methods = vec![Method::Naive];
    if let Some(&m) = kv.get("gem") {
        methods.push(Method::Gem { mem_size: m as usize });
    }
    if let Some(&l) = kv.get("ewc") {
        methods.push(Method::Ewc {
            lambda: l,
            fisher_samples: get("fisher", 200.0) as usize,
            empirical_fisher: false,
        });
    }
    for method in methods {
        let t0 = std::time::Instant::now();
        let (ri, _) = run_incremental(&da, &db, &spec, method.clone()).unwrap();
        for s in &ri.summary {
            if s.phase == 2 {
                println!(
                    "{} phase {} {}: acc {:.3}",
                    method.name(),
                    s.phase,
                    s.dataset,
                    s.mean.accuracy
                );
            }
        }
        println!(
            "{} forgetting {:.3}  ({} warnings, {:.1}s)",
            method.name(),
            ri.forgetting().unwrap(),
            ri.warnings.len(),
            t0.elapsed().as_secs_f64()
        );
        if kv.contains_key("hist") {
            for h in ri.histories.last().iter().flat_map(|h| h.iter()) {
                println!(
                    "  epoch {:2}  t1 {:.3}  t2 {:.3}  cv {}",
                    h.epoch, h.task1.accuracy, h.task2.accuracy, h.constraint_violations
                );
            }
        }
    }
}
