//! End-to-end acceptance gate. Runs the full experimental protocol for
//! every headline claim and prints one pass/fail line per criterion.
//!
//! This is a long test (tens of minutes on one CPU core); run it with
//! `cargo test --test acceptance -- --nocapture` to watch the lines
//! appear as each criterion completes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use resolve_core::bench::{bench_attention, BenchConfig};
use resolve_core::diagnostics::gradcheck_suite;
use resolve_core::harness::{run_experiment, RunConfig, RunSummary};
use resolve_core::layer::Variant;
use resolve_core::vsa::{bind, bipolar_cosine, bipolarize, bundle, pack, packed_dot};

fn mean_of(summary: &RunSummary, metric: &str, train_size: usize) -> f64 {
    summary
        .aggregates
        .iter()
        .find(|a| a.metric == metric && a.train_size == train_size)
        .map(|a| a.mean)
        .unwrap_or(f64::NAN)
}

fn report(results: &mut Vec<(String, bool)>, id: u32, ok: bool, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let line = format!("criterion {id}: {verdict} — {detail}");
    println!("{line}");
    results.push((line, ok));
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(String, bool)> = Vec::new();

    // Criteria 1 & 2: pairwise order, variant (a), D=1024, AdamW 1e-4,
    // batch 128, 100 epochs, 5 seeds, train sizes 10 and 210.
    let mut cfg = RunConfig::pairwise_default(Variant::A);
    cfg.run_id = "acceptance-pairwise".into();
    cfg.out_dir = tmp.path().to_path_buf();
    cfg.train_sizes = vec![10, 210];
    assert_eq!(cfg.n_seeds, 5);
    assert_eq!(cfg.epochs, 100);
    let summary = run_experiment::<f32>(&cfg).unwrap();
    let acc210 = mean_of(&summary, "accuracy", 210);
    let acc10 = mean_of(&summary, "accuracy", 10);
    report(
        &mut results,
        1,
        acc210 >= 0.75,
        format!("pairwise order: mean test accuracy at 210 samples = {acc210:.4} (need ≥ 0.75, 5 seeds)"),
    );
    let gap = acc210 - acc10;
    report(
        &mut results,
        2,
        gap >= 0.15,
        format!(
            "learning curve: accuracy(210) − accuracy(10) = {acc210:.4} − {acc10:.4} = {:.1} points (need ≥ 15)",
            gap * 100.0
        ),
    );

    // Criterion 3: sorting, variant (c) vs transformer under the same
    // protocol (Adam 5e-4, batch 128, 200 epochs, 460 samples, 5 seeds),
    // within a two-hour budget.
    let t_sort = Instant::now();
    let mut sort_c = RunConfig::sorting_default(Variant::C);
    sort_c.run_id = "acceptance-sorting-c".into();
    sort_c.out_dir = tmp.path().to_path_buf();
    assert_eq!(sort_c.n_seeds, 5);
    let c_summary = run_experiment::<f32>(&sort_c).unwrap();
    let mut sort_tf = RunConfig::sorting_default(Variant::TransformerSeq2Seq);
    sort_tf.run_id = "acceptance-sorting-transformer".into();
    sort_tf.out_dir = tmp.path().to_path_buf();
    let tf_summary = run_experiment::<f32>(&sort_tf).unwrap();
    let c_acc = mean_of(&c_summary, "element_wise_accuracy", 460);
    let tf_acc = mean_of(&tf_summary, "element_wise_accuracy", 460);
    let elapsed_h = t_sort.elapsed().as_secs_f64() / 3600.0;
    report(
        &mut results,
        3,
        c_acc >= tf_acc && elapsed_h < 2.0,
        format!(
            "sorting: element-wise accuracy {c_acc:.4} (ours) vs {tf_acc:.4} (transformer), 5 seeds, {elapsed_h:.2} h (budget 2 h)"
        ),
    );

    // Criterion 4: MNIST-Math, variant (b) vs transformer, relative.
    let data_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let mut mm_b = RunConfig::mnist_default(Variant::B);
    mm_b.run_id = "acceptance-mnist-b".into();
    mm_b.out_dir = tmp.path().to_path_buf();
    mm_b.mnist_images = data_dir.join("digits-images-idx3-ubyte");
    mm_b.mnist_labels = data_dir.join("digits-labels-idx1-ubyte");
    let b_summary = run_experiment::<f32>(&mm_b).unwrap();
    let mut mm_tf = RunConfig::mnist_default(Variant::TransformerClassifier);
    mm_tf.run_id = "acceptance-mnist-transformer".into();
    mm_tf.out_dir = tmp.path().to_path_buf();
    mm_tf.mnist_images = mm_b.mnist_images.clone();
    mm_tf.mnist_labels = mm_b.mnist_labels.clone();
    let mtf_summary = run_experiment::<f32>(&mm_tf).unwrap();
    let b_acc = mean_of(&b_summary, "accuracy", mm_b.train_sizes[0]);
    let mtf_acc = mean_of(&mtf_summary, "accuracy", mm_tf.train_sizes[0]);
    report(
        &mut results,
        4,
        b_acc >= mtf_acc,
        format!("mnist-math: accuracy {b_acc:.4} (ours) vs {mtf_acc:.4} (transformer)"),
    );

    // Criterion 5: the oracle suite, timed against its five-minute budget.
    let t5 = Instant::now();
    let mut oracle_ok = true;
    let grad = gradcheck_suite(2, 0).unwrap();
    oracle_ok &= grad.len() >= 15 && grad.iter().all(|(_, e)| *e < 1e-4);
    let mut rng = ChaCha12Rng::seed_from_u64(20240817);
    let ternary = |rng: &mut ChaCha12Rng, d: usize, zeros: bool| -> Vec<f64> {
        (0..d)
            .map(|_| {
                if zeros && rng.gen::<f64>() < 0.1 {
                    0.0
                } else if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    };
    for &d in &[64usize, 1024] {
        for case in 0..5000 {
            let a = ternary(&mut rng, d, case % 2 == 1);
            let b = ternary(&mut rng, d, case % 2 == 1);
            let dense: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            oracle_ok &=
                packed_dot(&pack(&a).unwrap(), &pack(&b).unwrap()).unwrap() == dense as i64;
        }
    }
    for _ in 0..50 {
        let a = ternary(&mut rng, 128, false);
        let b = ternary(&mut rng, 128, false);
        let c = ternary(&mut rng, 128, false);
        oracle_ok &= bundle(&a, &b).unwrap() == bundle(&b, &a).unwrap();
        oracle_ok &= bind(&a, &bundle(&b, &c).unwrap()).unwrap()
            == bundle(&bind(&a, &b).unwrap(), &bind(&a, &c).unwrap()).unwrap();
        oracle_ok &= bind(&a, &a).unwrap() == vec![1.0; 128];
    }
    {
        // zero-free hypervectors: R_ii = ⟨δ(h), δ(h ⊕ h)⟩/D = 1
        let h: Vec<Vec<f64>> =
            (0..6).map(|_| (0..512).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
        let r = resolve_core::attention::relation_tensor(&h).unwrap();
        oracle_ok &= (0..6).all(|i| r[i][i] == 1.0);
        let r_bar = resolve_core::attention::normalize(&r);
        oracle_ok &= r_bar.iter().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let mut sum_abs = 0.0;
    for _ in 0..1000 {
        let a = bipolarize(&(0..1024).map(|_| rng.gen::<f64>() - 0.5).collect::<Vec<_>>());
        let b = bipolarize(&(0..1024).map(|_| rng.gen::<f64>() - 0.5).collect::<Vec<_>>());
        sum_abs += bipolar_cosine(&a, &b).unwrap().abs();
    }
    oracle_ok &= sum_abs / 1000.0 < 0.05;
    let t5_min = t5.elapsed().as_secs_f64() / 60.0;
    report(
        &mut results,
        5,
        oracle_ok && t5_min < 5.0,
        format!(
            "oracle suite: gradcheck ({} ops), packed≡dense (10⁴ pairs), algebra, relation, softmax, orthogonality in {t5_min:.2} min (budget 5 min)",
            grad.len()
        ),
    );

    // Criterion 6: packed attention-score path at N=64, D=1024 — at most
    // 1/8 the bytes per score of float32, identical R, and faster.
    let bench = bench_attention(BenchConfig { n: 64, d: 1024, reps: 20, seed: 0 }).unwrap();
    let ratio = bench.packed_to_float_byte_ratio();
    report(
        &mut results,
        6,
        ratio <= 0.125 && bench.exact_match && bench.packed_ns_per_score < bench.float_ns_per_score,
        format!(
            "benchmark: bytes/score ratio {ratio:.4} (need ≤ 0.125), packed ≡ dense: {}, {:.1} ns/score packed vs {:.1} float32",
            bench.exact_match, bench.packed_ns_per_score, bench.float_ns_per_score
        ),
    );

    let failures: Vec<&str> =
        results.iter().filter(|(_, ok)| !ok).map(|(line, _)| line.as_str()).collect();
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}
