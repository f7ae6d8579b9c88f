//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! status 1 if any criterion fails.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use cmdistill::harness::{
    run_experiment, run_experiment_with, run_single_with, run_sweep, RunMetrics, Slot, SweepGrid,
};
use cmdistill::labelspace::{inject_pairflip, inject_symmetric};
use cmdistill::mkd::{
    cmd_objective, soft_target_objective, sync_mkd_objective, t2s_label_loss, t2s_loss, t2s_objective, Knowledge,
};
use cmdistill::ndmath::{entropy, softmax};
use cmdistill::rng::rng_from_seed;
use cmdistill::selection::{select_batch, SelectionMode, SelectionPolicy};
use cmdistill::selfkd::self_kd_batch;
use cmdistill::{AlgoKind, EpochContext, HardLabel, Matrix, Method, Mlp, ProbDist, TargetWeights, TrustParams};
use rand::Rng;
use rayon::prelude::*;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient correctness", gradient_correctness),
        ("threshold algebra", threshold_algebra),
        ("selection oracle", selection_oracle),
        ("degenerate-mode identities", degenerate_modes),
        ("desk-scale ordering", desk_scale_ordering),
        ("memorization dynamics", memorization_dynamics),
        ("communication growth", communication_growth),
        ("noise-injector statistics", noise_statistics),
        ("eta direction", eta_direction),
        ("T2S equivalence", t2s_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {status} {name}: {} [{:.1}s]",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---- 1 ---------------------------------------------------------------------

fn ctx() -> EpochContext {
    EpochContext::new(7, 20).unwrap()
}

/// Norm-wise relative error between the analytic gradient of the soft-target
/// objective and its central finite difference (step 1e-5).
fn fd_relative_error(model: &Mlp<f64>, x: &Matrix<f64>, targets: &[TargetWeights<f64>]) -> f64 {
    let cache = model.forward_batch(x).unwrap();
    let analytic = model.backward_soft_ce(&cache, targets).unwrap().flat();
    let theta = model.flat_params();
    let h = 1e-5;
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let mut t = theta.clone();
        t[j] = theta[j] + h;
        probe.set_flat_params(&t).unwrap();
        let up = soft_target_objective(&probe.predict_logits(x).unwrap(), targets).unwrap();
        t[j] = theta[j] - h;
        probe.set_flat_params(&t).unwrap();
        let down = soft_target_objective(&probe.predict_logits(x).unwrap(), targets).unwrap();
        numeric.push((up - down) / (2.0 * h));
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn predictions(model: &Mlp<f64>, x: &Matrix<f64>) -> Vec<ProbDist<f64>> {
    let logits = model.predict_logits(x).unwrap();
    (0..logits.rows()).map(|i| softmax(logits.row(i)).unwrap()).collect()
}

fn gradient_correctness() -> Outcome {
    let (dim, classes, n) = (4, 5, 6);
    let mut worst: HashMap<&str, f64> = HashMap::new();
    let seeds = 20;
    for seed in 0..seeds {
        let mut rng = rng_from_seed(1000 + seed);
        let a = Mlp::<f64>::he_uniform(&[dim, 7, classes], 2 * seed).unwrap();
        let b = Mlp::<f64>::he_uniform(&[dim, 7, classes], 2 * seed + 1).unwrap();
        let x = Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let labels: Vec<HardLabel> = (0..n)
            .map(|_| HardLabel::new(rng.random_range(0..classes), classes).unwrap())
            .collect();
        let pa = predictions(&a, &x);
        let pb = predictions(&b, &x);
        let trust = |m| TrustParams::new(m, 0.3, 5.0, 0.5).unwrap();

        let mut record = |name: &'static str, targets: Vec<TargetWeights<f64>>| {
            let e = fd_relative_error(&a, &x, &targets);
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        };
        for (name, m) in [
            ("CE", Method::Ce),
            ("LS", Method::Ls),
            ("CP", Method::Cp),
            ("Boot-soft", Method::BootSoft),
            ("ProSelfLC", Method::ProSelfLc),
            ("MyLC", Method::MyLc),
        ] {
            let out = self_kd_batch(&trust(m), &labels, &pa, ctx()).unwrap();
            record(name, out.into_iter().map(|o| o.refined).collect());
        }
        let mut hb: Vec<f64> = pb.iter().map(entropy).collect();
        hb.sort_by(f64::total_cmp);
        let chi = hb[n / 2];
        let cmd = cmd_objective(
            &pa,
            &pb,
            &labels,
            &trust(Method::MyLc),
            &trust(Method::MyLc),
            chi,
            Knowledge::Refined,
            ctx(),
        )
        .unwrap();
        record("CMD", cmd.targets_a);
        let sync = sync_mkd_objective(&pa, &pb, &labels, &trust(Method::Ce), &trust(Method::Ce), 0.5, ctx()).unwrap();
        record("SyncMKD", sync.targets_a);
        let t2s = t2s_objective(&pa, &pb, &labels, &trust(Method::Ce), 0.4, ctx()).unwrap();
        record("T2S", t2s.targets_a);
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    let mut names: Vec<_> = worst.iter().collect();
    names.sort_by(|a, b| a.0.cmp(b.0));
    let summary = names
        .iter()
        .map(|(k, v)| format!("{k}={v:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(
        max < 1e-4 && worst.len() == 9,
        format!("{seeds} seeds, worst relative error {max:.2e} < 1e-4 ({summary})"),
    )
}

// ---- 2 ---------------------------------------------------------------------

fn threshold_algebra() -> Outcome {
    let s = SelectionPolicy::<f64>::fixed(2.0, 100, 100).unwrap();
    let chi = s.threshold(0).unwrap();
    let static_ok = (chi - 2.302585).abs() <= 1e-6;

    let mut flat_ok = true;
    for eta in [0.5, 1.0, 2.0, 3.7] {
        let st = SelectionPolicy::<f64>::fixed(eta, 100, 10).unwrap();
        let pr = SelectionPolicy::<f64>::progressive(eta, 0.0, 100, 10).unwrap();
        for t in 0..=100 {
            flat_ok &= pr.threshold(t).unwrap() == st.threshold(t).unwrap();
        }
    }

    let total = 2000;
    let mut mono_ok = true;
    for b2 in [-12.0, -3.0, -0.25, 0.25, 3.0, 12.0] {
        let p = SelectionPolicy::<f64>::progressive(2.0, b2, total, 10).unwrap();
        let xs: Vec<f64> = (0..=total).map(|t| p.threshold(t).unwrap()).collect();
        let ordered = if b2 > 0.0 {
            xs.windows(2).all(|w| w[1] >= w[0])
        } else {
            xs.windows(2).all(|w| w[1] <= w[0])
        };
        let moved = if b2 > 0.0 { xs[total] > xs[0] } else { xs[total] < xs[0] };
        mono_ok &= ordered && moved;
    }
    outcome(
        static_ok && flat_ok && mono_ok,
        format!(
            "static(eta=2,C=100)={chi:.7}; b2=0 equals static: {flat_ok}; monotone in t on {} points: {mono_ok}",
            total + 1
        ),
    )
}

// ---- 3 ---------------------------------------------------------------------

fn selection_oracle() -> Outcome {
    let mut rng = rng_from_seed(33);
    let batches = 1000;
    let mut mismatches = 0;
    for _ in 0..batches {
        let classes = rng.random_range(2..=12);
        let n = rng.random_range(1..=48);
        let scale = rng.random_range(0.1..8.0);
        let pa: Vec<_> = (0..n).map(|_| random_dist(&mut rng, classes, scale)).collect();
        let pb: Vec<_> = (0..n).map(|_| random_dist(&mut rng, classes, scale)).collect();
        let chi = rng.random_range(0.0..(classes as f64).ln());
        let brute = |ps: &[ProbDist<f64>]| -> Vec<usize> {
            (0..ps.len()).filter(|&i| oracle_entropy(ps[i].probs()) < chi).collect()
        };
        if select_batch(&pa, chi) != brute(&pa) {
            mismatches += 1;
            continue;
        }
        let labels: Vec<HardLabel> = (0..n)
            .map(|_| HardLabel::new(rng.random_range(0..classes), classes).unwrap())
            .collect();
        let ce = TrustParams::ce();
        let r = cmd_objective(&pa, &pb, &labels, &ce, &ce, chi, Knowledge::Refined, ctx())
            .unwrap()
            .result;
        if r.count_a2b != brute(&pa).len() || r.count_b2a != brute(&pb).len() {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{batches} random batches, {mismatches} disagreements with the brute-force filter"),
    )
}

// ---- 4 ---------------------------------------------------------------------

fn degenerate_modes() -> Outcome {
    let cfg = with_method(
        with_algo(golden(21), AlgoKind::Cmd, SelectionMode::Zero, 2.0, 0.0),
        Method::MyLc,
    );
    let mut cfg = cfg;
    cfg.epochs = 8;
    let mut pair: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    run_experiment_with(&cfg, &mut |_, a, b| pair.push((a.flat_params(), b.flat_params()))).unwrap();
    let mut single_a = Vec::new();
    let mut single_b = Vec::new();
    run_single_with(&cfg, Slot::A, &mut |_, m| single_a.push(m.flat_params())).unwrap();
    run_single_with(&cfg, Slot::B, &mut |_, m| single_b.push(m.flat_params())).unwrap();
    let trajectory_ok = pair.len() == cfg.epochs
        && pair
            .iter()
            .zip(single_a.iter().zip(&single_b))
            .all(|((a, b), (sa, sb))| a == sa && b == sb);

    let mut rng = rng_from_seed(44);
    let mut worst = 0.0f64;
    let methods = [
        Method::Ce,
        Method::Ls,
        Method::Cp,
        Method::BootSoft,
        Method::ProSelfLc,
        Method::MyLc,
    ];
    for k in 0..200 {
        let classes = rng.random_range(2..=10);
        let n = rng.random_range(1..=32);
        let pa: Vec<_> = (0..n).map(|_| random_dist(&mut rng, classes, 4.0)).collect();
        let pb: Vec<_> = (0..n).map(|_| random_dist(&mut rng, classes, 4.0)).collect();
        let labels: Vec<HardLabel> = (0..n)
            .map(|_| HardLabel::new(rng.random_range(0..classes), classes).unwrap())
            .collect();
        let trust = TrustParams::new(methods[k % methods.len()], 0.2, 6.0, 0.5).unwrap();
        let chi = SelectionPolicy::<f64>::all(10, classes).unwrap().threshold(3).unwrap();
        let r = cmd_objective(&pa, &pb, &labels, &trust, &trust, chi, Knowledge::Refined, ctx())
            .unwrap()
            .result;
        let refined_a = self_kd_batch(&trust, &labels, &pa, ctx()).unwrap();
        let refined_b = self_kd_batch(&trust, &labels, &pb, ctx()).unwrap();
        let direct = |src: &[cmdistill::selfkd::SelfKdOutput<f64>], dst: &[ProbDist<f64>]| {
            src.iter()
                .zip(dst)
                .map(|(o, p)| oracle_cross_entropy(o.refined.weights(), p.probs()))
                .sum::<f64>()
                / n as f64
        };
        worst = worst
            .max((r.distill_a - direct(&refined_b, &pa)).abs())
            .max((r.distill_b - direct(&refined_a, &pb)).abs());
    }
    outcome(
        trajectory_ok && worst <= 1e-9,
        format!(
            "(a) zero-mode run equals independent runs over {} epochs: {trajectory_ok}; (b) all-mode distillation loss max error {worst:.1e} <= 1e-9",
            cfg.epochs
        ),
    )
}

// ---- 5, 6, 7, 9: desk-scale runs ---------------------------------------------

/// Runs `cfg` for each golden seed in parallel.
fn golden_runs(make: impl Fn(u64) -> cmdistill::harness::ExperimentConfig + Sync) -> Vec<RunMetrics> {
    GOLDEN_SEEDS
        .par_iter()
        .map(|&s| run_experiment(&make(s)).unwrap())
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn final_mean(runs: &[RunMetrics]) -> f64 {
    mean(&runs.iter().map(|m| m.final_mean_acc().unwrap()).collect::<Vec<_>>())
}

/// Peak minus final of the seed-averaged mean-accuracy curve.
fn peak_drop(runs: &[RunMetrics]) -> f64 {
    let epochs = runs[0].records.len();
    let curve: Vec<f64> = (0..epochs)
        .map(|e| mean(&runs.iter().map(|m| m.records[e].mean_test_acc()).collect::<Vec<_>>()))
        .collect();
    curve.iter().cloned().fold(f64::MIN, f64::max) - curve[epochs - 1]
}

fn zero_ce(seed: u64) -> cmdistill::harness::ExperimentConfig {
    with_algo(golden(seed), AlgoKind::Cmd, SelectionMode::Zero, 2.0, 0.0)
}

fn cmd_p_mylc(seed: u64) -> cmdistill::harness::ExperimentConfig {
    with_method(
        with_algo(golden(seed), AlgoKind::Cmd, SelectionMode::Progressive, 2.0, -3.0),
        Method::MyLc,
    )
}

thread_local! {
    static CACHE: std::cell::RefCell<HashMap<&'static str, Vec<RunMetrics>>> = Default::default();
}

fn cached(key: &'static str, make: fn(u64) -> cmdistill::harness::ExperimentConfig) -> Vec<RunMetrics> {
    if let Some(hit) = CACHE.with(|c| c.borrow().get(key).cloned()) {
        return hit;
    }
    let runs = golden_runs(make);
    CACHE.with(|c| c.borrow_mut().insert(key, runs.clone()));
    runs
}

fn desk_scale_ordering() -> Outcome {
    let zero = final_mean(&cached("zero_ce", zero_ce));
    let sync = final_mean(&golden_runs(|s| {
        with_algo(golden(s), AlgoKind::SyncMkd, SelectionMode::All, 2.0, 0.0)
    }));
    let cmd_s = final_mean(&golden_runs(|s| {
        with_algo(golden(s), AlgoKind::Cmd, SelectionMode::Static, 2.0, 0.0)
    }));
    let cmd_p = final_mean(&golden_runs(|s| {
        with_algo(golden(s), AlgoKind::Cmd, SelectionMode::Progressive, 2.0, -3.0)
    }));
    let ordered = zero < sync && sync <= cmd_s && cmd_s <= cmd_p;
    let margin = cmd_p - sync;
    outcome(
        ordered && margin >= 0.02,
        format!(
            "zero(CE)={:.2} all(SyncMKD)={:.2} CMD-S={:.2} CMD-P={:.2}, CMD-P minus SyncMKD={:+.2} points (need zero<all<=S<=P and >= +2)",
            100.0 * zero,
            100.0 * sync,
            100.0 * cmd_s,
            100.0 * cmd_p,
            100.0 * margin
        ),
    )
}

fn memorization_dynamics() -> Outcome {
    let ce = peak_drop(&cached("zero_ce", zero_ce));
    let cmd = peak_drop(&cached("cmd_p_mylc", cmd_p_mylc));
    outcome(
        ce >= 0.03 && cmd <= ce / 3.0,
        format!(
            "CE peak-final={:.2} points (need >= 3), CMD-P+MyLC peak-final={:.2} points (need <= {:.2})",
            100.0 * ce,
            100.0 * cmd,
            100.0 * ce / 3.0
        ),
    )
}

fn communication_growth() -> Outcome {
    let runs = cached("cmd_p_mylc", cmd_p_mylc);
    let comm = mean(
        &runs
            .iter()
            .map(|m| m.last().unwrap().communication() as f64)
            .collect::<Vec<_>>(),
    );
    let need = 1.6 * GOLDEN_TRAIN as f64;
    outcome(
        comm >= need,
        format!("final-epoch count_a2b+count_b2a={comm:.0} (need >= {need:.0}), eta=2, b2=-3, MyLC"),
    )
}

fn eta_direction() -> Outcome {
    let base = with_method(
        with_algo(golden(1), AlgoKind::Cmd, SelectionMode::Static, 2.0, 0.0),
        Method::MyLc,
    );
    let grid = SweepGrid {
        eta: Some(vec![1.0, 2.0, 3.0, 4.0]),
        seeds: Some(GOLDEN_SEEDS.to_vec()),
        ..Default::default()
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let summary = run_sweep(&base, &grid, workers, None).unwrap();
    let means: Vec<f64> = summary.cells.iter().map(|c| c.mean().unwrap_or(f64::NAN)).collect();
    let drops: Vec<f64> = means.windows(2).map(|w| w[0] - w[1]).filter(|d| *d > 0.0).collect();
    let pass = summary.failures() == 0 && (drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.005));
    outcome(
        pass,
        format!(
            "CMD-S+MyLC mean final acc for eta=1..4: {} ({} inversions, allowed one <= 0.5 points)",
            means
                .iter()
                .map(|m| format!("{:.2}", 100.0 * m))
                .collect::<Vec<_>>()
                .join(", "),
            drops.len()
        ),
    )
}

// ---- 8 ---------------------------------------------------------------------

fn noise_statistics() -> Outcome {
    let classes = 10;
    let n = 50_000;
    let clean: Vec<HardLabel> = (0..n).map(|i| HardLabel::new(i % classes, classes).unwrap()).collect();
    let mut worst = 0.0f64;
    let mut pair_ok = true;
    for (k, rate) in [0.2, 0.4, 0.6, 0.8].into_iter().enumerate() {
        let sym = inject_symmetric(&clean, classes, rate, &mut rng_from_seed(80 + k as u64)).unwrap();
        let pair = inject_pairflip(&clean, classes, rate, &mut rng_from_seed(90 + k as u64)).unwrap();
        let frac = |noisy: &[HardLabel]| clean.iter().zip(noisy).filter(|(a, b)| a != b).count() as f64 / n as f64;
        worst = worst.max((frac(&sym) - rate).abs()).max((frac(&pair) - rate).abs());
        pair_ok &= clean
            .iter()
            .zip(&pair)
            .all(|(c, p)| c == p || p.index() == (c.index() + 1) % classes);
    }
    outcome(
        worst <= 0.01 && pair_ok,
        format!("n={n}, max |realized - requested| = {worst:.4} (<= 0.01); pair-flip successor-only: {pair_ok}"),
    )
}

// ---- 10 --------------------------------------------------------------------

fn t2s_equivalence() -> Outcome {
    let mut rng = rng_from_seed(10);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let classes = rng.random_range(2..=20);
        let y = HardLabel::new(rng.random_range(0..classes), classes).unwrap();
        let q = cmdistill::labelspace::one_hot::<f64>(y, classes).unwrap();
        let p = random_dist(&mut rng, classes, 5.0);
        let pt = random_dist(&mut rng, classes, 5.0);
        let eps = rng.random_range(0.0..=1.0);
        let diff = t2s_loss(&q, &p, &pt, eps).unwrap() - t2s_label_loss(&q, &p, &pt, eps).unwrap();
        worst = worst.max((diff + eps * entropy(&pt)).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("100 random instances, max |difference + eps*H(p_t)| = {worst:.1e} (<= 1e-6)"),
    )
}
