//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process fails if any criterion outside `KNOWN_UNMET` fails, or if a
//! criterion in `KNOWN_UNMET` breaks the sub-properties it is still expected
//! to satisfy.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mtl_balance::balancers::{
    si_g_aggregate, AlphaStrategy, BalancerKind, BalancerState, BetaSchedule,
};
use mtl_balance::tasks::{make_mlp_regression, ModelParams, TaskSet};
use mtl_balance::trainer::{train, Method, TrainConfig};
use mtl_balance::transforms::{imtl_l_inner_min, transform_grad, TransformKind, INNER_MIN_TOL};
use mtl_balance::vec_math::finite_diff_grad;
use mtl_balance::RealVector;
use mtl_balance_cli::config::{default_centers, ExperimentConfig, SweepSpec, TaskSpec};
use mtl_balance_cli::experiment::run_experiment;
use mtl_balance_cli::{tables, verify};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Criteria whose stated threshold cannot be met; see the detail line.
const KNOWN_UNMET: [usize; 1] = [6];

struct Outcome {
    passed: bool,
    /// Parts of an unmet criterion that must still hold.
    invariants_hold: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self {
            passed,
            invariants_hold: true,
            detail,
        }
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let checks: Vec<_> = tables::load_tables(None)
        .unwrap()
        .iter()
        .flat_map(|t| t.check_rows().unwrap())
        .collect();
    let elapsed = start.elapsed();
    let ew = |d: &str| {
        checks
            .iter()
            .find(|c| c.dataset == d && c.method == "ew")
            .unwrap()
    };
    let (city, nyu) = (ew("cityscapes"), ew("nyuv2"));
    let inconsistent: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} ({:+.3} vs {:+.2})", c.cell(), c.recomputed, c.printed))
        .collect();
    let passed = (city.recomputed - (-2.05)).abs() <= 0.05
        && (nyu.recomputed - (-1.78)).abs() <= 0.05
        && within(elapsed, 1.0);
    Outcome::new(
        passed,
        format!(
            "Cityscapes EW {:+.3} (printed -2.05), NYUv2 EW {:+.3} (printed -1.78), {} rows checked in {:.3}s; \
             rows whose printed Δp disagrees with their own metrics by more than 0.05: {}",
            city.recomputed,
            nyu.recomputed,
            checks.len(),
            elapsed.as_secs_f64(),
            if inconsistent.is_empty() { "none".into() } else { inconsistent.join(", ") }
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let checks = verify::prop1();
    let elapsed = start.elapsed();
    let failed = checks.iter().filter(|c| !c.passed).count();
    Outcome::new(
        failed == 0 && within(elapsed, 10.0),
        format!(
            "line grid, 20x20 plane grid and {} random clouds; {failed} failures in {:.2}s",
            verify::CLOUD_COUNT,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst_value: f64 = 0.0;
    let mut worst_argmin: f64 = 0.0;
    for x in verify::PROP2_POINTS {
        let (s, v) = imtl_l_inner_min(x, INNER_MIN_TOL).unwrap();
        worst_value = worst_value.max((v - x.ln()).abs());
        worst_argmin = worst_argmin.max((s + x.ln()).abs());
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst_value <= 1e-8 && worst_argmin <= 1e-6 && within(elapsed, 1.0),
        format!(
            "max |min - ln x| = {worst_value:.1e}, max |s* + ln x| = {worst_argmin:.1e} over 8 points in {:.4}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10()))
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> RealVector {
    let scale = log_uniform(rng, 1e-3, 1e3);
    RealVector::new(
        (0..dim)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn max_rel_diff(a: &RealVector, b: &RealVector) -> f64 {
    let scale = a.norm2().max(b.norm2()).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_log: f64 = 0.0;
    let mut worst_dir: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=8);
        let ell = log_uniform(&mut rng, 1e-3, 1e3);
        let c = log_uniform(&mut rng, 1e-3, 1e3);
        let g = random_vec(&mut rng, dim);
        let base = transform_grad(TransformKind::Log, ell, &g).unwrap();
        let scaled = transform_grad(TransformKind::Log, c * ell, &g.scale(c).unwrap()).unwrap();
        worst_log = worst_log.max(max_rel_diff(&base, &scaled));

        let tasks = rng.random_range(2..=5);
        let grads: Vec<RealVector> = (0..tasks).map(|_| random_vec(&mut rng, dim)).collect();
        let rescaled: Vec<RealVector> = grads
            .iter()
            .map(|g| g.scale(log_uniform(&mut rng, 1e-3, 1e3)).unwrap())
            .collect();
        let unit = |gs: &[RealVector]| {
            let d = si_g_aggregate(gs, AlphaStrategy::Max).unwrap().direction;
            let n = d.norm2();
            if n == 0.0 {
                d
            } else {
                d.scale(1.0 / n).unwrap()
            }
        };
        worst_dir = worst_dir.max(max_rel_diff(&unit(&grads), &unit(&rescaled)));
    }
    Outcome::new(
        worst_log <= 1e-12 && worst_dir <= 1e-9,
        format!("1000 draws: log-gradient rel. diff {worst_log:.1e}, SI-G unit direction diff {worst_dir:.1e}"),
    )
}

fn cosine(a: &RealVector, b: &RealVector) -> f64 {
    a.dot(b).unwrap() / (a.norm2() * b.norm2())
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_cos: f64 = 0.0;
    let mut ordered = true;
    for _ in 0..100 {
        let dim = rng.random_range(2..=6);
        let tasks = rng.random_range(2..=5);
        let grads: Vec<RealVector> = (0..tasks).map(|_| random_vec(&mut rng, dim)).collect();
        let out: Vec<_> = AlphaStrategy::ALL
            .iter()
            .map(|&s| si_g_aggregate(&grads, s).unwrap())
            .collect();
        for a in &out {
            for b in &out {
                worst_cos = worst_cos.max((1.0 - cosine(&a.direction, &b.direction)).abs());
            }
        }
        let (max, min, mean, median) = (out[0].alpha, out[1].alpha, out[2].alpha, out[3].alpha);
        ordered &= max >= mean && mean >= min && max >= median && median >= min;
    }

    let dir = TempDir::new().unwrap();
    let mut config = ExperimentConfig {
        seeds: vec![0],
        out: dir.path().to_path_buf(),
        sweep: SweepSpec {
            alpha: AlphaStrategy::ALL.to_vec(),
            ..Default::default()
        },
        ..Default::default()
    };
    config.train.steps = 300;
    let outcome = run_experiment(&config, 0, true).unwrap();
    let recorded: Vec<String> = outcome
        .summaries
        .iter()
        .map(|s| {
            format!(
                "{}: {:.4}/{:.2}",
                s.alpha, s.final_losses[0].mean, s.final_losses[1].mean
            )
        })
        .collect();
    Outcome::new(
        worst_cos <= 1e-12 && ordered && outcome.summaries.len() == 5,
        format!(
            "100 gradient sets: max |1 - cos| = {worst_cos:.1e}, alpha ordering {}; \
             final losses per strategy (task 0/task 1): {}",
            if ordered { "holds" } else { "violated" },
            recorded.join(", ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let ts =
        TaskSet::scaled_quadratics(10, default_centers(10), vec![1.0, 1000.0], 0.1, 0.01).unwrap();
    let star = [0.1, 100.0];
    let gaps = |losses: &[f64]| {
        [
            (losses[0] - star[0]) / star[0],
            (losses[1] - star[1]) / star[1],
        ]
    };
    let cfg = |method, lr, seed| TrainConfig {
        method,
        lr,
        steps: 2000,
        seed,
        ..Default::default()
    };
    // EW's step is stable only for lr < 1/(s1 + s2).
    let stable_lr = 0.5 / 1001.0;

    let mut threshold_met = true;
    let mut balanced = true;
    let mut ordering = true;
    let mut notes = Vec::new();
    for seed in 0..3 {
        let si = gaps(
            &train(&cfg(Method::SiMtl, 0.01, seed), &ts)
                .unwrap()
                .final_losses,
        );
        let si_ratio = si[0].max(si[1]) / si[0].min(si[1]);
        balanced &= si_ratio < 2.0;

        let ew_stated = train(&cfg(Method::Ew, 0.01, seed), &ts);
        let ew_stable = gaps(
            &train(&cfg(Method::Ew, stable_lr, seed), &ts)
                .unwrap()
                .final_losses,
        );
        let ratio = ew_stable[0] / si[0];
        ordering &= ew_stable[0] > si[0] && ew_stable[0] > ew_stable[1];
        match &ew_stated {
            Ok(t) => {
                let r = gaps(&t.final_losses)[0] / si[0];
                threshold_met &= r > 10.0;
                notes.push(format!(
                    "seed {seed}: EW/SI-MTL gap ratio {r:.2} at lr 0.01"
                ));
            }
            Err(e) => {
                threshold_met = false;
                notes.push(format!(
                    "seed {seed}: SI-MTL gaps {:.2}/{:.2}, EW at lr 0.01 {e}; EW at lr {stable_lr:.2e} gap {:.2} (ratio {ratio:.2})",
                    si[0], si[1], ew_stable[0]
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    threshold_met &= balanced && within(elapsed, 30.0);
    let mut out = Outcome::new(
        threshold_met,
        format!(
            "{}; SI-MTL balanced within 2x: {balanced}; EW worse on the small task at stable lr: {ordering}; \
             with SI-MTL gaps within 2x of each other the EW/SI-MTL ratio stays below about 8 while EW converges; {:.1}s",
            notes.join("; "),
            elapsed.as_secs_f64()
        ),
    );
    out.invariants_hold = balanced && ordering;
    out
}

fn criterion_7() -> Outcome {
    let g = RealVector::new(vec![0.3, -1.7, 2.5]).unwrap();
    let mut worst: f64 = 0.0;
    let mut first_exact = true;
    for beta in [0.1, 0.5, 0.9] {
        let mut state = BalancerState::new(
            BalancerKind::SiG,
            1,
            3,
            AlphaStrategy::Max,
            BetaSchedule::Constant(beta),
        )
        .unwrap();
        for k in 0..=100 {
            let ema = state.ema_update(std::slice::from_ref(&g)).unwrap()[0].clone();
            if k == 0 {
                first_exact &= ema == g.scale(1.0 - beta).unwrap();
            }
            let closed = g.scale(1.0 - beta.powi(k + 1)).unwrap();
            worst = worst.max(
                ema.iter()
                    .zip(closed.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        }
    }
    Outcome::new(
        worst <= 1e-10 && first_exact,
        format!("max deviation from (1 - β^(k+1))·g {worst:.1e}; first step exactly (1 - β)·g: {first_exact}"),
    )
}

fn gradient_errors(ts: &TaskSet, rng: &mut ChaCha8Rng, init: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let p = ts.init_params(rng, init).unwrap();
        for t in 0..ts.task_count() {
            let batch = ts.sample_batch(t, 6, rng).unwrap();
            let eval = ts.evaluate(t, &p, &batch).unwrap();
            let fd_shared = finite_diff_grad(
                |theta| {
                    let q = ModelParams {
                        shared: theta.clone(),
                        task_specific: p.task_specific.clone(),
                    };
                    ts.loss(t, &q, &batch).unwrap()
                },
                &p.shared,
                1e-5,
            )
            .unwrap();
            worst = worst.max(max_rel_diff(&eval.grad_shared, &fd_shared));
            if ts.task_specific_dim() > 0 {
                let fd_head = finite_diff_grad(
                    |psi| {
                        let mut q = p.clone();
                        q.task_specific[t] = psi.clone();
                        ts.loss(t, &q, &batch).unwrap()
                    },
                    &p.task_specific[t],
                    1e-5,
                )
                .unwrap();
                worst = worst.max(max_rel_diff(&eval.grad_task_specific, &fd_head));
            }
        }
    }
    worst
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let quad =
        TaskSet::scaled_quadratics(4, default_centers(4), vec![1.0, 1000.0], 0.1, 0.01).unwrap();
    let mlp = make_mlp_regression(3, 3, 5, 32, &[1.0, 10.0, 100.0], 8).unwrap();
    let q = gradient_errors(&quad, &mut rng, 1.0);
    let m = gradient_errors(&mlp, &mut rng, 0.7);
    Outcome::new(
        q <= 1e-4 && m <= 1e-4,
        format!("max relative error vs central differences: quadratic {q:.1e}, MLP {m:.1e}"),
    )
}

fn run_cli(dir: &Path, out: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mtl-balance"))
        .current_dir(dir)
        .args(["run", "config.toml", "--quiet", "--out", out])
        .status()
        .unwrap()
        .success()
}

fn criterion_9() -> Outcome {
    let dir = TempDir::new().unwrap();
    let mut config = ExperimentConfig {
        seeds: vec![0, 1, 2],
        task: TaskSpec::Mlp(Default::default()),
        ..Default::default()
    };
    config.train.steps = 200;
    config.train.method = Method::Rlw;
    config.sweep.method = vec![Method::Rlw, Method::Pcgrad, Method::SiMtl];
    fs::write(
        dir.path().join("config.toml"),
        mtl_balance_cli::config::render(&config),
    )
    .unwrap();
    if !run_cli(dir.path(), "a") || !run_cli(dir.path(), "b") {
        return Outcome::new(false, "run failed".into());
    }
    let mut compared = 0;
    let mut identical = true;
    for cell in config.cells() {
        for seed in &config.seeds {
            let rel = Path::new(&cell.name()).join(format!("seed_{seed}.csv"));
            let a = fs::read(dir.path().join("a").join(&rel)).unwrap();
            let b = fs::read(dir.path().join("b").join(&rel)).unwrap();
            identical &= a == b;
            compared += 1;
        }
    }
    Outcome::new(
        identical && compared == 9,
        format!("{compared} trace pairs from two invocations, byte-identical: {identical}"),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut unexpected = Vec::new();
    for (n, check) in criteria {
        let o = check();
        println!(
            "criterion {n}: {} | {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        let known = KNOWN_UNMET.contains(&n);
        if (!o.passed && !known) || !o.invariants_hold {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
