//! One PASS/FAIL line per acceptance check.
//!
//! The desk-scale grids (criteria 5 and 6) take most of an hour in release
//! mode. Their cells are kept under `$DISTILL_ACCEPTANCE_DIR` (default
//! `target/tmp/acceptance`); completed cells are skipped on later runs, and a
//! config change is refused by the pinned-config check. Delete the directory
//! to recompute from scratch.

mod common;

use common::conjugate::conjugate_run;
use common::gradcheck::{case, check_forward_kl, check_nll, small_cnn, small_fcnn, TOL};
use distill_core::data::masking_rate;
use distill_core::experiment::{
    cell_entropies, run_grid, Cell, ExperimentConfig, ExperimentError, GridReport, Preset, RunOptions,
};
use distill_core::metrics::{nll, MetricRecord};
use distill_core::nn::ForwardMode;
use distill_core::sgld::NoiseScale;
use distill_core::Tensor;
use std::path::{Path, PathBuf};

type Check = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(pass: bool, detail: String) -> Verdict {
    Verdict { pass: Some(pass), detail }
}

fn skipped(detail: &str) -> Verdict {
    Verdict { pass: None, detail: detail.into() }
}

fn failed(e: ExperimentError) -> Verdict {
    pass_if(false, format!("error: {e}"))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn store() -> PathBuf {
    std::env::var_os("DISTILL_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn desk(out: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.data_dir = workspace().join("data/mnist-desk");
    cfg.out_dir = store().join(out);
    cfg
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn grid(cfg: &ExperimentConfig) -> Result<GridReport, ExperimentError> {
    eprintln!("  running grid in {}", cfg.out_dir.display());
    let report = run_grid(cfg, &RunOptions::default())?;
    match report.failures.first() {
        Some((cell, e)) => Err(ExperimentError::Compute(format!("{cell}: {e}"))),
        None => Ok(report),
    }
}

fn gradients() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        for c in [case(small_fcnn(false), seed, ForwardMode::Eval), case(small_cnn(), seed, ForwardMode::Eval)] {
            worst = worst.max(check_nll(&c)).max(check_forward_kl(&c));
        }
    }
    pass_if(worst < TOL, format!("max relative error {worst:.2e} over 20 FCNN + 20 CNN seeds (< {TOL:e})"))
}

fn conjugate() -> Verdict {
    let (got, want) = conjugate_run(1, NoiseScale::Variance);
    let dm = (got.mean - want.mean).abs();
    let dv = (got.var - want.var).abs() / want.var;
    pass_if(
        dm < 0.05 && dv < 0.15,
        format!(
            "mean {:.4} vs {:.4} (|d| {dm:.4} < 0.05), variance {:.5} vs {:.5} (rel {dv:.3} < 0.15)",
            got.mean, want.mean, got.var, want.var
        ),
    )
}

fn uniform_nll() -> Verdict {
    let rows = 97;
    let probs = Tensor::new(vec![rows, 10], vec![0.1f64; rows * 10]).unwrap();
    let labels: Vec<u8> = (0..rows).map(|i| (i * 7 % 10) as u8).collect();
    let err = (nll(&probs, &labels).unwrap() - 10f64.ln()).abs();
    pass_if(err <= 1e-12, format!("|NLL - ln 10| = {err:.1e} (<= 1e-12)"))
}

fn masking_table() -> Verdict {
    let table = [
        (0, "0.000"),
        (2, "0.005"),
        (6, "0.046"),
        (10, "0.128"),
        (14, "0.250"),
        (18, "0.413"),
        (22, "0.617"),
        (26, "0.862"),
    ];
    let bad: Vec<String> = table
        .iter()
        .filter(|(m, r)| format!("{:.3}", masking_rate(*m)) != *r)
        .map(|(m, r)| format!("m={m}: {:.3} != {r}", masking_rate(*m)))
        .collect();
    pass_if(bad.is_empty(), if bad.is_empty() { "all 8 (m, r) pairs match to 3 d.p.".into() } else { bad.join("; ") })
}

fn uncertainty_trend() -> Verdict {
    let cfg = desk("desk-uncertainty");
    let report = match grid(&cfg) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let at = |m: usize| report.records.iter().find(|r| r.mask_side == m).expect("desk grid cell");
    let (r0, r14, r26) = (at(0), at(14), at(26));
    let cell26 = Cell { n_labeled: r26.n_labeled, mask_side: 26, capacity_factor: 1.0, replicate: 0 };
    let entropies = match cell_entropies(&cfg, &cell26) {
        Ok(v) => v,
        Err(e) => return failed(e),
    };
    let mean_entropy = entropies.iter().sum::<f64>() / entropies.len() as f64;
    let ln10 = 10f64.ln();
    pass_if(
        r14.nll_teacher > r0.nll_teacher && mean_entropy >= 0.85 * ln10,
        format!(
            "teacher NLL m=0 {:.4}, m=14 {:.4}, m=26 {:.4} ({:.1}% from ln 10); mean entropy at m=26 {mean_entropy:.4} = {:.3} ln 10 (>= 0.85)",
            r0.nll_teacher,
            r14.nll_teacher,
            r26.nll_teacher,
            100.0 * (r26.nll_teacher / ln10 - 1.0).abs(),
            mean_entropy / ln10
        ),
    )
}

fn capacity_trend() -> Verdict {
    let mut cfg = desk("desk-capacity");
    cfg.mask_sides = vec![14];
    cfg.capacity_factors = vec![1.0, 2.0, 4.0];
    cfg.replicates = 3;
    let report = match grid(&cfg) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let deltas = |k: f64| -> Vec<f64> {
        report.records.iter().filter(|r: &&MetricRecord| r.capacity_factor == k).map(|r| r.delta).collect()
    };
    let per_k: Vec<String> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&k| {
            format!(
                "K={k}: {:?} median {:.4}",
                deltas(k).iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
                median(deltas(k))
            )
        })
        .collect();
    let (d1, d4) = (median(deltas(1.0)), median(deltas(4.0)));
    pass_if(
        d1 > 0.0 && d4 <= 0.75 * d1,
        format!("{}; need median K=4 <= 0.75 x median K=1 = {:.4}", per_k.join(", "), 0.75 * d1),
    )
}

fn tiny_mnist(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.data_dir = workspace().join("data/mnist-desk");
    cfg.out_dir = out.to_path_buf();
    cfg.n_labeled = vec![300];
    cfg.mask_sides = vec![0, 14];
    cfg.capacity_factors = vec![1.0, 2.0];
    cfg.pool_size = 600;
    cfg.test_size = 200;
    cfg.base_width = 16;
    cfg.checkpoint_every = 50;
    cfg.teacher.burn_in = 50;
    cfg.teacher.thinning = 10;
    cfg.teacher.total_iters = 200;
    cfg
}

fn determinism() -> Verdict {
    let run = || -> Result<[Vec<u8>; 3], ExperimentError> {
        let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        let a = grid(&tiny_mnist(dirs[0].path()))?;
        let b = grid(&tiny_mnist(dirs[1].path()))?;
        // interrupted mid-chain after a periodic checkpoint, then resumed
        let c = tiny_mnist(dirs[2].path());
        let halted = run_grid(&c, &RunOptions { jobs: 1, halt_at: Some(120) })?;
        if halted.failures.len() != 4
            || !halted.failures.iter().all(|(_, e)| matches!(e, ExperimentError::Interrupted { .. }))
        {
            return Err(ExperimentError::Compute("halted grid did not stop every cell".into()));
        }
        let c = distill_core::experiment::resume(dirs[2].path(), Some(&c), &RunOptions::default())?;
        let read = |p: &Path| std::fs::read(p).unwrap();
        Ok([read(&a.results_csv), read(&b.results_csv), read(&c.results_csv)])
    };
    match run() {
        Ok([a, b, c]) => pass_if(
            a == b && a == c,
            format!(
                "repeat run identical: {}; interrupted-and-resumed identical: {} ({} bytes, 4 cells)",
                a == b,
                a == c,
                a.len()
            ),
        ),
        Err(e) => failed(e),
    }
}

fn full_scale() -> Verdict {
    if std::env::var("DISTILL_FULL_SCALE").as_deref() != Ok("1") {
        return skipped("hours-scale; set DISTILL_FULL_SCALE=1 with data/mnist fetched to run it");
    }
    let mut cfg = ExperimentConfig::preset(Preset::Paper);
    cfg.data_dir = workspace().join("data/mnist");
    cfg.out_dir = store().join("paper-n60000-m0");
    cfg.n_labeled = vec![60_000];
    cfg.mask_sides = vec![0];
    match grid(&cfg) {
        Ok(report) => {
            let r = &report.records[0];
            pass_if(
                (r.nll_teacher - 0.052).abs() <= 0.02 && (r.nll_student - 0.080).abs() <= 0.02,
                format!(
                    "teacher NLL {:.4} (0.052 +- 0.02), student NLL {:.4} (0.080 +- 0.02)",
                    r.nll_teacher, r.nll_student
                ),
            )
        }
        Err(e) => failed(e),
    }
}

fn distillation_descent() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let (before, after) = common::toy_distillation(seed, 5_000);
        let drop = 1.0 - after / before;
        ok &= drop >= 0.5;
        parts.push(format!("seed {seed}: {before:.4} -> {after:.4} ({:.0}% drop)", 100.0 * drop));
    }
    pass_if(ok, format!("{} (need >= 50%)", parts.join(", ")))
}

fn main() {
    let criteria: [Check; 9] = [
        ("gradient correctness", gradients),
        ("SGLD conjugate oracle", conjugate),
        ("uniform-predictor NLL", uniform_nll),
        ("masking rate table", masking_table),
        ("uncertainty trend (desk)", uncertainty_trend),
        ("capacity trend (desk)", capacity_trend),
        ("determinism and resume", determinism),
        ("full-scale reproduction", full_scale),
        ("distillation descent", distillation_descent),
    ];
    let only: Option<Vec<usize>> = std::env::var("DISTILL_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = std::time::Instant::now();
        let v = check();
        let tag = match v.pass {
            Some(true) => "PASS",
            Some(false) => {
                failures += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("{tag} {id} {name}: {} [{:.1?}]", v.detail, started.elapsed());
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
