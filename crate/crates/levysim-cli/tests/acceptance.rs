//! End-to-end acceptance gate.
//!
//! Each test covers one numbered acceptance check, so the harness prints
//! one pass/fail line per criterion. Statistical checks run on frozen
//! seeds and are serialized through a global lock so the stated runtime
//! budgets are measured on a quiet machine.

use std::process::{Command, Output};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use levysim::covariance::{cond_cov_blocks, cond_cov_direct};
use levysim::demo::run_demo;
use levysim::demo::DemoConfig;
use levysim::error_model::{chi2_abs_moment, choose_n, cost, gauss_abs_moment, Algorithm};
use levysim::rng::{open_stream, StreamSpec};
use levysim::sim::Sampler;
use levysim::validation::{
    coupled_fs_error_multi, coupled_ia_error_multi, fit_slope, moment_suite, sigma2_stat_targets,
    sigma2_stats, sqrt_lipschitz_check, McReport,
};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|poison| poison.into_inner())
}

fn assert_all_pass(context: &str, reports: &[McReport]) {
    for report in reports {
        assert!(
            report.pass,
            "{context}: {} estimate {:.8e} (se {:.2e}) missed target {:.8e} under rule {}",
            report.statistic, report.estimate, report.std_error, report.target, report.rule
        );
    }
}

fn assert_budget(context: &str, elapsed: Duration, budget: Duration) {
    assert!(
        elapsed <= budget,
        "{context}: runtime {:.1} s exceeds the {:.0} s budget",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
}

#[test]
fn criterion_01_truncated_sampler_error_matches_the_exact_formula() {
    let _guard = gate();
    let start = Instant::now();
    let reports = coupled_fs_error_multi(1.0, &[1, 2, 5, 10], 10_000, 100_000, 101).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(reports.len(), 4);
    assert!(
        (reports[0].target - 0.180_756_0).abs() < 5e-8,
        "n = 1 closed form drifted: {:.10e}",
        reports[0].target
    );
    assert_all_pass("criterion 1", &reports);
    assert_budget("criterion 1", elapsed, Duration::from_secs(60));
}

#[test]
fn criterion_02_corrected_sampler_error_respects_the_bound_and_rate() {
    let _guard = gate();
    let start = Instant::now();
    let ns = [2usize, 4, 8, 16];
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    for (m, seed) in [(2usize, 201u64), (3, 202), (5, 203)] {
        let reports = coupled_ia_error_multi(m, 1.0, &ns, 10_000, 20_000, seed).unwrap();
        let mut estimates = Vec::with_capacity(ns.len());
        for level in &reports {
            assert!(
                level.max_entry.pass,
                "criterion 2: {} estimate {:.6e} exceeds bound {:.6e} (se {:.2e})",
                level.max_entry.statistic,
                level.max_entry.estimate,
                level.max_entry.target,
                level.max_entry.std_error
            );
            assert!(
                level.frobenius.pass,
                "criterion 2: {} estimate {:.6e} exceeds bound {:.6e}",
                level.frobenius.statistic, level.frobenius.estimate, level.frobenius.target
            );
            estimates.push(level.max_entry.estimate);
        }
        let slope = fit_slope(&xs, &estimates).unwrap();
        assert!(
            (-1.15..=-0.85).contains(&slope),
            "criterion 2: fitted slope {slope:.4} for m = {m} outside [-1.15, -0.85]"
        );
    }
    assert_budget("criterion 2", start.elapsed(), Duration::from_secs(300));
}

#[test]
fn criterion_03_block_covariance_matches_the_direct_form() {
    let _guard = gate();
    for m in 2..=8usize {
        let mut stream = open_stream(StreamSpec::new(301, m as u64));
        for _ in 0..100 {
            let x = stream.draw_normal_vector(m);
            let direct = cond_cov_direct(&x).unwrap();
            let blocks = cond_cov_blocks(&x).unwrap();
            let total = direct.matrix.rows();
            for r in 0..total {
                let mut nonzeros = 0usize;
                for q in 0..total {
                    let diff = (direct.matrix.get(r, q) - blocks.matrix.get(r, q)).abs();
                    assert!(
                        diff <= 1e-12,
                        "criterion 3: block and direct forms differ by {diff:.3e} at m = {m}"
                    );
                    if q != r && blocks.matrix.get(r, q) != 0.0 {
                        nonzeros += 1;
                    }
                }
                assert_eq!(
                    nonzeros,
                    2 * m - 4,
                    "criterion 3: off-diagonal count at m = {m}, row {r}"
                );
            }
        }
    }
    let m = 4usize;
    let total = m * (m - 1) / 2;
    let paths = 50_000usize;
    let mut sum = vec![0.0f64; total * total];
    let mut sum_sq = vec![0.0f64; total * total];
    let mut stream = open_stream(StreamSpec::new(302, 0));
    for _ in 0..paths {
        let x = stream.draw_normal_vector(m);
        let cov = cond_cov_direct(&x).unwrap();
        for r in 0..total {
            for q in 0..total {
                let v = cov.matrix.get(r, q);
                sum[r * total + q] += v;
                sum_sq[r * total + q] += v * v;
            }
        }
    }
    for r in 0..total {
        for q in 0..total {
            let idx = r * total + q;
            let mean = sum[idx] / paths as f64;
            let var = (sum_sq[idx] / paths as f64 - mean * mean).max(0.0);
            let se = (var / paths as f64).sqrt();
            let target = if r == q { 2.0 } else { 0.0 };
            assert!(
                (mean - target).abs() <= 3.0 * se,
                "criterion 3: MC mean entry ({r}, {q}) = {mean:.5} (se {se:.2e}) vs {target}"
            );
        }
    }
}

#[test]
fn criterion_04_covariance_fluctuation_matches_the_variance_identities() {
    let _guard = gate();
    for (m, n, seed) in [(2usize, 1usize, 401u64), (3, 2, 402)] {
        let report = sigma2_stats(m, 1.0, n, 1_000, 20_000, seed).unwrap();
        for side in [&report.row, &report.frobenius] {
            assert!(
                side.pass,
                "criterion 4: {} estimate {:.6e} (se {:.2e}) missed {:.6e}",
                side.statistic, side.estimate, side.std_error, side.target
            );
        }
        let (row, frob) = sigma2_stat_targets(m, 1.0, n).unwrap();
        let pairs = (m * (m - 1) / 2) as f64;
        assert_eq!(
            frob / row,
            pairs,
            "criterion 4: closed-form ratio at m = {m}"
        );
    }
    let (row, _) = sigma2_stat_targets(2, 1.0, 1).unwrap();
    assert!(
        (row - 2.1128e-4).abs() < 5e-9,
        "criterion 4: m = 2, n = 1 closed form drifted: {row:.10e}"
    );
}

#[test]
fn criterion_05_simulation_moments_match_the_ito_isometry() {
    let _guard = gate();
    let reports = moment_suite(Sampler::Ia, 3, 0.25, 4, 1_000_000, 501).unwrap();
    let isometry_targets = reports
        .iter()
        .filter(|r| r.statistic.starts_with("msq_I_") && r.target == 0.03125)
        .count();
    assert_eq!(isometry_targets, 9, "criterion 5: expected h^2/2 targets");
    assert_all_pass("criterion 5", &reports);
}

#[test]
fn criterion_06_cost_model_reproduces_the_published_counts() {
    let _guard = gate();
    let ia = cost(Algorithm::Ia, 2, 2.0, 1.0, 0.01).unwrap();
    let wik = cost(Algorithm::Wik, 2, 2.0, 1.0, 0.01).unwrap();
    let fs = cost(Algorithm::Fs, 2, 2.0, 1.0, 0.01).unwrap();
    assert_eq!(
        (ia.n, ia.draws),
        (13, 57),
        "criterion 6: corrected sampler cost"
    );
    assert_eq!(wik.draws, 87, "criterion 6: preconditioned reference cost");
    assert_eq!(fs.draws, 2032, "criterion 6: truncated sampler cost");
    assert_eq!(
        choose_n(2, 2.0, 1.0, 0.01).unwrap(),
        13,
        "criterion 6: schedule"
    );
    for m in [2usize, 3, 5] {
        let ia = cost(Algorithm::Ia, m, 2.0, 1.0, 1e-6).unwrap();
        let wik = cost(Algorithm::Wik, m, 2.0, 1.0, 1e-6).unwrap();
        let measured = wik.n as f64 / ia.n as f64;
        let limit = (5.0 * (m as f64 - 1.0) / 2.0).sqrt();
        assert!(
            (measured / limit - 1.0).abs() < 0.01,
            "criterion 6: n ratio {measured:.6} vs limit {limit:.6} at m = {m}"
        );
    }
}

#[test]
fn criterion_07_moment_formulas_match_monte_carlo() {
    let _guard = gate();
    let two = chi2_abs_moment(1.0, 0.0).unwrap();
    let four = chi2_abs_moment(2.0, 2.0).unwrap();
    assert!(
        (two - 2.0).abs() <= 4.0 * 2.0 * f64::EPSILON,
        "criterion 7: chi2_abs_moment(1, 0) = {two:.17e}"
    );
    assert!(
        (four - 4.0).abs() <= 4.0 * 4.0 * f64::EPSILON,
        "criterion 7: chi2_abs_moment(2, 2) = {four:.17e}"
    );
    let ps = [1.0f64, 2.5, 4.0];
    let paths = 1_000_000usize;
    let mut gauss_sum = [0.0f64; 3];
    let mut gauss_sum_sq = [0.0f64; 3];
    let mut chi_sum = [0.0f64; 3];
    let mut chi_sum_sq = [0.0f64; 3];
    let mut stream = open_stream(StreamSpec::new(701, 0));
    for _ in 0..paths {
        let z = stream.next_normal();
        let a = stream.next_normal();
        let b = stream.next_normal();
        let r = a * a + b * b;
        for (slot, &p) in ps.iter().enumerate() {
            let g = z.abs().powf(p);
            gauss_sum[slot] += g;
            gauss_sum_sq[slot] += g * g;
            let c = (r - 2.0).abs().powf(p);
            chi_sum[slot] += c;
            chi_sum_sq[slot] += c * c;
        }
    }
    let check = |name: &str, sums: &[f64; 3], squares: &[f64; 3], targets: [f64; 3]| {
        for (slot, &p) in ps.iter().enumerate() {
            let mean = sums[slot] / paths as f64;
            let var = (squares[slot] / paths as f64 - mean * mean).max(0.0);
            let se = (var / paths as f64).sqrt();
            assert!(
                (mean - targets[slot]).abs() <= 3.0 * se,
                "criterion 7: {name} MC mean {mean:.6} (se {se:.2e}) vs {:.6} at p = {p}",
                targets[slot]
            );
        }
    };
    let gauss_targets = [
        gauss_abs_moment(1.0, 1.0).unwrap(),
        gauss_abs_moment(2.5, 1.0).unwrap(),
        gauss_abs_moment(4.0, 1.0).unwrap(),
    ];
    let chi_targets = [
        chi2_abs_moment(1.0, 2.0).unwrap(),
        chi2_abs_moment(2.5, 2.0).unwrap(),
        chi2_abs_moment(4.0, 2.0).unwrap(),
    ];
    check("gauss_abs_moment", &gauss_sum, &gauss_sum_sq, gauss_targets);
    check("chi2_abs_moment", &chi_sum, &chi_sum_sq, chi_targets);
}

#[test]
fn criterion_08_square_root_inequalities_hold_on_random_pairs() {
    let _guard = gate();
    let report = sqrt_lipschitz_check(5, 1_000, 801).unwrap();
    assert!(
        report.pass && report.estimate <= 1e-10,
        "criterion 8: worst residual {:.3e} exceeds the 1e-10 slack",
        report.estimate
    );
}

#[test]
fn criterion_09_demo_recovers_the_strong_convergence_orders() {
    let _guard = gate();
    let start = Instant::now();
    let report = run_demo(&DemoConfig::standard(0)).unwrap();
    assert!(
        (0.85..=1.15).contains(&report.slope_milstein_ia),
        "criterion 9: corrected-sampler slope {:.4} outside [0.85, 1.15]",
        report.slope_milstein_ia
    );
    assert!(
        (0.35..=0.65).contains(&report.slope_euler),
        "criterion 9: Euler slope {:.4} outside [0.35, 0.65]",
        report.slope_euler
    );
    assert_budget("criterion 9", start.elapsed(), Duration::from_secs(300));
}

fn run_cli(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_levysim"));
    cmd.args(args);
    cmd.env_remove("LEVYSIM_THREADS");
    if let Some(workers) = threads {
        cmd.env("LEVYSIM_THREADS", workers);
    }
    cmd.output().expect("spawn levysim")
}

#[test]
fn criterion_10_cli_output_is_deterministic() {
    let _guard = gate();
    let commands: &[&[&str]] = &[
        &[
            "simulate", "--m", "2", "--h", "1", "--eps", "0.01", "--batch", "20", "--seed", "7",
        ],
        &[
            "validate", "--suite", "lemma43", "--paths", "100", "--seed", "7",
        ],
        &["cost", "--m", "3", "--h", "0.5", "--eps", "0.001"],
        &[
            "convergence",
            "--algo",
            "fs",
            "--n-list",
            "2,4,8,16",
            "--paths",
            "2000",
            "--k-max",
            "1600",
            "--seed",
            "7",
        ],
        &[
            "demo",
            "--h-list",
            "0.25,0.125,0.0625",
            "--paths",
            "40",
            "--k-min",
            "150",
            "--seed",
            "7",
        ],
    ];
    for args in commands {
        let serial = run_cli(args, Some("1"));
        let wide = run_cli(args, Some("4"));
        let default = run_cli(args, None);
        assert!(
            !serial.stdout.is_empty(),
            "criterion 10: no output for {args:?}"
        );
        assert_eq!(
            serial.status.code(),
            wide.status.code(),
            "criterion 10: exit code depends on workers for {args:?}"
        );
        assert_eq!(
            serial.stdout, wide.stdout,
            "criterion 10: output depends on worker count for {args:?}"
        );
        assert_eq!(
            serial.stdout, default.stdout,
            "criterion 10: rerun not byte-identical for {args:?}"
        );
    }
}
