//! Monte Carlo and deterministic harnesses for the advertised laws and
//! error formulas.
//!
//! The centerpiece is the coupled error construction. Drawing the tail
//! coefficients x_k, y_k for k = n+1..K gives both the realized tail
//!
//! ```text
//! R2 = (h / 2 pi) sum_{k=n+1}^K (1/k) (x_{i,k} y_{j,k} - x_{j,k} y_{i,k})
//! ```
//!
//! and its conditional covariance Sigma^(n,K) given the x_k. Defining
//! Psi2 = (2 pi / h) sym_psd_sqrt(Sigma^(n,K))^{-1} R2 makes Psi2 standard
//! normal, and the corrected sampler's approximation error is measurable
//! pathwise as R2 - sqrt(scale) Psi2 with scale = (h^2 / 2 pi^2) alpha_n.
//! [`coupled_fs_error`] measures the plain truncation error R2 itself
//! against its exact L^2 value; [`coupled_ia_error`] measures the coupled
//! difference against its closed-form bound. Both truncate the tail at K,
//! which biases the measured mean square low by at most the relative
//! factor [`relative_tail_bias`] = alpha_K / alpha_n, kept below one
//! percent by the default cutoff K = max(10^4, 100 n).
//!
//! All Monte Carlo loops draw one substream per realization and reduce
//! partial sums over fixed blocks in index order, so every statistic is
//! reproducible from the seed and independent of the worker count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::covariance::{sigma2_from_weighted_moment, sigma2_inf, CondCov};
use crate::error_model::{l2_error_fs_exact, l2_error_ia_bound};
use crate::linalg::{pair_count, pair_order, sym_psd_sqrt, FlatMatrix};
use crate::rng::{open_stream, NormalStream, StreamSpec};
use crate::sim::{simulate_fs, simulate_ia, tail_constants, Sampler};
use crate::{Error, Result};

/// How a report decides pass or fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToleranceRule {
    /// Two-sided: |estimate - target| <= k standard errors.
    WithinSe(f64),
    /// One-sided bound check: estimate <= target + k standard errors.
    BoundedAboveSe(f64),
    /// Fixed absolute tolerance for algebraic identities.
    Absolute(f64),
}

impl std::fmt::Display for ToleranceRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ToleranceRule::WithinSe(k) => write!(f, "within {k} SE"),
            ToleranceRule::BoundedAboveSe(k) => write!(f, "bounded above within {k} SE"),
            ToleranceRule::Absolute(tol) => write!(f, "absolute {tol:e}"),
        }
    }
}

/// One validated statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    /// Name of the statistic, including its parameter point.
    pub statistic: String,
    /// Monte Carlo estimate or deterministic value.
    pub estimate: f64,
    /// Standard error of the estimate; zero for deterministic checks.
    pub std_error: f64,
    /// Reference value or bound the estimate is held against.
    pub target: f64,
    /// Decision rule.
    pub rule: ToleranceRule,
    /// Whether the rule is satisfied.
    pub pass: bool,
}

impl McReport {
    /// Evaluates the rule and records the outcome.
    pub fn evaluate(
        statistic: impl Into<String>,
        estimate: f64,
        std_error: f64,
        target: f64,
        rule: ToleranceRule,
    ) -> McReport {
        let pass = match rule {
            ToleranceRule::WithinSe(k) => (estimate - target).abs() <= k * std_error,
            ToleranceRule::BoundedAboveSe(k) => estimate <= target + k * std_error,
            ToleranceRule::Absolute(tol) => (estimate - target).abs() <= tol,
        };
        McReport {
            statistic: statistic.into(),
            estimate,
            std_error,
            target,
            rule,
            pass,
        }
    }
}

/// Paired max-entry and Frobenius reports for the corrected sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct IaErrorReport {
    /// Largest per-entry root mean square error versus its bound.
    pub max_entry: McReport,
    /// Frobenius root mean square error versus its bound.
    pub frobenius: McReport,
}

/// Paired row and Frobenius reports for the covariance fluctuation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma2Report {
    /// First-row squared-norm statistic versus its closed form.
    pub row: McReport,
    /// Full Frobenius statistic versus its closed form.
    pub frobenius: McReport,
}

/// Relative downward bias alpha_K / alpha_n incurred by cutting the tail
/// series at mode K when measuring a level-n quantity.
pub fn relative_tail_bias(n: usize, k_max: usize) -> f64 {
    tail_constants(k_max).alpha / tail_constants(n).alpha
}

const BLOCK_SIZE: usize = 256;

/// Runs `step` for indices 0..n and returns per-block accumulators in
/// block order. Blocks are mapped in parallel but each block accumulates
/// sequentially and the caller folds blocks in order, so the result does
/// not depend on the worker count.
pub(crate) fn blocked_accumulate<A, I, S>(n: usize, init: I, step: S) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, usize) + Sync,
{
    let blocks = n.div_ceil(BLOCK_SIZE);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let start = b * BLOCK_SIZE;
            let end = ((b + 1) * BLOCK_SIZE).min(n);
            for i in start..end {
                step(&mut acc, i);
            }
            acc
        })
        .collect()
}

/// One realization of the truncated tail: the realized areas R2 and the
/// k^{-2}-weighted second-moment matrix of the x coefficients.
#[derive(Debug, Clone)]
pub(crate) struct TailSample {
    pub(crate) m: usize,
    pub(crate) h: f64,
    pub(crate) n: usize,
    pub(crate) weighted_moment: FlatMatrix,
    pub(crate) r2: Vec<f64>,
}

impl TailSample {
    /// Conditional covariance of R2 given the x coefficients.
    pub(crate) fn cond_cov(&self) -> CondCov {
        sigma2_from_weighted_moment(self.h, &self.weighted_moment)
    }

    /// The coupled standard normal vector Psi2 = sym_psd_sqrt(Sigma)^{-1} R2,
    /// where Sigma is the conditional covariance of R2 itself; written with
    /// the un-prefactored coefficient sum S this is
    /// (2 pi / h) sym_psd_sqrt(S)^{-1} R2.
    pub(crate) fn psi2(&self) -> Result<Vec<f64>> {
        let cov = self.cond_cov();
        let root = sym_psd_sqrt(&cov.matrix)?;
        let q = root.rows();
        let a = nalgebra::DMatrix::from_column_slice(q, q, root.as_slice());
        let chol = nalgebra::Cholesky::new(a).ok_or_else(|| {
            Error::Matrix(
                "conditional tail covariance is singular; increase the cutoff K".to_string(),
            )
        })?;
        let z = chol.solve(&nalgebra::DVector::from_column_slice(&self.r2));
        Ok(z.as_slice().to_vec())
    }

    /// Pathwise approximation error of the corrected sampler:
    /// R2 - sqrt(scale) Psi2 per area component.
    pub(crate) fn coupled_error(&self) -> Result<Vec<f64>> {
        let psi2 = self.psi2()?;
        let scale_root = sigma2_inf(self.h, self.n, self.m)?.sqrt();
        Ok(self
            .r2
            .iter()
            .zip(psi2.iter())
            .map(|(r, p)| r - scale_root * p)
            .collect())
    }
}

/// Draws the tail modes k = min(ns)+1 ..= k_max once and snapshots the
/// running sums so that every level in `ns` gets the sample it would get
/// from its own pass over k = n+1 ..= k_max with common random numbers.
/// Modes consume draws as x_k then y_k, m components each. The moment
/// matrix is only accumulated when `with_moment` is set.
pub(crate) fn draw_tail_samples(
    m: usize,
    h: f64,
    ns: &[usize],
    k_max: usize,
    stream: &mut NormalStream,
    with_moment: bool,
) -> Result<Vec<TailSample>> {
    if ns.is_empty() {
        return Err(Error::InvalidParameter(
            "draw_tail_samples requires at least one truncation level".to_string(),
        ));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "truncation levels must be strictly increasing".to_string(),
        ));
    }
    let n_min = ns[0];
    if n_min < 1 || k_max <= ns[ns.len() - 1] {
        return Err(Error::InvalidParameter(format!(
            "draw_tail_samples requires 1 <= n < K, got ns = {ns:?}, K = {k_max}"
        )));
    }
    let pairs = pair_order(m);
    let total = pairs.len();
    let mut moment_run = FlatMatrix::zeros(m, m);
    let mut r2_run = vec![0.0; total];
    let mut snapshots: Vec<(FlatMatrix, Vec<f64>)> = Vec::with_capacity(ns.len());
    let mut next = 0usize;
    let mut x = vec![0.0; m];
    let mut y = vec![0.0; m];
    for k in n_min + 1..=k_max {
        while next < ns.len() && ns[next] + 1 == k {
            snapshots.push((moment_run.clone(), r2_run.clone()));
            next += 1;
        }
        stream.fill_normal(&mut x);
        stream.fill_normal(&mut y);
        let kf = k as f64;
        let inv_k = 1.0 / kf;
        for (r, &(i, j)) in pairs.iter().enumerate() {
            r2_run[r] += inv_k * (x[i] * y[j] - x[j] * y[i]);
        }
        if with_moment {
            let w = inv_k * inv_k;
            for b in 0..m {
                for a in 0..m {
                    moment_run.set(a, b, moment_run.get(a, b) + w * x[a] * x[b]);
                }
            }
        }
    }
    let area_factor = h / (2.0 * PI);
    Ok(ns
        .iter()
        .zip(snapshots)
        .map(|(&n, (moment_pref, r2_pref))| {
            let mut moment = FlatMatrix::zeros(m, m);
            if with_moment {
                for b in 0..m {
                    for a in 0..m {
                        moment.set(a, b, moment_run.get(a, b) - moment_pref.get(a, b));
                    }
                }
            }
            let r2 = r2_run
                .iter()
                .zip(r2_pref.iter())
                .map(|(run, pref)| area_factor * (run - pref))
                .collect();
            TailSample {
                m,
                h,
                n,
                weighted_moment: moment,
                r2,
            }
        })
        .collect())
}

fn validate_mc_grid(context: &str, n_levels: &[usize], k_max: usize, paths: usize) -> Result<()> {
    let n_max = *n_levels.iter().max().unwrap_or(&1);
    if k_max < 100 * n_max {
        return Err(Error::InvalidParameter(format!(
            "{context} requires K >= 100 n, got K = {k_max} for n = {n_max}"
        )));
    }
    if paths < 1_000 {
        return Err(Error::InvalidParameter(format!(
            "{context} requires at least 1000 realizations, got {paths}"
        )));
    }
    Ok(())
}

struct SquareAcc {
    sum_sq: Vec<f64>,
    sum_quad: Vec<f64>,
}

impl SquareAcc {
    fn new(len: usize) -> SquareAcc {
        SquareAcc {
            sum_sq: vec![0.0; len],
            sum_quad: vec![0.0; len],
        }
    }

    fn push(&mut self, slot: usize, value_sq: f64) {
        self.sum_sq[slot] += value_sq;
        self.sum_quad[slot] += value_sq * value_sq;
    }

    fn merge(mut self, other: SquareAcc) -> SquareAcc {
        for (a, b) in self.sum_sq.iter_mut().zip(other.sum_sq.iter()) {
            *a += b;
        }
        for (a, b) in self.sum_quad.iter_mut().zip(other.sum_quad.iter()) {
            *a += b;
        }
        self
    }

    /// Mean and standard error of the mean for one slot.
    fn mean_se(&self, slot: usize, count: usize) -> (f64, f64) {
        let nf = count as f64;
        let mean = self.sum_sq[slot] / nf;
        let var = (self.sum_quad[slot] / nf - mean * mean).max(0.0);
        (mean, (var / nf).sqrt())
    }
}

/// Root mean square of a mean-square statistic with its delta-method
/// standard error.
fn rms_with_se(mean_sq: f64, se_sq: f64) -> (f64, f64) {
    let rms = mean_sq.max(0.0).sqrt();
    let se = if rms > 0.0 {
        se_sq / (2.0 * rms)
    } else {
        se_sq
    };
    (rms, se)
}

/// Measures the truncation error of the plain truncated sampler for one
/// area component against its exact L^2 value, using N independent tail
/// realizations cut off at mode K.
pub fn coupled_fs_error(
    h: f64,
    n: usize,
    k_max: usize,
    paths: usize,
    seed: u64,
) -> Result<McReport> {
    Ok(coupled_fs_error_multi(h, &[n], k_max, paths, seed)?.remove(0))
}

/// Multi-level variant of [`coupled_fs_error`]: all levels share one pass
/// over the tail modes with common random numbers.
pub fn coupled_fs_error_multi(
    h: f64,
    ns: &[usize],
    k_max: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<McReport>> {
    validate_mc_grid("coupled_fs_error", ns, k_max, paths)?;
    let levels = ns.len();
    let blocks = blocked_accumulate(
        paths,
        || SquareAcc::new(levels),
        |acc, realization| {
            let mut stream = open_stream(StreamSpec::new(seed, realization as u64));
            let samples = draw_tail_samples(2, h, ns, k_max, &mut stream, false)
                .expect("validated parameters");
            for (t, sample) in samples.iter().enumerate() {
                acc.push(t, sample.r2[0] * sample.r2[0]);
            }
        },
    );
    let acc = blocks
        .into_iter()
        .reduce(SquareAcc::merge)
        .unwrap_or_else(|| SquareAcc::new(levels));
    ns.iter()
        .enumerate()
        .map(|(t, &n)| {
            let (mean_sq, se_sq) = acc.mean_se(t, paths);
            let (rms, se) = rms_with_se(mean_sq, se_sq);
            Ok(McReport::evaluate(
                format!("fs_l2_error[h={h},n={n},K={k_max},N={paths}]"),
                rms,
                se,
                l2_error_fs_exact(h, n)?,
                ToleranceRule::WithinSe(3.0),
            ))
        })
        .collect()
}

/// Measures the coupled error of the corrected sampler against its
/// closed-form max-entry and Frobenius L^2 bounds.
pub fn coupled_ia_error(
    m: usize,
    h: f64,
    n: usize,
    k_max: usize,
    paths: usize,
    seed: u64,
) -> Result<IaErrorReport> {
    Ok(coupled_ia_error_multi(m, h, &[n], k_max, paths, seed)?.remove(0))
}

/// Multi-level variant of [`coupled_ia_error`] sharing one pass over the
/// tail modes across all levels.
pub fn coupled_ia_error_multi(
    m: usize,
    h: f64,
    ns: &[usize],
    k_max: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<IaErrorReport>> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "coupled_ia_error requires m >= 2, got {m}"
        )));
    }
    validate_mc_grid("coupled_ia_error", ns, k_max, paths)?;
    let levels = ns.len();
    let total = pair_count(m);
    let blocks = blocked_accumulate(
        paths,
        || SquareAcc::new(levels * (total + 1)),
        |acc, realization| {
            let mut stream = open_stream(StreamSpec::new(seed, realization as u64));
            let samples = draw_tail_samples(m, h, ns, k_max, &mut stream, true)
                .expect("validated parameters");
            for (t, sample) in samples.iter().enumerate() {
                let errors = sample.coupled_error().expect("well-conditioned covariance");
                let mut frob = 0.0;
                for (r, e) in errors.iter().enumerate() {
                    let sq = e * e;
                    acc.push(t * (total + 1) + r, sq);
                    frob += 2.0 * sq;
                }
                acc.push(t * (total + 1) + total, frob);
            }
        },
    );
    let acc = blocks
        .into_iter()
        .reduce(SquareAcc::merge)
        .unwrap_or_else(|| SquareAcc::new(levels * (total + 1)));
    ns.iter()
        .enumerate()
        .map(|(t, &n)| {
            let bounds = l2_error_ia_bound(h, n, m)?;
            let mut worst = (0usize, f64::NEG_INFINITY);
            for r in 0..total {
                let (mean_sq, _) = acc.mean_se(t * (total + 1) + r, paths);
                if mean_sq > worst.1 {
                    worst = (r, mean_sq);
                }
            }
            let (mean_sq, se_sq) = acc.mean_se(t * (total + 1) + worst.0, paths);
            let (rms, se) = rms_with_se(mean_sq, se_sq);
            let max_entry = McReport::evaluate(
                format!("ia_l2_max_entry[m={m},h={h},n={n},K={k_max},N={paths}]"),
                rms,
                se,
                bounds.max_entry,
                ToleranceRule::BoundedAboveSe(3.0),
            );
            let (frob_sq, frob_se_sq) = acc.mean_se(t * (total + 1) + total, paths);
            let (frob, frob_se) = rms_with_se(frob_sq, frob_se_sq);
            let frobenius = McReport::evaluate(
                format!("ia_l2_frobenius[m={m},h={h},n={n},K={k_max},N={paths}]"),
                frob,
                frob_se,
                bounds.frobenius,
                ToleranceRule::BoundedAboveSe(3.0),
            );
            Ok(IaErrorReport {
                max_entry,
                frobenius,
            })
        })
        .collect()
}

/// Monte Carlo check of the covariance fluctuation statistics: the
/// squared norm of one row of Sigma^(n,K) - scale I against
/// (h^4 m / 8 pi^4) beta_n and the squared Frobenius norm against
/// (h^4 m^2 (m-1) / 16 pi^4) beta_n.
pub fn sigma2_stats(
    m: usize,
    h: f64,
    n: usize,
    k_max: usize,
    paths: usize,
    seed: u64,
) -> Result<Sigma2Report> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "sigma2_stats requires m >= 2, got {m}"
        )));
    }
    validate_mc_grid("sigma2_stats", &[n], k_max, paths)?;
    let scale = sigma2_inf(h, n, m)?;
    let total = pair_count(m);
    let blocks = blocked_accumulate(
        paths,
        || SquareAcc::new(2),
        |acc, realization| {
            let mut stream = open_stream(StreamSpec::new(seed, realization as u64));
            let samples = draw_tail_samples(m, h, &[n], k_max, &mut stream, true)
                .expect("validated parameters");
            let cov = samples[0].cond_cov();
            let mut row = 0.0;
            let mut frob = 0.0;
            for r in 0..total {
                for q in 0..total {
                    let d = cov.matrix.get(r, q) - if r == q { scale } else { 0.0 };
                    if r == 0 {
                        row += d * d;
                    }
                    frob += d * d;
                }
            }
            acc.push(0, row);
            acc.push(1, frob);
        },
    );
    let acc = blocks
        .into_iter()
        .reduce(SquareAcc::merge)
        .unwrap_or_else(|| SquareAcc::new(2));
    let beta = tail_constants(n).beta;
    let mf = m as f64;
    let h4 = h.powi(4);
    let pi4 = PI.powi(4);
    let (row_est, row_se) = acc.mean_se(0, paths);
    let row = McReport::evaluate(
        format!("sigma2_row_msq[m={m},h={h},n={n},K={k_max},N={paths}]"),
        row_est,
        row_se,
        h4 * mf / (8.0 * pi4) * beta,
        ToleranceRule::WithinSe(5.0),
    );
    let (frob_est, frob_se) = acc.mean_se(1, paths);
    let frobenius = McReport::evaluate(
        format!("sigma2_frob_msq[m={m},h={h},n={n},K={k_max},N={paths}]"),
        frob_est,
        frob_se,
        h4 * mf * mf * (mf - 1.0) / (16.0 * pi4) * beta,
        ToleranceRule::WithinSe(5.0),
    );
    Ok(Sigma2Report { row, frobenius })
}

/// Closed-form targets of [`sigma2_stats`]: the row statistic and the
/// Frobenius statistic, whose ratio is exactly M = m(m-1)/2.
pub fn sigma2_stat_targets(m: usize, h: f64, n: usize) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "sigma2_stat_targets requires m >= 2, got {m}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter(
            "sigma2_stat_targets requires n >= 1".to_string(),
        ));
    }
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma2_stat_targets requires h > 0, got {h}"
        )));
    }
    let beta = tail_constants(n).beta;
    let mf = m as f64;
    let h4 = h.powi(4);
    let pi4 = PI.powi(4);
    let row = h4 * mf / (8.0 * pi4) * beta;
    Ok((row, row * (mf * (mf - 1.0) / 2.0)))
}

/// Property test of the square-root Lipschitz inequalities on random
/// commuting matrix pairs.
///
/// Each trial builds A = Q D_A Q^T positive semidefinite and
/// B = Q D_B Q^T positive definite from one random orthogonal Q (QR of a
/// Gaussian matrix) with spectra drawn uniformly from [0, 2] and (0, 2],
/// plus an independent Gaussian C, and evaluates the residuals of
///
/// ```text
/// (i)   ||C (sqrt(A) - sqrt(B))||_2 <= lambda_min(B)^{-1/2} ||C (A - B)||_2
/// (ii)  ||C (sqrt(A) - sqrt(B))||_2 <= lambda_min(B)^{-1/2} ||C (A - B)||_F
/// (iii) ||C (sqrt(A) - sqrt(B))||_F <= lambda_min(B)^{-1/2} ||C (A - B)||_F
/// ```
///
/// The estimate is the largest positive residual across all trials and
/// inequalities; it must stay within the 1e-10 slack.
pub fn sqrt_lipschitz_check(q: usize, trials: usize, seed: u64) -> Result<McReport> {
    if q < 1 {
        return Err(Error::InvalidParameter(
            "sqrt_lipschitz_check requires q >= 1".to_string(),
        ));
    }
    if trials < 1 {
        return Err(Error::InvalidParameter(
            "sqrt_lipschitz_check requires at least one trial".to_string(),
        ));
    }
    let blocks = blocked_accumulate(
        trials,
        || f64::NEG_INFINITY,
        |worst, trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let gauss =
                nalgebra::DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
            let qr = gauss.qr();
            let ortho = qr.q();
            let spec_a: Vec<f64> = (0..q).map(|_| 2.0 * rng.random::<f64>()).collect();
            let spec_b: Vec<f64> = (0..q).map(|_| 2.0 * (1.0 - rng.random::<f64>())).collect();
            let c = nalgebra::DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
            let assemble = |spec: &[f64]| -> FlatMatrix {
                let d =
                    nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(spec));
                let raw = &ortho * d * ortho.transpose();
                let mut out = FlatMatrix::zeros(q, q);
                for j in 0..q {
                    for i in 0..=j {
                        let v = 0.5 * (raw[(i, j)] + raw[(j, i)]);
                        out.set(i, j, v);
                        out.set(j, i, v);
                    }
                }
                out
            };
            let a = assemble(&spec_a);
            let b = assemble(&spec_b);
            let sqrt_a = sym_psd_sqrt(&a).expect("constructed positive semidefinite");
            let sqrt_b = sym_psd_sqrt(&b).expect("constructed positive definite");
            let lambda_min = spec_b.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
            let weight = lambda_min.powf(-0.5);
            let to_na = |fm: &FlatMatrix| {
                nalgebra::DMatrix::from_column_slice(fm.rows(), fm.cols(), fm.as_slice())
            };
            let diff_root = to_na(&sqrt_a) - to_na(&sqrt_b);
            let diff = to_na(&a) - to_na(&b);
            let lhs_mat = &c * diff_root;
            let rhs_mat = &c * diff;
            let spectral = |mat: &nalgebra::DMatrix<f64>| -> f64 {
                mat.clone().svd(false, false).singular_values.amax()
            };
            let frob = |mat: &nalgebra::DMatrix<f64>| -> f64 { mat.norm() };
            let lhs_2 = spectral(&lhs_mat);
            let lhs_f = frob(&lhs_mat);
            let rhs_2 = weight * spectral(&rhs_mat);
            let rhs_f = weight * frob(&rhs_mat);
            let residual = (lhs_2 - rhs_2).max(lhs_2 - rhs_f).max(lhs_f - rhs_f);
            if residual > *worst {
                *worst = residual;
            }
        },
    );
    let worst = blocks
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Ok(McReport::evaluate(
        format!("sqrt_lipschitz_max_violation[q={q},trials={trials}]"),
        worst,
        0.0,
        0.0,
        ToleranceRule::Absolute(1e-10),
    ))
}

/// Fine-grid path oracle: simulates one Brownian step of length h on a
/// uniform grid with `fine_steps` substeps and returns the increment with
/// the left-point Riemann-Ito double sums as off-diagonal integrals and
/// the exact diagonal (dW_i^2 - h) / 2.
pub fn path_oracle(
    m: usize,
    h: f64,
    fine_steps: usize,
    stream: &mut NormalStream,
) -> Result<(crate::sim::IncrementVector, crate::sim::IntegralMatrix)> {
    if m < 1 {
        return Err(Error::InvalidParameter(
            "path_oracle requires m >= 1".to_string(),
        ));
    }
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "path_oracle requires h > 0, got {h}"
        )));
    }
    if fine_steps < 1_000 {
        return Err(Error::InvalidParameter(format!(
            "path_oracle requires at least 1000 fine steps, got {fine_steps}"
        )));
    }
    let dt = h / fine_steps as f64;
    let root_dt = dt.sqrt();
    let mut w = vec![0.0; m];
    let mut sums = vec![0.0; m * m];
    let mut dw = vec![0.0; m];
    for _ in 0..fine_steps {
        stream.fill_normal(&mut dw);
        for slot in dw.iter_mut() {
            *slot *= root_dt;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sums[i * m + j] += w[i] * dw[j];
                }
            }
        }
        for (acc, d) in w.iter_mut().zip(dw.iter()) {
            *acc += d;
        }
    }
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            values[i * m + j] = if i == j {
                (w[i] * w[i] - h) / 2.0
            } else {
                sums[i * m + j]
            };
        }
    }
    let inc = crate::sim::IncrementVector { h, dw: w };
    let mat = crate::sim::IntegralMatrix {
        m,
        h,
        calculus: crate::sim::Calculus::Ito,
        values,
    };
    Ok((inc, mat))
}

struct MomentAcc {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    sq_sum: Vec<f64>,
    sq_sum_sq: Vec<f64>,
    cross_sum: Vec<f64>,
    cross_sum_sq: Vec<f64>,
    residual_max: f64,
    product_max: f64,
}

impl MomentAcc {
    fn new(entries: usize, crosses: usize) -> MomentAcc {
        MomentAcc {
            sum: vec![0.0; entries],
            sum_sq: vec![0.0; entries],
            sq_sum: vec![0.0; entries],
            sq_sum_sq: vec![0.0; entries],
            cross_sum: vec![0.0; crosses],
            cross_sum_sq: vec![0.0; crosses],
            residual_max: 0.0,
            product_max: 0.0,
        }
    }

    fn merge(mut self, other: MomentAcc) -> MomentAcc {
        let pairs = [
            (&mut self.sum, &other.sum),
            (&mut self.sum_sq, &other.sum_sq),
            (&mut self.sq_sum, &other.sq_sum),
            (&mut self.sq_sum_sq, &other.sq_sum_sq),
            (&mut self.cross_sum, &other.cross_sum),
            (&mut self.cross_sum_sq, &other.cross_sum_sq),
        ];
        for (mine, theirs) in pairs {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a += b;
            }
        }
        self.residual_max = self.residual_max.max(other.residual_max);
        self.product_max = self.product_max.max(other.product_max);
        self
    }
}

fn mean_se(sum: f64, sum_sq: f64, count: usize) -> (f64, f64) {
    let nf = count as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Cross-moment product pairs checked by [`moment_suite`]: each entry is
/// ((i, j), (k, l)) in zero-based indices.
fn cross_pairs(m: usize) -> Vec<((usize, usize), (usize, usize))> {
    let mut out: Vec<((usize, usize), (usize, usize))> = pair_order(m)
        .into_iter()
        .map(|(i, j)| ((i, j), (j, i)))
        .collect();
    if m >= 3 {
        out.push(((0, 1), (0, 2)));
        out.push(((0, 1), (1, 2)));
        out.push(((0, 0), (0, 1)));
        out.push(((0, 0), (1, 1)));
    }
    out
}

/// Runs one sampler N times and verifies unbiasedness, the exact or
/// deflated second moments, vanishing cross-moments and the pairwise
/// floating-point identity of the assembled matrices.
pub fn moment_suite(
    algo: Sampler,
    m: usize,
    h: f64,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<McReport>> {
    if paths < 1_000 {
        return Err(Error::InvalidParameter(format!(
            "moment_suite requires at least 1000 realizations, got {paths}"
        )));
    }
    let entries = m * m;
    let crosses = cross_pairs(m);
    let deficit = if m >= 2 && matches!(algo, Sampler::Fs) {
        sigma2_inf(h, n, m)?
    } else {
        0.0
    };
    let blocks = blocked_accumulate(
        paths,
        || MomentAcc::new(entries, crosses.len()),
        |acc, realization| {
            let mut stream = open_stream(StreamSpec::new(seed, realization as u64));
            let (inc, mat) = match algo {
                Sampler::Ia => simulate_ia(m, h, n, &mut stream),
                Sampler::Fs => simulate_fs(m, h, n, &mut stream),
            }
            .expect("validated parameters");
            for i in 0..m {
                for j in 0..m {
                    let v = mat.entry(i, j);
                    let idx = i * m + j;
                    acc.sum[idx] += v;
                    acc.sum_sq[idx] += v * v;
                    acc.sq_sum[idx] += v * v;
                    acc.sq_sum_sq[idx] += v * v * v * v;
                    if i < j {
                        let p = inc.dw[i] * inc.dw[j];
                        let residual = (mat.entry(i, j) + mat.entry(j, i) - p).abs();
                        acc.residual_max = acc.residual_max.max(residual);
                        acc.product_max = acc.product_max.max(p.abs());
                    }
                }
            }
            for (slot, &((i, j), (k, l))) in crosses.iter().enumerate() {
                let prod = mat.entry(i, j) * mat.entry(k, l);
                acc.cross_sum[slot] += prod;
                acc.cross_sum_sq[slot] += prod * prod;
            }
        },
    );
    let acc = blocks
        .into_iter()
        .reduce(MomentAcc::merge)
        .unwrap_or_else(|| MomentAcc::new(entries, crosses.len()));
    let mut reports = Vec::new();
    let second_moment = h * h / 2.0;
    for i in 0..m {
        for j in 0..m {
            let idx = i * m + j;
            let (mean, se) = mean_se(acc.sum[idx], acc.sum_sq[idx], paths);
            reports.push(McReport::evaluate(
                format!("mean_I_{}_{}", i + 1, j + 1),
                mean,
                se,
                0.0,
                ToleranceRule::WithinSe(3.0),
            ));
            let (msq, msq_se) = mean_se(acc.sq_sum[idx], acc.sq_sum_sq[idx], paths);
            let target = if i == j {
                second_moment
            } else {
                second_moment - deficit
            };
            reports.push(McReport::evaluate(
                format!("msq_I_{}_{}", i + 1, j + 1),
                msq,
                msq_se,
                target,
                ToleranceRule::WithinSe(3.0),
            ));
        }
    }
    for (slot, &((i, j), (k, l))) in crosses.iter().enumerate() {
        let (mean, se) = mean_se(acc.cross_sum[slot], acc.cross_sum_sq[slot], paths);
        let target = if matches!(algo, Sampler::Fs) && (k, l) == (j, i) && i != j {
            deficit
        } else {
            0.0
        };
        reports.push(McReport::evaluate(
            format!("cross_I_{}_{}_I_{}_{}", i + 1, j + 1, k + 1, l + 1),
            mean,
            se,
            target,
            ToleranceRule::WithinSe(3.0),
        ));
    }
    let tol = 4.0 * f64::EPSILON * acc.product_max.max(1e-300);
    reports.push(McReport::evaluate(
        "identity_residual_max",
        acc.residual_max,
        0.0,
        0.0,
        ToleranceRule::Absolute(tol),
    ));
    Ok(reports)
}

/// Least-squares slope of log y against log x.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "fit_slope input lengths",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "fit_slope requires at least 3 points, got {}",
            xs.len()
        )));
    }
    if xs
        .iter()
        .chain(ys.iter())
        .any(|&v| v <= 0.0 || !v.is_finite())
    {
        return Err(Error::InvalidParameter(
            "fit_slope requires positive finite inputs".to_string(),
        ));
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in lx.iter().zip(ly.iter()) {
        cov += (x - mx) * (y - my);
        var += (x - mx) * (x - mx);
    }
    if var == 0.0 {
        return Err(Error::InvalidParameter(
            "fit_slope requires at least two distinct x values".to_string(),
        ));
    }
    Ok(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Calculus;

    #[test]
    fn tolerance_rules_decide_pass() {
        let r = McReport::evaluate("a", 1.0, 0.1, 1.2, ToleranceRule::WithinSe(3.0));
        assert!(r.pass);
        let r = McReport::evaluate("b", 1.0, 0.01, 1.2, ToleranceRule::WithinSe(3.0));
        assert!(!r.pass);
        let r = McReport::evaluate("c", 1.0, 0.1, 0.9, ToleranceRule::BoundedAboveSe(3.0));
        assert!(r.pass);
        let r = McReport::evaluate("d", 1.0, 0.01, 0.9, ToleranceRule::BoundedAboveSe(3.0));
        assert!(!r.pass);
        let r = McReport::evaluate("e", 1.0 + 1e-13, 0.0, 1.0, ToleranceRule::Absolute(1e-12));
        assert!(r.pass);
    }

    #[test]
    fn relative_tail_bias_is_small_at_default_cutoffs() {
        for n in [1usize, 2, 5, 10] {
            let k = 10_000.max(100 * n);
            assert!(relative_tail_bias(n, k) <= 0.01, "n = {n}");
        }
    }

    #[test]
    fn tail_samples_are_reproducible_and_consistent_across_levels() {
        let mut a = open_stream(StreamSpec::new(5, 9));
        let multi = draw_tail_samples(3, 0.5, &[2, 4], 500, &mut a, true).unwrap();
        let mut b = open_stream(StreamSpec::new(5, 9));
        let single = draw_tail_samples(3, 0.5, &[2], 500, &mut b, true).unwrap();
        assert_eq!(multi[0].r2, single[0].r2);
        assert_eq!(
            multi[0].weighted_moment.as_slice(),
            single[0].weighted_moment.as_slice()
        );
        assert_eq!(a.draws(), b.draws());
        for (run, pref) in multi[0].r2.iter().zip(multi[1].r2.iter()) {
            assert!(run.is_finite() && pref.is_finite());
        }
    }

    #[test]
    fn tail_sample_psi2_is_standard_normal() {
        let n_samples = 4_000usize;
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        for id in 0..n_samples {
            let mut stream = open_stream(StreamSpec::new(21, id as u64));
            let sample = draw_tail_samples(3, 1.0, &[1], 400, &mut stream, true)
                .unwrap()
                .remove(0);
            let psi2 = sample.psi2().unwrap();
            for (r, v) in psi2.iter().enumerate() {
                sum[r] += v;
                sum_sq[r] += v * v;
            }
        }
        for r in 0..3 {
            let mean = sum[r] / n_samples as f64;
            let var = sum_sq[r] / n_samples as f64 - mean * mean;
            assert!(mean.abs() <= 3.0 * (1.0 / n_samples as f64).sqrt() + 0.01);
            assert!((var - 1.0).abs() <= 3.0 * (2.0 / n_samples as f64).sqrt() + 0.02);
        }
    }

    #[test]
    fn coupled_fs_error_matches_the_exact_value() {
        let report = coupled_fs_error(1.0, 1, 1_000, 4_000, 31).unwrap();
        assert!(report.pass, "{report:?}");
        assert!((report.estimate - 0.180_756_027_595_664).abs() <= 3.0 * report.std_error);
        let multi = coupled_fs_error_multi(1.0, &[1], 1_000, 4_000, 31).unwrap();
        assert_eq!(multi[0], report);
    }

    #[test]
    fn coupled_fs_error_validates_parameters() {
        assert!(coupled_fs_error(1.0, 5, 400, 4_000, 0).is_err());
        assert!(coupled_fs_error(1.0, 1, 1_000, 10, 0).is_err());
    }

    #[test]
    fn coupled_ia_error_stays_below_the_bound() {
        let report = coupled_ia_error(2, 1.0, 1, 1_000, 4_000, 32).unwrap();
        assert!(report.max_entry.pass, "{:?}", report.max_entry);
        assert!(report.frobenius.pass, "{:?}", report.frobenius);
        assert!(report.max_entry.estimate <= report.max_entry.target);
        let multi = coupled_ia_error_multi(2, 1.0, &[1], 1_000, 4_000, 32).unwrap();
        assert_eq!(multi[0].max_entry, report.max_entry);
    }

    #[test]
    fn coupled_ia_error_multi_reuses_one_pass() {
        let reports = coupled_ia_error_multi(3, 1.0, &[2, 4], 1_000, 2_000, 33).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(reports[0].max_entry.estimate > reports[1].max_entry.estimate);
    }

    #[test]
    fn sigma2_stats_matches_the_closed_forms() {
        let report = sigma2_stats(2, 1.0, 1, 500, 4_000, 34).unwrap();
        assert!(report.row.pass, "{:?}", report.row);
        assert!(report.frobenius.pass, "{:?}", report.frobenius);
        let (row_target, frob_target) = sigma2_stat_targets(2, 1.0, 1).unwrap();
        assert_eq!(report.row.target, row_target);
        assert_eq!(report.frobenius.target, frob_target);
        assert!((row_target - 2.112_822_141_066_94e-4).abs() <= 1e-12 * row_target);
        let (row3, frob3) = sigma2_stat_targets(3, 1.0, 2).unwrap();
        assert!((frob3 / row3 - 3.0).abs() <= 1e-14);
        assert!((row3 - 7.631_436_206_587_686e-5).abs() <= 1e-12 * row3);
        assert!((frob3 - 2.2894308619763059e-4).abs() <= 1e-12 * frob3);
    }

    #[test]
    fn sqrt_lipschitz_check_has_no_violations() {
        let report = sqrt_lipschitz_check(5, 200, 35).unwrap();
        assert!(report.pass, "{report:?}");
        let scalar = sqrt_lipschitz_check(1, 50, 36).unwrap();
        assert!(scalar.pass);
    }

    #[test]
    fn path_oracle_moments() {
        let fine = 1_000usize;
        let n_paths = 20_000usize;
        let mut sum_sq = 0.0;
        let mut sum_sq_sq = 0.0;
        let mut cross = 0.0;
        let mut cross_sq = 0.0;
        let mut area_sq = 0.0;
        let mut area_quad = 0.0;
        for id in 0..n_paths {
            let mut stream = open_stream(StreamSpec::new(37, id as u64));
            let (_, mat) = path_oracle(2, 1.0, fine, &mut stream).unwrap();
            let i12 = mat.entry(0, 1);
            let i21 = mat.entry(1, 0);
            sum_sq += i12 * i12;
            sum_sq_sq += i12 * i12 * i12 * i12;
            cross += i12 * i21;
            cross_sq += (i12 * i21) * (i12 * i21);
            let a = (i12 - i21) / 2.0;
            area_sq += a * a;
            area_quad += a * a * a * a;
        }
        let nf = n_paths as f64;
        let grid_factor = 1.0 - 1.0 / fine as f64;
        let (msq, msq_se) = {
            let mean = sum_sq / nf;
            let var = (sum_sq_sq / nf - mean * mean).max(0.0);
            (mean, (var / nf).sqrt())
        };
        assert!(
            (msq - 0.5 * grid_factor).abs() <= 3.0 * msq_se,
            "second moment {msq} (se {msq_se})"
        );
        let (cr, cr_se) = {
            let mean = cross / nf;
            let var = (cross_sq / nf - mean * mean).max(0.0);
            (mean, (var / nf).sqrt())
        };
        assert!(cr.abs() <= 3.0 * cr_se, "cross moment {cr} (se {cr_se})");
        let (asq, asq_se) = {
            let mean = area_sq / nf;
            let var = (area_quad / nf - mean * mean).max(0.0);
            (mean, (var / nf).sqrt())
        };
        assert!(
            (asq - 0.25 * grid_factor).abs() <= 3.0 * asq_se,
            "area variance {asq} (se {asq_se})"
        );
    }

    #[test]
    fn path_oracle_validates_parameters() {
        let mut stream = open_stream(StreamSpec::new(0, 0));
        assert!(path_oracle(2, 1.0, 100, &mut stream).is_err());
        assert!(path_oracle(0, 1.0, 1_000, &mut stream).is_err());
        assert!(path_oracle(2, 0.0, 1_000, &mut stream).is_err());
    }

    #[test]
    fn moment_suite_passes_for_both_samplers() {
        for algo in [Sampler::Ia, Sampler::Fs] {
            let reports = moment_suite(algo, 2, 1.0, 1, 60_000, 38).unwrap();
            for report in &reports {
                assert!(report.pass, "{algo:?}: {report:?}");
            }
        }
    }

    #[test]
    fn moment_suite_detects_the_truncated_second_moment() {
        let reports = moment_suite(Sampler::Fs, 2, 1.0, 1, 150_000, 39).unwrap();
        let msq = reports.iter().find(|r| r.statistic == "msq_I_1_2").unwrap();
        assert!((msq.target - (0.5 - 0.032_672_741_512_164_45)).abs() < 1e-15);
        assert!(
            (msq.estimate - 0.5).abs() > 6.0 * msq.std_error,
            "truncated sampler should sit visibly below 1/2"
        );
    }

    #[test]
    fn moment_suite_reports_are_deterministic_across_pools() {
        let run = || {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap();
            pool.install(|| moment_suite(Sampler::Ia, 2, 0.5, 2, 4_000, 40).unwrap())
        };
        let wide = {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(4)
                .build()
                .unwrap();
            pool.install(|| moment_suite(Sampler::Ia, 2, 0.5, 2, 4_000, 40).unwrap())
        };
        assert_eq!(run(), wide);
    }

    #[test]
    fn fit_slope_known_values() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys = xs;
        assert!((fit_slope(&xs, &ys).unwrap() - 1.0).abs() < 1e-14);
        let inv: Vec<f64> = xs.iter().map(|v| 1.0 / v).collect();
        assert!((fit_slope(&xs, &inv).unwrap() + 1.0).abs() < 1e-14);
        assert!(fit_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_slope(&[1.0, 2.0, -3.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_slope(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn fit_slope_recovers_a_noisy_power_law() {
        let mut stream = open_stream(StreamSpec::new(41, 0));
        let xs: Vec<f64> = (0..8).map(|i| 2.0f64.powi(i)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 3.0 * x.powf(-0.5) * (1.0 + 0.01 * stream.next_normal()))
            .collect();
        let slope = fit_slope(&xs, &ys).unwrap();
        assert!((-0.55..=-0.45).contains(&slope), "slope {slope}");
    }

    #[test]
    fn fs_exact_value_slope_over_n() {
        let ns: Vec<f64> = (0..7).map(|i| 2.0f64.powi(i)).collect();
        let values: Vec<f64> = ns
            .iter()
            .map(|&n| l2_error_fs_exact(1.0, n as usize).unwrap())
            .collect();
        let slope = fit_slope(&ns, &values).unwrap();
        assert!(
            (-0.55..=-0.45).contains(&slope),
            "slope {slope} outside [-0.55, -0.45]"
        );
    }

    #[test]
    fn path_oracle_diagonal_is_exact() {
        let mut stream = open_stream(StreamSpec::new(42, 0));
        let (inc, mat) = path_oracle(2, 0.25, 1_000, &mut stream).unwrap();
        assert_eq!(mat.calculus, Calculus::Ito);
        for i in 0..2 {
            let want = (inc.dw[i] * inc.dw[i] - 0.25) / 2.0;
            assert_eq!(mat.entry(i, i), want);
        }
        assert_eq!(stream.draws(), 2_000);
    }
}
