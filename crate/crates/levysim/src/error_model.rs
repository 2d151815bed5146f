//! Closed-form error values, L^p error bounds, truncation-level selection
//! and cost accounting for the integral samplers.
//!
//! For the truncated sampler the L^2 error of an off-diagonal entry is an
//! exact equality,
//!
//! ```text
//! e_FS(h, n) = sqrt((h^2 / 2 pi^2) alpha_n),
//! ```
//!
//! while the corrected sampler obeys the bound
//!
//! ```text
//! e_IA(h, n, m) <= sqrt((h^2 m / 4 pi^2) beta_n / alpha_n)
//!               <= sqrt(m) h / (sqrt(12) pi n),
//! ```
//!
//! with Frobenius-norm versions a factor sqrt(m(m-1)) larger. The L^p
//! generalizations are carried by [`lp_error_bounds`] and rest on the
//! absolute-moment formulas of [`gauss_abs_moment`] and
//! [`chi2_abs_moment`] through the constant [`c_mp`]. Truncation selection
//! inverts the simplified bound: given a target eps, [`choose_n`] returns
//! n = max(1, ceil(hat_c(m, p) h / eps)), which makes the corrected
//! sampler's cost grow like h/eps while the truncated sampler needs a
//! number of modes growing like (h/eps)^2. [`cost`] turns a target into
//! the exact count of standard normal draws per step for the corrected
//! sampler, the truncated sampler and the classical preconditioned
//! alternative it is benchmarked against.

use std::f64::consts::{E, PI, SQRT_2};

use crate::linalg::pair_count;
use crate::sim::tail_constants;
use crate::{Error, Result};

/// Sampling algorithm named in cost reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Corrected truncated series (both tail terms).
    Ia,
    /// Preconditioned reference method with published L^2 schedule.
    Wik,
    /// Plain truncated series with the first tail term only.
    Fs,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Ia => write!(f, "IA"),
            Algorithm::Wik => write!(f, "WIK"),
            Algorithm::Fs => write!(f, "FS"),
        }
    }
}

/// Resolved accuracy budget: the truncation level that meets a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBudget {
    /// Dimension m >= 2.
    pub m: usize,
    /// Moment order p >= 2.
    pub p: f64,
    /// Step size h > 0.
    pub h: f64,
    /// Target accuracy eps > 0.
    pub eps: f64,
    /// Selected truncation level, always >= 1.
    pub n: usize,
}

impl ErrorBudget {
    /// Selects the truncation level for the given target.
    pub fn resolve(m: usize, p: f64, h: f64, eps: f64) -> Result<ErrorBudget> {
        let n = choose_n(m, p, h, eps)?;
        Ok(ErrorBudget { m, p, h, eps, n })
    }
}

/// Cost of producing one (increment, integral matrix) realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    /// Algorithm the count belongs to.
    pub algo: Algorithm,
    /// Truncation level the algorithm selects for the target.
    pub n: usize,
    /// Standard normal draws consumed per realization.
    pub draws: u64,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * lanczos_gamma(1.0 - x));
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Gamma function on the supported range [0.25, 60], accurate to a
/// relative error of 1e-12.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(0.25..=60.0).contains(&x) {
        return Err(Error::InvalidParameter(format!(
            "gamma_fn supports x in [0.25, 60], got {x}"
        )));
    }
    Ok(lanczos_gamma(x))
}

/// Absolute moment E|Z|^p of Z ~ N(0, sigma^2):
/// (sqrt(2) sigma)^p / sqrt(pi) * Gamma((p+1)/2).
pub fn gauss_abs_moment(p: f64, sigma: f64) -> Result<f64> {
    if p < 1.0 || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gauss_abs_moment requires p >= 1, got {p}"
        )));
    }
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gauss_abs_moment requires sigma > 0, got {sigma}"
        )));
    }
    Ok((SQRT_2 * sigma).powf(p) / PI.sqrt() * lanczos_gamma((p + 1.0) / 2.0))
}

fn simpson_rule(fa: f64, fm: f64, fb: f64, width: f64) -> f64 {
    width / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(fa, flm, fm, m - a);
    let right = simpson_rule(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integral of t^p e^t over [0, u] for u >= 0 and p > -1.
///
/// A short head segment is summed as the series
/// sum_j u0^(p+1+j) / (j! (p+1+j)), which absorbs the integrable endpoint
/// singularity for p < 1; the remainder uses adaptive Simpson quadrature
/// with a relative target of 1e-13.
fn power_exp_integral(p: f64, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let head_end = u.min(0.1);
    let mut head = 0.0;
    let mut term = head_end.powf(p + 1.0);
    let mut j = 0.0;
    loop {
        let contribution = term / (p + 1.0 + j);
        head += contribution;
        if contribution.abs() <= 1e-18 * head.abs() || j > 80.0 {
            break;
        }
        j += 1.0;
        term *= head_end / j;
    }
    if head_end >= u {
        return head;
    }
    let f = |t: f64| t.powf(p) * t.exp();
    let fa = f(head_end);
    let fb = f(u);
    let fm = f(0.5 * (head_end + u));
    let whole = simpson_rule(fa, fm, fb, u - head_end);
    let tol = 1e-13 * whole.abs().max(head.abs()).max(1e-300);
    head + adaptive_simpson(&f, head_end, u, fa, fm, fb, whole, tol, 60)
}

/// Absolute moment E|R - c|^p of R ~ chi-squared with 2 degrees of
/// freedom: 2^p e^{-c/2} (Gamma(p+1) + integral of t^p e^t over [0, c/2]).
pub fn chi2_abs_moment(p: f64, c: f64) -> Result<f64> {
    if p <= -1.0 || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "chi2_abs_moment requires p > -1, got {p}"
        )));
    }
    if c < 0.0 || !c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "chi2_abs_moment requires c >= 0, got {c}"
        )));
    }
    Ok(2.0f64.powf(p)
        * (-c / 2.0).exp()
        * (lanczos_gamma(p + 1.0) + power_exp_integral(p, c / 2.0)))
}

/// The L^p bound constant
/// c_{m,p} = Gamma((p+1)/2)^{1/p}
///   (e^{-2/p}(Gamma(p+1) + e/(p+1))^{2/p}
///    + (2m-4)/pi^{2/p} Gamma((p+1)/2)^{4/p})^{1/2}.
pub fn c_mp(m: usize, p: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "c_mp requires m >= 2, got {m}"
        )));
    }
    if p <= 2.0 || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "c_mp requires p > 2, got {p}"
        )));
    }
    let g_half = lanczos_gamma((p + 1.0) / 2.0);
    let first = (-2.0 / p).exp() * (lanczos_gamma(p + 1.0) + E / (p + 1.0)).powf(2.0 / p);
    let second = (2.0 * m as f64 - 4.0) / PI.powf(2.0 / p) * g_half.powf(4.0 / p);
    Ok(g_half.powf(1.0 / p) * (first + second).sqrt())
}

/// The truncation-schedule constant: sqrt(m)/(sqrt(12) pi) for p = 2 and
/// c_{m,p} sqrt(p-1)/(sqrt(3) pi^{(2p+1)/(2p)}) for p > 2.
pub fn hat_c(m: usize, p: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "hat_c requires m >= 2, got {m}"
        )));
    }
    if p < 2.0 || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "hat_c requires p >= 2, got {p}"
        )));
    }
    if p == 2.0 {
        return Ok((m as f64).sqrt() / (12.0f64.sqrt() * PI));
    }
    Ok(c_mp(m, p)? * (p - 1.0).sqrt() / (3.0f64.sqrt() * PI.powf((2.0 * p + 1.0) / (2.0 * p))))
}

/// Smallest truncation level meeting the L^p target eps:
/// max(1, ceil(hat_c(m, p) h / eps)).
pub fn choose_n(m: usize, p: f64, h: f64, eps: f64) -> Result<usize> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "choose_n requires h > 0, got {h}"
        )));
    }
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "choose_n requires eps > 0, got {eps}"
        )));
    }
    let raw = (hat_c(m, p)? * h / eps).ceil();
    if raw > 1e15 {
        return Err(Error::InvalidParameter(format!(
            "accuracy target eps = {eps} requires an impractical truncation level"
        )));
    }
    Ok((raw as usize).max(1))
}

/// Exact L^2 error of an off-diagonal entry of the truncated sampler:
/// sqrt((h^2 / 2 pi^2) alpha_n). This is an equality, not a bound.
pub fn l2_error_fs_exact(h: f64, n: usize) -> Result<f64> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "l2_error_fs_exact requires h > 0, got {h}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter(
            "l2_error_fs_exact requires n >= 1".to_string(),
        ));
    }
    Ok((h * h * tail_constants(n).alpha / (2.0 * PI * PI)).sqrt())
}

/// L^2 error bounds of the corrected sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IaL2Bounds {
    /// Max-entry bound sqrt((h^2 m / 4 pi^2) beta_n / alpha_n).
    pub max_entry: f64,
    /// Frobenius bound, sqrt(m(m-1)) times the max-entry bound.
    pub frobenius: f64,
    /// Simplified max-entry bound sqrt(m) h / (sqrt(12) pi n).
    pub max_entry_simplified: f64,
    /// Simplified Frobenius bound m sqrt(m-1) h / (sqrt(12) pi n).
    pub frobenius_simplified: f64,
}

/// L^2 error bounds of the corrected sampler, both with the exact tail
/// ratio beta_n / alpha_n and in the simplified 1/n form used for
/// truncation selection.
pub fn l2_error_ia_bound(h: f64, n: usize, m: usize) -> Result<IaL2Bounds> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "l2_error_ia_bound requires h > 0, got {h}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter(
            "l2_error_ia_bound requires n >= 1".to_string(),
        ));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "l2_error_ia_bound requires m >= 2, got {m}"
        )));
    }
    let t = tail_constants(n);
    let mf = m as f64;
    let max_entry = (h * h * mf / (4.0 * PI * PI) * t.beta / t.alpha).sqrt();
    let simplified = mf.sqrt() * h / (12.0f64.sqrt() * PI * n as f64);
    Ok(IaL2Bounds {
        max_entry,
        frobenius: (mf * (mf - 1.0)).sqrt() * max_entry,
        max_entry_simplified: simplified,
        frobenius_simplified: mf * (mf - 1.0).sqrt() * h / (12.0f64.sqrt() * PI * n as f64),
    })
}

/// L^p bounds of the corrected sampler for p > 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IaLpBounds {
    /// Max-entry bound with the exact tail ratio.
    pub max_entry: f64,
    /// Frobenius bound with the exact tail ratio.
    pub frobenius: f64,
    /// Simplified max-entry bound, exact ratio replaced by 1/(3n^2).
    pub max_entry_simplified: f64,
    /// Simplified Frobenius bound.
    pub frobenius_simplified: f64,
}

/// L^p errors of both samplers at moment order p >= 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpErrorBounds {
    /// Truncated-sampler bound
    /// (p-1) h / (sqrt(2) pi) Gamma(p/2+1)^{1/p} sqrt(alpha_n); an
    /// equality at p = 2.
    pub fs: f64,
    /// Corrected-sampler bounds; `None` at p = 2, where the separate
    /// [`l2_error_ia_bound`] constants apply.
    pub ia: Option<IaLpBounds>,
}

/// Evaluates the L^p error formulas at moment order p.
pub fn lp_error_bounds(h: f64, n: usize, m: usize, p: f64) -> Result<LpErrorBounds> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lp_error_bounds requires h > 0, got {h}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter(
            "lp_error_bounds requires n >= 1".to_string(),
        ));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "lp_error_bounds requires m >= 2, got {m}"
        )));
    }
    if p < 2.0 || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lp_error_bounds requires p >= 2, got {p}"
        )));
    }
    let t = tail_constants(n);
    let fs =
        (p - 1.0) * h / (SQRT_2 * PI) * lanczos_gamma(p / 2.0 + 1.0).powf(1.0 / p) * t.alpha.sqrt();
    if p == 2.0 {
        return Ok(LpErrorBounds { fs, ia: None });
    }
    let c = c_mp(m, p)?;
    let factor = c * (p - 1.0).sqrt() * h / PI.powf((2.0 * p + 1.0) / (2.0 * p));
    let ratio = (t.beta / t.alpha).sqrt();
    let size = (m as f64 * m as f64 - m as f64).sqrt();
    let simplified = factor / (3.0f64.sqrt() * n as f64);
    Ok(LpErrorBounds {
        fs,
        ia: Some(IaLpBounds {
            max_entry: factor * ratio,
            frobenius: factor * size * ratio,
            max_entry_simplified: simplified,
            frobenius_simplified: simplified * size,
        }),
    })
}

/// Standard normal draws needed per step to reach L^p accuracy eps.
pub fn cost(algo: Algorithm, m: usize, p: f64, h: f64, eps: f64) -> Result<CostReport> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "cost requires m >= 2, got {m}"
        )));
    }
    if h <= 0.0 || eps <= 0.0 || !h.is_finite() || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cost requires h > 0 and eps > 0, got h = {h}, eps = {eps}"
        )));
    }
    let mf = m as f64;
    let pairs = pair_count(m) as u64;
    match algo {
        Algorithm::Ia => {
            let n = choose_n(m, p, h, eps)?;
            Ok(CostReport {
                algo,
                n,
                draws: 2 * m as u64 * (n as u64 + 1) + pairs,
            })
        }
        Algorithm::Wik => {
            if p != 2.0 {
                return Err(Error::InvalidParameter(format!(
                    "the preconditioned reference schedule is only published for p = 2, got p = {p}"
                )));
            }
            let raw = ((5.0 * (mf - 1.0) * mf).sqrt() * h / (24.0f64.sqrt() * PI * eps)).ceil();
            if raw > 1e15 {
                return Err(Error::InvalidParameter(format!(
                    "accuracy target eps = {eps} requires an impractical truncation level"
                )));
            }
            let n = (raw as usize).max(1);
            Ok(CostReport {
                algo,
                n,
                draws: 2 * m as u64 * n as u64 + m as u64 + pairs,
            })
        }
        Algorithm::Fs => {
            if p < 2.0 || !p.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "cost requires p >= 2, got {p}"
                )));
            }
            let raw = ((p - 1.0) * (p - 1.0) / (2.0 * PI * PI)
                * lanczos_gamma(p / 2.0 + 1.0).powf(2.0 / p)
                * h
                * h
                / (eps * eps))
                .ceil();
            if raw > 1e15 {
                return Err(Error::InvalidParameter(format!(
                    "accuracy target eps = {eps} requires an impractical truncation level"
                )));
            }
            let n = (raw as usize).max(1);
            Ok(CostReport {
                algo,
                n,
                draws: 2 * m as u64 * (n as u64 + 1),
            })
        }
    }
}
