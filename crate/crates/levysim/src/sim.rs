//! Single-step samplers for twofold iterated stochastic integrals.
//!
//! Over a step of length h the Ito integrals I_(i,j) of an m-dimensional
//! Brownian motion satisfy
//!
//! ```text
//! I_(i,j) + I_(j,i) = dW_i dW_j - h 1_{i=j},
//! ```
//!
//! so the whole matrix is determined by the increment dW together with the
//! Levy areas A_(i,j) = (I_(i,j) - I_(j,i)) / 2 for the M = m(m-1)/2 pairs
//! i < j. The areas are expanded in a Fourier series of the Brownian
//! bridge. With independent standard normal vectors V (the scaled
//! increment), X_k, Y_k for modes k = 1..n, and tail vectors Psi1, Psi2,
//! the sampler forms
//!
//! ```text
//! dW      = sqrt(h) V
//! A^(n)   = (h / 2 pi) sum_{k=1}^n (1/k)
//!           [ X_{i,k} (Y_{j,k} - sqrt(2/h) dW_j)
//!           - X_{j,k} (Y_{i,k} - sqrt(2/h) dW_i) ]
//! T1      = (sqrt(h) / (sqrt(2) pi)) sqrt(alpha_n)
//!           (dW_i Psi1_j - dW_j Psi1_i)
//! T2      = (h / (sqrt(2) pi)) sqrt(alpha_n) Psi2_(i,j)
//! ```
//!
//! with alpha_n = pi^2/6 - sum_{k<=n} k^{-2}. The truncated-series sampler
//! [`simulate_fs`] uses A^(n) + T1 and leaves a mean square truncation
//! error with the closed form carried by [`crate::error_model`]; the
//! corrected sampler [`simulate_ia`] adds T2, which matches the second
//! moments of the discarded tail so that the assembled integral matrix has
//! the exact joint covariance of the true integrals for every n.
//!
//! Draws are consumed from the stream in the fixed order V, then X_k and
//! Y_k interleaved by mode, then Psi1, then Psi2 (the corrected sampler
//! only), with all m components drawn even when m = 1 leaves no area to
//! compute, so the draw count is 2m(n+1) for [`simulate_fs`] and
//! 2m(n+1) + M for [`simulate_ia`].

use std::f64::consts::{PI, SQRT_2};

use crate::linalg::{pair_count, pair_order};
use crate::rng::NormalStream;
use crate::{Error, Result};

/// Calculus convention of an integral matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calculus {
    /// Ito integrals I_(i,j).
    Ito,
    /// Stratonovich integrals J_(i,j) = I_(i,j) + (h/2) 1_{i=j}.
    Stratonovich,
}

/// Which single-step sampler to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// Corrected sampler with the tail covariance term, [`simulate_ia`].
    Ia,
    /// Plain truncated Fourier sampler, [`simulate_fs`].
    Fs,
}

impl std::fmt::Display for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sampler::Ia => write!(f, "ia"),
            Sampler::Fs => write!(f, "fs"),
        }
    }
}

/// Brownian increment over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementVector {
    /// Step size h > 0.
    pub h: f64,
    /// Increment components dW_1..dW_m.
    pub dw: Vec<f64>,
}

impl IncrementVector {
    /// Dimension m of the driving Brownian motion.
    pub fn dim(&self) -> usize {
        self.dw.len()
    }
}

/// Fourier coefficient draws X_k, Y_k for modes k = 1..n.
///
/// Components are stored mode-major: entry i of mode k sits at
/// `(k - 1) * m + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBlock {
    /// Dimension m.
    pub m: usize,
    /// Number of modes n.
    pub n: usize,
    /// Cosine-type coefficients, length m * n.
    pub x: Vec<f64>,
    /// Sine-type coefficients, length m * n.
    pub y: Vec<f64>,
}

impl CoefficientBlock {
    /// Draws the coefficients from `stream`, modes interleaved as
    /// X_1, Y_1, X_2, Y_2, ..., X_n, Y_n.
    pub fn draw(m: usize, n: usize, stream: &mut NormalStream) -> CoefficientBlock {
        let mut x = vec![0.0; m * n];
        let mut y = vec![0.0; m * n];
        for k in 0..n {
            stream.fill_normal(&mut x[k * m..(k + 1) * m]);
            stream.fill_normal(&mut y[k * m..(k + 1) * m]);
        }
        CoefficientBlock { m, n, x, y }
    }

    /// Components of X_k for one-based mode k.
    pub fn x_mode(&self, k: usize) -> &[f64] {
        &self.x[(k - 1) * self.m..k * self.m]
    }

    /// Components of Y_k for one-based mode k.
    pub fn y_mode(&self, k: usize) -> &[f64] {
        &self.y[(k - 1) * self.m..k * self.m]
    }
}

/// Levy areas for the M = m(m-1)/2 pairs i < j in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyVector {
    /// Dimension m.
    pub m: usize,
    /// Area components, length m(m-1)/2.
    pub a: Vec<f64>,
}

impl LevyVector {
    /// All-zero areas.
    pub fn zeros(m: usize) -> LevyVector {
        LevyVector {
            m,
            a: vec![0.0; pair_count(m)],
        }
    }

    /// Adds `other` componentwise.
    pub fn accumulate(&mut self, other: &LevyVector) -> Result<()> {
        if other.m != self.m {
            return Err(Error::Dimension {
                context: "LevyVector::accumulate dimension",
                expected: self.m,
                got: other.m,
            });
        }
        for (slot, v) in self.a.iter_mut().zip(other.a.iter()) {
            *slot += v;
        }
        Ok(())
    }
}

/// Full m x m matrix of twofold iterated integrals over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralMatrix {
    /// Dimension m.
    pub m: usize,
    /// Step size h.
    pub h: f64,
    /// Calculus convention of the entries.
    pub calculus: Calculus,
    /// Entries in row-major order: I_(i,j) sits at `i * m + j`.
    pub values: Vec<f64>,
}

impl IntegralMatrix {
    /// Entry I_(i,j) for zero-based component indices.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.m && j < self.m);
        self.values[i * self.m + j]
    }

    /// Recovers the Levy areas (I_(i,j) - I_(j,i)) / 2 in canonical order.
    pub fn levy_areas(&self) -> LevyVector {
        let a = pair_order(self.m)
            .into_iter()
            .map(|(i, j)| (self.entry(i, j) - self.entry(j, i)) / 2.0)
            .collect();
        LevyVector { m: self.m, a }
    }
}

/// Tail constants alpha_n = pi^2/6 - sum_{k<=n} k^{-2} and
/// beta_n = pi^4/90 - sum_{k<=n} k^{-4}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailConstants {
    /// Remainder of the series sum k^{-2}.
    pub alpha: f64,
    /// Remainder of the series sum k^{-4}.
    pub beta: f64,
}

/// Computes the tail constants for truncation level `n`.
///
/// The partial sums are accumulated from the smallest term upwards and the
/// remainders are clamped at zero, so both constants are nonnegative for
/// every n.
pub fn tail_constants(n: usize) -> TailConstants {
    let mut sum2 = 0.0;
    let mut sum4 = 0.0;
    for k in (1..=n).rev() {
        let k2 = (k as f64) * (k as f64);
        sum2 += 1.0 / k2;
        sum4 += 1.0 / (k2 * k2);
    }
    TailConstants {
        alpha: (PI * PI / 6.0 - sum2).max(0.0),
        beta: (PI * PI * PI * PI / 90.0 - sum4).max(0.0),
    }
}

fn validate_step(m: usize, h: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParameter(
            "dimension m must be at least 1".to_string(),
        ));
    }
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "step size h must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

/// Truncated Fourier partial sum A^(n) of the Levy areas.
pub fn truncated_area(inc: &IncrementVector, coeffs: &CoefficientBlock) -> Result<LevyVector> {
    let m = inc.dim();
    validate_step(m, inc.h)?;
    if coeffs.m != m {
        return Err(Error::Dimension {
            context: "truncated_area coefficient dimension",
            expected: m,
            got: coeffs.m,
        });
    }
    let mut out = LevyVector::zeros(m);
    if out.a.is_empty() || coeffs.n == 0 {
        return Ok(out);
    }
    let shift = (2.0 / inc.h).sqrt();
    let pairs = pair_order(m);
    let mut f = vec![0.0; m];
    for k in 1..=coeffs.n {
        let xk = coeffs.x_mode(k);
        let yk = coeffs.y_mode(k);
        for (i, slot) in f.iter_mut().enumerate() {
            *slot = yk[i] - shift * inc.dw[i];
        }
        let inv_k = 1.0 / k as f64;
        for (r, &(i, j)) in pairs.iter().enumerate() {
            out.a[r] += inv_k * (xk[i] * f[j] - xk[j] * f[i]);
        }
    }
    let factor = inc.h / (2.0 * PI);
    for v in &mut out.a {
        *v *= factor;
    }
    Ok(out)
}

/// First tail correction, coupling the discarded modes to the increment.
pub fn tail1(inc: &IncrementVector, n: usize, psi1: &[f64]) -> Result<LevyVector> {
    let m = inc.dim();
    validate_step(m, inc.h)?;
    if psi1.len() != m {
        return Err(Error::Dimension {
            context: "tail1 psi1 length",
            expected: m,
            got: psi1.len(),
        });
    }
    let factor = inc.h.sqrt() / (SQRT_2 * PI) * tail_constants(n).alpha.sqrt();
    let a = pair_order(m)
        .into_iter()
        .map(|(i, j)| factor * (inc.dw[i] * psi1[j] - inc.dw[j] * psi1[i]))
        .collect();
    Ok(LevyVector { m, a })
}

/// Second tail correction, an isotropic surrogate for the remaining
/// increment-independent part of the discarded modes.
pub fn tail2(h: f64, m: usize, n: usize, psi2: &[f64]) -> Result<LevyVector> {
    validate_step(m, h)?;
    let expected = pair_count(m);
    if psi2.len() != expected {
        return Err(Error::Dimension {
            context: "tail2 psi2 length",
            expected,
            got: psi2.len(),
        });
    }
    let factor = h / (SQRT_2 * PI) * tail_constants(n).alpha.sqrt();
    Ok(LevyVector {
        m,
        a: psi2.iter().map(|p| factor * p).collect(),
    })
}

/// Assembles the integral matrix from an increment and its Levy areas.
pub fn assemble(
    inc: &IncrementVector,
    area: &LevyVector,
    calculus: Calculus,
) -> Result<IntegralMatrix> {
    let m = inc.dim();
    validate_step(m, inc.h)?;
    if area.m != m {
        return Err(Error::Dimension {
            context: "assemble area dimension",
            expected: m,
            got: area.m,
        });
    }
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        values[i * m + i] = (inc.dw[i] * inc.dw[i] - inc.h) / 2.0;
    }
    for (r, (i, j)) in pair_order(m).into_iter().enumerate() {
        let half = 0.5 * (inc.dw[i] * inc.dw[j]);
        values[i * m + j] = half + area.a[r];
        values[j * m + i] = half - area.a[r];
    }
    let mat = IntegralMatrix {
        m,
        h: inc.h,
        calculus: Calculus::Ito,
        values,
    };
    Ok(match calculus {
        Calculus::Ito => mat,
        Calculus::Stratonovich => convert(&mat, Calculus::Stratonovich),
    })
}

/// Converts an integral matrix between the Ito and Stratonovich
/// conventions by shifting the diagonal by h/2.
pub fn convert(mat: &IntegralMatrix, target: Calculus) -> IntegralMatrix {
    if mat.calculus == target {
        return mat.clone();
    }
    let shift = match target {
        Calculus::Stratonovich => mat.h / 2.0,
        Calculus::Ito => -mat.h / 2.0,
    };
    let mut out = mat.clone();
    out.calculus = target;
    for i in 0..mat.m {
        out.values[i * mat.m + i] += shift;
    }
    out
}

fn draw_step(
    m: usize,
    h: f64,
    n: usize,
    corrected: bool,
    stream: &mut NormalStream,
) -> Result<(IncrementVector, IntegralMatrix)> {
    validate_step(m, h)?;
    if n == 0 {
        return Err(Error::InvalidParameter(
            "truncation level n must be at least 1".to_string(),
        ));
    }
    let sqrt_h = h.sqrt();
    let dw = stream
        .draw_normal_vector(m)
        .into_iter()
        .map(|z| sqrt_h * z)
        .collect();
    let inc = IncrementVector { h, dw };
    let coeffs = CoefficientBlock::draw(m, n, stream);
    let psi1 = stream.draw_normal_vector(m);
    let mut area = truncated_area(&inc, &coeffs)?;
    area.accumulate(&tail1(&inc, n, &psi1)?)?;
    if corrected {
        let psi2 = stream.draw_normal_vector(pair_count(m));
        area.accumulate(&tail2(h, m, n, &psi2)?)?;
    }
    let mat = assemble(&inc, &area, Calculus::Ito)?;
    Ok((inc, mat))
}

/// Samples one step with the corrected algorithm: truncated series plus
/// both tail corrections. Costs 2m(n+1) + m(m-1)/2 normal draws and the
/// returned Ito matrix has the exact joint second moments for every n.
pub fn simulate_ia(
    m: usize,
    h: f64,
    n: usize,
    stream: &mut NormalStream,
) -> Result<(IncrementVector, IntegralMatrix)> {
    draw_step(m, h, n, true, stream)
}

/// Samples one step with the plain truncated algorithm: truncated series
/// plus the first tail correction only. Costs 2m(n+1) normal draws and
/// leaves the mean square error given by
/// [`crate::error_model::l2_error_fs_exact`].
pub fn simulate_fs(
    m: usize,
    h: f64,
    n: usize,
    stream: &mut NormalStream,
) -> Result<(IncrementVector, IntegralMatrix)> {
    draw_step(m, h, n, false, stream)
}
