//! Conditional covariance structure of the truncation tail.
//!
//! Conditioned on the cosine-type coefficients X_k of the discarded modes,
//! the increment-independent tail of the Levy areas is Gaussian with
//! covariance
//!
//! ```text
//! Sigma^(n,K) = (h^2 / 4 pi^2) sum_{k=n+1}^K k^{-2} C(X_k),
//! ```
//!
//! where C(x) is an M x M matrix depending on one coefficient vector. The
//! module builds C(x) two independent ways: [`cond_cov_direct`] factorizes
//! it as G G^T with G = H_m (x (x) I_m - I_m (x) x) assembled by index
//! rules, and [`cond_cov_blocks`] lays out the explicit block structure
//! (diagonal blocks indexed by the shared first pair element, off-diagonal
//! blocks holding one chain row and a shifted diagonal). Averaging over
//! standard normal x gives E[C(X)] = 2 I_M, so the full-tail covariance
//! collapses to the scalar matrix of [`sigma2_inf`]: Sigma^(2,inf) =
//! (h^2 / 2 pi^2) alpha_n I_M. That scalar is exactly the squared L^2
//! error of the truncated sampler, which is why matching the tail's
//! conditional covariance (rather than only its mean) is what the
//! corrected sampler's second tail term exploits.

use std::f64::consts::PI;

use crate::linalg::{pair_count, pair_order, FlatMatrix};
use crate::sim::tail_constants;
use crate::{Error, Result};

/// Conditional covariance matrix of the tail areas for one coefficient
/// vector, in canonical pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct CondCov {
    /// Dimension m of the coefficient vector.
    pub m: usize,
    /// The M x M covariance matrix, M = m(m-1)/2.
    pub matrix: FlatMatrix,
}

fn check_dim(context: &'static str, m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::Dimension {
            context,
            expected: 2,
            got: m,
        });
    }
    Ok(())
}

/// Builds C(x) = G G^T from the M x m factor G, whose row for the pair
/// (i, j) carries x_i in column j and -x_j in column i.
pub fn cond_cov_direct(x: &[f64]) -> Result<CondCov> {
    let m = x.len();
    check_dim("cond_cov_direct requires at least two components", m)?;
    let pairs = pair_order(m);
    let mut g = FlatMatrix::zeros(pairs.len(), m);
    for (r, &(i, j)) in pairs.iter().enumerate() {
        g.set(r, j, x[i]);
        g.set(r, i, -x[j]);
    }
    let matrix = g.matmul(&g.transpose())?;
    Ok(CondCov { m, matrix })
}

/// Builds C(x) from its explicit block structure.
///
/// Pairs sharing their first element l form the diagonal block with
/// entries x_l^2 + x_j^2 on the diagonal and x_j x_j' off it. The block
/// coupling first elements l < s has zeros above the chain row for the
/// pair (l, s), the chain row -x_l (x_{s+1}, ..., x_m), and x_l x_s on a
/// diagonal shifted below it; the transposed block fills the other side.
pub fn cond_cov_blocks(x: &[f64]) -> Result<CondCov> {
    let m = x.len();
    check_dim("cond_cov_blocks requires at least two components", m)?;
    let total = pair_count(m);
    let mut matrix = FlatMatrix::zeros(total, total);
    let offset = |block: usize| -> usize { (0..block).map(|t| m - 1 - t).sum() };
    for l in 0..m - 1 {
        let base = offset(l);
        let size = m - 1 - l;
        for a in 0..size {
            for b in 0..size {
                let v = if a == b {
                    x[l] * x[l] + x[l + 1 + a] * x[l + 1 + a]
                } else {
                    x[l + 1 + a] * x[l + 1 + b]
                };
                matrix.set(base + a, base + b, v);
            }
        }
        for s in l + 1..m - 1 {
            let col_base = offset(s);
            let chain_row = s - l - 1;
            for b in 0..m - 1 - s {
                matrix.set(base + chain_row, col_base + b, -x[l] * x[s + 1 + b]);
                matrix.set(col_base + b, base + chain_row, -x[l] * x[s + 1 + b]);
                let shifted = s - l + b;
                matrix.set(base + shifted, col_base + b, x[l] * x[s]);
                matrix.set(col_base + b, base + shifted, x[l] * x[s]);
            }
        }
    }
    Ok(CondCov { m, matrix })
}

/// Maps an m x m weighted second-moment matrix S = sum_k w_k x_k x_k^T to
/// the corresponding covariance (h^2 / 4 pi^2) sum_k w_k C(x_k) through
/// the entrywise identity
/// C(x)_{(i,j),(k,l)} = (x x^T)_{ik} 1_{j=l} + (x x^T)_{jl} 1_{i=k}
///                    - (x x^T)_{il} 1_{j=k} - (x x^T)_{jk} 1_{i=l}.
pub(crate) fn sigma2_from_weighted_moment(h: f64, s: &FlatMatrix) -> CondCov {
    let m = s.rows();
    let pairs = pair_order(m);
    let total = pairs.len();
    let pref = h * h / (4.0 * PI * PI);
    let mut matrix = FlatMatrix::zeros(total, total);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        for (col, &(k, l)) in pairs.iter().enumerate() {
            let mut v = 0.0;
            if j == l {
                v += s.get(i, k);
            }
            if i == k {
                v += s.get(j, l);
            }
            if j == k {
                v -= s.get(i, l);
            }
            if i == l {
                v -= s.get(j, k);
            }
            if v != 0.0 {
                matrix.set(row, col, pref * v);
            }
        }
    }
    CondCov { m, matrix }
}

/// Truncated tail covariance (h^2 / 4 pi^2) sum_{k=n+1}^K k^{-2} C(x_k)
/// for explicit coefficient vectors x_{n+1}, ..., x_K.
pub fn sigma2_truncated(
    h: f64,
    n: usize,
    k_max: usize,
    m: usize,
    xs: &[Vec<f64>],
) -> Result<CondCov> {
    check_dim("sigma2_truncated requires at least two components", m)?;
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma2_truncated requires h > 0, got {h}"
        )));
    }
    if n < 1 || k_max < n {
        return Err(Error::InvalidParameter(format!(
            "sigma2_truncated requires K >= n >= 1, got n = {n}, K = {k_max}"
        )));
    }
    if xs.len() != k_max - n {
        return Err(Error::Dimension {
            context: "sigma2_truncated coefficient count",
            expected: k_max - n,
            got: xs.len(),
        });
    }
    let mut s = FlatMatrix::zeros(m, m);
    for (idx, x) in xs.iter().enumerate() {
        if x.len() != m {
            return Err(Error::Dimension {
                context: "sigma2_truncated coefficient dimension",
                expected: m,
                got: x.len(),
            });
        }
        let k = (n + 1 + idx) as f64;
        let w = 1.0 / (k * k);
        for b in 0..m {
            for a in 0..m {
                s.set(a, b, s.get(a, b) + w * x[a] * x[b]);
            }
        }
    }
    Ok(sigma2_from_weighted_moment(h, &s))
}

/// Scale of the full-tail covariance Sigma^(2,inf) = scale * I_M:
/// scale = (h^2 / 2 pi^2) alpha_n.
pub fn sigma2_inf(h: f64, n: usize, m: usize) -> Result<f64> {
    check_dim("sigma2_inf requires at least two components", m)?;
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma2_inf requires h > 0, got {h}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter(
            "sigma2_inf requires n >= 1".to_string(),
        ));
    }
    Ok(h * h * tail_constants(n).alpha / (2.0 * PI * PI))
}
