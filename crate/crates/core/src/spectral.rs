//! Principal eigenvalue of the linearization, stability classification, and
//! membership tests for the stable / asymptotically stable candidate sets.
//!
//! Stability uses the symmetrized quadratic form (the variational infimum
//! only sees the symmetric part of the operator); the fold machinery keeps
//! the full nonsymmetric operator. The two are cross-checked at folds.

use crate::error::{Error, Result};
use crate::mesh::Grid;
use crate::model::{ProblemSpec, StateVector};
use crate::operator::{assemble_jacobian, LinearOperator};
use crate::quotient;

/// Smallest eigenpair of the symmetrized operator with the lumped
/// (uniform) mass; eigenfunction mass-normalized, int |phi|^2 = 1, and
/// sign-fixed positive at the node of largest magnitude.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    pub phi: StateVector,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Stability {
    AsymptoticallyStable,
    Marginal,
    Unstable,
}

impl Stability {
    /// Stable in the weak sense: lambda1 >= -tol.
    pub fn is_stable(self) -> bool {
        !matches!(self, Stability::Unstable)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stability::AsymptoticallyStable => "asymptotically_stable",
            Stability::Marginal => "marginal",
            Stability::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityTag {
    pub stability: Stability,
    pub lambda1: f64,
    pub tol: f64,
}

impl StabilityTag {
    pub fn classify(lambda1: f64, tol: f64) -> Self {
        let stability = if lambda1 > tol {
            Stability::AsymptoticallyStable
        } else if lambda1 < -tol {
            Stability::Unstable
        } else {
            Stability::Marginal
        };
        StabilityTag {
            stability,
            lambda1,
            tol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Residual tolerance; defaults to 1e-7 * (1 + stencil lambda1).
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: None,
            max_iter: 400,
        }
    }
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> Self {
        EigenOptions {
            tol: Some(tol),
            max_iter: 400,
        }
    }

    pub fn resolved_tol(&self, grid: &Grid) -> f64 {
        self.tol
            .unwrap_or_else(|| 1e-7 * (1.0 + grid.stencil_lambda1().abs()))
    }
}

/// Default stability tolerance, matched to the eigen solver default.
pub fn default_stability_tol(grid: &Grid) -> f64 {
    1e-7 * (1.0 + grid.stencil_lambda1().abs())
}

/// Smallest eigenvalue of (A + A^T)/2 in the lumped-mass sense, by
/// safeguarded shifted inverse iteration: the shift starts below the
/// Gershgorin bound and tracks theta - residual, which never overshoots
/// the target eigenvalue for a symmetric matrix.
pub fn smallest_eigenpair(
    a: &LinearOperator,
    grid: &Grid,
    opts: &EigenOptions,
) -> Result<EigenPair> {
    let tol = opts.resolved_tol(grid);
    let sym = a.band.symmetrized();
    let n = sym.n();
    let lb = sym.gershgorin_lower();
    let scale = sym.max_abs().max(1.0);
    let mut shift = lb - 1e-3 * scale;

    // deterministic start vector with all Fourier-ish modes present
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.3 * ((i + 1) as f64).sin())
        .collect();
    normalize(&mut x);

    let mut theta = rayleigh(&sym, &x);
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut shifted = sym.clone();
        shifted.shift_diagonal(-shift);
        let lu = match shifted.factorize() {
            Ok(lu) => lu,
            Err(_) => {
                // exact hit on an eigenvalue: nudge and retry next iteration
                shift -= tol.max(1e-12 * scale);
                continue;
            }
        };
        let mut y = lu.solve(&x);
        if y.iter().any(|v| !v.is_finite()) {
            shift -= tol.max(1e-12 * scale);
            continue;
        }
        normalize(&mut y);
        x = y;
        theta = rayleigh(&sym, &x);
        let ax = sym.matvec(&x);
        residual = ax
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - theta * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol {
            let phi = mass_normalized(a, grid, &x);
            return Ok(EigenPair {
                lambda1: theta,
                phi,
                iterations: it,
                residual,
            });
        }
        // theta - residual is a guaranteed lower bound on the nearest
        // eigenvalue; keep strictly below so the iteration cannot lock
        // onto a higher one
        shift = theta - residual - 1e-3 * tol;
    }
    Err(Error::EigenNonConvergence {
        iterations: opts.max_iter,
        residual: if residual.is_finite() { residual } else { theta },
    })
}

fn normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
}

fn rayleigh(a: &crate::linalg::BandMatrix, x: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let num: f64 = ax.iter().zip(x).map(|(a, b)| a * b).sum();
    let den: f64 = x.iter().map(|v| v * v).sum();
    num / den
}

fn mass_normalized(a: &LinearOperator, grid: &Grid, x: &[f64]) -> StateVector {
    let mut v = x.to_vec();
    // argmax |v| gets positive sign; mass normalization int |phi|^2 = 1
    let mut peak = 0usize;
    for (i, val) in v.iter().enumerate() {
        if val.abs() > v[peak].abs() {
            peak = i;
        }
    }
    let s = v[peak].signum();
    let norm = (grid.weight() * v.iter().map(|t| t * t).sum::<f64>()).sqrt();
    for t in v.iter_mut() {
        *t *= s / norm;
    }
    StateVector::from_flat(a.m, a.n_nodes, &v)
}

/// Assembles F_u(s, lambda) and classifies by the sign of its first
/// eigenvalue.
pub fn classify_stability(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    lambda: f64,
    tol: f64,
) -> Result<StabilityTag> {
    let jac = assemble_jacobian(spec, grid, s, lambda)?;
    let pair = smallest_eigenpair(&jac, grid, &EigenOptions::default())?;
    Ok(StabilityTag::classify(pair.lambda1, tol))
}

/// Membership in the stable candidate set: tau = R(s, s) and
/// lambda1(F_u(s, tau)) >= -tol. Returns the flag and tau.
pub fn membership_ws(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    tol: f64,
) -> Result<(bool, f64)> {
    let r = quotient::rayleigh_extended(spec, grid, s, s)?;
    let tag = classify_stability(spec, grid, s, r.value, tol)?;
    Ok((tag.lambda1 >= -tol, r.value))
}

/// Strict-positivity variant: lambda1(F_u(s, tau)) > tol.
pub fn membership_was(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    tol: f64,
) -> Result<(bool, f64)> {
    let r = quotient::rayleigh_extended(spec, grid, s, s)?;
    let tag = classify_stability(spec, grid, s, r.value, tol)?;
    Ok((tag.lambda1 > tol, r.value))
}

/// Smallest singular value of the full nonsymmetric operator, by power
/// iteration on (A^T A)^{-1} using separate factorizations of A and A^T.
pub fn smallest_singular_value(a: &LinearOperator, max_iter: usize) -> Result<f64> {
    let n = a.band.n();
    let lu = a.band.factorize()?;
    let lut = a.band.transpose().factorize()?;
    let mut z: Vec<f64> = (0..n).map(|i| 1.0 + 0.2 * ((2 * i + 1) as f64).cos()).collect();
    normalize(&mut z);
    let mut rho_prev = 0.0;
    for it in 1..=max_iter {
        let y = lut.solve(&z);
        let mut w = lu.solve(&y);
        let rho: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
        if w.iter().any(|v| !v.is_finite()) {
            return Ok(0.0);
        }
        normalize(&mut w);
        z = w;
        if it > 3 && (rho - rho_prev).abs() <= 1e-10 * rho.abs() {
            return Ok(1.0 / rho.abs().sqrt());
        }
        rho_prev = rho;
    }
    Ok(1.0 / rho_prev.abs().sqrt())
}
