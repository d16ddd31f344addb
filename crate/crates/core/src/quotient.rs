//! The extended Rayleigh quotient R(u, v), its u- and v-gradients, the
//! admissible-set gate, the inner-infimum dichotomy probe, a
//! minimizing-sequence diagnostic, and the criticality <-> fold-system
//! equivalence check.
//!
//! For fixed u the quotient is a ratio of two functionals affine in v, so
//! on a non-solution its infimum over the admissible set is -infinity; a
//! minimizer search would never terminate. The probe therefore certifies
//! one branch of the dichotomy instead: either R(u, .) is constant (u
//! solves the system at that constant) or an explicit descent family drives
//! R below any bound.

use crate::error::{Error, Result};
use crate::mesh::{self, Grid, GridField};
use crate::model::{eval_g, eval_g_jacobian, ProblemSpec, StateVector};
use crate::operator::{assemble_jacobian, assemble_residual};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Admissibility threshold for the denominator.
pub const EPS_DEN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct QuotientValue {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
}

/// Outcome of the inner-infimum probe.
#[derive(Debug, Clone)]
pub enum InfProbeResult {
    /// R(s, .) constant at `value` over the sampled admissible directions;
    /// `spread` is the observed max - min, `worst_normalized_deviation`
    /// the worst |R - value| relative to its per-trial bound.
    Constant {
        value: f64,
        spread: f64,
        worst_normalized_deviation: f64,
        trials: usize,
    },
    /// Explicit descent family with strictly decreasing sampled values,
    /// the last below -1/tol.
    UnboundedBelow {
        certificate: Vec<(StateVector, f64)>,
    },
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    /// Residual threshold deciding the solution branch; resolved against
    /// the state scale when None.
    pub tol_solution: Option<f64>,
    /// The unbounded branch certifies once R <= -1/tol_unbounded.
    pub tol_unbounded: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            tol_solution: None,
            tol_unbounded: 1e-6,
            seed: 7,
        }
    }
}

fn dot_w(grid: &Grid, a: &[GridField], b: &[GridField]) -> f64 {
    let w = grid.weight();
    let mut acc = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        acc += fa.0.iter().zip(&fb.0).map(|(x, y)| x * y).sum::<f64>();
    }
    w * acc
}

fn l2_w(grid: &Grid, a: &[GridField]) -> f64 {
    dot_w(grid, a, a).sqrt()
}

/// Numerator Riesz field rho_i = -Delta s_i - a_i s_i^{q_i}, so that the
/// quotient numerator is the weighted pairing <rho, v>.
fn numerator_field(spec: &ProblemSpec, grid: &Grid, s: &StateVector) -> Result<Vec<GridField>> {
    let mut rho = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        let mut lap = mesh::laplacian_apply(grid, &s.fields[i])?;
        for p in 0..grid.n_nodes() {
            let u = s.fields[i].0[p];
            lap.0[p] -= spec.a[i].0[p] * u.abs().powf(spec.q[i]) * u.signum();
        }
        rho.push(lap);
    }
    Ok(rho)
}

fn require_open_cone(s: &StateVector) -> Result<()> {
    if !s.is_positive() {
        return Err(Error::ConeViolation("state must be strictly positive".into()));
    }
    Ok(())
}

fn admissibility_gate(grid: &Grid, g: &[GridField], v: &StateVector, den: f64) -> Result<()> {
    let threshold = EPS_DEN * (1.0 + l2_w(grid, g) * l2_w(grid, &v.fields));
    if den.abs() < threshold {
        return Err(Error::DenominatorDegenerate {
            denominator: den.abs(),
            threshold,
        });
    }
    Ok(())
}

/// R(s, v) = [sum_i <grad s_i, grad v_i> - sum_i int a_i s_i^q v_i] /
/// sum_i int g_i(x, s) v_i.
pub fn rayleigh_extended(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    v: &StateVector,
) -> Result<QuotientValue> {
    require_open_cone(s)?;
    let rho = numerator_field(spec, grid, s)?;
    let g = eval_g(spec, s)?;
    let numerator = dot_w(grid, &rho, &v.fields);
    let denominator = dot_w(grid, &g, &v.fields);
    admissibility_gate(grid, &g, v, denominator)?;
    Ok(QuotientValue {
        value: numerator / denominator,
        numerator,
        denominator,
    })
}

/// Riesz representative (discrete L2 pairing) of the v-gradient:
/// xi -> [N(xi) - R(s,v) D(xi)] / D(v). Vanishes identically iff s solves
/// the system at lambda = R(s, v).
pub fn quotient_grad_v(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    v: &StateVector,
) -> Result<StateVector> {
    let r = rayleigh_extended(spec, grid, s, v)?;
    let rho = numerator_field(spec, grid, s)?;
    let g = eval_g(spec, s)?;
    let fields = rho
        .iter()
        .zip(&g)
        .map(|(rf, gf)| {
            GridField(
                rf.0.iter()
                    .zip(&gf.0)
                    .map(|(&x, &y)| (x - r.value * y) / r.denominator)
                    .collect(),
            )
        })
        .collect();
    Ok(StateVector::new(fields))
}

/// Riesz representative of the u-gradient, assembled by the quotient rule:
/// component k is [-Delta v_k - q_k a_k s_k^{q_k-1} v_k
/// - R sum_i g_{i,u_k}(s) v_i] / D(v), i.e. the transpose action of
/// F_u(s, R) on v over the denominator. Vanishes iff v is a left null
/// direction of F_u(s, R(s,v)).
pub fn quotient_grad_u(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    v: &StateVector,
) -> Result<StateVector> {
    let r = rayleigh_extended(spec, grid, s, v)?;
    let gj = eval_g_jacobian(spec, s)?;
    let m = spec.m;
    let mut fields = Vec::with_capacity(m);
    for k in 0..m {
        let mut lap = mesh::laplacian_apply(grid, &v.fields[k])?;
        for p in 0..grid.n_nodes() {
            let u = s.fields[k].0[p];
            let mut coupled = 0.0;
            for i in 0..m {
                coupled += gj[i * m + k].0[p] * v.fields[i].0[p];
            }
            lap.0[p] -= spec.q[k] * spec.a[k].0[p] * u.powf(spec.q[k] - 1.0) * v.fields[k].0[p]
                + r.value * coupled;
            lap.0[p] /= r.denominator;
        }
        fields.push(lap);
    }
    Ok(StateVector::new(fields))
}

/// Discrete L2 norm of a Riesz representative (functional norm in the
/// same pairing the gradients are returned in).
pub fn functional_norm(grid: &Grid, repr: &StateVector) -> f64 {
    repr.l2_norm(grid)
}

/// Dichotomy probe realizing the inner infimum over admissible v.
pub fn inner_inf_probe(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    trials: usize,
    opts: &ProbeOptions,
) -> Result<InfProbeResult> {
    require_open_cone(s)?;
    let rho = numerator_field(spec, grid, s)?;
    let g = eval_g(spec, s)?;
    let g_norm = l2_w(grid, &g);
    let rho_norm = l2_w(grid, &rho);
    let den_ss = dot_w(grid, &g, &s.fields);
    admissibility_gate(grid, &g, s, den_ss)?;
    let lambda_hat = dot_w(grid, &rho, &s.fields) / den_ss;

    let residual = assemble_residual(spec, grid, s, lambda_hat)?.norm;
    let tol_solution = opts
        .tol_solution
        .unwrap_or(1e-9 * (1.0 + rho_norm + lambda_hat.abs() * g_norm));
    let float_floor = 1e-13 * (rho_norm + lambda_hat.abs() * g_norm);

    if residual <= tol_solution {
        // solution branch: R must be constant across random admissible v
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let m = spec.m;
        let n = grid.n_nodes();
        let mut r_min = f64::INFINITY;
        let mut r_max = f64::NEG_INFINITY;
        let mut worst_dev = 0.0f64;
        let mut done = 0;
        let mut attempts = 0;
        while done < trials && attempts < 20 * trials.max(1) {
            attempts += 1;
            let v = StateVector::new(
                (0..m)
                    .map(|_| GridField((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()))
                    .collect(),
            );
            let den = dot_w(grid, &g, &v.fields);
            if den.abs() < EPS_DEN * (1.0 + g_norm * l2_w(grid, &v.fields)) {
                continue;
            }
            let num = dot_w(grid, &rho, &v.fields);
            let r = num / den;
            let bound = (residual + float_floor) * l2_w(grid, &v.fields) / den.abs();
            let dev = (r - lambda_hat).abs();
            if dev > 8.0 * bound + 1e-12 * (1.0 + lambda_hat.abs()) {
                return Err(Error::ProbeInconclusive(format!(
                    "residual {residual:.3e} passed the solution gate but R deviates by {dev:.3e} (bound {bound:.3e})"
                )));
            }
            worst_dev = worst_dev.max(if bound > 0.0 { dev / bound } else { 0.0 });
            r_min = r_min.min(r);
            r_max = r_max.max(r);
            done += 1;
        }
        if done < trials {
            return Err(Error::ProbeInconclusive(format!(
                "only {done} of {trials} admissible directions found"
            )));
        }
        return Ok(InfProbeResult::Constant {
            value: lambda_hat,
            spread: if trials == 0 { 0.0 } else { r_max - r_min },
            worst_normalized_deviation: worst_dev,
            trials,
        });
    }

    // non-solution branch: construct v_t = v_g - t e with D(v_t) = 1 and
    // R(s, v_t) = N(v_g) - t ||P_perp rho||, strictly decreasing in t
    let gg = dot_w(grid, &g, &g);
    let rg = dot_w(grid, &rho, &g);
    let v_g = StateVector::new(g.clone()).scale(1.0 / gg);
    let perp = StateVector::new(rho.clone()).add_scaled(-rg / gg, &StateVector::new(g.clone()));
    let perp_norm = perp.l2_norm(grid);
    if perp_norm <= 1e-13 * (1.0 + rho_norm) {
        return Err(Error::ProbeInconclusive(format!(
            "residual {residual:.3e} exceeds the solution gate {tol_solution:.3e} but the \
             numerator functional is numerically parallel to the denominator"
        )));
    }
    let e = perp.scale(1.0 / perp_norm);
    let r0 = dot_w(grid, &rho, &v_g.fields);
    let target = 1.0 / opts.tol_unbounded;
    let mut certificate = Vec::new();
    let mut k = 0;
    loop {
        let t = (r0.abs() + 10f64.powi(k)) / perp_norm;
        let v = v_g.add_scaled(-t, &e);
        let r = rayleigh_extended(spec, grid, s, &v)?;
        certificate.push((v, r.value));
        if r.value <= -target {
            break;
        }
        k += 1;
        if k > 60 {
            return Err(Error::ProbeInconclusive(
                "descent family failed to reach the unboundedness target".into(),
            ));
        }
    }
    for pair in certificate.windows(2) {
        debug_assert!(pair[1].1 < pair[0].1);
    }
    Ok(InfProbeResult::UnboundedBelow { certificate })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MinimizingSequenceReport {
    pub grad_norms: Vec<f64>,
    /// Running minimum of the gradient norms (monotone envelope).
    pub envelope: Vec<f64>,
    pub floor: f64,
    pub pass: bool,
}

/// Descent on v -> R(s, v) under the normalization int g_i(x,s) v_i = 1,
/// reporting the v-gradient norms. For s near a solution the norms stay at
/// the residual scale (the discrete shadow of the vanishing-gradient
/// conclusion for minimizing sequences).
pub fn minimizing_sequence_test(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    k_max: usize,
) -> Result<MinimizingSequenceReport> {
    require_open_cone(s)?;
    let rho = numerator_field(spec, grid, s)?;
    let g = eval_g(spec, s)?;
    let g_norm = l2_w(grid, &g);
    let rho_norm = l2_w(grid, &rho);
    let gg = dot_w(grid, &g, &g);
    if gg.sqrt() < EPS_DEN {
        return Err(Error::DenominatorDegenerate {
            denominator: gg.sqrt(),
            threshold: EPS_DEN,
        });
    }
    let den_ss = dot_w(grid, &g, &s.fields);
    admissibility_gate(grid, &g, s, den_ss)?;
    let lambda_hat = dot_w(grid, &rho, &s.fields) / den_ss;
    let residual = assemble_residual(spec, grid, s, lambda_hat)?.norm;

    let gsv = StateVector::new(g.clone());
    let mut v = gsv.scale(1.0 / gg);
    let mut grad_norms = Vec::with_capacity(k_max);
    let mut r_last = lambda_hat;
    for _ in 0..k_max {
        // normalization D(v) = 1 is maintained exactly up to rounding;
        // renormalize to keep it there
        let den = dot_w(grid, &g, &v.fields);
        v = v.scale(1.0 / den);
        let r_k = dot_w(grid, &rho, &v.fields);
        r_last = r_k;
        let repr = StateVector::new(rho.clone()).add_scaled(-r_k, &gsv);
        grad_norms.push(repr.l2_norm(grid));
        // project the step orthogonal to g so the normalization survives
        let coef = dot_w(grid, &repr.fields, &g) / gg;
        let step = repr.add_scaled(-coef, &gsv);
        let alpha = 0.5 * (1.0 + v.l2_norm(grid)) / (1.0 + step.l2_norm(grid));
        v = v.add_scaled(-alpha, &step);
    }
    let mut envelope = Vec::with_capacity(grad_norms.len());
    let mut cur = f64::INFINITY;
    for &gn in &grad_norms {
        cur = cur.min(gn);
        envelope.push(cur);
    }
    let floor = 10.0 * (residual + (r_last - lambda_hat).abs() * g_norm)
        + 1e-13 * (rho_norm + lambda_hat.abs() * g_norm);
    let pass = envelope.last().map_or(true, |&e| e <= floor);
    Ok(MinimizingSequenceReport {
        grad_norms,
        envelope,
        floor,
        pass,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EquivalenceReport {
    /// |lambda - R| in residual units (scaled by ||g||).
    pub gap_residual: f64,
    /// ||R_v|| |D| = ||F(s, R)||.
    pub grad_v_residual: f64,
    /// ||R_u|| |D| = ||F_u(s, R)^T v||.
    pub grad_u_residual: f64,
    pub residual_f: f64,
    pub residual_fu_v: f64,
    /// Transpose action at lambda, quantifying the nonsymmetric pairing gap.
    pub residual_fut_v: f64,
    pub symmetry_gap: f64,
    pub left_max: f64,
    pub right_max: f64,
    pub threshold: f64,
    pub ratio_constant: f64,
    pub consistent: bool,
    /// Residual of the exact algebraic bridge F(s,lambda) = D R_v - (lambda - R) g;
    /// should sit at rounding level regardless of the triple.
    pub bridge_defect: f64,
}

#[derive(Debug, Clone)]
pub struct EquivalenceOptions {
    /// Smallness threshold in residual units; resolved from the state scale
    /// when None.
    pub tau: Option<f64>,
    pub ratio_constant: f64,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        EquivalenceOptions {
            tau: None,
            ratio_constant: 100.0,
        }
    }
}

/// Compares the criticality system {lambda = R, R_v = 0, R_u = 0} against
/// the fold system {F = 0, F_u v = 0} on one triple, with all residuals
/// expressed in the same (mass-weighted L2) units.
pub fn criticality_equivalence_check(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    v: &StateVector,
    lambda: f64,
    opts: &EquivalenceOptions,
) -> Result<EquivalenceReport> {
    let vnorm = v.l2_norm(grid);
    if vnorm == 0.0 {
        return Err(Error::Shape("test direction v must be nonzero".into()));
    }
    let v = v.scale(1.0 / vnorm);
    let r = rayleigh_extended(spec, grid, s, &v)?;
    let rho = numerator_field(spec, grid, s)?;
    let g = eval_g(spec, s)?;
    let g_norm = l2_w(grid, &g);
    let rho_norm = l2_w(grid, &rho);

    let grad_v = quotient_grad_v(spec, grid, s, &v)?;
    let grad_u = quotient_grad_u(spec, grid, s, &v)?;
    let gap_residual = (lambda - r.value).abs() * g_norm;
    let grad_v_residual = functional_norm(grid, &grad_v) * r.denominator.abs();
    let grad_u_residual = functional_norm(grid, &grad_u) * r.denominator.abs();

    let f = assemble_residual(spec, grid, s, lambda)?;
    let jac = assemble_jacobian(spec, grid, s, lambda)?;
    let fu_v = jac.apply(&v);
    let fut_v = jac.apply_transpose(&v);
    let residual_f = f.norm;
    let residual_fu_v = fu_v.l2_norm(grid);
    let residual_fut_v = fut_v.l2_norm(grid);
    let symmetry_gap = fu_v.add_scaled(-1.0, &fut_v).l2_norm(grid);

    // exact identity: F(s, lambda) = D * grad_v - (lambda - R) g
    let mut bridge = StateVector::new(f.fields.clone());
    bridge = bridge.add_scaled(-r.denominator, &grad_v);
    bridge = bridge.add_scaled(lambda - r.value, &StateVector::new(g.clone()));
    let bridge_defect = bridge.l2_norm(grid);

    let left_max = gap_residual.max(grad_v_residual).max(grad_u_residual);
    let right_max = residual_f.max(residual_fu_v);
    let tau = opts.tau.unwrap_or(1e-6 * (1.0 + rho_norm));
    let k = opts.ratio_constant;
    let consistent = !((left_max <= tau && right_max > k * tau + 10.0 * symmetry_gap)
        || (right_max <= tau && left_max > k * tau + 10.0 * symmetry_gap));
    let ratio = if left_max > 0.0 && right_max > 0.0 {
        (right_max / left_max).max(left_max / right_max)
    } else {
        1.0
    };
    Ok(EquivalenceReport {
        gap_residual,
        grad_v_residual,
        grad_u_residual,
        residual_f,
        residual_fu_v,
        residual_fut_v,
        symmetry_gap,
        left_max,
        right_max,
        threshold: tau,
        ratio_constant: ratio,
        consistent,
        bridge_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;
    use approx::assert_relative_eq;

    fn abc_spec(grid: &Grid) -> ProblemSpec {
        ProblemSpec::scalar_power_constant(grid, 0.5, 3.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn quotient_worked_example() {
        let grid = build_grid(1, &[1.0], &[3]).unwrap();
        let spec = abc_spec(&grid);
        let s = StateVector::new(vec![GridField(vec![0.25, 0.5, 0.25])]);
        let v = StateVector::new(vec![GridField(vec![1.0, 1.0, 1.0])]);
        let r = rayleigh_extended(&spec, &grid, &s, &v).unwrap();
        assert_relative_eq!(r.numerator, 1.573223, max_relative = 1e-6);
        assert_relative_eq!(r.denominator, 0.0390625, max_relative = 1e-12);
        assert_relative_eq!(r.value, 40.2745, max_relative = 1e-5);
        // value * denominator = numerator to rounding
        assert_relative_eq!(r.value * r.denominator, r.numerator, max_relative = 1e-14);
    }

    #[test]
    fn quotient_zero_homogeneous_in_v() {
        let grid = build_grid(1, &[1.0], &[9]).unwrap();
        let spec = abc_spec(&grid);
        let s = StateVector::new(vec![grid.boundary_distance_field().scale(0.4)]);
        let v = StateVector::new(vec![GridField((0..9).map(|p| 1.0 + (p as f64).sin()).collect())]);
        let r1 = rayleigh_extended(&spec, &grid, &s, &v).unwrap();
        let r2 = rayleigh_extended(&spec, &grid, &s, &v.scale(17.0)).unwrap();
        assert!((r1.value - r2.value).abs() <= 1e-12 * (1.0 + r1.value.abs()));
    }

    #[test]
    fn denominator_gate() {
        let grid = build_grid(1, &[1.0], &[5]).unwrap();
        let spec = abc_spec(&grid);
        let s = StateVector::new(vec![grid.constant_field(0.5)]);
        // v orthogonal to the constant g(s) field: alternating signs sum to zero
        let v = StateVector::new(vec![GridField(vec![1.0, -1.0, 0.0, 1.0, -1.0])]);
        assert!(matches!(
            rayleigh_extended(&spec, &grid, &s, &v),
            Err(Error::DenominatorDegenerate { .. })
        ));
    }

    #[test]
    fn grad_v_matches_finite_differences_and_scaling() {
        use rand::{Rng, SeedableRng};
        let grid = build_grid(1, &[1.0], &[9]).unwrap();
        let spec = abc_spec(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = StateVector::new(vec![GridField(
            (0..9).map(|_| rng.random_range(0.2..1.0)).collect(),
        )]);
        let v = StateVector::new(vec![GridField(
            (0..9).map(|_| rng.random_range(0.5..1.5)).collect(),
        )]);
        let xi = StateVector::new(vec![GridField(
            (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )]);
        let repr = quotient_grad_v(&spec, &grid, &s, &v).unwrap();
        let eps = 1e-6;
        let rp = rayleigh_extended(&spec, &grid, &s, &v.add_scaled(eps, &xi)).unwrap();
        let rm = rayleigh_extended(&spec, &grid, &s, &v.add_scaled(-eps, &xi)).unwrap();
        let fd = (rp.value - rm.value) / (2.0 * eps);
        let pairing = dot_w(&grid, &repr.fields, &xi.fields);
        assert!(
            (fd - pairing).abs() <= 1e-5 * (1.0 + pairing.abs()),
            "fd {fd} vs pairing {pairing}"
        );
        // gradient is (-1)-homogeneous in v
        let repr2 = quotient_grad_v(&spec, &grid, &s, &v.scale(2.0)).unwrap();
        for p in 0..9 {
            assert_relative_eq!(
                repr2.fields[0].0[p],
                0.5 * repr.fields[0].0[p],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn grad_u_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let grid = build_grid(1, &[1.0], &[9]).unwrap();
        let spec = ProblemSpec::power_coupled_constant(&grid, 2, 0.5, 3.0, 1.0, 0.3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut mk = |lo: f64, hi: f64| {
            StateVector::new(
                (0..2)
                    .map(|_| GridField((0..9).map(|_| rng.random_range(lo..hi)).collect()))
                    .collect(),
            )
        };
        let s = mk(0.4, 1.2);
        let v = mk(0.5, 1.5);
        let xi = mk(-0.5, 0.5);
        let repr = quotient_grad_u(&spec, &grid, &s, &v).unwrap();
        let eps = 1e-6;
        let rp = rayleigh_extended(&spec, &grid, &s.add_scaled(eps, &xi), &v).unwrap();
        let rm = rayleigh_extended(&spec, &grid, &s.add_scaled(-eps, &xi), &v).unwrap();
        let fd = (rp.value - rm.value) / (2.0 * eps);
        let pairing = dot_w(&grid, &repr.fields, &xi.fields);
        assert!(
            (fd - pairing).abs() <= 1e-5 * (1.0 + pairing.abs()),
            "fd {fd} vs pairing {pairing}"
        );
    }

    #[test]
    fn grad_v_vanishes_on_solutions() {
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec = abc_spec(&grid);
        let seed = StateVector::new(vec![grid.boundary_distance_field().scale(0.05)]);
        let sol = crate::operator::newton_solve(
            &spec,
            &grid,
            &seed,
            0.0,
            &crate::operator::NewtonOptions::default(),
        )
        .unwrap();
        let v = StateVector::new(vec![grid.constant_field(1.0)]);
        let repr = quotient_grad_v(&spec, &grid, &sol.state, &v).unwrap();
        let r = rayleigh_extended(&spec, &grid, &sol.state, &v).unwrap();
        assert!(
            functional_norm(&grid, &repr)
                <= 100.0 * sol.residual_norm / r.denominator.abs() + 1e-12
        );
    }

    #[test]
    fn probe_constant_on_solution() {
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec = abc_spec(&grid);
        let seed = StateVector::new(vec![grid.boundary_distance_field().scale(0.05)]);
        let sol = crate::operator::newton_solve(
            &spec,
            &grid,
            &seed,
            0.0,
            &crate::operator::NewtonOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        match inner_inf_probe(&spec, &grid, &sol.state, 100, &ProbeOptions::default()).unwrap() {
            InfProbeResult::Constant { value, trials, .. } => {
                assert!(value.abs() <= 1e-8, "lambda-hat at the plain sublinear solution is 0, got {value}");
                assert_eq!(trials, 100);
            }
            InfProbeResult::UnboundedBelow { .. } => panic!("expected the constant branch"),
        }
    }

    #[test]
    fn probe_unbounded_on_non_solution() {
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec = abc_spec(&grid);
        let seed = StateVector::new(vec![grid.boundary_distance_field().scale(0.05)]);
        let sol = crate::operator::newton_solve(
            &spec,
            &grid,
            &seed,
            0.0,
            &crate::operator::NewtonOptions::default(),
        )
        .unwrap();
        // perturbing the solution breaks it for every lambda
        let s = sol
            .state
            .add_scaled(0.3, &StateVector::new(vec![grid.boundary_distance_field()]));
        match inner_inf_probe(&spec, &grid, &s, 10, &ProbeOptions::default()).unwrap() {
            InfProbeResult::UnboundedBelow { certificate } => {
                assert!(certificate.last().unwrap().1 <= -1e6);
                for pair in certificate.windows(2) {
                    assert!(pair[1].1 < pair[0].1);
                }
            }
            InfProbeResult::Constant { .. } => panic!("expected the unbounded branch"),
        }
    }

    #[test]
    fn minimizing_sequence_reports() {
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec = abc_spec(&grid);
        let seed = StateVector::new(vec![grid.boundary_distance_field().scale(0.05)]);
        let sol = crate::operator::newton_solve(
            &spec,
            &grid,
            &seed,
            0.0,
            &crate::operator::NewtonOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        // at a solution the gradient norms sit at the residual scale
        let rep = minimizing_sequence_test(&spec, &grid, &sol.state, 20).unwrap();
        assert!(rep.pass, "floor {:.3e}, envelope {:?}", rep.floor, rep.envelope.last());
        assert_eq!(rep.grad_norms.len(), 20);

        // k_max = 0 gives an empty, valid report
        let rep0 = minimizing_sequence_test(&spec, &grid, &sol.state, 0).unwrap();
        assert!(rep0.pass && rep0.grad_norms.is_empty());

        // a perturbed solution plateaus at the perturbation scale
        let s = sol
            .state
            .add_scaled(1e-3, &StateVector::new(vec![grid.boundary_distance_field()]));
        let repp = minimizing_sequence_test(&spec, &grid, &s, 20).unwrap();
        let plateau = repp.envelope.last().cloned().unwrap();
        assert!(
            plateau > 1e-6 && plateau < 1.0,
            "expected an O(1e-3)-driven plateau, got {plateau:.3e}"
        );
    }

    #[test]
    fn equivalence_check_on_solution_with_generic_v() {
        use rand::{Rng, SeedableRng};
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec = abc_spec(&grid);
        let seed = StateVector::new(vec![grid.boundary_distance_field().scale(0.05)]);
        let sol = crate::operator::newton_solve(
            &spec,
            &grid,
            &seed,
            0.0,
            &crate::operator::NewtonOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = StateVector::new(vec![GridField(
            (0..31).map(|_| rng.random_range(0.5..1.5)).collect(),
        )]);
        let rep =
            criticality_equivalence_check(&spec, &grid, &sol.state, &v, 0.0, &Default::default())
                .unwrap();
        // solution with a non-null v: F small, F_u v large; R_v small, R_u large
        assert!(rep.residual_f <= rep.threshold);
        assert!(rep.residual_fu_v > rep.threshold);
        assert!(rep.grad_v_residual <= rep.threshold * 10.0);
        assert!(rep.grad_u_residual > rep.threshold);
        assert!(rep.consistent, "report: {rep:?}");
        assert!(rep.bridge_defect <= 1e-10 * (1.0 + rep.residual_f));
    }

    #[test]
    fn equivalence_check_generic_triple_large_both_sides() {
        use rand::{Rng, SeedableRng};
        let grid = build_grid(1, &[1.0], &[15]).unwrap();
        let spec = abc_spec(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = StateVector::new(vec![GridField(
            (0..15).map(|_| rng.random_range(0.3..1.5)).collect(),
        )]);
        let v = StateVector::new(vec![GridField(
            (0..15).map(|_| rng.random_range(0.2..1.2)).collect(),
        )]);
        let rep = criticality_equivalence_check(&spec, &grid, &s, &v, 3.0, &Default::default())
            .unwrap();
        assert!(rep.left_max > rep.threshold && rep.right_max > rep.threshold);
        assert!(rep.consistent);
    }
}
