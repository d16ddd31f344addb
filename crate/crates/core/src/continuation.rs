//! Branch tracing in lambda by pseudo-arclength continuation, stability
//! tagging, fold bracketing and refinement through the augmented
//! (Moore-Spence) system, an independent bisection-on-eigenvalue-sign
//! fold oracle, minimax estimates of the extremal parameter from certified
//! stable points, the nonexistence probe above the fold, and the runtime
//! invariant suite for stored branches.

use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix};
use crate::mesh::{Grid, GridField};
use crate::model::{eval_g, eval_g_hessian_diag, eval_g_jacobian, ProblemSpec, StateVector};
use crate::operator::{
    assemble_f_lambda, assemble_jacobian, assemble_residual, cone_membership, newton_solve,
    NewtonOptions,
};
use crate::quotient::{inner_inf_probe, InfProbeResult, ProbeOptions};
use crate::spectral::{
    default_stability_tol, smallest_eigenpair, smallest_singular_value, EigenOptions, Stability,
    StabilityTag,
};
use crate::sublinear::{baseline_state, comparison_check, FixedPointOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub lambda: f64,
    pub state: StateVector,
    pub lambda1: f64,
    pub stability: StabilityTag,
    pub arclength: f64,
    pub h1_norm: f64,
    pub lgamma0_norm: f64,
    pub lgamma_norm: f64,
    pub min_u_over_d: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum StopReason {
    MaxSteps,
    ArclengthBudget,
    LambdaRange,
    StepFloor,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Indices i where the lambda-direction flips between segments
    /// (i-1, i) and (i, i+1).
    pub fold_markers: Vec<usize>,
    pub stop_reason: StopReason,
}

/// Refined fold certificate from the augmented system.
#[derive(Debug, Clone)]
pub struct FoldPoint {
    pub lambda_star: f64,
    pub state: StateVector,
    /// Null direction, mass-normalized (int |v|^2 = 1), positive at its
    /// peak-magnitude node.
    pub null_vector: StateVector,
    pub residual_f: f64,
    pub residual_fv: f64,
    /// Smallest eigenvalue of the symmetrized linearization at the fold.
    pub lambda1_sym: f64,
    /// Smallest singular value of the full nonsymmetric linearization.
    pub smallest_singular_value: f64,
    pub normalization_id: &'static str,
    pub iterations: usize,
}

pub const FOLD_NORMALIZATION_ID: &str = "mass-l2-unit-positive-peak";

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    pub ds0: f64,
    pub ds_max: f64,
    /// Step floor as a fraction of ds0.
    pub ds_floor_factor: f64,
    pub max_steps: usize,
    pub arclength_budget: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub corrector_tol: f64,
    pub corrector_max_iter: usize,
    pub max_consecutive_failures: usize,
    pub delta_floor: Option<f64>,
    pub eig: EigenOptions,
    pub stability_tol: Option<f64>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            ds0: 0.05,
            ds_max: 0.5,
            ds_floor_factor: 1e-6,
            max_steps: 500,
            arclength_budget: 40.0,
            lambda_min: 0.0,
            lambda_max: 1e12,
            corrector_tol: 1e-11,
            corrector_max_iter: 12,
            max_consecutive_failures: 30,
            delta_floor: None,
            eig: EigenOptions::default(),
            stability_tol: None,
        }
    }
}

/// Scaled metric on (u, lambda): |du|^2 w / su^2 + dl^2 / sl^2, refreshed
/// at each accepted point so steps stay meaningful while lambda grows by
/// orders of magnitude.
#[derive(Debug, Clone, Copy)]
struct Metric {
    w: f64,
    su: f64,
    sl: f64,
}

impl Metric {
    fn at(grid: &Grid, u: &StateVector, lambda: f64) -> Metric {
        Metric {
            w: grid.weight(),
            su: 1.0 + u.l2_norm(grid),
            sl: 1.0 + lambda.abs(),
        }
    }

    fn dot(&self, du1: &[f64], dl1: f64, du2: &[f64], dl2: f64) -> f64 {
        let uu: f64 = du1.iter().zip(du2).map(|(a, b)| a * b).sum();
        self.w * uu / (self.su * self.su) + dl1 * dl2 / (self.sl * self.sl)
    }

    fn norm(&self, du: &[f64], dl: f64) -> f64 {
        self.dot(du, dl, du, dl).sqrt()
    }
}

/// Solves the bordered system [A b; n^T tau] [du; dl] = [r1; r2] by block
/// elimination on the factored A with iterative refinement, which restores
/// accuracy when A is nearly singular (exactly the fold neighborhood).
fn solve_bordered(
    lu: &BandLu,
    a: &BandMatrix,
    b: &[f64],
    nvec: &[f64],
    tau: f64,
    r1: &[f64],
    r2: f64,
    refinements: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = r1.len();
    let solve_once = |rhs1: &[f64], rhs2: f64| -> Result<(Vec<f64>, f64)> {
        let p = lu.solve(rhs1);
        let q = lu.solve(b);
        let np: f64 = nvec.iter().zip(&p).map(|(a, b)| a * b).sum();
        let nq: f64 = nvec.iter().zip(&q).map(|(a, b)| a * b).sum();
        let denom = tau - nq;
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::CorrectorFailure(
                "bordered system pivot vanished".into(),
            ));
        }
        let dl = (rhs2 - np) / denom;
        let du: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| pi - dl * qi).collect();
        Ok((du, dl))
    };
    let (mut du, mut dl) = solve_once(r1, r2)?;
    for _ in 0..refinements {
        let adu = a.matvec(&du);
        let res1: Vec<f64> = (0..n)
            .map(|i| r1[i] - adu[i] - b[i] * dl)
            .collect();
        let ndu: f64 = nvec.iter().zip(&du).map(|(a, b)| a * b).sum();
        let res2 = r2 - ndu - tau * dl;
        let (cu, cl) = solve_once(&res1, res2)?;
        for i in 0..n {
            du[i] += cu[i];
        }
        dl += cl;
    }
    if du.iter().any(|v| !v.is_finite()) || !dl.is_finite() {
        return Err(Error::CorrectorFailure("non-finite bordered solve".into()));
    }
    Ok((du, dl))
}

/// Newton corrector on {F(u, lambda) = 0, <t, X - X_plane>_metric = 0}.
/// Returns the corrected state, lambda, residual norm and iteration count.
#[allow(clippy::too_many_arguments)]
fn plane_corrector(
    spec: &ProblemSpec,
    grid: &Grid,
    u0: &StateVector,
    lambda0: f64,
    tangent_u: &[f64],
    tangent_l: f64,
    plane_u: &[f64],
    plane_l: f64,
    metric: &Metric,
    delta_floor: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(StateVector, f64, f64, usize)> {
    let m = spec.m;
    let nn = grid.n_nodes();
    let mut u = u0.clone();
    let mut lambda = lambda0;
    let nvec: Vec<f64> = tangent_u
        .iter()
        .map(|t| metric.w * t / (metric.su * metric.su))
        .collect();
    let tau = tangent_l / (metric.sl * metric.sl);

    let constraint = |uf: &[f64], l: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..uf.len() {
            acc += nvec[i] * (uf[i] - plane_u[i]);
        }
        acc + tau * (l - plane_l)
    };

    let mut res = assemble_residual(spec, grid, &u, lambda)?;
    let mut c = constraint(&u.flatten(), lambda);
    let mut merit = res.norm + c.abs();
    for it in 1..=max_iter {
        if res.norm <= tol && c.abs() <= 1e-10 * (1.0 + merit) {
            return Ok((u, lambda, res.norm, it - 1));
        }
        let jac = assemble_jacobian(spec, grid, &u, lambda)?;
        let lu = jac.band.factorize()?;
        let b = assemble_f_lambda(spec, grid, &u)?;
        let r1: Vec<f64> = StateVector::new(res.fields.clone()).scale(-1.0).flatten();
        let (du, dl) = solve_bordered(&lu, &jac.band, &b, &nvec, tau, &r1, -c, 2)?;
        let step = StateVector::from_flat(m, nn, &du);

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand_u = u.add_scaled(alpha, &step);
            let cand_l = lambda + alpha * dl;
            if cone_membership(grid, &cand_u, delta_floor) {
                let cand_res = assemble_residual(spec, grid, &cand_u, cand_l)?;
                let cand_uf = cand_u.flatten();
                let cand_c = constraint(&cand_uf, cand_l);
                let cand_merit = cand_res.norm + cand_c.abs();
                if cand_merit < (1.0 - 1e-4 * alpha) * merit || cand_merit <= tol {
                    u = cand_u;
                    lambda = cand_l;
                    res = cand_res;
                    c = cand_c;
                    merit = cand_merit;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::CorrectorFailure(format!(
                "no admissible decrease at iteration {it} (merit {merit:.3e})"
            )));
        }
    }
    if res.norm <= tol && c.abs() <= 1e-10 * (1.0 + merit) {
        return Ok((u, lambda, res.norm, max_iter));
    }
    Err(Error::CorrectorFailure(format!(
        "corrector stalled at residual {:.3e}",
        res.norm
    )))
}

/// Builds a fully tagged branch point from a state; the residual is
/// recomputed, not trusted.
pub fn branch_point_from_state(
    spec: &ProblemSpec,
    grid: &Grid,
    state: StateVector,
    lambda: f64,
    arclength: f64,
    opts: &ContinuationOptions,
) -> Result<BranchPoint> {
    let res = assemble_residual(spec, grid, &state, lambda)?;
    let jac = assemble_jacobian(spec, grid, &state, lambda)?;
    let pair = smallest_eigenpair(&jac, grid, &opts.eig)?;
    let tol = opts
        .stability_tol
        .unwrap_or_else(|| default_stability_tol(grid));
    let h1 = state.h1_norm(grid)?;
    Ok(BranchPoint {
        lambda,
        lambda1: pair.lambda1,
        stability: StabilityTag::classify(pair.lambda1, tol),
        arclength,
        h1_norm: h1,
        lgamma0_norm: state.lp_norm(grid, spec.gamma0),
        lgamma_norm: state.lp_norm(grid, spec.gamma),
        min_u_over_d: state.min_over_d(grid),
        residual: res.norm,
        state,
    })
}

/// Baseline branch point at lambda = 0 from the sublinear solve.
pub fn baseline_branch_point(
    spec: &ProblemSpec,
    grid: &Grid,
    fp_opts: &FixedPointOptions,
    opts: &ContinuationOptions,
) -> Result<BranchPoint> {
    let (state, _) = baseline_state(spec, grid, fp_opts)?;
    branch_point_from_state(spec, grid, state, 0.0, 0.0, opts)
}

/// Pseudo-arclength continuation with a secant predictor and a Newton
/// corrector on the bordered system. Stops at the arclength budget, the
/// lambda range, the step floor, or the step cap count.
pub fn trace_branch(
    spec: &ProblemSpec,
    grid: &Grid,
    start: &BranchPoint,
    opts: &ContinuationOptions,
) -> Result<Branch> {
    if start.residual > 100.0 * opts.corrector_tol {
        return Err(Error::CorrectorFailure(format!(
            "start point residual {:.3e} exceeds the branch tolerance",
            start.residual
        )));
    }
    let delta_floor = NewtonOptions {
        delta_floor: opts.delta_floor,
        ..Default::default()
    }
    .resolved_delta_floor(grid);

    let mut points = vec![start.clone()];
    let mut fold_markers = Vec::new();
    let mut arclength = 0.0;
    let mut ds = opts.ds0;
    let ds_floor = opts.ds0 * opts.ds_floor_factor;
    let mut failures = 0usize;

    // first tangent from the natural parameterization: u' = A^{-1} g,
    // oriented toward increasing lambda
    let mut tangent: (Vec<f64>, f64) = {
        let jac = assemble_jacobian(spec, grid, &start.state, start.lambda)?;
        let lu = jac.band.factorize()?;
        let g = eval_g(spec, &start.state)?;
        let gflat = StateVector::new(g).flatten();
        let uprime = lu.solve(&gflat);
        (uprime, 1.0)
    };
    let mut metric = Metric::at(grid, &start.state, start.lambda);
    {
        let norm = metric.norm(&tangent.0, tangent.1);
        for v in tangent.0.iter_mut() {
            *v /= norm;
        }
        tangent.1 /= norm;
    }

    let stop_reason = loop {
        if points.len() > opts.max_steps {
            break StopReason::MaxSteps;
        }
        if arclength >= opts.arclength_budget {
            break StopReason::ArclengthBudget;
        }
        let last = points.last().unwrap();
        if last.lambda > opts.lambda_max || (points.len() > 1 && last.lambda < opts.lambda_min) {
            break StopReason::LambdaRange;
        }

        let last_uf = last.state.flatten();
        let pred_u: Vec<f64> = last_uf
            .iter()
            .zip(&tangent.0)
            .map(|(u, t)| u + ds * t)
            .collect();
        let pred_l = last.lambda + ds * tangent.1;
        let pred_state = StateVector::from_flat(spec.m, grid.n_nodes(), &pred_u);

        let attempt = plane_corrector(
            spec,
            grid,
            &pred_state,
            pred_l,
            &tangent.0,
            tangent.1,
            &pred_u,
            pred_l,
            &metric,
            delta_floor,
            opts.corrector_tol,
            opts.corrector_max_iter,
        );
        match attempt {
            Ok((u, lambda, _residual, iters)) => {
                failures = 0;
                let new_uf = u.flatten();
                let du: Vec<f64> = new_uf.iter().zip(&last_uf).map(|(a, b)| a - b).collect();
                let dl = lambda - last.lambda;
                let ds_actual = metric.norm(&du, dl);
                if ds_actual == 0.0 {
                    // corrector returned the same point; treat as failure
                    ds *= 0.5;
                    if ds < ds_floor {
                        break StopReason::StepFloor;
                    }
                    continue;
                }
                arclength += ds_actual;
                let prev_lambda = last.lambda;
                let point =
                    branch_point_from_state(spec, grid, u, lambda, arclength, opts)?;
                // fold marker: lambda direction flip against the previous segment
                if points.len() >= 2 {
                    let before = points[points.len() - 2].lambda;
                    let d_prev = prev_lambda - before;
                    let d_new = lambda - prev_lambda;
                    if d_prev * d_new < 0.0 {
                        fold_markers.push(points.len() - 1);
                    }
                }
                // secant tangent in the refreshed metric
                metric = Metric::at(grid, &point.state, point.lambda);
                let norm = metric.norm(&du, dl);
                tangent = (du.iter().map(|v| v / norm).collect(), dl / norm);
                points.push(point);
                if iters <= 3 {
                    ds = (ds * 2.0).min(opts.ds_max);
                } else if iters >= 8 {
                    ds = (ds * 0.5).max(ds_floor);
                }
            }
            Err(Error::ConeViolation(_)) | Err(Error::ConeExit { .. }) => {
                break StopReason::StepFloor;
            }
            Err(_) => {
                failures += 1;
                ds *= 0.5;
                if ds < ds_floor || failures > opts.max_consecutive_failures {
                    break StopReason::StepFloor;
                }
            }
        }
    };

    Ok(Branch {
        points,
        fold_markers,
        stop_reason,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FoldDetection {
    /// Agreed consecutive index pairs bracketing a fold.
    pub brackets: Vec<(usize, usize)>,
    pub eig_candidates: Vec<usize>,
    pub slope_candidates: Vec<usize>,
    pub discrepancies: Vec<String>,
}

/// Locates folds on a traced branch by requiring agreement of two
/// criteria: a sign change of the first eigenvalue and a sign change of
/// d lambda / ds.
pub fn detect_fold(branch: &Branch) -> Result<FoldDetection> {
    let pts = &branch.points;
    if pts.len() < 3 {
        return Err(Error::NoFoldFound);
    }
    let mut eig = Vec::new();
    for i in 0..pts.len() - 1 {
        if pts[i].lambda1 * pts[i + 1].lambda1 < 0.0 {
            eig.push(i);
        }
    }
    let mut slope = Vec::new();
    for i in 1..pts.len() - 1 {
        let d_prev = pts[i].lambda - pts[i - 1].lambda;
        let d_next = pts[i + 1].lambda - pts[i].lambda;
        if d_prev * d_next < 0.0 {
            slope.push(i);
        }
    }
    if eig.is_empty() && slope.is_empty() {
        return Err(Error::NoFoldFound);
    }
    let mut brackets = Vec::new();
    let mut discrepancies = Vec::new();
    let mut matched_slopes = vec![false; slope.len()];
    for &e in &eig {
        match slope
            .iter()
            .enumerate()
            .filter(|(_, &s)| (s as isize - e as isize).abs() <= 2)
            .min_by_key(|(_, &s)| (s as isize - e as isize).abs())
        {
            Some((si, _)) => {
                matched_slopes[si] = true;
                brackets.push((e, e + 1));
            }
            None => discrepancies.push(format!(
                "eigenvalue sign change at segment {e} has no matching slope reversal"
            )),
        }
    }
    for (si, &s) in slope.iter().enumerate() {
        if !matched_slopes[si] {
            discrepancies.push(format!(
                "slope reversal at point {s} has no matching eigenvalue sign change"
            ));
        }
    }
    if brackets.is_empty() {
        return Err(Error::CriteriaDisagree { eig, slope });
    }
    Ok(FoldDetection {
        brackets,
        eig_candidates: eig,
        slope_candidates: slope,
        discrepancies,
    })
}

#[derive(Debug, Clone)]
pub struct FoldOptions {
    pub tol_f: f64,
    pub tol_fv: f64,
    pub tol_norm: f64,
    pub max_iter: usize,
    /// Augmented systems up to this many unknowns are solved densely;
    /// larger ones use banded block elimination with refinement.
    pub dense_threshold: usize,
    pub delta_floor: Option<f64>,
    pub eig: EigenOptions,
}

impl Default for FoldOptions {
    fn default() -> Self {
        FoldOptions {
            tol_f: 1e-11,
            tol_fv: 1e-9,
            tol_norm: 1e-13,
            max_iter: 40,
            dense_threshold: 1300,
            delta_floor: None,
            eig: EigenOptions::default(),
        }
    }
}

struct MsAssembly {
    f: Vec<f64>,
    av: Vec<f64>,
    norm_res: f64,
    jac: crate::operator::LinearOperator,
    b1: Vec<f64>,
    b2: Vec<f64>,
    /// Nodewise blocks of d(F_u v)/du; entry (i, k) at index i*m+k.
    c_blocks: Vec<GridField>,
}

fn assemble_ms(
    spec: &ProblemSpec,
    grid: &Grid,
    u: &StateVector,
    v: &StateVector,
    lambda: f64,
) -> Result<MsAssembly> {
    let m = spec.m;
    let n = grid.n_nodes();
    let res = assemble_residual(spec, grid, u, lambda)?;
    let jac = assemble_jacobian(spec, grid, u, lambda)?;
    let f = StateVector::new(res.fields).flatten();
    let av = jac.band.matvec(&v.flatten());
    let w = grid.weight();
    let norm_res = w * v.flatten().iter().map(|x| x * x).sum::<f64>() - 1.0;
    let b1 = assemble_f_lambda(spec, grid, u)?;
    let gj = eval_g_jacobian(spec, u)?;
    let mut b2 = vec![0.0; m * n];
    for p in 0..n {
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..m {
                acc += gj[i * m + j].0[p] * v.fields[j].0[p];
            }
            b2[p * m + i] = -acc;
        }
    }
    let hess = eval_g_hessian_diag(spec, u)?;
    let mut c_blocks = vec![GridField::zeros(n); m * m];
    for p in 0..n {
        for i in 0..m {
            for k in 0..m {
                let mut c = -lambda * hess[i * m + k].0[p] * v.fields[k].0[p];
                if i == k {
                    let ui = u.fields[i].0[p];
                    c += -spec.q[i]
                        * (spec.q[i] - 1.0)
                        * spec.a[i].0[p]
                        * ui.powf(spec.q[i] - 2.0)
                        * v.fields[i].0[p];
                }
                c_blocks[i * m + k].0[p] = c;
            }
        }
    }
    Ok(MsAssembly {
        f,
        av,
        norm_res,
        jac,
        b1,
        b2,
        c_blocks,
    })
}

fn apply_c(ms: &MsAssembly, m: usize, n: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..n {
        for i in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += ms.c_blocks[i * m + k].0[p] * x[p * m + k];
            }
            out[p * m + i] = acc;
        }
    }
    out
}

/// One Newton step of the augmented system, dense route.
fn ms_step_dense(
    ms: &MsAssembly,
    m: usize,
    n: usize,
    w: f64,
    v: &StateVector,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let nn = m * n;
    let dim = 2 * nn + 1;
    let mut big = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let dense_a = ms.jac.band.to_dense();
    for i in 0..nn {
        for j in 0..nn {
            let a = dense_a[(i, j)];
            if a != 0.0 {
                big[(i, j)] = a;
                big[(nn + i, nn + j)] = a;
            }
        }
    }
    for p in 0..n {
        for i in 0..m {
            for k in 0..m {
                big[(nn + p * m + i, p * m + k)] = ms.c_blocks[i * m + k].0[p];
            }
        }
    }
    let vflat = v.flatten();
    for i in 0..nn {
        big[(i, 2 * nn)] = ms.b1[i];
        big[(nn + i, 2 * nn)] = ms.b2[i];
        big[(2 * nn, nn + i)] = 2.0 * w * vflat[i];
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
    for i in 0..nn {
        rhs[i] = -ms.f[i];
        rhs[nn + i] = -ms.av[i];
    }
    rhs[2 * nn] = -ms.norm_res;
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::AugmentedSingularity("dense LU of the augmented system failed".into()))?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::AugmentedSingularity("non-finite augmented solve".into()));
    }
    let du: Vec<f64> = sol.iter().take(nn).cloned().collect();
    let dv: Vec<f64> = sol.iter().skip(nn).take(nn).cloned().collect();
    Ok((du, dv, sol[2 * nn]))
}

/// One Newton step of the augmented system, banded block elimination with
/// iterative refinement against the exact augmented residual.
fn ms_step_banded(
    ms: &MsAssembly,
    m: usize,
    n: usize,
    w: f64,
    v: &StateVector,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let nn = m * n;
    let lu = ms.jac.band.factorize()?;
    let vflat = v.flatten();
    let d: Vec<f64> = vflat.iter().map(|x| 2.0 * w * x).collect();

    let solve_once = |r1: &[f64], r2: &[f64], r3: f64| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let p1 = lu.solve(r1);
        let q1 = lu.solve(&ms.b1);
        let cp1 = apply_c(ms, m, n, &p1);
        let cq1 = apply_c(ms, m, n, &q1);
        let rhs_p2: Vec<f64> = (0..nn).map(|i| r2[i] - cp1[i]).collect();
        let rhs_q2: Vec<f64> = (0..nn).map(|i| cq1[i] - ms.b2[i]).collect();
        let p2 = lu.solve(&rhs_p2);
        let q2 = lu.solve(&rhs_q2);
        let dp2: f64 = d.iter().zip(&p2).map(|(a, b)| a * b).sum();
        let dq2: f64 = d.iter().zip(&q2).map(|(a, b)| a * b).sum();
        if dq2 == 0.0 || !dq2.is_finite() {
            return Err(Error::AugmentedSingularity(
                "normalization row lost its pivot in block elimination".into(),
            ));
        }
        let dl = (r3 - dp2) / dq2;
        let du: Vec<f64> = (0..nn).map(|i| p1[i] - dl * q1[i]).collect();
        let dv: Vec<f64> = (0..nn).map(|i| p2[i] + dl * q2[i]).collect();
        Ok((du, dv, dl))
    };

    let r1: Vec<f64> = ms.f.iter().map(|x| -x).collect();
    let r2: Vec<f64> = ms.av.iter().map(|x| -x).collect();
    let r3 = -ms.norm_res;
    let (mut du, mut dv, mut dl) = solve_once(&r1, &r2, r3)?;
    for _ in 0..3 {
        let adu = ms.jac.band.matvec(&du);
        let adv = ms.jac.band.matvec(&dv);
        let cdu = apply_c(ms, m, n, &du);
        let res1: Vec<f64> = (0..nn).map(|i| r1[i] - adu[i] - ms.b1[i] * dl).collect();
        let res2: Vec<f64> = (0..nn)
            .map(|i| r2[i] - cdu[i] - adv[i] - ms.b2[i] * dl)
            .collect();
        let ddv: f64 = d.iter().zip(&dv).map(|(a, b)| a * b).sum();
        let res3 = r3 - ddv;
        let (cu, cv, cl) = solve_once(&res1, &res2, res3)?;
        for i in 0..nn {
            du[i] += cu[i];
            dv[i] += cv[i];
        }
        dl += cl;
    }
    if du.iter().chain(dv.iter()).any(|x| !x.is_finite()) || !dl.is_finite() {
        return Err(Error::AugmentedSingularity("non-finite block elimination".into()));
    }
    Ok((du, dv, dl))
}

/// Newton on the augmented system {F = 0, F_u v = 0, int |v|^2 = 1} in the
/// unknowns (u, v, lambda), seeded from a detected bracket.
pub fn refine_fold_moore_spence(
    spec: &ProblemSpec,
    grid: &Grid,
    branch: &Branch,
    bracket: (usize, usize),
    opts: &FoldOptions,
) -> Result<FoldPoint> {
    let (lo, hi) = bracket;
    if hi >= branch.points.len() || hi != lo + 1 {
        return Err(Error::Shape(format!(
            "bracket ({lo},{hi}) does not index consecutive branch points"
        )));
    }
    let seed_idx = if branch.points[lo].lambda1.abs() <= branch.points[hi].lambda1.abs() {
        lo
    } else {
        hi
    };
    let seed = &branch.points[seed_idx];
    let m = spec.m;
    let n = grid.n_nodes();
    let w = grid.weight();
    let delta_floor = NewtonOptions {
        delta_floor: opts.delta_floor,
        ..Default::default()
    }
    .resolved_delta_floor(grid);

    let mut u = seed.state.clone();
    let mut lambda = seed.lambda;
    let jac = assemble_jacobian(spec, grid, &u, lambda)?;
    let mut v = smallest_eigenpair(&jac, grid, &opts.eig)?.phi;

    let norm_of = |ms: &MsAssembly| -> (f64, f64, f64) {
        let nf = (w * ms.f.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let nav = (w * ms.av.iter().map(|x| x * x).sum::<f64>()).sqrt();
        (nf, nav, ms.norm_res.abs())
    };

    let mut ms = assemble_ms(spec, grid, &u, &v, lambda)?;
    let (mut nf, mut nav, mut nr) = norm_of(&ms);
    let mut merit = (nf * nf + nav * nav + nr * nr).sqrt();
    for it in 1..=opts.max_iter {
        if nf <= opts.tol_f && nav <= opts.tol_fv && nr <= opts.tol_norm {
            return finalize_fold(spec, grid, u, v, lambda, nf, nav, it - 1, opts);
        }
        let (du, dv, dl) = if 2 * m * n + 1 <= opts.dense_threshold {
            ms_step_dense(&ms, m, n, w, &v)?
        } else {
            ms_step_banded(&ms, m, n, w, &v)?
        };
        let step_u = StateVector::from_flat(m, n, &du);
        let step_v = StateVector::from_flat(m, n, &dv);

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand_u = u.add_scaled(alpha, &step_u);
            if cone_membership(grid, &cand_u, delta_floor) {
                let cand_v = v.add_scaled(alpha, &step_v);
                let cand_l = lambda + alpha * dl;
                let cand_ms = assemble_ms(spec, grid, &cand_u, &cand_v, cand_l)?;
                let (cf, cav, cr) = norm_of(&cand_ms);
                let cand_merit = (cf * cf + cav * cav + cr * cr).sqrt();
                if cand_merit < (1.0 - 1e-4 * alpha) * merit {
                    u = cand_u;
                    v = cand_v;
                    lambda = cand_l;
                    ms = cand_ms;
                    nf = cf;
                    nav = cav;
                    nr = cr;
                    merit = cand_merit;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::ConeExit { iteration: it });
        }
    }
    if nf <= opts.tol_f && nav <= opts.tol_fv && nr <= opts.tol_norm {
        return finalize_fold(spec, grid, u, v, lambda, nf, nav, opts.max_iter, opts);
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        residual: merit,
    })
}

#[allow(clippy::too_many_arguments)]
fn finalize_fold(
    spec: &ProblemSpec,
    grid: &Grid,
    u: StateVector,
    mut v: StateVector,
    lambda: f64,
    residual_f: f64,
    residual_fv: f64,
    iterations: usize,
    opts: &FoldOptions,
) -> Result<FoldPoint> {
    // exact mass normalization and deterministic sign
    let w = grid.weight();
    let flat = v.flatten();
    let norm = (w * flat.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let mut peak = 0usize;
    for (i, val) in flat.iter().enumerate() {
        if val.abs() > flat[peak].abs() {
            peak = i;
        }
    }
    let sign = flat[peak].signum();
    v = v.scale(sign / norm);

    let jac = assemble_jacobian(spec, grid, &u, lambda)?;
    let lambda1_sym = smallest_eigenpair(&jac, grid, &opts.eig)?.lambda1;
    let sv = smallest_singular_value(&jac, 500)?;
    let av = jac.apply(&v);
    Ok(FoldPoint {
        lambda_star: lambda,
        state: u,
        residual_f,
        residual_fv: residual_fv.max(av.l2_norm(grid)),
        null_vector: v,
        lambda1_sym,
        smallest_singular_value: sv,
        normalization_id: FOLD_NORMALIZATION_ID,
        iterations,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FoldBisect {
    pub lambda_star: f64,
    pub lambda1_at_stop: f64,
    pub iterations: usize,
}

/// Independent fold oracle: bisection on the sign of the first eigenvalue
/// along the branch, each midpoint corrected back onto the solution curve
/// by the plane corrector. Shares no machinery with the augmented-system
/// refinement beyond residual assembly and linear solves.
pub fn bisect_fold_on_lambda1(
    spec: &ProblemSpec,
    grid: &Grid,
    branch: &Branch,
    bracket: (usize, usize),
    opts: &ContinuationOptions,
) -> Result<FoldBisect> {
    let (lo_i, hi_i) = bracket;
    let p_lo = &branch.points[lo_i];
    let p_hi = &branch.points[hi_i];
    let delta_floor = NewtonOptions {
        delta_floor: opts.delta_floor,
        ..Default::default()
    }
    .resolved_delta_floor(grid);
    let stab_tol = opts
        .stability_tol
        .unwrap_or_else(|| default_stability_tol(grid));
    let target = 1e-3 * stab_tol;

    let mut lo = (p_lo.state.flatten(), p_lo.lambda, p_lo.lambda1);
    let mut hi = (p_hi.state.flatten(), p_hi.lambda, p_hi.lambda1);
    if lo.2 * hi.2 >= 0.0 {
        return Err(Error::NoFoldFound);
    }
    let metric = Metric::at(grid, &p_lo.state, p_lo.lambda);
    let mut best = if lo.2.abs() < hi.2.abs() {
        (lo.1, lo.2)
    } else {
        (hi.1, hi.2)
    };
    let mut iterations = 0;
    for _ in 0..160 {
        iterations += 1;
        let du: Vec<f64> = hi.0.iter().zip(&lo.0).map(|(a, b)| a - b).collect();
        let dl = hi.1 - lo.1;
        let width = metric.norm(&du, dl);
        if best.1.abs() <= target || width <= 1e-13 {
            break;
        }
        let norm = width.max(1e-300);
        let dir_u: Vec<f64> = du.iter().map(|x| x / norm).collect();
        let dir_l = dl / norm;
        let mid_u: Vec<f64> = lo.0.iter().zip(&hi.0).map(|(a, b)| 0.5 * (a + b)).collect();
        let mid_l = 0.5 * (lo.1 + hi.1);
        let mid_state = StateVector::from_flat(spec.m, grid.n_nodes(), &mid_u);
        let corrected = plane_corrector(
            spec,
            grid,
            &mid_state,
            mid_l,
            &dir_u,
            dir_l,
            &mid_u,
            mid_l,
            &metric,
            delta_floor,
            opts.corrector_tol,
            opts.corrector_max_iter,
        );
        let (cu, cl) = match corrected {
            Ok((u, l, _, _)) => (u, l),
            Err(_) => {
                // retreat toward the low endpoint and try again
                hi = (
                    lo.0.iter().zip(&hi.0).map(|(a, b)| 0.5 * (a + b)).collect(),
                    0.5 * (lo.1 + hi.1),
                    hi.2,
                );
                continue;
            }
        };
        let jac = assemble_jacobian(spec, grid, &cu, cl)?;
        let l1 = smallest_eigenpair(&jac, grid, &opts.eig)?.lambda1;
        if l1.abs() < best.1.abs() {
            best = (cl, l1);
        }
        if l1 * lo.2 > 0.0 {
            lo = (cu.flatten(), cl, l1);
        } else {
            hi = (cu.flatten(), cl, l1);
        }
    }
    Ok(FoldBisect {
        lambda_star: best.0,
        lambda1_at_stop: best.1,
        iterations,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MinimaxReport {
    pub lambda_s_estimate: f64,
    pub lambda_as_estimate: f64,
    pub n_stable: usize,
    pub n_asymptotically_stable: usize,
    pub probes_all_constant: bool,
    pub worst_probe_spread: f64,
    /// Worst |probe value - branch lambda| across certified points.
    pub worst_probe_mismatch: f64,
    /// lambda gap between the best stable point and its outward neighbor,
    /// a proxy for the local continuation step at the branch end.
    pub local_lambda_step: f64,
}

#[derive(Debug, Clone)]
pub struct MinimaxOptions {
    pub trials: usize,
    pub seed: u64,
    /// Newton polish tolerance applied to each stable point before probing.
    pub polish_tol: f64,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        MinimaxOptions {
            trials: 100,
            seed: 20240501,
            polish_tol: 1e-13,
        }
    }
}

/// Runs the inner-infimum probe on every stable branch point; all must
/// certify Constant(lambda). The estimate of the extremal parameter is the
/// largest certified lambda over stable (resp. asymptotically stable)
/// points.
pub fn lambda_star_minimax(
    spec: &ProblemSpec,
    grid: &Grid,
    branch: &Branch,
    opts: &MinimaxOptions,
) -> Result<MinimaxReport> {
    let mut lambda_s = f64::NEG_INFINITY;
    let mut lambda_as = f64::NEG_INFINITY;
    let mut n_stable = 0;
    let mut n_as = 0;
    let mut all_constant = true;
    let mut worst_spread = 0.0f64;
    let mut worst_mismatch = 0.0f64;
    let mut best_idx = None;
    for (idx, point) in branch.points.iter().enumerate() {
        if !point.stability.stability.is_stable() {
            continue;
        }
        n_stable += 1;
        // sharpen the state at fixed lambda so the probe sees the smallest
        // achievable residual
        let polished = newton_solve(
            spec,
            grid,
            &point.state,
            point.lambda,
            &NewtonOptions {
                tol: opts.polish_tol,
                max_iter: 8,
                ..Default::default()
            },
        )
        .map(|s| s.state)
        .unwrap_or_else(|_| point.state.clone());
        let probe = inner_inf_probe(
            spec,
            grid,
            &polished,
            opts.trials,
            &ProbeOptions {
                seed: opts.seed.wrapping_add(idx as u64),
                ..Default::default()
            },
        )?;
        match probe {
            InfProbeResult::Constant { value, spread, .. } => {
                worst_spread = worst_spread.max(spread);
                worst_mismatch = worst_mismatch.max((value - point.lambda).abs());
                if value > lambda_s {
                    lambda_s = value;
                    best_idx = Some(idx);
                }
                if point.stability.stability == Stability::AsymptoticallyStable {
                    n_as += 1;
                    lambda_as = lambda_as.max(value);
                }
            }
            InfProbeResult::UnboundedBelow { .. } => {
                all_constant = false;
            }
        }
    }
    if n_stable == 0 {
        return Err(Error::InsufficientPoints {
            found: 0,
            needed: 1,
        });
    }
    let local_lambda_step = best_idx
        .map(|i| {
            let next = (i + 1).min(branch.points.len() - 1);
            let prev = i.saturating_sub(1);
            (branch.points[next].lambda - branch.points[i].lambda)
                .abs()
                .max((branch.points[i].lambda - branch.points[prev].lambda).abs())
        })
        .unwrap_or(0.0);
    Ok(MinimaxReport {
        lambda_s_estimate: lambda_s,
        lambda_as_estimate: lambda_as,
        n_stable,
        n_asymptotically_stable: n_as,
        probes_all_constant: all_constant,
        worst_probe_spread: worst_spread,
        worst_probe_mismatch: worst_mismatch,
        local_lambda_step,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolutionSummary {
    pub seed_index: usize,
    pub residual: f64,
    pub lambda1: f64,
    pub stable: bool,
    pub h1_norm: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct NonexistenceReport {
    pub lambda: f64,
    pub seeds_attempted: usize,
    pub converged: Vec<SolutionSummary>,
    pub distinct_solutions: usize,
    pub stable_found: bool,
}

/// Launches Newton from diverse cone seeds at fixed lambda and classifies
/// every solution found. Above the fold no stable solution should appear;
/// a stable hit is a falsification flag for the caller.
pub fn nonexistence_probe(
    spec: &ProblemSpec,
    grid: &Grid,
    lambda: f64,
    seeds: usize,
    w_bar: &StateVector,
    branch: Option<&Branch>,
    seed_rng: u64,
) -> Result<NonexistenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_rng);
    let stab_tol = default_stability_tol(grid);
    let mut converged: Vec<SolutionSummary> = Vec::new();
    let mut kept_states: Vec<StateVector> = Vec::new();
    let d = grid.boundary_distance_field();
    for k in 0..seeds {
        let seed_state = match k % 3 {
            0 => w_bar.scale(0.5 * 1.35f64.powi((k / 3) as i32)),
            1 => {
                let c = 0.7 * 1.3f64.powi((k / 3) as i32);
                let fields = w_bar
                    .fields
                    .iter()
                    .map(|f| {
                        GridField(
                            f.0.iter()
                                .map(|&v| c * v * rng.random_range(0.4..1.6))
                                .collect(),
                        )
                    })
                    .collect();
                StateVector::new(fields)
            }
            _ => match branch.filter(|b| b.points.len() >= 2) {
                Some(b) => {
                    let last = &b.points[b.points.len() - 1];
                    let prev = &b.points[b.points.len() - 2];
                    let t = 0.5 * (k / 3 + 1) as f64;
                    let extrapolated = last
                        .state
                        .add_scaled(t, &last.state.add_scaled(-1.0, &prev.state));
                    // keep the extrapolation inside the cone
                    let floor = 1e-10 * w_bar.max_abs();
                    StateVector::new(
                        extrapolated
                            .fields
                            .iter()
                            .map(|f| {
                                GridField(
                                    f.0.iter()
                                        .zip(&d.0)
                                        .map(|(&v, &dd)| v.max(floor * dd))
                                        .collect(),
                                )
                            })
                            .collect(),
                    )
                }
                None => w_bar.scale(1.0 + 0.45 * (k / 3) as f64),
            },
        };
        let solve = newton_solve(
            spec,
            grid,
            &seed_state,
            lambda,
            &NewtonOptions {
                tol: 1e-10,
                max_iter: 80,
                ..Default::default()
            },
        );
        if let Ok(sol) = solve {
            let duplicate = kept_states.iter().any(|s| {
                s.add_scaled(-1.0, &sol.state).l2_norm(grid)
                    <= 1e-6 * (1.0 + sol.state.l2_norm(grid))
            });
            let jac = assemble_jacobian(spec, grid, &sol.state, lambda)?;
            let l1 = smallest_eigenpair(&jac, grid, &EigenOptions::default())?.lambda1;
            if !duplicate {
                kept_states.push(sol.state.clone());
            }
            converged.push(SolutionSummary {
                seed_index: k,
                residual: sol.residual_norm,
                lambda1: l1,
                stable: l1 >= -stab_tol,
                h1_norm: sol.state.h1_norm(grid)?,
            });
        }
    }
    let stable_found = converged.iter().any(|c| c.stable);
    Ok(NonexistenceReport {
        lambda,
        seeds_attempted: seeds,
        distinct_solutions: kept_states.len(),
        converged,
        stable_found,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StableSequenceRow {
    pub lambda: f64,
    pub distance_h1: f64,
    pub lambda1: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StableSequenceReport {
    pub rows: Vec<StableSequenceRow>,
    pub distances_decreasing: bool,
    pub lambda1_decreasing: bool,
}

/// Selects the asymptotically stable pre-fold tail and verifies it
/// converges to the refined fold state with the first eigenvalue
/// descending to zero.
pub fn stable_sequence_extract(
    spec: &ProblemSpec,
    grid: &Grid,
    branch: &Branch,
    fold: &FoldPoint,
    tail: usize,
) -> Result<StableSequenceReport> {
    let _ = spec;
    let cut = branch
        .fold_markers
        .first()
        .cloned()
        .unwrap_or(branch.points.len());
    let stable: Vec<&BranchPoint> = branch.points[..cut]
        .iter()
        .filter(|p| p.stability.stability == Stability::AsymptoticallyStable)
        .collect();
    if stable.len() < 5 {
        return Err(Error::InsufficientPoints {
            found: stable.len(),
            needed: 5,
        });
    }
    let take = tail.min(stable.len());
    let mut rows = Vec::with_capacity(take);
    for p in &stable[stable.len() - take..] {
        let diff = p.state.add_scaled(-1.0, &fold.state);
        rows.push(StableSequenceRow {
            lambda: p.lambda,
            distance_h1: diff.h1_norm(grid)?,
            lambda1: p.lambda1,
        });
    }
    let distances_decreasing = rows.windows(2).all(|w| w[1].distance_h1 < w[0].distance_h1);
    let lambda1_decreasing = rows.windows(2).all(|w| w[1].lambda1 < w[0].lambda1);
    Ok(StableSequenceReport {
        rows,
        distances_decreasing,
        lambda1_decreasing,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckRow>,
    pub pass: bool,
}

/// Runtime invariant suite over a stored branch: recomputed residuals and
/// norms, arclength monotonicity, stability-tag consistency, the tested-by-u
/// integral identity, the stability inequality, the coercivity consequence,
/// and the baseline comparison barrier.
pub fn verify_branch(
    spec: &ProblemSpec,
    grid: &Grid,
    branch: &Branch,
    w_bar: &StateVector,
    branch_tol: f64,
    step_cap: Option<f64>,
) -> Result<VerifyReport> {
    let mut checks: Vec<CheckRow> = Vec::new();
    let stab_tol = default_stability_tol(grid);
    let max_q = spec.q.iter().cloned().fold(0.0f64, f64::max);

    let mut worst_res = 0.0f64;
    let mut worst_norm_err = 0.0f64;
    let mut arclength_ok = true;
    let mut stability_ok = true;
    let mut worst_id12 = 0.0f64;
    let mut worst_ineq14 = f64::INFINITY;
    let mut worst_ineq16 = f64::INFINITY;
    let mut worst_barrier = f64::INFINITY;
    let mut worst_step = 0.0f64;
    let mut prev_arc = f64::NEG_INFINITY;

    for p in &branch.points {
        let res = assemble_residual(spec, grid, &p.state, p.lambda)?;
        worst_res = worst_res.max(res.norm);
        worst_norm_err = worst_norm_err
            .max((p.h1_norm - p.state.h1_norm(grid)?).abs())
            .max((p.lgamma0_norm - p.state.lp_norm(grid, spec.gamma0)).abs())
            .max((p.lgamma_norm - p.state.lp_norm(grid, spec.gamma)).abs());
        arclength_ok &= p.arclength > prev_arc || (prev_arc == f64::NEG_INFINITY);
        if prev_arc > f64::NEG_INFINITY {
            worst_step = worst_step.max(p.arclength - prev_arc);
        }
        prev_arc = p.arclength;
        let tag = StabilityTag::classify(p.lambda1, p.stability.tol);
        stability_ok &= tag.stability == p.stability.stability;

        let h1sq = p.h1_norm * p.h1_norm;
        let g = eval_g(spec, &p.state)?;
        let gj = eval_g_jacobian(spec, &p.state)?;
        let mut sum_a_uq1 = 0.0;
        let mut sum_q_a_uq1 = 0.0;
        let mut sum_gu = 0.0;
        let mut sum_gdiag_u2 = 0.0;
        let mut g2_left = 0.0;
        let w = grid.weight();
        for i in 0..spec.m {
            for node in 0..grid.n_nodes() {
                let u = p.state.fields[i].0[node];
                let term = spec.a[i].0[node] * u.abs().powf(spec.q[i] + 1.0);
                sum_a_uq1 += w * term;
                sum_q_a_uq1 += w * spec.q[i] * term;
                sum_gu += w * g[i].0[node] * u;
                let diag = gj[i * spec.m + i].0[node];
                sum_gdiag_u2 += w * diag * u * u;
                g2_left += w * (diag * u * u - g[i].0[node] * u);
            }
        }
        // identity (tested by u): ||u||^2 = sum int a u^{q+1} + lambda sum int g u
        let id12 = (h1sq - sum_a_uq1 - p.lambda * sum_gu).abs();
        let id12_rel = id12 / (10.0 * (res.norm + branch_tol) * (1.0 + p.h1_norm));
        worst_id12 = worst_id12.max(id12_rel);

        if p.stability.stability.is_stable() {
            let slack = 10.0 * (res.norm + branch_tol) * (1.0 + p.h1_norm)
                + stab_tol * p.state.l2_norm(grid).powi(2);
            // stability inequality tested by u
            let lhs14 = h1sq - sum_q_a_uq1 - p.lambda * sum_gdiag_u2;
            worst_ineq14 = worst_ineq14.min(lhs14 + slack);
            if p.lambda >= 0.0 {
                // coercivity consequence with the family's exact left side
                let lhs16 = (1.0 - max_q) * sum_a_uq1 - p.lambda * g2_left;
                worst_ineq16 = worst_ineq16.min(lhs16 + slack);
            }
        }
        if p.lambda >= 0.0 {
            let cmp = comparison_check(grid, &p.state, w_bar, 1e-8)?;
            worst_barrier = worst_barrier.min(cmp.worst_margin);
        }
    }

    checks.push(CheckRow {
        name: "residuals within branch tolerance".into(),
        pass: worst_res <= 10.0 * branch_tol,
        worst: worst_res,
        tolerance: 10.0 * branch_tol,
    });
    checks.push(CheckRow {
        name: "norms recomputable".into(),
        pass: worst_norm_err <= 1e-12,
        worst: worst_norm_err,
        tolerance: 1e-12,
    });
    checks.push(CheckRow {
        name: "arclength strictly increasing".into(),
        pass: arclength_ok,
        worst: if arclength_ok { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });
    checks.push(CheckRow {
        name: "stability tags consistent with lambda1".into(),
        pass: stability_ok,
        worst: if stability_ok { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });
    checks.push(CheckRow {
        name: "integral identity tested by u".into(),
        pass: worst_id12 <= 1.0,
        worst: worst_id12,
        tolerance: 1.0,
    });
    checks.push(CheckRow {
        name: "stability inequality tested by u (stable points)".into(),
        pass: worst_ineq14 >= 0.0,
        worst: worst_ineq14,
        tolerance: 0.0,
    });
    checks.push(CheckRow {
        name: "coercivity consequence (stable points)".into(),
        pass: worst_ineq16 >= 0.0,
        worst: worst_ineq16,
        tolerance: 0.0,
    });
    checks.push(CheckRow {
        name: "baseline barrier u >= w".into(),
        pass: worst_barrier >= 0.0,
        worst: worst_barrier,
        tolerance: 1e-8,
    });
    if let Some(cap) = step_cap {
        // corrector motion on top of the predictor stays tiny, so 1.5x the
        // configured step cap bounds the accepted increments
        let limit = 1.5 * cap;
        checks.push(CheckRow {
            name: "consecutive steps below the step cap".into(),
            pass: worst_step <= limit,
            worst: worst_step,
            tolerance: limit,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { checks, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    fn abc_setup(n: usize) -> (Grid, ProblemSpec) {
        let grid = build_grid(1, &[1.0], &[n]).unwrap();
        let spec = ProblemSpec::scalar_power_constant(&grid, 0.5, 3.0, 1.0, 1.0).unwrap();
        (grid, spec)
    }

    fn trace_abc(n: usize) -> (Grid, ProblemSpec, Branch) {
        let (grid, spec) = abc_setup(n);
        let opts = ContinuationOptions {
            arclength_budget: 14.0,
            ..Default::default()
        };
        let start =
            baseline_branch_point(&spec, &grid, &FixedPointOptions::default(), &opts).unwrap();
        let branch = trace_branch(&spec, &grid, &start, &opts).unwrap();
        (grid, spec, branch)
    }

    #[test]
    fn zero_budget_returns_start_only() {
        let (grid, spec) = abc_setup(15);
        let opts = ContinuationOptions {
            arclength_budget: 0.0,
            ..Default::default()
        };
        let start =
            baseline_branch_point(&spec, &grid, &FixedPointOptions::default(), &opts).unwrap();
        let branch = trace_branch(&spec, &grid, &start, &opts).unwrap();
        assert_eq!(branch.points.len(), 1);
        assert_eq!(branch.stop_reason, StopReason::ArclengthBudget);
    }

    #[test]
    fn scalar_branch_passes_single_fold() {
        let (_grid, _spec, branch) = trace_abc(31);
        assert!(branch.points.len() > 10);
        // rises from lambda = 0, turns exactly once, unstable upper branch
        // with growing norm
        let det = detect_fold(&branch).unwrap();
        assert_eq!(det.brackets.len(), 1, "brackets: {:?}", det.brackets);
        assert!(det.discrepancies.is_empty(), "{:?}", det.discrepancies);
        let (lo, _) = det.brackets[0];
        assert!(branch.points[lo].lambda1 > 0.0);
        let last = branch.points.last().unwrap();
        assert!(last.lambda1 < 0.0, "upper branch should be unstable");
        assert!(last.h1_norm > branch.points[lo].h1_norm);
        // barrier along the branch
        for p in &branch.points {
            assert!(p.min_u_over_d > 0.0);
        }
    }

    #[test]
    fn monotone_branch_has_no_fold() {
        let (grid, spec) = abc_setup(15);
        let opts = ContinuationOptions {
            arclength_budget: 0.3,
            ds0: 0.05,
            ds_max: 0.1,
            ..Default::default()
        };
        let start =
            baseline_branch_point(&spec, &grid, &FixedPointOptions::default(), &opts).unwrap();
        let branch = trace_branch(&spec, &grid, &start, &opts).unwrap();
        assert!(branch.points.len() >= 3);
        assert!(matches!(detect_fold(&branch), Err(Error::NoFoldFound)));
    }

    #[test]
    fn synthetic_s_shaped_branch_yields_two_brackets() {
        // constructed data: lambda rises, falls, rises again, with lambda1
        // crossing zero at both turns
        let (grid, spec) = abc_setup(5);
        let opts = ContinuationOptions::default();
        let start =
            baseline_branch_point(&spec, &grid, &FixedPointOptions::default(), &opts).unwrap();
        let lambdas = [0.0, 1.0, 2.0, 3.0, 2.5, 2.0, 1.5, 2.2, 3.1, 4.0];
        let lambda1s = [0.9, 0.7, 0.4, 0.1, -0.2, -0.4, -0.1, 0.2, 0.5, 0.8];
        let points: Vec<BranchPoint> = lambdas
            .iter()
            .zip(&lambda1s)
            .enumerate()
            .map(|(k, (&l, &l1))| BranchPoint {
                lambda: l,
                state: start.state.clone(),
                lambda1: l1,
                stability: StabilityTag::classify(l1, 1e-7),
                arclength: k as f64,
                h1_norm: start.h1_norm,
                lgamma0_norm: start.lgamma0_norm,
                lgamma_norm: start.lgamma_norm,
                min_u_over_d: start.min_u_over_d,
                residual: 0.0,
            })
            .collect();
        let branch = Branch {
            points,
            fold_markers: vec![],
            stop_reason: StopReason::MaxSteps,
        };
        let det = detect_fold(&branch).unwrap();
        assert_eq!(det.brackets.len(), 2, "{:?}", det);

        // an eigenvalue crossing with monotone lambda has no slope partner:
        // the cross-check must flag the disagreement instead of refining
        let mut lone = branch.clone();
        for (k, p) in lone.points.iter_mut().enumerate() {
            p.lambda = k as f64;
            p.lambda1 = 3.5 - k as f64;
        }
        match detect_fold(&lone) {
            Err(Error::CriteriaDisagree { eig, slope }) => {
                assert_eq!(eig.len(), 1);
                assert!(slope.is_empty());
            }
            other => panic!("expected criteria-disagree, got {other:?}"),
        }
    }

    #[test]
    fn moore_spence_refines_coarse_fold() {
        let (grid, spec, branch) = trace_abc(31);
        let det = detect_fold(&branch).unwrap();
        let fold =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        assert!(fold.residual_f <= 1e-10, "residual_f = {:.3e}", fold.residual_f);
        assert!(fold.residual_fv <= 1e-8, "residual_fv = {:.3e}", fold.residual_fv);
        // normalization holds exactly after the final rescale
        let w = grid.weight();
        let mass: f64 =
            w * fold.null_vector.flatten().iter().map(|x| x * x).sum::<f64>();
        assert!((mass - 1.0).abs() <= 1e-12);
        // cooperative scalar problem: single-signed null vector
        assert!(fold.null_vector.fields[0].min() > 0.0);
        // the fold sits inside the bracket's lambda range
        let (lo, hi) = det.brackets[0];
        let lmax = branch.points[lo].lambda.max(branch.points[hi].lambda);
        assert!(fold.lambda_star >= lmax - 1e-6 && fold.lambda_star <= lmax * 1.2);
        // marginal eigenvalue at the fold
        assert!(
            fold.lambda1_sym.abs() <= 1e-6 * (1.0 + grid.stencil_lambda1()),
            "lambda1_sym = {:.3e}",
            fold.lambda1_sym
        );
    }

    #[test]
    fn banded_and_dense_ms_paths_agree() {
        let (grid, spec, branch) = trace_abc(31);
        let det = detect_fold(&branch).unwrap();
        let dense =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        let banded = refine_fold_moore_spence(
            &spec,
            &grid,
            &branch,
            det.brackets[0],
            &FoldOptions {
                dense_threshold: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (dense.lambda_star - banded.lambda_star).abs()
                <= 1e-9 * (1.0 + dense.lambda_star.abs()),
            "dense {} vs banded {}",
            dense.lambda_star,
            banded.lambda_star
        );
    }

    #[test]
    fn bisection_oracle_matches_moore_spence() {
        let (grid, spec, branch) = trace_abc(31);
        let det = detect_fold(&branch).unwrap();
        let fold =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        let bis = bisect_fold_on_lambda1(
            &spec,
            &grid,
            &branch,
            det.brackets[0],
            &ContinuationOptions::default(),
        )
        .unwrap();
        assert!(
            (fold.lambda_star - bis.lambda_star).abs() <= 1e-8 * (1.0 + fold.lambda_star.abs()),
            "moore-spence {} vs bisection {}",
            fold.lambda_star,
            bis.lambda_star
        );
    }

    #[test]
    fn minimax_estimate_tracks_fold() {
        let (grid, spec, branch) = trace_abc(31);
        let det = detect_fold(&branch).unwrap();
        let fold =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        let report = lambda_star_minimax(
            &spec,
            &grid,
            &branch,
            &MinimaxOptions {
                trials: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.probes_all_constant);
        assert!(report.lambda_as_estimate <= report.lambda_s_estimate + 1e-12);
        assert!(report.lambda_s_estimate <= fold.lambda_star + 1e-9 * (1.0 + fold.lambda_star));
        let gap = fold.lambda_star - report.lambda_s_estimate;
        assert!(
            gap <= 2.0 * report.local_lambda_step.max(1e-9),
            "gap {gap:.3e} vs local step {:.3e}",
            report.local_lambda_step
        );
    }

    #[test]
    fn stable_sequence_tail_converges() {
        let (grid, spec, branch) = trace_abc(31);
        let det = detect_fold(&branch).unwrap();
        let fold =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        let rep = stable_sequence_extract(&spec, &grid, &branch, &fold, 10).unwrap();
        assert!(rep.rows.len() >= 5);
        assert!(rep.distances_decreasing, "{:?}", rep.rows);
        assert!(rep.lambda1_decreasing, "{:?}", rep.rows);
        let last = rep.rows.last().unwrap();
        assert!(last.lambda1 >= -1e-6 && last.lambda1 < rep.rows[0].lambda1);
    }

    #[test]
    fn truncated_branch_insufficient_points() {
        let (grid, spec) = abc_setup(15);
        let opts = ContinuationOptions {
            arclength_budget: 0.08,
            ds0: 0.04,
            ds_max: 0.04,
            ..Default::default()
        };
        let start =
            baseline_branch_point(&spec, &grid, &FixedPointOptions::default(), &opts).unwrap();
        let branch = trace_branch(&spec, &grid, &start, &opts).unwrap();
        let fake_fold = FoldPoint {
            lambda_star: branch.points.last().unwrap().lambda,
            state: branch.points.last().unwrap().state.clone(),
            null_vector: StateVector::zeros(1, grid.n_nodes()),
            residual_f: 0.0,
            residual_fv: 0.0,
            lambda1_sym: 0.0,
            smallest_singular_value: 0.0,
            normalization_id: FOLD_NORMALIZATION_ID,
            iterations: 0,
        };
        // only a couple of points exist, none past a fold
        match stable_sequence_extract(&spec, &grid, &branch, &fake_fold, 10) {
            Err(Error::InsufficientPoints { .. }) => {}
            other => panic!("expected insufficient points, got {other:?}"),
        }
    }

    #[test]
    fn ws_membership_along_the_branch() {
        use crate::spectral::{membership_was, membership_ws};
        let (grid, spec, branch) = trace_abc(31);
        let tol = default_stability_tol(&grid);
        // baseline: tau = 0 up to residual tolerance, member of the stable set
        let (w_bar, _) = baseline_state(&spec, &grid, &FixedPointOptions::default()).unwrap();
        let (ok, tau) = membership_ws(&spec, &grid, &w_bar, tol).unwrap();
        assert!(ok);
        assert!(tau.abs() <= 1e-4, "tau at the baseline should vanish, got {tau}");

        // stable branch point: tau = lambda, member; unstable upper-branch
        // point: not a member
        let stable = branch
            .points
            .iter()
            .find(|p| p.lambda > 0.0 && p.stability.stability == Stability::AsymptoticallyStable)
            .unwrap();
        let (ok, tau) = membership_ws(&spec, &grid, &stable.state, tol).unwrap();
        assert!(ok);
        assert!(
            (tau - stable.lambda).abs() <= 1e-6 * (1.0 + stable.lambda),
            "tau {tau} vs lambda {}",
            stable.lambda
        );
        let (ok_as, _) = membership_was(&spec, &grid, &stable.state, tol).unwrap();
        assert!(ok_as);

        let unstable = branch
            .points
            .iter()
            .rev()
            .find(|p| p.stability.stability == Stability::Unstable)
            .unwrap();
        let (ok, _) = membership_ws(&spec, &grid, &unstable.state, tol).unwrap();
        assert!(!ok, "upper-branch point must fail the membership test");
    }

    #[test]
    fn newton_fails_above_the_fold() {
        use crate::operator::{newton_solve, NewtonOptions};
        let (grid, spec, branch) = trace_abc(31);
        let det = detect_fold(&branch).unwrap();
        let fold =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        // no stable solution exists there; from the fold state the solver
        // must report failure rather than fabricate one
        let result = newton_solve(
            &spec,
            &grid,
            &fold.state,
            1.05 * fold.lambda_star,
            &NewtonOptions::default(),
        );
        match result {
            Err(Error::MaxIterations { .. })
            | Err(Error::SingularJacobian(_))
            | Err(Error::ConeExit { .. }) => {}
            Ok(sol) => {
                let jac = assemble_jacobian(&spec, &grid, &sol.state, 1.05 * fold.lambda_star)
                    .unwrap();
                let l1 = smallest_eigenpair(&jac, &grid, &EigenOptions::default())
                    .unwrap()
                    .lambda1;
                assert!(l1 < 0.0, "a stable solution above the fold would falsify the fold");
            }
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn two_dimensional_fold_pipeline() {
        // rectangle, coarse grid: exercises the 2D stencil bandwidth in the
        // bordered corrector, the eigensolver and the augmented refinement
        let grid = build_grid(2, &[1.0, 1.0], &[15, 15]).unwrap();
        let spec = ProblemSpec::scalar_power_constant(&grid, 0.5, 3.0, 1.0, 1.0).unwrap();
        let opts = ContinuationOptions {
            arclength_budget: 20.0,
            ..Default::default()
        };
        let start =
            baseline_branch_point(&spec, &grid, &FixedPointOptions::default(), &opts).unwrap();
        let branch = trace_branch(&spec, &grid, &start, &opts).unwrap();
        let det = detect_fold(&branch).unwrap();
        let fold =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        assert!(fold.lambda_star > 0.0);
        assert!(fold.residual_f <= 1e-10);
        assert!(fold.residual_fv <= 1e-8);
        assert!(fold.lambda1_sym.abs() <= 1e-6 * grid.stencil_lambda1());
        let bis =
            bisect_fold_on_lambda1(&spec, &grid, &branch, det.brackets[0], &opts).unwrap();
        assert!(
            (fold.lambda_star - bis.lambda_star).abs() <= 1e-6 * (1.0 + fold.lambda_star),
            "2D routes disagree: {} vs {}",
            fold.lambda_star,
            bis.lambda_star
        );
    }

    #[test]
    fn verify_suite_passes_on_traced_branch() {
        let (grid, spec, branch) = trace_abc(31);
        let (w_bar, _) = baseline_state(&spec, &grid, &FixedPointOptions::default()).unwrap();
        let report = verify_branch(&spec, &grid, &branch, &w_bar, 1e-11, Some(0.5)).unwrap();
        assert!(report.pass, "{:#?}", report.checks);
    }

    #[test]
    fn nonexistence_probe_brackets_the_fold() {
        let (grid, spec, branch) = trace_abc(31);
        let det = detect_fold(&branch).unwrap();
        let fold =
            refine_fold_moore_spence(&spec, &grid, &branch, det.brackets[0], &Default::default())
                .unwrap();
        let (w_bar, _) = baseline_state(&spec, &grid, &FixedPointOptions::default()).unwrap();
        let above = nonexistence_probe(
            &spec,
            &grid,
            1.1 * fold.lambda_star,
            9,
            &w_bar,
            Some(&branch),
            99,
        )
        .unwrap();
        assert!(!above.stable_found, "{above:?}");
        let below = nonexistence_probe(
            &spec,
            &grid,
            0.9 * fold.lambda_star,
            9,
            &w_bar,
            Some(&branch),
            99,
        )
        .unwrap();
        assert!(below.stable_found, "{below:?}");
    }
}
