//! Assembly of the residual F(u, lambda) and its linearization on the grid,
//! positivity-cone management, and a damped Newton solver whose iterates
//! stay inside the discrete cone S(delta).

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::mesh::{self, Grid, GridField};
use crate::model::{eval_g, eval_g_jacobian, ProblemSpec, StateVector};

/// Nodewise residual F_i(u, lambda) = -Delta u_i - a_i |u_i|^(q-1) u_i - lambda g_i(x, u),
/// with its mass-weighted L2 norm.
#[derive(Debug, Clone)]
pub struct Residual {
    pub fields: Vec<GridField>,
    pub norm: f64,
}

/// Banded matrix representing F_u(u, lambda) in the interleaved dof
/// ordering `dof = node * m + component`.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    pub band: BandMatrix,
    pub m: usize,
    pub n_nodes: usize,
}

impl LinearOperator {
    pub fn n_dof(&self) -> usize {
        self.m * self.n_nodes
    }

    pub fn apply(&self, s: &StateVector) -> StateVector {
        let y = self.band.matvec(&s.flatten());
        StateVector::from_flat(self.m, self.n_nodes, &y)
    }

    pub fn apply_transpose(&self, s: &StateVector) -> StateVector {
        let y = self.band.matvec_transpose(&s.flatten());
        StateVector::from_flat(self.m, self.n_nodes, &y)
    }
}

fn check_state(spec: &ProblemSpec, grid: &Grid, s: &StateVector) -> Result<()> {
    if s.m() != spec.m || s.n_nodes() != grid.n_nodes() || spec.n_nodes() != grid.n_nodes() {
        return Err(Error::Shape(
            "state, problem and grid disagree on shape".into(),
        ));
    }
    Ok(())
}

fn require_open_cone(s: &StateVector) -> Result<()> {
    for (i, f) in s.fields.iter().enumerate() {
        if f.min() <= 0.0 {
            return Err(Error::ConeViolation(format!(
                "component {i} touches zero; u^(q-1) is singular there"
            )));
        }
    }
    Ok(())
}

pub fn assemble_residual(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    lambda: f64,
) -> Result<Residual> {
    check_state(spec, grid, s)?;
    require_open_cone(s)?;
    let g = eval_g(spec, s)?;
    let mut fields = Vec::with_capacity(spec.m);
    let mut sq = 0.0;
    for i in 0..spec.m {
        let lap = mesh::laplacian_apply(grid, &s.fields[i])?;
        let qi = spec.q[i];
        let mut f = lap;
        for p in 0..grid.n_nodes() {
            let u = s.fields[i].0[p];
            // sign(u) |u|^q; Newton restricts to positive iterates but the
            // evaluation stays total
            let sublinear = spec.a[i].0[p] * u.abs().powf(qi) * u.signum();
            f.0[p] -= sublinear + lambda * g[i].0[p];
            sq += f.0[p] * f.0[p];
        }
        fields.push(f);
    }
    Ok(Residual {
        fields,
        norm: (grid.weight() * sq).sqrt(),
    })
}

pub fn assemble_jacobian(
    spec: &ProblemSpec,
    grid: &Grid,
    s: &StateVector,
    lambda: f64,
) -> Result<LinearOperator> {
    check_state(spec, grid, s)?;
    require_open_cone(s)?;
    let m = spec.m;
    let n = grid.n_nodes();
    let gj = eval_g_jacobian(spec, s)?;
    let (kl, ku) = match grid.dim() {
        1 => (m, m),
        _ => (m * grid.n_per_axis()[0], m * grid.n_per_axis()[0]),
    };
    let mut band = BandMatrix::zeros(m * n, kl, ku);

    // stencil blocks, per component
    let h = grid.spacing();
    match grid.dim() {
        1 => {
            let n1 = grid.n_per_axis()[0];
            let inv_h2 = 1.0 / (h[0] * h[0]);
            for p in 0..n1 {
                for i in 0..m {
                    let r = p * m + i;
                    band.add(r, r, 2.0 * inv_h2);
                    if p > 0 {
                        band.add(r, r - m, -inv_h2);
                    }
                    if p + 1 < n1 {
                        band.add(r, r + m, -inv_h2);
                    }
                }
            }
        }
        _ => {
            let (n1, n2) = (grid.n_per_axis()[0], grid.n_per_axis()[1]);
            let inv_h1 = 1.0 / (h[0] * h[0]);
            let inv_h2 = 1.0 / (h[1] * h[1]);
            for iy in 0..n2 {
                for ix in 0..n1 {
                    let p = iy * n1 + ix;
                    for i in 0..m {
                        let r = p * m + i;
                        band.add(r, r, 2.0 * inv_h1 + 2.0 * inv_h2);
                        if ix > 0 {
                            band.add(r, r - m, -inv_h1);
                        }
                        if ix + 1 < n1 {
                            band.add(r, r + m, -inv_h1);
                        }
                        if iy > 0 {
                            band.add(r, r - m * n1, -inv_h2);
                        }
                        if iy + 1 < n2 {
                            band.add(r, r + m * n1, -inv_h2);
                        }
                    }
                }
            }
        }
    }

    // -q_i a_i u_i^(q_i - 1) on the diagonal, -lambda g_{i,u_j} nodewise
    for p in 0..n {
        for i in 0..m {
            let r = p * m + i;
            let u = s.fields[i].0[p];
            band.add(r, r, -spec.q[i] * spec.a[i].0[p] * u.powf(spec.q[i] - 1.0));
            for j in 0..m {
                band.add(r, p * m + j, -lambda * gj[i * m + j].0[p]);
            }
        }
    }
    Ok(LinearOperator { band, m, n_nodes: n })
}

/// Gradient of F in lambda: F_lambda = -g(x, u), flattened.
pub fn assemble_f_lambda(spec: &ProblemSpec, grid: &Grid, s: &StateVector) -> Result<Vec<f64>> {
    check_state(spec, grid, s)?;
    let g = eval_g(spec, s)?;
    let gs = StateVector::new(g);
    Ok(gs.scale(-1.0).flatten())
}

/// True iff s_i(node) >= delta * d(node) everywhere; delta = 0 reads as
/// strict positivity.
pub fn cone_membership(grid: &Grid, s: &StateVector, delta: f64) -> bool {
    if delta == 0.0 {
        return s.is_positive();
    }
    let d = grid.boundary_distance();
    s.fields
        .iter()
        .all(|f| f.0.iter().zip(d).all(|(&v, &dd)| v >= delta * dd))
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Cone floor: iterates keep u_i >= delta_floor * d. Default
    /// 1e-8 * min(d), resolved against the grid.
    pub delta_floor: Option<f64>,
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-11,
            max_iter: 50,
            delta_floor: None,
            max_backtracks: 40,
        }
    }
}

impl NewtonOptions {
    pub fn resolved_delta_floor(&self, grid: &Grid) -> f64 {
        self.delta_floor.unwrap_or(1e-8 * grid.d_min())
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolve {
    pub state: StateVector,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Damped Newton for F(u, lambda) = 0 at fixed lambda. The line search
/// backtracks until the iterate stays in S(delta_floor) and the residual
/// norm decreases.
pub fn newton_solve(
    spec: &ProblemSpec,
    grid: &Grid,
    s0: &StateVector,
    lambda: f64,
    opts: &NewtonOptions,
) -> Result<NewtonSolve> {
    check_state(spec, grid, s0)?;
    require_open_cone(s0)?;
    let delta_floor = opts.resolved_delta_floor(grid);
    let mut s = s0.clone();
    let mut res = assemble_residual(spec, grid, &s, lambda)?;
    if res.norm <= opts.tol {
        return Ok(NewtonSolve {
            state: s,
            residual_norm: res.norm,
            iterations: 0,
        });
    }
    for it in 1..=opts.max_iter {
        let jac = assemble_jacobian(spec, grid, &s, lambda)?;
        let lu = jac.band.factorize()?;
        let rhs: Vec<f64> = StateVector::new(res.fields.clone()).scale(-1.0).flatten();
        let delta = lu.solve(&rhs);
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian(format!(
                "non-finite Newton step at iteration {it} (pivot ratio {:.3e})",
                lu.pivot_ratio()
            )));
        }
        let step = StateVector::from_flat(spec.m, grid.n_nodes(), &delta);

        let mut alpha = 1.0;
        let mut accepted = false;
        let mut cone_blocked = true;
        for _ in 0..=opts.max_backtracks {
            let candidate = s.add_scaled(alpha, &step);
            if cone_membership(grid, &candidate, delta_floor) {
                cone_blocked = false;
                let cres = assemble_residual(spec, grid, &candidate, lambda)?;
                if cres.norm < (1.0 - 1e-4 * alpha) * res.norm {
                    s = candidate;
                    res = cres;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            if cone_blocked {
                return Err(Error::ConeExit { iteration: it });
            }
            return Err(Error::MaxIterations {
                iterations: it,
                residual: res.norm,
            });
        }
        if res.norm <= opts.tol {
            return Ok(NewtonSolve {
                state: s,
                residual_norm: res.norm,
                iterations: it,
            });
        }
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        residual: res.norm,
    })
}
