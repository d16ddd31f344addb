//! Problem definition: exponents, coefficient fields, nonlinearity families
//! with first and second derivatives, and checks of the structural
//! hypotheses the theory needs (growth, coercivity, exponent restrictions).

use crate::error::{Error, Result};
use crate::mesh::{self, Grid, GridField};

/// One state of the system: m fields on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub fields: Vec<GridField>,
}

impl StateVector {
    pub fn new(fields: Vec<GridField>) -> Self {
        StateVector { fields }
    }

    pub fn zeros(m: usize, n_nodes: usize) -> Self {
        StateVector {
            fields: (0..m).map(|_| GridField::zeros(n_nodes)).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.fields.first().map_or(0, |f| f.len())
    }

    pub fn all_finite(&self) -> bool {
        self.fields.iter().all(|f| f.all_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.fields.iter().all(|f| f.min() >= 0.0)
    }

    pub fn is_positive(&self) -> bool {
        self.fields.iter().all(|f| f.min() > 0.0)
    }

    /// Interleaved flattening: dof = node * m + component.
    pub fn flatten(&self) -> Vec<f64> {
        let m = self.m();
        let n = self.n_nodes();
        let mut out = vec![0.0; m * n];
        for (i, f) in self.fields.iter().enumerate() {
            for (p, &v) in f.0.iter().enumerate() {
                out[p * m + i] = v;
            }
        }
        out
    }

    pub fn from_flat(m: usize, n_nodes: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), m * n_nodes);
        let mut fields = vec![GridField::zeros(n_nodes); m];
        for p in 0..n_nodes {
            for i in 0..m {
                fields[i].0[p] = flat[p * m + i];
            }
        }
        StateVector { fields }
    }

    pub fn scale(&self, c: f64) -> StateVector {
        StateVector {
            fields: self.fields.iter().map(|f| f.scale(c)).collect(),
        }
    }

    pub fn add_scaled(&self, c: f64, other: &StateVector) -> StateVector {
        StateVector {
            fields: self
                .fields
                .iter()
                .zip(&other.fields)
                .map(|(a, b)| a.add_scaled(c, b))
                .collect(),
        }
    }

    /// min over components and nodes of u_i / d; the largest `delta` with
    /// u in S(delta).
    pub fn min_over_d(&self, grid: &Grid) -> f64 {
        let d = grid.boundary_distance();
        let mut worst = f64::INFINITY;
        for f in &self.fields {
            for (p, &v) in f.0.iter().enumerate() {
                worst = worst.min(v / d[p]);
            }
        }
        worst
    }

    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        let w = grid.weight();
        let s: f64 = self
            .fields
            .iter()
            .map(|f| f.0.iter().map(|v| v * v).sum::<f64>())
            .sum();
        (w * s).sqrt()
    }

    pub fn h1_norm(&self, grid: &Grid) -> Result<f64> {
        let mut s = 0.0;
        for f in &self.fields {
            s += mesh::inner_h1(grid, f, f)?;
        }
        Ok(s.sqrt())
    }

    /// L^p norm of the pointwise Euclidean magnitude |u(x)|.
    pub fn lp_norm(&self, grid: &Grid, p: f64) -> f64 {
        let w = grid.weight();
        let n = self.n_nodes();
        let mut acc = 0.0;
        for node in 0..n {
            let mag2: f64 = self.fields.iter().map(|f| f.0[node] * f.0[node]).sum();
            acc += mag2.sqrt().powf(p);
        }
        (w * acc).powf(1.0 / p)
    }

    pub fn max_abs(&self) -> f64 {
        self.fields.iter().fold(0.0, |acc, f| acc.max(f.max_abs()))
    }
}

/// Tabulated scalar nonlinearity psi(t) with tabulated derivative, applied
/// diagonally: g_i(x, u) = psi(u_i). Evaluated by cubic Hermite
/// interpolation, extended linearly beyond the last knot.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomTable {
    t: Vec<f64>,
    g: Vec<f64>,
    dg: Vec<f64>,
}

impl CustomTable {
    /// Validates the table: knots strictly increasing from 0, psi(0) = 0,
    /// psi >= 0, and the tabulated derivative consistent with the secant
    /// slopes of the values within `consistency_tol` (relative to the
    /// derivative scale).
    pub fn new(t: Vec<f64>, g: Vec<f64>, dg: Vec<f64>, consistency_tol: f64) -> Result<Self> {
        if t.len() < 2 || t.len() != g.len() || t.len() != dg.len() {
            return Err(Error::InvalidProblem(format!(
                "table needs matching t/g/dg of length >= 2, got {}/{}/{}",
                t.len(),
                g.len(),
                dg.len()
            )));
        }
        if t[0] != 0.0 {
            return Err(Error::InvalidProblem("table must start at t = 0".into()));
        }
        if g[0] != 0.0 {
            return Err(Error::InvalidProblem(
                "g(0) must be 0 (growth bound forces it)".into(),
            ));
        }
        for k in 1..t.len() {
            if !(t[k] > t[k - 1]) {
                return Err(Error::InvalidProblem("table knots must strictly increase".into()));
            }
        }
        if t.iter().chain(&g).chain(&dg).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("table entries must be finite".into()));
        }
        let g_scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if g.iter().any(|&v| v < -1e-12 * (1.0 + g_scale)) {
            return Err(Error::InvalidProblem("table values must be nonnegative".into()));
        }
        let dg_scale = dg.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 1..t.len() - 1 {
            let secant = (g[k + 1] - g[k - 1]) / (t[k + 1] - t[k - 1]);
            if (dg[k] - secant).abs() > consistency_tol * (1.0 + dg_scale) {
                return Err(Error::InvalidProblem(format!(
                    "tabulated derivative at knot {k} ({}) inconsistent with secant slope ({secant})",
                    dg[k]
                )));
            }
        }
        let table = CustomTable { t, g, dg };
        // the interpolant must stay nonnegative between knots
        for k in 0..table.t.len() - 1 {
            for s in 1..8 {
                let x = table.t[k] + (table.t[k + 1] - table.t[k]) * s as f64 / 8.0;
                if table.eval(x) < -1e-10 * (1.0 + g_scale) {
                    return Err(Error::InvalidProblem(format!(
                        "interpolant dips negative near t = {x}"
                    )));
                }
            }
        }
        Ok(table)
    }

    fn locate(&self, x: f64) -> usize {
        match self.t.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(self.t.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.t.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let last = self.t.len() - 1;
        if x >= self.t[last] {
            return self.g[last] + self.dg[last] * (x - self.t[last]);
        }
        let k = self.locate(x);
        let dt = self.t[k + 1] - self.t[k];
        let s = (x - self.t[k]) / dt;
        let (s2, s3) = (s * s, s * s * s);
        self.g[k] * (2.0 * s3 - 3.0 * s2 + 1.0)
            + dt * self.dg[k] * (s3 - 2.0 * s2 + s)
            + self.g[k + 1] * (-2.0 * s3 + 3.0 * s2)
            + dt * self.dg[k + 1] * (s3 - s2)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let last = self.t.len() - 1;
        if x >= self.t[last] {
            return self.dg[last];
        }
        let k = self.locate(x);
        let dt = self.t[k + 1] - self.t[k];
        let s = (x - self.t[k]) / dt;
        let s2 = s * s;
        (self.g[k] * (6.0 * s2 - 6.0 * s)
            + dt * self.dg[k] * (3.0 * s2 - 4.0 * s + 1.0)
            + self.g[k + 1] * (-6.0 * s2 + 6.0 * s)
            + dt * self.dg[k + 1] * (3.0 * s2 - 2.0 * s))
            / dt
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        let last = self.t.len() - 1;
        if x >= self.t[last] {
            return 0.0;
        }
        let k = self.locate(x);
        let dt = self.t[k + 1] - self.t[k];
        let s = (x - self.t[k]) / dt;
        (self.g[k] * (12.0 * s - 6.0)
            + dt * self.dg[k] * (6.0 * s - 4.0)
            + self.g[k + 1] * (-12.0 * s + 6.0)
            + dt * self.dg[k + 1] * (6.0 * s - 2.0))
            / (dt * dt)
    }
}

/// Built-in nonlinearity families. All are cooperative on the nonnegative
/// cone (off-diagonal derivatives >= 0), which the spectral module relies
/// on for a real principal eigenvalue with positive eigenfunction.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityFamily {
    /// g_i = b_i(x) u_i + b(x) sum_j |u_j|^(gamma-1) u_j
    PowerCoupled {
        b_lin: Vec<GridField>,
        b_pow: GridField,
    },
    /// g = b(x) |u|^(gamma-1) u, single equation
    ScalarPower { b: GridField },
    /// g_i(x, u) = psi(u_i) from a validated table
    CustomTable(CustomTable),
}

/// Immutable problem description; validated once, then shared freely.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub m: usize,
    /// Ambient dimension d of the PDE; used only by the hypothesis checks.
    pub space_dim: usize,
    pub q: Vec<f64>,
    pub a: Vec<GridField>,
    pub family: NonlinearityFamily,
    pub gamma: f64,
    pub gamma0: f64,
    /// (c0, c1) of the growth bound g <= c0 |u| + c1 |u|^gamma.
    pub growth_constants: (f64, f64),
    /// (c2, c3) of the coercivity bound on sum_i (g_{i,u_i} u_i^2 - g_i u_i).
    pub coercivity_constants: (f64, f64),
}

impl ProblemSpec {
    pub fn new(
        m: usize,
        space_dim: usize,
        q: Vec<f64>,
        a: Vec<GridField>,
        family: NonlinearityFamily,
        gamma: f64,
        gamma0: f64,
        growth_constants: (f64, f64),
        coercivity_constants: (f64, f64),
    ) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidProblem("need at least one equation".into()));
        }
        if space_dim < 1 {
            return Err(Error::InvalidProblem("space_dim must be >= 1".into()));
        }
        if q.len() != m {
            return Err(Error::Shape(format!("{} exponents for {m} equations", q.len())));
        }
        for &qi in &q {
            if !(qi > 0.0 && qi < 1.0) {
                return Err(Error::InvalidExponent(format!(
                    "q_i must lie in (0,1), got {qi}"
                )));
            }
        }
        if a.len() != m {
            return Err(Error::Shape(format!(
                "{} coefficient fields for {m} equations",
                a.len()
            )));
        }
        let n_nodes = a[0].len();
        for (i, ai) in a.iter().enumerate() {
            if ai.len() != n_nodes {
                return Err(Error::Shape("coefficient fields disagree on node count".into()));
            }
            if !ai.all_finite() || ai.min() <= 0.0 {
                return Err(Error::InvalidProblem(format!(
                    "a_{i} must be positive and finite at every node"
                )));
            }
        }
        if !(gamma > 1.0) {
            return Err(Error::InvalidExponent(format!("gamma must exceed 1, got {gamma}")));
        }
        if !(gamma0 > 1.0 && gamma0 <= gamma) {
            return Err(Error::InvalidExponent(format!(
                "gamma0 must lie in (1, gamma], got {gamma0} with gamma = {gamma}"
            )));
        }
        match &family {
            NonlinearityFamily::PowerCoupled { b_lin, b_pow } => {
                if b_lin.len() != m {
                    return Err(Error::Shape(format!(
                        "{} linear coupling fields for {m} equations",
                        b_lin.len()
                    )));
                }
                for f in b_lin.iter().chain(std::iter::once(b_pow)) {
                    if f.len() != n_nodes {
                        return Err(Error::Shape("coupling field node count mismatch".into()));
                    }
                    if !f.all_finite() || f.min() < 0.0 {
                        return Err(Error::InvalidProblem(
                            "coupling fields must be nonnegative (cooperativity)".into(),
                        ));
                    }
                }
            }
            NonlinearityFamily::ScalarPower { b } => {
                if m != 1 {
                    return Err(Error::InvalidProblem("scalar-power family needs m = 1".into()));
                }
                if b.len() != n_nodes {
                    return Err(Error::Shape("coupling field node count mismatch".into()));
                }
                if !b.all_finite() || b.min() < 0.0 {
                    return Err(Error::InvalidProblem("b must be nonnegative".into()));
                }
            }
            NonlinearityFamily::CustomTable(_) => {}
        }
        if !(growth_constants.0 > 0.0 && growth_constants.1 > 0.0) {
            return Err(Error::InvalidProblem("growth constants must be positive".into()));
        }
        if !(coercivity_constants.0 > 0.0 && coercivity_constants.1 > 0.0) {
            return Err(Error::InvalidProblem("coercivity constants must be positive".into()));
        }
        Ok(ProblemSpec {
            m,
            space_dim,
            q,
            a,
            family,
            gamma,
            gamma0,
            growth_constants,
            coercivity_constants,
        })
    }

    /// Scalar concave-convex model problem -u'' = a u^q + lambda b u^gamma
    /// with constant coefficients and canonical hypothesis constants.
    pub fn scalar_power_constant(grid: &Grid, q: f64, gamma: f64, a: f64, b: f64) -> Result<Self> {
        let n = grid.n_nodes();
        let c2 = (0.45 * (gamma - 1.0) * b).max(1e-8);
        ProblemSpec::new(
            1,
            grid.dim(),
            vec![q],
            vec![GridField::constant(n, a)],
            NonlinearityFamily::ScalarPower {
                b: GridField::constant(n, b),
            },
            gamma,
            gamma,
            (1.0, b.max(1.0)),
            (c2, c2),
        )
    }

    /// Cooperative power-coupled system with constant coefficients.
    pub fn power_coupled_constant(
        grid: &Grid,
        m: usize,
        q: f64,
        gamma: f64,
        a: f64,
        b_lin: f64,
        b_pow: f64,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        let margin = if gamma > m as f64 {
            0.45 * b_pow * (gamma - m as f64) * (m as f64).powf((1.0 - gamma) / 2.0)
        } else {
            0.0
        };
        let c2 = margin.max(1e-8);
        ProblemSpec::new(
            m,
            grid.dim(),
            vec![q; m],
            (0..m).map(|_| GridField::constant(n, a)).collect(),
            NonlinearityFamily::PowerCoupled {
                b_lin: (0..m).map(|_| GridField::constant(n, b_lin)).collect(),
                b_pow: GridField::constant(n, b_pow),
            },
            gamma,
            gamma,
            (b_lin.max(1.0), b_pow.max(1.0)),
            (c2, c2),
        )
    }

    pub fn n_nodes(&self) -> usize {
        self.a[0].len()
    }

    /// g_i(x_node, u) for one node, writing into `out` (length m).
    pub(crate) fn g_at(&self, node: usize, u: &[f64], out: &mut [f64]) {
        match &self.family {
            NonlinearityFamily::PowerCoupled { b_lin, b_pow } => {
                let pow_sum: f64 = u
                    .iter()
                    .map(|&uj| uj.abs().powf(self.gamma - 1.0) * uj)
                    .sum();
                for i in 0..self.m {
                    out[i] = b_lin[i].0[node] * u[i] + b_pow.0[node] * pow_sum;
                }
            }
            NonlinearityFamily::ScalarPower { b } => {
                out[0] = b.0[node] * u[0].abs().powf(self.gamma - 1.0) * u[0];
            }
            NonlinearityFamily::CustomTable(tab) => {
                for i in 0..self.m {
                    out[i] = tab.eval(u[i]);
                }
            }
        }
    }

    /// Nodewise Jacobian g_{i,u_j}, row-major into `out` (length m*m).
    pub(crate) fn g_jac_at(&self, node: usize, u: &[f64], out: &mut [f64]) {
        let m = self.m;
        match &self.family {
            NonlinearityFamily::PowerCoupled { b_lin, b_pow } => {
                for j in 0..m {
                    let dpow = self.gamma * u[j].abs().powf(self.gamma - 1.0);
                    for i in 0..m {
                        out[i * m + j] = b_pow.0[node] * dpow;
                    }
                }
                for i in 0..m {
                    out[i * m + i] += b_lin[i].0[node];
                }
            }
            NonlinearityFamily::ScalarPower { b } => {
                out[0] = b.0[node] * self.gamma * u[0].abs().powf(self.gamma - 1.0);
            }
            NonlinearityFamily::CustomTable(tab) => {
                out.fill(0.0);
                for i in 0..m {
                    out[i * m + i] = tab.deriv(u[i]);
                }
            }
        }
    }

    /// Nodewise diagonal second derivatives h_{i,k} = d^2 g_i / d u_k^2,
    /// row-major into `out` (length m*m). For every built-in family the
    /// mixed second derivatives d^2 g_i / d u_j d u_k vanish for j != k.
    pub(crate) fn g_hess_at(&self, node: usize, u: &[f64], out: &mut [f64]) {
        let m = self.m;
        match &self.family {
            NonlinearityFamily::PowerCoupled { b_pow, .. } => {
                for k in 0..m {
                    let d2 = self.gamma
                        * (self.gamma - 1.0)
                        * u[k].abs().powf(self.gamma - 2.0)
                        * u[k].signum();
                    for i in 0..m {
                        out[i * m + k] = b_pow.0[node] * d2;
                    }
                }
            }
            NonlinearityFamily::ScalarPower { b } => {
                out[0] = b.0[node]
                    * self.gamma
                    * (self.gamma - 1.0)
                    * u[0].abs().powf(self.gamma - 2.0)
                    * u[0].signum();
            }
            NonlinearityFamily::CustomTable(tab) => {
                out.fill(0.0);
                for i in 0..m {
                    out[i * m + i] = tab.second_deriv(u[i]);
                }
            }
        }
    }
}

fn require_nonnegative(s: &StateVector) -> Result<()> {
    if !s.is_nonnegative() {
        return Err(Error::ConeViolation(
            "state has a negative component".into(),
        ));
    }
    Ok(())
}

/// g_i(x, u(x)) nodewise.
pub fn eval_g(spec: &ProblemSpec, s: &StateVector) -> Result<Vec<GridField>> {
    require_nonnegative(s)?;
    let (m, n) = (spec.m, s.n_nodes());
    if s.m() != m || n != spec.n_nodes() {
        return Err(Error::Shape("state does not match problem".into()));
    }
    let mut out = vec![GridField::zeros(n); m];
    let mut u = vec![0.0; m];
    let mut g = vec![0.0; m];
    for p in 0..n {
        for i in 0..m {
            u[i] = s.fields[i].0[p];
        }
        spec.g_at(p, &u, &mut g);
        for i in 0..m {
            out[i].0[p] = g[i];
        }
    }
    Ok(out)
}

/// Nodewise Jacobian matrix g_{i,u_j}(x, u(x)); entry (i, j) at index i*m+j.
pub fn eval_g_jacobian(spec: &ProblemSpec, s: &StateVector) -> Result<Vec<GridField>> {
    require_nonnegative(s)?;
    let (m, n) = (spec.m, s.n_nodes());
    if s.m() != m || n != spec.n_nodes() {
        return Err(Error::Shape("state does not match problem".into()));
    }
    let mut out = vec![GridField::zeros(n); m * m];
    let mut u = vec![0.0; m];
    let mut jac = vec![0.0; m * m];
    for p in 0..n {
        for i in 0..m {
            u[i] = s.fields[i].0[p];
        }
        spec.g_jac_at(p, &u, &mut jac);
        for e in 0..m * m {
            out[e].0[p] = jac[e];
        }
    }
    Ok(out)
}

/// Nodewise diagonal second derivatives h_{i,k} = d^2 g_i / d u_k^2.
pub fn eval_g_hessian_diag(spec: &ProblemSpec, s: &StateVector) -> Result<Vec<GridField>> {
    require_nonnegative(s)?;
    let (m, n) = (spec.m, s.n_nodes());
    let mut out = vec![GridField::zeros(n); m * m];
    let mut u = vec![0.0; m];
    let mut hess = vec![0.0; m * m];
    for p in 0..n {
        for i in 0..m {
            u[i] = s.fields[i].0[p];
        }
        spec.g_hess_at(p, &u, &mut hess);
        for e in 0..m * m {
            out[e].0[p] = hess[e];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GrowthReport {
    pub pass: bool,
    pub nonnegative_ok: bool,
    pub worst_ratio: f64,
    pub worst_sample: usize,
    pub worst_node: usize,
    /// The checker samples cannot prove the bound globally.
    pub verified_on_samples: usize,
}

/// Checks 0 <= g_i(x,u) <= c0 |u| + c1 |u|^gamma over the samples and nodes.
pub fn check_growth_g1(spec: &ProblemSpec, samples: &[Vec<f64>]) -> Result<GrowthReport> {
    let (c0, c1) = spec.growth_constants;
    let m = spec.m;
    let mut worst_ratio = 0.0f64;
    let mut worst = (0usize, 0usize);
    let mut nonneg = true;
    let mut g = vec![0.0; m];
    for (si, u) in samples.iter().enumerate() {
        if u.len() != m {
            return Err(Error::Shape(format!("sample {si} has {} entries, need {m}", u.len())));
        }
        if u.iter().any(|&v| v < 0.0) {
            return Err(Error::ConeViolation(format!("sample {si} is not nonnegative")));
        }
        let mag = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = c0 * mag + c1 * mag.powf(spec.gamma);
        for node in 0..spec.n_nodes() {
            spec.g_at(node, u, &mut g);
            for i in 0..m {
                if g[i] < 0.0 {
                    nonneg = false;
                }
                let ratio = if bound > 0.0 {
                    g[i] / bound
                } else if g[i].abs() == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                    worst = (si, node);
                }
            }
        }
    }
    Ok(GrowthReport {
        pass: nonneg && worst_ratio <= 1.0 + 1e-12,
        nonnegative_ok: nonneg,
        worst_ratio,
        worst_sample: worst.0,
        worst_node: worst.1,
        verified_on_samples: samples.len(),
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CoercivityReport {
    /// Summed reading: sum_i (g_{i,u_i} u_i^2 - g_i u_i) >= c2 |u|^(g0+1) + c3 |u|^(g+1).
    pub pass_summed: bool,
    pub worst_margin_summed: f64,
    /// Stricter per-index reading, reported alongside.
    pub pass_per_index: bool,
    pub worst_margin_per_index: f64,
    pub worst_sample: usize,
    pub worst_node: usize,
    pub verified_on_samples: usize,
}

/// Checks the coercivity bound (both the summed reading adopted by the
/// toolkit and the stricter per-index reading) over samples and nodes.
pub fn check_coercivity_g2(spec: &ProblemSpec, samples: &[Vec<f64>]) -> Result<CoercivityReport> {
    let (c2, c3) = spec.coercivity_constants;
    let m = spec.m;
    let mut worst_summed = f64::INFINITY;
    let mut worst_per_index = f64::INFINITY;
    let mut worst = (0usize, 0usize);
    let mut g = vec![0.0; m];
    let mut jac = vec![0.0; m * m];
    for (si, u) in samples.iter().enumerate() {
        if u.len() != m {
            return Err(Error::Shape(format!("sample {si} has {} entries, need {m}", u.len())));
        }
        if u.iter().any(|&v| v < 0.0) {
            return Err(Error::ConeViolation(format!("sample {si} is not nonnegative")));
        }
        let mag = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rhs = c2 * mag.powf(spec.gamma0 + 1.0) + c3 * mag.powf(spec.gamma + 1.0);
        for node in 0..spec.n_nodes() {
            spec.g_at(node, u, &mut g);
            spec.g_jac_at(node, u, &mut jac);
            let mut summed = 0.0;
            let mut min_term = f64::INFINITY;
            for i in 0..m {
                let term = jac[i * m + i] * u[i] * u[i] - g[i] * u[i];
                summed += term;
                min_term = min_term.min(term);
            }
            let margin_summed = summed - rhs;
            let margin_per_index = min_term - rhs;
            if margin_summed < worst_summed {
                worst_summed = margin_summed;
                worst = (si, node);
            }
            worst_per_index = worst_per_index.min(margin_per_index);
        }
    }
    let tol = 1e-12;
    Ok(CoercivityReport {
        pass_summed: worst_summed >= -tol,
        worst_margin_summed: worst_summed,
        pass_per_index: worst_per_index >= -tol,
        worst_margin_per_index: worst_per_index,
        worst_sample: worst.0,
        worst_node: worst.1,
        verified_on_samples: samples.len(),
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HypothesesReport {
    /// Critical Sobolev exponent 2d/(d-2); infinite for d <= 2.
    pub two_star: f64,
    pub gamma_ok: bool,
    pub q_ok: Vec<bool>,
    pub pass: bool,
}

/// Exponent restrictions used by the fold-existence statements:
/// gamma < 2* and q_i < 2/(d-2) when d > 2; vacuous for d <= 2.
pub fn check_theorem_hypotheses(spec: &ProblemSpec) -> HypothesesReport {
    let d = spec.space_dim;
    if d <= 2 {
        return HypothesesReport {
            two_star: f64::INFINITY,
            gamma_ok: true,
            q_ok: vec![true; spec.m],
            pass: true,
        };
    }
    let two_star = 2.0 * d as f64 / (d as f64 - 2.0);
    let q_bound = 2.0 / (d as f64 - 2.0);
    let gamma_ok = spec.gamma < two_star;
    let q_ok: Vec<bool> = spec.q.iter().map(|&qi| qi < q_bound).collect();
    let pass = gamma_ok && q_ok.iter().all(|&b| b);
    HypothesesReport {
        two_star,
        gamma_ok,
        q_ok,
        pass,
    }
}
