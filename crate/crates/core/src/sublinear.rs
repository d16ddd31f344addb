//! The lambda = 0 baseline: the unique positive solution of the sublinear
//! problem -Delta w = a_i w^q per component by monotone fixed-point
//! iteration with a certified sub/supersolution sandwich, the associated
//! energy, and the comparison barrier used along branches.

use crate::error::{Error, Result};
use crate::mesh::{self, Grid, GridField};
use crate::model::{ProblemSpec, StateVector};
use crate::spectral::{self, EigenOptions};

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations with relative residual decrease below this factor count
    /// as a plateau; a full plateau window raises `stall`.
    pub stall_window: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-12,
            max_iter: 2000,
            stall_window: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BrezisOswaldSolve {
    pub w: GridField,
    pub iterations: usize,
    pub residual: f64,
    /// sup-norm gap between the super- and subsolution iterates at exit.
    pub bracket_width: f64,
    /// Every ordering check (sub increasing, super decreasing, sub <= super)
    /// held to rounding slack.
    pub monotone_ok: bool,
    /// Energy non-increasing along the subsolution iterates.
    pub energy_monotone: bool,
}

fn component_residual_norm(grid: &Grid, a: &GridField, q: f64, w: &GridField) -> Result<f64> {
    let lap = mesh::laplacian_apply(grid, w)?;
    let mut sq = 0.0;
    for p in 0..w.len() {
        let r = lap.0[p] - a.0[p] * w.0[p].abs().powf(q) * w.0[p].signum();
        sq += r * r;
    }
    Ok((grid.weight() * sq).sqrt())
}

fn component_energy(grid: &Grid, a: &GridField, q: f64, w: &GridField) -> Result<f64> {
    let dirichlet = mesh::inner_h1(grid, w, w)?;
    let mut pot = 0.0;
    for p in 0..w.len() {
        pot += a.0[p] * w.0[p].abs().powf(q + 1.0);
    }
    Ok(0.5 * dirichlet - grid.weight() * pot / (q + 1.0))
}

/// Solves -Delta w = a_i w^q, w > 0, for component `i` by the monotone
/// iteration w <- (-Delta)^{-1}(a w^q). Sub- and supersolution seeds are
/// constructed in closed form from the factored stencil, and the two
/// iterate streams bracket the solution throughout.
pub fn solve_brezis_oswald(
    spec: &ProblemSpec,
    grid: &Grid,
    i: usize,
    opts: &FixedPointOptions,
) -> Result<BrezisOswaldSolve> {
    if i >= spec.m {
        return Err(Error::Shape(format!("component {i} of {}", spec.m)));
    }
    let q = spec.q[i];
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidExponent(format!("q must lie in (0,1), got {q}")));
    }
    let a = &spec.a[i];
    let n = grid.n_nodes();

    // factored stencil, reused by every inverse application
    let stencil = {
        let mut band = crate::linalg::BandMatrix::zeros(
            n,
            if grid.dim() == 1 { 1 } else { grid.n_per_axis()[0] },
            if grid.dim() == 1 { 1 } else { grid.n_per_axis()[0] },
        );
        let h = grid.spacing();
        match grid.dim() {
            1 => {
                let inv_h2 = 1.0 / (h[0] * h[0]);
                for p in 0..n {
                    band.add(p, p, 2.0 * inv_h2);
                    if p > 0 {
                        band.add(p, p - 1, -inv_h2);
                    }
                    if p + 1 < n {
                        band.add(p, p + 1, -inv_h2);
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
                        band.add(p, p, 2.0 * inv_h1 + 2.0 * inv_h2);
                        if ix > 0 {
                            band.add(p, p - 1, -inv_h1);
                        }
                        if ix + 1 < n1 {
                            band.add(p, p + 1, -inv_h1);
                        }
                        if iy > 0 {
                            band.add(p, p - n1, -inv_h2);
                        }
                        if iy + 1 < n2 {
                            band.add(p, p + n1, -inv_h2);
                        }
                    }
                }
            }
        }
        band.factorize()?
    };
    let apply_t = |w: &GridField| -> GridField {
        let rhs: Vec<f64> = w
            .0
            .iter()
            .enumerate()
            .map(|(p, &v)| a.0[p] * v.abs().powf(q) * v.signum())
            .collect();
        GridField(stencil.solve(&rhs))
    };

    // subsolution seed: eps * d with eps = 0.9 min_p (T(d)/d)^(1/(1-q))
    // so that T(eps d) = eps^q T(d) >= eps d holds nodewise
    let d = grid.boundary_distance_field();
    let td = apply_t(&d);
    let ratio_min = td
        .0
        .iter()
        .zip(&d.0)
        .map(|(t, dd)| t / dd)
        .fold(f64::INFINITY, f64::min);
    if !(ratio_min > 0.0) {
        return Err(Error::InvalidProblem("inverse stencil lost positivity".into()));
    }
    let eps = 0.9 * ratio_min.powf(1.0 / (1.0 - q));
    let mut sub = d.scale(eps);

    // supersolution seed: c * z with z = (-Delta)^{-1} a and
    // c = 1.1 max_p (T(z)/z)^(1/(1-q)), giving T(c z) <= c z
    let z = GridField(stencil.solve(&a.0));
    let tz = apply_t(&z);
    let ratio_max = tz
        .0
        .iter()
        .zip(&z.0)
        .map(|(t, zz)| t / zz)
        .fold(0.0f64, f64::max);
    let c = 1.1 * ratio_max.powf(1.0 / (1.0 - q));
    let mut sup = z.scale(c);

    let slack = 1e-13 * (1.0 + sup.max_abs());
    let mut monotone_ok = sub.0.iter().zip(&sup.0).all(|(s, t)| *s <= t + slack);
    let mut energy_monotone = true;
    let mut last_energy = component_energy(grid, a, q, &sub)?;
    let mut residual = component_residual_norm(grid, a, q, &sub)?;
    let mut plateau = 0usize;
    for it in 1..=opts.max_iter {
        let sub_next = apply_t(&sub);
        let sup_next = apply_t(&sup);
        let slack = 1e-13 * (1.0 + sup.max_abs());
        monotone_ok &= sub_next.0.iter().zip(&sub.0).all(|(n, o)| *n >= o - slack);
        monotone_ok &= sup_next.0.iter().zip(&sup.0).all(|(n, o)| *n <= o + slack);
        monotone_ok &= sub_next.0.iter().zip(&sup_next.0).all(|(s, t)| *s <= t + slack);
        sub = sub_next;
        sup = sup_next;
        let e = component_energy(grid, a, q, &sub)?;
        energy_monotone &= e <= last_energy + 1e-12 * (1.0 + last_energy.abs());
        last_energy = e;
        let r = component_residual_norm(grid, a, q, &sub)?;
        if r <= opts.tol {
            let bracket_width = sub
                .0
                .iter()
                .zip(&sup.0)
                .map(|(s, t)| (t - s).abs())
                .fold(0.0f64, f64::max);
            return Ok(BrezisOswaldSolve {
                w: sub,
                iterations: it,
                residual: r,
                bracket_width,
                monotone_ok,
                energy_monotone,
            });
        }
        if r > residual * (1.0 - 1e-6) {
            plateau += 1;
            if plateau >= opts.stall_window {
                return Err(Error::Stall {
                    iterations: it,
                    residual: r,
                    last_iterate: sub.0,
                });
            }
        } else {
            plateau = 0;
        }
        residual = r;
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        residual,
    })
}

/// E(v) = 1/2 sum_i ||grad v_i||^2 - sum_i 1/(q_i+1) int a_i |v_i|^{q_i+1}.
pub fn energy(spec: &ProblemSpec, grid: &Grid, v: &StateVector) -> Result<f64> {
    if v.m() != spec.m {
        return Err(Error::Shape("state does not match problem".into()));
    }
    let mut e = 0.0;
    for i in 0..spec.m {
        e += component_energy(grid, &spec.a[i], spec.q[i], &v.fields[i])?;
    }
    Ok(e)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BaselineReport {
    pub lambda1: f64,
    /// Largest delta with the baseline in S(delta): min over nodes of w_i / d.
    pub delta_bar: f64,
    pub component_residuals: Vec<f64>,
    pub component_iterations: Vec<usize>,
    pub bracket_widths: Vec<f64>,
    pub monotone_ok: bool,
    pub energy: f64,
}

/// Solves every component and reports the first eigenvalue of the
/// linearization at lambda = 0 along with the cone parameter.
pub fn baseline_state(
    spec: &ProblemSpec,
    grid: &Grid,
    opts: &FixedPointOptions,
) -> Result<(StateVector, BaselineReport)> {
    let mut fields = Vec::with_capacity(spec.m);
    let mut residuals = Vec::new();
    let mut iterations = Vec::new();
    let mut widths = Vec::new();
    let mut monotone_ok = true;
    for i in 0..spec.m {
        let solve = solve_brezis_oswald(spec, grid, i, opts)?;
        residuals.push(solve.residual);
        iterations.push(solve.iterations);
        widths.push(solve.bracket_width);
        monotone_ok &= solve.monotone_ok;
        fields.push(solve.w);
    }
    let state = StateVector::new(fields);
    let jac = crate::operator::assemble_jacobian(spec, grid, &state, 0.0)?;
    let pair = spectral::smallest_eigenpair(&jac, grid, &EigenOptions::default())?;
    let report = BaselineReport {
        lambda1: pair.lambda1,
        delta_bar: state.min_over_d(grid),
        component_residuals: residuals,
        component_iterations: iterations,
        bracket_widths: widths,
        monotone_ok,
        energy: energy(spec, grid, &state)?,
    };
    Ok((state, report))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ComparisonReport {
    pub pass: bool,
    /// Most negative value of s_i - w_i + tol over nodes (>= 0 iff pass).
    pub worst_margin: f64,
    pub worst_component: usize,
    pub worst_node: usize,
    pub tol: f64,
}

/// Barrier check s_i >= w_i - tol at every node and component.
pub fn comparison_check(
    grid: &Grid,
    s: &StateVector,
    w_bar: &StateVector,
    tol: f64,
) -> Result<ComparisonReport> {
    if s.m() != w_bar.m() || s.n_nodes() != w_bar.n_nodes() || s.n_nodes() != grid.n_nodes() {
        return Err(Error::Shape("states disagree on shape".into()));
    }
    let mut worst = f64::INFINITY;
    let mut at = (0usize, 0usize);
    for i in 0..s.m() {
        for p in 0..s.n_nodes() {
            let margin = s.fields[i].0[p] - w_bar.fields[i].0[p] + tol;
            if margin < worst {
                worst = margin;
                at = (i, p);
            }
        }
    }
    Ok(ComparisonReport {
        pass: worst >= 0.0,
        worst_margin: worst,
        worst_component: at.0,
        worst_node: at.1,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;
    use crate::operator::{newton_solve, NewtonOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn abc_spec(grid: &Grid) -> ProblemSpec {
        ProblemSpec::scalar_power_constant(grid, 0.5, 3.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn fixed_point_converges_and_matches_newton() {
        let grid = build_grid(1, &[1.0], &[63]).unwrap();
        let spec = abc_spec(&grid);
        let solve = solve_brezis_oswald(&spec, &grid, 0, &FixedPointOptions::default()).unwrap();
        assert!(solve.residual <= 1e-12);
        assert!(solve.monotone_ok);
        assert!(solve.energy_monotone);
        assert!(solve.w.min() > 0.0);

        let newton = newton_solve(
            &spec,
            &grid,
            &StateVector::new(vec![solve.w.scale(1.3)]),
            0.0,
            &NewtonOptions {
                tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        for p in 0..grid.n_nodes() {
            assert!(
                (solve.w.0[p] - newton.state.fields[0].0[p]).abs() <= 1e-8,
                "node {p}: {} vs {}",
                solve.w.0[p],
                newton.state.fields[0].0[p]
            );
        }
    }

    #[test]
    fn coefficient_scaling_homogeneity() {
        // replacing a by c a scales w by c^(1/(1-q))
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec1 = ProblemSpec::scalar_power_constant(&grid, 0.5, 3.0, 1.0, 1.0).unwrap();
        let c = 3.7;
        let spec2 = ProblemSpec::scalar_power_constant(&grid, 0.5, 3.0, c, 1.0).unwrap();
        let w1 = solve_brezis_oswald(&spec1, &grid, 0, &FixedPointOptions::default()).unwrap();
        let w2 = solve_brezis_oswald(&spec2, &grid, 0, &FixedPointOptions::default()).unwrap();
        let factor = c.powf(1.0 / (1.0 - 0.5));
        for p in 0..grid.n_nodes() {
            assert!(
                (w2.w.0[p] - factor * w1.w.0[p]).abs() <= 1e-8 * factor * w1.w.0[p].abs().max(1e-30),
                "node {p}"
            );
        }
    }

    #[test]
    fn zero_seed_is_the_excluded_fixed_point() {
        // the iteration map fixes 0; the solver must construct a positive
        // subsolution instead, never returning the trivial solution
        let grid = build_grid(1, &[1.0], &[15]).unwrap();
        let spec = abc_spec(&grid);
        let solve = solve_brezis_oswald(&spec, &grid, 0, &FixedPointOptions::default()).unwrap();
        assert!(solve.w.min() > 0.0);
        // and the trivial fixed point really is fixed
        let zero = GridField::zeros(15);
        let r = component_residual_norm(&grid, &spec.a[0], 0.5, &zero).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn invalid_exponent_rejected() {
        let grid = build_grid(1, &[1.0], &[15]).unwrap();
        let mut spec = abc_spec(&grid);
        spec.q[0] = 1.0; // bypass the constructor to hit the solver's own guard
        assert!(matches!(
            solve_brezis_oswald(&spec, &grid, 0, &FixedPointOptions::default()),
            Err(Error::InvalidExponent(_))
        ));
    }

    #[test]
    fn energy_worked_example() {
        let grid = build_grid(1, &[1.0], &[3]).unwrap();
        let spec = abc_spec(&grid);
        let v = StateVector::new(vec![GridField(vec![0.25, 0.5, 0.25])]);
        let e = energy(&spec, &grid, &v).unwrap();
        approx::assert_relative_eq!(e, 0.399408, max_relative = 1e-6);
        assert_eq!(energy(&spec, &grid, &StateVector::zeros(1, 3)).unwrap(), 0.0);
    }

    #[test]
    fn baseline_minimizes_energy() {
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec = abc_spec(&grid);
        let (w_bar, report) = baseline_state(&spec, &grid, &FixedPointOptions::default()).unwrap();
        assert!(report.delta_bar > 0.0);
        assert!(report.lambda1 >= -1e-8 * (1.0 + grid.stencil_lambda1()));
        let e0 = energy(&spec, &grid, &w_bar).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let pert = StateVector::new(vec![GridField(
                (0..31).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )]);
            let scale = 1e-3 * w_bar.max_abs();
            let e = energy(&spec, &grid, &w_bar.add_scaled(scale, &pert)).unwrap();
            assert!(e0 <= e + 1e-15, "perturbation lowered the energy: {e0} vs {e}");
        }
    }

    #[test]
    fn baseline_identical_components_agree() {
        let grid = build_grid(1, &[1.0], &[31]).unwrap();
        let spec = ProblemSpec::power_coupled_constant(&grid, 2, 0.5, 3.0, 1.0, 0.0, 1.0).unwrap();
        let (w_bar, _) = baseline_state(&spec, &grid, &FixedPointOptions::default()).unwrap();
        for p in 0..grid.n_nodes() {
            assert!((w_bar.fields[0].0[p] - w_bar.fields[1].0[p]).abs() <= 1e-10);
        }
    }

    #[test]
    fn baseline_on_rectangle() {
        let grid = build_grid(2, &[1.0, 1.5], &[9, 11]).unwrap();
        let spec = ProblemSpec::scalar_power_constant(&grid, 0.5, 3.0, 1.0, 1.0).unwrap();
        let (w_bar, report) = baseline_state(&spec, &grid, &FixedPointOptions::default()).unwrap();
        assert!(report.lambda1 >= -1e-8 * (1.0 + grid.stencil_lambda1()));
        assert!(report.delta_bar > 0.0);
        assert!(report.monotone_ok);
        let newton = newton_solve(
            &spec,
            &grid,
            &StateVector::new(vec![w_bar.fields[0].scale(1.2)]),
            0.0,
            &NewtonOptions {
                tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        for p in 0..grid.n_nodes() {
            assert!((w_bar.fields[0].0[p] - newton.state.fields[0].0[p]).abs() <= 1e-8);
        }
    }

    #[test]
    fn comparison_check_cases() {
        let grid = build_grid(1, &[1.0], &[15]).unwrap();
        let spec = abc_spec(&grid);
        let (w_bar, _) = baseline_state(&spec, &grid, &FixedPointOptions::default()).unwrap();
        let same = comparison_check(&grid, &w_bar, &w_bar, 1e-12).unwrap();
        assert!(same.pass);
        let half = comparison_check(&grid, &w_bar.scale(0.5), &w_bar, 1e-8).unwrap();
        assert!(!half.pass);
        let expected = -0.5 * w_bar.max_abs();
        assert!((half.worst_margin - expected).abs() <= 0.01 * expected.abs());
    }
}
