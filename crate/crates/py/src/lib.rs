//! Python bindings: grids, problem definitions, the baseline and Newton
//! solvers, the extended quotient with its probe, and the continuation /
//! fold pipeline. States cross the boundary as lists of per-component
//! node-value lists.

use eqfold::continuation::{
    baseline_branch_point, bisect_fold_on_lambda1, detect_fold, lambda_star_minimax,
    refine_fold_moore_spence, stable_sequence_extract, trace_branch, ContinuationOptions,
    FoldOptions, MinimaxOptions,
};
use eqfold::mesh;
use eqfold::model::{ProblemSpec, StateVector};
use eqfold::operator::{assemble_residual, newton_solve, NewtonOptions};
use eqfold::quotient::{
    functional_norm, inner_inf_probe, minimizing_sequence_test, quotient_grad_u, quotient_grad_v,
    rayleigh_extended, InfProbeResult, ProbeOptions,
};
use eqfold::spectral::{classify_stability, default_stability_tol};
use eqfold::sublinear::{baseline_state, comparison_check, energy, FixedPointOptions};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: eqfold::Error) -> PyErr {
    PyValueError::new_err(format!("{} ({})", e, e.kind()))
}

fn state_from_py(values: Vec<Vec<f64>>) -> StateVector {
    StateVector::new(values.into_iter().map(mesh::GridField).collect())
}

fn state_to_py(s: &StateVector) -> Vec<Vec<f64>> {
    s.fields.iter().map(|f| f.0.clone()).collect()
}

/// Uniform interior-node grid on an interval or rectangle.
#[pyclass(name = "Grid", skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: mesh::Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(dim: usize, lengths: Vec<f64>, n_per_axis: Vec<usize>) -> PyResult<Self> {
        Ok(PyGrid {
            inner: mesh::build_grid(dim, &lengths, &n_per_axis).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn spacing(&self) -> Vec<f64> {
        self.inner.spacing().to_vec()
    }

    #[getter]
    fn weight(&self) -> f64 {
        self.inner.weight()
    }

    fn coords(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_nodes())
            .map(|p| self.inner.coord(p).to_vec())
            .collect()
    }

    fn boundary_distance(&self) -> Vec<f64> {
        self.inner.boundary_distance().to_vec()
    }

    fn stencil_lambda1(&self) -> f64 {
        self.inner.stencil_lambda1()
    }

    fn laplacian(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(mesh::laplacian_apply(&self.inner, &mesh::GridField(values))
            .map_err(err)?
            .0)
    }

    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        mesh::integrate(&self.inner, &mesh::GridField(values)).map_err(err)
    }

    fn inner_h1(&self, f1: Vec<f64>, f2: Vec<f64>) -> PyResult<f64> {
        mesh::inner_h1(&self.inner, &mesh::GridField(f1), &mesh::GridField(f2)).map_err(err)
    }
}

/// A problem bound to its grid: coefficients, exponents and nonlinearity.
#[pyclass(name = "Problem")]
struct PyProblem {
    spec: ProblemSpec,
    grid: mesh::Grid,
}

#[pymethods]
impl PyProblem {
    /// -Delta u = a u^q + lambda b u^gamma (single equation).
    #[staticmethod]
    fn scalar_power(grid: &PyGrid, q: f64, gamma: f64, a: f64, b: f64) -> PyResult<Self> {
        Ok(PyProblem {
            spec: ProblemSpec::scalar_power_constant(&grid.inner, q, gamma, a, b).map_err(err)?,
            grid: grid.inner.clone(),
        })
    }

    /// Cooperative coupled system with g_i = b_lin u_i + b sum_j u_j^gamma.
    #[staticmethod]
    #[pyo3(signature = (grid, m, q, gamma, a, b_lin=0.0, b=1.0))]
    fn power_coupled(
        grid: &PyGrid,
        m: usize,
        q: f64,
        gamma: f64,
        a: f64,
        b_lin: f64,
        b: f64,
    ) -> PyResult<Self> {
        Ok(PyProblem {
            spec: ProblemSpec::power_coupled_constant(&grid.inner, m, q, gamma, a, b_lin, b)
                .map_err(err)?,
            grid: grid.inner.clone(),
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.spec.m
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.spec.q.clone()
    }

    /// Unique positive solution of the lambda = 0 baseline, with its first
    /// eigenvalue and cone parameter.
    fn baseline<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (state, report) =
            baseline_state(&self.spec, &self.grid, &FixedPointOptions::default()).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("state", state_to_py(&state))?;
        out.set_item("lambda1", report.lambda1)?;
        out.set_item("delta_bar", report.delta_bar)?;
        out.set_item("energy", report.energy)?;
        out.set_item("monotone_ok", report.monotone_ok)?;
        Ok(out)
    }

    fn energy(&self, state: Vec<Vec<f64>>) -> PyResult<f64> {
        energy(&self.spec, &self.grid, &state_from_py(state)).map_err(err)
    }

    fn residual_norm(&self, state: Vec<Vec<f64>>, lam: f64) -> PyResult<f64> {
        Ok(assemble_residual(&self.spec, &self.grid, &state_from_py(state), lam)
            .map_err(err)?
            .norm)
    }

    #[pyo3(signature = (state, lam, tol=1e-11, max_iter=50))]
    fn newton_solve(
        &self,
        state: Vec<Vec<f64>>,
        lam: f64,
        tol: f64,
        max_iter: usize,
    ) -> PyResult<Vec<Vec<f64>>> {
        let sol = newton_solve(
            &self.spec,
            &self.grid,
            &state_from_py(state),
            lam,
            &NewtonOptions {
                tol,
                max_iter,
                ..Default::default()
            },
        )
        .map_err(err)?;
        Ok(state_to_py(&sol.state))
    }

    /// Stability tag and first eigenvalue of the linearization at (u, lambda).
    fn classify(&self, state: Vec<Vec<f64>>, lam: f64) -> PyResult<(String, f64)> {
        let tol = default_stability_tol(&self.grid);
        let tag = classify_stability(&self.spec, &self.grid, &state_from_py(state), lam, tol)
            .map_err(err)?;
        Ok((tag.stability.as_str().to_string(), tag.lambda1))
    }

    /// Extended quotient R(u, v): (value, numerator, denominator).
    fn rayleigh(&self, u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
        let r = rayleigh_extended(&self.spec, &self.grid, &state_from_py(u), &state_from_py(v))
            .map_err(err)?;
        Ok((r.value, r.numerator, r.denominator))
    }

    fn quotient_grad_norms(&self, u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
        let us = state_from_py(u);
        let vs = state_from_py(v);
        let gv = quotient_grad_v(&self.spec, &self.grid, &us, &vs).map_err(err)?;
        let gu = quotient_grad_u(&self.spec, &self.grid, &us, &vs).map_err(err)?;
        Ok((
            functional_norm(&self.grid, &gv),
            functional_norm(&self.grid, &gu),
        ))
    }

    /// Inner-infimum dichotomy probe; returns {"kind": "constant", ...} or
    /// {"kind": "unbounded-below", ...}.
    #[pyo3(signature = (u, trials=50, seed=7))]
    fn inner_inf_probe<'py>(
        &self,
        py: Python<'py>,
        u: Vec<Vec<f64>>,
        trials: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let probe = inner_inf_probe(
            &self.spec,
            &self.grid,
            &state_from_py(u),
            trials,
            &ProbeOptions {
                seed,
                ..Default::default()
            },
        )
        .map_err(err)?;
        let out = PyDict::new(py);
        match probe {
            InfProbeResult::Constant {
                value,
                spread,
                worst_normalized_deviation,
                trials,
            } => {
                out.set_item("kind", "constant")?;
                out.set_item("value", value)?;
                out.set_item("spread", spread)?;
                out.set_item("worst_normalized_deviation", worst_normalized_deviation)?;
                out.set_item("trials", trials)?;
            }
            InfProbeResult::UnboundedBelow { certificate } => {
                out.set_item("kind", "unbounded-below")?;
                out.set_item(
                    "certificate_values",
                    certificate.iter().map(|(_, r)| *r).collect::<Vec<f64>>(),
                )?;
            }
        }
        Ok(out)
    }

    #[pyo3(signature = (u, k_max=20))]
    fn minimizing_sequence<'py>(
        &self,
        py: Python<'py>,
        u: Vec<Vec<f64>>,
        k_max: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let rep = minimizing_sequence_test(&self.spec, &self.grid, &state_from_py(u), k_max)
            .map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("grad_norms", rep.grad_norms)?;
        out.set_item("envelope", rep.envelope)?;
        out.set_item("floor", rep.floor)?;
        out.set_item("pass", rep.pass)?;
        Ok(out)
    }

    fn comparison_check(&self, state: Vec<Vec<f64>>, w_bar: Vec<Vec<f64>>) -> PyResult<(bool, f64)> {
        let rep = comparison_check(
            &self.grid,
            &state_from_py(state),
            &state_from_py(w_bar),
            1e-8,
        )
        .map_err(err)?;
        Ok((rep.pass, rep.worst_margin))
    }

    /// Pseudo-arclength branch trace from the baseline.
    #[pyo3(signature = (arclength_budget=16.0, max_steps=500))]
    fn trace(&self, arclength_budget: f64, max_steps: usize) -> PyResult<PyBranch> {
        let opts = ContinuationOptions {
            arclength_budget,
            max_steps,
            ..Default::default()
        };
        let start = baseline_branch_point(&self.spec, &self.grid, &FixedPointOptions::default(), &opts)
            .map_err(err)?;
        Ok(PyBranch {
            inner: trace_branch(&self.spec, &self.grid, &start, &opts).map_err(err)?,
        })
    }

    /// Full fold pipeline: trace, detect, refine through the augmented
    /// system, cross-check by eigenvalue-sign bisection and the minimax
    /// estimate from certified stable points.
    #[pyo3(signature = (arclength_budget=16.0, probe_trials=30))]
    fn fold<'py>(
        &self,
        py: Python<'py>,
        arclength_budget: f64,
        probe_trials: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = ContinuationOptions {
            arclength_budget,
            ..Default::default()
        };
        let start = baseline_branch_point(&self.spec, &self.grid, &FixedPointOptions::default(), &opts)
            .map_err(err)?;
        let branch = trace_branch(&self.spec, &self.grid, &start, &opts).map_err(err)?;
        let detection = detect_fold(&branch).map_err(err)?;
        let fold = refine_fold_moore_spence(
            &self.spec,
            &self.grid,
            &branch,
            detection.brackets[0],
            &FoldOptions::default(),
        )
        .map_err(err)?;
        let bisect =
            bisect_fold_on_lambda1(&self.spec, &self.grid, &branch, detection.brackets[0], &opts)
                .map_err(err)?;
        let minimax = lambda_star_minimax(
            &self.spec,
            &self.grid,
            &branch,
            &MinimaxOptions {
                trials: probe_trials,
                ..Default::default()
            },
        )
        .map_err(err)?;
        let sequence = stable_sequence_extract(&self.spec, &self.grid, &branch, &fold, 10).ok();
        let out = PyDict::new(py);
        out.set_item("lambda_star", fold.lambda_star)?;
        out.set_item("lambda_star_bisection", bisect.lambda_star)?;
        out.set_item("lambda_s_estimate", minimax.lambda_s_estimate)?;
        out.set_item("lambda_as_estimate", minimax.lambda_as_estimate)?;
        out.set_item("residual_f", fold.residual_f)?;
        out.set_item("residual_fv", fold.residual_fv)?;
        out.set_item("lambda1_sym", fold.lambda1_sym)?;
        out.set_item("smallest_singular_value", fold.smallest_singular_value)?;
        out.set_item("normalization_id", fold.normalization_id)?;
        out.set_item("state", state_to_py(&fold.state))?;
        out.set_item("null_vector", state_to_py(&fold.null_vector))?;
        out.set_item("n_branch_points", branch.points.len())?;
        if let Some(seq) = sequence {
            out.set_item(
                "stable_tail",
                seq.rows
                    .iter()
                    .map(|r| (r.lambda, r.distance_h1, r.lambda1))
                    .collect::<Vec<_>>(),
            )?;
        }
        Ok(out)
    }
}

/// Traced branch: per-point scalars plus on-demand states.
#[pyclass(name = "Branch")]
struct PyBranch {
    inner: eqfold::continuation::Branch,
}

#[pymethods]
impl PyBranch {
    #[getter]
    fn n_points(&self) -> usize {
        self.inner.points.len()
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.lambda).collect()
    }

    #[getter]
    fn lambda1s(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.lambda1).collect()
    }

    #[getter]
    fn h1_norms(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.h1_norm).collect()
    }

    #[getter]
    fn stability(&self) -> Vec<String> {
        self.inner
            .points
            .iter()
            .map(|p| p.stability.stability.as_str().to_string())
            .collect()
    }

    #[getter]
    fn arclengths(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.arclength).collect()
    }

    #[getter]
    fn fold_markers(&self) -> Vec<usize> {
        self.inner.fold_markers.clone()
    }

    fn state(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .points
            .get(index)
            .map(|p| state_to_py(&p.state))
            .ok_or_else(|| PyValueError::new_err(format!("no point {index}")))
    }

    fn fold_brackets(&self) -> PyResult<Vec<(usize, usize)>> {
        Ok(detect_fold(&self.inner).map_err(err)?.brackets)
    }
}

#[pymodule]
fn eqfold_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyBranch>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
