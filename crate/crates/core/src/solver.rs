//! Minimization of `J(x) = ‖Tx − y‖² + α W(x)`.
//!
//! * [`solve_quadratic`]: conjugate gradients on the normal equations
//!   `(T*T + α Σ αᵢ Lᵢ*Lᵢ) x = T*y` when every penalty term is squared.
//! * [`solve_general`]: gradient descent with Armijo backtracking for any
//!   differentiable convex penalizer.
//! * [`solve_dense_oracle`]: assembles the normal matrix and factors it;
//!   used to verify the iterative paths.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{dot, norm_l2, GridFunction};
use crate::operators::{OperatorHandle, OperatorKind, DEFAULT_DENSE_CAP};
use crate::penalizer::{Penalizer, PenalizerKind};

/// The triple `(T, y, W)` plus the regularization parameter `α`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub forward: OperatorHandle,
    pub data: GridFunction,
    pub penalizer: Penalizer,
    pub alpha: f64,
}

impl Problem {
    pub fn new(forward: OperatorHandle, data: GridFunction, penalizer: Penalizer, alpha: f64) -> Result<Self> {
        let p = Problem {
            forward,
            data,
            penalizer,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.shape().ensure_same(&self.forward.output_shape())?;
        if let Some(shape) = self.penalizer.input_shape() {
            shape.ensure_same(&self.forward.input_shape())?;
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Problem {
            alpha,
            ..self.clone()
        }
    }

    pub fn with_data(&self, data: GridFunction) -> Self {
        Problem {
            data,
            ..self.clone()
        }
    }

    /// `(α αᵢ, Lᵢ)` for each squared term; `None` unless the penalizer is
    /// quadratic.
    pub fn quadratic_terms(&self) -> Option<Vec<(f64, OperatorHandle)>> {
        self.penalizer.is_quadratic().then(|| {
            self.penalizer
                .terms()
                .iter()
                .map(|t| (self.alpha * t.weight, t.operator.clone()))
                .collect()
        })
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Absolute tolerance on `‖∇J‖` for [`solve_general`].
    pub gradient_tolerance: f64,
    /// Relative normal-equation residual for [`solve_quadratic`].
    pub cg_tolerance: f64,
    pub initial_guess: Option<GridFunction>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 2000,
            gradient_tolerance: 1e-8,
            cg_tolerance: 1e-10,
            initial_guess: None,
        }
    }
}

impl SolverOptions {
    pub fn with_initial_guess(mut self, x0: GridFunction) -> Self {
        self.initial_guess = Some(x0);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0 && self.cg_tolerance > 0.0) {
            return Err(Error::param("solver tolerances must be positive"));
        }
        Ok(())
    }

    fn start(&self, p: &Problem) -> Result<GridFunction> {
        match &self.initial_guess {
            Some(x0) => {
                x0.shape().ensure_same(&p.forward.input_shape())?;
                Ok(x0.clone())
            }
            None => Ok(GridFunction::zeros(p.forward.input_shape())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub minimizer: GridFunction,
    pub iterations: usize,
    /// `‖∇J‖` at the returned point.
    pub final_gradient_norm: f64,
    /// `J` at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// For [`solve_quadratic`]: relative normal-equation residual reached
    /// `cg_tolerance`, equivalently `‖∇J‖ ≤ 2·cg_tolerance·‖T*y‖`. For
    /// [`solve_general`]: `‖∇J‖ ≤ gradient_tolerance`.
    pub converged: bool,
}

pub fn objective(p: &Problem, x: &GridFunction) -> Result<f64> {
    let r = p.forward.apply(x)?.sub(&p.data)?;
    let fit = dot(r.values(), r.values());
    let pen = if p.alpha == 0.0 { 0.0 } else { p.alpha * p.penalizer.value(x)? };
    Ok(fit + pen)
}

/// Quadratic problems go to conjugate gradients, everything else to
/// gradient descent.
pub fn solve(p: &Problem, opts: &SolverOptions) -> Result<SolveReport> {
    if p.penalizer.is_quadratic() {
        solve_quadratic(p, opts)
    } else {
        solve_general(p, opts)
    }
}

/// `x ↦ (T*T + Σ wᵢ Lᵢ*Lᵢ) x`.
#[derive(Clone, Debug)]
pub(crate) struct NormalOperator {
    forward: OperatorHandle,
    terms: Vec<(f64, OperatorHandle)>,
}

impl NormalOperator {
    pub(crate) fn new(forward: OperatorHandle, terms: Vec<(f64, OperatorHandle)>) -> Self {
        NormalOperator { forward, terms }
    }

    pub(crate) fn for_problem(p: &Problem) -> Result<Self> {
        let terms = p.quadratic_terms().ok_or_else(|| {
            Error::WrongSolver(format!(
                "{} penalizer is not quadratic; use solve_general",
                p.penalizer.kind()
            ))
        })?;
        Ok(Self::new(p.forward.clone(), terms))
    }

    pub(crate) fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        let mut out = self.forward.apply_adjoint(&self.forward.apply(x)?)?;
        for (w, l) in &self.terms {
            if *w != 0.0 {
                out.add_scaled_in_place(*w, &l.apply_adjoint(&l.apply(x)?)?);
            }
        }
        Ok(out)
    }

    pub(crate) fn dense(&self, cap: usize) -> Result<DMatrix<f64>> {
        let t = self.forward.assemble_dense_capped(cap)?;
        let mut m = t.tr_mul(&t);
        for (w, l) in &self.terms {
            let ld = l.assemble_dense_capped(cap)?;
            m += ld.tr_mul(&ld) * *w;
        }
        Ok(m)
    }
}

pub(crate) struct CgOutcome {
    pub x: GridFunction,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    /// decrease of `xᵀMx − 2bᵀx` per iteration
    pub energy_drops: Vec<f64>,
}

/// Conjugate gradients for `M x = b` with `M` symmetric positive definite.
/// Stops on the true residual `‖b − Mx‖ ≤ tol·‖b‖`, restarting from the
/// current iterate if the recursive residual has drifted.
pub(crate) fn conjugate_gradient(
    m: &NormalOperator,
    b: &GridFunction,
    x0: GridFunction,
    tol: f64,
    max_iterations: usize,
) -> Result<CgOutcome> {
    let bnorm = norm_l2(b);
    let target = tol * if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut x = x0;
    let mut iterations = 0;
    let mut energy_drops = Vec::new();
    loop {
        let mut r = b.sub(&m.apply(&x)?)?;
        let mut rr = dot(r.values(), r.values());
        let true_residual = rr.sqrt();
        if true_residual <= target || iterations >= max_iterations {
            return Ok(CgOutcome {
                x,
                iterations,
                residual_norm: true_residual,
                converged: true_residual <= target,
                energy_drops,
            });
        }
        let mut p = r.clone();
        while iterations < max_iterations {
            let mp = m.apply(&p)?;
            let curvature = dot(p.values(), mp.values());
            let pp = dot(p.values(), p.values());
            if curvature.is_nan() || curvature <= 0.0 {
                return Err(Error::Definiteness {
                    rayleigh: curvature / pp,
                });
            }
            let step = rr / curvature;
            x.add_scaled_in_place(step, &p);
            r.add_scaled_in_place(-step, &mp);
            energy_drops.push(step * rr);
            iterations += 1;
            let rr_new = dot(r.values(), r.values());
            if rr_new.sqrt() <= target {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for (pi, ri) in p.values_mut().iter_mut().zip(r.values()) {
                *pi = ri + beta * *pi;
            }
        }
    }
}

pub fn solve_quadratic(p: &Problem, opts: &SolverOptions) -> Result<SolveReport> {
    p.validate()?;
    opts.validate()?;
    let normal = NormalOperator::for_problem(p)?;
    let x0 = opts.start(p)?;
    let rhs = p.forward.apply_adjoint(&p.data)?;
    let j0 = objective(p, &x0)?;
    let cg = conjugate_gradient(&normal, &rhs, x0, opts.cg_tolerance, opts.max_iterations)?;
    let mut trace = Vec::with_capacity(cg.energy_drops.len() + 1);
    trace.push(j0);
    let mut j = j0;
    for drop in &cg.energy_drops {
        j -= drop;
        trace.push(j);
    }
    Ok(SolveReport {
        minimizer: cg.x,
        iterations: cg.iterations,
        final_gradient_norm: 2.0 * cg.residual_norm,
        objective_trace: trace,
        converged: cg.converged,
    })
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

pub fn solve_general(p: &Problem, opts: &SolverOptions) -> Result<SolveReport> {
    p.validate()?;
    opts.validate()?;
    let uses_penalty = p.alpha != 0.0;
    if uses_penalty && !p.penalizer.is_differentiable() {
        return Err(Error::UnsupportedConfiguration(format!(
            "{} penalizer is not differentiable in this configuration",
            p.penalizer.kind()
        )));
    }
    let mut x = opts.start(p)?;
    let mut j = objective(p, &x)?;
    let mut trace = vec![j];
    let mut prev: Option<(GridFunction, GridFunction)> = None;
    let mut last_step = 1.0;
    let mut iterations = 0;

    loop {
        let residual = p.forward.apply(&x)?.sub(&p.data)?;
        let mut grad = p.forward.apply_adjoint(&residual)?.scaled(2.0);
        if uses_penalty {
            grad.add_scaled_in_place(p.alpha, &p.penalizer.gradient(&x)?);
        }
        let gnorm = norm_l2(&grad);
        if !gnorm.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        if gnorm <= opts.gradient_tolerance || iterations >= opts.max_iterations {
            return Ok(SolveReport {
                minimizer: x,
                iterations,
                final_gradient_norm: gnorm,
                objective_trace: trace,
                converged: gnorm <= opts.gradient_tolerance,
            });
        }

        // Barzilai-Borwein trial step, then Armijo halving
        let mut step = match &prev {
            Some((px, pg)) => {
                let s = x.sub(px)?;
                let yv = grad.sub(pg)?;
                let sy = dot(s.values(), yv.values());
                let ss = dot(s.values(), s.values());
                if sy > 0.0 && (ss / sy).is_finite() {
                    ss / sy
                } else {
                    2.0 * last_step
                }
            }
            None => 1.0,
        };

        let direction = grad.scaled(-1.0);
        let td = p.forward.apply(&direction)?;
        let fit_lin = 2.0 * dot(residual.values(), td.values());
        let fit_quad = dot(td.values(), td.values());
        let pen_line = if uses_penalty {
            Some(p.penalizer.line_model(&x, &direction)?)
        } else {
            None
        };
        let change = |t: f64| {
            let mut d = t * (fit_lin + t * fit_quad);
            if let Some(line) = &pen_line {
                d += p.alpha * line.delta(t);
            }
            d
        };

        let g2 = gnorm * gnorm;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let d = change(step);
            if d <= -ARMIJO_C * step * g2 && d < 0.0 {
                accepted = Some(d);
                break;
            }
            step *= 0.5;
        }
        let Some(decrease) = accepted else {
            return Err(Error::Stagnation {
                iteration: iterations,
                gradient_norm: gnorm,
                objective: j,
                step,
            });
        };

        let x_new = x.axpy(step, &direction)?;
        prev = Some((std::mem::replace(&mut x, x_new), grad));
        last_step = step;
        j += decrease;
        trace.push(j);
        iterations += 1;
    }
}

/// Direct solve of the assembled normal equations by Cholesky factorization.
pub fn solve_dense_oracle(p: &Problem) -> Result<GridFunction> {
    p.validate()?;
    let normal = NormalOperator::for_problem(p)?;
    let m = normal.dense(DEFAULT_DENSE_CAP)?;
    let t = p.forward.assemble_dense()?;
    let rhs = t.tr_mul(&DVector::from_column_slice(p.data.values()));
    let Some(chol) = m.clone().cholesky() else {
        return Err(Error::Definiteness {
            rayleigh: m.symmetric_eigen().eigenvalues.min(),
        });
    };
    let x = chol.solve(&rhs);
    GridFunction::new(p.forward.input_shape(), x.as_slice().to_vec())
}

/// One point of the `α → 0⁺` study.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitEntry {
    pub alpha: f64,
    /// `‖x_α − T†y‖`
    pub distance: f64,
    /// False when conjugate gradients missed its tolerance at this `α`.
    pub converged: bool,
}

/// Distances from the regularized minimizers to the minimum-norm
/// least-squares solution `T†y`, computed by a dense SVD pseudo-inverse.
/// `alphas` must be strictly decreasing and nonnegative; a trailing 0 is
/// allowed.
pub fn limit_to_best_approximate(
    p: &Problem,
    alphas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<LimitEntry>> {
    p.validate()?;
    let identity_term = p.penalizer.terms().len() == 1
        && p.penalizer.is_quadratic()
        && p.penalizer.terms()[0].operator.kind() == OperatorKind::Identity
        && matches!(
            p.penalizer.kind(),
            PenalizerKind::SquaredNorm | PenalizerKind::WeightedSum | PenalizerKind::SeminormPower
        );
    if !identity_term {
        return Err(Error::UnsupportedConfiguration(
            "limit study needs the single-term penalizer ‖x‖²".into(),
        ));
    }
    if alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::param("alphas must be finite and nonnegative"));
    }
    if alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("alphas must be strictly decreasing"));
    }
    let t = p.forward.assemble_dense()?;
    let svd = t.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if t.nrows() < t.ncols() || svd.singular_values.min() <= 1e-12 * smax {
        return Err(Error::param("forward operator is not injective"));
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| Error::param(e.to_string()))?;
    let best = pinv * DVector::from_column_slice(p.data.values());
    let best = GridFunction::new(p.forward.input_shape(), best.as_slice().to_vec())?;

    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let report = solve_quadratic(&p.with_alpha(alpha), opts)?;
        out.push(LimitEntry {
            alpha,
            distance: report.minimizer.distance(&best)?,
            converged: report.converged,
        });
    }
    Ok(out)
}
