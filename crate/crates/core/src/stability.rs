//! Numerical stability experiments for quadratic penalizers.
//!
//! For `W(x) = Σ αᵢ ‖Lᵢx‖²` with `M = T*T + Σ αᵢ Lᵢ*Lᵢ`, the minimizers of
//! the unperturbed and perturbed problems (same `T`) satisfy
//!
//! ```text
//! x̄ − xₙ = M⁻¹ Σ (αᵢⁿ − αᵢ) Lᵢ*Lᵢ xₙ + M⁻¹ T*(y − yₙ)
//! ‖M⁻¹‖ ≤ 1 / (k · min(1, minᵢ αᵢ))
//! ‖x̄ − xₙ‖ ≤ (maxᵢ|αᵢⁿ − αᵢ| / minᵢ αᵢ) ‖xₙ‖ + ‖T*‖ / (k · min(1, minᵢ αᵢ)) · ‖y − yₙ‖
//! ```
//!
//! where `k` is the complementation constant,
//! `‖Tx‖² + Σ ‖Lᵢx‖² ≥ k ‖x‖²`. This module measures all of these.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{norm_l2, GridFunction};
use crate::operators::{OperatorHandle, DEFAULT_DENSE_CAP};
use crate::penalizer::Penalizer;
use crate::solver::{
    conjugate_gradient, solve_general, solve_quadratic, NormalOperator, Problem, SolverOptions,
};

/// Below this the complementation constant is treated as zero.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;

/// Solver settings used inside the lab: tighter than the defaults so that
/// solver error stays well below the quantities being measured.
pub fn lab_options() -> SolverOptions {
    SolverOptions {
        cg_tolerance: 1e-13,
        ..SolverOptions::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complementation {
    /// Smallest eigenvalue of `TᵀT + Σ LᵢᵀLᵢ`.
    pub k: f64,
    /// `k ≤ 1e−14`: complementation fails numerically and the stability
    /// bounds do not apply.
    pub degenerate: bool,
}

pub fn estimate_complementation_constant(
    forward: &OperatorHandle,
    penalties: &[OperatorHandle],
) -> Result<Complementation> {
    let terms = penalties.iter().map(|l| (1.0, l.clone())).collect();
    let m = NormalOperator::new(forward.clone(), terms).dense(DEFAULT_DENSE_CAP)?;
    let k = m.symmetric_eigen().eigenvalues.min();
    let degenerate = k <= DEGENERACY_THRESHOLD;
    if degenerate {
        log::warn!("complementation constant {k:e} is numerically zero; stability bounds do not apply");
    }
    Ok(Complementation { k, degenerate })
}

/// Which parts of the problem a geometric schedule perturbs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PerturbTargets {
    pub data: bool,
    pub weights: bool,
    pub operator: bool,
}

/// Perturbations `δyₙ`, `αᵢⁿ − αᵢ`, `Tₙ − T` for `n = 1..=count`. Each list
/// is either empty or has `count` entries.
#[derive(Clone, Debug)]
pub struct PerturbationSchedule {
    pub count: usize,
    pub base_radius: f64,
    pub data_deltas: Vec<GridFunction>,
    pub weight_deltas: Vec<Vec<f64>>,
    pub operator_deltas: Vec<OperatorHandle>,
    /// Required ratio between the last and first error.
    pub tolerance_factor: f64,
}

impl PerturbationSchedule {
    /// Magnitudes `r·2⁻ⁿ`: `‖δyₙ‖` in the Euclidean norm, every
    /// `|αᵢⁿ − αᵢ|` (random sign), and the spectral norm of a random dense
    /// `Tₙ − T`.
    pub fn geometric(
        p: &Problem,
        count: usize,
        base_radius: f64,
        targets: PerturbTargets,
        seed: u64,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::param("schedule needs at least one entry"));
        }
        if !(base_radius > 0.0 && base_radius.is_finite()) {
            return Err(Error::param("base radius must be positive"));
        }
        let weights = effective_weights(p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sched = PerturbationSchedule {
            count,
            base_radius,
            data_deltas: Vec::new(),
            weight_deltas: Vec::new(),
            operator_deltas: Vec::new(),
            tolerance_factor: 0.01,
        };
        let radius = |n: usize| base_radius * 0.5f64.powi(n as i32);
        for n in 1..=count {
            if targets.data {
                let shape = p.data.shape();
                let v: Vec<f64> = (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect();
                let g = GridFunction::new(shape, v)?;
                let s = radius(n) / norm_l2(&g);
                sched.data_deltas.push(g.scaled(s));
            }
            if targets.weights {
                sched.weight_deltas.push(
                    weights
                        .iter()
                        .map(|_| if rng.random::<bool>() { radius(n) } else { -radius(n) })
                        .collect(),
                );
            }
            if targets.operator {
                let (rows, cols) = (p.forward.output_shape().len(), p.forward.input_shape().len());
                if cols > DEFAULT_DENSE_CAP {
                    return Err(Error::DenseCap { dim: cols, cap: DEFAULT_DENSE_CAP });
                }
                let e = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = e.clone().singular_values().max();
                sched.operator_deltas.push(OperatorHandle::dense(
                    p.forward.input_shape(),
                    p.forward.output_shape(),
                    e * (radius(n) / norm),
                )?);
            }
        }
        sched.validate(p)?;
        Ok(sched)
    }

    /// All-zero perturbations of the data and weights.
    pub fn zero(p: &Problem, count: usize) -> Result<Self> {
        let weights = effective_weights(p)?;
        Ok(PerturbationSchedule {
            count,
            base_radius: 0.0,
            data_deltas: vec![GridFunction::zeros(p.data.shape()); count],
            weight_deltas: vec![vec![0.0; weights.len()]; count],
            operator_deltas: Vec::new(),
            tolerance_factor: 0.01,
        })
    }

    pub fn validate(&self, p: &Problem) -> Result<()> {
        let weights = effective_weights(p)?;
        let ok_len = |len: usize| len == 0 || len == self.count;
        if !ok_len(self.data_deltas.len())
            || !ok_len(self.weight_deltas.len())
            || !ok_len(self.operator_deltas.len())
        {
            return Err(Error::param("every delta list must be empty or have `count` entries"));
        }
        for d in &self.data_deltas {
            d.shape().ensure_same(&p.data.shape())?;
        }
        for dw in &self.weight_deltas {
            if dw.len() != weights.len() {
                return Err(Error::param("weight delta length differs from the number of terms"));
            }
            if weights.iter().zip(dw).any(|(w, d)| w + d <= 0.0) {
                return Err(Error::param("perturbed weights must stay positive"));
            }
        }
        for e in &self.operator_deltas {
            e.input_shape().ensure_same(&p.forward.input_shape())?;
            e.output_shape().ensure_same(&p.forward.output_shape())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    /// `‖xₙ − x̄‖` per entry.
    pub errors: Vec<f64>,
    /// Right side of the quantitative bound; `None` where `Tₙ ≠ T`.
    pub bound_values: Vec<Option<f64>>,
    /// Normalized residual of the perturbation identity; `None` where
    /// `Tₙ ≠ T`.
    pub identity_residuals: Vec<Option<f64>>,
    pub data_magnitudes: Vec<f64>,
    pub weight_magnitudes: Vec<f64>,
    pub k_estimate: f64,
    pub minimizer_norm: f64,
    pub tolerance_factor: f64,
    pub passed: bool,
}

impl StabilityReport {
    pub fn convergence_ok(&self) -> bool {
        match (self.errors.first(), self.errors.last()) {
            (Some(first), Some(last)) => *last <= first * self.tolerance_factor,
            _ => true,
        }
    }

    pub fn bounds_ok(&self) -> bool {
        self.errors
            .iter()
            .zip(&self.bound_values)
            .all(|(e, b)| b.is_none_or(|b| *e <= b * (1.0 + 1e-8)))
    }

    pub fn identities_ok(&self) -> bool {
        let cap = 1e-8 * (1.0 + self.minimizer_norm);
        self.identity_residuals.iter().all(|r| r.is_none_or(|r| r <= cap))
    }

    /// CSV with columns `n, delta_y, delta_alpha_max, error, q4_bound,
    /// n3_residual`; skipped values are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,delta_y,delta_alpha_max,error,q4_bound,n3_residual")?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for i in 0..self.errors.len() {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{},{}",
                i + 1,
                self.data_magnitudes[i],
                self.weight_magnitudes[i],
                self.errors[i],
                opt(self.bound_values[i]),
                opt(self.identity_residuals[i]),
            )?;
        }
        Ok(())
    }
}

/// `α αᵢ` for every term; the lab requires a quadratic penalizer and
/// `α > 0`.
fn effective_weights(p: &Problem) -> Result<Vec<f64>> {
    let terms = p.quadratic_terms().ok_or_else(|| {
        Error::WrongSolver("stability experiments need a quadratic penalizer".into())
    })?;
    if p.alpha <= 0.0 {
        return Err(Error::param("stability experiments need alpha > 0"));
    }
    Ok(terms.into_iter().map(|(w, _)| w).collect())
}

/// Same problem with `α` folded into the term weights.
fn with_effective_weights(p: &Problem, weights: &[f64]) -> Result<Problem> {
    Problem::new(p.forward.clone(), p.data.clone(), p.penalizer.with_weights(weights)?, 1.0)
}

pub fn run_stability_experiment(
    p: &Problem,
    sched: &PerturbationSchedule,
) -> Result<StabilityReport> {
    p.validate()?;
    sched.validate(p)?;
    let weights = effective_weights(p)?;
    let base = with_effective_weights(p, &weights)?;
    let ops: Vec<OperatorHandle> = p.penalizer.terms().iter().map(|t| t.operator.clone()).collect();

    let comp = estimate_complementation_constant(&p.forward, &ops)?;
    if comp.degenerate {
        return Err(Error::UnsupportedConfiguration(format!(
            "complementation constant {:e} is numerically zero",
            comp.k
        )));
    }
    let t_dense = p.forward.assemble_dense()?;
    let adjoint_norm = t_dense.tr_mul(&t_dense).symmetric_eigen().eigenvalues.max().max(0.0).sqrt();
    let min_weight = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let inverse_cap = 1.0 / (comp.k * min_weight.min(1.0));

    let opts = lab_options();
    let xbar = solve_quadratic(&base, &opts)?.minimizer;
    let normal = NormalOperator::for_problem(&base)?;
    let xbar_norm = norm_l2(&xbar);

    let mut report = StabilityReport {
        errors: Vec::with_capacity(sched.count),
        bound_values: Vec::with_capacity(sched.count),
        identity_residuals: Vec::with_capacity(sched.count),
        data_magnitudes: Vec::with_capacity(sched.count),
        weight_magnitudes: Vec::with_capacity(sched.count),
        k_estimate: comp.k,
        minimizer_norm: xbar_norm,
        tolerance_factor: sched.tolerance_factor,
        passed: false,
    };

    for n in 0..sched.count {
        let dy = sched.data_deltas.get(n);
        let dw = sched.weight_deltas.get(n);
        let de = sched.operator_deltas.get(n);

        let mut perturbed = base.clone();
        if let Some(dy) = dy {
            perturbed.data = base.data.add(dy)?;
        }
        let new_weights: Vec<f64> = match dw {
            Some(dw) => weights.iter().zip(dw).map(|(w, d)| w + d).collect(),
            None => weights.clone(),
        };
        if dw.is_some() {
            perturbed = with_effective_weights(&perturbed, &new_weights)?;
        }
        if let Some(de) = de {
            perturbed.forward = OperatorHandle::dense(
                p.forward.input_shape(),
                p.forward.output_shape(),
                &t_dense + de.assemble_dense()?,
            )?;
        }
        let xn = solve_quadratic(&perturbed, &opts)?.minimizer;
        let error = xn.distance(&xbar)?;

        let delta_y = dy.map(norm_l2).unwrap_or(0.0);
        let delta_w = dw
            .map(|d| d.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .unwrap_or(0.0);
        report.errors.push(error);
        report.data_magnitudes.push(delta_y);
        report.weight_magnitudes.push(delta_w);

        if de.is_some() {
            report.bound_values.push(None);
            report.identity_residuals.push(None);
            continue;
        }
        let bound = delta_w / min_weight * norm_l2(&xn) + adjoint_norm * inverse_cap * delta_y;
        report.bound_values.push(Some(bound));

        // right side of the identity, one CG solve per piece
        let mut weight_part = GridFunction::zeros(xn.shape());
        for ((t, w_old), w_new) in ops.iter().zip(&weights).zip(&new_weights) {
            let d = w_new - w_old;
            if d != 0.0 {
                weight_part.add_scaled_in_place(d, &t.apply_adjoint(&t.apply(&xn)?)?);
            }
        }
        let data_part = match dy {
            Some(dy) => p.forward.apply_adjoint(&dy.scaled(-1.0))?,
            None => GridFunction::zeros(xn.shape()),
        };
        let rhs = solve_normal(&normal, &weight_part, &opts)?.add(&solve_normal(&normal, &data_part, &opts)?)?;
        let lhs = xbar.sub(&xn)?;
        report
            .identity_residuals
            .push(Some(lhs.distance(&rhs)? / (1.0 + xbar_norm)));
    }
    report.passed = report.convergence_ok() && report.bounds_ok() && report.identities_ok();
    Ok(report)
}

fn solve_normal(m: &NormalOperator, b: &GridFunction, opts: &SolverOptions) -> Result<GridFunction> {
    let out = conjugate_gradient(m, b, GridFunction::zeros(b.shape()), opts.cg_tolerance, opts.max_iterations)?;
    Ok(out.x)
}

/// Two-sided check of the single-term perturbation identity
///
/// ```text
/// x̄ − xₙ = (αₙ − α) (αL*L + T*T)⁻¹ L*L xₙ + (αL*L + T*T)⁻¹ T*(y − yₙ)
/// ```
///
/// Returns `‖LHS − RHS‖ / (1 + ‖x̄‖)`.
pub fn check_identity_n3(
    forward: &OperatorHandle,
    penalty: &OperatorHandle,
    alpha: f64,
    alpha_n: f64,
    y: &GridFunction,
    y_n: &GridFunction,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha_n > 0.0) {
        return Err(Error::param("both alphas must be positive"));
    }
    let pen = Penalizer::squared_norm(penalty.clone());
    let p = Problem::new(forward.clone(), y.clone(), pen.clone(), alpha)?;
    let pn = Problem::new(forward.clone(), y_n.clone(), pen, alpha_n)?;
    let opts = lab_options();
    let xbar = solve_quadratic(&p, &opts)?.minimizer;
    let xn = solve_quadratic(&pn, &opts)?.minimizer;
    let normal = NormalOperator::for_problem(&p)?;

    let weight_part = penalty.apply_adjoint(&penalty.apply(&xn)?)?.scaled(alpha_n - alpha);
    let data_part = forward.apply_adjoint(&y.sub(y_n)?)?;
    let rhs = solve_normal(&normal, &weight_part, &opts)?.add(&solve_normal(&normal, &data_part, &opts)?)?;
    let lhs = xbar.sub(&xn)?;
    Ok(lhs.distance(&rhs)? / (1.0 + norm_l2(&xbar)))
}

/// `(‖(T*T + Σ αᵢ Lᵢ*Lᵢ)⁻¹‖, 1 / (k · min(1, minᵢ αᵢ)))`, both from dense
/// symmetric eigen-solves.
pub fn check_operator_bounds_q2_q3(
    forward: &OperatorHandle,
    penalties: &[OperatorHandle],
    alphas: &[f64],
) -> Result<(f64, f64)> {
    if penalties.len() != alphas.len() || alphas.is_empty() {
        return Err(Error::param("need one positive alpha per penalty operator"));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::param("alphas must be positive"));
    }
    let comp = estimate_complementation_constant(forward, penalties)?;
    if comp.degenerate {
        return Err(Error::UnsupportedConfiguration(format!(
            "complementation constant {:e} is numerically zero",
            comp.k
        )));
    }
    let terms = penalties.iter().cloned().zip(alphas).map(|(l, &a)| (a, l)).collect();
    let m = NormalOperator::new(forward.clone(), terms).dense(DEFAULT_DENSE_CAP)?;
    let lambda_min = m.symmetric_eigen().eigenvalues.min();
    let min_alpha = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((1.0 / lambda_min, 1.0 / (comp.k * min_alpha.min(1.0))))
}

/// Largest pairwise distance between minimizers found by [`solve_general`]
/// from `starts` random initial guesses.
pub fn probe_uniqueness(p: &Problem, starts: usize, seed: u64, opts: &SolverOptions) -> Result<f64> {
    let strictly = p.penalizer.strictly_convex() || p.forward.is_injective() == Some(true);
    if !strictly {
        return Err(Error::UnsupportedConfiguration(
            "uniqueness probing needs a strictly convex W or an injective T".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = p.forward.input_shape();
    let mut minimizers = Vec::with_capacity(starts);
    for _ in 0..starts {
        let x0 = GridFunction::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let opts = opts.clone().with_initial_guess(x0);
        minimizers.push(solve_general(p, &opts)?.minimizer);
    }
    let mut spread = 0.0_f64;
    for (i, a) in minimizers.iter().enumerate() {
        for b in &minimizers[i + 1..] {
            spread = spread.max(a.distance(b)?);
        }
    }
    Ok(spread)
}
