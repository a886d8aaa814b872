//! Penalizers `W(x)`: value, gradient and metadata.
//!
//! The families are
//!
//! * `squared_norm`: `‖Lx‖²`
//! * `seminorm_power`: `‖Lx‖^q`, `q ≥ 1`
//! * `weighted_sum`: `Σ αᵢ ‖Lᵢx‖^{qᵢ}`
//! * `total_variation`: `Σ_p sqrt(‖∇x(p)‖² + ε²) − ε`, isotropic, forward
//!   differences; exact TV at `ε = 0`
//! * `bv_norm`: `Σ_p (sqrt(x(p)² + ε²) − ε) + TV_ε(x)`
//!
//! Every shipped penalizer is nonnegative, so the lower bound `γ` is 0.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{dot, GridFunction, Shape};
use crate::operators::{
    forward_differences, forward_differences_adjoint, OperatorHandle, OperatorKind,
    StructuralField, DEFAULT_DENSE_CAP,
};

/// Default TV smoothing for unit-range images.
pub const DEFAULT_TV_EPS: f64 = 1e-3;

/// One `(α, L, q)` triple of a weighted sum.
#[derive(Clone, Debug)]
pub struct PenaltyTerm {
    pub weight: f64,
    pub operator: OperatorHandle,
    pub exponent: f64,
}

impl PenaltyTerm {
    pub fn new(weight: f64, operator: OperatorHandle, exponent: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::param(format!("term weight must be positive, got {weight}")));
        }
        if !(exponent >= 1.0 && exponent.is_finite()) {
            return Err(Error::param(format!("term exponent must be at least 1, got {exponent}")));
        }
        Ok(PenaltyTerm {
            weight,
            operator,
            exponent,
        })
    }

    fn value(&self, x: &GridFunction) -> Result<f64> {
        let lx = self.operator.apply(x)?;
        let n2 = dot(lx.values(), lx.values());
        Ok(self.weight * power_of_squared(n2, self.exponent))
    }

    fn add_gradient(&self, x: &GridFunction, acc: &mut GridFunction) -> Result<()> {
        let q = self.exponent;
        if q == 1.0 {
            return Err(Error::UnsupportedConfiguration(
                "‖Lx‖ with q = 1 has no gradient; use q > 1".into(),
            ));
        }
        let lx = self.operator.apply(x)?;
        let n2 = dot(lx.values(), lx.values());
        if n2 == 0.0 {
            // minimal-norm subgradient
            return Ok(());
        }
        let coeff = if q == 2.0 {
            2.0
        } else {
            q * n2.powf((q - 2.0) / 2.0)
        };
        let ltlx = self.operator.apply_adjoint(&lx)?;
        acc.add_scaled_in_place(self.weight * coeff, &ltlx);
        Ok(())
    }
}

/// `(‖v‖²)^{q/2}` without a square root for the common `q = 2`.
fn power_of_squared(n2: f64, q: f64) -> f64 {
    if q == 2.0 {
        n2
    } else {
        n2.powf(q / 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenalizerKind {
    SquaredNorm,
    SeminormPower,
    WeightedSum,
    TotalVariation,
    BvNorm,
}

impl fmt::Display for PenalizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenalizerKind::SquaredNorm => "squared_norm",
            PenalizerKind::SeminormPower => "seminorm_power",
            PenalizerKind::WeightedSum => "weighted_sum",
            PenalizerKind::TotalVariation => "total_variation",
            PenalizerKind::BvNorm => "bv_norm",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Penalizer {
    kind: PenalizerKind,
    terms: Vec<PenaltyTerm>,
    smoothing_eps: f64,
    lower_bound: f64,
    strictly_convex: bool,
}

impl Penalizer {
    /// `‖Lx‖²`.
    pub fn squared_norm(operator: OperatorHandle) -> Self {
        let strictly_convex = operator.is_injective().unwrap_or(false);
        Penalizer {
            kind: PenalizerKind::SquaredNorm,
            terms: vec![PenaltyTerm {
                weight: 1.0,
                operator,
                exponent: 2.0,
            }],
            smoothing_eps: 0.0,
            lower_bound: 0.0,
            strictly_convex,
        }
    }

    /// `‖Lx‖^q` for `q ≥ 1`.
    pub fn seminorm_power(operator: OperatorHandle, q: f64) -> Result<Self> {
        let term = PenaltyTerm::new(1.0, operator, q)?;
        let strictly_convex = q > 1.0 && term.operator.is_injective().unwrap_or(false);
        Ok(Penalizer {
            kind: PenalizerKind::SeminormPower,
            terms: vec![term],
            smoothing_eps: 0.0,
            lower_bound: 0.0,
            strictly_convex,
        })
    }

    /// `Σ αᵢ ‖Lᵢx‖^{qᵢ}`.
    pub fn weighted_sum(terms: Vec<PenaltyTerm>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::param("weighted sum needs at least one term"))?;
        let shape = first.operator.input_shape();
        for t in &terms {
            t.operator.input_shape().ensure_same(&shape)?;
            // re-validate in case the fields were set directly
            PenaltyTerm::new(t.weight, t.operator.clone(), t.exponent)?;
        }
        let strictly_convex =
            terms.iter().all(|t| t.exponent > 1.0) && trivial_common_null_space(&terms);
        Ok(Penalizer {
            kind: PenalizerKind::WeightedSum,
            terms,
            smoothing_eps: 0.0,
            lower_bound: 0.0,
            strictly_convex,
        })
    }

    /// Smoothed isotropic total variation.
    pub fn total_variation(eps: f64) -> Result<Self> {
        Self::check_eps(eps)?;
        Ok(Penalizer {
            kind: PenalizerKind::TotalVariation,
            terms: Vec::new(),
            smoothing_eps: eps,
            lower_bound: 0.0,
            strictly_convex: false,
        })
    }

    /// Smoothed `‖x‖₁ + TV(x)`.
    pub fn bv_norm(eps: f64) -> Result<Self> {
        Self::check_eps(eps)?;
        Ok(Penalizer {
            kind: PenalizerKind::BvNorm,
            terms: Vec::new(),
            smoothing_eps: eps,
            lower_bound: 0.0,
            strictly_convex: false,
        })
    }

    fn check_eps(eps: f64) -> Result<()> {
        if eps >= 0.0 && eps.is_finite() {
            Ok(())
        } else {
            Err(Error::param(format!("smoothing epsilon must be nonnegative, got {eps}")))
        }
    }

    pub fn kind(&self) -> PenalizerKind {
        self.kind
    }

    pub fn terms(&self) -> &[PenaltyTerm] {
        &self.terms
    }

    pub fn smoothing_eps(&self) -> f64 {
        self.smoothing_eps
    }

    /// `γ` with `W(x) ≥ −γ` for all `x`.
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn strictly_convex(&self) -> bool {
        self.strictly_convex
    }

    /// Grid shape the penalizer expects, when it is fixed by an operator.
    pub fn input_shape(&self) -> Option<Shape> {
        self.terms.first().map(|t| t.operator.input_shape())
    }

    /// True when every term is a squared seminorm, so the minimizer solves
    /// linear normal equations.
    pub fn is_quadratic(&self) -> bool {
        !self.terms.is_empty() && self.terms.iter().all(|t| t.exponent == 2.0)
    }

    pub fn is_differentiable(&self) -> bool {
        match self.kind {
            PenalizerKind::TotalVariation | PenalizerKind::BvNorm => self.smoothing_eps > 0.0,
            _ => self.terms.iter().all(|t| t.exponent > 1.0),
        }
    }

    /// Copy of this penalizer with the term weights replaced.
    pub(crate) fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.terms.len() {
            return Err(Error::param(format!(
                "expected {} weights, got {}",
                self.terms.len(),
                weights.len()
            )));
        }
        let mut out = self.clone();
        for (t, &w) in out.terms.iter_mut().zip(weights) {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::param(format!("term weight must be positive, got {w}")));
            }
            t.weight = w;
        }
        Ok(out)
    }

    fn check_image(&self, x: &GridFunction) -> Result<()> {
        if let Some(shape) = self.input_shape() {
            return x.shape().ensure_same(&shape);
        }
        if x.channels() != 1 {
            return Err(Error::UnsupportedShape {
                shape: x.shape(),
                reason: format!("{} needs a single-channel image", self.kind),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &GridFunction) -> Result<f64> {
        self.check_image(x)?;
        let eps = self.smoothing_eps;
        match self.kind {
            PenalizerKind::TotalVariation => Ok(tv_value(x, eps)),
            PenalizerKind::BvNorm => Ok(abs_value(x.values(), eps) + tv_value(x, eps)),
            _ => self.terms.iter().map(|t| t.value(x)).sum(),
        }
    }

    pub fn gradient(&self, x: &GridFunction) -> Result<GridFunction> {
        self.check_image(x)?;
        let eps = self.smoothing_eps;
        let mut g = GridFunction::zeros(x.shape());
        match self.kind {
            PenalizerKind::TotalVariation | PenalizerKind::BvNorm => {
                if eps == 0.0 {
                    return Err(Error::UnsupportedConfiguration(format!(
                        "{} with eps = 0 is not differentiable",
                        self.kind
                    )));
                }
                tv_gradient(x, eps, g.values_mut());
                if self.kind == PenalizerKind::BvNorm {
                    for (gi, &xi) in g.values_mut().iter_mut().zip(x.values()) {
                        *gi += xi / (xi * xi + eps * eps).sqrt();
                    }
                }
            }
            _ => {
                for t in &self.terms {
                    t.add_gradient(x, &mut g)?;
                }
            }
        }
        Ok(g)
    }

    /// Precomputes what is needed to evaluate `W(x + t d) − W(x)` for many
    /// step lengths `t` without cancellation.
    pub fn line_model(&self, x: &GridFunction, d: &GridFunction) -> Result<PenaltyLine> {
        self.check_image(x)?;
        x.shape().ensure_same(&d.shape())?;
        let eps = self.smoothing_eps;
        match self.kind {
            PenalizerKind::TotalVariation | PenalizerKind::BvNorm => {
                let (w, h) = (x.width(), x.height());
                let mut gx = vec![0.0; 2 * w * h];
                let mut gd = vec![0.0; 2 * w * h];
                forward_differences(w, h, x.values(), &mut gx);
                forward_differences(w, h, d.values(), &mut gd);
                let abs = (self.kind == PenalizerKind::BvNorm)
                    .then(|| (x.values().to_vec(), d.values().to_vec()));
                Ok(PenaltyLine(LineRepr::Smoothed { eps, gx, gd, abs }))
            }
            _ => {
                let mut terms = Vec::with_capacity(self.terms.len());
                for t in &self.terms {
                    let lx = t.operator.apply(x)?;
                    let ld = t.operator.apply(d)?;
                    terms.push(TermLine {
                        weight: t.weight,
                        exponent: t.exponent,
                        xx: dot(lx.values(), lx.values()),
                        xd: dot(lx.values(), ld.values()),
                        dd: dot(ld.values(), ld.values()),
                    });
                }
                Ok(PenaltyLine(LineRepr::Terms(terms)))
            }
        }
    }

    /// Parses a penalizer specification:
    /// `l2`, `grad2`, `seminorm:<op>:<q>`, `tv[:<eps>]`, `bv[:<eps>]`,
    /// `sum:<α>*<op>^<q>(+<α>*<op>^<q>)*` with `op ∈ {id, grad, struct}`.
    pub fn parse(spec: &str, ctx: &PenalizerContext) -> Result<Self> {
        let spec = spec.trim();
        let bad = |msg: String| Error::Config(format!("penalizer '{spec}': {msg}"));
        let num = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("cannot parse {what} '{s}'")))
        };
        match spec {
            "l2" => return Ok(Self::squared_norm(ctx.operator("id")?)),
            "grad2" => return Ok(Self::squared_norm(ctx.operator("grad")?)),
            "tv" => return Self::total_variation(DEFAULT_TV_EPS),
            "bv" => return Self::bv_norm(DEFAULT_TV_EPS),
            _ => {}
        }
        let (head, rest) = spec
            .split_once(':')
            .ok_or_else(|| bad("unknown penalizer".into()))?;
        match head {
            "tv" => Self::total_variation(num(rest, "eps")?).map_err(|e| bad(e.to_string())),
            "bv" => Self::bv_norm(num(rest, "eps")?).map_err(|e| bad(e.to_string())),
            "seminorm" => {
                let (op, q) = rest
                    .split_once(':')
                    .ok_or_else(|| bad("expected seminorm:<op>:<q>".into()))?;
                Self::seminorm_power(ctx.operator(op.trim())?, num(q, "exponent")?)
                    .map_err(|e| bad(e.to_string()))
            }
            "sum" => {
                let mut terms = Vec::new();
                for term in rest.split('+') {
                    let (alpha, op_q) = term
                        .split_once('*')
                        .ok_or_else(|| bad(format!("term '{term}' must be <alpha>*<op>^<q>")))?;
                    let (op, q) = op_q
                        .split_once('^')
                        .ok_or_else(|| bad(format!("term '{term}' must be <alpha>*<op>^<q>")))?;
                    terms.push(
                        PenaltyTerm::new(
                            num(alpha, "weight")?,
                            ctx.operator(op.trim())?,
                            num(q, "exponent")?,
                        )
                        .map_err(|e| bad(e.to_string()))?,
                    );
                }
                Self::weighted_sum(terms).map_err(|e| bad(e.to_string()))
            }
            _ => Err(bad("unknown penalizer".into())),
        }
    }
}

/// Grid and structural data needed to resolve operator names in a
/// penalizer specification.
#[derive(Clone, Debug)]
pub struct PenalizerContext {
    pub width: usize,
    pub height: usize,
    pub structural: Option<StructuralField>,
}

impl PenalizerContext {
    pub fn new(width: usize, height: usize) -> Self {
        PenalizerContext {
            width,
            height,
            structural: None,
        }
    }

    pub fn with_structural(mut self, field: StructuralField) -> Self {
        self.structural = Some(field);
        self
    }

    pub fn operator(&self, name: &str) -> Result<OperatorHandle> {
        let shape = Shape::image(self.width, self.height);
        match name {
            "id" => Ok(OperatorHandle::identity(shape)),
            "grad" => OperatorHandle::gradient(self.width, self.height),
            "struct" => {
                let field = self.structural.as_ref().ok_or_else(|| {
                    Error::Config("the 'struct' operator needs a gamma image".into())
                })?;
                OperatorHandle::structural_for(field, shape)
            }
            other => Err(Error::Config(format!(
                "unknown operator '{other}' (expected id, grad or struct)"
            ))),
        }
    }
}

/// Whether `∩ 𝒩(Lᵢ) = {0}`.
fn trivial_common_null_space(terms: &[PenaltyTerm]) -> bool {
    if terms.iter().any(|t| t.operator.is_injective() == Some(true)) {
        return true;
    }
    // gradient-type operators all contain the constants
    if terms.iter().all(|t| {
        matches!(
            t.operator.kind(),
            OperatorKind::Gradient | OperatorKind::Structural
        )
    }) {
        return false;
    }
    let n = terms[0].operator.input_shape().len();
    if n > DEFAULT_DENSE_CAP {
        return false;
    }
    let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
    for t in terms {
        match t.operator.assemble_dense() {
            Ok(m) => gram += m.tr_mul(&m),
            Err(_) => return false,
        }
    }
    let eig = gram.symmetric_eigen().eigenvalues;
    let max = eig.max();
    max > 0.0 && eig.min() > 1e-12 * max
}

fn tv_value(x: &GridFunction, eps: f64) -> f64 {
    let (w, h) = (x.width(), x.height());
    let mut g = vec![0.0; 2 * w * h];
    forward_differences(w, h, x.values(), &mut g);
    g.chunks_exact(2).map(|p| smoothed_magnitude(p[0] * p[0] + p[1] * p[1], eps)).sum()
}

/// `sqrt(n2 + ε²) − ε`, written to be exactly zero at `n2 = 0`.
#[inline]
fn smoothed_magnitude(n2: f64, eps: f64) -> f64 {
    if n2 == 0.0 {
        0.0
    } else {
        n2 / ((n2 + eps * eps).sqrt() + eps)
    }
}

fn abs_value(x: &[f64], eps: f64) -> f64 {
    x.iter().map(|&v| smoothed_magnitude(v * v, eps)).sum()
}

fn tv_gradient(x: &GridFunction, eps: f64, out: &mut [f64]) {
    let (w, h) = (x.width(), x.height());
    let mut g = vec![0.0; 2 * w * h];
    forward_differences(w, h, x.values(), &mut g);
    for p in g.chunks_exact_mut(2) {
        let s = (p[0] * p[0] + p[1] * p[1] + eps * eps).sqrt();
        p[0] /= s;
        p[1] /= s;
    }
    forward_differences_adjoint(w, h, &g, out);
}

#[derive(Clone, Debug)]
struct TermLine {
    weight: f64,
    exponent: f64,
    xx: f64,
    xd: f64,
    dd: f64,
}

/// Restriction of a penalizer to the line `x + t d`; see
/// [`Penalizer::line_model`].
#[derive(Clone, Debug)]
pub struct PenaltyLine(LineRepr);

#[derive(Clone, Debug)]
enum LineRepr {
    Terms(Vec<TermLine>),
    Smoothed {
        eps: f64,
        gx: Vec<f64>,
        gd: Vec<f64>,
        abs: Option<(Vec<f64>, Vec<f64>)>,
    },
}

impl PenaltyLine {
    /// `W(x + t d) − W(x)`.
    pub fn delta(&self, t: f64) -> f64 {
        match &self.0 {
            LineRepr::Terms(terms) => terms
                .iter()
                .map(|tl| {
                    let change = t * (2.0 * tl.xd + t * tl.dd);
                    let d = if tl.exponent == 2.0 {
                        change
                    } else if tl.xx > 0.0 {
                        let ratio = (change / tl.xx).max(-1.0);
                        let half = tl.exponent / 2.0;
                        tl.xx.powf(half) * (half * ratio.ln_1p()).exp_m1()
                    } else {
                        change.max(0.0).powf(tl.exponent / 2.0)
                    };
                    tl.weight * d
                })
                .sum(),
            LineRepr::Smoothed { eps, gx, gd, abs } => {
                let eps2 = eps * eps;
                let pair_delta = |a: f64, b: f64, c: f64, e: f64| {
                    // per-pixel change of sqrt(|g|² + ε²) for g = (a, b), step (c, e)
                    let old = a * a + b * b;
                    let (na, nb) = (a + t * c, b + t * e);
                    let new = na * na + nb * nb;
                    let change = t * (2.0 * (a * c + b * e) + t * (c * c + e * e));
                    let denom = (new + eps2).sqrt() + (old + eps2).sqrt();
                    if denom == 0.0 {
                        0.0
                    } else {
                        change / denom
                    }
                };
                let mut total: f64 = gx
                    .chunks_exact(2)
                    .zip(gd.chunks_exact(2))
                    .map(|(g, e)| pair_delta(g[0], g[1], e[0], e[1]))
                    .sum();
                if let Some((xv, dv)) = abs {
                    total += xv
                        .iter()
                        .zip(dv)
                        .map(|(&a, &c)| pair_delta(a, 0.0, c, 0.0))
                        .sum::<f64>();
                }
                total
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner_product, norm_l2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GridFunction {
        GridFunction::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    fn ctx(w: usize, h: usize, rng: &mut ChaCha8Rng) -> PenalizerContext {
        let gamma = GridFunction::from_fn(w, h, |_, _| rng.random_range(0.0..1.0));
        PenalizerContext::new(w, h).with_structural(StructuralField::new(gamma, 5.0).unwrap())
    }

    fn all_penalizers(c: &PenalizerContext) -> Vec<Penalizer> {
        [
            "l2",
            "grad2",
            "seminorm:id:1.5",
            "seminorm:grad:3",
            "seminorm:struct:2",
            "sum:0.8*id^2+0.2*struct^2",
            "sum:0.5*grad^1.5+2*id^2.5",
            "tv:0.01",
            "bv:0.01",
            "tv:0.5",
        ]
        .iter()
        .map(|s| Penalizer::parse(s, c).unwrap())
        .collect()
    }

    /// Straightforward per-pixel evaluation of the stated discretization.
    fn naive_tv(x: &GridFunction, eps: f64) -> f64 {
        let (w, h) = (x.width(), x.height());
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                let v = x.get(i, j, 0);
                let dx = if j + 1 < w { x.get(i, j + 1, 0) - v } else { 0.0 };
                let dy = if i + 1 < h { x.get(i + 1, j, 0) - v } else { 0.0 };
                total += (dx * dx + dy * dy + eps * eps).sqrt() - eps;
            }
        }
        total
    }

    #[test]
    fn squared_identity_values() {
        let x = GridFunction::image(2, 1, vec![3.0, 4.0]).unwrap();
        let w = Penalizer::squared_norm(OperatorHandle::identity(x.shape()));
        assert_eq!(w.value(&x).unwrap(), 25.0);
        assert_eq!(w.gradient(&x).unwrap().values(), &[6.0, 8.0]);
        assert!(w.strictly_convex());
        assert!(w.is_quadratic());
        assert_eq!(w.lower_bound(), 0.0);
    }

    #[test]
    fn tv_of_constant_is_zero() {
        let x = GridFunction::constant(Shape::image(5, 4), 0.3);
        for eps in [0.0, 1e-6, 1e-3, 1.0] {
            assert_eq!(Penalizer::total_variation(eps).unwrap().value(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn bv_norm_hand_value() {
        let x = GridFunction::image(2, 1, vec![0.0, 1.0]).unwrap();
        let w = Penalizer::bv_norm(0.0).unwrap();
        assert_eq!(w.value(&x).unwrap(), 2.0);
        let naive = x.values().iter().map(|v| v.abs()).sum::<f64>() + naive_tv(&x, 0.0);
        assert_eq!(naive, 2.0);
    }

    #[test]
    fn tv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(&mut rng, 7, 5);
        for eps in [0.0, 1e-3, 0.3] {
            let got = Penalizer::total_variation(eps).unwrap().value(&x).unwrap();
            let want = naive_tv(&x, eps);
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn gradients_vanish_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = ctx(5, 5, &mut rng);
        let zero = GridFunction::zeros(Shape::image(5, 5));
        for w in all_penalizers(&c) {
            let g = w.gradient(&zero).unwrap();
            assert!(g.values().iter().all(|&v| v == 0.0), "{}", w.kind());
        }
    }

    #[test]
    fn nonsmooth_configurations_are_rejected() {
        let x = GridFunction::zeros(Shape::image(3, 3));
        for w in [Penalizer::total_variation(0.0).unwrap(), Penalizer::bv_norm(0.0).unwrap()] {
            assert!(matches!(w.gradient(&x), Err(Error::UnsupportedConfiguration(_))));
            assert!(!w.is_differentiable());
        }
        let q1 = Penalizer::seminorm_power(OperatorHandle::identity(x.shape()), 1.0).unwrap();
        assert!(matches!(q1.gradient(&x), Err(Error::UnsupportedConfiguration(_))));
        assert!(Penalizer::seminorm_power(OperatorHandle::identity(x.shape()), 0.5).is_err());
        assert!(Penalizer::total_variation(-1.0).is_err());
    }

    #[test]
    fn finite_difference_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = ctx(6, 5, &mut rng);
        for w in all_penalizers(&c) {
            for _ in 0..5 {
                let x = random_image(&mut rng, 6, 5);
                let d = random_image(&mut rng, 6, 5);
                let h = 1e-6;
                let fd = (w.value(&x.axpy(h, &d).unwrap()).unwrap()
                    - w.value(&x.axpy(-h, &d).unwrap()).unwrap())
                    / (2.0 * h);
                let an = inner_product(&w.gradient(&x).unwrap(), &d).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-8),
                    "{}: fd {fd} vs {an}",
                    w.kind()
                );
            }
        }
    }

    #[test]
    fn line_model_matches_direct_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = ctx(6, 6, &mut rng);
        for w in all_penalizers(&c) {
            let x = random_image(&mut rng, 6, 6);
            let d = random_image(&mut rng, 6, 6);
            let line = w.line_model(&x, &d).unwrap();
            let w0 = w.value(&x).unwrap();
            for t in [1e-3, 0.1, 1.0, -0.7] {
                let direct = w.value(&x.axpy(t, &d).unwrap()).unwrap() - w0;
                let modeled = line.delta(t);
                assert!(
                    (direct - modeled).abs() <= 1e-10 * w0.max(1.0),
                    "{}: {direct} vs {modeled}",
                    w.kind()
                );
            }
            assert_eq!(line.delta(0.0), 0.0);
        }
    }

    #[test]
    fn weighted_sum_single_term_is_squared_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = Shape::image(4, 4);
        let id = OperatorHandle::identity(shape);
        let sum = Penalizer::weighted_sum(vec![PenaltyTerm::new(1.0, id.clone(), 2.0).unwrap()]).unwrap();
        let sq = Penalizer::squared_norm(id);
        let x = random_image(&mut rng, 4, 4);
        assert_eq!(sum.value(&x).unwrap(), sq.value(&x).unwrap());
        assert_eq!(sum.gradient(&x).unwrap(), sq.gradient(&x).unwrap());
        assert!(sum.strictly_convex());
        assert!(Penalizer::weighted_sum(vec![]).is_err());
    }

    #[test]
    fn hybrid_sum_equals_per_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = ctx(8, 8, &mut rng);
        let w = Penalizer::parse("sum:0.8*id^2+0.2*struct^2", &c).unwrap();
        assert_eq!(w.kind(), PenalizerKind::WeightedSum);
        assert_eq!(w.terms().len(), 2);
        assert_eq!(w.terms()[0].weight, 0.8);
        assert_eq!(w.terms()[1].operator.kind(), OperatorKind::Structural);
        assert!(w.is_quadratic());
        assert!(w.strictly_convex());
        let l = c.operator("struct").unwrap();
        for _ in 0..10 {
            let x = random_image(&mut rng, 8, 8);
            let want = 0.8 * norm_l2(&x).powi(2) + 0.2 * norm_l2(&l.apply(&x).unwrap()).powi(2);
            let got = w.value(&x).unwrap();
            assert!((got - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn strict_convexity_metadata() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = ctx(4, 4, &mut rng);
        let sc = |s: &str| Penalizer::parse(s, &c).unwrap().strictly_convex();
        assert!(sc("l2"));
        assert!(!sc("grad2"));
        assert!(sc("seminorm:id:1.5"));
        assert!(!sc("seminorm:id:1"));
        assert!(!sc("seminorm:grad:3"));
        assert!(sc("sum:1*grad^2+0.1*id^2"));
        assert!(!sc("sum:1*grad^2+0.1*struct^2"));
        assert!(!sc("sum:1*grad^2+0.1*id^1"));
        assert!(!sc("tv:0.1"));
        assert!(!sc("bv:0.1"));
    }

    #[test]
    fn spec_strings() {
        let c = PenalizerContext::new(4, 4);
        assert_eq!(Penalizer::parse("tv:0.01", &c).unwrap().smoothing_eps(), 0.01);
        assert_eq!(Penalizer::parse("tv", &c).unwrap().smoothing_eps(), DEFAULT_TV_EPS);
        assert_eq!(Penalizer::parse("bv:0.2", &c).unwrap().kind(), PenalizerKind::BvNorm);
        assert_eq!(
            Penalizer::parse("seminorm:grad:1.5", &c).unwrap().kind(),
            PenalizerKind::SeminormPower
        );
        for bad in ["", "l3", "tv:x", "seminorm:id", "seminorm:foo:2", "sum:", "sum:1*id", "sum:0*id^2", "struct"] {
            assert!(matches!(Penalizer::parse(bad, &c), Err(Error::Config(_))), "{bad}");
        }
        // struct without gamma
        assert!(matches!(Penalizer::parse("sum:1*struct^2", &c), Err(Error::Config(_))));
    }

    #[test]
    fn smoothed_tv_decreases_to_exact_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_image(&mut rng, 8, 8);
        let exact = Penalizer::total_variation(0.0).unwrap().value(&x).unwrap();
        let mut prev = f64::MIN;
        for eps in [1.0, 0.3, 0.1, 1e-2, 1e-3, 1e-4, 1e-6] {
            let v = Penalizer::total_variation(eps).unwrap().value(&x).unwrap();
            assert!(v >= prev, "not monotone in eps");
            assert!(v <= exact + 1e-12);
            prev = v;
        }
        assert!((exact - prev).abs() <= 1e-5 * exact);
    }

    proptest! {
        #[test]
        fn nonnegative_and_convex(seed in any::<u64>(), t in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = ctx(5, 4, &mut rng);
            let x = random_image(&mut rng, 5, 4);
            let y = random_image(&mut rng, 5, 4);
            let mid = x.scaled(t).axpy(1.0 - t, &y).unwrap();
            for w in all_penalizers(&c) {
                let (wx, wy, wm) = (w.value(&x).unwrap(), w.value(&y).unwrap(), w.value(&mid).unwrap());
                prop_assert!(wx >= -w.lower_bound());
                prop_assert!(wm <= t * wx + (1.0 - t) * wy + 1e-12 * (wx + wy).max(1.0));
            }
        }

        #[test]
        fn homogeneity(seed in any::<u64>(), s in -4.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_image(&mut rng, 6, 5);
            let sx = x.scaled(s);
            let tv = Penalizer::total_variation(0.0).unwrap();
            let (a, b) = (tv.value(&sx).unwrap(), s.abs() * tv.value(&x).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-12));
            for q in [1.0, 1.5, 2.0, 3.0] {
                let w = Penalizer::seminorm_power(OperatorHandle::gradient(6, 5).unwrap(), q).unwrap();
                let (a, b) = (w.value(&sx).unwrap(), s.abs().powf(q) * w.value(&x).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-12));
            }
        }
    }
}
