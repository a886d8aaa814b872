//! L-curve sweeps and corner selection.
//!
//! A sweep solves the problem for a descending list of `α`, warm-starting
//! each solve from the previous minimizer, and records `‖Tx_α − y‖` and the
//! penalty `W(x_α)` (without the factor `α`). The corner is the interior
//! point of largest signed Menger curvature on the log-log curve, with
//! points ordered by increasing `α`: a convex corner turns counterclockwise.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{norm_l2, GridFunction};
use crate::solver::{solve, Problem, SolverOptions};

/// Zero residuals or penalties are replaced by this before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;
/// Curvatures at or below this count as zero.
pub const CURVATURE_EPS: f64 = 1e-12;
const MIN_POINTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct LCurve {
    /// Strictly decreasing.
    pub alphas: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub penalty_values: Vec<f64>,
    /// Entries whose solve failed or whose values hit [`LOG_FLOOR`].
    pub flags: Vec<bool>,
    pub corner_index: Option<usize>,
    /// Set when the monotone-exchange post-check failed.
    pub monotone_violation: bool,
}

impl LCurve {
    /// Curve from precomputed columns, in any `α` order. Non-positive values
    /// are floored and flagged.
    pub fn from_points(alphas: Vec<f64>, residuals: Vec<f64>, penalties: Vec<f64>) -> Result<Self> {
        if alphas.len() != residuals.len() || alphas.len() != penalties.len() {
            return Err(Error::param("L-curve columns differ in length"));
        }
        if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::param("alphas must be positive and finite"));
        }
        let mut flags = vec![false; alphas.len()];
        let mut floor = |v: f64, i: usize| {
            if v > 0.0 {
                v
            } else {
                flags[i] = true;
                LOG_FLOOR
            }
        };
        let residual_norms: Vec<f64> = residuals.iter().enumerate().map(|(i, &v)| floor(v, i)).collect();
        let penalty_values: Vec<f64> = penalties.iter().enumerate().map(|(i, &v)| floor(v, i)).collect();
        let mut curve = LCurve {
            alphas,
            residual_norms,
            penalty_values,
            flags,
            corner_index: None,
            monotone_violation: false,
        };
        curve.monotone_violation = !curve.is_monotone();
        Ok(curve)
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Unflagged indices sorted by increasing `α`.
    fn ascending_valid(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| !self.flags[i]).collect();
        idx.sort_by(|&a, &b| self.alphas[a].total_cmp(&self.alphas[b]));
        idx
    }

    /// Residual nondecreasing and penalty nonincreasing in `α`, with
    /// `1e−10` slack relative to `max(1, |value|)`.
    pub fn is_monotone(&self) -> bool {
        let idx = self.ascending_valid();
        idx.windows(2).all(|w| {
            let (lo, hi) = (w[0], w[1]);
            let slack = |v: f64| 1e-10 * v.abs().max(1.0);
            let (r1, r2) = (self.residual_norms[lo], self.residual_norms[hi]);
            let (p1, p2) = (self.penalty_values[lo], self.penalty_values[hi]);
            r1 <= r2 + slack(r2) && p1 >= p2 - slack(p2)
        })
    }

    /// Signed Menger curvature per entry (in the curve's own order); `None`
    /// for endpoints and flagged entries.
    pub fn curvatures(&self) -> Vec<Option<f64>> {
        let idx = self.ascending_valid();
        let mut out = vec![None; self.len()];
        for w in idx.windows(3) {
            let pt = |i: usize| (self.residual_norms[i].ln(), self.penalty_values[i].ln());
            out[w[1]] = Some(menger(pt(w[0]), pt(w[1]), pt(w[2])));
        }
        out
    }

    /// CSV with columns `alpha, residual, penalty, curvature, is_corner`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "alpha,residual,penalty,curvature,is_corner")?;
        let curv = self.curvatures();
        for (i, k) in curv.iter().enumerate() {
            let c = k.map(|c| format!("{c:e}")).unwrap_or_default();
            writeln!(
                out,
                "{:e},{:e},{:e},{},{}",
                self.alphas[i],
                self.residual_norms[i],
                self.penalty_values[i],
                c,
                u8::from(self.corner_index == Some(i)),
            )?;
        }
        Ok(())
    }
}

/// Signed curvature of the circle through three points; positive for a
/// counterclockwise turn, zero for collinear or repeated points.
fn menger(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
    let d = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0).hypot(q.1 - p.1);
    let denom = d(a, b) * d(b, c) * d(a, c);
    if denom > 0.0 {
        2.0 * cross / denom
    } else {
        0.0
    }
}

/// `count` log-spaced values from `hi` down to `lo`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) || count < 2 {
        return Err(Error::param("log grid needs 0 < lo < hi and at least two points"));
    }
    let (a, b) = (hi.log10(), lo.log10());
    Ok((0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            10f64.powf(a + t * (b - a))
        })
        .collect())
}

/// Default grid: 25 values over six decades, from 1 down to 1e−6.
pub fn default_alphas() -> Vec<f64> {
    log_spaced(1e-6, 1.0, 25).expect("static grid")
}

/// Solves `template` for every `α` (strictly decreasing, positive, at least
/// five) and locates the corner. A failed solve flags its entry; fewer than
/// five usable entries is an error.
pub fn sweep(template: &Problem, alphas: &[f64], opts: &SolverOptions) -> Result<LCurve> {
    if alphas.len() < MIN_POINTS {
        return Err(Error::param(format!(
            "L-curve needs at least {MIN_POINTS} alphas, got {}",
            alphas.len()
        )));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::param("alphas must be positive and finite"));
    }
    if alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("alphas must be strictly decreasing"));
    }
    template.validate()?;

    let mut residuals = Vec::with_capacity(alphas.len());
    let mut penalties = Vec::with_capacity(alphas.len());
    let mut failed = vec![false; alphas.len()];
    let mut warm: Option<GridFunction> = opts.initial_guess.clone();
    for (i, &alpha) in alphas.iter().enumerate() {
        let p = template.with_alpha(alpha);
        let mut o = opts.clone();
        o.initial_guess = warm.clone();
        match solve(&p, &o) {
            Ok(report) => {
                if !report.converged {
                    log::warn!("solve at alpha {alpha:e} stopped before reaching tolerance");
                }
                let x = report.minimizer;
                residuals.push(norm_l2(&p.forward.apply(&x)?.sub(&p.data)?));
                penalties.push(p.penalizer.value(&x)?);
                warm = Some(x);
            }
            Err(e) if e.is_numerical() => {
                log::warn!("solve at alpha {alpha:e} failed: {e}");
                failed[i] = true;
                residuals.push(f64::NAN);
                penalties.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    let mut curve = LCurve::from_points(alphas.to_vec(), residuals, penalties)?;
    for (flag, f) in curve.flags.iter_mut().zip(failed) {
        *flag |= f;
    }
    curve.monotone_violation = !curve.is_monotone();
    if curve.monotone_violation {
        log::warn!("L-curve columns are not monotone in alpha");
    }
    let valid = curve.flags.iter().filter(|f| !**f).count();
    if valid < MIN_POINTS {
        return Err(Error::Sweep(format!("only {valid} usable points in the sweep")));
    }
    curve.corner_index = corner(&curve).ok().map(|(_, i)| i);
    Ok(curve)
}

/// `(α*, index)` of the corner: the interior point of largest positive
/// curvature (a convex, counterclockwise turn); ties go to the larger `α`.
///
/// A well-conditioned forward operator gives a curve without a vertical
/// branch that only turns clockwise. In that case the point of largest
/// curvature magnitude is returned instead.
pub fn corner(curve: &LCurve) -> Result<(f64, usize)> {
    let valid = curve.flags.iter().filter(|f| !**f).count();
    if valid < MIN_POINTS {
        return Err(Error::NoCorner(format!("need {MIN_POINTS} unflagged points, have {valid}")));
    }
    let curv = curve.curvatures();
    let pick = |score: &dyn Fn(f64) -> f64| {
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in curv.iter().enumerate() {
            let Some(c) = *c else { continue };
            let s = score(c);
            if s <= CURVATURE_EPS {
                continue;
            }
            best = match best {
                Some((bs, bi)) if s < bs || (s == bs && curve.alphas[i] <= curve.alphas[bi]) => Some((bs, bi)),
                _ => Some((s, i)),
            };
        }
        best.map(|(_, i)| i)
    };
    if let Some(i) = pick(&|c| c) {
        return Ok((curve.alphas[i], i));
    }
    match pick(&f64::abs) {
        Some(i) => {
            log::info!("L-curve has no convex turn; using the largest concave one");
            Ok((curve.alphas[i], i))
        }
        None => Err(Error::NoCorner("log-log points are collinear".into())),
    }
}
