//! End-to-end deblurring: phantom or file input, Gaussian blur, seeded
//! noise, optional L-curve parameter choice, restoration and metrics.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::grid::{norm_l2, norm_linf, GridFunction};
use crate::lcurve::{self, LCurve};
use crate::operators::{forward_differences, OperatorHandle, StructuralField};
use crate::penalizer::{Penalizer, PenalizerContext};
use crate::pgm::{read_pgm, write_pgm};
use crate::solver::{solve, Problem, SolverOptions};
use crate::stability::{self, PerturbTargets, PerturbationSchedule, StabilityReport};

/// Reported when the restored image equals the reference exactly.
pub const PSNR_CAP: f64 = 300.0;

/// `g + η` with `η` i.i.d. normal, mean zero and standard deviation
/// `level · ‖g‖∞`, drawn in row-major order from ChaCha20 keyed by `seed`.
pub fn add_noise(g: &GridFunction, level: f64, seed: u64) -> Result<GridFunction> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::param(format!("noise level must be nonnegative, got {level}")));
    }
    if level == 0.0 {
        return Ok(g.clone());
    }
    let sigma = level * norm_linf(g);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(g.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)))
}

/// Built-in unit-range test images: `blocks` (overlapping rectangles, four
/// gray levels), `cross` (bright cross on a dark background, symmetric
/// under quarter turns when square) and `ramp` (`col / (width − 1)`).
pub fn make_phantom(name: &str, width: usize, height: usize) -> Result<GridFunction> {
    if width == 0 || height == 0 {
        return Err(Error::param("phantom dimensions must be positive"));
    }
    let (w, h) = (width as f64, height as f64);
    let f = match name {
        "ramp" => GridFunction::from_fn(width, height, |_, c| {
            if width > 1 {
                c as f64 / (w - 1.0)
            } else {
                0.0
            }
        }),
        "blocks" => {
            let inside = |r: usize, c: usize, r0: f64, r1: f64, c0: f64, c1: f64| {
                let (y, x) = ((r as f64 + 0.5) / h, (c as f64 + 0.5) / w);
                y >= r0 && y < r1 && x >= c0 && x < c1
            };
            GridFunction::from_fn(width, height, |r, c| {
                if inside(r, c, 0.55, 0.85, 0.5, 0.8) {
                    0.5
                } else if inside(r, c, 0.15, 0.45, 0.2, 0.7) {
                    1.0
                } else if inside(r, c, 0.3, 0.75, 0.1, 0.35) {
                    0.75
                } else {
                    0.0
                }
            })
        }
        "cross" => {
            let m = |n: f64| (n - 1.0) / 2.0;
            let half_width = w.min(h) / 10.0;
            let arm = w.min(h) * 0.35;
            GridFunction::from_fn(width, height, |r, c| {
                let (dr, dc) = ((r as f64 - m(h)).abs(), (c as f64 - m(w)).abs());
                let on = dr <= arm && dc <= arm && (dr <= half_width || dc <= half_width);
                if on {
                    1.0
                } else {
                    0.0
                }
            })
        }
        other => {
            return Err(Error::param(format!(
                "unknown phantom `{other}` (expected blocks, cross or ramp)"
            )))
        }
    };
    Ok(f)
}

/// Thresholded gradient magnitude: 1 where `|∇f| > 0.1 · max|∇f|`, else 0.
pub fn edge_map(f: &GridFunction) -> Result<GridFunction> {
    if f.channels() != 1 {
        return Err(Error::UnsupportedShape {
            shape: f.shape(),
            reason: "edge map needs a single-channel image".into(),
        });
    }
    let (w, h) = (f.width(), f.height());
    let mut g = vec![0.0; 2 * w * h];
    forward_differences(w, h, f.values(), &mut g);
    let mag: Vec<f64> = g.chunks_exact(2).map(|d| d[0].hypot(d[1])).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let threshold = 0.1 * max;
    GridFunction::image(w, h, mag.iter().map(|&m| if max > 0.0 && m > threshold { 1.0 } else { 0.0 }).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestorationMetrics {
    /// `‖f̂ − f‖ / ‖f‖`.
    pub relative_l2_error: f64,
    /// `10 log₁₀(1 / mse)`, at most [`PSNR_CAP`].
    pub psnr_db: f64,
    /// `‖K f̂ − g̃‖`.
    pub data_residual: f64,
}

pub fn compute_metrics(
    f_true: &GridFunction,
    f_hat: &GridFunction,
    g_noisy: &GridFunction,
    forward: &OperatorHandle,
) -> Result<RestorationMetrics> {
    let diff = f_hat.sub(f_true)?;
    let reference = norm_l2(f_true);
    if reference == 0.0 {
        return Err(Error::param("relative error is undefined for a zero reference image"));
    }
    let err = norm_l2(&diff);
    let mse = err * err / f_true.len() as f64;
    let psnr_db = if mse > 0.0 { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) } else { PSNR_CAP };
    let data_residual = norm_l2(&forward.apply(f_hat)?.sub(g_noisy)?);
    Ok(RestorationMetrics {
        relative_l2_error: err / reference,
        psnr_db,
        data_residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputSource {
    Phantom(String),
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaChoice {
    Fixed(f64),
    LCurve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub input: InputSource,
    /// Phantom size; ignored for file input.
    pub width: usize,
    pub height: usize,
    pub gamma: Option<PathBuf>,
    pub kappa: f64,
    pub blur_radius: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub penalizer: String,
    pub c: f64,
    pub alpha: AlphaChoice,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_count: usize,
    pub max_iterations: usize,
    /// Files are written only when set.
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: InputSource::Phantom("blocks".into()),
            width: 64,
            height: 64,
            gamma: None,
            kappa: 6.0,
            blur_radius: 3,
            noise_level: 0.01,
            seed: 0,
            penalizer: "grad2".into(),
            c: 5.0,
            alpha: AlphaChoice::LCurve,
            alpha_min: 1e-6,
            alpha_max: 1.0,
            alpha_count: 25,
            max_iterations: SolverOptions::default().max_iterations,
            output_dir: None,
        }
    }
}

const PIPELINE_KEYS: &[&str] = &[
    "input",
    "width",
    "height",
    "gamma",
    "kappa",
    "blur_radius",
    "noise_level",
    "seed",
    "penalizer",
    "c",
    "alpha",
    "alpha_min",
    "alpha_max",
    "alpha_count",
    "max_iterations",
    "output_dir",
];

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_input(value: &str, base: &Path) -> InputSource {
    match value.strip_prefix("phantom:") {
        Some(name) => InputSource::Phantom(name.trim().to_string()),
        None => InputSource::File(resolve(base, value)),
    }
}

impl PipelineConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let flat = FlatConfig::parse(text, PIPELINE_KEYS)?;
        let d = PipelineConfig::default();
        let alpha = match flat.get("alpha") {
            None | Some("lcurve") => AlphaChoice::LCurve,
            Some(_) => AlphaChoice::Fixed(flat.value("alpha")?.unwrap_or_default()),
        };
        let cfg = PipelineConfig {
            input: flat.get("input").map(|v| parse_input(v, base_dir)).unwrap_or(d.input),
            width: flat.value_or("width", d.width)?,
            height: flat.value_or("height", d.height)?,
            gamma: flat.get("gamma").map(|v| resolve(base_dir, v)),
            kappa: flat.value_or("kappa", d.kappa)?,
            blur_radius: flat.value_or("blur_radius", d.blur_radius)?,
            noise_level: flat.value_or("noise_level", d.noise_level)?,
            seed: flat.value_or("seed", d.seed)?,
            penalizer: flat.get("penalizer").map(str::to_string).unwrap_or(d.penalizer),
            c: flat.value_or("c", d.c)?,
            alpha,
            alpha_min: flat.value_or("alpha_min", d.alpha_min)?,
            alpha_max: flat.value_or("alpha_max", d.alpha_max)?,
            alpha_count: flat.value_or("alpha_count", d.alpha_count)?,
            max_iterations: flat.value_or("max_iterations", d.max_iterations)?,
            output_dir: flat.get("output_dir").map(|v| resolve(base_dir, v)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be positive");
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad("noise_level must be nonnegative");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c must be positive");
        }
        if let AlphaChoice::Fixed(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return bad("alpha must be nonnegative or `lcurve`");
            }
        }
        if !(self.alpha_min > 0.0 && self.alpha_max > self.alpha_min) || self.alpha_count < 5 {
            return bad("alpha grid needs 0 < alpha_min < alpha_max and alpha_count ≥ 5");
        }
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive");
        }
        if self.penalizer.contains("struct") && self.gamma.is_none() && matches!(self.input, InputSource::File(_)) {
            return bad("structural penalizers on file input need a gamma image");
        }
        Ok(())
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        lcurve::log_spaced(self.alpha_min, self.alpha_max, self.alpha_count)
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            ..SolverOptions::default()
        }
    }
}

/// Ground truth, the degraded observations and the restoration problem
/// with `α` still free.
#[derive(Clone, Debug)]
pub struct Degraded {
    pub truth: GridFunction,
    pub synthetic: bool,
    pub blurred: GridFunction,
    pub noisy: GridFunction,
    pub template: Problem,
}

pub fn degrade(cfg: &PipelineConfig) -> Result<Degraded> {
    cfg.validate()?;
    let (truth, synthetic) = match &cfg.input {
        InputSource::Phantom(name) => (make_phantom(name, cfg.width, cfg.height), true),
        InputSource::File(path) => (fs::read(path).map_err(Error::from).and_then(|b| read_pgm(&b)), false),
    };
    let truth = truth.map_err(|e| e.at_stage("load"))?;
    let (w, h) = (truth.width(), truth.height());

    let forward = OperatorHandle::gaussian_blur(w, h, cfg.kappa, cfg.blur_radius).map_err(|e| e.at_stage("blur"))?;
    let blurred = forward.apply(&truth).map_err(|e| e.at_stage("blur"))?;
    let noisy = add_noise(&blurred, cfg.noise_level, cfg.seed).map_err(|e| e.at_stage("noise"))?;

    let mut ctx = PenalizerContext::new(w, h);
    if cfg.penalizer.contains("struct") {
        let gamma = match &cfg.gamma {
            Some(path) => fs::read(path).map_err(Error::from).and_then(|b| read_pgm(&b)),
            None => edge_map(&truth),
        }
        .map_err(|e| e.at_stage("load"))?;
        if gamma.shape() != truth.shape() {
            return Err(Error::Config(format!(
                "gamma image is {} but the input is {}",
                gamma.shape(),
                truth.shape()
            )));
        }
        ctx = ctx.with_structural(StructuralField::new(gamma, cfg.c)?);
    }
    let penalizer = Penalizer::parse(&cfg.penalizer, &ctx)?;
    let template = Problem::new(forward, noisy.clone(), penalizer, 1.0)?;
    Ok(Degraded {
        truth,
        synthetic,
        blurred,
        noisy,
        template,
    })
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub metrics: RestorationMetrics,
    pub alpha: f64,
    /// `‖g̃ − f‖ / ‖f‖`: the error of doing nothing.
    pub degraded_relative_error: f64,
    pub restored: GridFunction,
    pub truth: GridFunction,
    pub noisy: GridFunction,
    pub lcurve: Option<LCurve>,
}

/// Sweep only: the L-curve of the degraded problem over the configured
/// grid, written to `lcurve.csv` when an output directory is set.
pub fn run_lcurve(cfg: &PipelineConfig) -> Result<LCurve> {
    let d = degrade(cfg)?;
    let curve = lcurve::sweep(&d.template, &cfg.alphas()?, &cfg.solver_options()).map_err(|e| e.at_stage("lcurve"))?;
    if let Some(dir) = &cfg.output_dir {
        write_outputs(dir, &[], Some(&curve)).map_err(|e| e.at_stage("write"))?;
    }
    Ok(curve)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let d = degrade(cfg)?;
    let opts = cfg.solver_options();
    let (alpha, curve) = match cfg.alpha {
        AlphaChoice::Fixed(a) => (a, None),
        AlphaChoice::LCurve => {
            let curve = lcurve::sweep(&d.template, &cfg.alphas()?, &opts).map_err(|e| e.at_stage("lcurve"))?;
            let (a, _) = lcurve::corner(&curve).map_err(|e| e.at_stage("lcurve"))?;
            (a, Some(curve))
        }
    };
    let problem = d.template.with_alpha(alpha);
    let report = solve(&problem, &opts).map_err(|e| e.at_stage("solve"))?;
    if !report.converged {
        log::warn!("restoration stopped after {} iterations before reaching tolerance", report.iterations);
    }
    let restored = report.minimizer;
    let metrics = compute_metrics(&d.truth, &restored, &d.noisy, &problem.forward).map_err(|e| e.at_stage("metrics"))?;
    let degraded_relative_error = d.noisy.distance(&d.truth)? / norm_l2(&d.truth);

    if let Some(dir) = &cfg.output_dir {
        let mut images = vec![("g_blurred.pgm", &d.blurred), ("g_noisy.pgm", &d.noisy), ("f_restored.pgm", &restored)];
        if d.synthetic {
            images.insert(0, ("f_true.pgm", &d.truth));
        }
        write_outputs(dir, &images, curve.as_ref()).map_err(|e| e.at_stage("write"))?;
        let csv = format!(
            "penalizer,alpha,relative_l2_error,psnr_db,data_residual,degraded_relative_error\n{},{:e},{:e},{:e},{:e},{:e}\n",
            cfg.penalizer, alpha, metrics.relative_l2_error, metrics.psnr_db, metrics.data_residual, degraded_relative_error
        );
        fs::write(dir.join("metrics.csv"), csv).map_err(|e| Error::from(e).at_stage("write"))?;
    }
    Ok(PipelineOutcome {
        metrics,
        alpha,
        degraded_relative_error,
        restored,
        truth: d.truth,
        noisy: d.noisy,
        lcurve: curve,
    })
}

fn write_outputs(dir: &Path, images: &[(&str, &GridFunction)], curve: Option<&LCurve>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, img) in images {
        fs::write(dir.join(name), write_pgm(img)?)?;
    }
    if let Some(curve) = curve {
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        fs::write(dir.join("lcurve.csv"), buf)?;
    }
    Ok(())
}

/// Settings for a stability experiment on a blurred phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityConfig {
    pub phantom: String,
    pub width: usize,
    pub height: usize,
    pub kappa: f64,
    pub blur_radius: usize,
    pub penalizer: String,
    pub alpha: f64,
    pub count: usize,
    pub radius: f64,
    pub targets: PerturbTargets,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            phantom: "blocks".into(),
            width: 6,
            height: 6,
            kappa: 6.0,
            blur_radius: 3,
            penalizer: "grad2".into(),
            alpha: 0.1,
            count: 10,
            radius: 0.05,
            targets: PerturbTargets { data: true, weights: true, operator: false },
            seed: 0,
            output_dir: None,
        }
    }
}

const STABILITY_KEYS: &[&str] = &[
    "phantom",
    "width",
    "height",
    "kappa",
    "blur_radius",
    "penalizer",
    "alpha",
    "count",
    "radius",
    "perturb",
    "seed",
    "output_dir",
];

impl StabilityConfig {
    /// `perturb` is a comma-separated subset of `data`, `weights`,
    /// `operator`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let flat = FlatConfig::parse(text, STABILITY_KEYS)?;
        let d = StabilityConfig::default();
        let targets = match flat.get("perturb") {
            None => d.targets,
            Some(list) => {
                let mut t = PerturbTargets::default();
                for item in list.split(',').map(str::trim) {
                    match item {
                        "data" => t.data = true,
                        "weights" => t.weights = true,
                        "operator" => t.operator = true,
                        other => return Err(Error::Config(format!("unknown perturbation target `{other}`"))),
                    }
                }
                t
            }
        };
        let cfg = StabilityConfig {
            phantom: flat.get("phantom").map(str::to_string).unwrap_or(d.phantom),
            width: flat.value_or("width", d.width)?,
            height: flat.value_or("height", d.height)?,
            kappa: flat.value_or("kappa", d.kappa)?,
            blur_radius: flat.value_or("blur_radius", d.blur_radius)?,
            penalizer: flat.get("penalizer").map(str::to_string).unwrap_or(d.penalizer),
            alpha: flat.value_or("alpha", d.alpha)?,
            count: flat.value_or("count", d.count)?,
            radius: flat.value_or("radius", d.radius)?,
            targets,
            seed: flat.value_or("seed", d.seed)?,
            output_dir: flat.get("output_dir").map(|v| resolve(base_dir, v)),
        };
        let positive = |v: f64| v > 0.0;
        if !positive(cfg.alpha) || cfg.count == 0 || !positive(cfg.radius) || !positive(cfg.kappa) {
            return Err(Error::Config("alpha, count, radius and kappa must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Runs the experiment and writes `stability.csv` when an output directory
/// is set.
pub fn run_stability_config(cfg: &StabilityConfig) -> Result<StabilityReport> {
    let truth = make_phantom(&cfg.phantom, cfg.width, cfg.height).map_err(|e| e.at_stage("load"))?;
    let forward = OperatorHandle::gaussian_blur(cfg.width, cfg.height, cfg.kappa, cfg.blur_radius)?;
    let data = forward.apply(&truth)?;
    let penalizer = Penalizer::parse(&cfg.penalizer, &PenalizerContext::new(cfg.width, cfg.height))?;
    if !penalizer.is_quadratic() {
        return Err(Error::Config("stability experiments need a quadratic penalizer".into()));
    }
    let p = Problem::new(forward, data, penalizer, cfg.alpha)?;
    let sched = PerturbationSchedule::geometric(&p, cfg.count, cfg.radius, cfg.targets, cfg.seed)
        .map_err(|e| e.at_stage("schedule"))?;
    let report = stability::run_stability_experiment(&p, &sched).map_err(|e| e.at_stage("stability"))?;
    if let Some(dir) = &cfg.output_dir {
        let write = || -> Result<()> {
            fs::create_dir_all(dir)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            fs::write(dir.join("stability.csv"), buf)?;
            Ok(())
        };
        write().map_err(|e| e.at_stage("write"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalizer::Penalizer;

    #[test]
    fn zero_noise_is_exact_copy_and_seeds_repeat() {
        let g = make_phantom("blocks", 16, 16).unwrap();
        assert_eq!(add_noise(&g, 0.0, 9).unwrap(), g);
        assert_eq!(add_noise(&g, 0.01, 9).unwrap(), add_noise(&g, 0.01, 9).unwrap());
        assert_ne!(add_noise(&g, 0.01, 9).unwrap(), add_noise(&g, 0.01, 10).unwrap());
        assert!(add_noise(&g, -0.1, 0).is_err());
    }

    #[test]
    fn noise_sample_statistics() {
        let g = GridFunction::from_fn(256, 256, |r, c| ((r * 256 + c) % 7) as f64 / 6.0);
        let noisy = add_noise(&g, 0.01, 42).unwrap();
        let eta = noisy.sub(&g).unwrap();
        let n = eta.len() as f64;
        let mean = eta.values().iter().sum::<f64>() / n;
        let sd = (eta.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = 0.01 * norm_linf(&g);
        assert!((sd - target).abs() <= 0.05 * target, "{sd} vs {target}");
    }

    #[test]
    fn phantoms() {
        let ramp = make_phantom("ramp", 4, 1).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        assert!(ramp.values().iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-15));

        let blocks = make_phantom("blocks", 64, 64).unwrap();
        let mut levels: Vec<f64> = blocks.values().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert!(levels.len() <= 4 && levels.len() > 1);
        assert!(Penalizer::total_variation(0.0).unwrap().value(&blocks).unwrap() > 0.0);

        let cross = make_phantom("cross", 64, 64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                assert_eq!(cross.get(r, c, 0), cross.get(c, 63 - r, 0));
            }
        }
        assert!(make_phantom("disc", 8, 8).is_err());
    }

    #[test]
    fn metrics_examples() {
        let f = make_phantom("blocks", 16, 16).unwrap().map(|v| 0.8 * v);
        let id = OperatorHandle::identity(f.shape());
        let m = compute_metrics(&f, &f, &f, &id).unwrap();
        assert_eq!((m.relative_l2_error, m.psnr_db, m.data_residual), (0.0, PSNR_CAP, 0.0));

        let shifted = f.map(|v| v + 0.1);
        let m = compute_metrics(&f, &shifted, &f, &id).unwrap();
        assert!((m.psnr_db - 20.0).abs() < 1e-9);

        // naive loop oracle
        let g = GridFunction::from_fn(16, 16, |r, c| ((r * 3 + c * 5) % 11) as f64 / 10.0);
        let m = compute_metrics(&f, &g, &shifted, &id).unwrap();
        let (mut se, mut ref2, mut res2) = (0.0, 0.0, 0.0);
        for i in 0..f.len() {
            se += (g.values()[i] - f.values()[i]).powi(2);
            ref2 += f.values()[i].powi(2);
            res2 += (g.values()[i] - shifted.values()[i]).powi(2);
        }
        assert!((m.relative_l2_error - (se / ref2).sqrt()).abs() < 1e-12);
        assert!((m.psnr_db - 10.0 * (f.len() as f64 / se).log10()).abs() < 1e-12);
        assert!((m.data_residual - res2.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn edge_map_marks_jumps() {
        let f = make_phantom("cross", 32, 32).unwrap();
        let e = edge_map(&f).unwrap();
        assert!(e.values().contains(&1.0));
        assert_eq!(e.get(0, 0, 0), 0.0);
        assert!(edge_map(&GridFunction::constant(f.shape(), 0.3)).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::parse(
            "input = phantom:cross\nwidth = 32\nheight = 16\nalpha = 0.01\npenalizer = tv\noutput_dir = out\n",
            Path::new("/tmp/base"),
        )
        .unwrap();
        assert_eq!(cfg.input, InputSource::Phantom("cross".into()));
        assert_eq!((cfg.width, cfg.height), (32, 16));
        assert_eq!(cfg.alpha, AlphaChoice::Fixed(0.01));
        assert_eq!(cfg.output_dir.as_deref(), Some(Path::new("/tmp/base/out")));
        assert_eq!(cfg.kappa, 6.0);

        let cfg = PipelineConfig::parse("input = img.pgm\n", Path::new("/data")).unwrap();
        assert_eq!(cfg.input, InputSource::File(PathBuf::from("/data/img.pgm")));
        assert_eq!(cfg.alpha, AlphaChoice::LCurve);

        for bad in [
            "noise_level = -1",
            "kappa = 0",
            "colour = red",
            "alpha = soon",
            "input = a.pgm\npenalizer = sum:0.8*id^2+0.2*struct^2",
        ] {
            assert!(matches!(PipelineConfig::parse(bad, Path::new(".")), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn near_identity_blur_without_noise_recovers_input() {
        let cfg = PipelineConfig {
            width: 16,
            height: 16,
            kappa: 1e6,
            noise_level: 0.0,
            penalizer: "l2".into(),
            alpha: AlphaChoice::Fixed(0.0),
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&cfg).unwrap();
        assert!(out.metrics.relative_l2_error <= 1e-6);
    }

    #[test]
    fn stage_names_surface() {
        let cfg = PipelineConfig {
            input: InputSource::File(PathBuf::from("/nonexistent/regkit/input.pgm")),
            ..PipelineConfig::default()
        };
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "load", .. }), "{err}");
    }

    #[test]
    fn stability_config_runs() {
        let cfg = StabilityConfig::parse("count = 6\nperturb = data, weights\n", Path::new(".")).unwrap();
        let report = run_stability_config(&cfg).unwrap();
        assert_eq!(report.errors.len(), 6);
        assert!(report.bounds_ok() && report.identities_ok());
        assert!(StabilityConfig::parse("perturb = gamma", Path::new(".")).is_err());
        assert!(StabilityConfig::parse("penalizer = tv", Path::new("."))
            .and_then(|c| run_stability_config(&c))
            .is_err());
    }
}
