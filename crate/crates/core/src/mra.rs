//! Multi-reference alignment over SE(2): synthetic data from the image
//! formation model, debiased bispectrum estimation, inversion, alignment to
//! the ground truth, and back-projection.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::{align, refine_alignment, rotation_sequence, RotationSequence, DEFAULT_SEQUENCE_LEN};
use crate::bispectrum::{bispectrum, relative_error};
use crate::clebsch_gordan::CgTable;
use crate::error::{invalid, Error, Result};
use crate::estimation::{build_debias, estimate_bispectrum, DebiasOperators};
use crate::harmonics::ShCoefficients;
use crate::image::{apply_rigid_motion, ImageGrid};
use crate::inversion::{invert_bispectrum, InversionOptions};
use crate::lie::RigidMotion;
use crate::projection::{back_project, default_quadrature, random_unit_shell_coefficients, ProjectionOperator};
use crate::quadrature::SphericalDesign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initializer {
    /// Projected truth with relative Gaussian noise on the real parameters.
    OraclePerturbed { relative_noise: f64 },
    /// Random unit-shell coefficients scaled to the truth's norm.
    Random,
}

impl Default for Initializer {
    fn default() -> Self {
        Initializer::OraclePerturbed { relative_noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MraConfig {
    pub n: usize,
    pub num_images: usize,
    /// Maximal translation in pixels.
    pub t_max: f64,
    /// Mean clean-pixel power over noise variance; `None` means noiseless.
    pub snr: Option<f64>,
    pub bandlimit: usize,
    pub lambda: f64,
    pub seed: u64,
    pub initializer: Initializer,
    pub inversion: InversionOptions,
    pub sequence_len: usize,
    /// Polish the best sequence rotation by local pattern search.
    pub refine_alignment: bool,
}

impl Default for MraConfig {
    fn default() -> Self {
        Self {
            n: 101,
            num_images: 1000,
            t_max: 5.0,
            snr: Some(0.5),
            bandlimit: 16,
            lambda: 1.0,
            seed: 0,
            initializer: Initializer::default(),
            inversion: InversionOptions::default(),
            sequence_len: DEFAULT_SEQUENCE_LEN,
            refine_alignment: true,
        }
    }
}

impl MraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 {
            return invalid("num_images must be at least 1");
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return invalid(format!("t_max must be finite and >= 0, got {}", self.t_max));
        }
        if let Some(s) = self.snr {
            if !(s > 0.0) || !s.is_finite() {
                return invalid(format!("snr must be positive, got {s}"));
            }
        }
        if !(self.lambda > 0.0) {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.n < 3 || self.n % 2 == 0 {
            return invalid(format!("image side must be odd and >= 3, got {}", self.n));
        }
        if self.sequence_len == 0 {
            return invalid("sequence_len must be at least 1");
        }
        if let Initializer::OraclePerturbed { relative_noise } = self.initializer {
            if !(relative_noise >= 0.0) {
                return invalid("initializer noise must be >= 0");
            }
        }
        self.inversion.validate()
    }
}

/// Noise variance for a given SNR: mean squared clean pixel over the grid / snr.
pub fn noise_variance(truth: &ImageGrid, snr: Option<f64>) -> f64 {
    snr.map_or(0.0, |s| truth.mean_square() / s)
}

fn image_rng(seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    rng
}

/// theta, alpha ~ U[0, 2pi), r ~ U[0, t_max] in plane units.
fn draw_motion(rng: &mut ChaCha8Rng, t_max: f64) -> RigidMotion {
    let theta = rng.random::<f64>() * TAU;
    let alpha = rng.random::<f64>() * TAU;
    let r = rng.random::<f64>() * t_max;
    RigidMotion::new([r * alpha.cos(), r * alpha.sin()], theta)
}

/// The motion applied to the j-th observation.
pub fn image_motion(t_max_px: f64, spacing: f64, seed: u64, j: u64) -> RigidMotion {
    draw_motion(&mut image_rng(seed, j), t_max_px * spacing)
}

/// The j-th observation: a random rigid motion of `truth` plus white noise.
/// Each image draws from its own ChaCha stream, so any subset can be
/// regenerated independently.
pub fn synthesize_image(truth: &ImageGrid, t_max_px: f64, sigma2: f64, seed: u64, j: u64) -> ImageGrid {
    let mut rng = image_rng(seed, j);
    let g = draw_motion(&mut rng, t_max_px * truth.spacing());
    let mut img = apply_rigid_motion(truth, &g);
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for v in img.values_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sd * z;
        }
    }
    img
}

/// Lazily generated dataset.
pub struct Dataset<'a> {
    truth: &'a ImageGrid,
    t_max: f64,
    sigma2: f64,
    seed: u64,
    next: u64,
    len: u64,
}

impl Iterator for Dataset<'_> {
    type Item = ImageGrid;

    fn next(&mut self) -> Option<ImageGrid> {
        if self.next >= self.len {
            return None;
        }
        let img = synthesize_image(self.truth, self.t_max, self.sigma2, self.seed, self.next);
        self.next += 1;
        Some(img)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = (self.len - self.next) as usize;
        (r, Some(r))
    }
}

/// Whether a `reach`-pixel band along the border carries signal.
fn border_energy(truth: &ImageGrid, reach: usize) -> f64 {
    let n = truth.n();
    let reach = reach.min(n / 2);
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i < reach || j < reach || i >= n - reach || j >= n - reach {
                m = m.max(truth.get(i, j).abs());
            }
        }
    }
    m
}

pub fn synthesize_dataset<'a>(truth: &'a ImageGrid, cfg: &MraConfig) -> Result<Dataset<'a>> {
    cfg.validate()?;
    if truth.n() != cfg.n {
        return Err(Error::DimensionMismatch(format!("truth is {} pixels wide, config says {}", truth.n(), cfg.n)));
    }
    let reach = cfg.t_max.ceil() as usize + 1;
    let edge = border_energy(truth, reach);
    if edge > 1e-3 * truth.max_abs() {
        log::warn!(
            "truth has signal within {reach} px of the border ({:.2e} of its peak); motions will clip it",
            edge / truth.max_abs()
        );
    }
    Ok(Dataset {
        truth,
        t_max: cfg.t_max,
        sigma2: noise_variance(truth, cfg.snr),
        seed: cfg.seed,
        next: 0,
        len: cfg.num_images as u64,
    })
}

/// Relative error of the sphere round trip on `truth`.
pub fn back_projection_bound(truth: &ImageGrid, lambda: f64, bandlimit: usize, quad: &SphericalDesign) -> Result<f64> {
    if truth.norm() == 0.0 {
        return Err(Error::Numerical("back-projection bound of a zero image".into()));
    }
    let op = ProjectionOperator::new(bandlimit, quad, lambda, truth.n())?;
    let back = back_project(&op.apply(truth)?, lambda, truth.n())?;
    back.relative_error(truth)
}

/// Operators shared by every run with the same (n, L, lambda).
pub struct MraContext {
    pub op: ProjectionOperator,
    pub cg: CgTable,
    pub quad: SphericalDesign,
    /// Debias operators at unit noise variance.
    pub debias: DebiasOperators,
    pub sequence: RotationSequence,
}

impl MraContext {
    pub fn new(n: usize, bandlimit: usize, lambda: f64, sequence_len: usize) -> Result<Self> {
        Self::with_quadrature(n, bandlimit, lambda, sequence_len, default_quadrature(bandlimit))
    }

    /// As `new`, projecting and rotating with `quad` (strength should be >= 2L).
    pub fn with_quadrature(n: usize, bandlimit: usize, lambda: f64, sequence_len: usize, quad: SphericalDesign) -> Result<Self> {
        let op = ProjectionOperator::new(bandlimit, &quad, lambda, n)?;
        let cg = CgTable::build(bandlimit);
        let debias = build_debias(&op, &cg, 1.0)?;
        Ok(Self {
            op,
            cg,
            quad,
            debias,
            sequence: rotation_sequence(sequence_len)?,
        })
    }

    pub fn for_config(cfg: &MraConfig) -> Result<Self> {
        Self::new(cfg.n, cfg.bandlimit, cfg.lambda, cfg.sequence_len)
    }

    fn matches(&self, cfg: &MraConfig) -> bool {
        self.op.bandlimit() == cfg.bandlimit
            && self.op.image_side() == cfg.n
            && self.op.lambda() == cfg.lambda
            && self.sequence.len() == cfg.sequence_len
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub estimate_s: f64,
    pub invert_s: f64,
    pub align_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MraReport {
    pub n: usize,
    pub num_images: usize,
    pub t_max: f64,
    pub snr: Option<f64>,
    pub bandlimit: usize,
    pub lambda: f64,
    pub seed: u64,
    pub sigma2: f64,
    pub bispectrum_error: f64,
    pub initial_image_error: f64,
    pub image_error: f64,
    pub back_projection_bound: f64,
    pub inversion_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub alignment_correlation: f64,
    pub timings: Timings,
}

fn initial_guess(cfg: &MraConfig, truth_coeffs: &ShCoefficients) -> Result<ShCoefficients> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1417_1a11);
    match cfg.initializer {
        Initializer::OraclePerturbed { relative_noise } => {
            let mut p = truth_coeffs.symmetrized().to_real_params();
            let sd = relative_noise * truth_coeffs.norm() / (p.len() as f64).sqrt();
            let noise = Normal::new(0.0, sd.max(0.0)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            for v in &mut p {
                *v += noise.sample(&mut rng);
            }
            ShCoefficients::from_real_params(cfg.bandlimit, &p)
        }
        Initializer::Random => {
            let f = random_unit_shell_coefficients(&mut rng, cfg.bandlimit);
            Ok(f.scaled(truth_coeffs.norm() / f.norm()))
        }
    }
}

/// Full pipeline on one dataset; `ctx` must match the config.
pub fn run_mra(cfg: &MraConfig, truth: &ImageGrid, ctx: &MraContext) -> Result<MraReport> {
    cfg.validate()?;
    if !ctx.matches(cfg) {
        return invalid("MRA context was built for a different n, L, lambda or sequence length");
    }
    let start = Instant::now();
    let sigma2 = noise_variance(truth, cfg.snr);
    let debias = ctx.debias.with_sigma2(sigma2)?;
    let data = synthesize_dataset(truth, cfg)?;
    let estimate = estimate_bispectrum(data, &ctx.op, &ctx.cg, &debias)?;
    let t_est = start.elapsed().as_secs_f64();

    let truth_coeffs = ctx.op.apply(truth)?;
    let truth_b = bispectrum(&truth_coeffs, &ctx.cg)?;
    let bispectrum_error = relative_error(&estimate, &truth_b)?;
    let bound = back_project(&truth_coeffs.symmetrized(), cfg.lambda, cfg.n)?.relative_error(truth)?;

    let init = initial_guess(cfg, &truth_coeffs)?;
    let initial_image_error = back_project(&init, cfg.lambda, cfg.n)?.relative_error(truth)?;
    let inv = invert_bispectrum(&estimate, &init, &ctx.cg, &cfg.inversion)?;
    let t_inv = start.elapsed().as_secs_f64();

    let mut al = align(&inv.coefficients, &truth_coeffs, &ctx.sequence, &ctx.quad)?;
    if cfg.refine_alignment {
        let refined = refine_alignment(&inv.coefficients, &truth_coeffs, &al.rotation, &ctx.quad, 0.1, 1e-6)?;
        if refined.correlation >= al.correlation {
            al = refined;
        }
    }
    let image = back_project(&al.rotated.symmetrized(), cfg.lambda, cfg.n)?;
    let image_error = image.relative_error(truth)?;
    let total = start.elapsed().as_secs_f64();
    Ok(MraReport {
        n: cfg.n,
        num_images: cfg.num_images,
        t_max: cfg.t_max,
        snr: cfg.snr,
        bandlimit: cfg.bandlimit,
        lambda: cfg.lambda,
        seed: cfg.seed,
        sigma2,
        bispectrum_error,
        initial_image_error,
        image_error,
        back_projection_bound: bound,
        inversion_residual: inv.residual_norm,
        iterations: inv.iterations,
        converged: inv.converged,
        alignment_correlation: al.correlation,
        timings: Timings {
            estimate_s: t_est,
            invert_s: t_inv - t_est,
            align_s: total - t_inv,
            total_s: total,
        },
    })
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("slope fit needs at least two (x, y) pairs of equal length");
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return invalid("log-log fit needs positive values");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("slope fit needs distinct x values");
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub num_images: usize,
    pub snr: Option<f64>,
    pub mean_bispectrum_error: f64,
    pub mean_image_error: f64,
    pub mean_bound: f64,
    pub trials: Vec<MraReport>,
}

/// Runs `trials` repetitions (seeds seed, seed+1, ...) per (N, snr) pair.
/// Truth images come from `truth_for_trial`.
pub fn sweep<F>(base: &MraConfig, ns: &[usize], snrs: &[Option<f64>], trials: usize, ctx: &MraContext, truth_for_trial: F) -> Result<Vec<SweepPoint>>
where
    F: Fn(usize) -> Result<ImageGrid>,
{
    if trials == 0 {
        return invalid("at least one trial per point");
    }
    let truths: Vec<ImageGrid> = (0..trials).map(&truth_for_trial).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &snr in snrs {
        for &n in ns {
            let mut reports = Vec::with_capacity(trials);
            for (t, truth) in truths.iter().enumerate() {
                let cfg = MraConfig {
                    num_images: n,
                    snr,
                    seed: base.seed + t as u64,
                    ..base.clone()
                };
                reports.push(run_mra(&cfg, truth, ctx)?);
            }
            let k = trials as f64;
            out.push(SweepPoint {
                num_images: n,
                snr,
                mean_bispectrum_error: reports.iter().map(|r| r.bispectrum_error).sum::<f64>() / k,
                mean_image_error: reports.iter().map(|r| r.image_error).sum::<f64>() / k,
                mean_bound: reports.iter().map(|r| r.back_projection_bound).sum::<f64>() / k,
                trials: reports,
            });
        }
    }
    Ok(out)
}
