//! Invariance, parameter-sweep and noise-whiteness experiments.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bispectrum::{bispectrum, relative_error};
use crate::clebsch_gordan::CgTable;
use crate::error::{invalid, Result};
use crate::harmonics::power_spectrum;
use crate::image::{apply_rigid_motion, ImageGrid};
use crate::lie::RigidMotion;
use crate::projection::{back_project, default_quadrature, ProjectionOperator};

/// Mean and the half-width h such that 95% of the values lie in mean +- h.
pub fn symmetric_band(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let k = ((0.95 * dev.len() as f64).ceil() as usize).clamp(1, dev.len());
    (mean, dev[k - 1])
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // ties share the average rank
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("rank correlation needs two equal-length samples of size >= 2");
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return invalid("rank correlation of a constant sample");
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvarianceConfig {
    pub bandlimit: usize,
    pub lambda: f64,
    /// Translation sizes in pixels.
    pub t_max_list: Vec<f64>,
    pub samples_per_size: usize,
    pub seed: u64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            bandlimit: 16,
            lambda: 1.0,
            t_max_list: vec![0.0, 2.5, 5.0, 7.5, 10.0],
            samples_per_size: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Rotation,
    Translation,
    Rigid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub experiment: MotionKind,
    /// Translation size in pixels (0 for rotations).
    pub size: f64,
    pub mean: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub max: f64,
    pub errors: Vec<f64>,
}

/// Relative bispectrum error of img moved by random motions, against img.
/// Rotation rows use uniform angles; translation rows use uniform directions
/// at exactly the given size; rigid rows use both.
pub fn invariance_experiment(img: &ImageGrid, cfg: &InvarianceConfig) -> Result<Vec<InvarianceRow>> {
    if cfg.samples_per_size == 0 {
        return invalid("at least one sample per size");
    }
    if cfg.t_max_list.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return invalid("translation sizes must be finite and >= 0");
    }
    let quad = default_quadrature(cfg.bandlimit);
    let op = ProjectionOperator::new(cfg.bandlimit, &quad, cfg.lambda, img.n())?;
    let cg = CgTable::build(cfg.bandlimit);
    let reference = bispectrum(&op.apply(img)?, &cg)?;
    let h = img.spacing();
    let run = |kind: MotionKind, size_index: usize, size: f64| -> Result<InvarianceRow> {
        let errors: Vec<f64> = (0..cfg.samples_per_size)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((kind as u64) << 48) | ((size_index as u64) << 32) | s as u64);
                let theta = rng.random::<f64>() * TAU;
                let alpha = rng.random::<f64>() * TAU;
                let r = size * h;
                let b = [r * alpha.cos(), r * alpha.sin()];
                let g = match kind {
                    MotionKind::Rotation => RigidMotion::rotation(theta),
                    MotionKind::Translation => RigidMotion::translation(b),
                    MotionKind::Rigid => RigidMotion::new(b, theta),
                };
                let moved = bispectrum(&op.apply(&apply_rigid_motion(img, &g))?, &cg)?;
                relative_error(&moved, &reference)
            })
            .collect::<Result<_>>()?;
        let (mean, half) = symmetric_band(&errors);
        Ok(InvarianceRow {
            experiment: kind,
            size,
            mean,
            band_lo: mean - half,
            band_hi: mean + half,
            max: errors.iter().copied().fold(0.0, f64::max),
            errors,
        })
    };
    let mut rows = vec![run(MotionKind::Rotation, 0, 0.0)?];
    for kind in [MotionKind::Translation, MotionKind::Rigid] {
        for (i, &t) in cfg.t_max_list.iter().enumerate() {
            rows.push(run(kind, i, t)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bandlimit: usize,
    pub lambda: f64,
    pub mean_error: f64,
    pub images: usize,
}

/// Mean back-projection relative error per (L, lambda) over the image set.
pub fn param_sweep(images: &[ImageGrid], bandlimits: &[usize], lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    let Some(first) = images.first() else {
        return invalid("parameter sweep needs at least one image");
    };
    let n = first.n();
    if images.iter().any(|i| i.n() != n) {
        return invalid("all images must have the same size");
    }
    let mut out = Vec::new();
    for &l in bandlimits {
        let quad = default_quadrature(l);
        for &lambda in lambdas {
            let op = ProjectionOperator::new(l, &quad, lambda, n)?;
            let errs: Vec<f64> = images
                .iter()
                .map(|img| back_project(&op.apply(img)?, lambda, n)?.relative_error(img))
                .collect::<Result<_>>()?;
            out.push(SweepRow {
                bandlimit: l,
                lambda,
                mean_error: errs.iter().sum::<f64>() / errs.len() as f64,
                images: errs.len(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub n: usize,
    pub count: usize,
    /// Mean |DFT|^2 / n^2 per frequency (kx, ky), row-major over the DFT grid.
    pub pixel_spectrum: Vec<f64>,
    /// Mean normalized spherical power spectrum, l = 0..=L.
    pub spherical_spectrum: Vec<f64>,
}

impl NoiseStats {
    /// max / min of the spherical spectrum.
    pub fn spherical_flatness(&self) -> f64 {
        ratio(&self.spherical_spectrum)
    }

    pub fn pixel_flatness(&self) -> f64 {
        ratio(&self.pixel_spectrum)
    }
}

fn ratio(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Unit-variance white-noise image number j for a seed.
pub fn white_noise_image(n: usize, seed: u64, j: u64) -> Result<ImageGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    ImageGrid::new(n, (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect())
}

/// Averaged pixel and spherical power spectra of `count` white-noise images.
pub fn noise_stats(bandlimit: usize, n: usize, count: usize, seed: u64) -> Result<NoiseStats> {
    if count == 0 {
        return invalid("count must be at least 1");
    }
    let quad = default_quadrature(bandlimit);
    let op = ProjectionOperator::new(bandlimit, &quad, 1.0, n)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let (pix, sph) = (0..count as u64)
        .into_par_iter()
        .map(|j| -> Result<(Vec<f64>, Vec<f64>)> {
            let img = white_noise_image(n, seed, j)?;
            let mut buf: Vec<Complex64> = img.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
            for row in buf.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex64::default(); n];
            for c in 0..n {
                for r in 0..n {
                    col[r] = buf[r * n + c];
                }
                fft.process(&mut col);
                for r in 0..n {
                    buf[r * n + c] = col[r];
                }
            }
            let scale = (n * n) as f64;
            let pix = buf.iter().map(|v| v.norm_sqr() / scale).collect();
            Ok((pix, power_spectrum(&op.apply(&img)?)))
        })
        .try_fold(
            || (vec![0.0; n * n], vec![0.0; bandlimit + 1]),
            |(mut a, mut b), item| {
                let (p, s) = item?;
                a.iter_mut().zip(p).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(s).for_each(|(x, y)| *x += y);
                Ok::<_, crate::Error>((a, b))
            },
        )
        .try_reduce(
            || (vec![0.0; n * n], vec![0.0; bandlimit + 1]),
            |(mut a, mut b), (p, s)| {
                a.iter_mut().zip(p).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(s).for_each(|(x, y)| *x += y);
                Ok((a, b))
            },
        )?;
    let k = count as f64;
    Ok(NoiseStats {
        n,
        count,
        pixel_spectrum: pix.into_iter().map(|v| v / k).collect(),
        spherical_spectrum: sph.into_iter().map(|v| v / k).collect(),
    })
}

/// Expected normalized spherical spectrum of projected unit white noise:
/// E|s_lm|^2 is the diagonal of A A^H.
pub fn expected_noise_spectrum(op: &ProjectionOperator) -> Vec<f64> {
    let (_, uuh) = op.noise_covariances();
    let l = op.bandlimit();
    (0..=l)
        .map(|deg| {
            let base = deg * deg;
            (base..base + 2 * deg + 1).map(|i| uuh[(i, i)].re).sum::<f64>() / (2 * deg + 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_contains_95_percent() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (m, h) = symmetric_band(&v);
        assert_eq!(m, 49.5);
        let inside = v.iter().filter(|x| (*x - m).abs() <= h).count();
        assert!(inside >= 95);
        assert!(symmetric_band(&[]).0.is_nan());
        assert_eq!(symmetric_band(&[2.0]), (2.0, 0.0));
    }

    #[test]
    fn spearman_of_monotone_and_tied_data() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // ranks of [1, 1, 2] are [0.5, 0.5, 2]
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
