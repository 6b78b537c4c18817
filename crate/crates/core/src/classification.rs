//! Invariant k-NN classification: SE(2)-invariant bispectrum vectors, a
//! rotation-only baseline built from a steerable polar-Fourier expansion,
//! randomized low-rank reduction and node scores.

use std::f64::consts::TAU;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bispectrum::bispectrum;
use crate::clebsch_gordan::CgTable;
use crate::error::{invalid, Error, Result};
use crate::estimation::build_debias;
use crate::image::ImageGrid;
use crate::mra::synthesize_image;
use crate::projection::{default_quadrature, random_smooth_image, ProjectionOperator, RandomImageParams};

/// Polar-Fourier coefficients F[k][q], k = -k_max..=k_max. Ring q of order k
/// is the q-th ring (inside out) fine enough to resolve k.
#[derive(Debug, Clone, PartialEq)]
pub struct SteerableCoefficients {
    k_max: usize,
    /// Ring radii in pixels.
    radii: Vec<f64>,
    coeffs: Vec<Vec<Complex64>>,
}

impl SteerableCoefficients {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Number of radial indices Q_k available at order k.
    pub fn radial_count(&self, k: i64) -> usize {
        self.coeffs[(k + self.k_max as i64) as usize].len()
    }

    pub fn get(&self, k: i64, q: usize) -> Complex64 {
        self.coeffs[(k + self.k_max as i64) as usize][q]
    }

    /// F_{k,q} -> e^{i k phi} F_{k,q}, the action of a counter-clockwise rotation by phi.
    pub fn rotated(&self, phi: f64) -> Self {
        let mut out = self.clone();
        for (i, row) in out.coeffs.iter_mut().enumerate() {
            let k = i as f64 - self.k_max as f64;
            let e = Complex64::from_polar(1.0, k * phi);
            row.iter_mut().for_each(|v| *v *= e);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Rings at radii (q + 1) R / n_rings pixels, R = (n - 1) / 2 - 1, each sampled at
/// max(ceil(2 pi r), 2 k_max + 1) angles with bilinear interpolation. A ring
/// resolves orders |k| <= floor(pi r) (half its circumference in pixels).
///
/// Coefficients use e^{+i k phi} so that rotating the image counter-clockwise
/// by phi multiplies F_{k,q} by e^{i k phi}.
pub fn steerable_expand(img: &ImageGrid, k_max: usize, n_rings: usize) -> Result<SteerableCoefficients> {
    if n_rings == 0 {
        return invalid("at least one ring");
    }
    let n = img.n();
    let outer = (n as f64 - 1.0) / 2.0 - 1.0;
    if !(outer > 0.0) {
        return invalid(format!("image side {n} too small for a polar expansion"));
    }
    let h = img.spacing();
    let radii: Vec<f64> = (0..n_rings).map(|q| (q + 1) as f64 * outer / n_rings as f64).collect();
    let mut planner = FftPlanner::<f64>::new();
    let mut coeffs = vec![Vec::with_capacity(n_rings); 2 * k_max + 1];
    for &r in &radii {
        let resolvable = (std::f64::consts::PI * r).floor() as usize;
        let n_ang = ((TAU * r).ceil() as usize).max(2 * k_max + 1);
        let mut buf: Vec<Complex64> = (0..n_ang)
            .map(|t| {
                let phi = TAU * t as f64 / n_ang as f64;
                let v = img.sample(r * h * phi.cos(), r * h * phi.sin()).unwrap_or(0.0);
                Complex64::new(v, 0.0)
            })
            .collect();
        // the inverse transform carries e^{+i k phi}
        planner.plan_fft_inverse(n_ang).process(&mut buf);
        for k in -(k_max as i64)..=k_max as i64 {
            if k.unsigned_abs() as usize <= resolvable {
                let v = buf[k.rem_euclid(n_ang as i64) as usize] / n_ang as f64;
                coeffs[(k + k_max as i64) as usize].push(v);
            }
        }
    }
    if (0..=k_max).any(|k| coeffs[k_max + k].is_empty()) {
        log::warn!("k_max = {k_max} exceeds what the outer ring resolves; some orders are empty");
    }
    Ok(SteerableCoefficients { k_max, radii, coeffs })
}

/// Index tuples (k1, k2, q1, q2, q3) with |k1|, |k2|, |k1 + k2| <= k_max,
/// q_i < Q_{k_i}, in lexicographic order.
pub fn rotational_bispectrum_indices(f: &SteerableCoefficients) -> Vec<[i64; 5]> {
    let km = f.k_max as i64;
    let mut out = Vec::new();
    for k1 in -km..=km {
        for k2 in -km..=km {
            let k3 = k1 + k2;
            if k3.abs() > km {
                continue;
            }
            let (a, b, c) = (f.radial_count(k1), f.radial_count(k2), f.radial_count(k3));
            for q1 in 0..a {
                for q2 in 0..b {
                    for q3 in 0..c {
                        out.push([k1, k2, q1 as i64, q2 as i64, q3 as i64]);
                    }
                }
            }
        }
    }
    out
}

/// F_{k1,q1} F_{k2,q2} conj(F_{k1+k2,q3}) over `rotational_bispectrum_indices`.
pub fn rotational_bispectrum(f: &SteerableCoefficients) -> Vec<Complex64> {
    let mut out = Vec::new();
    rotational_bispectrum_into(f, &mut out);
    out
}

fn rotational_bispectrum_into(f: &SteerableCoefficients, out: &mut Vec<Complex64>) {
    out.clear();
    let km = f.k_max as i64;
    let row = |k: i64| &f.coeffs[(k + km) as usize];
    for k1 in -km..=km {
        for k2 in -km..=km {
            if (k1 + k2).abs() > km {
                continue;
            }
            let (a, b, c) = (row(k1), row(k2), row(k1 + k2));
            for x in a {
                for y in b {
                    let xy = x * y;
                    out.extend(c.iter().map(|z| xy * z.conj()));
                }
            }
        }
    }
}

/// Column-wise access to a matrix that is too large to hold.
pub trait ColumnSource: Sync {
    fn num_columns(&self) -> usize;
    fn dim(&self) -> usize;
    fn column(&self, j: usize, out: &mut [f64]);
}

impl ColumnSource for [Vec<f64>] {
    fn num_columns(&self) -> usize {
        self.len()
    }

    fn dim(&self) -> usize {
        self.first().map_or(0, Vec::len)
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(&self[j]);
    }
}

/// Rotational bispectra [Re | Im] regenerated on demand from steerable coefficients.
pub struct RotationalBispectrumColumns<'a> {
    coeffs: &'a [SteerableCoefficients],
    dim: usize,
}

impl<'a> RotationalBispectrumColumns<'a> {
    pub fn new(coeffs: &'a [SteerableCoefficients]) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return invalid("no images");
        };
        let layout = |c: &SteerableCoefficients| (c.k_max, c.coeffs.iter().map(Vec::len).collect::<Vec<_>>());
        if coeffs.iter().any(|c| layout(c) != layout(first)) {
            return Err(Error::DimensionMismatch("steerable expansions with different layouts".into()));
        }
        let dim = 2 * rotational_bispectrum_indices(first).len();
        Ok(Self { coeffs, dim })
    }
}

impl ColumnSource for RotationalBispectrumColumns<'_> {
    fn num_columns(&self) -> usize {
        self.coeffs.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        let mut b = Vec::with_capacity(self.dim / 2);
        rotational_bispectrum_into(&self.coeffs[j], &mut b);
        let h = b.len();
        for (i, v) in b.iter().enumerate() {
            out[i] = v.re;
            out[h + i] = v.im;
        }
    }
}

/// Result of the randomized range finder.
#[derive(Debug, Clone)]
pub struct LowRank {
    /// Coordinates of every column in the learned basis (length m each).
    pub coords: Vec<Vec<f64>>,
    /// basis = B * mix (N x m); the basis is never formed by the algorithm.
    pub mix: DMatrix<f64>,
}

impl LowRank {
    /// Materializes the D x m basis; for inspection on small problems.
    pub fn basis<S: ColumnSource + ?Sized>(&self, src: &S) -> DMatrix<f64> {
        let mut col = vec![0.0; src.dim()];
        let mut out = DMatrix::zeros(src.dim(), self.mix.ncols());
        for j in 0..src.num_columns() {
            src.column(j, &mut col);
            for c in 0..self.mix.ncols() {
                let w = self.mix[(j, c)];
                if w != 0.0 {
                    out.column_mut(c).iter_mut().zip(&col).for_each(|(o, v)| *o += w * v);
                }
            }
        }
        out
    }
}

const BLOCK: usize = 64;

fn block(src: &(impl ColumnSource + ?Sized), start: usize) -> DMatrix<f64> {
    let end = (start + BLOCK).min(src.num_columns());
    let d = src.dim();
    let mut m = DMatrix::zeros(d, end - start);
    for (c, j) in (start..end).enumerate() {
        src.column(j, m.column_mut(c).as_mut_slice());
    }
    m
}

/// B^T B, built block by block from regenerated columns.
fn gram(src: &(impl ColumnSource + ?Sized)) -> DMatrix<f64> {
    let n = src.num_columns();
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let pairs: Vec<(usize, usize)> = (0..starts.len()).flat_map(|a| (a..starts.len()).map(move |b| (a, b))).collect();
    let blocks: Vec<((usize, usize), DMatrix<f64>)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let x = block(src, starts[a]);
            let y = if a == b { x.clone() } else { block(src, starts[b]) };
            ((starts[a], starts[b]), x.transpose() * y)
        })
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for ((i0, j0), blk) in blocks {
        for c in 0..blk.ncols() {
            for r in 0..blk.nrows() {
                g[(i0 + r, j0 + c)] = blk[(r, c)];
                g[(j0 + c, i0 + r)] = blk[(r, c)];
            }
        }
    }
    g
}

/// Orthonormalizes the columns of B C (given G = B^T B): returns C' with
/// (B C')^T (B C') = I, dropping directions B C does not span.
fn orthonormalize(g: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = c.transpose() * g * c;
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-13 * top * eig.eigenvalues.len() as f64)
        .collect();
    let mut out = DMatrix::zeros(c.nrows(), keep.len());
    for (o, &i) in keep.iter().enumerate() {
        let v = c * eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt();
        out.set_column(o, &v);
    }
    out
}

/// Randomized range finder: Gaussian sketch Y = B Omega with m + oversample
/// columns, one power iteration Y = B B^T Q, orthonormalization, then the
/// top-m left singular subspace of Q^T B. Every basis vector is kept as a
/// combination B c of the columns, so only the N x N Gram matrix and
/// 64-column blocks are ever held in memory.
pub fn randomized_low_rank<S: ColumnSource + ?Sized>(src: &S, m: usize, oversample: usize, seed: u64) -> Result<LowRank> {
    let (n, d) = (src.num_columns(), src.dim());
    if m == 0 {
        return invalid("reduced dimension must be at least 1");
    }
    if m > d {
        return invalid(format!("reduced dimension {m} exceeds the column dimension {d}"));
    }
    if n == 0 {
        return invalid("no columns");
    }
    let g = gram(src);
    let l = (m + oversample).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let q = orthonormalize(&g, &omega);
    // B^T Q = G C
    let q = orthonormalize(&g, &(&g * &q));
    // Q^T B = C^T G, then its top-m left singular vectors
    let p = q.transpose() * &g;
    let eig = SymmetricEigen::new(&p * p.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let r = m.min(order.len());
    let mut u = DMatrix::zeros(p.nrows(), r);
    for (o, &i) in order[..r].iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // fix the sign so the output is reproducible
        let lead = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if lead < 0.0 {
            col.neg_mut();
        }
        u.set_column(o, &col);
    }
    let red = u.transpose() * &p;
    let coords = (0..n)
        .map(|j| {
            let mut v = vec![0.0; m];
            v[..r].iter_mut().zip(red.column(j).iter()).for_each(|(o, x)| *o = *x);
            v
        })
        .collect();
    let mut mix = DMatrix::zeros(n, m);
    mix.columns_mut(0, r).copy_from(&(q * u));
    Ok(LowRank { coords, mix })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact K nearest neighbors under Euclidean distance, ascending, ties by index.
pub fn knn_graph(reps: &[Vec<f64>], k: usize) -> Result<KnnGraph> {
    let n = reps.len();
    if k == 0 || k >= n {
        return invalid(format!("K = {k} needs 1 <= K < {n}"));
    }
    let d = reps[0].len();
    if reps.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("representations of different lengths".into()));
    }
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (euclidean(&reps[i], &reps[j]), j)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            cand.into_iter().map(|(d, j)| (j, d)).unzip()
        })
        .collect();
    let (neighbors, distances) = rows.into_iter().unzip();
    Ok(KnnGraph { neighbors, distances })
}

/// Fraction of each node's neighbors sharing its label.
pub fn node_scores(graph: &KnnGraph, labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != graph.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.len()
        )));
    }
    Ok(graph
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return 0.0;
            }
            nb.iter().filter(|&&j| labels[j] == labels[i]).count() as f64 / nb.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Per-image spherical bispectrum.
    Se2,
    /// Reduced rotational bispectrum of the polar-Fourier expansion.
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationConfig {
    pub classes: usize,
    pub num_images: usize,
    /// Maximal translation in pixels.
    pub t_max: f64,
    /// `None` means noiseless.
    pub snr: Option<f64>,
    pub neighbors: usize,
    pub bandlimit: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Subtract the per-image noise bias from the spherical bispectra.
    pub debias: bool,
    pub k_max: usize,
    pub n_rings: usize,
    pub reduced_dim: usize,
    pub oversample: usize,
    pub histogram_bins: usize,
    pub image: RandomImageParams,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            classes: 7,
            num_images: 700,
            t_max: 0.0,
            snr: Some(1.0),
            neighbors: 50,
            bandlimit: 16,
            lambda: 1.0,
            seed: 0,
            debias: true,
            k_max: 6,
            n_rings: 6,
            reduced_dim: 400,
            oversample: 10,
            histogram_bins: 10,
            image: RandomImageParams::default(),
        }
    }
}

impl ClassificationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return invalid("at least one class");
        }
        if self.neighbors == 0 || self.neighbors >= self.num_images {
            return invalid(format!("need 1 <= K < N, got K = {} and N = {}", self.neighbors, self.num_images));
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
            return invalid("lambda must be positive");
        }
        if self.bandlimit == 0 || self.n_rings == 0 || self.reduced_dim == 0 || self.histogram_bins == 0 {
            return invalid("bandlimit, n_rings, reduced_dim and histogram_bins must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Equal-width bins over [0, 1]; the last bin is closed.
pub fn score_histogram(scores: &[f64], bins: usize) -> Vec<HistogramBin> {
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            bin_left: b as f64 / bins as f64,
            bin_right: (b + 1) as f64 / bins as f64,
            count: 0,
        })
        .collect();
    for &s in scores {
        let b = ((s * bins as f64).floor() as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub metric: Metric,
    pub t_max: f64,
    pub snr: Option<f64>,
    pub sigma2: f64,
    pub median: f64,
    pub mean: f64,
    pub histogram: Vec<HistogramBin>,
    pub scores: Vec<f64>,
    pub seconds: f64,
}

/// Class representatives, labels and noise variance shared by both metrics.
pub struct ClassificationData {
    pub representatives: Vec<ImageGrid>,
    pub labels: Vec<usize>,
    pub sigma2: f64,
}

impl ClassificationData {
    pub fn generate(cfg: &ClassificationConfig) -> Result<Self> {
        cfg.validate()?;
        let representatives: Vec<ImageGrid> = (0..cfg.classes)
            .map(|c| random_smooth_image(cfg.seed.wrapping_mul(1000).wrapping_add(c as u64), &cfg.image))
            .collect::<Result<_>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1abe_15);
        let labels = (0..cfg.num_images).map(|_| rng.random_range(0..cfg.classes)).collect();
        let power = representatives.iter().map(ImageGrid::mean_square).sum::<f64>() / cfg.classes as f64;
        let sigma2 = cfg.snr.map_or(0.0, |s| power / s);
        Ok(Self {
            representatives,
            labels,
            sigma2,
        })
    }

    /// Image j: its class representative moved by the j-th motion, plus noise.
    /// Motions, sizes in units of t_max, and noise depend only on the seed.
    pub fn image(&self, cfg: &ClassificationConfig, j: usize) -> ImageGrid {
        synthesize_image(&self.representatives[self.labels[j]], cfg.t_max, self.sigma2, cfg.seed, j as u64)
    }
}

/// Invariant representation of every image under `metric`.
pub fn representations(cfg: &ClassificationConfig, data: &ClassificationData, metric: Metric) -> Result<Vec<Vec<f64>>> {
    let n = cfg.image.n;
    match metric {
        Metric::Se2 => {
            let quad = default_quadrature(cfg.bandlimit);
            let op = ProjectionOperator::new(cfg.bandlimit, &quad, cfg.lambda, n)?;
            let cg = CgTable::build(cfg.bandlimit);
            let debias = if cfg.debias && data.sigma2 > 0.0 {
                Some(build_debias(&op, &cg, data.sigma2)?)
            } else {
                None
            };
            (0..cfg.num_images)
                .into_par_iter()
                .map(|j| {
                    let s = op.apply(&data.image(cfg, j))?;
                    let b = match &debias {
                        Some(d) => d.debiased_bispectrum(&s, &cg)?,
                        None => bispectrum(&s, &cg)?,
                    };
                    Ok(b.to_real_vec())
                })
                .collect()
        }
        Metric::Rotation => {
            let coeffs: Vec<SteerableCoefficients> = (0..cfg.num_images)
                .into_par_iter()
                .map(|j| steerable_expand(&data.image(cfg, j), cfg.k_max, cfg.n_rings))
                .collect::<Result<_>>()?;
            let src = RotationalBispectrumColumns::new(&coeffs)?;
            let m = cfg.reduced_dim.min(src.dim());
            Ok(randomized_low_rank(&src, m, cfg.oversample, cfg.seed)?.coords)
        }
    }
}

pub fn run_classification(cfg: &ClassificationConfig, metric: Metric) -> Result<ClassificationReport> {
    let data = ClassificationData::generate(cfg)?;
    classify(cfg, &data, metric)
}

/// Node scores of the K-NN graph for an already generated dataset.
pub fn classify(cfg: &ClassificationConfig, data: &ClassificationData, metric: Metric) -> Result<ClassificationReport> {
    cfg.validate()?;
    let start = Instant::now();
    let reps = representations(cfg, data, metric)?;
    let graph = knn_graph(&reps, cfg.neighbors)?;
    let scores = node_scores(&graph, &data.labels)?;
    Ok(ClassificationReport {
        metric,
        t_max: cfg.t_max,
        snr: cfg.snr,
        sigma2: data.sigma2,
        median: median(&scores),
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        histogram: score_histogram(&scores, cfg.histogram_bins),
        scores,
        seconds: start.elapsed().as_secs_f64(),
    })
}
