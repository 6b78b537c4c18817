//! Quadrature rules on the sphere: spherical designs read from text tables
//! and a Gauss-Legendre x equiangular product rule, plus the design matrix
//! and the coefficient estimators built on them.
//!
//! Weights are normalized to integrate the constant 1 to 4pi, so the
//! weighted adjoint returns orthonormal-basis coefficients directly.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::harmonics::{lm_index, num_coefficients, HarmonicWorkspace, ShCoefficients};
use crate::lie::SpherePoint;

/// Highest degree checked when validating a loaded design.
pub const VALIDATION_DEGREE_CAP: usize = 20;
pub const VALIDATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalDesign {
    points: Vec<SpherePoint>,
    weights: Vec<f64>,
    strength: usize,
}

impl SphericalDesign {
    /// Equal-weight design; points are normalized to the unit sphere.
    pub fn equal_weight(points: Vec<SpherePoint>, strength: usize) -> Result<Self> {
        if points.is_empty() {
            return invalid("design has no points");
        }
        let mut pts = Vec::with_capacity(points.len());
        for p in points {
            let n = p.norm();
            if !(n.is_finite() && n > 0.0) {
                return invalid(format!("degenerate design point {p:?}"));
            }
            pts.push(p / n);
        }
        let w = 4.0 * PI / pts.len() as f64;
        let weights = vec![w; pts.len()];
        Ok(Self {
            points: pts,
            weights,
            strength,
        })
    }

    pub fn with_weights(points: Vec<SpherePoint>, weights: Vec<f64>, strength: usize) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::DimensionMismatch("points and weights differ in length".into()));
        }
        Ok(Self {
            points,
            weights,
            strength,
        })
    }

    pub fn points(&self) -> &[SpherePoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn strength(&self) -> usize {
        self.strength
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// max_{m} |sum_n w_n Y_lm(s_n)| for each degree 1..=lmax (index 0 unused).
    pub fn degree_residuals(&self, lmax: usize) -> Vec<f64> {
        let mut out = vec![0.0; lmax + 1];
        let mut sums = vec![Complex64::default(); num_coefficients(lmax)];
        let mut ws = HarmonicWorkspace::new(lmax);
        let mut y = vec![Complex64::default(); num_coefficients(lmax)];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            ws.evaluate_all(p, &mut y);
            for (s, v) in sums.iter_mut().zip(&y) {
                *s += v * w;
            }
        }
        for l in 1..=lmax {
            for m in -(l as i64)..=l as i64 {
                out[l] = f64::max(out[l], sums[lm_index(l, m)].norm());
            }
        }
        out
    }

    /// Checks exactness on Y_lm for 1 <= l <= min(strength, cap).
    pub fn validate(&self, cap: usize, tol: f64) -> Result<()> {
        let lmax = self.strength.min(cap);
        if lmax == 0 {
            return Ok(());
        }
        let res = self.degree_residuals(lmax);
        let (degree, residual) = res
            .iter()
            .enumerate()
            .skip(1)
            .fold((1, 0.0), |acc, (l, &r)| if r > acc.1 { (l, r) } else { acc });
        if residual >= tol {
            return Err(Error::DesignValidation {
                strength: self.strength,
                degree,
                residual,
            });
        }
        Ok(())
    }

    /// Weighted adjoint estimate c_lm = sum_n w_n v_n Y*_lm(s_n).
    pub fn analyze(&self, values: &[f64], bandlimit: usize) -> Result<ShCoefficients> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} quadrature points",
                values.len(),
                self.len()
            )));
        }
        let mut out = vec![Complex64::default(); num_coefficients(bandlimit)];
        let mut ws = HarmonicWorkspace::new(bandlimit);
        let mut y = vec![Complex64::default(); out.len()];
        for ((p, &w), &v) in self.points.iter().zip(&self.weights).zip(values) {
            if v == 0.0 {
                continue;
            }
            ws.evaluate_all(p, &mut y);
            let s = w * v;
            for (o, yy) in out.iter_mut().zip(&y) {
                *o += yy.conj() * s;
            }
        }
        ShCoefficients::new(bandlimit, out)
    }

    /// Values of the expansion at every quadrature point.
    pub fn synthesize(&self, f: &ShCoefficients) -> Vec<Complex64> {
        let lmax = f.bandlimit();
        self.points
            .par_iter()
            .map_init(|| HarmonicWorkspace::new(lmax), |ws, p| ws.synthesize(f, p))
            .collect()
    }
}

/// Parses a design table: one point per line as `x y z`, `#` comments.
pub fn parse_design(text: &str, strength: usize) -> Result<SphericalDesign> {
    let mut points = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 coordinates", k + 1)));
        }
        let mut xyz = [0.0; 3];
        for (slot, f) in xyz.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: bad number {f:?}", k + 1)))?;
            if !slot.is_finite() {
                return Err(Error::Parse(format!("line {}: non-finite coordinate", k + 1)));
            }
        }
        let p = SpherePoint::new(xyz[0], xyz[1], xyz[2]);
        if p.norm() < 1e-6 {
            return Err(Error::Parse(format!("line {}: point too close to the origin", k + 1)));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Parse("design file contains no points".into()));
    }
    SphericalDesign::equal_weight(points, strength)
}

/// Loads and validates a design of the given strength.
pub fn load_design(path: &Path, strength: usize) -> Result<SphericalDesign> {
    let text = std::fs::read_to_string(path)?;
    let d = parse_design(&text, strength)?;
    d.validate(VALIDATION_DEGREE_CAP, VALIDATION_TOLERANCE)?;
    Ok(d)
}

const BUNDLED: [(&str, &str); 5] = [
    ("t2_n4_tetrahedron.txt", include_str!("../data/designs/t2_n4_tetrahedron.txt")),
    ("t3_n6_octahedron.txt", include_str!("../data/designs/t3_n6_octahedron.txt")),
    ("t3_n8_cube.txt", include_str!("../data/designs/t3_n8_cube.txt")),
    ("t5_n12_icosahedron.txt", include_str!("../data/designs/t5_n12_icosahedron.txt")),
    ("t5_n20_dodecahedron.txt", include_str!("../data/designs/t5_n20_dodecahedron.txt")),
];

/// (strength, points) from a file name of the form `t<strength>_n<points>[_anything].txt`.
pub fn design_name_info(name: &str) -> Option<(usize, usize)> {
    let stem = name.strip_suffix(".txt")?;
    let mut parts = stem.split('_');
    let t = parts.next()?.strip_prefix('t')?.parse().ok()?;
    let n = parts.next()?.strip_prefix('n')?.parse().ok()?;
    Some((t, n))
}

/// The exact polyhedral designs shipped with the library, validated.
pub fn bundled_designs() -> Result<Vec<(String, SphericalDesign)>> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            let (t, _) = design_name_info(name).expect("bundled names follow the convention");
            let d = parse_design(text, t)?;
            d.validate(VALIDATION_DEGREE_CAP, VALIDATION_TOLERANCE)?;
            Ok((name.to_string(), d))
        })
        .collect()
}

/// The smallest design in `dir` (by point count, then strength) with
/// strength >= `min_strength`; None when the directory has no such table.
pub fn find_design(dir: &Path, min_strength: usize) -> Result<Option<SphericalDesign>> {
    let mut best: Option<(usize, usize, std::path::PathBuf)> = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some((t, n)) = path.file_name().and_then(|f| f.to_str()).and_then(design_name_info) else {
            continue;
        };
        if t >= min_strength && best.as_ref().is_none_or(|(bn, bt, _)| (n, t) < (*bn, *bt)) {
            best = Some((n, t, path));
        }
    }
    best.map(|(_, t, path)| load_design(&path, t)).transpose()
}

/// A design of strength >= 2L from `dir` if one exists there, else the product rule.
pub fn quadrature_for(bandlimit: usize, dir: Option<&Path>) -> Result<SphericalDesign> {
    if let Some(dir) = dir {
        if let Some(d) = find_design(dir, 2 * bandlimit)? {
            return Ok(d);
        }
    }
    Ok(product_quadrature(bandlimit))
}

/// P_n(z) and P_n'(z) by the three-term recurrence.
fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p1, mut p2) = (1.0, 0.0);
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
    }
    (p1, n as f64 * (z * p1 - p2) / (z * z - 1.0))
}

/// Gauss-Legendre nodes (descending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Product rule exact for all spherical polynomials of degree <= 2L:
/// L+1 Gauss-Legendre nodes in cos(theta) times 2L+1 equiangular azimuths.
pub fn product_quadrature(bandlimit: usize) -> SphericalDesign {
    let (nodes, gw) = gauss_legendre(bandlimit + 1);
    let nphi = 2 * bandlimit + 1;
    let dphi = 2.0 * PI / nphi as f64;
    let mut points = Vec::with_capacity(nodes.len() * nphi);
    let mut weights = Vec::with_capacity(nodes.len() * nphi);
    for (&z, &w) in nodes.iter().zip(&gw) {
        let r = (1.0 - z * z).max(0.0).sqrt();
        for j in 0..nphi {
            let phi = j as f64 * dphi;
            points.push(SpherePoint::new(r * phi.cos(), r * phi.sin(), z));
            weights.push(w * dphi);
        }
    }
    SphericalDesign {
        points,
        weights,
        strength: 2 * bandlimit,
    }
}

/// Product rule of strength at least `degree`.
pub fn product_quadrature_of_strength(degree: usize) -> SphericalDesign {
    product_quadrature(degree.div_ceil(2))
}

/// Dense complex matrix with entry (n, (l,m)) = Y_lm(s_n).
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    bandlimit: usize,
    data: Vec<Complex64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bandlimit(&self) -> usize {
        self.bandlimit
    }

    pub fn entry(&self, n: usize, col: usize) -> Complex64 {
        self.data[n * self.cols + col]
    }

    pub fn row(&self, n: usize) -> &[Complex64] {
        &self.data[n * self.cols..(n + 1) * self.cols]
    }

    /// Y^H W Y for the given weights.
    pub fn weighted_gram(&self, weights: &[f64]) -> DMatrix<Complex64> {
        let mut g = DMatrix::<Complex64>::zeros(self.cols, self.cols);
        for n in 0..self.rows {
            let r = self.row(n);
            let w = weights[n];
            for a in 0..self.cols {
                let ya = r[a].conj() * w;
                for b in 0..self.cols {
                    g[(a, b)] += ya * r[b];
                }
            }
        }
        g
    }

    /// Regularized least squares: argmin ||Y c - v||^2 + eps ||c||^2.
    pub fn least_squares(&self, values: &[f64], eps: f64) -> Result<ShCoefficients> {
        if values.len() != self.rows {
            return Err(Error::DimensionMismatch("value count differs from design size".into()));
        }
        let ones = vec![1.0; self.rows];
        let mut g = self.weighted_gram(&ones);
        for k in 0..self.cols {
            g[(k, k)] += Complex64::new(eps, 0.0);
        }
        let mut rhs = DVector::<Complex64>::zeros(self.cols);
        for n in 0..self.rows {
            for (k, y) in self.row(n).iter().enumerate() {
                rhs[k] += y.conj() * values[n];
            }
        }
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::Numerical("normal equations not positive definite".into()))?;
        let c = chol.solve(&rhs);
        ShCoefficients::new(self.bandlimit, c.iter().copied().collect())
    }
}

pub fn design_matrix(bandlimit: usize, design: &SphericalDesign) -> DesignMatrix {
    let cols = num_coefficients(bandlimit);
    let rows: Vec<Vec<Complex64>> = design
        .points()
        .par_iter()
        .map_init(
            || HarmonicWorkspace::new(bandlimit),
            |ws, p| {
                let mut r = vec![Complex64::default(); cols];
                ws.evaluate_all(p, &mut r);
                r
            },
        )
        .collect();
    DesignMatrix {
        rows: rows.len(),
        cols,
        bandlimit,
        data: rows.into_iter().flatten().collect(),
    }
}

/// Coefficient estimate from values by regularized least squares.
pub fn analyze_regularized(
    design: &SphericalDesign,
    values: &[f64],
    bandlimit: usize,
    eps: f64,
) -> Result<ShCoefficients> {
    design_matrix(bandlimit, design).least_squares(values, eps)
}
