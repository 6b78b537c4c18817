//! Transport between images and spherical-harmonic coefficients through
//! the chart x -> exp(x / lambda) n, and the synthetic random images.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::harmonics::{num_coefficients, HarmonicWorkspace, ShCoefficients};
use crate::image::{coord, stencil, ImageGrid, Stencil};
use crate::lie::{plane_to_sphere, sphere_to_plane};
use crate::quadrature::{product_quadrature, SphericalDesign};

/// Default quadrature for projecting at bandlimit L: exact to degree 2L.
pub fn default_quadrature(bandlimit: usize) -> SphericalDesign {
    product_quadrature(bandlimit)
}

/// Linear map U from vec(image) to coefficients: U = A P, with P the
/// bilinear interpolation onto the retained quadrature points and
/// A[c, r] = w_r conj(Y_c(s_r)).
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    bandlimit: usize,
    lambda: f64,
    n: usize,
    retained: Vec<usize>,
    stencils: Vec<Stencil>,
    /// point-major: adjoint[r * ncoef + c]
    adjoint: Vec<Complex64>,
}

impl ProjectionOperator {
    pub fn new(bandlimit: usize, quad: &SphericalDesign, lambda: f64, n: usize) -> Result<Self> {
        if !(lambda > 0.0) {
            return invalid(format!("scaling parameter must be positive, got {lambda}"));
        }
        if n < 3 || n % 2 == 0 {
            return invalid(format!("image side must be odd and >= 3, got {n}"));
        }
        if quad.strength() < 2 * bandlimit {
            log::warn!(
                "quadrature strength {} is below 2L = {}; coefficients will alias",
                quad.strength(),
                2 * bandlimit
            );
        }
        let mut retained = Vec::new();
        let mut stencils = Vec::new();
        for (k, p) in quad.points().iter().enumerate() {
            let Ok(x) = sphere_to_plane(p, lambda) else {
                continue;
            };
            if let Some(s) = stencil(n, x[0], x[1]) {
                retained.push(k);
                stencils.push(s);
            }
        }
        if retained.is_empty() {
            return invalid("no quadrature point maps into the image square");
        }
        let ncoef = num_coefficients(bandlimit);
        let rows: Vec<Vec<Complex64>> = retained
            .par_iter()
            .map_init(
                || HarmonicWorkspace::new(bandlimit),
                |ws, &k| {
                    let mut y = vec![Complex64::default(); ncoef];
                    ws.evaluate_all(&quad.points()[k], &mut y);
                    let w = quad.weights()[k];
                    y.iter_mut().for_each(|v| *v = v.conj() * w);
                    y
                },
            )
            .collect();
        Ok(Self {
            bandlimit,
            lambda,
            n,
            retained,
            stencils,
            adjoint: rows.concat(),
        })
    }

    pub fn bandlimit(&self) -> usize {
        self.bandlimit
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn image_side(&self) -> usize {
        self.n
    }

    pub fn retained_points(&self) -> &[usize] {
        &self.retained
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    fn ncoef(&self) -> usize {
        num_coefficients(self.bandlimit)
    }

    /// Image values interpolated at the retained points (P vec(img)).
    pub fn interpolate(&self, img: &ImageGrid) -> Vec<f64> {
        let v = img.values();
        self.stencils
            .iter()
            .map(|s| s.iter().map(|&(p, w)| w * v[p]).sum())
            .collect()
    }

    pub fn apply(&self, img: &ImageGrid) -> Result<ShCoefficients> {
        if img.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "operator built for n = {}, image has n = {}",
                self.n,
                img.n()
            )));
        }
        let vals = self.interpolate(img);
        let nc = self.ncoef();
        let mut out = vec![Complex64::default(); nc];
        for (r, &v) in vals.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let row = &self.adjoint[r * nc..(r + 1) * nc];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * v;
            }
        }
        ShCoefficients::new(self.bandlimit, out)
    }

    /// U as dense rows (coefficient-major), for inspection and tests.
    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let nc = self.ncoef();
        let mut u = vec![vec![Complex64::default(); self.n * self.n]; nc];
        for (r, s) in self.stencils.iter().enumerate() {
            for &(p, w) in s {
                if w == 0.0 {
                    continue;
                }
                for (c, row) in u.iter_mut().enumerate() {
                    row[p] += self.adjoint[r * nc + c] * w;
                }
            }
        }
        u
    }

    /// P P^T over retained points, dense.
    fn interpolation_gram(&self) -> DMatrix<f64> {
        let r = self.stencils.len();
        let mut by_pixel: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n * self.n];
        for (k, s) in self.stencils.iter().enumerate() {
            for &(p, w) in s {
                if w != 0.0 {
                    by_pixel[p].push((k, w));
                }
            }
        }
        let mut g = DMatrix::<f64>::zeros(r, r);
        for list in &by_pixel {
            for &(a, wa) in list {
                for &(b, wb) in list {
                    g[(a, b)] += wa * wb;
                }
            }
        }
        g
    }

    /// (U U^T, U U^H) as dense (L+1)^2 square matrices.
    pub fn noise_covariances(&self) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let nc = self.ncoef();
        let r = self.stencils.len();
        let a = DMatrix::<Complex64>::from_fn(nc, r, |c, k| self.adjoint[k * nc + c]);
        let g = self.interpolation_gram().map(|v| Complex64::new(v, 0.0));
        let ag = &a * g;
        let uut = &ag * a.transpose();
        let uuh = &ag * a.adjoint();
        (uut, uuh)
    }
}

/// Weighted-adjoint coefficients of the image carried onto the sphere.
pub fn project_image(img: &ImageGrid, lambda: f64, bandlimit: usize, quad: &SphericalDesign) -> Result<ShCoefficients> {
    ProjectionOperator::new(bandlimit, quad, lambda, img.n())?.apply(img)
}

/// Evaluates the expansion at every grid point pulled back to the sphere.
pub fn back_project(f: &ShCoefficients, lambda: f64, n: usize) -> Result<ImageGrid> {
    if !(lambda > 0.0) {
        return invalid(format!("scaling parameter must be positive, got {lambda}"));
    }
    if n < 3 || n % 2 == 0 {
        return invalid(format!("image side must be odd and >= 3, got {n}"));
    }
    let lmax = f.bandlimit();
    let vals: Vec<Complex64> = (0..n * n)
        .into_par_iter()
        .map_init(
            || HarmonicWorkspace::new(lmax),
            |ws, k| {
                let p = plane_to_sphere([coord(n, k / n), coord(n, k % n)], lambda);
                ws.synthesize(f, &p)
            },
        )
        .collect();
    let max_re = vals.iter().fold(0.0f64, |a, v| a.max(v.re.abs()));
    let max_im = vals.iter().fold(0.0f64, |a, v| a.max(v.im.abs()));
    if max_im > 1e-6 * max_re && max_im > 1e-300 {
        return Err(Error::Numerical(format!(
            "back-projection has imaginary part {max_im:.3e} against real part {max_re:.3e}; coefficients are not real"
        )));
    }
    ImageGrid::new(n, vals.into_iter().map(|v| v.re).collect())
}

/// Coefficients of a real function with unit power in every degree,
/// uniformly distributed on each degree's sphere.
pub fn random_unit_shell_coefficients<R: rand::Rng>(rng: &mut R, bandlimit: usize) -> ShCoefficients {
    let mut f = ShCoefficients::zeros(bandlimit);
    for l in 0..=bandlimit {
        let g: Vec<f64> = (0..2 * l + 1).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        f.set(l, 0, Complex64::new(g[0] / norm, 0.0));
        let s = std::f64::consts::FRAC_1_SQRT_2 / norm;
        for m in 1..=l as i64 {
            let k = 2 * m as usize;
            let v = Complex64::new(g[k - 1] * s, g[k] * s);
            f.set(l, m, v);
            f.set(l, -m, if m % 2 == 0 { v.conj() } else { -v.conj() });
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomImageParams {
    pub n: usize,
    pub gen_bandlimit: usize,
    pub proj_bandlimit: usize,
    pub margin: usize,
    pub blur_sigma: f64,
    pub blur_truncate: f64,
}

impl Default for RandomImageParams {
    fn default() -> Self {
        Self {
            n: 101,
            gen_bandlimit: 14,
            proj_bandlimit: 16,
            margin: 20,
            blur_sigma: 2.0,
            blur_truncate: 4.0,
        }
    }
}

/// The smooth random test image: random unit-shell coefficients,
/// back-projected, margin zeroed, blurred, margin re-zeroed, then passed
/// once more through projection at `proj_bandlimit` and back-projection.
pub fn random_smooth_image(seed: u64, params: &RandomImageParams) -> Result<ImageGrid> {
    let p = params;
    if p.n < 2 * p.margin + 1 {
        return invalid(format!("image side {} too small for a {}-pixel margin", p.n, p.margin));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_unit_shell_coefficients(&mut rng, p.gen_bandlimit);
    let mut img = back_project(&f, 1.0, p.n)?;
    img.zero_margin(p.margin);
    let mut img = img.gaussian_blur(p.blur_sigma, p.blur_truncate);
    img.zero_margin(p.margin);
    let quad = default_quadrature(p.proj_bandlimit);
    let g = project_image(&img, 1.0, p.proj_bandlimit, &quad)?;
    back_project(&g, 1.0, p.n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_projects_to_zero() {
        let img = ImageGrid::zeros(21).unwrap();
        let q = default_quadrature(4);
        assert!(project_image(&img, 1.0, 4, &q).unwrap().norm() == 0.0);
    }

    #[test]
    fn rejects_bad_scaling() {
        let img = ImageGrid::zeros(21).unwrap();
        assert!(project_image(&img, 0.0, 4, &default_quadrature(4)).is_err());
        assert!(back_project(&ShCoefficients::zeros(2), -1.0, 21).is_err());
    }

    #[test]
    fn constant_harmonic_back_projects_to_constant() {
        let mut f = ShCoefficients::zeros(3);
        f.set(0, 0, Complex64::new(2.0, 0.0));
        let img = back_project(&f, 1.0, 15).unwrap();
        let c = 2.0 * 0.5 / std::f64::consts::PI.sqrt();
        assert!(img.values().iter().all(|v| (v - c).abs() < 1e-14));
        assert!(back_project(&ShCoefficients::zeros(3), 1.0, 15).unwrap().norm() == 0.0);
    }

    #[test]
    fn imaginary_coefficients_are_rejected() {
        let mut f = ShCoefficients::zeros(2);
        f.set(0, 0, Complex64::new(0.0, 1.0));
        assert!(matches!(back_project(&f, 1.0, 11), Err(Error::Numerical(_))));
    }

    #[test]
    fn unit_shell_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_unit_shell_coefficients(&mut rng, 10);
        assert!(f.is_real(1e-15));
        for l in 0..=10usize {
            let s: f64 = (-(l as i64)..=l as i64).map(|m| f.get(l, m).norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn operator_rows_of_p_sum_to_one() {
        let q = default_quadrature(6);
        let op = ProjectionOperator::new(6, &q, 1.0, 31).unwrap();
        for s in op.stencils() {
            assert!((s.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}
