//! Associated Legendre functions, orthonormal complex spherical harmonics
//! (Condon-Shortley phase), coefficient containers and power spectra.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lie::SpherePoint;

/// Position of (l, m) in the lexicographic coefficient layout.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

#[inline]
pub fn num_coefficients(bandlimit: usize) -> usize {
    (bandlimit + 1) * (bandlimit + 1)
}

/// Index into a triangular (l, m >= 0) table.
#[inline]
pub fn tri_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Unnormalized P_l^m(x) including the Condon-Shortley phase.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return invalid(format!("order m={m} exceeds degree l={l}"));
    }
    if !(x.abs() <= 1.0) {
        return invalid(format!("argument {x} outside [-1, 1]"));
    }
    let s = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut pmm = 1.0;
    let mut odd = 1.0;
    for _ in 0..m {
        pmm *= -odd * s;
        odd += 2.0;
    }
    if l == m {
        return Ok(pmm);
    }
    let mut prev = pmm;
    let mut cur = x * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let next = ((2 * ll - 1) as f64 * x * cur - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Fills `out[tri_index(l, m)]` with the orthonormalized Legendre factor of
/// Y_lm, i.e. Y_lm(theta, phi) = out[..] * exp(i m phi), for 0 <= m <= l <= lmax.
pub fn normalized_legendre_table(lmax: usize, cos_t: f64, sin_t: f64, out: &mut [f64]) {
    debug_assert!(out.len() >= tri_index(lmax, lmax) + 1);
    let mut pmm = 0.5 / PI.sqrt();
    for m in 0..=lmax {
        if m > 0 {
            pmm *= -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * sin_t;
        }
        out[tri_index(m, m)] = pmm;
        if m == lmax {
            break;
        }
        let mut prev = pmm;
        let mut cur = ((2 * m + 3) as f64).sqrt() * cos_t * pmm;
        out[tri_index(m + 1, m)] = cur;
        let mf = (m * m) as f64;
        // a_{l,m} = sqrt((4l^2 - 1) / (l^2 - m^2)); a_prev holds a_{l-1,m}
        let mut a_prev = ((2 * m + 3) as f64).sqrt();
        for l in (m + 2)..=lmax {
            let l2 = (l * l) as f64;
            let a = ((4.0 * l2 - 1.0) / (l2 - mf)).sqrt();
            let next = a * (cos_t * cur - prev / a_prev);
            out[tri_index(l, m)] = next;
            prev = cur;
            cur = next;
            a_prev = a;
        }
    }
}

/// Orthonormal spherical harmonic Y_l^m(theta, phi).
pub fn ylm(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    if m.unsigned_abs() as usize > l {
        return invalid(format!("order m={m} exceeds degree l={l}"));
    }
    let ma = m.unsigned_abs() as usize;
    let mut table = vec![0.0; tri_index(l, l) + 1];
    let (s, c) = theta.sin_cos();
    normalized_legendre_table(l, c, s, &mut table);
    let y = Complex64::from_polar(table[tri_index(l, ma)], ma as f64 * phi);
    Ok(if m >= 0 {
        y
    } else if ma % 2 == 0 {
        y.conj()
    } else {
        -y.conj()
    })
}

/// Scratch space for evaluating all harmonics at one point.
#[derive(Debug, Clone)]
pub struct HarmonicWorkspace {
    lmax: usize,
    legendre: Vec<f64>,
    phases: Vec<Complex64>,
    /// Recurrence factors, tri-indexed: a_lm and 1 / a_{l-1,m}.
    rec_a: Vec<f64>,
    rec_inv_prev: Vec<f64>,
}

impl HarmonicWorkspace {
    pub fn new(lmax: usize) -> Self {
        let size = tri_index(lmax, lmax) + 1;
        let mut rec_a = vec![0.0; size];
        let mut rec_inv_prev = vec![0.0; size];
        for m in 0..=lmax {
            let mf = (m * m) as f64;
            let mut a_prev = ((2 * m + 3) as f64).sqrt();
            if m < lmax {
                rec_a[tri_index(m + 1, m)] = a_prev;
            }
            for l in (m + 2)..=lmax {
                let l2 = (l * l) as f64;
                let a = ((4.0 * l2 - 1.0) / (l2 - mf)).sqrt();
                rec_a[tri_index(l, m)] = a;
                rec_inv_prev[tri_index(l, m)] = 1.0 / a_prev;
                a_prev = a;
            }
        }
        Self {
            lmax,
            legendre: vec![0.0; size],
            phases: vec![Complex64::new(1.0, 0.0); lmax + 1],
            rec_a,
            rec_inv_prev,
        }
    }

    /// Same values as `normalized_legendre_table`, with precomputed factors.
    fn fill_legendre(&mut self, cos_t: f64, sin_t: f64) {
        let out = &mut self.legendre;
        let mut pmm = 0.5 / PI.sqrt();
        for m in 0..=self.lmax {
            if m > 0 {
                pmm *= -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * sin_t;
            }
            let base = tri_index(m, m);
            out[base] = pmm;
            if m == self.lmax {
                break;
            }
            let mut prev = pmm;
            let mut cur = self.rec_a[tri_index(m + 1, m)] * cos_t * pmm;
            out[tri_index(m + 1, m)] = cur;
            for l in (m + 2)..=self.lmax {
                let k = tri_index(l, m);
                let next = self.rec_a[k] * (cos_t * cur - prev * self.rec_inv_prev[k]);
                out[k] = next;
                prev = cur;
                cur = next;
            }
        }
    }

    pub fn bandlimit(&self) -> usize {
        self.lmax
    }

    fn prepare(&mut self, p: &SpherePoint) {
        let rho = p.x.hypot(p.y);
        let norm = (rho * rho + p.z * p.z).sqrt();
        let (cos_t, sin_t) = (p.z / norm, rho / norm);
        self.fill_legendre(cos_t, sin_t);
        let e = if rho > 0.0 {
            Complex64::new(p.x / rho, p.y / rho)
        } else {
            Complex64::new(1.0, 0.0)
        };
        for m in 1..=self.lmax {
            self.phases[m] = self.phases[m - 1] * e;
        }
    }

    /// Writes Y_lm(p) for all (l, m) with l <= lmax into `out` (lexicographic).
    pub fn evaluate_all(&mut self, p: &SpherePoint, out: &mut [Complex64]) {
        self.prepare(p);
        for l in 0..=self.lmax {
            let base = l * l + l;
            out[base] = Complex64::new(self.legendre[tri_index(l, 0)], 0.0);
            for m in 1..=l {
                let y = self.phases[m] * self.legendre[tri_index(l, m)];
                out[base + m] = y;
                out[base - m] = if m % 2 == 0 { y.conj() } else { -y.conj() };
            }
        }
    }

    /// Evaluates sum_lm f_lm Y_lm(p) without materializing the harmonics.
    pub fn synthesize(&mut self, f: &ShCoefficients, p: &SpherePoint) -> Complex64 {
        let lmax = f.bandlimit().min(self.lmax);
        self.prepare(p);
        let c = f.as_slice();
        let mut acc = Complex64::new(0.0, 0.0);
        for l in 0..=lmax {
            let base = l * l + l;
            acc += c[base] * self.legendre[tri_index(l, 0)];
            for m in 1..=l {
                let y = self.phases[m] * self.legendre[tri_index(l, m)];
                let yn = if m % 2 == 0 { y.conj() } else { -y.conj() };
                acc += c[base + m] * y + c[base - m] * yn;
            }
        }
        acc
    }
}

/// Complex coefficients f_lm for 0 <= l <= L, lexicographic in (l, m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShCoefficients {
    bandlimit: usize,
    coeffs: Vec<Complex64>,
}

impl ShCoefficients {
    pub fn new(bandlimit: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != num_coefficients(bandlimit) {
            return Err(Error::DimensionMismatch(format!(
                "bandlimit {bandlimit} needs {} coefficients, got {}",
                num_coefficients(bandlimit),
                coeffs.len()
            )));
        }
        Ok(Self { bandlimit, coeffs })
    }

    pub fn zeros(bandlimit: usize) -> Self {
        Self {
            bandlimit,
            coeffs: vec![Complex64::new(0.0, 0.0); num_coefficients(bandlimit)],
        }
    }

    pub fn bandlimit(&self) -> usize {
        self.bandlimit
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        self.coeffs[lm_index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, v: Complex64) {
        self.coeffs[lm_index(l, m)] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            bandlimit: self.bandlimit,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// ||self - other|| / ||other||.
    pub fn relative_error(&self, other: &Self) -> Result<f64> {
        if self.bandlimit != other.bandlimit {
            return Err(Error::DimensionMismatch("bandlimits differ".into()));
        }
        let den = other.norm();
        if den == 0.0 {
            return Err(Error::Numerical("reference coefficients are zero".into()));
        }
        let num: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok(num.sqrt() / den)
    }

    /// Largest violation of f*_{l,m} = (-1)^m f_{l,-m}.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..=self.bandlimit {
            for m in 0..=l as i64 {
                let a = self.get(l, m).conj();
                let b = self.get(l, -m) * if m % 2 == 0 { 1.0 } else { -1.0 };
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.reality_defect() <= tol
    }

    /// Projects onto the real-function subspace (average with the mirrored conjugate).
    pub fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        for l in 0..=self.bandlimit {
            for m in 0..=l as i64 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let p = self.get(l, m);
                let q = self.get(l, -m);
                let v = (p + q.conj() * sign) * 0.5;
                out.set(l, m, v);
                out.set(l, -m, v.conj() * sign);
            }
        }
        out
    }

    /// Coefficients restricted (or zero-padded) to another bandlimit.
    pub fn with_bandlimit(&self, bandlimit: usize) -> Self {
        let mut out = Self::zeros(bandlimit);
        let n = num_coefficients(bandlimit.min(self.bandlimit));
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }

    /// Real parameters of a real-valued function: per degree
    /// [f_l0, Re f_l1, Im f_l1, ..., Re f_ll, Im f_ll]; negative orders implied.
    pub fn to_real_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coeffs.len());
        for l in 0..=self.bandlimit {
            out.push(self.get(l, 0).re);
            for m in 1..=l as i64 {
                let v = self.get(l, m);
                out.push(v.re);
                out.push(v.im);
            }
        }
        out
    }

    pub fn from_real_params(bandlimit: usize, p: &[f64]) -> Result<Self> {
        if p.len() != num_coefficients(bandlimit) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} real parameters, got {}",
                num_coefficients(bandlimit),
                p.len()
            )));
        }
        let mut out = Self::zeros(bandlimit);
        let mut k = 0;
        for l in 0..=bandlimit {
            out.set(l, 0, Complex64::new(p[k], 0.0));
            k += 1;
            for m in 1..=l as i64 {
                let v = Complex64::new(p[k], p[k + 1]);
                k += 2;
                out.set(l, m, v);
                out.set(l, -m, if m % 2 == 0 { v.conj() } else { -v.conj() });
            }
        }
        Ok(out)
    }

    /// Evaluates the expansion at one point.
    pub fn evaluate(&self, p: &SpherePoint) -> Complex64 {
        HarmonicWorkspace::new(self.bandlimit).synthesize(self, p)
    }

    /// Text form: header `l,m,re,im` then one line per coefficient.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("l,m,re,im\n");
        for l in 0..=self.bandlimit {
            for m in -(l as i64)..=l as i64 {
                let v = self.get(l, m);
                let _ = writeln!(s, "{l},{m},{:e},{:e}", v.re, v.im);
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, i64, Complex64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || (lineno == 0 && t.starts_with('l')) {
                continue;
            }
            let fields: Vec<&str> = t.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 fields", lineno + 1)));
            }
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 1));
            let l: usize = fields[0].parse().map_err(|_| bad("degree"))?;
            let m: i64 = fields[1].parse().map_err(|_| bad("order"))?;
            let re: f64 = fields[2].parse().map_err(|_| bad("real part"))?;
            let im: f64 = fields[3].parse().map_err(|_| bad("imaginary part"))?;
            if l > 4096 || m.unsigned_abs() as usize > l {
                return Err(bad("index"));
            }
            entries.push((l, m, Complex64::new(re, im)));
        }
        let bandlimit = entries
            .iter()
            .map(|e| e.0)
            .max()
            .ok_or_else(|| Error::Parse("no coefficients".into()))?;
        let mut out = Self::zeros(bandlimit);
        let mut seen = vec![false; out.len()];
        for (l, m, v) in entries {
            let k = lm_index(l, m);
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::Parse(format!("duplicate coefficient ({l}, {m})")));
            }
            out.coeffs[k] = v;
        }
        Ok(out)
    }
}

/// P[l] = (1 / (2l+1)) sum_m |f_lm|^2.
pub fn power_spectrum(f: &ShCoefficients) -> Vec<f64> {
    (0..=f.bandlimit())
        .map(|l| {
            let base = l * l;
            let s: f64 = f.as_slice()[base..base + 2 * l + 1].iter().map(|c| c.norm_sqr()).sum();
            s / (2 * l + 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// d^n/dx^n of (x^2 - 1)^l by exact integer polynomial expansion.
    fn rodrigues_legendre(l: usize, m: usize, x: f64) -> f64 {
        // coefficients of (x^2-1)^l
        let mut poly = vec![0.0f64; 2 * l + 1];
        let mut binom = 1.0;
        for k in 0..=l {
            let sign = if (l - k) % 2 == 0 { 1.0 } else { -1.0 };
            poly[2 * k] = sign * binom;
            binom = binom * (l - k) as f64 / (k + 1) as f64;
        }
        for _ in 0..(l + m) {
            poly = poly.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect();
        }
        let val: f64 = poly.iter().rev().fold(0.0, |acc, c| acc * x + c);
        let mut fact = 1.0;
        for k in 1..=l {
            fact *= (2 * k) as f64;
        }
        let cs = if m % 2 == 0 { 1.0 } else { -1.0 };
        cs * (1.0 - x * x).powf(m as f64 / 2.0) * val / fact
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn low_order_closed_forms() {
        for &x in &[-1.0, -0.4, 0.0, 0.3, 1.0] {
            assert_eq!(assoc_legendre(0, 0, x).unwrap(), 1.0);
            assert!((assoc_legendre(1, 0, x).unwrap() - x).abs() < 1e-15);
        }
        let y = ylm(1, 0, 0.7, 1.3).unwrap();
        assert!((y.re - (3.0 / (4.0 * PI)).sqrt() * 0.7f64.cos()).abs() < 1e-15);
        assert!(y.im.abs() < 1e-15);
        let y00 = ylm(0, 0, 2.1, -0.3).unwrap();
        assert!((y00.re - 0.5 / PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn legendre_matches_rodrigues_polynomial() {
        let v = assoc_legendre(8, 3, 0.3).unwrap();
        let r = rodrigues_legendre(8, 3, 0.3);
        assert!((v - r).abs() < 1e-12 * r.abs().max(1.0), "{v} vs {r}");
        for l in 0..=10 {
            for m in 0..=l {
                for &x in &[-0.9, -0.2, 0.45, 0.8] {
                    let a = assoc_legendre(l, m, x).unwrap();
                    let b = rodrigues_legendre(l, m, x);
                    assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "l={l} m={m} x={x}");
                }
            }
        }
    }

    #[test]
    fn ylm_matches_factorial_normalization() {
        for l in 0..=15usize {
            for m in -(l as i64)..=l as i64 {
                let (theta, phi): (f64, f64) = (0.83, -2.2);
                let ma = m.unsigned_abs() as usize;
                let p = assoc_legendre(l, ma, theta.cos()).unwrap();
                let norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - ma) / factorial(l + ma)).sqrt();
                let mut expect = Complex64::from_polar(norm * p, ma as f64 * phi);
                if m < 0 {
                    expect = expect.conj() * if ma % 2 == 0 { 1.0 } else { -1.0 };
                }
                let got = ylm(l, m, theta, phi).unwrap();
                assert!((got - expect).norm() < 1e-12, "l={l} m={m}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn invalid_indices_rejected() {
        assert!(assoc_legendre(2, 3, 0.1).is_err());
        assert!(assoc_legendre(2, 1, 1.5).is_err());
        assert!(ylm(2, -3, 0.1, 0.1).is_err());
    }

    #[test]
    fn legendre_bounded_through_degree_100() {
        // |P_lm| <= (l+m)!/(l-m)!, compared in log space
        for l in 0..=100usize {
            for m in 0..=l {
                let log_bound: f64 = ((l - m + 1)..=(l + m)).map(|k| (k as f64).ln()).sum();
                for &x in &[-0.999, -0.5, 0.0, 0.31, 0.77, 1.0] {
                    let p = assoc_legendre(l, m, x).unwrap();
                    assert!(p.is_finite());
                    if p != 0.0 {
                        assert!(p.abs().ln() <= log_bound + 1e-9, "l={l} m={m} x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn workspace_agrees_with_pointwise_ylm() {
        let lmax = 12;
        let mut ws = HarmonicWorkspace::new(lmax);
        let mut out = vec![Complex64::default(); num_coefficients(lmax)];
        let (theta, phi) = (1.1f64, 0.4f64);
        let p = crate::lie::from_spherical(theta, phi);
        ws.evaluate_all(&p, &mut out);
        for l in 0..=lmax {
            for m in -(l as i64)..=l as i64 {
                let y = ylm(l, m, theta, phi).unwrap();
                assert!((out[lm_index(l, m)] - y).norm() < 1e-13);
            }
        }
        // pole: only m = 0 survives
        ws.evaluate_all(&SpherePoint::new(0.0, 0.0, 1.0), &mut out);
        for l in 0..=lmax {
            for m in -(l as i64)..=l as i64 {
                if m != 0 {
                    assert_eq!(out[lm_index(l, m)].norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn power_spectrum_of_unit_shells() {
        let l = 5;
        let mut f = ShCoefficients::zeros(l);
        assert!(power_spectrum(&f).iter().all(|&p| p == 0.0));
        for d in 0..=l {
            let v = 1.0 / ((2 * d + 1) as f64).sqrt();
            for m in -(d as i64)..=d as i64 {
                f.set(d, m, Complex64::new(v, 0.0));
            }
        }
        for (d, p) in power_spectrum(&f).into_iter().enumerate() {
            assert!((p - 1.0 / (2 * d + 1) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn real_params_round_trip() {
        let p: Vec<f64> = (0..16).map(|k| (k as f64 * 0.37).sin()).collect();
        let f = ShCoefficients::from_real_params(3, &p).unwrap();
        assert!(f.is_real(1e-15));
        assert_eq!(f.to_real_params(), p);
    }

    #[test]
    fn csv_round_trip() {
        let p: Vec<f64> = (0..9).map(|k| (k as f64 * 1.37).cos()).collect();
        let f = ShCoefficients::from_real_params(2, &p).unwrap();
        let g = ShCoefficients::from_csv(&f.to_csv()).unwrap();
        assert_eq!(f, g);
        assert!(ShCoefficients::from_csv("").is_err());
        assert!(ShCoefficients::from_csv("l,m,re,im\n1,2,0,0\n").is_err());
    }
}
