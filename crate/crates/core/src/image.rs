//! Square images sampled on the regular grid over [-zeta, zeta]^2, with
//! bilinear resampling, rigid motions, blurring and file I/O.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;
use std::path::Path;

use crate::clebsch_gordan::ByteReader;
use crate::error::{invalid, Error, Result};
use crate::lie::RigidMotion;

/// Half-width of the image square, cos(pi/4).
pub const ZETA: f64 = FRAC_1_SQRT_2;
const IMG_MAGIC: &[u8; 4] = b"IMG2";
/// Largest side length accepted from files.
pub const MAX_FILE_SIDE: usize = 8193;

/// Grid spacing 2 zeta / (n - 1).
#[inline]
pub fn grid_spacing(n: usize) -> f64 {
    2.0 * ZETA / (n - 1) as f64
}

/// n x n samples; value (i, j) sits at (x_i, y_j), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    n: usize,
    values: Vec<f64>,
}

/// Up to four (pixel, weight) pairs of a bilinear sample; weights sum to 1.
pub type Stencil = [(usize, f64); 4];

impl ImageGrid {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 3 || n % 2 == 0 {
            return invalid(format!("image side must be odd and >= 3, got {n}"));
        }
        if values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n}x{n} image",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("image contains non-finite values");
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![0.0; n * n])
    }

    /// Samples f(x, y) on the grid.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(coord(n, i), coord(n, j)));
            }
        }
        Self::new(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        grid_spacing(self.n)
    }

    pub fn coord(&self, i: usize) -> f64 {
        coord(self.n, i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// ||self - truth||_F / ||truth||_F.
    pub fn relative_error(&self, truth: &ImageGrid) -> Result<f64> {
        if self.n != truth.n {
            return Err(Error::DimensionMismatch("images of different sizes".into()));
        }
        let den = truth.norm();
        if den == 0.0 {
            return Err(Error::Numerical("reference image is zero".into()));
        }
        let num: f64 = self
            .values
            .iter()
            .zip(&truth.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(num.sqrt() / den)
    }

    /// Bilinear stencil at plane point (x, y); None outside the square.
    pub fn stencil(&self, x: f64, y: f64) -> Option<Stencil> {
        stencil(self.n, x, y)
    }

    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        self.stencil(x, y)
            .map(|s| s.iter().map(|&(p, w)| w * self.values[p]).sum())
    }

    /// Sets the outer `margin` rows and columns to zero.
    pub fn zero_margin(&mut self, margin: usize) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                if i < margin || j < margin || i + margin >= n || j + margin >= n {
                    self.values[i * n + j] = 0.0;
                }
            }
        }
    }

    /// Separable Gaussian blur, kernel truncated at `truncate * sigma` pixels,
    /// zero outside the grid.
    pub fn gaussian_blur(&self, sigma: f64, truncate: f64) -> ImageGrid {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (truncate * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= s);
        let n = self.n as isize;
        let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for (kk, w) in kernel.iter().enumerate() {
                        let d = kk as isize - radius;
                        let (ii, jj) = if along_rows { (i + d, j) } else { (i, j + d) };
                        if ii >= 0 && ii < n && jj >= 0 && jj < n {
                            acc += w * src[(ii * n + jj) as usize];
                        }
                    }
                    out[(i * n + j) as usize] = acc;
                }
            }
            out
        };
        let tmp = pass(&self.values, true);
        ImageGrid {
            n: self.n,
            values: pass(&tmp, false),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24);
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{:e}", self.values[i * self.n + j]);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let row = t
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("line {}: bad number {:?}", k + 1, f.trim())))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
            if rows.len() > MAX_FILE_SIDE {
                return Err(Error::Parse("too many rows".into()));
            }
        }
        let n = rows.len();
        if n == 0 {
            return Err(Error::Parse("empty image file".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse(format!("expected {n} columns in every row")));
        }
        Self::new(n, rows.concat()).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.values.len());
        out.extend_from_slice(IMG_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != IMG_MAGIC {
            return Err(Error::Parse("not a binary image (bad magic)".into()));
        }
        let n = r.u32()? as usize;
        if n > MAX_FILE_SIDE || (n * n * 8) as u64 != r.remaining() as u64 {
            return Err(Error::Parse("payload length does not match image side".into()));
        }
        let mut values = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            values.push(r.f64()?);
        }
        Self::new(n, values).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads binary (by magic) or CSV.
    pub fn read_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(IMG_MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            let text = String::from_utf8(bytes).map_err(|_| Error::Parse("image file is neither IMG2 nor text".into()))?;
            Self::from_csv(&text)
        }
    }

    /// Writes CSV for a `.csv` extension, binary otherwise.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            std::fs::write(path, self.to_csv())?;
        } else {
            std::fs::write(path, self.to_bytes())?;
        }
        Ok(())
    }
}

#[inline]
pub fn coord(n: usize, i: usize) -> f64 {
    -ZETA + grid_spacing(n) * i as f64
}

pub fn stencil(n: usize, x: f64, y: f64) -> Option<Stencil> {
    let h = grid_spacing(n);
    let top = (n - 1) as f64;
    let eps = 1e-12 * top;
    let u = (x + ZETA) / h;
    let v = (y + ZETA) / h;
    if !(u >= -eps && u <= top + eps && v >= -eps && v <= top + eps) {
        return None;
    }
    // Snap round-off so grid points sample exactly.
    let snap = |t: f64| if (t - t.round()).abs() <= eps { t.round() } else { t };
    let u = snap(u.clamp(0.0, top));
    let v = snap(v.clamp(0.0, top));
    let i0 = (u.floor() as usize).min(n - 2);
    let j0 = (v.floor() as usize).min(n - 2);
    let (tu, tv) = (u - i0 as f64, v - j0 as f64);
    let p = i0 * n + j0;
    Some([
        (p, (1.0 - tu) * (1.0 - tv)),
        (p + n, tu * (1.0 - tv)),
        (p + 1, (1.0 - tu) * tv),
        (p + n + 1, tu * tv),
    ])
}

/// out(x) = img(g^{-1} x) by bilinear interpolation, zero outside the grid.
pub fn apply_rigid_motion(img: &ImageGrid, g: &RigidMotion) -> ImageGrid {
    let n = img.n;
    let inv = g.inverse();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let p = inv.act([coord(n, i), coord(n, j)]);
            if let Some(v) = img.sample(p[0], p[1]) {
                values[i * n + j] = v;
            }
        }
    }
    ImageGrid { n, values }
}
