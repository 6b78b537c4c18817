//! Spherical bispectrum over the admissible triplets (l1, l2, l) with
//! l2 <= l1, its sparse analytic Jacobian, and the BSP1 binary format.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::clebsch_gordan::{ByteReader, CgTable};
use crate::error::{Error, Result};
use crate::harmonics::{num_coefficients, ShCoefficients};

/// All (l1, l2, l) with 0 <= l2 <= l1 <= L and l1 - l2 <= l <= min(L, l1 + l2),
/// in lexicographic order.
pub fn triplets(bandlimit: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for l1 in 0..=bandlimit {
        for l2 in 0..=l1 {
            for l in (l1 - l2)..=bandlimit.min(l1 + l2) {
                out.push((l1, l2, l));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BispectrumVector {
    bandlimit: usize,
    values: Vec<Complex64>,
}

const BSP_MAGIC: &[u8; 4] = b"BSP1";
pub const MAX_FILE_BANDLIMIT: usize = 512;

impl BispectrumVector {
    pub fn new(bandlimit: usize, values: Vec<Complex64>) -> Result<Self> {
        let expected = triplets(bandlimit).len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "bandlimit {bandlimit} has {expected} triplets, got {} values",
                values.len()
            )));
        }
        Ok(Self { bandlimit, values })
    }

    pub fn zeros(bandlimit: usize) -> Self {
        Self {
            bandlimit,
            values: vec![Complex64::default(); triplets(bandlimit).len()],
        }
    }

    pub fn bandlimit(&self) -> usize {
        self.bandlimit
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Entries as stacked reals (re, im, re, im, ...).
    pub fn to_real_vec(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| [v.re, v.im]).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BSP_MAGIC)?;
        w.write_all(&(self.bandlimit as u32).to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 * self.values.len());
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != BSP_MAGIC {
            return Err(Error::Parse("not a bispectrum file (bad magic)".into()));
        }
        let bandlimit = r.u32()? as usize;
        if bandlimit > MAX_FILE_BANDLIMIT {
            return Err(Error::Parse(format!("bandlimit {bandlimit} too large")));
        }
        let count = r.u64()?;
        if count.saturating_mul(16) != r.remaining() as u64 {
            return Err(Error::Parse("payload length does not match entry count".into()));
        }
        let mut values = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let re = r.f64()?;
            let im = r.f64()?;
            values.push(Complex64::new(re, im));
        }
        Self::new(bandlimit, values).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// ||b1 - b2|| / ||b2||.
pub fn relative_error(b1: &BispectrumVector, b2: &BispectrumVector) -> Result<f64> {
    if b1.bandlimit != b2.bandlimit {
        return Err(Error::DimensionMismatch("bispectra of different bandlimits".into()));
    }
    let den = b2.norm();
    if den == 0.0 {
        return Err(Error::Numerical("reference bispectrum is zero".into()));
    }
    let num: f64 = b1.values.iter().zip(&b2.values).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num.sqrt() / den)
}

/// Triplet indices of `bandlimit` inside a (possibly larger) table.
pub(crate) fn table_indices(cg: &CgTable, bandlimit: usize) -> Result<Vec<usize>> {
    if cg.bandlimit() < bandlimit {
        return Err(Error::InvalidParameter(format!(
            "CG table bandlimit {} is below coefficient bandlimit {bandlimit}",
            cg.bandlimit()
        )));
    }
    Ok(triplets(bandlimit)
        .into_iter()
        .map(|(l1, l2, l)| cg.triplet_index(l1, l2, l).expect("subset of table triplets"))
        .collect())
}

#[inline]
fn triplet_value(f: &[Complex64], cg: &CgTable, t: usize) -> Complex64 {
    let (l1, l2, l) = cg.triplets()[t];
    let (b1, b2, b) = ((l1 * l1 + l1) as i64, (l2 * l2 + l2) as i64, (l * l + l) as i64);
    let mut acc = Complex64::default();
    for m in -(l as i64)..=l as i64 {
        let (lo, c) = cg.vector(t, m);
        // sum of C f_{l1,m1} f_{l2,m-m1}, conjugated once at the end
        let mut inner = Complex64::default();
        for (k, &ck) in c.iter().enumerate() {
            let m1 = lo + k as i64;
            inner += f[(b1 + m1) as usize] * f[(b2 + m - m1) as usize] * ck;
        }
        acc += f[(b + m) as usize] * inner.conj();
    }
    acc
}

pub fn bispectrum(f: &ShCoefficients, cg: &CgTable) -> Result<BispectrumVector> {
    let idx = table_indices(cg, f.bandlimit())?;
    let c = f.as_slice();
    let values = idx.par_iter().map(|&t| triplet_value(c, cg, t)).collect();
    Ok(BispectrumVector {
        bandlimit: f.bandlimit(),
        values,
    })
}

/// Complex-valued derivatives of each bispectrum entry with respect to the
/// real unknowns (Re f_0, ..., Re f_{n-1}, Im f_0, ..., Im f_{n-1}),
/// stored row-compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl SparseJacobian {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[Complex64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        (0..self.rows)
            .map(|r| {
                let mut d = vec![Complex64::default(); self.cols];
                let (c, v) = self.row(r);
                for (&j, &x) in c.iter().zip(v) {
                    d[j] += x;
                }
                d
            })
            .collect()
    }
}

fn jacobian_row(f: &[Complex64], cg: &CgTable, t: usize, n: usize) -> (Vec<usize>, Vec<Complex64>) {
    let (l1, l2, l) = cg.triplets()[t];
    let mut degrees = vec![l2, l1, l];
    degrees.sort_unstable();
    degrees.dedup();
    // E1 collects the terms where the coefficient enters unconjugated,
    // E2 + E3 those where it enters conjugated.
    let width: usize = degrees.iter().map(|d| 2 * d + 1).sum();
    let mut plain = vec![Complex64::default(); width];
    let mut conj = vec![Complex64::default(); width];
    let slot = |d: usize, m: i64| -> usize {
        let mut off = 0;
        for &e in &degrees {
            if e == d {
                return off + (m + d as i64) as usize;
            }
            off += 2 * e + 1;
        }
        unreachable!("degree belongs to the triplet")
    };
    let (b1, b2, b) = ((l1 * l1 + l1) as i64, (l2 * l2 + l2) as i64, (l * l + l) as i64);
    for m in -(l as i64)..=l as i64 {
        let (lo, c) = cg.vector(t, m);
        let fl = f[(b + m) as usize];
        let mut inner = Complex64::default();
        for (k, &ck) in c.iter().enumerate() {
            let m1 = lo + k as i64;
            let m2 = m - m1;
            let a1 = f[(b1 + m1) as usize].conj();
            let a2 = f[(b2 + m2) as usize].conj();
            inner += a1 * a2 * ck;
            conj[slot(l1, m1)] += fl * a2 * ck;
            conj[slot(l2, m2)] += fl * a1 * ck;
        }
        plain[slot(l, m)] += inner;
    }
    let i = Complex64::i();
    let mut cols = Vec::with_capacity(2 * width);
    let mut vals = Vec::with_capacity(2 * width);
    let mut k = 0;
    for &d in &degrees {
        for j in 0..(2 * d + 1) {
            cols.push(d * d + j);
            vals.push(plain[k + j] + conj[k + j]);
        }
        k += 2 * d + 1;
    }
    k = 0;
    for &d in &degrees {
        for j in 0..(2 * d + 1) {
            cols.push(n + d * d + j);
            vals.push(i * (plain[k + j] - conj[k + j]));
        }
        k += 2 * d + 1;
    }
    (cols, vals)
}

pub fn bispectrum_jacobian(f: &ShCoefficients, cg: &CgTable) -> Result<SparseJacobian> {
    let idx = table_indices(cg, f.bandlimit())?;
    let n = num_coefficients(f.bandlimit());
    let c = f.as_slice();
    let rows: Vec<(Vec<usize>, Vec<Complex64>)> =
        idx.par_iter().map(|&t| jacobian_row(c, cg, t, n)).collect();
    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for (cc, vv) in rows {
        col_idx.extend(cc);
        values.extend(vv);
        row_ptr.push(col_idx.len());
    }
    Ok(SparseJacobian {
        rows: idx.len(),
        cols: 2 * n,
        row_ptr,
        col_idx,
        values,
    })
}
