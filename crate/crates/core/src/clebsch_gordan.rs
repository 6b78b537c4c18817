//! Clebsch-Gordan vectors C^{l,m}_{l1,m1,l2,m-m1} over the admissible m1
//! range, computed as the nullspace of the symmetric tridiagonal
//! recursion matrix, plus an exact rational reference and a flat table.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::bispectrum::triplets;
use crate::error::{invalid, Error, Result};

/// Required bound on the nullspace residual of every CG vector.
pub const NULLSPACE_TOLERANCE: f64 = 1e-10;

/// Backward substitution drifts to ~1e-10 by degree 30; refine well before that.
const REFINE_ABOVE: f64 = 1e-3 * NULLSPACE_TOLERANCE;

/// Admissible m1 range [max(-l1, m-l2), min(l1, m+l2)].
#[inline]
pub fn m1_range(l1: usize, l2: usize, m: i64) -> (i64, i64) {
    let (l1, l2) = (l1 as i64, l2 as i64);
    ((-l1).max(m - l2), l1.min(m + l2))
}

fn check_indices(l1: usize, l2: usize, l: usize, m: i64) -> Result<()> {
    if l < l1.abs_diff(l2) || l > l1 + l2 {
        return invalid(format!("({l1}, {l2}, {l}) violates the triangle inequality"));
    }
    if m.unsigned_abs() as usize > l {
        return invalid(format!("|m| = {} exceeds l = {l}", m.abs()));
    }
    Ok(())
}

/// Diagonal and off-diagonal of the recursion matrix for (l1, l2, l, m).
fn recursion_matrix(l1: usize, l2: usize, l: usize, m: i64) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = m1_range(l1, l2, m);
    let j1 = (l1 * (l1 + 1)) as f64;
    let j2 = (l2 * (l2 + 1)) as f64;
    let jl = (l * (l + 1)) as f64;
    let diag = (lo..=hi)
        .map(|m1| {
            let m2 = m - m1;
            j1 + j2 + 2.0 * (m1 * m2) as f64 - jl
        })
        .collect();
    let off = (lo..hi)
        .map(|m1| {
            let m2 = m - m1;
            let a = j1 - (m1 * (m1 + 1)) as f64;
            let b = j2 - (m2 * (m2 - 1)) as f64;
            a.sqrt() * b.sqrt()
        })
        .collect();
    (diag, off)
}

fn tridiagonal_residual(diag: &[f64], off: &[f64], c: &[f64]) -> f64 {
    let n = diag.len();
    (0..n)
        .map(|i| {
            let mut r = diag[i] * c[i];
            if i > 0 {
                r += off[i - 1] * c[i - 1];
            }
            if i + 1 < n {
                r += off[i] * c[i + 1];
            }
            r.abs()
        })
        .fold(0.0, f64::max)
}

fn normalize_positive_last(c: &mut [f64]) {
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if c[c.len() - 1] < 0.0 { -1.0 } else { 1.0 };
    for v in c.iter_mut() {
        *v *= sign / norm;
    }
}

fn inverse_iteration(diag: &[f64], off: &[f64], start: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let scale = diag.iter().map(|d| d.abs()).fold(1.0, f64::max);
    let shift = 1e-9 * scale;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = diag[i] - shift;
        if i + 1 < n {
            a[(i, i + 1)] = off[i];
            a[(i + 1, i)] = off[i];
        }
    }
    let lu = a.lu();
    let mut x = DVector::from_column_slice(start);
    for _ in 0..3 {
        if let Some(y) = lu.solve(&x) {
            let nrm = y.norm();
            if nrm.is_finite() && nrm > 0.0 {
                x = y / nrm;
            }
        }
    }
    let mut v: Vec<f64> = x.iter().copied().collect();
    normalize_positive_last(&mut v);
    v
}

/// Unit-norm CG vector over m1 in [m1_lo, m1_hi] with positive last entry.
pub fn cg_vector(l1: usize, l2: usize, l: usize, m: i64) -> Result<Vec<f64>> {
    check_indices(l1, l2, l, m)?;
    let (diag, off) = recursion_matrix(l1, l2, l, m);
    let n = diag.len();
    let mut c = vec![0.0; n];
    c[n - 1] = 1.0 / n as f64;
    if n > 1 {
        // rows n, n-1, ..., 2 of the system determine c backwards
        c[n - 2] = -diag[n - 1] * c[n - 1] / off[n - 2];
        for i in (1..n - 1).rev() {
            c[i - 1] = -(diag[i] * c[i] + off[i] * c[i + 1]) / off[i - 1];
        }
    }
    normalize_positive_last(&mut c);
    if tridiagonal_residual(&diag, &off, &c) > REFINE_ABOVE {
        c = inverse_iteration(&diag, &off, &c);
    }
    Ok(c)
}

/// ||T c||_inf for the recursion matrix T of (l1, l2, l, m).
pub fn nullspace_residual(l1: usize, l2: usize, l: usize, m: i64, c: &[f64]) -> Result<f64> {
    check_indices(l1, l2, l, m)?;
    let (diag, off) = recursion_matrix(l1, l2, l, m);
    if c.len() != diag.len() {
        return Err(Error::DimensionMismatch("vector length differs from m1 range".into()));
    }
    Ok(tridiagonal_residual(&diag, &off, c))
}

fn factorial(n: i64) -> BigInt {
    (2..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Single coefficient from the Racah sum, evaluated exactly in rationals.
/// Index combinations outside the selection rules give 0.
pub fn cg_oracle(l1: i64, m1: i64, l2: i64, m2: i64, l: i64, m: i64) -> f64 {
    if l1 < 0 || l2 < 0 || l < 0 || m1 + m2 != m {
        return 0.0;
    }
    if m1.abs() > l1 || m2.abs() > l2 || m.abs() > l || l < (l1 - l2).abs() || l > l1 + l2 {
        return 0.0;
    }
    let f = factorial;
    let prefactor = BigRational::new(
        BigInt::from(2 * l + 1)
            * f(l + l1 - l2)
            * f(l - l1 + l2)
            * f(l1 + l2 - l)
            * f(l + m)
            * f(l - m)
            * f(l1 - m1)
            * f(l1 + m1)
            * f(l2 - m2)
            * f(l2 + m2),
        f(l1 + l2 + l + 1),
    );
    let mut sum = BigRational::zero();
    let kmin = 0.max(l2 - l - m1).max(l1 - l + m2);
    let kmax = (l1 + l2 - l).min(l1 - m1).min(l2 + m2);
    for k in kmin..=kmax {
        let den = f(k) * f(l1 + l2 - l - k) * f(l1 - m1 - k) * f(l2 + m2 - k) * f(l - l2 + m1 + k) * f(l - l1 - m2 + k);
        let term = BigRational::new(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return 0.0;
    }
    let sq = &prefactor * &sum * &sum;
    let v = sq.to_f64().unwrap_or(f64::NAN).sqrt();
    if sum.is_negative() {
        -v
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    m1_min: i64,
    len: usize,
    offset: usize,
}

/// All CG vectors needed by the bispectrum of bandlimit L, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct CgTable {
    bandlimit: usize,
    triplets: Vec<(usize, usize, usize)>,
    lookup: Vec<u32>,
    entry_base: Vec<usize>,
    entries: Vec<Entry>,
    data: Vec<f64>,
}

const CACHE_MAGIC: &[u8; 4] = b"CGT1";
const CACHE_VERSION: u32 = 1;
/// Refuse caches beyond this bandlimit (guards allocation on corrupt input).
pub const MAX_CACHE_BANDLIMIT: usize = 512;

fn layout(bandlimit: usize) -> (Vec<(usize, usize, usize)>, Vec<u32>, Vec<usize>, Vec<Entry>) {
    let trip = triplets(bandlimit);
    let side = bandlimit + 1;
    let mut lookup = vec![u32::MAX; side * side * side];
    let mut entry_base = Vec::with_capacity(trip.len());
    let mut entries = Vec::new();
    let mut offset = 0;
    for (t, &(l1, l2, l)) in trip.iter().enumerate() {
        lookup[(l1 * side + l2) * side + l] = t as u32;
        entry_base.push(entries.len());
        for m in -(l as i64)..=l as i64 {
            let (lo, hi) = m1_range(l1, l2, m);
            let len = (hi - lo + 1) as usize;
            entries.push(Entry {
                m1_min: lo,
                len,
                offset,
            });
            offset += len;
        }
    }
    (trip, lookup, entry_base, entries)
}

impl CgTable {
    pub fn build(bandlimit: usize) -> Self {
        let (trip, lookup, entry_base, entries) = layout(bandlimit);
        let blocks: Vec<Vec<f64>> = trip
            .par_iter()
            .map(|&(l1, l2, l)| {
                let mut block = Vec::new();
                for m in -(l as i64)..=l as i64 {
                    block.extend(cg_vector(l1, l2, l, m).expect("admissible by construction"));
                }
                block
            })
            .collect();
        Self {
            bandlimit,
            triplets: trip,
            lookup,
            entry_base,
            entries,
            data: blocks.concat(),
        }
    }

    pub fn bandlimit(&self) -> usize {
        self.bandlimit
    }

    pub fn triplets(&self) -> &[(usize, usize, usize)] {
        &self.triplets
    }

    /// Number of stored (l1, l2, l, m) vectors.
    pub fn num_vectors(&self) -> usize {
        self.entries.len()
    }

    pub fn num_values(&self) -> usize {
        self.data.len()
    }

    pub fn triplet_index(&self, l1: usize, l2: usize, l: usize) -> Option<usize> {
        let side = self.bandlimit + 1;
        if l1 >= side || l2 >= side || l >= side {
            return None;
        }
        match self.lookup[(l1 * side + l2) * side + l] {
            u32::MAX => None,
            t => Some(t as usize),
        }
    }

    /// (m1_min, vector) for triplet index t and order m, |m| <= l.
    #[inline]
    pub fn vector(&self, t: usize, m: i64) -> (i64, &[f64]) {
        let l = self.triplets[t].2 as i64;
        let e = self.entries[self.entry_base[t] + (m + l) as usize];
        (e.m1_min, &self.data[e.offset..e.offset + e.len])
    }

    pub fn get(&self, l1: usize, l2: usize, l: usize, m: i64) -> Option<(i64, &[f64])> {
        let t = self.triplet_index(l1, l2, l)?;
        if m.unsigned_abs() as usize > l {
            return None;
        }
        Some(self.vector(t, m))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.bandlimit as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.m1_min as i32).to_le_bytes())?;
            w.write_all(&(e.len as u32).to_le_bytes())?;
            w.write_all(&(e.offset as u64).to_le_bytes())?;
        }
        w.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 16 * self.entries.len() + 8 * self.data.len());
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// Decodes a cache; the layout must match the enumeration for its bandlimit
    /// and every vector must be unit-norm with a positive last entry.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::Parse("not a CG table cache (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Parse(format!("unsupported CG cache version {version}")));
        }
        let bandlimit = r.u32()? as usize;
        if bandlimit > MAX_CACHE_BANDLIMIT {
            return Err(Error::Parse(format!("bandlimit {bandlimit} exceeds cache limit")));
        }
        let count = r.u64()?;
        if count.saturating_mul(16) > r.remaining() as u64 {
            return Err(Error::Parse("truncated CG cache index".into()));
        }
        let (trip, lookup, entry_base, expected) = layout(bandlimit);
        if count != expected.len() as u64 {
            return Err(Error::Parse(format!(
                "cache holds {count} vectors, bandlimit {bandlimit} needs {}",
                expected.len()
            )));
        }
        for (k, e) in expected.iter().enumerate() {
            let m1_min = r.i32()? as i64;
            let len = r.u32()? as usize;
            let offset = r.u64()? as usize;
            if m1_min != e.m1_min || len != e.len || offset != e.offset {
                return Err(Error::Parse(format!("cache index entry {k} disagrees with layout")));
            }
        }
        let total = expected.last().map_or(0, |e| e.offset + e.len);
        let payload = r.u64()?;
        if payload != total as u64 || payload.saturating_mul(8) != r.remaining() as u64 {
            return Err(Error::Parse("cache payload length mismatch".into()));
        }
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        for (k, e) in expected.iter().enumerate() {
            let v = &data[e.offset..e.offset + e.len];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() < 1e-10) || !(v[e.len - 1] > 0.0) {
                return Err(Error::Parse(format!("cache vector {k} is not unit-norm with positive anchor")));
            }
        }
        Ok(Self {
            bandlimit,
            triplets: trip,
            lookup,
            entry_base,
            entries: expected,
            data,
        })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Parse("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
