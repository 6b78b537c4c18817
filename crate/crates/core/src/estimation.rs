//! Single-pass debiased bispectrum estimation from noisy projected images.
//!
//! With s = x + e, e = U eps and eps white with variance sigma^2, the second
//! moments are E[e_a e_b] = sigma^2 (U U^T)_ab and E[e_a conj(e_b)] =
//! sigma^2 (U U^H)_ab. Every bispectrum entry is C f_l conj(f_l1) conj(f_l2)
//! summed over m, so its noise bias is linear in s:
//!
//!   K1 = sigma^2 sum_m s_{l,m} sum_m1 C conj(UU^T)_{(l1,m1),(l2,m-m1)}
//!   K2 = sigma^2 sum_m2 conj(s_{l2,m2}) sum_m C (UU^H)_{(l,m),(l1,m-m2)}
//!   K3 = sigma^2 sum_m1 conj(s_{l1,m1}) sum_m C (UU^H)_{(l,m),(l2,m-m1)}
//!
//! and E[b_s - K1 - K2 - K3] = b_x exactly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bispectrum::{bispectrum, table_indices, BispectrumVector};
use crate::clebsch_gordan::CgTable;
use crate::error::{invalid, Error, Result};
use crate::harmonics::{lm_index, num_coefficients, ShCoefficients};
use crate::image::ImageGrid;
use crate::projection::ProjectionOperator;

/// Images handled per parallel batch; fixes the summation tree so results
/// do not depend on the worker count.
pub const BATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct DebiasOperators {
    bandlimit: usize,
    sigma2: f64,
    triplets: Vec<(usize, usize, usize)>,
    /// Per triplet: K1 weights on s_l (2l+1), K2 weights on conj(s_l2)
    /// (2l2+1), K3 weights on conj(s_l1) (2l1+1), concatenated, unscaled.
    offsets: Vec<usize>,
    weights: Vec<Complex64>,
}

pub fn build_debias(op: &ProjectionOperator, cg: &CgTable, sigma2: f64) -> Result<DebiasOperators> {
    let (uut, uuh) = op.noise_covariances();
    DebiasOperators::from_covariances(&uut, &uuh, cg, op.bandlimit(), sigma2)
}

impl DebiasOperators {
    /// Operators from explicit covariance factors U U^T and U U^H.
    pub fn from_covariances(
        uut: &DMatrix<Complex64>,
        uuh: &DMatrix<Complex64>,
        cg: &CgTable,
        bandlimit: usize,
        sigma2: f64,
    ) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return invalid(format!("noise variance must be finite and >= 0, got {sigma2}"));
        }
        let nc = num_coefficients(bandlimit);
        for m in [uut, uuh] {
            if m.nrows() != nc || m.ncols() != nc {
                return Err(Error::DimensionMismatch(format!(
                    "covariance is {}x{}, bandlimit {bandlimit} needs {nc}x{nc}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let idx = table_indices(cg, bandlimit)?;
        let blocks: Vec<Vec<Complex64>> = idx
            .par_iter()
            .map(|&t| {
                let (l1, l2, l) = cg.triplets()[t];
                let mut a1 = vec![Complex64::default(); 2 * l + 1];
                let mut a2 = vec![Complex64::default(); 2 * l2 + 1];
                let mut a3 = vec![Complex64::default(); 2 * l1 + 1];
                for m in -(l as i64)..=l as i64 {
                    let (lo, c) = cg.vector(t, m);
                    let row = lm_index(l, m);
                    for (k, &ck) in c.iter().enumerate() {
                        let m1 = lo + k as i64;
                        let m2 = m - m1;
                        let i1 = lm_index(l1, m1);
                        let i2 = lm_index(l2, m2);
                        a1[(m + l as i64) as usize] += uut[(i1, i2)].conj() * ck;
                        a2[(m2 + l2 as i64) as usize] += uuh[(row, i1)] * ck;
                        a3[(m1 + l1 as i64) as usize] += uuh[(row, i2)] * ck;
                    }
                }
                a1.extend(a2);
                a1.extend(a3);
                a1
            })
            .collect();
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        let mut weights = Vec::new();
        for b in blocks {
            weights.extend(b);
            offsets.push(weights.len());
        }
        Ok(Self {
            bandlimit,
            sigma2,
            triplets: idx.iter().map(|&t| cg.triplets()[t]).collect(),
            offsets,
            weights,
        })
    }

    pub fn bandlimit(&self) -> usize {
        self.bandlimit
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Same operators at a different noise variance.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return invalid(format!("noise variance must be finite and >= 0, got {sigma2}"));
        }
        Ok(Self { sigma2, ..self.clone() })
    }

    fn check(&self, s: &ShCoefficients) -> Result<()> {
        if s.bandlimit() != self.bandlimit {
            return Err(Error::DimensionMismatch(format!(
                "operators built for bandlimit {}, coefficients have {}",
                self.bandlimit,
                s.bandlimit()
            )));
        }
        Ok(())
    }

    fn triplet_terms(&self, s: &[Complex64], t: usize) -> [Complex64; 3] {
        let (l1, l2, l) = self.triplets[t];
        let w = &self.weights[self.offsets[t]..self.offsets[t + 1]];
        let (a1, rest) = w.split_at(2 * l + 1);
        let (a2, a3) = rest.split_at(2 * l2 + 1);
        let dot = |a: &[Complex64], d: usize, conj: bool| -> Complex64 {
            let base = d * d;
            a.iter()
                .zip(&s[base..base + 2 * d + 1])
                .map(|(x, v)| if conj { x * v.conj() } else { x * v })
                .sum()
        };
        [
            dot(a1, l, false) * self.sigma2,
            dot(a2, l2, true) * self.sigma2,
            dot(a3, l1, true) * self.sigma2,
        ]
    }

    /// The three correction terms separately.
    pub fn terms(&self, s: &ShCoefficients) -> Result<[BispectrumVector; 3]> {
        self.check(s)?;
        let per: Vec<[Complex64; 3]> = (0..self.triplets.len())
            .map(|t| self.triplet_terms(s.as_slice(), t))
            .collect();
        let pick = |k: usize| BispectrumVector::new(self.bandlimit, per.iter().map(|p| p[k]).collect());
        Ok([pick(0)?, pick(1)?, pick(2)?])
    }

    /// K1 + K2 + K3 evaluated at s.
    pub fn correction(&self, s: &ShCoefficients) -> Result<BispectrumVector> {
        self.check(s)?;
        let values = (0..self.triplets.len())
            .map(|t| self.triplet_terms(s.as_slice(), t).iter().sum())
            .collect();
        BispectrumVector::new(self.bandlimit, values)
    }

    /// b_s minus the noise bias.
    pub fn debiased_bispectrum(&self, s: &ShCoefficients, cg: &CgTable) -> Result<BispectrumVector> {
        let mut b = bispectrum(s, cg)?;
        if self.sigma2 > 0.0 {
            let k = self.correction(s)?;
            b.values_mut().iter_mut().zip(k.values()).for_each(|(x, y)| *x -= y);
        }
        Ok(b)
    }
}

/// Mergeable running sum of per-image debiased bispectra.
#[derive(Debug, Clone, PartialEq)]
pub struct BispectrumAccumulator {
    bandlimit: usize,
    sum: Vec<Complex64>,
    count: u64,
}

impl BispectrumAccumulator {
    pub fn new(bandlimit: usize) -> Self {
        Self {
            bandlimit,
            sum: BispectrumVector::zeros(bandlimit).values().to_vec(),
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn add(&mut self, b: &BispectrumVector) -> Result<()> {
        if b.bandlimit() != self.bandlimit {
            return Err(Error::DimensionMismatch("bispectrum bandlimit differs from accumulator".into()));
        }
        self.sum.iter_mut().zip(b.values()).for_each(|(s, v)| *s += v);
        self.count += 1;
        Ok(())
    }

    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if other.bandlimit != self.bandlimit {
            return Err(Error::DimensionMismatch("accumulators of different bandlimits".into()));
        }
        self.sum.iter_mut().zip(&other.sum).for_each(|(s, v)| *s += v);
        self.count += other.count;
        Ok(self)
    }

    pub fn mean(&self) -> Result<BispectrumVector> {
        if self.count == 0 {
            return invalid("mean of an empty image stream");
        }
        let inv = 1.0 / self.count as f64;
        BispectrumVector::new(self.bandlimit, self.sum.iter().map(|v| v * inv).collect())
    }
}

/// Pairwise sum over a fixed binary tree.
fn tree_sum(mut parts: Vec<BispectrumAccumulator>) -> Option<BispectrumAccumulator> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(&b).expect("same bandlimit")),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Accumulate one batch of images; per-image work runs in parallel and the
/// batch is reduced over a fixed tree.
pub fn accumulate_batch(
    images: &[ImageGrid],
    op: &ProjectionOperator,
    cg: &CgTable,
    debias: &DebiasOperators,
) -> Result<BispectrumAccumulator> {
    let l = op.bandlimit();
    if debias.bandlimit() != l {
        return Err(Error::DimensionMismatch("debias operators and projection disagree on bandlimit".into()));
    }
    let parts: Vec<BispectrumAccumulator> = images
        .par_iter()
        .map(|img| {
            let s = op.apply(img)?;
            let b = debias.debiased_bispectrum(&s, cg)?;
            let mut acc = BispectrumAccumulator::new(l);
            acc.add(&b)?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(tree_sum(parts).unwrap_or_else(|| BispectrumAccumulator::new(l)))
}

/// (1/N) sum_j (b_{s_j} - K(s_j)) over a stream of images, consumed once.
pub fn estimate_bispectrum<I>(
    images: I,
    op: &ProjectionOperator,
    cg: &CgTable,
    debias: &DebiasOperators,
) -> Result<BispectrumVector>
where
    I: IntoIterator<Item = ImageGrid>,
{
    let mut it = images.into_iter();
    let mut batches = Vec::new();
    loop {
        let chunk: Vec<ImageGrid> = it.by_ref().take(BATCH).collect();
        if chunk.is_empty() {
            break;
        }
        batches.push(accumulate_batch(&chunk, op, cg, debias)?);
        // keep memory flat on long streams: fold completed pairs as they close
        while batches.len() >= 2 && batches[batches.len() - 1].count() == batches[batches.len() - 2].count() {
            let b = batches.pop().expect("len >= 2");
            let a = batches.pop().expect("len >= 2");
            batches.push(a.merge(&b)?);
        }
    }
    if batches.is_empty() {
        return invalid("empty image stream");
    }
    // remaining partial sums are in decreasing size; fold right to left
    let mut acc = batches.pop().expect("nonempty");
    while let Some(a) = batches.pop() {
        acc = a.merge(&acc)?;
    }
    acc.mean()
}
