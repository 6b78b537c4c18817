//! Rotations of band-limited spherical functions and brute-force alignment
//! over a deterministic, near-uniform sequence of rotations.

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::harmonics::{num_coefficients, HarmonicWorkspace, ShCoefficients};
use crate::lie::{axis_angle, rotation_angle_between, Rotation3};
use crate::quadrature::SphericalDesign;

/// Default sequence length: 72 * 2^8.
pub const DEFAULT_SEQUENCE_LEN: usize = 72 << 8;

/// Rotations R_i = Rx(psi_i) B_{base_i}; the factorization lets alignment
/// score all circle points of one base with a single coefficient rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSequence {
    rotations: Vec<Rotation3>,
    bases: Vec<Rotation3>,
    factors: Vec<(usize, f64)>,
}

impl RotationSequence {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn get(&self, i: usize) -> &Rotation3 {
        &self.rotations[i]
    }

    pub fn as_slice(&self) -> &[Rotation3] {
        &self.rotations
    }

    /// Largest angle from any of `probes` to its nearest sequence element.
    pub fn covering_radius(&self, probes: &[Rotation3]) -> f64 {
        probes
            .par_iter()
            .map(|p| {
                self.rotations
                    .iter()
                    .map(|r| rotation_angle_between(p, r))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// HEALPix ring-scheme pixel centre (colatitude, longitude).
fn healpix_center(nside: usize, p: usize) -> (f64, f64) {
    let n = nside as f64;
    let npix = 12 * nside * nside;
    let ncap = 2 * nside * (nside - 1);
    let (z, phi) = if p < ncap {
        let i = ((1.0 + (1.0 + 2.0 * p as f64).sqrt()) / 2.0).floor() as usize;
        let j = p - 2 * i * (i - 1) + 1;
        let fi = i as f64;
        (1.0 - fi * fi / (3.0 * n * n), (j as f64 - 0.5) * PI / (2.0 * fi))
    } else if p < npix - ncap {
        let q = p - ncap;
        let i = q / (4 * nside) + nside;
        let j = q % (4 * nside) + 1;
        let shift = if (i + nside) % 2 == 1 { 1.0 } else { 0.5 };
        (
            (2.0 * n - i as f64) * 2.0 / (3.0 * n),
            (j as f64 - shift) * PI / (2.0 * n),
        )
    } else {
        let q = npix - p;
        let i = ((1.0 + (2.0 * q as f64 - 1.0).sqrt()) / 2.0).floor() as usize;
        let j = 4 * i + 1 - (q - 2 * i * (i - 1));
        let fi = i as f64;
        (-1.0 + fi * fi / (3.0 * n * n), (j as f64 - 0.5) * PI / (2.0 * fi))
    };
    (z.clamp(-1.0, 1.0).acos(), phi)
}

/// Hopf-coordinate grid at refinement level r: HEALPix(2^r) on the base
/// sphere times 6 * 2^r circle points, 72 * 8^r rotations. Returns the base
/// rotations and, per element, (base, psi).
fn hopf_level(r: u32) -> (Vec<Rotation3>, Vec<(usize, f64)>) {
    let nside = 1usize << r;
    let npsi = 6 * nside;
    let nbase = 12 * nside * nside;
    let mut bases = Vec::with_capacity(nbase);
    let mut elems = Vec::with_capacity(nbase * npsi);
    for p in 0..nbase {
        let (theta, phi) = healpix_center(nside, p);
        let (ct, st) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let q = Quaternion::new(ct, 0.0, st * phi.cos(), st * phi.sin());
        bases.push(UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner());
        for k in 0..npsi {
            elems.push((p, (k as f64 + 0.5) * 2.0 * PI / npsi as f64));
        }
    }
    (bases, elems)
}

fn x_rotation(psi: f64) -> Rotation3 {
    let (s, c) = psi.sin_cos();
    Rotation3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// The identity followed by successively finer Hopf grids (base 72, cell
/// size halved per level); each level is shuffled with a fixed seed so that
/// any prefix is spread over SO(3).
pub fn rotation_sequence(m: usize) -> Result<RotationSequence> {
    if m == 0 {
        return invalid("rotation sequence needs at least one element");
    }
    let mut bases = vec![Rotation3::identity()];
    let mut factors = vec![(0, 0.0)];
    let mut level = 0;
    while factors.len() < m {
        let (b, mut elems) = hopf_level(level);
        elems.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5e2_0000 + level as u64));
        let take = (m - factors.len()).min(elems.len());
        let offset = bases.len();
        bases.extend(b);
        factors.extend(elems[..take].iter().map(|&(p, psi)| (p + offset, psi)));
        level += 1;
    }
    let rotations = factors.iter().map(|&(b, psi)| x_rotation(psi) * bases[b]).collect();
    Ok(RotationSequence {
        rotations,
        bases,
        factors,
    })
}

fn check_strength(f: &ShCoefficients, quad: &SphericalDesign) {
    if quad.strength() < 2 * f.bandlimit() {
        log::warn!(
            "quadrature strength {} below 2L = {}; rotated coefficients will alias",
            quad.strength(),
            2 * f.bandlimit()
        );
    }
}

/// Coefficients of x -> f(R^T x), by re-analysing f on the rotated quadrature.
pub fn rotate_shc(f: &ShCoefficients, r: &Rotation3, quad: &SphericalDesign) -> ShCoefficients {
    check_strength(f, quad);
    let l = f.bandlimit();
    let nc = num_coefficients(l);
    let rt = r.transpose();
    let partial: Vec<Vec<Complex64>> = quad
        .points()
        .par_chunks(64)
        .zip(quad.weights().par_chunks(64))
        .map(|(pts, ws)| {
            let mut ws_h = HarmonicWorkspace::new(l);
            let mut y = vec![Complex64::default(); nc];
            let mut acc = vec![Complex64::default(); nc];
            for (p, &w) in pts.iter().zip(ws) {
                let v = ws_h.synthesize(f, &(rt * p)) * w;
                ws_h.evaluate_all(p, &mut y);
                for (a, yk) in acc.iter_mut().zip(&y) {
                    *a += v * yk.conj();
                }
            }
            acc
        })
        .collect();
    let mut out = vec![Complex64::default(); nc];
    for p in partial {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    ShCoefficients::new(l, out).expect("length matches bandlimit")
}

/// Re sum f_lm conj(g_lm) / (|f| |g|).
pub fn correlation(f: &ShCoefficients, g: &ShCoefficients) -> Result<f64> {
    if f.bandlimit() != g.bandlimit() {
        return Err(Error::DimensionMismatch("correlation of different bandlimits".into()));
    }
    let (nf, ng) = (f.norm(), g.norm());
    if nf == 0.0 || ng == 0.0 {
        return invalid("correlation with a zero function");
    }
    let dot: f64 = f.as_slice().iter().zip(g.as_slice()).map(|(a, b)| (a * b.conj()).re).sum();
    Ok(dot / (nf * ng))
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub rotation: Rotation3,
    /// Position in the sequence (None after refinement).
    pub index: Option<usize>,
    pub correlation: f64,
    pub rotated: ShCoefficients,
}

/// Correlation of R.est with ref evaluated on the quadrature, without
/// forming rotated coefficients; equal to the coefficient formula when the
/// quadrature is exact to degree 2L.
struct Correlator<'a> {
    est: &'a ShCoefficients,
    quad: &'a SphericalDesign,
    /// w_k conj(ref(p_k)) / (|est| |ref|)
    dual: Vec<Complex64>,
}

impl<'a> Correlator<'a> {
    fn new(est: &'a ShCoefficients, reference: &ShCoefficients, quad: &'a SphericalDesign) -> Result<Self> {
        if est.bandlimit() != reference.bandlimit() {
            return Err(Error::DimensionMismatch("alignment of different bandlimits".into()));
        }
        let (ne, nr) = (est.norm(), reference.norm());
        if ne == 0.0 || nr == 0.0 {
            return invalid("alignment with a zero function");
        }
        check_strength(est, quad);
        let mut ws = HarmonicWorkspace::new(reference.bandlimit());
        let dual = quad
            .points()
            .iter()
            .zip(quad.weights())
            .map(|(p, &w)| ws.synthesize(reference, p).conj() * (w / (ne * nr)))
            .collect();
        Ok(Self { est, quad, dual })
    }

    fn eval(&self, ws: &mut HarmonicWorkspace, r: &Rotation3) -> f64 {
        let rt = r.transpose();
        self.quad
            .points()
            .iter()
            .zip(&self.dual)
            .map(|(p, d)| (ws.synthesize(self.est, &(rt * p)) * d).re)
            .sum()
    }
}

/// Quarter turn about y: maps the z axis to the x axis.
fn z_to_x() -> Rotation3 {
    Rotation3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0)
}

/// correlation(rotate_shc(est, R), ref) for every sequence element, via
/// Rx(psi) = Q Rz(psi) Q^T: for each base B, a = (Q^T B).est and
/// b = Q^T.ref give c(psi) = Re sum a_lm e^{-i m psi} conj(b_lm) / norms.
fn sequence_scores(
    est: &ShCoefficients,
    reference: &ShCoefficients,
    seq: &RotationSequence,
    quad: &SphericalDesign,
) -> Result<Vec<f64>> {
    if est.bandlimit() != reference.bandlimit() {
        return Err(Error::DimensionMismatch("alignment of different bandlimits".into()));
    }
    let (ne, nr) = (est.norm(), reference.norm());
    if ne == 0.0 || nr == 0.0 {
        return invalid("alignment with a zero function");
    }
    check_strength(est, quad);
    let l = est.bandlimit();
    let qt = z_to_x().transpose();
    let b = rotate_shc(reference, &qt, quad);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); seq.bases.len()];
    for (i, &(base, _)) in seq.factors.iter().enumerate() {
        members[base].push(i);
    }
    let per_base: Vec<Vec<(usize, f64)>> = members
        .par_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(base, m)| {
            let a = rotate_shc(est, &(qt * seq.bases[base]), quad);
            // d_m = sum_l a_lm conj(b_lm), m = -L..L
            let mut d = vec![Complex64::default(); 2 * l + 1];
            for deg in 0..=l {
                for mm in -(deg as i64)..=deg as i64 {
                    d[(mm + l as i64) as usize] += a.get(deg, mm) * b.get(deg, mm).conj();
                }
            }
            m.iter()
                .map(|&i| {
                    let psi = seq.factors[i].1;
                    let c: f64 = d
                        .iter()
                        .enumerate()
                        .map(|(k, dk)| (dk * Complex64::from_polar(1.0, -(k as f64 - l as f64) * psi)).re)
                        .sum();
                    (i, c / (ne * nr))
                })
                .collect()
        })
        .collect();
    let mut scores = vec![f64::NEG_INFINITY; seq.len()];
    for (i, c) in per_base.into_iter().flatten() {
        scores[i] = c;
    }
    Ok(scores)
}

/// The sequence element maximizing correlation(rotate_shc(est, R), ref);
/// ties go to the lowest index.
pub fn align(
    est: &ShCoefficients,
    reference: &ShCoefficients,
    seq: &RotationSequence,
    quad: &SphericalDesign,
) -> Result<Alignment> {
    let scores = sequence_scores(est, reference, seq, quad)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let rotation = *seq.get(best);
    let rotated = rotate_shc(est, &rotation, quad);
    Ok(Alignment {
        rotation,
        index: Some(best),
        correlation: correlation(&rotated, reference)?,
        rotated,
    })
}

/// Brute-force scores by rotating the quadrature for every element; the
/// reference implementation for the factorized search.
pub fn sequence_scores_direct(
    est: &ShCoefficients,
    reference: &ShCoefficients,
    seq: &RotationSequence,
    quad: &SphericalDesign,
) -> Result<Vec<f64>> {
    let corr = Correlator::new(est, reference, quad)?;
    let l = est.bandlimit();
    Ok(seq
        .as_slice()
        .par_iter()
        .map_init(|| HarmonicWorkspace::new(l), |ws, r| corr.eval(ws, r))
        .collect())
}

/// Scores used by `align`, exposed for diagnostics.
pub fn sequence_correlations(
    est: &ShCoefficients,
    reference: &ShCoefficients,
    seq: &RotationSequence,
    quad: &SphericalDesign,
) -> Result<Vec<f64>> {
    sequence_scores(est, reference, seq, quad)
}

/// Local pattern search around `start` over rotations exp(w) R, with
/// coordinate steps along the three axes halved until below `tol` radians.
pub fn refine_alignment(
    est: &ShCoefficients,
    reference: &ShCoefficients,
    start: &Rotation3,
    quad: &SphericalDesign,
    initial_step: f64,
    tol: f64,
) -> Result<Alignment> {
    if !(initial_step > 0.0) || !(tol > 0.0) {
        return invalid("pattern search steps must be positive");
    }
    let corr = Correlator::new(est, reference, quad)?;
    let mut ws = HarmonicWorkspace::new(est.bandlimit());
    let mut r = *start;
    let mut best = corr.eval(&mut ws, &r);
    let mut h = initial_step;
    while h >= tol {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut w = [0.0; 3];
                w[axis] = sign * h;
                let cand = axis_angle(w) * r;
                let c = corr.eval(&mut ws, &cand);
                if c > best {
                    best = c;
                    r = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            h /= 2.0;
        }
    }
    let rotated = rotate_shc(est, &r, quad);
    Ok(Alignment {
        rotation: r,
        index: None,
        correlation: correlation(&rotated, reference)?,
        rotated,
    })
}

/// Uniformly distributed random rotation (Haar measure).
pub fn random_rotation<R: rand::Rng>(rng: &mut R) -> Rotation3 {
    use rand_distr::{Distribution, StandardNormal};
    let mut q = [0.0f64; 4];
    for v in &mut q {
        *v = StandardNormal.sample(rng);
    }
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}
