use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use se2inv::alignment::*;
use se2inv::bispectrum::{bispectrum, relative_error, triplets};
use se2inv::clebsch_gordan::CgTable;
use se2inv::harmonics::{power_spectrum, ShCoefficients};
use se2inv::inversion::*;
use se2inv::lie::is_rotation;
use se2inv::projection::random_unit_shell_coefficients;
use se2inv::quadrature::product_quadrature;

fn real_coeffs(seed: u64, l: usize) -> ShCoefficients {
    random_unit_shell_coefficients(&mut ChaCha8Rng::seed_from_u64(seed), l)
}

fn perturbed(f: &ShCoefficients, rel: f64, seed: u64) -> ShCoefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = f.to_real_params();
    let scale = rel * f.norm() / (p.len() as f64).sqrt();
    for v in &mut p {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += scale * z;
    }
    ShCoefficients::from_real_params(f.bandlimit(), &p).unwrap()
}

#[test]
fn starting_at_the_solution_converges_immediately() {
    let f = real_coeffs(1, 6);
    let cg = CgTable::build(6);
    let target = bispectrum(&f, &cg).unwrap();
    let res = invert_bispectrum(&target, &f, &cg, &InversionOptions::default()).unwrap();
    assert!(res.iterations <= 2, "{} iterations", res.iterations);
    assert!(res.residual_norm < 1e-12);
    assert!(res.converged);
}

#[test]
fn zero_target_is_reached_from_a_small_start() {
    let cg = CgTable::build(4);
    let target = se2inv::bispectrum::BispectrumVector::zeros(4);
    let init = real_coeffs(2, 4).scaled(0.1);
    let res = invert_bispectrum(&target, &init, &cg, &InversionOptions::default()).unwrap();
    assert!(res.residual_norm < 1e-10, "residual {}", res.residual_norm);
}

#[test]
fn accepted_steps_never_increase_the_residual() {
    let f = real_coeffs(3, 5);
    let cg = CgTable::build(5);
    let target = bispectrum(&f, &cg).unwrap();
    let res = invert_bispectrum(&target, &perturbed(&f, 0.2, 4), &cg, &InversionOptions::default()).unwrap();
    assert!(res.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", res.history);
    assert!(res.history.len() > 2);
}

#[test]
fn gradient_matches_central_differences() {
    let l = 6;
    let cg = CgTable::build(l);
    let target = bispectrum(&real_coeffs(5, l), &cg).unwrap();
    let x = real_coeffs(6, l);
    for real in [true, false] {
        let (_, g) = objective_gradient(&target, &x, &cg, real).unwrap();
        let p0 = parameters(&x, real);
        let h = 1e-6;
        let mut num = vec![0.0; p0.len()];
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            let (cp, _) = objective_gradient(&target, &coefficients_from_parameters(l, &p, real).unwrap(), &cg, real).unwrap();
            p[k] -= 2.0 * h;
            let (cm, _) = objective_gradient(&target, &coefficients_from_parameters(l, &p, real).unwrap(), &cg, real).unwrap();
            num[k] = (cp - cm) / (2.0 * h);
        }
        let err: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nrm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / nrm < 1e-6, "real={real}: relative error {}", err / nrm);
    }
}

// The bispectrum truncated at l <= L has flat directions beyond rotations
// (Jacobian nullity 12 instead of 3 at L = 8), so LM lands on a different
// zero-residual function about 4e-3 away from the orbit.
#[test]
#[ignore = "truncated bispectrum is not locally injective modulo rotation at L = 8"]
fn perturbed_start_recovers_the_orbit() {
    let l = 8;
    let f = real_coeffs(7, l);
    let cg = CgTable::build(l);
    let quad = product_quadrature(l);
    let target = bispectrum(&f, &cg).unwrap();
    let res = invert_bispectrum(&target, &perturbed(&f, 0.01, 8), &cg, &InversionOptions::default()).unwrap();
    assert!(res.converged, "{:?}", res.stop);
    let seq = rotation_sequence(72 * 8).unwrap();
    let coarse = align(&res.coefficients, &f, &seq, &quad).unwrap();
    let fine = refine_alignment(&res.coefficients, &f, &coarse.rotation, &quad, 0.1, 1e-7).unwrap();
    let err = fine.rotated.relative_error(&f).unwrap();
    assert!(err < 1e-3, "post-alignment error {err}");
}

#[test]
fn options_are_validated() {
    let cg = CgTable::build(2);
    let f = real_coeffs(1, 2);
    let t = bispectrum(&f, &cg).unwrap();
    let opts = InversionOptions { step_tolerance: 0.0, ..Default::default() };
    assert!(invert_bispectrum(&t, &f, &cg, &opts).is_err());
    assert!(invert_bispectrum(&t, &real_coeffs(1, 3), &cg, &InversionOptions::default()).is_err());
}

#[test]
fn sequence_basics() {
    let one = rotation_sequence(1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(*one.get(0), se2inv::lie::Rotation3::identity());
    let a = rotation_sequence(1000).unwrap();
    assert_eq!(a, rotation_sequence(1000).unwrap());
    assert!(a.as_slice().iter().all(|r| is_rotation(r, 1e-12)));
    assert!(rotation_sequence(0).is_err());
}

#[test]
fn covering_radius_shrinks_as_the_sequence_doubles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probes: Vec<_> = (0..1000).map(|_| random_rotation(&mut rng)).collect();
    let mut last = f64::INFINITY;
    for k in 0..6 {
        let r = rotation_sequence(72 << k).unwrap().covering_radius(&probes);
        assert!(r < last, "M = {}: radius {r} not below {last}", 72 << k);
        last = r;
    }
}

#[test]
fn rotation_round_trips_and_preserves_power() {
    let l = 8;
    let f = real_coeffs(12, l);
    let quad = product_quadrature(l);
    let id = rotate_shc(&f, &se2inv::lie::Rotation3::identity(), &quad);
    assert!(id.relative_error(&f).unwrap() < 1e-10);
    let r = random_rotation(&mut ChaCha8Rng::seed_from_u64(13));
    let g = rotate_shc(&f, &r, &quad);
    let back = rotate_shc(&g, &r.transpose(), &quad);
    assert!(back.relative_error(&f).unwrap() < 1e-9);
    for (a, b) in power_spectrum(&f).iter().zip(power_spectrum(&g)) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn bispectrum_is_rotation_invariant_and_structured() {
    let l = 8;
    let cg = CgTable::build(l);
    let quad = product_quadrature(l);
    let f = real_coeffs(14, l);
    let b = bispectrum(&f, &cg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..5 {
        let g = rotate_shc(&f, &random_rotation(&mut rng), &quad);
        assert!(relative_error(&bispectrum(&g, &cg).unwrap(), &b).unwrap() < 1e-6);
    }
    let inf = b.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (v, (l1, l2, l)) in b.values().iter().zip(triplets(l)) {
        if (l1 + l2 + l) % 2 == 0 {
            assert!(v.im.abs() < 1e-8 * inf);
        }
    }
}

#[test]
fn correlation_properties() {
    let l = 6;
    let quad = product_quadrature(l);
    let f = real_coeffs(16, l);
    let g = real_coeffs(17, l);
    assert!((correlation(&f, &f).unwrap() - 1.0).abs() < 1e-14);
    assert!((correlation(&f, &f.scaled(-1.0)).unwrap() + 1.0).abs() < 1e-14);
    let r = random_rotation(&mut ChaCha8Rng::seed_from_u64(18));
    let c0 = correlation(&f, &g).unwrap();
    let c1 = correlation(&rotate_shc(&f, &r, &quad), &rotate_shc(&g, &r, &quad)).unwrap();
    assert!((c0 - c1).abs() < 1e-6);
    assert!(correlation(&f, &ShCoefficients::zeros(l)).is_err());
}

#[test]
fn align_recovers_planted_rotations() {
    let l = 6;
    let quad = product_quadrature(l);
    let f = real_coeffs(19, l);
    let seq = rotation_sequence(576).unwrap();
    let same = align(&f, &f, &seq, &quad).unwrap();
    assert_eq!(same.index, Some(0));
    assert!((same.correlation - 1.0).abs() < 1e-10);
    // est = R0 . ref, so the aligning rotation is R0^T
    let k = 300;
    let r0 = seq.get(k).transpose();
    let est = rotate_shc(&f, &r0, &quad);
    let a = align(&est, &f, &seq, &quad).unwrap();
    assert_eq!(a.index, Some(k));
    assert!((a.correlation - 1.0).abs() < 1e-9);
}

#[test]
fn alignment_error_shrinks_with_sequence_length() {
    let l = 6;
    let quad = product_quadrature(l);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let trials: Vec<_> = (0..6)
        .map(|s| {
            let f = real_coeffs(30 + s, l);
            let est = rotate_shc(&f, &random_rotation(&mut rng), &quad);
            (f, est)
        })
        .collect();
    let mut last = f64::INFINITY;
    for k in [0, 2, 4, 6] {
        let seq = rotation_sequence(72 << k).unwrap();
        let mean: f64 = trials
            .iter()
            .map(|(f, est)| align(est, f, &seq, &quad).unwrap().rotated.relative_error(f).unwrap())
            .sum::<f64>()
            / trials.len() as f64;
        assert!(mean < last, "M = {}: {mean} vs {last}", 72 << k);
        last = mean;
    }
}

#[test]
fn perturbed_start_reaches_zero_residual_near_the_orbit() {
    let l = 8;
    let f = real_coeffs(7, l);
    let cg = CgTable::build(l);
    let quad = product_quadrature(l);
    let target = bispectrum(&f, &cg).unwrap();
    let init = perturbed(&f, 0.01, 8);
    let res = invert_bispectrum(&target, &init, &cg, &InversionOptions::default()).unwrap();
    assert!(res.converged && res.residual_norm < 1e-12, "{:?} {}", res.stop, res.residual_norm);
    let seq = rotation_sequence(72 * 8).unwrap();
    let coarse = align(&res.coefficients, &f, &seq, &quad).unwrap();
    let fine = refine_alignment(&res.coefficients, &f, &coarse.rotation, &quad, 0.1, 1e-7).unwrap();
    let err = fine.rotated.relative_error(&f).unwrap();
    assert!(err < init.relative_error(&f).unwrap(), "solver moved away from the truth: {err}");
}

/// Rank of the real-parameter bispectrum Jacobian at a generic real function.
#[test]
fn jacobian_nullity_exceeds_the_rotation_orbit() {
    use nalgebra::DMatrix;
    let l = 2;
    let f = real_coeffs(7, l);
    let cg = CgTable::build(l);
    let target = bispectrum(&f, &cg).unwrap();
    let p0 = f.to_real_params();
    let b0 = target.to_real_vec();
    let mut j = DMatrix::<f64>::zeros(b0.len(), p0.len());
    for k in 0..p0.len() {
        let mut p = p0.clone();
        p[k] += 1e-7;
        let bp = bispectrum(&ShCoefficients::from_real_params(l, &p).unwrap(), &cg).unwrap().to_real_vec();
        p[k] -= 2e-7;
        let bm = bispectrum(&ShCoefficients::from_real_params(l, &p).unwrap(), &cg).unwrap().to_real_vec();
        for r in 0..b0.len() {
            j[(r, k)] = (bp[r] - bm[r]) / 2e-7;
        }
    }
    // cubic invariants of (f00, f1, f2) miss v^T M^2 v: 9 - 5 = 4
    let nullity = j.singular_values().iter().filter(|v| **v < 1e-6).count();
    assert_eq!(nullity, 4);
}

#[test]
fn factorized_scores_match_direct_quadrature() {
    let l = 5;
    let quad = product_quadrature(l);
    let f = real_coeffs(40, l);
    let g = real_coeffs(41, l);
    let seq = rotation_sequence(700).unwrap();
    let fast = sequence_correlations(&f, &g, &seq, &quad).unwrap();
    let slow = sequence_scores_direct(&f, &g, &seq, &quad).unwrap();
    let worst = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "max score difference {worst}");
    for (i, r) in seq.as_slice().iter().enumerate().step_by(37) {
        let c = correlation(&rotate_shc(&f, r, &quad), &g).unwrap();
        assert!((c - fast[i]).abs() < 1e-12);
    }
}
