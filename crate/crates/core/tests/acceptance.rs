//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! binary exits non-zero on failure only when SE2INV_ACCEPTANCE_STRICT=1.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use se2inv::bispectrum::{bispectrum, bispectrum_jacobian, triplets};
use se2inv::classification::{classify, ClassificationConfig, ClassificationData, Metric};
use se2inv::clebsch_gordan::{cg_oracle, cg_vector, m1_range, nullspace_residual, CgTable};
use se2inv::estimation::build_debias;
use se2inv::experiments::{invariance_experiment, noise_stats, spearman, InvarianceConfig, MotionKind};
use se2inv::harmonics::{num_coefficients, ShCoefficients};
use se2inv::image::ImageGrid;
use se2inv::lie::{contract, frobenius_distance, homomorphism_defect_bound, RigidMotion};
use se2inv::mra::{back_projection_bound, loglog_slope, sweep, MraConfig, MraContext, SweepPoint};
use se2inv::projection::{default_quadrature, random_smooth_image, ProjectionOperator, RandomImageParams};
use se2inv::quadrature::{bundled_designs, product_quadrature};
use std::f64::consts::{PI, TAU};
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn truth(seed: u64) -> ImageGrid {
    random_smooth_image(seed, &RandomImageParams::default()).unwrap()
}

fn invariance() -> (Outcome, Outcome) {
    let cfg = InvarianceConfig {
        t_max_list: vec![1.0, 2.5, 5.0, 7.5, 10.0],
        ..Default::default()
    };
    let rows = invariance_experiment(&truth(0), &cfg).unwrap();
    let rot = &rows[0];
    let first = outcome(
        rot.max < 0.01,
        format!("rotation error over {} samples: max {:.4}, mean {:.4}", rot.errors.len(), rot.max, rot.mean),
    );
    let tr: Vec<_> = rows.iter().filter(|r| r.experiment == MotionKind::Translation).collect();
    let sizes: Vec<f64> = tr.iter().map(|r| r.size).collect();
    let means: Vec<f64> = tr.iter().map(|r| r.mean).collect();
    let rho = spearman(&sizes, &means).unwrap();
    let at10 = means[means.len() - 1];
    let second = outcome(
        at10 <= 0.05 && rho > 0.9,
        format!("mean error at 10 px {at10:.4}; means by size {means:.4?}; spearman {rho:.3}"),
    );
    (first, second)
}

/// Same protocol on other random images; printed, never scored.
fn invariance_diagnostics() {
    let cfg = InvarianceConfig {
        t_max_list: vec![10.0],
        ..Default::default()
    };
    for seed in 1..5 {
        let rows = invariance_experiment(&truth(seed), &cfg).unwrap();
        println!(
            "     diagnostic, random image {seed}: rotation max {:.4}, translation 10 px mean {:.4}",
            rows[0].max, rows[1].mean
        );
    }
}

fn mra_sweep() -> Vec<SweepPoint> {
    let base = MraConfig::default();
    let ctx = MraContext::for_config(&base).unwrap();
    sweep(&base, &[100, 1_000, 10_000], &[base.snr], 5, &ctx, |t| Ok(truth(t as u64))).unwrap()
}

fn consistency(points: &[SweepPoint]) -> Outcome {
    let ns: Vec<f64> = points.iter().map(|p| p.num_images as f64).collect();
    let errs: Vec<f64> = points.iter().map(|p| p.mean_bispectrum_error).collect();
    let slope = loglog_slope(&ns, &errs).unwrap();
    outcome(
        (-0.6..=-0.30).contains(&slope),
        format!("slope {slope:.3}; mean bispectrum errors {errs:.4?}"),
    )
}

fn bounds() -> Outcome {
    let quad = default_quadrature(16);
    let b: Vec<f64> = (0..5)
        .map(|s| back_projection_bound(&truth(s), 1.0, 16, &quad).unwrap())
        .collect();
    outcome(b.iter().all(|v| (0.005..=0.05).contains(v)), format!("bounds {b:.4?}"))
}

fn convergence(points: &[SweepPoint]) -> Outcome {
    let img: Vec<f64> = points.iter().map(|p| p.mean_image_error).collect();
    let gap: Vec<f64> = points.iter().map(|p| p.mean_image_error - p.mean_bound).collect();
    let decreasing = img.windows(2).all(|w| w[1] < w[0]);
    let above = points
        .iter()
        .flat_map(|p| &p.trials)
        .all(|r| r.image_error >= r.back_projection_bound - 0.005);
    let shrink = gap[2] < 2.0 * gap[1];
    outcome(
        decreasing && above && shrink,
        format!("image errors {img:.4?}; gaps to bound {gap:.4?}; decreasing {decreasing}, above bound {above}"),
    )
}

fn classification() -> Outcome {
    let median = |t_max: f64, metric: Metric| {
        let cfg = ClassificationConfig { t_max, ..Default::default() };
        let data = ClassificationData::generate(&cfg).unwrap();
        classify(&cfg, &data, metric).unwrap().median
    };
    let (s0, r0) = (median(0.0, Metric::Se2), median(0.0, Metric::Rotation));
    let (s10, r10) = (median(10.0, Metric::Se2), median(10.0, Metric::Rotation));
    outcome(
        s10 >= 0.9 && s10 > r10 && (s0 - r0).abs() < 0.1,
        format!("medians at T=0: se2 {s0:.3}, rotation {r0:.3}; at T=10: se2 {s10:.3}, rotation {r10:.3}"),
    )
}

fn clebsch_gordan() -> Outcome {
    let mut worst: f64 = 0.0;
    for l1 in 0..=8usize {
        for l2 in 0..=8usize {
            for l in l1.abs_diff(l2)..=(l1 + l2).min(8) {
                for m in -(l as i64)..=l as i64 {
                    let (lo, _) = m1_range(l1, l2, m);
                    for (k, c) in cg_vector(l1, l2, l, m).unwrap().iter().enumerate() {
                        let m1 = lo + k as i64;
                        worst = worst.max((c - cg_oracle(l1 as i64, m1, l2 as i64, m - m1, l as i64, m)).abs());
                    }
                }
            }
        }
    }
    let mut resid: f64 = 0.0;
    for l1 in 0..=30usize {
        for l2 in 0..=30usize {
            for l in l1.abs_diff(l2)..=(l1 + l2).min(30) {
                for m in -(l as i64)..=l as i64 {
                    let v = cg_vector(l1, l2, l, m).unwrap();
                    resid = resid.max(nullspace_residual(l1, l2, l, m, &v).unwrap());
                }
            }
        }
    }
    outcome(
        worst < 1e-12 && resid < 1e-10,
        format!("max deviation from Racah sum {worst:.2e}; max nullspace residual {resid:.2e}"),
    )
}

fn jacobian() -> Outcome {
    let l = 6;
    let cg = CgTable::build(l);
    let n = num_coefficients(l);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let c: Vec<Complex64> = (0..2 * n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>()
            .chunks(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let f = ShCoefficients::new(l, c.clone()).unwrap();
        let analytic = bispectrum_jacobian(&f, &cg).unwrap().to_dense();
        let (mut diff, mut total) = (0.0, 0.0);
        for col in 0..2 * n {
            let step = if col < n { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
            let at = |s: f64| {
                let mut v = c.clone();
                v[col % n] += step * s;
                bispectrum(&ShCoefficients::new(l, v).unwrap(), &cg).unwrap()
            };
            let (bp, bm) = (at(1.0), at(-1.0));
            for (r, row) in analytic.iter().enumerate() {
                let fd = (bp.values()[r] - bm.values()[r]) / (2.0 * h);
                diff += (row[col] - fd).norm_sqr();
                total += fd.norm_sqr();
            }
        }
        worst = worst.max((diff / total).sqrt());
    }
    outcome(worst < 1e-6, format!("max relative error over 20 points {worst:.2e}"))
}

fn quadrature() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut check = |name: String, q: &se2inv::quadrature::SphericalDesign| {
        let cap = q.strength().min(24);
        let r = q.degree_residuals(cap).into_iter().skip(1).fold(0.0, f64::max);
        pass &= r < 1e-8;
        lines.push(format!("{name} (t={}) {r:.1e}", q.strength()));
    };
    check("product L=12".into(), &product_quadrature(12));
    for (name, d) in bundled_designs().unwrap() {
        check(name, &d);
    }
    outcome(pass, lines.join(", "))
}

fn debiasing() -> Outcome {
    let (l, n, draws) = (8, 41, 10_000);
    let op = ProjectionOperator::new(l, &default_quadrature(l), 1.0, n).unwrap();
    let cg = CgTable::build(l);
    let d = build_debias(&op, &cg, 1.0).unwrap();
    let len = triplets(l).len();
    let mut s1 = vec![Complex64::default(); len];
    let mut s2 = vec![0.0; len];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..draws {
        let img = ImageGrid::new(n, (0..n * n).map(|_| noise.sample(&mut rng)).collect()).unwrap();
        let b = d.debiased_bispectrum(&op.apply(&img).unwrap(), &cg).unwrap();
        for (k, v) in b.values().iter().enumerate() {
            s1[k] += v;
            s2[k] += v.norm_sqr();
        }
    }
    let k = draws as f64;
    let worst = s1
        .iter()
        .zip(&s2)
        .map(|(s, q)| {
            let mean = s / k;
            let se = ((q / k - mean.norm_sqr()) / (k - 1.0)).sqrt();
            mean.norm() / se.max(1e-300)
        })
        .fold(0.0, f64::max);
    outcome(worst < 3.0, format!("largest |mean| / standard error over {len} entries: {worst:.3}"))
}

fn whiteness() -> Outcome {
    let s = noise_stats(16, 101, 1000, 0).unwrap();
    let r = s.spherical_flatness();
    outcome(r < 1.25, format!("spherical spectrum max/min {r:.3}"))
}

fn group_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let motion = |rng: &mut ChaCha8Rng| {
        let r = 3.0 * rng.random::<f64>().sqrt();
        let a = rng.random::<f64>() * TAU;
        RigidMotion::new([r * a.cos(), r * a.sin()], rng.random::<f64>() * TAU - PI)
    };
    let (mut inv, mut ratio): (f64, f64) = (0.0, 0.0);
    let mut pass = true;
    for lambda in [1.0, 2.0, 4.0, 8.0] {
        for _ in 0..1000 {
            let (g1, g2) = (motion(&mut rng), motion(&mut rng));
            let p1 = contract(&g1, lambda).unwrap();
            inv = inv.max((contract(&g1.inverse(), lambda).unwrap() - p1.transpose()).abs().max());
            let defect = frobenius_distance(&contract(&(g1 * g2), lambda).unwrap(), &(p1 * contract(&g2, lambda).unwrap()));
            let bound = homomorphism_defect_bound(g1.translation_norm(), g2.translation_norm(), lambda).unwrap();
            pass &= defect <= bound;
            if bound > 0.0 {
                ratio = ratio.max(defect / bound);
            }
        }
    }
    outcome(
        pass && inv < 1e-12,
        format!("inverse deviation {inv:.1e}; max defect / bound {ratio:.3}"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let s = t.elapsed().as_secs_f64();
        println!("{} {id:>2} {name}: {} ({s:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, s));
    };
    let t = Instant::now();
    let (c1, c2) = invariance();
    let inv_s = t.elapsed().as_secs_f64();
    let mut c1 = Some(c1);
    let mut c2 = Some(c2);
    run(1, "rotation invariance", &mut || c1.take().unwrap());
    run(2, "translation invariance", &mut || c2.take().unwrap());
    println!("     invariance experiment took {inv_s:.1} s");
    invariance_diagnostics();
    let t = Instant::now();
    let points = mra_sweep();
    println!("     MRA sweep (5 trials x N in 1e2, 1e3, 1e4) took {:.1} s", t.elapsed().as_secs_f64());
    run(3, "estimator consistency", &mut || consistency(&points));
    run(4, "back-projection bound", &mut bounds);
    run(5, "MRA convergence", &mut || convergence(&points));
    run(6, "classification stability", &mut classification);
    run(7, "Clebsch-Gordan correctness", &mut clebsch_gordan);
    run(8, "Jacobian correctness", &mut jacobian);
    run(9, "quadrature exactness", &mut quadrature);
    run(10, "debiasing", &mut debiasing);
    run(11, "noise whiteness", &mut whiteness);
    run(12, "exact group properties", &mut group_properties);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} passed; failed {failed:?}", results.len() - failed.len(), results.len());
    if !failed.is_empty() && std::env::var("SE2INV_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
