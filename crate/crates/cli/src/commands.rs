use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use se2inv::bispectrum::{bispectrum as compute_bispectrum, BispectrumVector};
use se2inv::classification::{classify as run_classify, ClassificationData, ClassificationReport};
use se2inv::clebsch_gordan::{nullspace_residual, CgTable};
use se2inv::experiments::{expected_noise_spectrum, invariance_experiment, noise_stats as compute_noise_stats, param_sweep as run_param_sweep};
use se2inv::harmonics::ShCoefficients;
use se2inv::image::ImageGrid;
use se2inv::mra::{loglog_slope, sweep, MraContext, SweepPoint};
use se2inv::projection::{back_project, default_quadrature, random_smooth_image, ProjectionOperator, RandomImageParams};
use se2inv::quadrature::quadrature_for;

use crate::config::{self, ClassifyFile, InvarianceFile, MraFile};
use crate::error::CliError;
use crate::{BispectrumArgs, ClassifyArgs, InvarianceArgs, MraArgs};

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Print a line to stdout; a closed pipe is not an error.
pub fn print_stdout(text: &dyn std::fmt::Display) -> Result<(), CliError> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, path: Option<&Path>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(output(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_image(path: &Path) -> Result<ImageGrid, CliError> {
    ImageGrid::read_file(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_coeffs(path: &Path) -> Result<ShCoefficients, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    ShCoefficients::from_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn project_with(img: &ImageGrid, bandlimit: usize, lambda: f64, dir: Option<&Path>) -> Result<ShCoefficients, CliError> {
    let quad = quadrature_for(bandlimit, dir)?;
    Ok(ProjectionOperator::new(bandlimit, &quad, lambda, img.n())?.apply(img)?)
}

pub fn gen_image(seed: u64, n: usize, out: &Path) -> Result<(), CliError> {
    let params = RandomImageParams { n, ..Default::default() };
    random_smooth_image(seed, &params)?.write_file(out)?;
    Ok(())
}

pub fn project(image: &Path, bandlimit: usize, lambda: f64, out: Option<&Path>, dir: Option<&Path>) -> Result<(), CliError> {
    let f = project_with(&read_image(image)?, bandlimit, lambda, dir)?;
    output(out)?.write_all(f.to_csv().as_bytes())?;
    Ok(())
}

pub fn backproject(coeffs: &Path, lambda: f64, n: usize, out: &Path) -> Result<(), CliError> {
    back_project(&read_coeffs(coeffs)?, lambda, n)?.write_file(out)?;
    Ok(())
}

#[derive(Serialize)]
struct BispectrumRow {
    l1: usize,
    l2: usize,
    l: usize,
    re: f64,
    im: f64,
}

pub fn bispectrum(a: &BispectrumArgs, dir: Option<&Path>) -> Result<(), CliError> {
    let f = match (&a.image, &a.coeffs) {
        (Some(img), _) => project_with(&read_image(img)?, a.bandlimit, a.lambda, dir)?,
        (None, Some(c)) => read_coeffs(c)?,
        (None, None) => return Err(CliError::Usage("one of --image or --coeffs is required".into())),
    };
    let cg = match &a.cg_cache {
        Some(p) => CgTable::from_bytes(&std::fs::read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => CgTable::build(f.bandlimit()),
    };
    let b: BispectrumVector = compute_bispectrum(&f, &cg)?;
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let rows = se2inv::bispectrum::triplets(f.bandlimit())
            .into_iter()
            .zip(b.values())
            .map(|((l1, l2, l), v)| BispectrumRow { l1, l2, l, re: v.re, im: v.im });
        write_csv(rows, Some(&a.out))
    } else {
        std::fs::write(&a.out, b.to_bytes())?;
        Ok(())
    }
}

#[derive(Serialize)]
struct InvarianceCsvRow {
    experiment: se2inv::experiments::MotionKind,
    size: f64,
    mean: f64,
    band_lo: f64,
    band_hi: f64,
    max: f64,
}

pub fn invariance(a: &InvarianceArgs) -> Result<(), CliError> {
    let mut cfg: InvarianceFile = config::load(a.config.as_deref())?;
    if a.image.is_some() {
        cfg.image.clone_from(&a.image);
    }
    let c = &mut cfg.invariance;
    macro_rules! set {
        ($($dst:expr => $src:expr),*) => { $(if let Some(v) = $src.clone() { $dst = v; })* };
    }
    set!(cfg.image_seed => a.image_seed, c.bandlimit => a.bandlimit, c.lambda => a.lambda,
         c.t_max_list => a.t_max, c.samples_per_size => a.samples, c.seed => a.seed);
    if a.dump_config {
        return config::dump(&cfg);
    }
    let img = match &cfg.image {
        Some(p) => read_image(p)?,
        None => random_smooth_image(cfg.image_seed, &RandomImageParams::default())?,
    };
    let rows = invariance_experiment(&img, &cfg.invariance)?;
    write_csv(
        rows.iter().map(|r| InvarianceCsvRow {
            experiment: r.experiment,
            size: r.size,
            mean: r.mean,
            band_lo: r.band_lo,
            band_hi: r.band_hi,
            max: r.max,
        }),
        a.out.as_deref(),
    )
}

pub fn param_sweep(dir: &Path, bandlimits: &[usize], lambdas: &[f64], out: Option<&Path>) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let images: Vec<ImageGrid> = paths.iter().map(|p| read_image(p)).collect::<Result<_, _>>()?;
    let rows = run_param_sweep(&images, bandlimits, lambdas)?;
    write_csv(rows, out)
}

#[derive(Serialize)]
struct SweepCsvRow {
    num_images: usize,
    snr: Option<f64>,
    mean_bispectrum_error: f64,
    mean_image_error: f64,
    mean_bound: f64,
}

#[derive(Serialize)]
struct TrialCsvRow {
    num_images: usize,
    snr: Option<f64>,
    seed: u64,
    bispectrum_error: f64,
    initial_image_error: f64,
    image_error: f64,
    back_projection_bound: f64,
    iterations: usize,
    converged: bool,
    seconds: f64,
}

#[derive(Serialize)]
struct SlopeSummary {
    snr: Option<f64>,
    bispectrum_slope: Option<f64>,
    image_slope: Option<f64>,
}

#[derive(Serialize)]
struct MraOutput<'a> {
    config: &'a MraFile,
    slopes: &'a [SlopeSummary],
    points: &'a [SweepPoint],
}

pub fn mra(a: &MraArgs, dir: Option<&Path>) -> Result<(), CliError> {
    let mut cfg: MraFile = config::load(a.config.as_deref())?;
    if a.truth.is_some() {
        cfg.truth.clone_from(&a.truth);
    }
    let m = &mut cfg.mra;
    macro_rules! set {
        ($($dst:expr => $src:expr),*) => { $(if let Some(v) = $src.clone() { $dst = v; })* };
    }
    set!(cfg.truth_seed => a.truth_seed, cfg.num_images_list => a.num_images, cfg.snr_list => a.snr,
         cfg.trials => a.trials, m.t_max => a.t_max, m.bandlimit => a.bandlimit, m.n => a.n, m.seed => a.seed);
    if a.dump_config {
        return config::dump(&cfg);
    }
    if cfg.num_images_list.is_empty() || cfg.snr_list.is_empty() {
        return Err(CliError::Usage("num_images_list and snr_list must be non-empty".into()));
    }
    if cfg.trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    for &num_images in &cfg.num_images_list {
        for &snr in &cfg.snr_list {
            se2inv::mra::MraConfig { num_images, snr, ..cfg.mra.clone() }.validate()?;
        }
    }
    let out_dir = a.out_dir.as_deref().expect("clap requires --out-dir");
    std::fs::create_dir_all(out_dir)?;
    let b = &cfg.mra;
    let ctx = MraContext::with_quadrature(b.n, b.bandlimit, b.lambda, b.sequence_len, quadrature_for(b.bandlimit, dir)?)?;
    let fixed = cfg.truth.as_deref().map(read_image).transpose()?;
    let params = RandomImageParams { n: b.n, ..Default::default() };
    let points = sweep(b, &cfg.num_images_list, &cfg.snr_list, cfg.trials, &ctx, |t| match &fixed {
        Some(img) => Ok(img.clone()),
        None => random_smooth_image(cfg.truth_seed + t as u64, &params),
    })?;
    let unconverged = points.iter().flat_map(|p| &p.trials).filter(|r| !r.converged).count();
    if unconverged > 0 {
        log::warn!("{unconverged} inversions stopped at the iteration limit");
    }
    let slopes: Vec<SlopeSummary> = cfg
        .snr_list
        .iter()
        .map(|&snr| {
            let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.snr == snr).collect();
            let ns: Vec<f64> = pts.iter().map(|p| p.num_images as f64).collect();
            let fit = |y: Vec<f64>| loglog_slope(&ns, &y).ok();
            SlopeSummary {
                snr,
                bispectrum_slope: fit(pts.iter().map(|p| p.mean_bispectrum_error).collect()),
                image_slope: fit(pts.iter().map(|p| p.mean_image_error).collect()),
            }
        })
        .collect();
    write_csv(
        points.iter().map(|p| SweepCsvRow {
            num_images: p.num_images,
            snr: p.snr,
            mean_bispectrum_error: p.mean_bispectrum_error,
            mean_image_error: p.mean_image_error,
            mean_bound: p.mean_bound,
        }),
        Some(&out_dir.join("sweep.csv")),
    )?;
    write_csv(
        points.iter().flat_map(|p| &p.trials).map(|r| TrialCsvRow {
            num_images: r.num_images,
            snr: r.snr,
            seed: r.seed,
            bispectrum_error: r.bispectrum_error,
            initial_image_error: r.initial_image_error,
            image_error: r.image_error,
            back_projection_bound: r.back_projection_bound,
            iterations: r.iterations,
            converged: r.converged,
            seconds: r.timings.total_s,
        }),
        Some(&out_dir.join("trials.csv")),
    )?;
    let report = MraOutput { config: &cfg, slopes: &slopes, points: &points };
    serde_json::to_writer_pretty(BufWriter::new(File::create(out_dir.join("report.json"))?), &report)?;
    print_stdout(&serde_json::to_string_pretty(&slopes)?)?;
    Ok(())
}

#[derive(Serialize)]
struct HistogramCsvRow {
    t_max: f64,
    metric: se2inv::classification::Metric,
    bin_left: f64,
    bin_right: f64,
    count: usize,
}

#[derive(Serialize)]
struct ClassifySummaryRow {
    t_max: f64,
    metric: se2inv::classification::Metric,
    median: f64,
    mean: f64,
    seconds: f64,
}

#[derive(Serialize)]
struct ClassifyOutput<'a> {
    config: &'a ClassifyFile,
    reports: &'a [ClassificationReport],
}

pub fn classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let mut cfg: ClassifyFile = config::load(a.config.as_deref())?;
    let c = &mut cfg.classification;
    macro_rules! set {
        ($($dst:expr => $src:expr),*) => { $(if let Some(v) = $src.clone() { $dst = v; })* };
    }
    set!(cfg.t_max_list => a.t_max, cfg.metrics => a.metrics, c.classes => a.classes, c.num_images => a.num_images,
         c.neighbors => a.neighbors, c.snr => a.snr.map(|s| s.0), c.bandlimit => a.bandlimit, c.seed => a.seed);
    if a.dump_config {
        return config::dump(&cfg);
    }
    if cfg.t_max_list.is_empty() || cfg.metrics.is_empty() {
        return Err(CliError::Usage("t_max_list and metrics must be non-empty".into()));
    }
    for &t_max in &cfg.t_max_list {
        se2inv::classification::ClassificationConfig { t_max, ..cfg.classification.clone() }.validate()?;
    }
    let out_dir = a.out_dir.as_deref().expect("clap requires --out-dir");
    std::fs::create_dir_all(out_dir)?;
    let mut reports = Vec::new();
    for &t_max in &cfg.t_max_list {
        let run_cfg = se2inv::classification::ClassificationConfig { t_max, ..cfg.classification.clone() };
        let data = ClassificationData::generate(&run_cfg)?;
        for &metric in &cfg.metrics {
            reports.push(run_classify(&run_cfg, &data, metric)?);
        }
    }
    write_csv(
        reports.iter().flat_map(|r| {
            r.histogram.iter().map(|h| HistogramCsvRow {
                t_max: r.t_max,
                metric: r.metric,
                bin_left: h.bin_left,
                bin_right: h.bin_right,
                count: h.count,
            })
        }),
        Some(&out_dir.join("histograms.csv")),
    )?;
    let summary: Vec<ClassifySummaryRow> = reports
        .iter()
        .map(|r| ClassifySummaryRow {
            t_max: r.t_max,
            metric: r.metric,
            median: r.median,
            mean: r.mean,
            seconds: r.seconds,
        })
        .collect();
    write_csv(&summary, Some(&out_dir.join("summary.csv")))?;
    let report = ClassifyOutput { config: &cfg, reports: &reports };
    serde_json::to_writer_pretty(BufWriter::new(File::create(out_dir.join("report.json"))?), &report)?;
    print_stdout(&serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SphericalRow {
    l: usize,
    power: f64,
    expected: f64,
}

#[derive(Serialize)]
struct PixelRow {
    kx: usize,
    ky: usize,
    power: f64,
}

pub fn noise_stats(bandlimit: usize, n: usize, count: usize, seed: u64, out: Option<&Path>, pixel_out: Option<&Path>) -> Result<(), CliError> {
    let s = compute_noise_stats(bandlimit, n, count, seed)?;
    let op = ProjectionOperator::new(bandlimit, &default_quadrature(bandlimit), 1.0, n)?;
    let expected = expected_noise_spectrum(&op);
    write_csv(
        s.spherical_spectrum.iter().zip(&expected).enumerate().map(|(l, (&power, &expected))| SphericalRow { l, power, expected }),
        out,
    )?;
    if let Some(p) = pixel_out {
        write_csv(
            s.pixel_spectrum.iter().enumerate().map(|(i, &power)| PixelRow { kx: i / n, ky: i % n, power }),
            Some(p),
        )?;
    }
    if out.is_some() {
        print_stdout(&serde_json::json!({ "spherical_flatness": s.spherical_flatness(), "pixel_flatness": s.pixel_flatness(), "count": count }))?;
    }
    Ok(())
}

pub fn cg_table(bandlimit: usize, out: Option<&Path>, check: bool) -> Result<(), CliError> {
    let cg = CgTable::build(bandlimit);
    if let Some(p) = out {
        let mut w = BufWriter::new(File::create(p)?);
        cg.write_to(&mut w)?;
        w.flush()?;
    }
    let mut summary = serde_json::json!({
        "bandlimit": bandlimit,
        "triplets": cg.triplets().len(),
        "vectors": cg.num_vectors(),
        "values": cg.num_values(),
    });
    if check {
        let mut worst: f64 = 0.0;
        for (t, &(l1, l2, l)) in cg.triplets().iter().enumerate() {
            for m in -(l as i64)..=l as i64 {
                worst = worst.max(nullspace_residual(l1, l2, l, m, cg.vector(t, m).1)?);
            }
        }
        summary["max_nullspace_residual"] = worst.into();
        if worst >= 1e-10 {
            print_stdout(&summary)?;
            return Err(CliError::Numerical(format!("nullspace residual {worst:e} exceeds 1e-10")));
        }
    }
    print_stdout(&summary)?;
    Ok(())
}
