//! Experiment drivers. `run_*` functions compute, `cmd_*` functions also
//! write their artifacts under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::config::{Algorithm, ExperimentConfig, PlanInput};
use super::{RecoveryReport, SweepReport, SweepRow, SweepStatus};
use crate::baselines::{merge_weighted, proposed_with_n_images, Variant, WeightingScheme};
use crate::calibration::{
    build_crf_with_stats, extract_linear_range, find_calibration_exposure, CalibrationError, CrfTable, LinearRange,
    ZoneStats, HISTOGRAM_BIN_WIDTH,
};
use crate::fusion::{
    choose_t1, choose_tn, fuse, measure_patch_db, plan_exposures, plan_exposures_anchored, ExposurePlan, FusionError,
    FusionOutput, PlanAnchor,
};
use crate::golden;
use crate::image::{IrradianceMap, RawImage};
use crate::io::{self, hdrf, pgm, IoError, KeyValues};
use crate::sensor::{capture, SensorError};
use crate::target::{render_target, scale_illumination, PatchLayout, TargetSpec};
use crate::Error;

pub const CRF_FILE: &str = "crf.csv";
pub const LINEAR_RANGE_FILE: &str = "linear_range.txt";

/// Seed offsets keeping the capture streams of different stages apart.
const RECOVERY_SEED_OFFSET: u64 = 1;
const LADDER_SEED_OFFSET: u64 = 100;

/// Calibration artifacts consumed by the recovery commands.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub crf: CrfTable,
    pub linear_range: LinearRange,
}

impl Calibration {
    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let crf = CrfTable::from_csv(&io::read_text(&dir.join(CRF_FILE))?)?;
        let kv = KeyValues::parse(&io::read_text(&dir.join(LINEAR_RANGE_FILE))?)?;
        let linear_range = LinearRange::from_key_values(&kv)?;
        Ok(Self { crf, linear_range })
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub exposure: f64,
    pub image: RawImage,
    pub layout: PatchLayout,
    pub stats: Vec<ZoneStats>,
    pub calibration: Calibration,
}

fn scene_for(spec: &TargetSpec, factor: f64) -> Result<(IrradianceMap, PatchLayout), Error> {
    let (scene, layout) = render_target(spec)?;
    Ok((scale_illumination(&scene, factor)?, layout))
}

pub fn run_calibration(cfg: &ExperimentConfig) -> Result<CalibrationRun, Error> {
    let sensor = cfg.seeded_sensor();
    let (scene, layout) = scene_for(&cfg.calibration_target, cfg.illumination_factor)?;
    let exposure = find_calibration_exposure(&sensor, &scene, &layout)?;
    let image = capture(&sensor, &scene, exposure, sensor.rng_seed)?;
    let (crf, stats) = build_crf_with_stats(&image, &layout, cfg.calibration_target.peak_irradiance)?;
    if let Err(e) = crf.check_monotone() {
        warn!("{e}");
    }
    let linear_range = extract_linear_range(&crf, cfg.slope_tolerance)?;
    info!(
        "calibration exposure {exposure:.4e} s, linear window {:.1}..{:.1} ({:.2} dB)",
        linear_range.v_min, linear_range.v_max, linear_range.ldr_e
    );
    Ok(CalibrationRun { exposure, image, layout, stats, calibration: Calibration { crf, linear_range } })
}

fn prepare_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::fs(dir, e))
}

fn slopes_csv(lr: &LinearRange) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["bright_db", "dim_db", "linear_slope", "log_slope", "in_window"]);
    for s in &lr.slope_log {
        let inside = s.bright_db >= lr.bright_db && s.dim_db <= lr.dim_db;
        let _ = w.write_record([
            s.bright_db.to_string(),
            s.dim_db.to_string(),
            s.linear.to_string(),
            s.log.to_string(),
            inside.to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

fn patch_stats_csv(layout: &PatchLayout, stats: &[ZoneStats]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["design_db", "pixel_count", "mean", "saturated_count", "homogeneity"]);
    for (p, s) in layout.patches.iter().zip(stats) {
        let _ = w.write_record([
            p.design_db.to_string(),
            s.pixel_count.to_string(),
            s.mean.to_string(),
            s.saturated_count.to_string(),
            s.homogeneity.to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

fn histogram_csv(s: &ZoneStats) -> String {
    let mut out = String::from("bin_start,count\n");
    for (k, c) in s.histogram.iter().enumerate() {
        out.push_str(&format!("{},{c}\n", k as u32 * HISTOGRAM_BIN_WIDTH));
    }
    out
}

pub fn write_calibration(run: &CalibrationRun, dir: &Path) -> Result<(), IoError> {
    prepare_dir(dir)?;
    let cal = &run.calibration;
    io::write_atomic(&dir.join(CRF_FILE), cal.crf.to_csv().as_bytes())?;
    let header = format!("linear CRF window\ncalibration_exposure = {}", run.exposure);
    io::write_atomic(&dir.join(LINEAR_RANGE_FILE), cal.linear_range.to_key_values().to_text(&header).as_bytes())?;
    io::write_atomic(&dir.join("crf_slopes.csv"), slopes_csv(&cal.linear_range).as_bytes())?;
    io::write_atomic(&dir.join("patch_stats.csv"), patch_stats_csv(&run.layout, &run.stats).as_bytes())?;
    io::write_atomic(&dir.join("calibration.pgm"), &pgm::encode_raw(&run.image))?;
    let hist_dir = dir.join("histograms");
    prepare_dir(&hist_dir)?;
    for (k, (p, s)) in run.layout.patches.iter().zip(&run.stats).enumerate() {
        let name = format!("patch_{k:02}_{}db.csv", p.design_db);
        io::write_atomic(&hist_dir.join(name), histogram_csv(s).as_bytes())?;
    }
    Ok(())
}

pub fn cmd_calibrate(cfg: &ExperimentConfig) -> Result<CalibrationRun, Error> {
    let run = run_calibration(cfg)?;
    write_calibration(&run, &cfg.out_dir)?;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct RecoveryRun {
    pub plan: ExposurePlan,
    pub images: Vec<RawImage>,
    pub output: FusionOutput,
    pub layout: PatchLayout,
    pub report: RecoveryReport,
}

fn plan_for(
    cfg: &ExperimentConfig,
    cal: &Calibration,
    scene: &IrradianceMap,
    layout: &PatchLayout,
) -> Result<ExposurePlan, Error> {
    let sensor = cfg.seeded_sensor();
    let lr = &cal.linear_range;
    let limits = sensor.exposure_limits;
    let plan = match &cfg.plan {
        PlanInput::Ladder(times) => ExposurePlan {
            hdr_d: cfg.design_range(),
            ldr_e: lr.ldr_e,
            n_images: times.len(),
            exposure_times: times.clone(),
            factors: times.windows(2).map(|w| w[1] / w[0]).collect(),
        },
        PlanInput::Design { anchor: PlanAnchor::Shortest, .. } => {
            let t1 = choose_t1(&sensor, scene, layout, lr)?;
            plan_exposures(cfg.design_range(), lr.ldr_e, t1, limits)?
        }
        PlanInput::Design { anchor: PlanAnchor::Longest, .. } => {
            let tn = choose_tn(&sensor, scene, layout, lr)?;
            plan_exposures_anchored(cfg.design_range(), lr.ldr_e, tn, PlanAnchor::Longest, limits)?
        }
    };
    Ok(plan)
}

fn capture_all(
    cfg: &ExperimentConfig,
    scene: &IrradianceMap,
    times: &[f64],
    offset: u64,
) -> Result<Vec<RawImage>, Error> {
    let sensor = cfg.seeded_sensor();
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| Ok(capture(&sensor, scene, t, cfg.seed.wrapping_add(offset + k as u64))?))
        .collect()
}

fn scheme(cfg: &ExperimentConfig, cal: &Calibration, v: Variant) -> WeightingScheme {
    WeightingScheme::new(v, cal.crf.bit_depth).with_w(cfg.gaussian_w)
}

fn join_times(times: &[f64]) -> String {
    times.iter().map(|t| format!("{t:e}")).collect::<Vec<_>>().join(", ")
}

pub fn run_recovery(
    cfg: &ExperimentConfig,
    cal: &Calibration,
    illumination_factor: f64,
    algorithm: Algorithm,
) -> Result<RecoveryRun, Error> {
    let (scene, layout) = scene_for(&cfg.test_target, illumination_factor)?;
    let plan = plan_for(cfg, cal, &scene, &layout)?;
    let images = capture_all(cfg, &scene, &plan.exposure_times, RECOVERY_SEED_OFFSET)?;
    let output = match algorithm {
        Algorithm::Proposed => fuse(&images, &cal.crf, &cal.linear_range, &plan)?,
        Algorithm::Baseline(v) => merge_weighted(&images, &cal.crf, &scheme(cfg, cal, v))?,
    };
    let rows = measure_patch_db(&output, &layout)?;
    let mut report = RecoveryReport::new(rows.iter().map(|r| r.design_db).collect());
    report.push_measured(algorithm.name(), &rows);
    if algorithm == Algorithm::Proposed && plan.n_images == 2 {
        let (h, t) = golden::parse_table(golden::CAMERA_TWO_EXPOSURE_CSV);
        if h.len() == 2 {
            let design: Vec<f64> = t.iter().map(|r| r[0]).collect();
            let values: Vec<f64> = t.iter().map(|r| r[1]).collect();
            report.push_display("two_exposure", &design, &values);
        }
    }
    let m = &mut report.metadata;
    m.push("algorithm", algorithm.name());
    m.push("illumination_factor", illumination_factor);
    m.push("seed", cfg.seed);
    m.push("hdr_d", plan.hdr_d);
    m.push("ldr_e", cal.linear_range.ldr_e);
    m.push("v_max", cal.linear_range.v_max);
    m.push("v_min", cal.linear_range.v_min);
    m.push("exposures", join_times(&plan.exposure_times));
    Ok(RecoveryRun { plan, images, output, layout, report })
}

pub fn write_recovery(run: &RecoveryRun, dir: &Path) -> Result<(), IoError> {
    prepare_dir(dir)?;
    let out = &run.output;
    io::write_atomic(&dir.join("recovery_report.csv"), run.report.to_csv().as_bytes())?;
    io::write_atomic(&dir.join("radiance.hdrf"), &hdrf::encode(&out.radiance))?;
    io::write_atomic(&dir.join("preview.pgm"), &pgm::encode_gray8(out.width(), out.height(), &out.log_preview()))?;
    io::write_atomic(&dir.join("validity.pgm"), &pgm::encode_gray8(out.width(), out.height(), &out.validity_count))?;
    io::write_atomic(&dir.join("sentinel.pgm"), &pgm::encode_gray8(out.width(), out.height(), &out.sentinel_bytes()))?;
    for (k, img) in run.images.iter().enumerate() {
        io::write_atomic(&dir.join(format!("capture_{:02}.pgm", k + 1)), &pgm::encode_raw(img))?;
    }
    let mut plan = KeyValues::new();
    plan.push("hdr_d", run.plan.hdr_d);
    plan.push("ldr_e", run.plan.ldr_e);
    plan.push("n_images", run.plan.n_images);
    plan.push("exposure_times", join_times(&run.plan.exposure_times));
    plan.push("factors", join_times(&run.plan.factors));
    io::write_atomic(&dir.join("plan.txt"), plan.to_text("exposure plan").as_bytes())
}

fn load_calibration(cfg: &ExperimentConfig) -> Result<Calibration, Error> {
    let dir = cfg.calibration_dir();
    Calibration::load(dir).map_err(|e| {
        warn!("no calibration in {} (run `hdrcal calibrate` first)", dir.display());
        e.into()
    })
}

pub fn cmd_recover(cfg: &ExperimentConfig) -> Result<RecoveryRun, Error> {
    let cal = load_calibration(cfg)?;
    let run = run_recovery(cfg, &cal, cfg.illumination_factor, cfg.algorithm)?;
    write_recovery(&run, &cfg.out_dir)?;
    Ok(run)
}

/// Column names of the comparison table, in order.
pub const COMPARE_COLUMNS: [&str; 6] = ["proposed_2", "proposed_ladder", "slope_weight", "hat", "snr", "gaussian_time"];

/// Every algorithm on one exposure ladder, plus the two-exposure plan.
pub fn run_comparison(cfg: &ExperimentConfig, cal: &Calibration) -> Result<RecoveryReport, Error> {
    let two = run_recovery(cfg, cal, cfg.illumination_factor, Algorithm::Proposed)?;
    let (scene, layout) = scene_for(&cfg.test_target, cfg.illumination_factor)?;
    let ladder = capture_all(cfg, &scene, &cfg.compare_ladder, LADDER_SEED_OFFSET)?;

    let mut report = RecoveryReport::new(two.report.design_db.clone());
    report.push_measured("proposed_2", &measure_patch_db(&two.output, &layout)?);
    let proposed = proposed_with_n_images(&ladder, &cal.crf, &cal.linear_range)?;
    report.push_measured("proposed_ladder", &measure_patch_db(&proposed, &layout)?);
    for v in Variant::ALL {
        let out = merge_weighted(&ladder, &cal.crf, &scheme(cfg, cal, v))?;
        report.push_measured(v.name(), &measure_patch_db(&out, &layout)?);
    }

    let (header, rows) = golden::parse_table(golden::CAMERA_LADDER16_CSV);
    let design: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    for (c, name) in header.iter().enumerate().skip(1) {
        let values: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        report.push_display(name, &design, &values);
    }
    let m = &mut report.metadata;
    m.push("illumination_factor", cfg.illumination_factor);
    m.push("seed", cfg.seed);
    m.push("ladder", join_times(&cfg.compare_ladder));
    m.push("two_exposure", join_times(&two.plan.exposure_times));
    m.push("gaussian_w", cfg.gaussian_w);
    Ok(report)
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<RecoveryReport, Error> {
    let cal = load_calibration(cfg)?;
    let report = run_comparison(cfg, &cal)?;
    prepare_dir(&cfg.out_dir)?;
    io::write_atomic(&cfg.out_dir.join("compare_report.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

fn classify(e: &Error) -> SweepStatus {
    match e {
        Error::Fusion(FusionError::Unreachable(_))
        | Error::Fusion(FusionError::Calibration(CalibrationError::Unreachable(_))) => SweepStatus::Unreachable,
        Error::Fusion(FusionError::PlanInfeasible(_)) | Error::Sensor(SensorError::ExposureOutOfRange { .. }) => {
            SweepStatus::Infeasible
        }
        _ => SweepStatus::Failed,
    }
}

/// Recovery at each illumination factor; failures become status rows.
pub fn run_sweep(cfg: &ExperimentConfig, cal: &Calibration, factors: &[f64]) -> Result<SweepReport, Error> {
    let (_, layout) = render_target(&cfg.test_target)?;
    let design_db = layout.patches.iter().map(|p| p.design_db).collect();
    let rows = factors
        .iter()
        .map(|&factor| match run_recovery(cfg, cal, factor, cfg.algorithm) {
            Ok(run) => {
                let name = cfg.algorithm.name();
                SweepRow {
                    factor,
                    status: SweepStatus::Ok,
                    t1: run.plan.exposure_times.first().copied(),
                    n_images: Some(run.plan.n_images),
                    max_abs_error: run.report.max_abs_error(name),
                    measured: run.report.column(name).map(<[f64]>::to_vec),
                    message: String::new(),
                }
            }
            Err(e) => {
                warn!("illumination factor {factor}: {e}");
                SweepRow {
                    factor,
                    status: classify(&e),
                    t1: None,
                    n_images: None,
                    max_abs_error: None,
                    measured: None,
                    message: e.to_string(),
                }
            }
        })
        .collect();
    Ok(SweepReport { design_db, rows })
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, Error> {
    let report = if cfg.sweep_factors.is_empty() {
        let (_, layout) = render_target(&cfg.test_target)?;
        SweepReport { design_db: layout.patches.iter().map(|p| p.design_db).collect(), rows: Vec::new() }
    } else {
        run_sweep(cfg, &load_calibration(cfg)?, &cfg.sweep_factors)?
    };
    prepare_dir(&cfg.out_dir)?;
    io::write_atomic(&cfg.out_dir.join("sweep_report.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

/// Raw captures of the test target at the configured exposure ladder
/// (or the comparison ladder), with the ground-truth irradiance.
pub fn cmd_simulate_capture(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, Error> {
    let (scene, _) = scene_for(&cfg.test_target, cfg.illumination_factor)?;
    let times = match &cfg.plan {
        PlanInput::Ladder(t) => t.clone(),
        PlanInput::Design { .. } => cfg.compare_ladder.clone(),
    };
    let images = capture_all(cfg, &scene, &times, RECOVERY_SEED_OFFSET)?;
    prepare_dir(&cfg.out_dir)?;
    let mut written = Vec::new();
    for (k, img) in images.iter().enumerate() {
        let path = cfg.out_dir.join(format!("capture_{:02}.pgm", k + 1));
        io::write_atomic(&path, &pgm::encode_raw(img))?;
        written.push(path);
    }
    let truth = cfg.out_dir.join("ground_truth.hdrf");
    io::write_atomic(&truth, &hdrf::encode(&scene))?;
    written.push(truth);
    Ok(written)
}
