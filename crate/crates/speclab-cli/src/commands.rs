//! Implementations of the five commands. Each one reads its inputs, runs
//! the corresponding library operations, and writes data to files in the
//! output directory; the only thing ever printed to stdout is `compare`'s
//! distance. Progress notes go to stderr.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use speclab::spectral::{
    channel_spectrum, intensity_histogram, layer_intensity, map_student_layers, profile_distance,
    select_layers_topk, ChannelSpectrum, ModelProfile,
};
use speclab::tensor::{layer_index_from_name, load_npy, tokens_to_spatial, LoadedTensor};
use speclab::tinyvit::data::{synth_dataset, Dataset};
use speclab::tinyvit::model::{ModelConfig, ModelParams};
use speclab::tinyvit::train::{
    accuracy, feature_profile, load_checkpoint, save_checkpoint, train, DistillPlan, TrainRun,
    TrainSettings,
};

use crate::config::{
    load_profile, load_run_config, AccuracyReport, DistanceReport, DynamicsReport, FftLossReport,
    ProfileDoc, RunConfig, SelectionDoc,
};
use crate::error::CliError;
use crate::svg::{self, Series};

/// Seed offset of the held-out evaluation split relative to the training
/// data, far enough that the two streams never overlap.
pub const HELD_OUT_SEED_OFFSET: u64 = 500;
/// Held-out sample count used for accuracy.
pub const HELD_OUT_COUNT: usize = 128;
/// How many held-out images feed the spectral profiles.
pub const PROFILE_IMAGE_COUNT: usize = 64;

/// A token grid parsed from `--tokens HxW`.
#[derive(Debug, Clone, Copy)]
pub struct TokenGrid {
    pub h: usize,
    pub w: usize,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// A profile as chart points: x is the 1-based layer position.
fn profile_points(p: &ModelProfile) -> Vec<(f64, f64)> {
    p.intensities
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect()
}

/// Computes per-layer spectra and the intensity profile of a directory of
/// `layer_*.npy` dumps, writing profile.json, spectra.csv, and profile.svg.
pub fn analyze(
    dir: &Path,
    tokens: Option<TokenGrid>,
    drop_class: bool,
    out: &Path,
) -> Result<(), CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("no layers found: cannot read {}: {e}", dir.display())))?;
    let mut layers: Vec<(usize, String)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(k) = layer_index_from_name(&name) {
            layers.push((k, name));
        }
    }
    if layers.is_empty() {
        return Err(CliError::Data(format!(
            "no layers found: {} contains no layer_*.npy files",
            dir.display()
        )));
    }
    layers.sort();
    for pair in layers.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(CliError::Data(format!(
                "duplicate layer index {}: {} and {}",
                pair[0].0, pair[0].1, pair[1].1
            )));
        }
    }

    let mut spectra: Vec<ChannelSpectrum> = Vec::new();
    let mut intensities = Vec::new();
    let mut labels = Vec::new();
    let mut prev_dims: Option<[usize; 4]> = None;
    for (k, name) in &layers {
        let fm = match load_npy(&dir.join(name))? {
            LoadedTensor::Feature(f) => f,
            LoadedTensor::Token(t) => {
                let grid = tokens.ok_or_else(|| {
                    CliError::Usage(format!(
                        "{name} is a rank-3 token dump; pass --tokens HxW to place tokens on a grid"
                    ))
                })?;
                tokens_to_spatial(&t, grid.h, grid.w, drop_class)?
            }
        };
        if let Some(prev) = prev_dims {
            if prev != fm.dims {
                eprintln!(
                    "note: {name} has shape {:?}, previous layer had {:?}",
                    fm.dims, prev
                );
            }
        }
        prev_dims = Some(fm.dims);
        let spectrum = channel_spectrum(&fm, *k);
        intensities.push(layer_intensity(&spectrum));
        labels.push(name.trim_end_matches(".npy").to_string());
        spectra.push(spectrum);
    }

    ensure_dir(out)?;
    let doc = ProfileDoc {
        intensities: intensities.clone(),
        labels: Some(labels),
    };
    write_json(&out.join("profile.json"), &doc)?;

    let mut csv = String::from("layer,frequency,magnitude\n");
    for spectrum in &spectra {
        for (f, v) in spectrum.values.iter().enumerate() {
            writeln!(csv, "{},{f},{v}", spectrum.layer_index).expect("string write");
        }
    }
    write_text(&out.join("spectra.csv"), &csv)?;

    let points: Vec<(f64, f64)> = layers
        .iter()
        .zip(&intensities)
        .map(|(&(k, _), &v)| (k as f64, v))
        .collect();
    let chart = svg::line_chart(
        "Layer intensity profile",
        "layer",
        "intensity",
        &[Series {
            name: "intensity".into(),
            points,
        }],
    );
    write_text(&out.join("profile.svg"), &chart)
}

/// Bins a profile's intensities, writing histogram.csv and histogram.svg.
pub fn histogram(profile: &Path, bins: usize, out: &Path) -> Result<(), CliError> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be >= 1".into()));
    }
    let p = load_profile(profile)?.to_profile();
    let hist = intensity_histogram(&p, bins)?;

    ensure_dir(out)?;
    let mut csv = String::from("bin_lower,count\n");
    for bin in &hist {
        writeln!(csv, "{},{}", bin.lower, bin.count).expect("string write");
    }
    write_text(&out.join("histogram.csv"), &csv)?;

    let bars: Vec<(f64, usize)> = hist.iter().map(|b| (b.lower, b.count)).collect();
    let chart = svg::bar_chart("Intensity histogram", "intensity bin", "layers", &bars);
    write_text(&out.join("histogram.svg"), &chart)
}

/// Picks the top-k teacher layers by intensity and maps them onto a student,
/// writing selection.json.
pub fn select(profile: &Path, k: usize, student_depth: usize, out: &Path) -> Result<(), CliError> {
    let p = load_profile(profile)?.to_profile();
    let picked = select_layers_topk(&p, k)?;
    let selection = map_student_layers(&picked, p.layer_count(), student_depth)?;

    ensure_dir(out)?;
    write_json(
        &out.join("selection.json"),
        &SelectionDoc {
            teacher_layers: selection.teacher_layers,
            student_layers: selection.student_layers,
        },
    )
}

/// Prints the distance between two profiles on stdout and writes an overlay
/// chart of their normalized shapes.
pub fn compare(profile_a: &Path, profile_b: &Path, out: &Path) -> Result<(), CliError> {
    let a = load_profile(profile_a)?.to_profile();
    let b = load_profile(profile_b)?.to_profile();
    let d = profile_distance(&a, &b)?;

    ensure_dir(out)?;
    let name_of = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };
    let chart = svg::line_chart(
        "Normalized profile overlay",
        "relative depth",
        "intensity / max",
        &[
            normalized_series(name_of(profile_a), &a),
            normalized_series(name_of(profile_b), &b),
        ],
    );
    write_text(&out.join("compare.svg"), &chart)?;

    // The one stdout emission in the binary: the comparison result itself.
    println!("{d}");
    Ok(())
}

/// A profile scaled by its own maximum, plotted over relative depth in
/// [0, 1] so models of different depths share an axis.
fn normalized_series(name: String, p: &ModelProfile) -> Series {
    let max = p.intensities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = p.intensities.len();
    let points = p
        .intensities
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = if n == 1 {
                0.5
            } else {
                i as f64 / (n - 1) as f64
            };
            (t, v / max)
        })
        .collect();
    Series { name, points }
}

/// Runs the full experiment described by a config: teacher, baseline
/// student, distilled student, then profiles, distances, and the report.
pub fn distill(
    config_path: &Path,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut cfg = load_run_config(config_path)?;
    if let Some(seed) = seed_override {
        // Applied before model resolution so derived model seeds follow.
        cfg.data.seed = seed;
    }
    let out = out_override.unwrap_or_else(|| cfg.io.out_dir.clone());

    let teacher_cfg = cfg.teacher_config();
    let student_cfg = cfg.student_config();
    teacher_cfg.validate()?;
    student_cfg.validate()?;
    let loss_cfg = cfg.distill.loss_config();
    loss_cfg.validate()?;

    let data = synth_dataset(cfg.data.seed, cfg.data.count);
    let held_out = synth_dataset(cfg.data.seed + HELD_OUT_SEED_OFFSET, HELD_OUT_COUNT);
    let settings = TrainSettings {
        epochs: cfg.data.epochs,
        batch: cfg.data.batch,
        lr: cfg.data.lr,
    };

    let (teacher, teacher_run) = obtain_teacher(&cfg, &teacher_cfg, &data, &settings)?;
    check_finite("teacher", &teacher_run)?;

    let profile_images = &held_out.images[..PROFILE_IMAGE_COUNT.min(held_out.images.len())];
    let teacher_profile = feature_profile(&teacher, profile_images);
    let picked = select_layers_topk(&teacher_profile, cfg.distill.top_k)?;
    let selection = map_student_layers(&picked, teacher_cfg.depth, student_cfg.depth)?;
    eprintln!(
        "aligning teacher layers {:?} with student layers {:?}",
        selection.teacher_layers, selection.student_layers
    );

    eprintln!(
        "training baseline student ({} layers, {} epochs)",
        student_cfg.depth, settings.epochs
    );
    let (baseline, baseline_run) = train(&student_cfg, &data, &settings, None)?;
    check_finite("baseline", &baseline_run)?;

    eprintln!(
        "training distilled student ({} layers, {} epochs)",
        student_cfg.depth, settings.epochs
    );
    let plan = DistillPlan {
        teacher: &teacher,
        selection: selection.clone(),
        distill: loss_cfg,
    };
    let (distilled, distilled_run) = train(&student_cfg, &data, &settings, Some(&plan))?;
    check_finite("distilled", &distilled_run)?;

    let baseline_profile = feature_profile(&baseline, profile_images);
    let distilled_profile = feature_profile(&distilled, profile_images);
    let report = DynamicsReport {
        selection: SelectionDoc {
            teacher_layers: selection.teacher_layers.clone(),
            student_layers: selection.student_layers.clone(),
        },
        accuracy: AccuracyReport {
            teacher: accuracy(&teacher, &held_out),
            baseline: accuracy(&baseline, &held_out),
            distilled: accuracy(&distilled, &held_out),
        },
        profile_distance: DistanceReport {
            baseline: profile_distance(&teacher_profile, &baseline_profile)?,
            distilled: profile_distance(&teacher_profile, &distilled_profile)?,
        },
        fft_loss: fft_report(&distilled_run, settings.epochs),
    };

    ensure_dir(&out)?;
    save_checkpoint(&teacher, &out.join("teacher"))?;
    save_checkpoint(&baseline, &out.join("baseline"))?;
    save_checkpoint(&distilled, &out.join("distilled"))?;
    eprintln!("wrote checkpoints under {}", out.display());

    write_text(
        &out.join("losses.csv"),
        &losses_csv(&[
            ("teacher", &teacher_run),
            ("baseline", &baseline_run),
            ("distilled", &distilled_run),
        ]),
    )?;
    write_json(&out.join("selection.json"), &report.selection)?;
    write_json(&out.join("dynamics.json"), &report)?;

    for (name, profile) in [
        ("teacher", &teacher_profile),
        ("baseline", &baseline_profile),
        ("distilled", &distilled_profile),
    ] {
        write_json(&out.join(format!("profile_{name}.json")), &ProfileDoc::from_profile(profile))?;
        let chart = svg::line_chart(
            &format!("{name} spectral profile"),
            "layer",
            "intensity",
            &[Series {
                name: name.into(),
                points: profile_points(profile),
            }],
        );
        write_text(&out.join(format!("profile_{name}.svg")), &chart)?;
    }

    eprintln!(
        "accuracy teacher {:.3} baseline {:.3} distilled {:.3}; profile distance baseline {:.4} distilled {:.4}",
        report.accuracy.teacher,
        report.accuracy.baseline,
        report.accuracy.distilled,
        report.profile_distance.baseline,
        report.profile_distance.distilled
    );
    Ok(())
}

/// Trains the teacher, or loads it from the configured checkpoint. A loaded
/// teacher has no training history. When the config also spells out an
/// explicit teacher model, the checkpoint must match it.
fn obtain_teacher(
    cfg: &RunConfig,
    teacher_cfg: &ModelConfig,
    data: &Dataset,
    settings: &TrainSettings,
) -> Result<(ModelParams, TrainRun), CliError> {
    match &cfg.io.teacher_checkpoint {
        Some(path) => {
            eprintln!("loading teacher checkpoint from {}", path.display());
            let params = load_checkpoint(path)?;
            if cfg.model.teacher.is_some() && params.cfg != *teacher_cfg {
                return Err(CliError::Usage(format!(
                    "checkpoint {} holds a different model than model.teacher",
                    path.display()
                )));
            }
            Ok((params, TrainRun { history: Vec::new() }))
        }
        None => {
            eprintln!(
                "training teacher ({} layers, {} epochs)",
                teacher_cfg.depth, settings.epochs
            );
            let (params, run) = train(teacher_cfg, data, settings, None)?;
            Ok((params, run))
        }
    }
}

/// Rejects runs whose loss went non-finite; a diverged model would poison
/// every downstream artifact.
fn check_finite(name: &str, run: &TrainRun) -> Result<(), CliError> {
    for (step, b) in run.history.iter().enumerate() {
        if !b.l_total.is_finite() {
            return Err(CliError::Numeric(format!(
                "{name} training diverged: non-finite loss at step {step}"
            )));
        }
    }
    Ok(())
}

/// Mean alignment loss over the first and last epoch of the distilled run.
fn fft_report(run: &TrainRun, epochs: usize) -> FftLossReport {
    if run.history.is_empty() || epochs == 0 {
        return FftLossReport {
            first_epoch_mean: None,
            last_epoch_mean: None,
        };
    }
    let per_epoch = run.history.len() / epochs;
    let mean = |steps: &[speclab::distill::LossBreakdown]| {
        steps.iter().map(|b| b.l_fft).sum::<f64>() / steps.len() as f64
    };
    FftLossReport {
        first_epoch_mean: Some(mean(&run.history[..per_epoch])),
        last_epoch_mean: Some(mean(&run.history[run.history.len() - per_epoch..])),
    }
}

/// Renders the training histories as one CSV, one row per step, tagged by
/// run. Runs without steps contribute no rows, so an epochs-0 experiment
/// yields a header-only file.
fn losses_csv(runs: &[(&str, &TrainRun)]) -> String {
    let mut csv = String::from("run,step,l_ce,l_kl,l_kd,l_fft,l_total\n");
    for (name, run) in runs {
        for (step, b) in run.history.iter().enumerate() {
            writeln!(
                csv,
                "{name},{step},{},{},{},{},{}",
                b.l_ce, b.l_kl, b.l_kd, b.l_fft, b.l_total
            )
            .expect("string write");
        }
    }
    csv
}
