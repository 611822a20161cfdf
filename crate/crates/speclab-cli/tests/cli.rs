//! End-to-end tests of the `speclab` binary: every command is exercised
//! through a real process, and outputs are checked against the library
//! operations they wrap.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use speclab::spectral::model_profile;
use speclab::tensor::{save_npy, tokens_to_spatial, FeatureMap, TokenMap};
use speclab::tinyvit::rng::SplitMix64;
use tempfile::TempDir;

/// The intensity shape used by the layer-selection tests: strong first two
/// layers, a long flat middle, and a rising tail.
const U_PROFILE: [f64; 24] = [
    9.0, 8.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
    3.0, 4.0, 5.0, 6.0, 7.0, 9.5,
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn seeded_map(seed: u64, dims: [usize; 4]) -> FeatureMap {
    let mut rng = SplitMix64::new(seed);
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.next_gaussian()).collect();
    FeatureMap::new(dims, data).unwrap()
}

fn write_profile(path: &Path, intensities: &[f64]) {
    let doc = serde_json::json!({ "intensities": intensities });
    fs::write(path, serde_json::to_string(&doc).unwrap()).unwrap();
}

fn read_intensities(path: &Path) -> Vec<f64> {
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    doc["intensities"]
        .as_array()
        .expect("intensities array")
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect()
}

#[test]
fn analyze_matches_the_library_profile() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("dump");
    fs::create_dir(&dump).unwrap();
    let layers: Vec<FeatureMap> = (0..3).map(|i| seeded_map(40 + i, [2, 4, 3, 3])).collect();
    for (i, layer) in layers.iter().enumerate() {
        save_npy(layer, &dump.join(format!("layer_{:03}.npy", i + 1))).unwrap();
    }
    let out = dir.path().join("out");

    run_ok(&["analyze", dump.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let expected = model_profile(&layers);
    let got = read_intensities(&out.join("profile.json"));
    assert_eq!(got, expected.intensities, "profile must equal the library oracle");

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("profile.json")).unwrap()).unwrap();
    assert_eq!(doc["labels"][0], "layer_001");
    assert_eq!(doc["labels"][2], "layer_003");

    let csv = fs::read_to_string(out.join("spectra.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "layer,frequency,magnitude");
    assert_eq!(lines.len(), 1 + 3 * 4, "one row per layer per frequency bin");
    assert!(lines[1].starts_with("1,0,"));

    let svg = fs::read_to_string(out.join("profile.svg")).unwrap();
    assert!(svg.contains("viewBox=\"0 0 800 400\""));
}

#[test]
fn analyze_reports_a_constant_layer_intensity() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("dump");
    fs::create_dir(&dump).unwrap();
    let constant = FeatureMap::new([1, 4, 2, 2], vec![0.75; 16]).unwrap();
    save_npy(&constant, &dump.join("layer_001.npy")).unwrap();
    let out = dir.path().join("out");

    run_ok(&["analyze", dump.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let got = read_intensities(&out.join("profile.json"));
    assert_eq!(got, vec![0.75], "constant input concentrates at DC, intensity = value");
}

#[test]
fn analyze_without_layers_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope");
    let out = run(&["analyze", missing.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 3);
    assert!(stderr_text(&out).contains("no layers"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&["analyze", empty.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn analyze_token_dumps_need_the_grid_flag() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("dump");
    fs::create_dir(&dump).unwrap();
    let spatial = seeded_map(77, [2, 3, 2, 2]);
    let tokens = speclab::tensor::spatial_to_tokens(&spatial);
    speclab::tensor::npy::write_raw(&dump.join("layer_001.npy"), &tokens.dims, &tokens.data)
        .unwrap();
    let out = dir.path().join("out");

    let bare = run(&["analyze", dump.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&bare), 2, "rank-3 dumps require --tokens");
    assert!(stderr_text(&bare).contains("--tokens"));

    run_ok(&[
        "analyze",
        dump.to_str().unwrap(),
        "--tokens",
        "2x2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let expected = model_profile(&[tokens_to_spatial(&tokens, 2, 2, false).unwrap()]);
    assert_eq!(read_intensities(&out.join("profile.json")), expected.intensities);

    let wrong = run(&[
        "analyze",
        dump.to_str().unwrap(),
        "--tokens",
        "3x3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&wrong), 3, "grid that cannot hold the tokens");
}

#[test]
fn analyze_dumps_with_class_tokens_drop_slot_zero() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("dump");
    fs::create_dir(&dump).unwrap();
    // 5 tokens per image: one class token plus a 2x2 grid.
    let tokens = TokenMap {
        dims: [1, 5, 3],
        data: (0..15).map(|i| i as f64 * 0.1).collect(),
    };
    speclab::tensor::npy::write_raw(&dump.join("layer_001.npy"), &tokens.dims, &tokens.data)
        .unwrap();
    let out = dir.path().join("out");

    run_ok(&[
        "analyze",
        dump.to_str().unwrap(),
        "--tokens",
        "2x2",
        "--drop-class",
        "--out",
        out.to_str().unwrap(),
    ]);
    let expected = model_profile(&[tokens_to_spatial(&tokens, 2, 2, true).unwrap()]);
    assert_eq!(read_intensities(&out.join("profile.json")), expected.intensities);
}

#[test]
fn histogram_bins_the_shipped_example() {
    let dir = TempDir::new().unwrap();
    let profile = dir.path().join("p.json");
    write_profile(&profile, &[0.0, 1.0, 2.0, 3.0]);
    let out = dir.path().join("out");

    run_ok(&[
        "histogram",
        profile.to_str().unwrap(),
        "--bins",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert_eq!(csv, "bin_lower,count\n0,2\n1.5,2\n");
    assert!(out.join("histogram.svg").exists());
}

#[test]
fn histogram_collapses_a_degenerate_profile_to_one_row() {
    let dir = TempDir::new().unwrap();
    let profile = dir.path().join("p.json");
    write_profile(&profile, &[2.0, 2.0, 2.0]);
    let out = dir.path().join("out");

    run_ok(&[
        "histogram",
        profile.to_str().unwrap(),
        "--bins",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert_eq!(csv, "bin_lower,count\n2,3\n");
}

#[test]
fn histogram_rejects_zero_bins() {
    let dir = TempDir::new().unwrap();
    let profile = dir.path().join("p.json");
    write_profile(&profile, &[1.0]);
    let out = run(&["histogram", profile.to_str().unwrap(), "--bins", "0"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn select_reproduces_the_two_ended_pairing() {
    let dir = TempDir::new().unwrap();
    let profile = dir.path().join("teacher.json");
    write_profile(&profile, &U_PROFILE);
    let out = dir.path().join("out");

    run_ok(&[
        "select",
        profile.to_str().unwrap(),
        "--k",
        "8",
        "--student-depth",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert_eq!(
        doc["teacher_layers"],
        serde_json::json!([1, 2, 19, 20, 21, 22, 23, 24])
    );
    assert_eq!(
        doc["student_layers"],
        serde_json::json!([1, 2, 7, 8, 9, 10, 11, 12])
    );
}

#[test]
fn select_rejects_out_of_range_budgets() {
    let dir = TempDir::new().unwrap();
    let profile = dir.path().join("p.json");
    write_profile(&profile, &U_PROFILE);

    let zero = run(&["select", profile.to_str().unwrap(), "--k", "0", "--student-depth", "12"]);
    assert_eq!(exit_code(&zero), 2);

    let over = run(&["select", profile.to_str().unwrap(), "--k", "25", "--student-depth", "12"]);
    assert_eq!(exit_code(&over), 2);

    let tight = run(&["select", profile.to_str().unwrap(), "--k", "8", "--student-depth", "3"]);
    assert_eq!(exit_code(&tight), 2, "student too shallow for the pick budget");
}

#[test]
fn compare_prints_zero_for_scaled_copies() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    write_profile(&a, &[1.0, 0.0, 1.0]);
    write_profile(&b, &[2.0, 0.0, 2.0]);
    let out_dir = dir.path().join("out");

    let same = run_ok(&[
        "compare",
        a.to_str().unwrap(),
        a.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(String::from_utf8_lossy(&same.stdout).trim(), "0");

    let scaled = run_ok(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        String::from_utf8_lossy(&scaled.stdout).trim(),
        "0",
        "normalization cancels uniform scaling"
    );
    assert!(out_dir.join("compare.svg").exists());
}

#[test]
fn compare_measures_the_hand_case() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    write_profile(&a, &[1.0, 0.0, 1.0]);
    write_profile(&b, &[1.0, 1.0]);
    let out_dir = dir.path().join("out");

    let out = run_ok(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let d: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert_eq!(d, 1.0 / 3.0);
}

#[test]
fn compare_flags_zero_profiles_as_numeric_failures() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    write_profile(&a, &[0.0, 0.0]);
    write_profile(&b, &[1.0, 1.0]);
    let out = run(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 4);
}

fn write_config(path: &Path, out_dir: &Path, body: serde_json::Value) -> String {
    let mut doc = body;
    doc["io"] = serde_json::json!({ "out_dir": out_dir.to_str().unwrap() });
    let text = serde_json::to_string_pretty(&doc).unwrap();
    fs::write(path, &text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn distill_epochs_zero_emits_initial_state() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = write_config(
        &dir.path().join("cfg.json"),
        &out_dir,
        serde_json::json!({
            "data": {"seed": 7, "count": 32, "epochs": 0, "batch": 16}
        }),
    );

    run_ok(&["distill", &cfg]);

    let losses = fs::read_to_string(out_dir.join("losses.csv")).unwrap();
    assert_eq!(losses, "run,step,l_ce,l_kl,l_kd,l_fft,l_total\n", "header-only body");

    for model in ["teacher", "baseline", "distilled"] {
        assert!(out_dir.join(model).join("manifest.json").exists(), "{model} checkpoint");
        assert!(out_dir.join(format!("profile_{model}.json")).exists());
        assert!(out_dir.join(format!("profile_{model}.svg")).exists());
    }

    let dynamics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("dynamics.json")).unwrap()).unwrap();
    assert!(dynamics["fft_loss"]["first_epoch_mean"].is_null());
    assert!(dynamics["fft_loss"]["last_epoch_mean"].is_null());
    assert!(dynamics["profile_distance"]["baseline"].as_f64().unwrap().is_finite());

    // Re-running the identical config must overwrite every file identically.
    let before = fs::read(out_dir.join("teacher").join("manifest.json")).unwrap();
    let dynamics_before = fs::read(out_dir.join("dynamics.json")).unwrap();
    run_ok(&["distill", &cfg]);
    assert_eq!(fs::read(out_dir.join("teacher").join("manifest.json")).unwrap(), before);
    assert_eq!(fs::read(out_dir.join("dynamics.json")).unwrap(), dynamics_before);
}

#[test]
fn distill_rejects_unknown_keys_with_their_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir.path().join("cfg.json"),
        &dir.path().join("run"),
        serde_json::json!({ "distill": {"alpa": 0.5} }),
    );
    let out = run(&["distill", &cfg]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("distill"), "path missing: {err}");
    assert!(err.contains("alpa"), "offending key missing: {err}");

    let cfg = write_config(
        &dir.path().join("cfg2.json"),
        &dir.path().join("run"),
        serde_json::json!({ "data": {"epochs": "twelve"} }),
    );
    let out = run(&["distill", &cfg]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("data.epochs"));
}

#[test]
fn distill_reuses_a_teacher_checkpoint() {
    let dir = TempDir::new().unwrap();
    let first_out = dir.path().join("first");
    let cfg = write_config(
        &dir.path().join("cfg.json"),
        &first_out,
        serde_json::json!({
            "data": {"seed": 7, "count": 32, "epochs": 1, "batch": 16}
        }),
    );
    run_ok(&["distill", &cfg]);

    let second_out = dir.path().join("second");
    let mut body = serde_json::json!({
        "data": {"seed": 7, "count": 32, "epochs": 1, "batch": 16}
    });
    body["io"] = serde_json::json!({
        "out_dir": second_out.to_str().unwrap(),
        "teacher_checkpoint": first_out.join("teacher").to_str().unwrap()
    });
    let cfg2 = dir.path().join("cfg2.json");
    fs::write(&cfg2, serde_json::to_string(&body).unwrap()).unwrap();
    run_ok(&["distill", cfg2.to_str().unwrap()]);

    let losses = fs::read_to_string(second_out.join("losses.csv")).unwrap();
    let mut rows = losses.lines().skip(1);
    assert!(
        rows.next().unwrap().starts_with("baseline,0,"),
        "loaded teachers contribute no training rows"
    );

    let a = fs::read(first_out.join("teacher").join("head_w.npy")).unwrap();
    let b = fs::read(second_out.join("teacher").join("head_w.npy")).unwrap();
    assert_eq!(a, b, "re-saved teacher weights must be bitwise identical");
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let dir = TempDir::new().unwrap();
    let config_out = dir.path().join("from_config");
    let flag_out = dir.path().join("from_flag");
    let cfg = write_config(
        &dir.path().join("cfg.json"),
        &config_out,
        serde_json::json!({
            "data": {"seed": 7, "count": 32, "epochs": 0, "batch": 16}
        }),
    );

    run_ok(&["distill", &cfg, "--seed", "9", "--out", flag_out.to_str().unwrap()]);

    assert!(!config_out.exists(), "--out must win over io.out_dir");
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(flag_out.join("teacher").join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        manifest["config"]["seed"], 109,
        "derived teacher seed must follow the overridden data seed"
    );
}
