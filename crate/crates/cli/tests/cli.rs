use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hrtf_field::formats::save_dataset;
use hrtf_field::geometry::{make_geographical_grid, sph_to_cart};
use hrtf_field::training::train_all;
use hrtf_field::{Anthropometry, Dataset, Hrtf, ModelParams, SphericalPos, SubjectRecord, TrainConfig, Variant, BINS};
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrtf-field"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn hrtf-field")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

fn meas_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| l.starts_with("MEAS")).count()
}

fn ring_linear(az: f64, el: f64) -> Hrtf {
    let tent = az.min(360.0 - az);
    let bins = (0..BINS)
        .map(|k| {
            let k = k as f64;
            -10.0 + 0.05 * k + (0.02 + 0.001 * k) * tent + (0.1 - 0.0005 * k) * el
        })
        .collect();
    Hrtf::new(bins).unwrap()
}

/// Seven elevation rings of 24 azimuths, one subject.
fn ring_dataset(field: impl Fn(f64, f64) -> Hrtf) -> Dataset {
    let mut measurements = Vec::new();
    for ring in 0..7 {
        let el = -60.0 + 20.0 * ring as f64;
        for m in 0..24 {
            let az = 15.0 * m as f64;
            let p = sph_to_cart(SphericalPos::new(az, el, 1.47).unwrap());
            measurements.push((p, field(az, el)));
        }
    }
    let record = SubjectRecord::new("ring", Anthropometry::new([1.0; 12]).unwrap(), measurements).unwrap();
    Dataset::ingest(vec![record]).unwrap()
}

fn write_ring(dir: &Path, name: &str, field: impl Fn(f64, f64) -> Hrtf) -> PathBuf {
    let path = dir.join(name);
    save_dataset(&path, &ring_dataset(field)).unwrap();
    path
}

fn report_row(path: &Path) -> Vec<(String, String)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    header.into_iter().map(String::from).zip(row.into_iter().map(String::from)).collect()
}

fn field(row: &[(String, String)], key: &str) -> String {
    row.iter().find(|(k, _)| k == key).unwrap().1.clone()
}

fn small_dataset(dir: &Path) {
    ok(dir, &["gen-data", "--grid", "quasi", "--points", "60", "--subjects", "2", "--seed", "7", "-o", "d.txt"]);
}

#[test]
fn gen_data_counts_measurements() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(tmp.path(), &["gen-data", "--grid", "quasi", "--points", "60", "--subjects", "2", "--seed", "7", "-o", "d.txt"]);
    assert_eq!(meas_lines(&tmp.path().join("d.txt")), 120);
    assert!(stdout.contains("60 points x 2 subjects"), "{stdout}");
}

#[test]
fn gen_data_is_byte_identical_for_equal_seeds() {
    let tmp = TempDir::new().unwrap();
    for out in ["a.txt", "b.txt"] {
        ok(tmp.path(), &["gen-data", "--points", "40", "--subjects", "3", "--seed", "11", "-o", out]);
    }
    ok(tmp.path(), &["gen-data", "--points", "40", "--subjects", "3", "--seed", "12", "-o", "c.txt"]);
    let a = fs::read(tmp.path().join("a.txt")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b.txt")).unwrap());
    assert_ne!(a, fs::read(tmp.path().join("c.txt")).unwrap());
}

#[test]
fn geographical_grid_count_matches_library() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-data", "--grid", "geo", "--step-el", "30", "--step-az", "30", "-o", "g.txt"]);
    let expected = make_geographical_grid(30.0, 30.0, 1.47).unwrap().len();
    assert_eq!(meas_lines(&tmp.path().join("g.txt")), expected);
}

#[test]
fn gen_data_grid_file_round_trip() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-data", "--points", "30", "--grid-out", "grid.txt", "-o", "a.txt"]);
    ok(tmp.path(), &["gen-data", "--grid", "file", "--grid-file", "grid.txt", "-o", "b.txt"]);
    assert_eq!(fs::read(tmp.path().join("a.txt")).unwrap(), fs::read(tmp.path().join("b.txt")).unwrap());
}

#[test]
fn zero_epochs_writes_initialization() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    ok(tmp.path(), &["train", "--data", "d.txt", "--epochs", "0", "--all", "--n", "4", "--delta", "0.9", "--name", "init"]);
    let run_dir = tmp.path().join("runs/init");
    for f in ["config.txt", "fold0.ckpt", "log.csv", "summary.txt"] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(run_dir.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1, "log has epoch rows: {log}");

    let ckpt = ModelParams::load(&run_dir.join("fold0.ckpt")).unwrap();
    assert_eq!(ckpt.variant(), Variant::C2);
    assert_eq!(ckpt.n_neighbors(), 4);
    let dataset = hrtf_field::formats::load_dataset(&tmp.path().join("d.txt")).unwrap();
    let cfg = TrainConfig {
        max_epochs: 0,
        n_neighbors: 4,
        delta: 0.9,
        ..TrainConfig::default()
    };
    let lib = train_all(&dataset, Variant::C2, &cfg).unwrap();
    assert_eq!(ckpt.flat(), lib.params.flat());
    let last = ckpt
        .tensors()
        .iter()
        .filter(|t| t.name.starts_with("trunk.4.") && !t.name.contains(".gamma_"))
        .all(|t| t.data.iter().all(|v| *v == 0.0));
    assert!(last, "last trunk block does not start at zero output");
}

#[test]
fn rerun_with_equal_seed_gives_identical_log() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    let args = |name: &'static str| {
        vec!["train", "--data", "d.txt", "--epochs", "2", "--folds", "2", "--batch", "16", "--n", "2", "--delta", "0.9", "--variant", "b", "--seed", "5", "--name", name]
    };
    ok(tmp.path(), &args("one"));
    ok(tmp.path(), &args("two"));
    let read = |n: &str| fs::read(tmp.path().join("runs").join(n).join("log.csv")).unwrap();
    let log = read("one");
    assert_eq!(String::from_utf8_lossy(&log).lines().count(), 1 + 2 * 2);
    assert_eq!(log, read("two"));
    let ckpt = |n: &str| fs::read(tmp.path().join("runs").join(n).join("fold1.ckpt")).unwrap();
    assert_eq!(ckpt("one"), ckpt("two"));
}

#[test]
fn baseline_reproduces_ring_linear_field() {
    let tmp = TempDir::new().unwrap();
    write_ring(tmp.path(), "ring.txt", ring_linear);
    ok(tmp.path(), &["eval", "--data", "ring.txt", "--baseline", "--downsample", "1", "--include-coincident", "--out", "r"]);
    let row = report_row(&tmp.path().join("r/report.csv"));
    let all: f64 = field(&row, "All").parse().unwrap();
    assert!(all < 1e-6, "All-mean {all}");
    assert_eq!(field(&row, "skipped"), "0");
}

#[test]
fn downsampling_halves_reference_count() {
    let tmp = TempDir::new().unwrap();
    write_ring(tmp.path(), "ring.txt", ring_linear);
    let refs = |t: &str| -> f64 {
        let out = format!("t{t}");
        ok(tmp.path(), &["eval", "--data", "ring.txt", "--baseline", "--downsample", t, "--out", &out]);
        field(&report_row(&tmp.path().join(out).join("report.csv")), "references").parse().unwrap()
    };
    let ratio = refs("1") / refs("2");
    assert!((ratio - 2.0).abs() < 0.15, "ratio {ratio}");
}

#[test]
fn text_table_has_the_four_columns() {
    let tmp = TempDir::new().unwrap();
    write_ring(tmp.path(), "ring.txt", ring_linear);
    let stdout = ok(tmp.path(), &["eval", "--data", "ring.txt", "--baseline", "--out", "r"]);
    let table = fs::read_to_string(tmp.path().join("r/report.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["All", "Hor.", "Med.", "Fro."]);
    assert!(stdout.starts_with(&table));
}

#[test]
fn eval_rejects_incompatible_checkpoint() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    ok(tmp.path(), &["train", "--data", "d.txt", "--epochs", "0", "--all", "--n", "4", "--delta", "0.9", "--name", "m"]);
    let out = run(tmp.path(), &["eval", "--data", "d.txt", "--checkpoint", "runs/m/fold0.ckpt", "--n", "8"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("N = 4") && err.contains("N = 8"), "{err}");
    let out = run(tmp.path(), &["eval", "--data", "d.txt", "--checkpoint", "runs/m/fold0.ckpt", "--variant", "c1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("variant c2"));
    ok(tmp.path(), &["eval", "--data", "d.txt", "--checkpoint", "runs/m/fold0.ckpt", "--delta", "0.9"]);
    assert!(tmp.path().join("runs/m/report.csv").exists());
    assert!(tmp.path().join("runs/m/report.txt").exists());
}

fn pgm_pixels(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let text_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(2)
        .unwrap()
        .0;
    let header = String::from_utf8_lossy(&bytes[..text_end]).to_string();
    let fields: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(fields[0], "P5");
    assert_eq!(fields[3], "255");
    let w: usize = fields[1].parse().unwrap();
    let h: usize = fields[2].parse().unwrap();
    let pixels = bytes[text_end + 1..].to_vec();
    assert_eq!(pixels.len(), w * h);
    (w, h, pixels)
}

#[test]
fn constant_field_gives_constant_image() {
    let tmp = TempDir::new().unwrap();
    write_ring(tmp.path(), "flat.txt", |_, _| Hrtf::new(vec![-6.0; BINS]).unwrap());
    ok(tmp.path(), &["plot", "--data", "flat.txt", "--plane", "horizontal", "-o", "flat"]);
    let (w, h, pixels) = pgm_pixels(&tmp.path().join("flat.pgm"));
    assert_eq!((w, h), (24, BINS));
    assert!(pixels.iter().all(|p| *p == pixels[0]));

    ok(tmp.path(), &["plot", "--data", "flat.txt", "--plane", "horizontal", "--range", "-12:0", "-o", "mid"]);
    let (_, _, pixels) = pgm_pixels(&tmp.path().join("mid.pgm"));
    assert!(pixels.iter().all(|p| *p == 128));
    assert_eq!(code(tmp.path(), &["plot", "--data", "flat.txt", "--range", "0:-12", "-o", "bad"]), 1);
}

#[test]
fn plot_csv_is_bins_by_angles() {
    let tmp = TempDir::new().unwrap();
    write_ring(tmp.path(), "ring.txt", ring_linear);
    let out = run(tmp.path(), &["plot", "--data", "ring.txt", "--plane", "median", "-o", "m"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dB range"));
    let csv = fs::read_to_string(tmp.path().join("m.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    let angles: Vec<f64> = fs::read_to_string(tmp.path().join("m.angles.csv"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    // Rings at -60..60 cross the median plane at azimuth 0 and 180.
    assert_eq!(angles.len(), 14);
    assert!(angles.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(rows.len(), BINS);
    assert!(rows.iter().all(|r| r.split(',').count() == angles.len()));
}

#[test]
fn truth_and_nearest_copy_images_match() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    let plot = |source: &str| {
        ok(tmp.path(), &[
            "plot", "--data", "d.txt", "--subject", "s001", "--plane", "horizontal", "--plane-tol", "15",
            "--source", source, "--downsample", "1", "--include-coincident", "-o", source,
        ]);
        fs::read(tmp.path().join(format!("{source}.pgm"))).unwrap()
    };
    let truth = plot("truth");
    assert_eq!(truth, plot("nearest"));
}

#[test]
fn plot_model_source_needs_checkpoint() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    assert_eq!(code(tmp.path(), &["plot", "--data", "d.txt", "--source", "model", "-o", "x"]), 1);
    ok(tmp.path(), &["train", "--data", "d.txt", "--epochs", "0", "--all", "--n", "2", "--delta", "0.9", "--name", "m"]);
    ok(tmp.path(), &[
        "plot", "--data", "d.txt", "--source", "model", "--checkpoint", "runs/m/fold0.ckpt", "--plane-tol", "15",
        "--delta", "0.9", "-o", "model",
    ]);
    assert!(tmp.path().join("model.pgm").exists());
}

#[test]
fn empty_selection_fails() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    let out = run(tmp.path(), &["plot", "--data", "d.txt", "--plane", "frontal", "--plane-tol", "0.001", "-o", "x"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!tmp.path().join("x.pgm").exists());
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    let d = tmp.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["train", "--bogus"]), 1);
    assert_eq!(code(d, &["gen-data", "--grid", "hexagonal", "-o", "x.txt"]), 1);
    assert_eq!(code(d, &["eval", "--data", "d.txt"]), 1);
    assert_eq!(code(d, &["train", "--data", "d.txt", "--batch", "0"]), 1);
    assert_eq!(code(d, &["eval", "--data", "missing.txt", "--baseline"]), 2);
    fs::write(d.join("bad.txt"), "SUBJECT s0\nANTHRO 1 2 3\n").unwrap();
    let out = run(d, &["eval", "--data", "bad.txt", "--baseline"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let diverge = ["train", "--data", "d.txt", "--epochs", "2", "--all", "--lr", "1e308", "--batch", "8", "--n", "2", "--delta", "0.9"];
    assert_eq!(code(d, &diverge), 3);
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    fs::write(
        tmp.path().join("run.cfg"),
        "# quick run\ndata = d.txt\ndelta = 0.9\nepochs = 0\nvariant = c1\nn = 3\nname = from-file\nall = true\n",
    )
    .unwrap();
    ok(tmp.path(), &["train", "--config", "run.cfg", "--name", "from-flag", "--n", "2"]);
    let dir = tmp.path().join("runs/from-flag");
    assert!(!tmp.path().join("runs/from-file").exists());
    let ckpt = ModelParams::load(&dir.join("fold0.ckpt")).unwrap();
    assert_eq!(ckpt.variant(), Variant::C1);
    assert_eq!(ckpt.n_neighbors(), 2);

    // The written config reloads to the same run.
    let cfg = fs::read_to_string(dir.join("config.txt")).unwrap();
    assert!(cfg.contains("name = from-flag") && cfg.contains("n = 2"));
    fs::write(tmp.path().join("again.cfg"), cfg.replace("name = from-flag", "name = again")).unwrap();
    ok(tmp.path(), &["train", "--config", "again.cfg"]);
    assert_eq!(
        fs::read(dir.join("fold0.ckpt")).unwrap(),
        fs::read(tmp.path().join("runs/again/fold0.ckpt")).unwrap()
    );

    fs::write(tmp.path().join("typo.cfg"), "data = d.txt\nepoch = 3\n").unwrap();
    let out = run(tmp.path(), &["train", "--config", "typo.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn ablation_and_study_write_tables() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path());
    let common = ["--data", "d.txt", "--epochs", "1", "--folds", "2", "--batch", "32", "--n", "2", "--delta", "0.9"];
    let mut args = vec!["ablation"];
    args.extend(common);
    args.extend(["--name", "abl"]);
    let stdout = ok(tmp.path(), &args);
    let csv = fs::read_to_string(tmp.path().join("runs/abl/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + Variant::ALL.len());
    for v in Variant::ALL {
        assert!(stdout.contains(&v.to_string()));
    }

    let mut args = vec!["study"];
    args.extend(common);
    args.extend(["--variant", "a", "--n-list", "1,2", "--delta-list", "0.8,0.9", "--name", "st"]);
    ok(tmp.path(), &args);
    let csv = fs::read_to_string(tmp.path().join("runs/st/study.csv")).unwrap();
    assert!(csv.lines().count() >= 3, "{csv}");
}

