use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use proptest::prelude::*;
use tempfile::TempDir;
use unmix_cli::formats::{read_cube, read_matrix, read_report, write_cube, write_matrix};
use unmix_core::SpectralCube;

const BIN: &str = env!("CARGO_BIN_EXE_hsi-unmix");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn small_scene(dir: &Path, seed: u64, threads: &str) {
    run_ok(&[
        "--threads", threads, "generate", "--output-dir", s(dir), "--p", "3", "--seed", &seed.to_string(),
        "--bands", "30", "--lines", "12", "--samples", "12", "--shadow-fraction", "0.02",
    ]);
}

/// Every file under `dir` with its bytes, sorted by name.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cube_round_trip_is_bitwise(
        lines in 1usize..5,
        samples in 1usize..5,
        bands in 1usize..6,
        seed in any::<u64>(),
    ) {
        let n = lines * samples;
        let mut state = seed | 1;
        let data = DMatrix::from_fn(bands, n, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            // only f32-representable values survive the f32 payload exactly
            ((state >> 40) as f32 / (1u64 << 20) as f32) as f64
        });
        let cube = SpectralCube::new(data, lines, samples).unwrap();
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("c.json");
        write_cube(&path, &cube).unwrap();
        let back = read_cube(&path).unwrap();
        prop_assert_eq!(back.lines(), lines);
        prop_assert_eq!(back.samples(), samples);
        for (a, b) in back.data().iter().zip(cube.data().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_round_trip_is_bitwise(
        rows in 1usize..6,
        values in prop::collection::vec(-1e12f64..1e12, 1..30),
    ) {
        let cols = values.len().div_ceil(rows);
        let m = DMatrix::from_fn(rows, cols, |i, j| values[(i * cols + j) % values.len()]);
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("m.csv");
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn generate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        run_ok(&["generate", "--output-dir", s(dir), "--p", "3", "--seed", "7", "--lines", "20", "--samples", "20"]);
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.len() >= 6);
    assert_eq!(sa, sb);
}

#[test]
fn unmix_then_eval_reports_scores() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    let out = tmp.path().join("relmm");
    small_scene(&scene, 3, "0");
    run_ok(&[
        "unmix", "--input", s(&scene.join("cube.json")), "--output-dir", s(&out), "--p", "3", "--method", "relmm",
        "--max-iter", "20",
    ]);
    for f in ["abundances.csv", "scalings.csv", "references.csv", "locals.json", "locals.bin", "objective.csv", "abundance_0.pgm", "scaling_2.pgm"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = tmp.path().join("table.csv");
    run_ok(&["eval", "--input", s(&out), "--truth", s(&scene), "--csv", s(&csv), "--label", "relmm"]);
    let report = read_report(&out.join("eval.txt")).unwrap();
    for key in ["armse", "mean_sam_deg", "recon_rmse"] {
        let (_, v) = report.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no {key}"));
        let v: f64 = v.parse().unwrap();
        assert!(v.is_finite() && v >= 0.0, "{key}={v}");
    }
    let row = fs::read_to_string(&csv).unwrap();
    assert!(row.lines().any(|l| l.starts_with("relmm,")), "{row}");
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["unmix", "--output-dir", s(tmp.path())]).status.code(), Some(1));

    let missing = run(&["idest", "--input", s(&tmp.path().join("nope.json")), "--output-dir", s(tmp.path())]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));

    // header and payload disagree
    let scene = tmp.path().join("scene");
    small_scene(&scene, 1, "0");
    let bin = scene.join("cube.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&bin, bytes).unwrap();
    let bad = run(&["idest", "--input", s(&scene.join("cube.json")), "--output-dir", s(tmp.path())]);
    assert_eq!(bad.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("cube.bin") && msg.contains("payload"), "{msg}");

    // an all-zero cube leaves nothing to extract from
    let zero = SpectralCube::new(DMatrix::zeros(10, 16), 4, 4).unwrap();
    let zpath = tmp.path().join("zero.json");
    write_cube(&zpath, &zero).unwrap();
    let numerical = run(&["extract", "--input", s(&zpath), "--output-dir", s(tmp.path()), "--p", "3", "--extract", "vca"]);
    assert_eq!(numerical.status.code(), Some(2), "{}", String::from_utf8_lossy(&numerical.stderr));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    let mut snaps = Vec::new();
    for threads in ["1", "4"] {
        let root = tmp.path().join(format!("t{threads}"));
        let scene = root.join("scene");
        small_scene(&scene, 5, threads);
        let cube = scene.join("cube.json");
        let out = root.join("unmix");
        run_ok(&[
            "--threads", threads, "unmix", "--input", s(&cube), "--output-dir", s(&out), "--p", "3", "--method", "relmm",
            "--max-iter", "15",
        ]);
        run_ok(&["--threads", threads, "eval", "--input", s(&out), "--truth", s(&scene)]);
        snaps.push((snapshot(&scene), snapshot(&out)));
    }
    assert_eq!(snaps[0], snaps[1]);
}
