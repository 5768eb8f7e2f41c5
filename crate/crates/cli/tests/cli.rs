use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusion_core::numerics::io as tensor_io;
use fusion_core::pipeline::{init_pipeline_params, run_scene, PipelineConfig, RunOptions};
use fusion_core::scene::read_bundle;
use fusion_core::voxel::{SparseVoxelGrid, VoxelConfig};
use tempfile::TempDir;

fn fusion3d(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusion3d"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = fusion3d(args, cwd);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Asserts failure and returns the single stderr line.
fn err(args: &[&str], cwd: &Path) -> String {
    let o = fusion3d(args, cwd);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    let e = String::from_utf8(o.stderr).unwrap();
    assert_eq!(e.trim_end().lines().count(), 1, "{e}");
    assert!(e.starts_with("error["), "{e}");
    e.trim_end().to_string()
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn kv(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {report}"))
        .to_string()
}

#[test]
fn synth_zero_writes_empty_manifest() {
    let tmp = TempDir::new().unwrap();
    ok(&["synth", "0", "--out", "s"], tmp.path());
    assert_eq!(fs::read_to_string(tmp.path().join("s/manifest.txt")).unwrap(), "");
}

#[test]
fn synth_is_deterministic_and_lists_every_scene() {
    let tmp = TempDir::new().unwrap();
    ok(&["synth", "3", "--out", "a", "--seed", "9"], tmp.path());
    ok(&["synth", "3", "--out", "b", "--seed", "9", "--jobs", "3"], tmp.path());
    let a = read_all(&tmp.path().join("a"));
    assert_eq!(a, read_all(&tmp.path().join("b")));
    let manifest = fs::read_to_string(tmp.path().join("a/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    for (i, name) in manifest.lines().enumerate() {
        let meta = fs::read_to_string(tmp.path().join("a").join(name).join("meta.txt")).unwrap();
        assert_eq!(meta.trim(), format!("seed={}", 9 + i));
    }
}

#[test]
fn run_is_byte_identical_and_batch_matches_single() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    ok(&["synth", "3", "--out", "s"], t);
    ok(&["run", "s/scene_0001", "--out", "one.txt"], t);
    ok(&["run", "s/scene_0001", "--out", "two.txt"], t);
    let one = fs::read(t.join("one.txt")).unwrap();
    assert_eq!(one, fs::read(t.join("two.txt")).unwrap());
    assert!(one.starts_with(b"# class cx cy cz l w h yaw score\n"));

    ok(&["run", "s/manifest.txt", "--out", "serial"], t);
    ok(&["run", "s/manifest.txt", "--out", "parallel", "--jobs", "3"], t);
    assert_eq!(read_all(&t.join("serial")), read_all(&t.join("parallel")));
    assert_eq!(fs::read(t.join("serial/scene_0001/detections.txt")).unwrap(), one);
}

#[test]
fn empty_scene_gives_header_only() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    ok(&["synth", "1", "--out", "s"], t);
    fs::write(t.join("s/scene_0000/cloud.txt"), "").unwrap();
    ok(&["run", "s/scene_0000", "--out", "d.txt"], t);
    assert_eq!(
        fs::read_to_string(t.join("d.txt")).unwrap(),
        "# class cx cy cz l w h yaw score\n"
    );
}

#[test]
fn dumped_stages_parse_back_with_matching_shapes() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    ok(&["synth", "1", "--out", "s"], t);
    ok(&["run", "s/scene_0000", "--out", "d.txt", "--dump-stages"], t);

    let cfg = PipelineConfig::default();
    let scene = read_bundle(&t.join("s/scene_0000")).unwrap();
    let params = init_pipeline_params(&cfg).unwrap();
    let want = run_scene(&scene, &cfg, &params, RunOptions { collect_stages: true }).unwrap();
    let dir = t.join("d.stages");
    assert!(want.tensors.iter().any(|(n, _)| n == "f_gcfat"));
    for (name, tensor) in &want.tensors {
        let got = tensor_io::load(&dir.join(format!("{name}.aydt"))).unwrap();
        assert_eq!(got.shape(), tensor.shape(), "{name}");
        assert_eq!(got.data(), tensor.data(), "{name}");
    }
    let geometry = VoxelConfig::default().geometry();
    for (name, grid) in &want.grids {
        let text = fs::read_to_string(dir.join(format!("{name}.grid.txt"))).unwrap();
        let got = SparseVoxelGrid::from_text(&text, geometry).unwrap();
        assert_eq!(got.extents(), grid.extents(), "{name}");
        assert_eq!(got.len(), grid.len(), "{name}");
        assert_eq!(got.width(), grid.width(), "{name}");
    }
    let files = fs::read_dir(&dir).unwrap().count();
    assert_eq!(files, want.tensors.len() + want.grids.len());
}

#[test]
fn grad_check_reports_every_block_and_rejects_a_corrupt_backward() {
    let tmp = TempDir::new().unwrap();
    let report = ok(&["grad-check"], tmp.path());
    for block in ["gda", "sffa", "vga", "composed"] {
        let e: f64 = kv(&report, &format!("{block}.max_rel_error")).parse().unwrap();
        assert!(e < 1e-4, "{block}: {e}");
    }
    assert_eq!(kv(&report, "pass"), "true");

    let line = err(&["grad-check", "--corrupt-backward", "1.5"], tmp.path());
    assert!(line.starts_with("error[numeric] "), "{line}");
    assert!(line.contains("parameter"), "{line}");
}

const HEADER: &str = "# class cx cy cz l w h yaw score\n";

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    ok(&["synth", "1", "--out", "s", "--seed", "4"], t);
    let gt = fs::read_to_string(t.join("s/scene_0000/boxes.txt")).unwrap();
    let dets: String = gt
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut f: Vec<&str> = l.split_whitespace().collect();
            f[8] = "1";
            f.join(" ") + "\n"
        })
        .collect();
    fs::write(t.join("dets.txt"), dets).unwrap();
    let r = ok(&["eval", "dets.txt", "s/scene_0000"], t);
    for class in ["vehicle", "pedestrian"] {
        if kv(&r, &format!("gt.{class}")) != "0" {
            assert_eq!(kv(&r, &format!("ap.{class}")), "1.000000", "{r}");
            assert_eq!(kv(&r, &format!("aph.{class}")), "1.000000", "{r}");
        }
    }
}

#[test]
fn eval_with_no_detections_scores_zero() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    fs::write(t.join("dets.txt"), HEADER).unwrap();
    fs::write(t.join("gt.txt"), "vehicle 10 0 0.8 4.5 1.9 1.6 0 1\n").unwrap();
    let r = ok(&["eval", "dets.txt", "gt.txt"], t);
    assert_eq!(kv(&r, "ap.vehicle"), "0.000000");
    assert_eq!(kv(&r, "ap.pedestrian"), "undefined");
}

#[test]
fn eval_hand_fixture_matches_the_hand_table() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    fs::write(
        t.join("gt.txt"),
        "vehicle 10 0 0.8 4.5 1.9 1.6 0 1\nvehicle 20 5 0.8 4.5 1.9 1.6 0 1\n",
    )
    .unwrap();
    fs::write(
        t.join("dets.txt"),
        "vehicle 10 0 0.8 4.5 1.9 1.6 0 0.9\nvehicle 30 -5 0.8 4.5 1.9 1.6 0 0.8\nvehicle 20 5 0.8 4.5 1.9 1.6 0 0.7\n",
    )
    .unwrap();
    let r = ok(&["eval", "dets.txt", "gt.txt", "--pr-csv", "pr.csv"], t);
    assert_eq!(kv(&r, "ap.vehicle"), format!("{:.6}", 5.0 / 6.0));
    assert_eq!(kv(&r, "aph.vehicle"), format!("{:.6}", 5.0 / 6.0));
    assert_eq!(kv(&r, "tp.vehicle"), "2");
    let csv = fs::read_to_string(t.join("pr.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("vehicle,"))
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let table = [[0.9, 1.0, 0.5], [0.8, 0.5, 0.5], [0.7, 2.0 / 3.0, 1.0]];
    assert_eq!(rows.len(), table.len());
    for (row, want) in rows.iter().zip(table) {
        assert!(
            (row[0] - want[0]).abs() < 1e-12 && (row[1] - want[1]).abs() < 1e-12 && (row[2] - want[2]).abs() < 1e-12,
            "{row:?}"
        );
    }
}

#[test]
fn malformed_input_reports_the_line() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    fs::write(t.join("dets.txt"), format!("{HEADER}vehicle 1 2 3\n")).unwrap();
    fs::write(t.join("gt.txt"), HEADER).unwrap();
    let line = err(&["eval", "dets.txt", "gt.txt"], t);
    assert!(line.starts_with("error[parse] eval: line 2"), "{line}");
}

#[test]
fn config_errors_name_the_module() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    fs::write(t.join("bad.ini"), "[gcfat]\nwidth = 16\n").unwrap();
    let line = err(&["grad-check", "--config", "bad.ini"], t);
    assert!(line.starts_with("error[config] config: "), "{line}");
    fs::write(t.join("typo.ini"), "[sffa]\nwidht = 16\n").unwrap();
    let line = err(&["grad-check", "--config", "typo.ini"], t);
    assert!(line.contains("widht"), "{line}");
    let line = err(&["run", "missing_dir"], t);
    assert!(line.starts_with("error[input] scene: "), "{line}");
}

#[test]
fn config_file_round_trips_through_the_cli() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    let cfg = PipelineConfig {
        seed: 31,
        ..PipelineConfig::default()
    };
    fs::write(t.join("c.ini"), cfg.to_ini()).unwrap();
    ok(&["synth", "1", "--out", "a", "--config", "c.ini"], t);
    ok(&["synth", "1", "--out", "b", "--seed", "31"], t);
    assert_eq!(read_all(&t.join("a")), read_all(&t.join("b")));
}
