use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dimclust(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimclust")).current_dir(dir).args(args).output().expect("binary runs")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Asserts the exit code and, on failure, a single-line JSON reason on stderr.
fn expect_code(out: &Output, code: i32) -> serde_json::Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    if code == 0 {
        return serde_json::Value::Null;
    }
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let last = stderr.lines().last().expect("an error line");
    let v: serde_json::Value = serde_json::from_str(last).expect("error line is JSON");
    assert_eq!(v["code"], code);
    v
}

fn write_two_scale_distances(path: &Path) {
    let mut text = String::new();
    for i in 0..300 {
        let u = (i as f64 + 0.5) / 300.0;
        let r = if i % 2 == 0 { -u.ln() * 0.01 } else { (-u.ln()).sqrt() };
        text.push_str(&format!("{r}\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn generators_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    expect_code(
        &dimclust(
            dir.path(),
            &["--seed", "7", "generate", "cantor", "--count", "12", "--depth", "20", "--out", "c.csv"],
        ),
        0,
    );
    expect_code(
        &dimclust(dir.path(), &["--seed", "7", "generate", "cube", "--dim", "2", "--count", "5", "--out", "u.csv"]),
        0,
    );
    assert_eq!(fs::read(dir.path().join("c.csv")).unwrap(), fs::read(golden("cantor12.csv")).unwrap());
    assert_eq!(fs::read(dir.path().join("u.csv")).unwrap(), fs::read(golden("cube5.csv")).unwrap());
    assert!(dir.path().join("c.csv.manifest.json").exists());
}

#[test]
fn walk_writes_points_labels_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "2", "generate", "walk", "--segment-lengths", "5,6,7,8", "--out", "w.csv"];
    expect_code(&dimclust(dir.path(), &args), 0);
    let labels = fs::read_to_string(dir.path().join("w.csv.labels.csv")).unwrap();
    let labels: Vec<&str> = labels.lines().collect();
    assert_eq!(labels.len(), 26);
    assert_eq!(labels[0], "1");
    assert_eq!(labels[5], "2");
    assert_eq!(fs::read_to_string(dir.path().join("w.csv")).unwrap().lines().count(), 26);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("w.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);

    let bad = dimclust(dir.path(), &["generate", "walk", "--segment-lengths", "5,6", "--out", "x.csv"]);
    expect_code(&bad, 2);
}

#[test]
fn rerunning_a_command_reproduces_every_byte() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    expect_code(
        &dimclust(p, &["--seed", "3", "generate", "cube", "--dim", "2", "--count", "400", "--out", "cube.csv"]),
        0,
    );
    let fit = [
        "--seed",
        "5",
        "fit",
        "--input",
        "cube.csv",
        "--structure",
        "2",
        "--restarts",
        "3",
        "--out",
        "a.json",
        "--histogram",
        "a.hist.csv",
    ];
    expect_code(&dimclust(p, &fit), 0);
    let first: Vec<Vec<u8>> =
        ["a.json", "a.json.manifest.json", "a.hist.csv"].iter().map(|f| fs::read(p.join(f)).unwrap()).collect();
    let threaded: Vec<&str> = ["--threads", "1"].into_iter().chain(fit).collect();
    expect_code(&dimclust(p, &threaded), 0);
    for (f, bytes) in ["a.json", "a.json.manifest.json", "a.hist.csv"].iter().zip(&first) {
        assert_eq!(&fs::read(p.join(f)).unwrap(), bytes, "{f} changed");
    }

    let doc: serde_json::Value = serde_json::from_slice(&first[0]).unwrap();
    assert_eq!(doc["schema_version"], "dimclust-result/1");
    assert_eq!(doc["structure"], serde_json::json!([2]));
    assert_eq!(doc["point_indices"].as_array().unwrap().len(), 400);
}

#[test]
fn brute_and_index_engines_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    expect_code(&dimclust(p, &["generate", "cube", "--dim", "3", "--count", "1000", "--out", "cube.csv"]), 0);
    expect_code(&dimclust(p, &["nn", "--input", "cube.csv", "-n", "3", "--engine", "brute", "--out", "b.csv"]), 0);
    expect_code(&dimclust(p, &["nn", "--input", "cube.csv", "-n", "3", "--engine", "index", "--out", "i.csv"]), 0);
    assert_eq!(fs::read(p.join("b.csv")).unwrap(), fs::read(p.join("i.csv")).unwrap());
}

#[test]
fn distance_files_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_two_scale_distances(&p.join("r.csv"));
    fs::write(p.join("fit.conf"), "# test settings\nrestarts = 3\ntol = 1e-7\n").unwrap();
    let args = [
        "--config",
        "fit.conf",
        "fit",
        "--input",
        "r.csv",
        "--distances",
        "--structure",
        "1,1",
        "--restarts",
        "2",
        "--out",
        "r.json",
    ];
    expect_code(&dimclust(p, &args), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("r.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["restarts"], 2);
    assert_eq!(manifest["config"]["tol"], 1e-7);
    assert_eq!(manifest["inputs"][0]["fingerprint"].as_str().unwrap().len(), 64);

    fs::write(p.join("bad.conf"), "restarts = lots\n").unwrap();
    let bad = ["--config", "bad.conf", "fit", "--input", "r.csv", "--distances", "--structure", "1", "--out", "x.json"];
    expect_code(&dimclust(p, &bad), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_two_scale_distances(&p.join("r.csv"));
    fs::write(p.join("garbage.csv"), "1,2\n3,oops\n").unwrap();
    fs::write(p.join("neg.csv"), "0.5\n-1\n").unwrap();
    fs::write(p.join("one.csv"), "0.01\n").unwrap();

    let v = expect_code(&dimclust(p, &["fit", "--input", "r.csv", "--distances", "--out", "x.json"]), 2);
    assert_eq!(v["error"], "usage");
    expect_code(&dimclust(p, &["fit", "--input", "r.csv", "--distances", "--structure", "1,2", "--out", "x.json"]), 2);
    expect_code(
        &dimclust(p, &["fit", "--input", "r.csv", "--distances", "--structure", "1", "--tol", "-1", "--out", "x.json"]),
        2,
    );
    expect_code(&dimclust(p, &["frobnicate"]), 2);

    let v = expect_code(&dimclust(p, &["fit", "--input", "garbage.csv", "--structure", "1", "--out", "x.json"]), 3);
    assert_eq!(v["error"], "data");
    expect_code(&dimclust(p, &["fit", "--input", "neg.csv", "--distances", "--structure", "1", "--out", "x.json"]), 3);
    expect_code(&dimclust(p, &["fit", "--input", "missing.csv", "--structure", "1", "--out", "x.json"]), 3);

    let v = expect_code(
        &dimclust(
            p,
            &["fit", "--input", "r.csv", "--distances", "--structure", "1,1", "--max-iter", "1", "--out", "nc.json"],
        ),
        4,
    );
    assert_eq!(v["error"], "not_converged");
    assert!(p.join("nc.json").exists());

    let v = expect_code(
        &dimclust(p, &["fit", "--input", "one.csv", "--distances", "--structure", "1", "--out", "x.json"]),
        5,
    );
    assert_eq!(v["error"], "infeasible");
}

fn edge_image(w: usize, h: usize) -> Vec<u8> {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let base: u8 = if x < w / 2 { 40 } else { 200 };
            bytes.push(base + ((x * 7 + y * 13) % 5) as u8);
        }
    }
    bytes
}

#[test]
fn image_writes_result_mask_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("edge.pgm"), edge_image(16, 12)).unwrap();
    let out =
        dimclust(p, &["image", "--input", "edge.pgm", "--structure", "1,1", "--restarts", "2", "--out-prefix", "e"]);
    assert!(matches!(out.status.code(), Some(0) | Some(4)), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = fs::read(p.join("e.mask.pgm")).unwrap();
    assert!(mask.starts_with(b"P5\n16 12\n255\n"));
    assert_eq!(mask.len(), b"P5\n16 12\n255\n".len() + 16 * 12);
    assert!(p.join("e.json").exists());
    assert!(p.join("e.manifest.json").exists());

    fs::write(p.join("one.pgm"), b"P5\n1 1\n255\n\x10").unwrap();
    expect_code(&dimclust(p, &["image", "--input", "one.pgm", "--out-prefix", "o"]), 3);
    expect_code(&dimclust(p, &["image", "--input", "edge.pgm", "--mode", "rgb", "--out-prefix", "o"]), 3);
}
