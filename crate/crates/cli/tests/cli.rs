use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use smal_core::imagefit::read_mask;
use smal_core::mesh::write_obj;
use smal_core::synth::{make_template, TemplateSpec};

fn smal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smal"))
        .args(args)
        .output()
        .expect("run smal")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Relative path and contents of every file under `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn synth(dir: &Path, count: usize) {
    let o = smal(&[
        "synth",
        "--count",
        &count.to_string(),
        "--resolution",
        "1",
        "--out-dir",
        p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn animal_dirs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_deterministic_across_output_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 3);
    synth(&b, 3);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
}

#[test]
fn synth_count_zero_gives_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 0);
    assert!(animal_dirs(tmp.path()).is_empty());
    assert_eq!(
        read_json(&tmp.path().join("dataset.json"))["animals"],
        Value::Array(vec![])
    );
}

#[test]
fn synth_writes_one_directory_per_animal() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 10);
    let dirs = animal_dirs(tmp.path());
    assert_eq!(dirs.len(), 10);
    for d in &dirs {
        for f in [
            "scan.obj",
            "keypoints3d.json",
            "truth.json",
            "truth.obj",
            "render_side.json",
            "render_side.pgm",
        ] {
            assert!(tmp.path().join(d).join(f).is_file(), "{d}/{f}");
        }
    }
}

#[test]
fn manifest_lists_outputs_and_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1);
    let m = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 7);
    let hash = m["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let mut sorted = outputs.clone();
    sorted.sort();
    assert_eq!(outputs, sorted);
    assert!(outputs.contains(&"config.toml"));
    assert!(!outputs.contains(&"manifest.json"));
    for o in outputs {
        assert!(tmp.path().join(o).is_file(), "{o}");
    }
}

#[test]
fn seed_changes_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth(&a, 0);
    let o = smal(&[
        "synth",
        "--count",
        "0",
        "--resolution",
        "1",
        "--seed",
        "8",
        "--out-dir",
        p(&b),
    ]);
    assert_eq!(code(&o), 0);
    let h = |d: &Path| read_json(&d.join("manifest.json"))["config_sha256"].clone();
    assert_ne!(h(&a), h(&b));
}

#[test]
fn configuration_errors_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    for set in [
        "image.weights.silhouette=-1",
        "no_such_key=1",
        "image.keypoint_sigma=0",
        "seed",
    ] {
        let o = smal(&["synth", "--count", "0", "--set", set, "--out-dir", out]);
        assert_eq!(code(&o), 1, "{set}: {}", stderr(&o));
    }
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[stages]\narap = \"yes\"\n").unwrap();
    assert_eq!(
        code(&smal(&[
            "synth",
            "--count",
            "0",
            "--config",
            p(&cfg),
            "--out-dir",
            out
        ])),
        1
    );
    let missing = tmp.path().join("missing.toml");
    assert_eq!(
        code(&smal(&["synth", "--config", p(&missing), "--out-dir", out])),
        3
    );
}

#[test]
fn config_file_and_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 3\n[synth]\ncount = 2\n").unwrap();
    let out = tmp.path().join("out");
    let o = smal(&[
        "synth",
        "--config",
        p(&cfg),
        "--set",
        "synth.count=1",
        "--resolution",
        "1",
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(animal_dirs(&out).len(), 1);
    assert_eq!(read_json(&out.join("manifest.json"))["seed"], 3);
}

#[test]
fn argument_errors_exit_with_validation_code() {
    assert_eq!(code(&smal(&["frobnicate"])), 1);
    assert_eq!(code(&smal(&["synth", "--count", "many"])), 1);
    assert_eq!(code(&smal(&["--help"])), 0);
}

#[test]
fn register_reduces_distance_on_every_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, regs) = (tmp.path().join("data"), tmp.path().join("regs"));
    synth(&data, 10);
    let o = smal(&[
        "register",
        "--dataset",
        p(&data),
        "--out-dir",
        p(&regs),
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_json(&regs.join("summary.json"));
    let summary = summary.as_object().unwrap();
    assert_eq!(summary.len(), 10);
    for (id, s) in summary {
        let g = s["gloss_distance"].as_f64().unwrap();
        let a = s["arap_distance"].as_f64().unwrap();
        assert!(a < g, "{id}: {a} >= {g}");
        for f in ["gloss.json", "gloss.obj", "arap.obj", "trace.json"] {
            assert!(regs.join(id).join(f).is_file(), "{id}/{f}");
        }
        let trace = read_json(&regs.join(id).join("trace.json"));
        assert!(!trace["gloss_round_energies"].as_array().unwrap().is_empty());
        assert!(!trace["arap_energies"].as_array().unwrap().is_empty());
    }
}

#[test]
fn register_skips_arap_when_disabled() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, regs) = (tmp.path().join("data"), tmp.path().join("regs"));
    synth(&data, 1);
    let o = smal(&[
        "register",
        "--dataset",
        p(&data),
        "--set",
        "stages.arap=false",
        "--out-dir",
        p(&regs),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = regs.join("animal_000");
    assert!(dir.join("gloss.obj").is_file());
    assert!(!dir.join("arap.obj").exists());
    let s = read_json(&regs.join("summary.json"));
    assert_eq!(
        s["animal_000"]["gloss_distance"],
        s["animal_000"]["arap_distance"]
    );
}

#[test]
fn register_of_the_template_is_a_fixed_point() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = TemplateSpec::with_resolution(1);
    let template = make_template(&spec).unwrap();
    let dir = tmp.path().join("data/self");
    std::fs::create_dir_all(&dir).unwrap();
    write_obj(&dir.join("scan.obj"), &template.mesh).unwrap();
    let kps: BTreeMap<&str, [f64; 3]> = template
        .scan_keypoints
        .iter()
        .map(|(n, v)| {
            let q = template.mesh.vertices[*v];
            (n.as_str(), [q.x, q.y, q.z])
        })
        .collect();
    std::fs::write(
        dir.join("keypoints3d.json"),
        serde_json::to_string(&kps).unwrap(),
    )
    .unwrap();
    let regs = tmp.path().join("regs");
    let o = smal(&[
        "register",
        "--dataset",
        p(&tmp.path().join("data")),
        "--set",
        "template.resolution=1",
        "--out-dir",
        p(&regs),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let diag = template.mesh.bbox_diagonal();
    let s = read_json(&regs.join("summary.json"));
    let a = s["self"]["arap_distance"].as_f64().unwrap();
    let g = s["self"]["gloss_distance"].as_f64().unwrap();
    assert!(g < 1e-3 * diag && a < 1e-3 * diag, "{g} {a} vs {diag}");
}

#[test]
fn missing_keypoint_file_names_the_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, regs) = (tmp.path().join("data"), tmp.path().join("regs"));
    synth(&data, 2);
    std::fs::remove_file(data.join("animal_001/keypoints3d.json")).unwrap();
    let o = smal(&["register", "--dataset", p(&data), "--out-dir", p(&regs)]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("animal_001"), "{err}");
    assert!(err.contains("1 of 2 scans failed"), "{err}");
    // The other scan is still registered and the failure recorded.
    let s = read_json(&regs.join("summary.json"));
    assert!(s["animal_000"]["error"].is_null());
    assert!(s["animal_001"]["error"]
        .as_str()
        .unwrap()
        .contains("keypoints3d.json"));
}

#[test]
fn register_only_rejects_unknown_animals() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1);
    let out = tmp.path().join("regs");
    let o = smal(&[
        "register",
        "--dataset",
        p(&data),
        "--only",
        "animal_042",
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 1);
    let missing = tmp.path().join("nothing");
    assert_eq!(
        code(&smal(&[
            "register",
            "--dataset",
            p(&missing),
            "--out-dir",
            p(&out)
        ])),
        1
    );
}

/// Dataset, registrations and a model with `rounds` co-registration rounds.
fn model(dir: &Path, count: usize, rounds: usize) -> PathBuf {
    let (data, regs, out) = (dir.join("data"), dir.join("regs"), dir.join("model"));
    synth(&data, count);
    assert_eq!(
        code(&smal(&[
            "register",
            "--dataset",
            p(&data),
            "--out-dir",
            p(&regs)
        ])),
        0
    );
    let o = smal(&[
        "build-model",
        "--dataset",
        p(&data),
        "--registrations",
        p(&regs),
        "--rounds",
        &rounds.to_string(),
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn build_model_writes_model_and_round_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = model(tmp.path(), 4, 2);
    let m = read_json(&out.join("metrics.json"));
    let rounds = m["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 2);
    for (r, round) in rounds.iter().enumerate() {
        assert_eq!(round["distances"].as_array().unwrap().len(), 4);
        for i in 0..4 {
            assert!(out
                .join(format!("rounds/{}/animal_{i:03}.obj", r + 1))
                .is_file());
        }
    }
    let model = read_json(&out.join("model.json"));
    assert_eq!(model["version"], 1);
    assert!(!m["families"].as_array().unwrap().is_empty());
}

#[test]
fn build_model_with_zero_rounds_uses_registrations_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = model(tmp.path(), 3, 0);
    let m = read_json(&out.join("metrics.json"));
    assert!(m["rounds"].as_array().unwrap().is_empty());
    assert!(m["initial_distance"].is_null());
    assert!(!out.join("rounds").exists());
}

#[test]
fn two_identical_scans_give_a_zero_variance_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1);
    let copy = data.join("animal_001");
    std::fs::create_dir_all(&copy).unwrap();
    for f in ["scan.obj", "keypoints3d.json", "truth.json"] {
        std::fs::copy(data.join("animal_000").join(f), copy.join(f)).unwrap();
    }
    std::fs::remove_file(data.join("dataset.json")).unwrap();
    let regs = tmp.path().join("regs");
    let res = ["--set", "template.resolution=1"];
    let mut args = vec!["register", "--dataset", p(&data), "--out-dir", p(&regs)];
    args.extend(res);
    assert_eq!(code(&smal(&args)), 0);
    let out = tmp.path().join("model");
    let mut args = vec![
        "build-model",
        "--dataset",
        p(&data),
        "--registrations",
        p(&regs),
        "--rounds",
        "0",
        "--out-dir",
        p(&out),
    ];
    args.extend(res);
    let o = smal(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&out.join("metrics.json"));
    for e in m["eigenvalues"].as_array().unwrap() {
        assert!(e.as_f64().unwrap().abs() < 1e-12, "{e}");
    }
}

#[test]
fn fit_image_logs_family_prior_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let model_dir = model(tmp.path(), 3, 0);
    let truth = read_json(&tmp.path().join("data/animal_000/truth.json"));
    let family = truth["family"].as_str().unwrap().to_string();
    let out = tmp.path().join("fit");
    let o = smal(&[
        "fit-image",
        "--model",
        p(&model_dir.join("model.json")),
        "--annotation",
        p(&tmp.path().join("data/animal_000/render_side.json")),
        "--family",
        &family,
        "--stages",
        "1",
        "--pyramid-levels",
        "1",
        "--out-dir",
        p(&out),
        "-v",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stderr(&o).contains(&format!("loaded family prior `{family}`")),
        "{}",
        stderr(&o)
    );
    for f in [
        "fit.json",
        "fit.obj",
        "overlay.pgm",
        "render_minus45.pgm",
        "render_plus45.pgm",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let fit = read_json(&out.join("fit.json"));
    assert_eq!(fit["family"].as_str(), Some(family.as_str()));
    assert_eq!(fit["stages"].as_array().unwrap().len(), 3);

    let render = tmp.path().join("render");
    let o = smal(&[
        "render",
        "--model",
        p(&model_dir.join("model.json")),
        "--params",
        p(&out.join("fit.json")),
        "--yaw",
        "-30",
        "--out-dir",
        p(&render),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["render.pgm", "render.json", "mesh.obj"] {
        assert!(render.join(f).is_file(), "{f}");
    }
}

#[test]
fn fit_image_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let model_dir = model(tmp.path(), 2, 0);
    let model = model_dir.join("model.json");
    let ann = tmp.path().join("data/animal_000/render_side.json");
    let out = tmp.path().join("fit");
    let run = |ann: &Path, extra: &[&str]| {
        let mut args = vec![
            "fit-image",
            "--model",
            p(&model),
            "--annotation",
            p(ann),
            "--out-dir",
            p(&out),
        ];
        args.extend(extra);
        smal(&args)
    };
    assert_eq!(code(&run(&ann, &["--family", "dragon"])), 1);
    std::fs::write(
        tmp.path().join("data/animal_000/render_side.pgm"),
        b"P5 not a mask",
    )
    .unwrap();
    let o = run(&ann, &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("render_side.pgm"), "{}", stderr(&o));
    assert_eq!(code(&run(&tmp.path().join("absent.json"), &[])), 1);
    let o = smal(&["fit-image", "--annotation", p(&ann), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn render_mean_model_at_requested_size() {
    let tmp = tempfile::tempdir().unwrap();
    let model_dir = model(tmp.path(), 2, 0);
    let out = tmp.path().join("render");
    let o = smal(&[
        "render",
        "--model",
        p(&model_dir.join("model.json")),
        "--resolution",
        "64",
        "48",
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&out.join("render.json"));
    assert_eq!(r["resolution"], serde_json::json!([64, 48]));
    let mask = read_mask(&out.join("render.pgm")).unwrap();
    assert_eq!((mask.width, mask.height), (64, 48));
    assert!(mask.count() > 0);
}

#[test]
fn verify_invariants_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let o = smal(&[
        "verify",
        "--invariants-only",
        "--cases",
        "10",
        "--out-dir",
        p(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(&tmp.path().join("report.json"));
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 7);
    assert!(checks
        .iter()
        .all(|c| c["passed"] == true && c.get("seconds").is_none()));
}

#[test]
fn verify_detects_planted_gradient_bug() {
    let tmp = tempfile::tempdir().unwrap();
    let o = smal(&[
        "verify",
        "--inject-fault",
        "--points",
        "2",
        "--cases",
        "3",
        "--out-dir",
        p(tmp.path()),
    ]);
    assert_eq!(code(&o), 1);
    let report = read_json(&tmp.path().join("report.json"));
    let checks = report["checks"].as_array().unwrap();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["arap.energy"]);
    // One line per check with its maximum error.
    let stdout = String::from_utf8_lossy(&o.stdout);
    for c in checks {
        let name = c["name"].as_str().unwrap();
        assert!(stdout.lines().any(|l| l.starts_with(name)), "{name}");
        assert!(c["max_error"].is_number());
    }
}
