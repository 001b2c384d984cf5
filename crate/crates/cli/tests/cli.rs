use std::path::Path;
use std::process::Command;

use gradfield_cli::record::output_hashes;

fn gradfield(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gradfield"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const SMALL: &str = r#"
[experiment]
id = "small"
seed = 5

[domain]
d = 2
eps = 0.125

[model]
kind = "graddelta"
delta = 0.9

[beta]
form = "constant"
beta0 = 20.0

[sampling]
chains = 2
samples = 600
thin = 2

[fluct]
phi = ["bump"]

[brascamp_lieb]
t = [0.5, 1.0]

[contour]
betas = [10.0, 20.0]
a = [0.2, 0.3]
"#;

#[test]
fn schema_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, SMALL.replace("delta = 0.9", "delta = 2.0")).unwrap();
    let (code, _, err) = gradfield(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("delta"), "{err}");
    std::fs::write(&cfg, SMALL.replace("thin = 2", "thin = 2\nspeed = 1")).unwrap();
    assert_eq!(gradfield(dir.path(), &["run", cfg.to_str().unwrap()]).0, 2);
    assert_eq!(gradfield(dir.path(), &["sample", "--model", "nope", "--eps", "0.25"]).0, 2);
    assert_eq!(gradfield(dir.path(), &["walk", "--eps", "0.5", "--potential", "cosine"]).0, 2);
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gradfield(dir.path(), &["vortices", "--in", "absent.csv"]).0, 3);
}

#[test]
fn config_runs_replay_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (code, out, err) = gradfield(&a, &["run", cfg.to_str().unwrap()]);
    assert!(code == 0 || code == 1, "{err}");
    assert!(out.contains("small"));
    assert_eq!(gradfield(&b, &["run", cfg.to_str().unwrap()]).0, code);
    let ha = output_hashes(&a.join("small")).unwrap();
    let hb = output_hashes(&b.join("small")).unwrap();
    assert_eq!(ha, hb);
    for f in ["samples.csv", "fluct_bump.csv", "contour.csv", "brascamp_lieb.json", "report.json", "config.toml"] {
        assert!(ha.contains_key(f), "{f} missing from {ha:?}");
    }
    // a different seed changes the samples
    let c = dir.path().join("c");
    gradfield(&c, &["--seed", "6", "run", cfg.to_str().unwrap()]);
    assert_ne!(output_hashes(&c.join("small")).unwrap()["samples.csv"], ha["samples.csv"]);

    let (code, report, _) = gradfield(dir.path(), &["report", a.join("small").to_str().unwrap()]);
    assert!(code == 0 || code == 1);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["stages"]["contour"]["summary"]["fit"]["slope"].is_number());
    assert!(v["stages"]["contour"]["summary"]["fit"]["c_fit"].is_number());
    assert!(v["stages"]["fluct"]["summary"]["reports"]["bump"]["charfn"]["t"].is_array());
}

#[test]
fn file_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, _, err) = gradfield(
        d,
        &[
            "--seed",
            "9",
            "sample",
            "--model",
            "xy",
            "--eps",
            "0.125",
            "--beta",
            "6",
            "--chains",
            "2",
            "--samples",
            "600",
            "--thin",
            "2",
            "--out",
            "xy.csv",
        ],
    );
    assert_eq!(code, 0, "{err}");
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("xy.json")).unwrap()).unwrap();
    assert_eq!(side["beta"], 6.0);
    assert!(side["diagnostics"]["chains"][0]["acceptance"].is_object());
    let header = std::fs::read_to_string(d.join("xy.csv")).unwrap();
    assert!(header.starts_with("chain,sweep,vertex_index,theta\n"));

    assert_eq!(gradfield(d, &["vortices", "--in", "xy.csv", "--out", "census.json"]).0, 0);
    let census: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("census.json")).unwrap()).unwrap();
    assert_eq!(census["census"].as_array().unwrap().len(), 1200);
    assert!(census["census"][0]["charged_plaquettes"].is_array());

    let (code, _, err) = gradfield(d, &["fluct", "--in", "xy.csv", "--phi", "bump,sine", "--out", "f.csv"]);
    assert!(code == 0 || code == 1, "{err}");
    assert!(std::fs::read_to_string(d.join("f.csv")).unwrap().starts_with("t,re,im,se_re,se_im,ref"));
    assert!(d.join("fluct_sine.csv").exists() && d.join("fluct.json").exists());

    let (code, _, err) = gradfield(d, &["contour", "--in", "xy.csv", "--a", "0.2,0.4", "--out", "c.csv"]);
    assert!(code == 0 || code == 1, "{err}");
    assert!(d.join("contour.json").exists());
    assert_eq!(gradfield(d, &["contour", "--in", "xy.csv", "--a", "0.2", "--edges", "99999"]).0, 2);
}

#[test]
fn walk_and_couple_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, _, err) = gradfield(d, &["walk", "--eps", "0.5", "--pairs", "100", "--walkers", "6", "--out", "w.csv"]);
    assert!(code == 0 || code == 1, "{err}");
    let csv = std::fs::read_to_string(d.join("w.csv")).unwrap();
    assert!(csv.starts_with("pair_id,t,x_1,x_2\n"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("walk.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["n_used"], 600);

    let (code, _, err) = gradfield(
        d,
        &["couple", "--model", "xy", "--eps", "0.25", "--delta", "0.785", "--draws", "20", "--out", "cp.csv"],
    );
    assert!(code == 0 || code == 1, "{err}");
    let csv = std::fs::read_to_string(d.join("cp.csv")).unwrap();
    assert!(csv.starts_with("draw,agreed,n_bad_edges,max_abs_eta\n"));
    assert_eq!(csv.lines().count(), 21);
}
