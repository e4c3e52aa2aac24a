use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn eulerlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eulerlab"))
        .args(args)
        .output()
        .expect("spawn eulerlab")
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(
        &p,
        "seed = 3\n[grid]\nn = 32\nn_t = 16\n[iteration]\nq_max = 1\n[ensemble]\nmembers = 4\n",
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(eulerlab(&["bogus"]).status.code(), Some(2));
    assert_eq!(eulerlab(&["ci", "run"]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[grid]\nnn = 4\n").unwrap();
    let out = tmp.path().join("out");
    let o = eulerlab(&["ci", "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn beltrami_verify_passes() {
    let o = eulerlab(&["beltrami", "verify", "--flows", "3", "--matrices", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], true);
}

#[test]
fn ci_run_verify_roundtrip_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let a_s = a.to_str().unwrap();

    assert_eq!(eulerlab(&["ci", "run", "--config", &cfg, "--out", a_s]).status.code(), Some(0));
    assert_eq!(eulerlab(&["ci", "verify", "--run", a_s]).status.code(), Some(0));

    assert_eq!(
        eulerlab(&["ci", "run", "--config", &cfg, "--out", b.to_str().unwrap()]).status.code(),
        Some(0)
    );
    for name in ["diagnostics.csv", "energy_profile.csv", "cauchy.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["checksums"].as_object().map_or(false, |m| !m.is_empty()));

    // a flipped byte in a stage dump must be caught
    let dump = a.join("stage_1").join("v.bin");
    let mut bytes = fs::read(&dump).unwrap();
    let k = bytes.len() - 9;
    bytes[k] ^= 0x40;
    fs::write(&dump, bytes).unwrap();
    assert_eq!(eulerlab(&["ci", "verify", "--run", a_s]).status.code(), Some(1));
}

#[test]
fn ensemble_from_run_and_certify_and_reynolds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    assert_eq!(eulerlab(&["ci", "run", "--config", &cfg, "--out", run_s]).status.code(), Some(0));

    let ens = tmp.path().join("ens");
    let o = eulerlab(&["ensemble", "run", "--config", &cfg, "--out", ens.to_str().unwrap(), "--from-run", run_s]);
    // member validity is resolution-limited at n_t = 16; the verdict is still reported
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(ens.join("members").join("member_000.json")).unwrap()).unwrap();
    assert_eq!(m["checks"][0]["stage"], 0);
    assert_eq!(m["checks"][0]["pass"], true);
    for name in ["law.csv", "ensemble_paths.csv", "clusters.json", "summary.json"] {
        assert!(ens.join(name).exists(), "{name} missing");
    }

    let u = run.join("stage_1").join("v.bin");
    let r = run.join("stage_1").join("r.bin");
    let o = eulerlab(&[
        "certify",
        "--u",
        u.to_str().unwrap(),
        "--r",
        r.to_str().unwrap(),
        "--battery",
        "6",
        "--threshold",
        "1e-3",
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rep.get("pass").is_some());

    let rs = tmp.path().join("rs.bin");
    let o = eulerlab(&["multiscale", "reynolds", "--kappa", "2", "--u", u.to_str().unwrap(), "--out", rs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rs.exists());
}

#[test]
fn noise_quadform_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("noise.toml");
    fs::write(&cfg, "[noise]\nshells = [2, 4]\nquadform_n = 16\n").unwrap();
    let out = tmp.path().join("q");
    let o = eulerlab(&["noise", "quadform", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("quadform.csv").exists());
}
