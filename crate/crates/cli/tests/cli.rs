use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ssdalm::report::SolutionFile;

fn ssdalm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdalm"))
        .args(args)
        .env("SSDALM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// base_small cut down to three stages, written as a config file.
fn small_config(dir: &Path, branching: &str) -> std::path::PathBuf {
    let text = ssdalm::config::BASE_SMALL
        .replace("stages = [0.0, 1.0, 2.0, 3.0, 4.0]", "stages = [0.0, 1.0, 2.0]")
        .replace("branching = [4, 4, 4, 4]", &format!("branching = {branching}"));
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_pipeline_on_base_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let t0 = Instant::now();
    let o = ssdalm(&["run", "--config", "base_small", "--out", p(&out)]);
    let el = t0.elapsed();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(el < Duration::from_secs(60), "{el:?}");
    for f in [
        "tree.txt",
        "config.toml",
        "diagnostics.json",
        "solution.json",
        "verification.json",
        "summary.csv",
        "stages.csv",
        "mismatch.csv",
        "report.json",
        "cdf.csv",
    ] {
        let meta = fs::metadata(out.join(f)).unwrap_or_else(|_| panic!("{f} missing"));
        assert!(meta.len() > 0, "{f} empty");
    }
    let stages = fs::read_to_string(out.join("stages.csv")).unwrap();
    assert_eq!(stages.lines().count(), 1 + 5);
}

#[test]
fn report_is_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&ssdalm(&["run", "--config", "base_small", "--out", p(&out)])), 0);
    let sol = out.join("solution.json");
    let names = ["summary.csv", "stages.csv", "mismatch.csv", "cdf.csv"];
    for (k, d) in ["a", "b"].iter().enumerate() {
        let target = dir.path().join(d);
        let o = ssdalm(&["report", "--solution", p(&sol), "--format", "csv", "--out", p(&target)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        if k == 1 {
            for n in names {
                assert_eq!(fs::read(dir.path().join("a").join(n)).unwrap(), fs::read(target.join(n)).unwrap(), "{n}");
            }
        }
    }
    for n in names {
        assert_eq!(fs::read(out.join(n)).unwrap(), fs::read(dir.path().join("a").join(n)).unwrap(), "{n}");
    }
    let j = dir.path().join("j");
    assert_eq!(code(&ssdalm(&["report", "--solution", p(&sol), "--format", "json", "--out", p(&j)])), 0);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), fs::read(j.join("report.json")).unwrap());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = ssdalm::config::BASE_SMALL.replace("alpha = 0.5", "alpha = 1.5").replace("beta = 1.0", "beta = -1.0");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let o = ssdalm(&["run", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("alpha") && err.contains("beta"), "{err}");
    assert!(!dir.path().join("x").exists());

    assert_eq!(code(&ssdalm(&["generate", "--config", "no_such_preset", "--out", p(dir.path())])), 2);
    fs::write(&cfg, "not = [valid").unwrap();
    assert_eq!(code(&ssdalm(&["generate", "--config", p(&cfg), "--out", p(dir.path())])), 2);
    let o = ssdalm(&[
        "sweep", "--config", "base_small", "--param", "phi", "--values", "1,-1", "--out", p(&dir.path().join("s")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_thread_count_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_ssdalm"))
        .args(["generate", "--config", "base_small", "--out", "unused"])
        .env("SSDALM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn infeasible_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = ssdalm::config::BASE_SMALL.replace("theta_max = 0.6", "theta_max = 0.2");
    let cfg = dir.path().join("tight.toml");
    fs::write(&cfg, text).unwrap();
    let gen = dir.path().join("gen");
    assert_eq!(code(&ssdalm(&["generate", "--config", p(&cfg), "--out", p(&gen)])), 0);
    let o = ssdalm(&["solve", "--tree", p(&gen.join("tree.txt")), "--config", p(&cfg)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(gen.join("solution.json").exists());
}

#[test]
fn tampered_solution_fails_verification_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[3, 3]");
    assert_eq!(code(&ssdalm(&["generate", "--config", p(&cfg), "--out", p(dir.path())])), 0);
    let tree = dir.path().join("tree.txt");
    assert_eq!(code(&ssdalm(&["solve", "--tree", p(&tree), "--config", p(&cfg)])), 0);
    let sol = dir.path().join("solution.json");
    assert_eq!(code(&ssdalm(&["verify", "--tree", p(&tree), "--solution", p(&sol)])), 0);

    let mut file = SolutionFile::from_json(&fs::read_to_string(&sol).unwrap()).unwrap();
    for n in &mut file.result.nodes[1..4] {
        n.x.iter_mut().for_each(|v| *v *= 0.5);
    }
    let bad = dir.path().join("tampered.json");
    fs::write(&bad, file.to_json()).unwrap();
    let o = ssdalm(&["verify", "--tree", p(&tree), "--solution", p(&bad)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_with_oracle_on_a_three_stage_tree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[3, 2]");
    assert_eq!(code(&ssdalm(&["generate", "--config", p(&cfg), "--out", p(dir.path()), "--seed", "11"])), 0);
    let tree = dir.path().join("tree.txt");
    assert_eq!(code(&ssdalm(&["solve", "--tree", p(&tree), "--config", p(&cfg)])), 0);
    let o = ssdalm(&["verify", "--tree", p(&tree), "--solution", p(&dir.path().join("solution.json")), "--oracle"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let gap = v["oracle"]["relative_gap"].as_f64().unwrap();
    assert!(gap <= 1e-5, "{gap}");
}

#[test]
fn phi_sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = ssdalm(&[
        "sweep", "--config", "base_small", "--param", "phi", "--values", "0,0.8,1,1.1", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 5, "{table}");
    assert!(rows[0].starts_with("phi,status,k0"));
    let k0: Vec<f64> = rows[1..]
        .iter()
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            assert_eq!(f[1], "Optimal", "{r}");
            f[2].parse().unwrap()
        })
        .collect();
    assert!(k0.windows(2).all(|w| w[1] >= w[0] - 1e-6 * (1.0 + w[0].abs())), "{k0:?}");
    for v in ["0", "0.8", "1", "1.1"] {
        assert!(out.join(format!("phi_{v}")).join("solution.json").exists(), "{v}");
    }
}
