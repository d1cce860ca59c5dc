use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_metts");

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join("cli")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, n_states: usize) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            "[model]\nn_sites = 4\n\n[evolution]\ndtau = 0.02\nn_steps = 50\nn_samples = 32\n\n\
             [ensemble]\nn_states = {n_states}\nmaster_seed = 5\n\n\
             [output]\ndirectory = {:?}\n",
            dir.join("out").display().to_string()
        ),
    )
    .unwrap();
    path
}

fn metts(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("METTS_WORKERS")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn curve(dir: &Path) -> Vec<u8> {
    fs::read(dir.join("out").join("curve.csv")).unwrap()
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = scratch("smoke");
    let cfg = write_config(&dir, 4);
    let cfg = cfg.to_str().unwrap();
    let stdout = ok(metts(&["run", cfg, "-q"]));
    assert!(stdout.contains("4 members computed"), "{stdout}");
    let first = curve(&dir);
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.starts_with("# curve v1\n"));
    let out = dir.join("out");
    assert!(out.join("manifest.toml").exists());
    for id in 0..4 {
        for ext in ["trajectory.csv", "derived.csv", "lstm"] {
            assert!(out
                .join("members")
                .join(format!("member_{id:05}.{ext}"))
                .exists());
        }
    }

    fs::remove_dir_all(&out).unwrap();
    ok(metts(&["run", cfg, "-q", "--workers", "3"]));
    assert_eq!(curve(&dir), first);
}

#[test]
fn interrupted_run_resumes_to_the_same_curve() {
    let dir = scratch("resume");
    let cfg = write_config(&dir, 5);
    let cfg = cfg.to_str().unwrap();
    ok(metts(&["run", cfg, "-q"]));
    let full = curve(&dir);
    let members = dir.join("out").join("members");
    for id in [1, 3] {
        fs::remove_file(members.join(format!("member_{id:05}.trajectory.csv"))).unwrap();
    }
    fs::remove_file(dir.join("out").join("curve.csv")).unwrap();
    let stdout = ok(metts(&["run", cfg, "-q"]));
    assert!(stdout.contains("2 members computed, 3 reused"), "{stdout}");
    assert_eq!(curve(&dir), full);
}

#[test]
fn growing_the_ensemble_reuses_existing_members() {
    let dir = scratch("extend");
    let cfg = write_config(&dir, 3);
    let cfg = cfg.to_str().unwrap();
    ok(metts(&["run", cfg, "-q"]));
    let stdout = ok(metts(&["run", cfg, "-q", "--set", "ensemble.n_states=5"]));
    assert!(stdout.contains("2 members computed, 3 reused"), "{stdout}");

    let stdout = ok(metts(&["run", cfg, "-q", "--set", "evolution.dtau=0.01"]));
    assert!(stdout.contains("3 members computed, 0 reused"), "{stdout}");
}

#[test]
fn invalid_config_is_rejected_with_the_field_name() {
    let dir = scratch("invalid");
    let cfg = write_config(&dir, 2);
    let out = metts(&["run", cfg.to_str().unwrap(), "--set", "evolution.dtau=-1"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dtau"), "{stderr}");

    fs::write(&cfg, "[model]\nn_sites = 4\nbogus = 1\n").unwrap();
    let out = metts(&["run", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

fn rows(table: &str) -> Vec<Vec<f64>> {
    table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn oracle_table() {
    let table = ok(metts(&[
        "oracle",
        "-n",
        "6",
        "--boundary",
        "open",
        "--ed",
        "--beta-step",
        "0.5",
    ]));
    assert!(
        table.starts_with("beta,energy_exact,energy_ed\n"),
        "{table}"
    );
    let parsed = rows(&table);
    assert_eq!(parsed.len(), 7);
    assert_eq!(parsed[0][1], 0.0);
    for r in &parsed {
        assert!((r[1] - r[2]).abs() < 1e-10, "{r:?}");
    }

    let start = Instant::now();
    let table = ok(metts(&["oracle", "-n", "20"]));
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(rows(&table).len(), 61);
}

#[test]
fn compare_reports_epsilon_for_a_constant_offset() {
    let dir = scratch("compare");
    let table = ok(metts(&["oracle", "-n", "8"]));
    let mut text = String::from("# curve v1\nbeta,energy_estimate,n_contributing\n");
    for r in rows(&table) {
        text.push_str(&format!("{},{},10\n", r[0], r[1] + 0.1));
    }
    let path = dir.join("curve.csv");
    fs::write(&path, text).unwrap();
    let report = ok(metts(&["compare", path.to_str().unwrap(), "-n", "8"]));
    let eps: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("# epsilon = "))
        .expect("epsilon line")
        .trim()
        .parse()
        .unwrap();
    assert!((eps - 0.15).abs() < 1e-9, "{report}");
}
