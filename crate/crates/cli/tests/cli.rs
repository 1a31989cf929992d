use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("polqkd-cli-{}-{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn polqkd(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polqkd"))
        .args(args)
        .env("QKDSIM_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

const BASE: &str = r#"
schema_version = 1
name = "NAME"
mode = "monte_carlo"
seed = 4

[protocol]
rep_rate_hz = 1.5e9
mu = 0.5
nu = 0.13
p_mu = 0.7
p_z_tx = 0.9

[channel]
fixed_loss_db = 38.5
"#;

fn config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let p = dir.join(format!("{name}.toml"));
    fs::write(&p, format!("{}{extra}", BASE.replace("NAME", name))).unwrap();
    p
}

#[test]
fn preset_run_and_figdata() {
    let root = scratch("preset");
    let out = polqkd(&root, &["preset", "lab-nominal"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = root.join("lab-nominal");
    for f in [
        "report.json",
        "manifest.json",
        "fig_blocks.csv",
        "fig_cumulative_bits.csv",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let report = dir.join("report.json");
    let fig = polqkd(&root, &["figdata", report.to_str().unwrap(), "--figure", "qber_trace"]);
    assert_eq!(fig.status.code(), Some(0));
    assert!(String::from_utf8(fig.stdout)
        .unwrap()
        .starts_with("time_s,qber_y_mu,qber_y_nu,qber_x_mu,qber_x_nu\n"));
    let missing = polqkd(&root, &["figdata", report.to_str().unwrap(), "--figure", "jitter"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("unsupported figure"));

    let list = polqkd(&root, &["preset", "list"]);
    assert!(String::from_utf8(list.stdout).unwrap().contains("satellite-emulation"));
    fs::remove_dir_all(root).ok();
}

#[test]
fn config_errors_exit_two() {
    let root = scratch("config");
    let bad = config(&root, "bad", "[run]\nduration_s = 1.0\ntypo = 3\n");
    assert_eq!(polqkd(&root, &["run", bad.to_str().unwrap()]).status.code(), Some(2));
    let unseeded = root.join("unseeded.toml");
    fs::write(
        &unseeded,
        fs::read_to_string(&bad)
            .unwrap()
            .replace("seed = 4\n", "")
            .replace("typo = 3\n", ""),
    )
    .unwrap();
    assert_eq!(
        polqkd(&root, &["run", unseeded.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(polqkd(&root, &["preset", "missing"]).status.code(), Some(2));
    assert_eq!(polqkd(&root, &["run", "/nonexistent.toml"]).status.code(), Some(2));
    fs::remove_dir_all(root).ok();
}

#[test]
fn zero_key_exits_four() {
    let root = scratch("zero");
    let cfg = config(
        &root,
        "zero",
        concat!(
            "[source]\nintrinsic_qber_y = 0.0146\nintrinsic_qber_x = 0.0324\n",
            "[security]\nblock_n_z = 10_000\n[run]\nduration_s = 5.0\n"
        ),
    );
    assert_eq!(polqkd(&root, &["run", cfg.to_str().unwrap()]).status.code(), Some(4));
    fs::remove_dir_all(root).ok();
}

#[test]
fn no_lock_exits_three() {
    let root = scratch("nolock");
    let cfg = config(
        &root,
        "nolock",
        "background_rate_hz = 1e8\n[sync]\nmode = \"qubit4sync\"\nbench_slots = 2_000_000\n",
    );
    let out = polqkd(&root, &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // Partial outputs are still written.
    assert!(root.join("nolock/manifest.json").exists());
    fs::remove_dir_all(root).ok();
}

#[test]
fn curve_subcommand() {
    let root = scratch("curve");
    let cfg = config(&root, "curve", "");
    let out = polqkd(&root, &["curve", cfg.to_str().unwrap(), "--loss-grid", "0:10:5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(root.join("curve/fig_skr_vs_loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let bad = polqkd(&root, &["curve", cfg.to_str().unwrap(), "--loss-grid", "0:10"]);
    assert_ne!(bad.status.code(), Some(0));
    fs::remove_dir_all(root).ok();
}
