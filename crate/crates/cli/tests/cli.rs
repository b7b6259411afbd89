use std::path::Path;
use std::process::{Command, Output};

fn gpmorse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpmorse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn arctan_config(dir: &Path, extra: &str) -> String {
    let body = format!(
        "schema_version = 1\nseed = 3\n[system]\nname = \"arctan-1d\"\n[data]\ninitial = 20\n[gp.optimizer]\nrestarts = 2\niterations = 60\n{extra}"
    );
    let path = dir.join("arctan.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn sample_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = arctan_config(dir.path(), "");
    for out in ["a.txt", "b.txt"] {
        let o = gpmorse(&["sample", "--config", &cfg, "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("propagation_count = 20"));
    }
    let a = std::fs::read(dir.path().join("a.txt")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.txt")).unwrap());
    let o = gpmorse(&["sample", "--config", &cfg, "--seed", "4", "--out", "c.txt"], dir.path());
    assert!(o.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.txt")).unwrap());
}

#[test]
fn pendulum_sample_has_300_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpmorse(&["sample", "--system", "pendulum-lqr", "--out", "d.txt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("d.txt")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 300);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 4));
}

#[test]
fn zero_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = arctan_config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("initial = 20", "initial = 0");
    std::fs::write(&cfg, text).unwrap();
    let o = gpmorse(&["sample", "--config", &cfg, "--out", "d.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!dir.path().join("d.txt").exists());
}

#[test]
fn missing_schema_version_and_unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "[system]\nname = \"arctan-1d\"\n").unwrap();
    let o = gpmorse(&["sample", "--config", path.to_str().unwrap(), "--out", "d.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("schema_version"));
    let cfg = arctan_config(dir.path(), "[refine]\nspeed = 2\n");
    let o = gpmorse(&["sample", "--config", &cfg, "--out", "d.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gpmorse(&["analyze", "--mode", "both", "--out", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(gpmorse(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpmorse(&["sample", "--config", "nope.toml", "--out", "d.txt"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn fit_names_corrupted_line_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = arctan_config(dir.path(), "");
    assert!(gpmorse(&["sample", "--config", &cfg, "--out", "d.txt"], dir.path()).status.success());
    for out in ["m1.txt", "m2.txt"] {
        let o = gpmorse(&["fit", "--config", &cfg, "--data", "d.txt", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("log_likelihood"));
    }
    assert_eq!(
        std::fs::read(dir.path().join("m1.txt")).unwrap(),
        std::fs::read(dir.path().join("m2.txt")).unwrap()
    );

    let text = std::fs::read_to_string(dir.path().join("d.txt")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let target = lines.iter().position(|l| !l.starts_with('#')).unwrap() + 2;
    lines[target] = "0.5 zebra".into();
    std::fs::write(dir.path().join("bad.txt"), lines.join("\n")).unwrap();
    let o = gpmorse(&["fit", "--config", &cfg, "--data", "bad.txt", "--out", "m3.txt"], dir.path());
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains(&format!("bad.txt:{}", target + 1)), "{}", stderr(&o));
}

#[test]
fn fit_on_two_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = arctan_config(dir.path(), "");
    std::fs::write(dir.path().join("d.txt"), "# gpmorse-dataset dim=1 tau=1.0 system=arctan-1d propagations=2\n-1 -0.7853981633974483\n2 1.1071487177940904\n").unwrap();
    let o = gpmorse(&["fit", "--config", &cfg, "--data", "d.txt", "--out", "m.txt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn arctan_true_analysis_reproduces_the_five_cell_graph() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpmorse(&["analyze", "--system", "arctan-1d", "--mode", "true", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("morse_nodes = 3"));
    let dot = std::fs::read_to_string(dir.path().join("a/morse.dot")).unwrap();
    assert_eq!(dot.matches("->").count(), 2);
    let raster = std::fs::read_to_string(dir.path().join("a/roa.txt")).unwrap();
    let labels: Vec<&str> = raster
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(str::split_whitespace)
        .collect();
    assert_eq!(labels.len(), 5);
    assert!(labels.iter().all(|&l| l == labels[0] && l != "-1" && l != "-2"));
}

#[test]
fn single_cell_grid() {
    let dir = tempfile::tempdir().unwrap();
    // the one cell maps into itself: a single node with a self-loop
    let cfg = arctan_config(dir.path(), "[grid]\nlower = [-3.0]\nupper = [3.0]\nsubdivisions = [0]\n");
    let o = gpmorse(&["analyze", "--config", &cfg, "--mode", "true", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("morse_nodes = 1"));
    // on [2, 3] the image [atan 2, atan 3] misses the cell: no node
    let cfg = arctan_config(dir.path(), "[grid]\nlower = [2.0]\nupper = [3.0]\nsubdivisions = [0]\n[goal]\nlower = [2.0]\nupper = [2.1]\n");
    let o = gpmorse(&["analyze", "--config", &cfg, "--mode", "true", "--out", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("morse_nodes = 0"));
}

#[test]
fn run_then_zero_round_refine_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = arctan_config(dir.path(), "[truth]\nhorizon = 200.0\n[refine]\nrounds = 2\nper_round = 3\n");
    let o = gpmorse(&["run", "--config", &cfg, "--score", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("run_dir = "))
        .unwrap()
        .to_string();
    let run = dir.path().join(&run_dir);
    let report = std::fs::read(run.join("report.txt")).unwrap();
    assert!(String::from_utf8_lossy(&report).contains("rounds = 2"));

    let o = gpmorse(&["refine", "--run", &run_dir, "--rounds", "0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(run.join("report.txt")).unwrap(), report);

    let o = gpmorse(&["refine", "--run", &run_dir, "--rounds", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("rounds = 3"));

    let o = gpmorse(&["refine", "--run", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn ground_truth_and_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = arctan_config(dir.path(), "[truth]\nhorizon = 200.0\n");
    let o = gpmorse(&["ground-truth", "--config", &cfg, "--out", "t.txt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("inside_fraction = 1"));
    assert!(gpmorse(&["analyze", "--config", &cfg, "--mode", "true", "--out", "a"], dir.path()).status.success());
    let o = gpmorse(&["score", "--config", &cfg, "--map", "a/map.txt", "--truth", "t.txt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("roa_ratio = 1\nfp_fraction = 0"));
}

#[test]
fn external_oracle_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gpmorse");
    let oracle = format!("'{bin}' oracle --system arctan-1d");
    let cfg = arctan_config(dir.path(), "");
    let a = gpmorse(&["sample", "--config", &cfg, "--out", "a.txt"], dir.path());
    let b = gpmorse(&["sample", "--config", &cfg, "--oracle", &oracle, "--out", "b.txt"], dir.path());
    assert!(a.status.success() && b.status.success(), "{}", stderr(&b));
    let rows = |f: &str| -> Vec<String> {
        std::fs::read_to_string(dir.path().join(f))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(rows("a.txt"), rows("b.txt"));
    let o = gpmorse(&["sample", "--config", &cfg, "--oracle", "exit 1", "--out", "c.txt"], dir.path());
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
}

#[test]
fn init_prints_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpmorse(&["init", "duffing-2well"], dir.path());
    assert!(o.status.success());
    std::fs::write(dir.path().join("d.toml"), stdout(&o)).unwrap();
    let o = gpmorse(&["analyze", "--config", "d.toml", "--mode", "true", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("attractors = 2"));
}
