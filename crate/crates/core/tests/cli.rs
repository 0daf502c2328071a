use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fkgen(dir: &Path, command: &str, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{command}.toml"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("{command}-out"));
    let output = Command::new(env!("CARGO_BIN_EXE_fkgen"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (output, out)
}

/// Data rows of a CSV written by the CLI (header comment and header skipped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let k = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == name)
        .unwrap();
    reader
        .records()
        .map(|r| r.unwrap()[k].to_string())
        .collect()
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn smooth_horizon_zero_constant_term() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = fkgen(
        tmp.path(),
        "smooth",
        "[model]\nfamily = \"three-state\"\n[run]\nhorizon = 0\n[functional]\nterm = \"one\"\n",
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&out.join("smooth.csv"));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][3], "1.0");
    assert!(out.join("smoother_state.json").exists());
    assert!(out.join("resolved_config.toml").exists());
}

#[test]
fn smooth_flat_potential_has_zero_log_normalizer() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = fkgen(
        tmp.path(),
        "smooth",
        "[model]\nfamily = \"iid-toy\"\n[run]\nreplicates = 2\n",
        &[],
    );
    assert!(o.status.success());
    let logz = column(&out.join("smooth.csv"), "log_normalizer");
    assert_eq!(logz.len(), 22);
    assert!(logz.iter().all(|v| v == "0.0"));
}

#[test]
fn every_output_carries_seed_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = fkgen(
        tmp.path(),
        "smooth",
        "[model]\nfamily = \"iid-toy\"\n[run]\nseed = 4\n",
        &["--seed", "99"],
    );
    assert!(o.status.success());
    for name in ["smooth.csv", "resolved_config.toml"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(
            first.starts_with("# seed=99 scenario_hash="),
            "{name}: {first}"
        );
        assert_eq!(first.len(), "# seed=99 scenario_hash=".len() + 64);
    }
    let json = std::fs::read_to_string(out.join("smoother_state.json")).unwrap();
    assert!(json.contains("\"seed\": 99"));
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 99"));
}

#[test]
fn genealogy_horizon_zero_matches_filter_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let config =
        "[model]\nfamily = \"three-state\"\n[run]\nhorizon = 0\nn_particles = 40\nseed = 3\n";
    let (o, out) = fkgen(tmp.path(), "genealogy", config, &[]);
    assert!(o.status.success());
    let (o2, out2) = fkgen(tmp.path(), "smooth", config, &[]);
    assert!(o2.status.success());
    assert_eq!(
        column(&out.join("genealogy.csv"), "estimate"),
        column(&out2.join("smooth.csv"), "estimate")
    );
}

#[test]
fn genealogy_single_particle_is_one_lineage() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = fkgen(
        tmp.path(),
        "genealogy",
        "[model]\nfamily = \"three-state\"\n[run]\nn_particles = 1\nhorizon = 5\n",
        &[],
    );
    assert!(o.status.success());
    assert!(column(&out.join("lineage.csv"), "distinct_ancestors")
        .iter()
        .all(|v| v == "1"));
    assert_eq!(
        column(&out.join("genealogy.csv"), "coalescence_depth"),
        vec!["0"]
    );
}

#[test]
fn compare_variance_grid_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = fkgen(
        tmp.path(),
        "compare-variance",
        "[model]\nfamily = \"iid-toy\"\n",
        &[],
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("compare_variance.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(rows(&out.join("compare_variance.csv")).is_empty());

    let (o, out) = fkgen(
        tmp.path(),
        "compare-variance",
        "[model]\nfamily = \"iid-toy\"\n[run]\nreplicates = 10\nestimators = [\"smoothed\"]\n[grid]\nhorizons = [3]\nn_particles = [20]\n",
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&out.join("compare_variance.csv"));
    assert_eq!(r.len(), 1);
    assert_eq!(&r[0][..4], &["3", "20", "smoothed", "10"]);
    assert_eq!(r[0][6], "");
}

#[test]
fn compare_variance_exponent_check_fails_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = fkgen(
        tmp.path(),
        "compare-variance",
        "[model]\nfamily = \"iid-toy\"\n[run]\nreplicates = 50\n[grid]\nhorizons = [2, 8]\nn_particles = [50]\n[checks]\nsmoothed_exponent = [5.0, 6.0]\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(out.join("compare_variance.csv").exists());
}

#[test]
fn oracle_check_flat_fixture_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = fkgen(
        tmp.path(),
        "oracle-check",
        "[model]\nfamily = \"iid-toy\"\n[run]\nhorizon = 6\nreplicates = 32\n",
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let passed = column(&out.join("oracle_check.csv"), "passed");
    assert!(!passed.is_empty());
    assert!(passed.iter().all(|v| v == "true"));
}

#[test]
fn oracle_check_full_fixture_suite() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["three_state.fkm", "three_state_inhomogeneous.fkm"] {
        let path = fixtures_dir().join(name);
        let config = format!(
            "[model]\nfixture = \"{}\"\n[run]\nreplicates = 200\n[functional]\nkind = \"pairwise-additive\"\nterm = \"value\"\npair = \"increment\"\n",
            path.display()
        );
        let (o, out) = fkgen(tmp.path(), "oracle-check", &config, &[]);
        assert!(
            o.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let checks = column(&out.join("oracle_check.csv"), "check");
        for expected in [
            "duality",
            "backward-decomposition",
            "segment-identity",
            "semigroup",
            "unbiasedness",
        ] {
            assert!(checks.iter().any(|c| c == expected), "{expected} missing");
        }
    }
}

#[test]
fn corrupted_fixture_is_a_model_contract_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = format!(
        "[model]\nfixture = \"{}\"\n",
        fixtures_dir().join("corrupted_row_sum.fkm").display()
    );
    let (o, out) = fkgen(tmp.path(), "oracle-check", &config, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.join("oracle_check.csv").exists());
}

#[test]
fn fixture_paths_resolve_through_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[model]\nfixture = \"three_state.fkm\"\n[run]\nhorizon = 2\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fkgen"))
        .args(["smooth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .env("FKGEN_FIXTURES", fixtures_dir())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn hprocess_single_state_has_zero_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("one.fkm");
    std::fs::write(
        &fixture,
        "states 1\nhorizon 20\nhomogeneous true\ninitial\n1.0\nvalues\n0.25\nreversing\n1.0\npotential\n0.5\ntransition\n1.0\n",
    )
    .unwrap();
    let config = format!(
        "[model]\nfixture = \"{}\"\n[run]\nn_particles = 5\nreplicates = 3\n[grid]\nhorizons = [1, 10]\n",
        fixture.display()
    );
    let (o, out) = fkgen(tmp.path(), "hprocess", &config, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(column(&out.join("hprocess.csv"), "gap"), vec!["0.0"; 3]);
}

#[test]
fn hprocess_flat_potential_tends_to_stationary_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("flat.fkm");
    // stationary law of M is (0.4, 0.6)
    std::fs::write(
        &fixture,
        "states 2\nhorizon 60\nhomogeneous true\ninitial\n1.0 0.0\nreversing\n0.4 0.6\npotential\n1.0 1.0\ntransition\n0.7 0.3\n0.2 0.8\n",
    )
    .unwrap();
    let config = format!(
        "[model]\nfixture = \"{}\"\n[run]\nn_particles = 200\nreplicates = 10\n[grid]\nhorizons = [5, 20]\n",
        fixture.display()
    );
    let (o, out) = fkgen(tmp.path(), "hprocess", &config, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mu_h: Vec<f64> = column(&out.join("hprocess.csv"), "mu_h")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((mu_h[0] - 0.6).abs() < 1e-12);
    let exact: Vec<f64> = column(&out.join("hprocess.csv"), "exact")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    let gaps: Vec<f64> = exact.iter().map(|e| (e - 0.6).abs()).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = fkgen(
        tmp.path(),
        "smooth",
        "[model]\nfamily = \"three-state\"\nbogus = 1\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = fkgen(
        tmp.path(),
        "smooth",
        "[model]\nfamily = \"three-state-inhomogeneous\"\n[run]\nhorizon = 30\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_fkgen"))
        .arg("smooth")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn enumeration_cap_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = fkgen(
        tmp.path(),
        "oracle-check",
        "[model]\nfamily = \"three-state\"\n[checks]\nenumeration_cap = 1000\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn pinned_seed_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = format!(
        "[model]\nfixture = \"{}\"\n[run]\nn_particles = 64\nreplicates = 4\nseed = 2024\n",
        fixtures_dir().join("three_state.fkm").display()
    );
    for command in ["smooth", "genealogy"] {
        let (a, out_a) = fkgen(tmp.path(), command, &config, &["--threads", "1"]);
        let snapshot: Vec<Vec<u8>> = std::fs::read_dir(&out_a)
            .unwrap()
            .map(|e| std::fs::read(e.unwrap().path()).unwrap())
            .collect();
        let (b, out_b) = fkgen(tmp.path(), command, &config, &["--threads", "3"]);
        assert!(a.status.success() && b.status.success());
        assert_eq!(out_a, out_b);
        let again: Vec<Vec<u8>> = std::fs::read_dir(&out_b)
            .unwrap()
            .map(|e| std::fs::read(e.unwrap().path()).unwrap())
            .collect();
        assert_eq!(snapshot, again, "{command}");
    }
}
