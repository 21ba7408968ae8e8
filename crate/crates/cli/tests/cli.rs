mod common;

use std::fs;
use std::path::Path;

use common::{run, tree, write_fixture};
use ebgolf::simlab::HolesSpec;
use serde_json::Value;

fn fixture(dir: &Path) -> String {
    let path = dir.join("shots.csv");
    write_fixture(&path, 3, HolesSpec::Fixed { holes: 200 }, 5);
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn fit_writes_three_posteriors_per_category() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("out");
    let res = run(&["fit", "--input", &input, "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));

    let text = fs::read_to_string(out.join("fit/posteriors.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("golfer_season,category,n_holes,mle_mean,eb_mean,post_var")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    for cat in ["driving", "approaching", "putting"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some(cat)).count(), 3);
    }
    let fits: Value = serde_json::from_str(&fs::read_to_string(out.join("fit/fits.json")).unwrap()).unwrap();
    assert_eq!(fits.as_array().unwrap().len(), 3);
    assert!(!out.join("fit/diagnostics.json").exists());
}

#[test]
fn diagnostics_flag_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("out");
    let res = run(&["fit", "--input", &input, "--out", s(&out), "--diagnostics"]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let diags: Value = serde_json::from_str(&fs::read_to_string(out.join("fit/diagnostics.json")).unwrap()).unwrap();
    for d in diags.as_array().unwrap() {
        let ll: Vec<f64> = d["loglik"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-10));
    }
}

#[test]
fn missing_input_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let res = run(&["fit", "--input", s(&missing), "--out", s(&dir.path().join("out"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("nowhere.csv"));
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        vec!["test", "--alpha", "abc"],
        vec!["test", "--alpha", "1.0"],
        vec!["test", "--alpha", "0"],
        vec!["simulate", "--replications", "0"],
        vec!["fit", "--min-holes", "0"],
        vec!["frobnicate"],
        vec![],
    ] {
        let res = run(&args);
        assert_eq!(res.status.code(), Some(1), "{args:?}: {}", stderr(&res));
    }
    let res = run(&["fit"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("--input"));
}

#[test]
fn version_and_help_succeed() {
    let res = run(&["--version"]);
    assert_eq!(res.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["name"], "ebgolf");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["fit", "--help"]).status.code(), Some(0));
}

#[test]
fn test_stage_sweeps_alphas() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        run(&["fit", "--input", &input, "--out", s(&out)]).status.code(),
        Some(0)
    );
    let res = run(&["test", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));

    let bh: Value = serde_json::from_str(&fs::read_to_string(out.join("test/bh.json")).unwrap()).unwrap();
    let bh = bh.as_array().unwrap();
    assert_eq!(bh.len(), 12);
    for cat in ["driving", "approaching", "putting"] {
        let alphas: Vec<f64> = bh
            .iter()
            .filter(|o| o["category"] == cat)
            .map(|o| o["alpha"].as_f64().unwrap())
            .collect();
        assert_eq!(alphas, vec![0.01, 0.05, 0.10, 0.15]);
    }
    let text = fs::read_to_string(out.join("test/results.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "golfer_season,category,eb_mean,post_var,z,p_value,rejected_at_alpha_0.01,\
         rejected_at_alpha_0.05,rejected_at_alpha_0.1,rejected_at_alpha_0.15"
    );
    assert_eq!(text.lines().count(), 10);

    let res = run(&["test", "--out", s(&out), "--alpha", "0.5"]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let bh: Value = serde_json::from_str(&fs::read_to_string(out.join("test/bh.json")).unwrap()).unwrap();
    assert_eq!(bh.as_array().unwrap().len(), 3);
}

#[test]
fn test_without_fit_is_actionable() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["test", "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("ebgolf fit"));
    let res = run(&["report", "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("ebgolf fit"));
}

#[test]
fn report_manifest_lists_every_file_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("out");
    let res = run(&["all", "--input", &input, "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));

    let report = out.join("report");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(report.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    for cat in ["driving", "approaching", "putting"] {
        for name in [
            "skill_hist.csv",
            "shrinkage.csv",
            "top_k.csv",
            "bh_points.csv",
            "bh_lines.csv",
            "effects.json",
            "strokes_per_hole.csv",
        ] {
            assert!(files.contains(&format!("{cat}/{name}").as_str()), "{cat}/{name}");
        }
    }
    assert!(files.contains(&"holes_played.csv"));
    for f in &files {
        assert!(report.join(f).is_file(), "{f}");
    }
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["min_holes"], 150);

    // Three golfers are too few for percentiles; the reason is recorded.
    let effects: Value =
        serde_json::from_str(&fs::read_to_string(report.join("putting/effects.json")).unwrap()).unwrap();
    assert!(effects["summary"].is_null());
    assert!(effects["skipped"].as_str().unwrap().contains("20"));

    let from_all = tree(&report);
    let mut reruns = Vec::new();
    for _ in 0..2 {
        let res = run(&["report", "--out", s(&out)]);
        assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
        reruns.push(tree(&report));
    }
    assert_eq!(reruns[0], reruns[1]);
    // Only the echoed configuration differs from the `all` run.
    let data = |t: &[(std::path::PathBuf, Vec<u8>)]| -> Vec<_> {
        t.iter()
            .filter(|(p, _)| !p.ends_with("manifest.json"))
            .cloned()
            .collect()
    };
    assert_eq!(data(&reruns[0]), data(&from_all));
}

#[test]
fn config_file_precedence_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "min_holes = 500\nalphas = [0.2]\ntop_k = 2\n").unwrap();
    let out = dir.path().join("out");

    let res = run(&["fit", "--config", s(&cfg), "--input", &input, "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2), "no golfer reaches 500 holes");

    let res = run(&[
        "fit",
        "--config",
        s(&cfg),
        "--input",
        &input,
        "--out",
        s(&out),
        "--min-holes",
        "150",
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));

    let res = common::bin()
        .args(["all", "--config", s(&cfg), "--config-dump"])
        .env("EBGOLF_MIN_HOLES", "120")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    let dumped: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(dumped["min_holes"], 120);
    assert_eq!(dumped["alphas"], serde_json::json!([0.2]));
    assert_eq!(dumped["top_k"], 2);
    assert_eq!(dumped["bins"], 30);

    fs::write(&cfg, "min_holez = 5\n").unwrap();
    assert_eq!(run(&["fit", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn schema_mapping_and_strict_rows() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let text = fs::read_to_string(&input).unwrap();
    let renamed = text.replacen("golfer_season,", "player_year,", 1) + "sim00000,sim0000,1,1,chipping,0.1\n";
    let path = dir.path().join("renamed.csv");
    fs::write(&path, renamed).unwrap();
    let out = dir.path().join("out");

    let res = run(&["fit", "--input", s(&path), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("golfer_season"));

    let schema = "golfer_season=player_year";
    let res = run(&["fit", "--input", s(&path), "--out", s(&out), "--schema", schema]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let errors = fs::read_to_string(out.join("fit/parse_errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 2);
    assert!(errors.contains("chipping"));

    let res = run(&[
        "fit",
        "--input",
        s(&path),
        "--out",
        s(&out),
        "--schema",
        schema,
        "--strict",
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("chipping"));

    assert_eq!(
        run(&["fit", "--input", s(&path), "--schema", "nonsense"]).status.code(),
        Some(1)
    );
}

#[test]
fn single_golfer_category_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    write_fixture(&path, 1, HolesSpec::Fixed { holes: 200 }, 3);
    let res = run(&["fit", "--input", s(&path), "--out", s(&dir.path().join("out"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("at least 2 golfers"));
}

#[test]
fn simulate_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = run(&[
            "simulate",
            "--replications",
            "4",
            "--seed",
            "99",
            "--out",
            s(out),
            "--emit-shots",
        ]);
        assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    }
    assert_eq!(tree(&a), tree(&b));

    let report: Value = serde_json::from_str(&fs::read_to_string(a.join("simulate/report.json")).unwrap()).unwrap();
    assert_eq!(report["replications"], 4);
    let alphas = report["alphas"].as_array().unwrap();
    assert_eq!(alphas.len(), 4);
    for cell in alphas {
        let fdr = cell["empirical_fdr"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&fdr));
    }
    let rows = fs::read_to_string(a.join("simulate/replications.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 4);

    // The emitted shots feed straight back into the pipeline.
    let res = run(&[
        "all",
        "--input",
        s(&a.join("simulate/shots.csv")),
        "--out",
        s(&a.join("pipeline")),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
}

#[test]
fn simulate_without_seed_prints_the_one_it_used() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study.toml");
    fs::write(
        &study,
        "n_golfers = 30\nmu_s = 0.0\ntau2_s = 0.0\nnull_fraction = 1.0\nseed = 0\n\
         holes = { kind = \"fixed\", holes = 50 }\nsigma2 = { kind = \"fixed\", sigma2 = 1.0 }\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = common::bin()
        .args([
            "simulate",
            "--study",
            s(&study),
            "--replications",
            "2",
            "--out",
            s(&out),
        ])
        .env_remove("EBGOLF_SEED")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("simulate/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 0, "the study file's seed is used");
    assert_eq!(report["config"]["n_golfers"], 30);

    let res = run(&["simulate", "--replications", "1", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(0));
    assert!(stderr(&res).contains("--seed"));
}
