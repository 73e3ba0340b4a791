use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use burnside_cli::{cmd_verify, parse_epsilon, parse_spec, VerifyOptions};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_burnside"));
    c.env_remove("BURNSIDE_MAX_STATES");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn copy_fixture(name: &str, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(fixture(name)).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

#[test]
fn verify_golden_fixtures() {
    for (model, k, n, dir) in [("value", "3", "2", "value-k3-n2"), ("coord", "2", "3", "coord-k2-n3")] {
        let o = run(&["verify", "--model", model, "--k", k, "--n", n, "--fixture", fixture(dir).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        let text = stdout(&o);
        assert!(text.contains("PASS fixture[Q]") && text.ends_with("result: PASS\n"));
    }
}

#[test]
fn perturbed_fixture_fails_with_named_check() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("value-k3-n2", tmp.path());
    let q = tmp.path().join("Q.csv");
    let text = fs::read_to_string(&q).unwrap().replacen("5/6", "4/5", 1);
    fs::write(&q, text).unwrap();
    let o = run(&["verify", "--model", "value", "--k", "3", "--n", "2", "--fixture", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fixture[Q]") && err.contains("4/5"), "{err}");
}

/// Every single-entry change of every golden file is caught.
#[test]
fn every_single_entry_perturbation_fails() {
    let spec = parse_spec("coord", 2, 3).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    for file in ["A", "B", "Q", "K", "piQ", "piK"] {
        let path = tmp.path().join(format!("{file}.csv"));
        let original = fs::read_to_string(fixture("coord-k2-n3").join(format!("{file}.csv"))).unwrap();
        let lines: Vec<&str> = original.lines().collect();
        for (r, line) in lines.iter().enumerate().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            for c in 1..cells.len() {
                let mut changed = cells.clone();
                let bumped = if cells[c] == "1/16" { "1/17" } else { "1/16" };
                changed[c] = bumped;
                let mut out = lines.clone();
                let joined = changed.join(",");
                out[r] = &joined;
                fs::write(&path, out.join("\n") + "\n").unwrap();
                let opts = VerifyOptions { t_max: 4, fixture: Some(tmp.path().to_path_buf()), ..Default::default() };
                let report = cmd_verify(&spec, &opts).unwrap();
                let failure = report.first_failure().expect("perturbation detected");
                assert_eq!(failure.name, format!("fixture[{file}]"));
            }
        }
        fs::remove_file(&path).unwrap();
    }
}

#[test]
fn counterexample_reported() {
    let o = run(&["verify", "--model", "coord", "--k", "2", "--n", "4", "--expect-lump-failure", "cycle-count"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("c=2 -> c=2: (1 2)(3 4) 17/48, (1 2 3) 19/48"), "{text}");
    let o = run(&["verify", "--model", "coord", "--k", "2", "--n", "3", "--expect-lump-failure", "cycle-count"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lump_cycle_count_fails"));
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["build", "--model", "nope", "--k", "2", "--n", "2"],
        vec!["build", "--model", "value", "--k", "2"],
        vec!["build", "--model", "value", "--k", "2", "--n", "17"],
        vec!["mix", "--model", "value", "--k", "3", "--n", "2", "--eps", "2"],
        vec!["sample", "--model", "value", "--k", "3", "--n", "2", "--start", "(1 2 3)"],
        vec!["sample", "--model", "coord", "--k", "2", "--n", "3", "--chain", "primal", "--start", "0121"],
        vec!["verify", "--model", "value", "--k", "0", "--n", "2"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn cap_override() {
    let o = bin().args(["build", "--model", "value", "--k", "3", "--n", "2"]).env("BURNSIDE_MAX_STATES", "8").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("BURNSIDE_MAX_STATES"));
    let o = bin().args(["build", "--model", "coord", "--k", "2", "--n", "17"]).env("BURNSIDE_MAX_STATES", "100").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trivial_chain_build() {
    let o = run(&["build", "--model", "value", "--k", "2", "--n", "5"]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["Q"]["entries"], serde_json::json!([["1/1"]]));
    assert_eq!(v["piQ"]["masses"], serde_json::json!(["1/1"]));
    assert_eq!(v["state_labels"].as_array().unwrap().len(), 32);
}

#[test]
fn build_json_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["build", "--model", "coord", "--k", "2", "--n", "3", "--format", "json", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("bundle.json")).unwrap()).unwrap();
    assert_eq!(v["K"]["entries"][0][0], "5/16");
    assert_eq!(v["M"]["rows"].as_array().unwrap().len(), 14);
}

#[test]
fn mix_reports() {
    let o = run(&["mix", "--model", "coord", "--k", "2", "--n", "3", "--tmax", "0", "--format", "csv"]);
    let text = stdout(&o);
    assert!(text.lines().skip(1).all(|l| l.starts_with("0,")), "{text}");
    assert!(text.lines().count() > 2);

    let o = run(&["mix", "--model", "value", "--k", "4", "--n", "3", "--format", "csv"]);
    let rows: Vec<String> = stdout(&o).lines().filter(|l| l.contains(",paguyo_K,")).map(String::from).collect();
    assert_eq!(rows.len(), 61);
    assert!(rows.iter().all(|r| r.ends_with(",true")));

    let o = run(&["mix", "--model", "coord", "--k", "2", "--n", "3", "--eps", "1/4"]);
    let v = json(&o);
    let m = &v["mixing"][0];
    assert_eq!(m["eps"], "1/4");
    assert_eq!(m["within_one_step"], true);
    let (tk, tq) = (m["t_mix_K"].as_i64().unwrap(), m["t_mix_Q"].as_i64().unwrap());
    assert!((tk - tq).abs() <= 1);
    assert_eq!(v["all_verified"], true);
}

#[test]
fn reports_are_byte_identical() {
    for args in [
        vec!["verify", "--model", "value", "--k", "3", "--n", "3", "--format", "json"],
        vec!["mix", "--model", "coord", "--k", "2", "--n", "4", "--format", "csv"],
        vec!["sample", "--model", "coord", "--k", "2", "--n", "6", "--steps", "100000", "--seed", "42"],
        vec!["spectrum", "--model", "coord", "--k", "3", "--n", "3"],
    ] {
        let a = run(&args);
        let b = run(&args);
        assert!(a.status.success(), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn sample_runs() {
    let base = ["sample", "--model", "coord", "--k", "2", "--n", "6", "--steps", "20000"];
    let a = json(&run(&[&base[..], &["--seed", "1"]].concat()));
    let b = json(&run(&[&base[..], &["--seed", "2"]].concat()));
    assert_ne!(a["counts"], b["counts"]);
    assert_eq!(a["total_visits"], 20001);

    let v = json(&run(&["sample", "--model", "value", "--k", "3", "--n", "2", "--steps", "0", "--start", "(1 2)"]));
    assert_eq!(v["total_visits"], 1);
    assert_eq!(v["counts"], serde_json::json!([{"count": 1, "state": "(1 2)"}]));

    let v = json(&run(&["sample", "--model", "value", "--k", "5", "--n", "4", "--chain", "primal", "--start", "1111", "--steps", "5000"]));
    assert_eq!(v["start"], "1111");
    assert_eq!(v["chain"], "primal");

    let tmp = tempfile::tempdir().unwrap();
    let traj = tmp.path().join("t.txt.gz");
    let o = run(&["sample", "--model", "coord", "--k", "2", "--n", "3", "--steps", "9", "--thin", "3", "--trajectory", traj.to_str().unwrap()]);
    assert!(o.status.success());
    let mut text = String::new();
    flate2::read::GzDecoder::new(fs::File::open(&traj).unwrap()).read_to_string(&mut text).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>().len(), 4);
    assert_eq!(text.lines().next(), Some("e"));
}

#[test]
fn orbit_estimate_in_summary() {
    let v = json(&run(&["sample", "--model", "coord", "--k", "3", "--n", "4", "--steps", "10", "--orbit-samples", "20000"]));
    assert_eq!(v["orbit_estimate"]["exact"], "15");
    let mean: f64 = v["orbit_estimate"]["mean"].as_str().unwrap().parse().unwrap();
    let se: f64 = v["orbit_estimate"]["std_error"].as_str().unwrap().parse().unwrap();
    assert!((mean - 15.0).abs() <= 4.0 * se);
}

#[test]
fn spectrum_and_closedform() {
    let v = json(&run(&["spectrum", "--model", "value", "--k", "3", "--n", "2"]));
    assert_eq!(v["nonzero_spectra_equal"], true);
    assert_eq!(v["Q"]["exact_gap"], "1/2");
    assert!(v["K"]["charpoly"].as_str().unwrap().starts_with("x^9"));
    let o = run(&["spectrum", "--model", "coord", "--k", "2", "--n", "3", "--format", "csv"]);
    assert!(stdout(&o).contains("Q,1/4,3,true"));

    let v = json(&run(&["closedform", "--model", "value", "--k", "5", "--n", "4"]));
    assert_eq!(v["orbit_count"]["closed_form"], "15");
    assert_eq!(v["orbit_count"]["burnside"], "15");
    assert_eq!(v["matches_definition"], true);
    let v = json(&run(&["closedform", "--model", "value", "--k", "3", "--n", "2"]));
    assert_eq!(v["Qbar"], serde_json::json!([["1/2", "1/2"], ["1/6", "5/6"]]));
    let v = json(&run(&["closedform", "--model", "coord", "--k", "2", "--n", "3"]));
    assert_eq!(v["t_cycles"][1]["Q(e,t-cycle)"], "1/24");
}

#[test]
fn epsilon_parsing() {
    assert_eq!(parse_epsilon("0.25").unwrap(), parse_epsilon("1/4").unwrap());
    assert!(parse_epsilon("0").is_err());
    assert!(parse_epsilon("1").is_err());
    assert!(parse_epsilon("x").is_err());
}
