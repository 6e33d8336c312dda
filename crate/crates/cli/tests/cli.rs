use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydrovalley")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hv(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dam(id: i64, parent: Option<i64>) -> Value {
    json!({ "id": id, "x_min": 0, "x_max": 4, "u_min": 0, "u_max": 2, "x_target": 2,
            "penalty_a": 2, "epsilon": 0.05, "control_levels": [0, 1, 2], "x0": 2, "parent": parent })
}

/// Chain 1 -> 2 -> 3 -> 4 over three stages.
fn four_dam_chain() -> Value {
    let stage = |price: f64| {
        json!({ "atoms": [
            { "p": 0.5, "inflows": [1, 0, 1, 0], "prices": [price, price, price, price] },
            { "p": 0.5, "inflows": [2, 1, 0, 0], "prices": [price, price, price, price + 1.0] } ] })
    };
    json!({ "horizon": 3, "dams": [dam(1, Some(2)), dam(2, Some(3)), dam(3, Some(4)), dam(4, None)],
            "noise": [stage(5.0), stage(7.0), stage(6.0)] })
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn help_lists_the_subcommands() {
    let text = ok(&["--help"]);
    for cmd in ["generate", "solve", "simulate", "compare", "bench"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert!(!text.contains("bench-run"));
    assert!(ok(&["solve", "--help"]).contains("sddpd"));
}

#[test]
fn probabilities_off_by_a_tenth_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = four_dam_chain();
    v["noise"][1]["atoms"][0]["p"] = json!(0.4);
    let valley = write(dir.path(), "bad.json", &v);
    let out = hv(&["solve", "dp", "--valley", &valley, "--out", s(&dir.path().join("vf.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!dir.path().join("vf.json").exists());
}

#[test]
fn malformed_json_reports_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.json");
    fs::write(&p, "{ \"horizon\": 1,\n  \"dams\": [{ \"id\": \"one\" }] }").unwrap();
    let out = hv(&["solve", "dp", "--valley", s(&p), "--out", s(&dir.path().join("vf.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("dams[0].id"), "{err}");
}

#[test]
fn unknown_parent_and_duplicate_ids_are_both_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = four_dam_chain();
    v["dams"][0]["parent"] = json!(9);
    v["dams"][2]["id"] = json!(2);
    let valley = write(dir.path(), "v.json", &v);
    let out = hv(&["solve", "dp", "--valley", &valley, "--out", s(&dir.path().join("vf.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('9') && err.contains("duplicate"), "{err}");
}

#[test]
fn work_budget_exit_code_is_3() {
    let dir = tempfile::tempdir().unwrap();
    let valley = write(dir.path(), "v.json", &four_dam_chain());
    let out = hv(&["solve", "dp", "--valley", &valley, "--work-budget", "1000", "--out", s(&dir.path().join("vf.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn four_dam_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let valley = write(d, "v.json", &four_dam_chain());
    ok(&["solve", "dp", "--valley", &valley, "--knot-step", "1", "--out", s(&d.join("dp.json"))]);
    ok(&["solve", "dadp", "--valley", &valley, "--knot-step", "1", "--out", s(&d.join("dadp"))]);
    ok(&["solve", "sddpd", "--valley", &valley, "--knot-step", "1", "--iters", "4", "--out", s(&d.join("sddp.json"))]);
    for f in ["value.json", "iterations.csv", "multipliers.csv", "summary.csv", "timing.csv"] {
        assert!(d.join("dadp").join(f).exists(), "{f}");
    }
    // one multiplier per link and stage
    assert_eq!(csv_rows(&d.join("dadp/multipliers.csv")).len(), 3 * 3);

    let mut reports = Vec::new();
    for (vf, name) in [("dp.json", "dp"), ("dadp", "dadp"), ("sddp.json", "sddp")] {
        let r = d.join(format!("{name}.csv"));
        ok(&["simulate", "--valley", &valley, "--vf", s(&d.join(vf)), "--n", "4000", "--seed", "1", "--out", s(&r)]);
        assert!(d.join(format!("{name}.quantiles.csv")).exists());
        assert!(d.join(format!("{name}.histogram.csv")).exists());
        reports.push(r);
    }
    let row = |p: &Path| {
        let mut r = csv::Reader::from_path(p).unwrap();
        let h = r.headers().unwrap().clone();
        let rec = r.records().next().unwrap().unwrap();
        move |col: &str| rec[h.iter().position(|c| c == col).unwrap()].to_string()
    };
    let dp = row(&reports[0]);
    let dadp = row(&reports[1]);
    let bound: f64 = dadp("upper_bound_on_payoff").parse().unwrap();
    assert_eq!(dp("upper_bound_on_payoff"), "");
    let dp_file: Value = serde_json::from_str(&fs::read_to_string(d.join("dp.json")).unwrap()).unwrap();
    let dp_opt = dp_file["optimal_payoff"].as_f64().unwrap();
    let dp_mean: f64 = dp("achieved_payoff_mean").parse().unwrap();
    let dp_se: f64 = dp("achieved_payoff_std_error").parse().unwrap();
    assert!(bound >= dp_opt - 1e-6);
    assert!((dp_mean - dp_opt).abs() <= 4.0 * dp_se + 1e-9);
    for r in [&dp, &dadp] {
        assert_eq!(r("violations"), "0");
    }

    let md = ok(&["--format", "md", "compare", "--reports", s(&reports[0]), s(&reports[1]), s(&reports[2])]);
    assert!(md.lines().next().unwrap().starts_with("| method"));
    assert_eq!(md.lines().count(), 5);
}

fn report(dir: &Path, name: &str, payoff: f64, bound: &str) -> String {
    let p = dir.join(name);
    fs::write(
        &p,
        format!(
            "method,source,n_scenarios,seed,achieved_payoff_mean,achieved_payoff_std_error,upper_bound_on_payoff,violations,fallback_steps\n\
             {name},x,10,0,{payoff},1,{bound},0,0\n"
        ),
    )
    .unwrap();
    s(&p).to_string()
}

#[test]
fn compare_prints_relative_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let a = report(dir.path(), "ref", 100.0, "101");
    let b = report(dir.path(), "other", 98.0, "");
    let out = dir.path().join("cmp.csv");
    ok(&["compare", "--reports", &a, &b, "--out", s(&out)]);
    let rows = csv_rows(&out);
    assert_eq!(&rows[0][4], "0.0%");
    assert_eq!(&rows[1][4], "-2.0%");
    assert_eq!(&rows[1][2], "N.A.");
    assert_eq!(&rows[1][3], "N.A.");

    let zero = report(dir.path(), "zero", 0.0, "");
    ok(&["compare", "--reports", &zero, &b, "--out", s(&out)]);
    assert_eq!(&csv_rows(&out)[1][4], "N.A.");

    let bad = hv(&["compare", "--reports", &a, "--reference", "3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn marginal_stages_need_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = four_dam_chain();
    let m = |lo: f64, hi: f64| json!([{ "p": 0.5, "inflow": lo, "price": 6 }, { "p": 0.5, "inflow": hi, "price": 6 }]);
    v["noise"][1] = json!({ "marginals": [m(0.0, 1.0), m(0.0, 2.0), m(1.0, 1.0), m(0.0, 1.0)] });
    let valley = write(dir.path(), "m.json", &v);
    let vf = dir.path().join("vf.json");
    let out = hv(&["solve", "dp", "--valley", &valley, "--out", s(&vf)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--expand-marginals"));

    let capped = hv(&["solve", "dp", "--valley", &valley, "--expand-marginals", "--product-cap", "8", "--out", s(&vf)]);
    assert_eq!(capped.status.code(), Some(2));

    ok(&["solve", "dp", "--valley", &valley, "--expand-marginals", "--knot-step", "1", "--out", s(&vf)]);

    // the same product written out as joint atoms
    let mut atoms = Vec::new();
    for mask in 0..16u32 {
        let bit = |i: u32| (mask >> i) & 1 == 1;
        let pick = |i: u32, lo: f64, hi: f64| if bit(i) { hi } else { lo };
        atoms.push(json!({ "p": 1.0 / 16.0,
            "inflows": [pick(0, 0.0, 1.0), pick(1, 0.0, 2.0), 1.0, pick(3, 0.0, 1.0)],
            "prices": [6, 6, 6, 6] }));
    }
    v["noise"][1] = json!({ "atoms": atoms });
    let joint = write(dir.path(), "j.json", &v);
    let vf2 = dir.path().join("vf2.json");
    ok(&["solve", "dp", "--valley", &joint, "--knot-step", "1", "--out", s(&vf2)]);
    let payoff = |p: &Path| -> f64 {
        let v: Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["optimal_payoff"].as_f64().unwrap()
    };
    assert!((payoff(&vf) - payoff(&vf2)).abs() < 1e-9);
}

#[test]
fn generate_round_trips_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["generate", "--shape", "tree", "--dams", "5", "--seed", "3", "--out", s(&a)]);
    ok(&["generate", "--shape", "tree", "--dams", "5", "--seed", "3", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let v: Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(v["dams"].as_array().unwrap().len(), 5);
    assert_eq!(v["dams"].as_array().unwrap().iter().filter(|d| d["parent"].is_null()).count(), 1);
    ok(&["solve", "dadp", "--valley", s(&a), "--knot-step", "1", "--iters", "5", "--out", s(&dir.path().join("o"))]);
}
