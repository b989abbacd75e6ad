use std::path::{Path, PathBuf};
use std::process::Command;

use isingrisk::exact::exact_moments;
use isingrisk::model::{Couplings, IsingParameters};
use isingrisk_cli::formats::{
    read_moments, read_params, read_report, read_rho_model, read_summary, write_json, MomentsFile, ParamsFile,
};

struct Run {
    code: i32,
    stderr: String,
}

fn isingrisk(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_isingrisk")).args(args).output().unwrap();
    Run { code: out.status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

fn ok(args: &[&str]) {
    let r = isingrisk(args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
}

fn file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

#[test]
fn stats_on_two_samples() {
    let dir = tempfile::tempdir().unwrap();
    let obs = file(dir.path(), "obs.csv", "a,b,c\n1,0,1\n1,1,0\n");
    let out = dir.path().join("m.json");
    ok(&["stats", "--observations", s(&obs), "--out", s(&out)]);
    let (ids, m) = read_moments(&out).unwrap();
    assert_eq!(ids, vec!["a", "b", "c"]);
    assert_eq!(m.m1(), &[1.0, 0.0, 0.0]);
    assert_eq!(m.m2()[(0, 1)], 0.0);
    assert_eq!(m.m2()[(1, 2)], -1.0);
    assert!(out.with_file_name("m.json.meta.json").exists());
}

#[test]
fn stats_rejects_empty_observations() {
    let dir = tempfile::tempdir().unwrap();
    let obs = file(dir.path(), "obs.csv", "a,b\n");
    let r = isingrisk(&["stats", "--observations", s(&obs), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("no samples"), "{}", r.stderr);
}

#[test]
fn stats_reports_bad_cell_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let obs = file(dir.path(), "obs.csv", "a,b\n1,0\n1,x\n");
    let r = isingrisk(&["stats", "--observations", s(&obs), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("obs.csv:3"), "{}", r.stderr);
}

#[test]
fn stats_fits_rho_on_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let n = 60;
    let mut portfolio = String::from("id,lat,lon\n");
    let mut header = Vec::new();
    let mut row = Vec::new();
    for i in 0..n {
        portfolio.push_str(&format!("c{i},36.2,{}\n", 36.1 + 0.0002 * i as f64));
        header.push(format!("c{i}"));
        // Blocks of failures make near pairs agree more often than far ones.
        row.push(if (i / 6) % 2 == 0 { "1" } else { "0" });
    }
    let p = file(dir.path(), "p.csv", &portfolio);
    let obs = file(dir.path(), "o.csv", &format!("{}\n{}\n", header.join(","), row.join(",")));
    let out = dir.path().join("m.json");
    let rho = dir.path().join("rho.json");
    ok(&[
        "stats",
        "--observations",
        s(&obs),
        "--out",
        s(&out),
        "--portfolio",
        s(&p),
        "--fit-rho",
        "--rho-out",
        s(&rho),
        "--bin-width",
        "0.02",
        "--min-pairs",
        "5",
    ]);
    let model = read_rho_model(&rho).unwrap();
    assert!(model.a > 0.0 && model.a.is_finite());
    assert!(!model.bins.is_empty());
    assert_eq!(model.unit, "km");
}

#[test]
fn targets_from_identity_and_infeasible_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let pf = file(dir.path(), "pf.csv", "id,pf\na,0.2\nb,0.7\n");
    let eye = file(dir.path(), "rho.csv", "1,0\n0,1\n");
    let out = dir.path().join("t.json");
    ok(&["targets", "--pf", s(&pf), "--rho-matrix", s(&eye), "--out", s(&out)]);
    let (_, m) = read_moments(&out).unwrap();
    assert!((m.m2()[(0, 1)] - m.m1()[0] * m.m1()[1]).abs() < 1e-15);

    let pf = file(dir.path(), "pf2.csv", "a,0.01\nb,0.99\n");
    let bad = file(dir.path(), "bad.csv", "1,0.999\n0.999,1\n");
    let r = isingrisk(&["targets", "--pf", s(&pf), "--rho-matrix", s(&bad), "--out", s(&out)]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("a / b"), "{}", r.stderr);
}

#[test]
fn targets_from_distance_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut pf = String::new();
    let mut portfolio = String::new();
    for i in 0..6 {
        pf.push_str(&format!("c{i},0.5\n"));
        portfolio.push_str(&format!("c{i},36.2,{}\n", 36.1 + 0.0003 * i as f64));
    }
    let pf = file(dir.path(), "pf.csv", &pf);
    let portfolio = file(dir.path(), "p.csv", &portfolio);
    let model = file(dir.path(), "rho.json", r#"{"format_version":1,"kind":"rho_model","a":94.9073,"unit":"km"}"#);
    let out = dir.path().join("t.json");
    ok(&["targets", "--pf", s(&pf), "--rho-model", s(&model), "--portfolio", s(&portfolio), "--out", s(&out)]);
    let (_, m) = read_moments(&out).unwrap();
    assert!(m.m2()[(0, 1)] > m.m2()[(0, 5)] && m.m2()[(0, 5)] > 0.0);
}

fn oracle_params(n: usize) -> IsingParameters {
    let h = (0..n).map(|i| 0.3 * ((i as f64) * 1.3).sin()).collect();
    let j = Couplings::from_fn(n, |i, k| 0.25 * ((i * 7 + k * 3) as f64).cos());
    IsingParameters::new(h, j).unwrap()
}

#[test]
fn exact_fit_recovers_oracle_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let truth = oracle_params(8);
    let m = dir.path().join("m.json");
    write_json(&m, &MomentsFile::new(&ids(8), &exact_moments(&truth).unwrap())).unwrap();
    let out = dir.path().join("p.json");
    ok(&["fit", "--moments", s(&m), "--out", s(&out), "--lr", "0.5", "--tol", "1e-7", "--max-iters", "50000"]);
    let (_, p) = read_params(&out).unwrap();
    for (a, b) in p.h().iter().zip(truth.h()) {
        assert!((a - b).abs() < 1e-3);
    }
    for (a, b) in p.couplings().upper().iter().zip(truth.couplings().upper()) {
        assert!((a - b).abs() < 1e-3);
    }
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json.diag.json")).unwrap()).unwrap();
    assert_eq!(diag["converged"], true);
    assert_eq!(diag["kind"], "fit_diagnostics");
}

#[test]
fn zero_information_targets_give_zero_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    write_json(&m, &MomentsFile::new(&ids(3), &exact_moments(&IsingParameters::zeros(3)).unwrap())).unwrap();
    let out = dir.path().join("p.json");
    ok(&["fit", "--moments", s(&m), "--out", s(&out)]);
    let (_, p) = read_params(&out).unwrap();
    assert_eq!(p, IsingParameters::zeros(3));
}

#[test]
fn non_convergence_exits_three_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    write_json(&m, &MomentsFile::new(&ids(6), &exact_moments(&oracle_params(6)).unwrap())).unwrap();
    let out = dir.path().join("p.json");
    let diag = dir.path().join("d.json");
    let r = isingrisk(&["fit", "--moments", s(&m), "--out", s(&out), "--diagnostics", s(&diag), "--max-iters", "2"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(out.exists() && diag.exists());
}

#[test]
fn stochastic_commands_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    write_json(&p, &ParamsFile::new(&ids(3), &oracle_params(3))).unwrap();
    let r = isingrisk(&["sample", "--params", s(&p), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--seed"));
    let m = dir.path().join("m.json");
    write_json(&m, &MomentsFile::new(&ids(3), &exact_moments(&oracle_params(3)).unwrap())).unwrap();
    let r = isingrisk(&["fit", "--moments", s(&m), "--out", s(&dir.path().join("q.json")), "--estimator", "gibbs"]);
    assert_eq!(r.code, 2);
}

#[test]
fn sampling_is_reproducible_and_summaries_are_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let truth = oracle_params(6);
    let p = dir.path().join("p.json");
    write_json(&p, &ParamsFile::new(&ids(6), &truth)).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&["sample", "--params", s(&p), "--out", s(out), "--seed", "5", "--sweeps", "300"]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let sum = dir.path().join("s.json");
    ok(&["sample", "--params", s(&p), "--out", s(&sum), "--seed", "5", "--sweeps", "20000", "--summary-only"]);
    let f = read_summary(&sum).unwrap();
    assert!((f.count_hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let exact = exact_moments(&truth).unwrap();
    let se = f.m1_se.unwrap();
    for i in 0..6 {
        assert!((f.m1[i] - exact.m1()[i]).abs() < 5.0 * se[i] + 1e-3, "component {i}");
    }
}

#[test]
fn meanfield_modes_follow_the_input_kind() {
    let dir = tempfile::tempdir().unwrap();
    let h = vec![0.3, -0.8, 1.1];
    let p = dir.path().join("p.json");
    write_json(&p, &ParamsFile::new(&ids(3), &IsingParameters::independent(h.clone()).unwrap())).unwrap();
    let out = dir.path().join("f.json");
    ok(&["meanfield", "--input", s(&p), "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for (i, hv) in h.iter().enumerate() {
        assert!((v["m"][i].as_f64().unwrap() - hv.tanh()).abs() < 1e-12);
    }

    let m = dir.path().join("m.json");
    write_json(
        &m,
        &MomentsFile::new(&ids(3), &exact_moments(&IsingParameters::independent(h.clone()).unwrap()).unwrap()),
    )
    .unwrap();
    let back = dir.path().join("q.json");
    ok(&["meanfield", "--input", s(&m), "--out", s(&back)]);
    let (_, q) = read_params(&back).unwrap();
    assert!(q.couplings().upper().iter().all(|v| v.abs() < 1e-10));
    for (a, b) in q.h().iter().zip(&h) {
        assert!((a - b).abs() < 1e-10);
    }

    let bad = file(dir.path(), "r.json", r#"{"format_version":1,"kind":"rho_model","a":1.0,"unit":"km"}"#);
    assert_eq!(isingrisk(&["meanfield", "--input", s(&bad), "--out", s(&out)]).code, 2);
}

#[test]
fn report_on_a_uniform_pair() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    write_json(&p, &ParamsFile::new(&ids(2), &IsingParameters::zeros(2))).unwrap();
    let samples = file(dir.path(), "s.csv", "c0,c1\n0,0\n0,1\n1,0\n1,1\n");
    let out = dir.path().join("r.json");
    let plots = dir.path().join("plots");
    ok(&["report", "--params", s(&p), "--samples", s(&samples), "--out", s(&out), "--emit-plot-data", s(&plots)]);
    let r = read_report(&out).unwrap();
    assert_eq!(r.per_component_pf, vec![0.5, 0.5]);
    assert_eq!(r.h_bar, 0.0);
    assert!(r.independence_gap.iter().all(|g| g.unwrap() < 1e-9));
    assert!(r.exceedance.windows(2).all(|w| w[0].probability >= w[1].probability));
    for name in ["failure_count.tsv", "pf_h.tsv", "independence_curve.tsv"] {
        assert!(plots.join(name).exists(), "{name}");
    }
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let truth = oracle_params(5);
    let p0 = dir.path().join("truth.json");
    write_json(&p0, &ParamsFile::new(&ids(5), &truth)).unwrap();
    let obs = dir.path().join("obs.csv");
    ok(&["sample", "--params", s(&p0), "--out", s(&obs), "--seed", "1", "--sweeps", "6000", "--chains", "4"]);
    let m = dir.path().join("m.json");
    ok(&["stats", "--observations", s(&obs), "--out", s(&m)]);
    let p = dir.path().join("p.json");
    ok(&["fit", "--moments", s(&m), "--out", s(&p), "--lr", "0.5", "--tol", "1e-6", "--max-iters", "50000"]);
    let summary = dir.path().join("s.json");
    ok(&["sample", "--params", s(&p), "--out", s(&summary), "--seed", "2", "--sweeps", "20000", "--summary-only"]);
    let report = dir.path().join("r.json");
    ok(&["report", "--params", s(&p), "--summary", s(&summary), "--out", s(&report), "--threshold", "3"]);
    let (_, target) = read_moments(&m).unwrap();
    let r = read_report(&report).unwrap();
    for (pf, m1) in r.per_component_pf.iter().zip(target.m1()) {
        assert!((pf - (m1 + 1.0) / 2.0).abs() < 0.02);
    }
    assert!(r.exceedance.iter().any(|e| e.k == 3));
}
