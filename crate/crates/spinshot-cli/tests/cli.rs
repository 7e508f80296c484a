use std::path::Path;
use std::process::{Command, Output};

fn spinshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinshot"))
        .args(args)
        .env_remove("SPINSHOT_DATA")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

#[test]
fn table2_is_deterministic_and_complete() {
    let a = stdout(&spinshot(&["table2"]));
    let b = stdout(&spinshot(&["table2"]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 14);
    let broome = a.lines().find(|l| l.starts_with("broome_l,")).unwrap();
    let f_m: f64 = broome.split(',').nth(7).unwrap().parse().unwrap();
    assert!((f_m - 97.1).abs() < 0.3, "{broome}");
}

#[test]
fn table3_gains_nonnegative() {
    let out = stdout(&spinshot(&["table3"]));
    for line in out.lines().skip(1) {
        let gain = line.rsplit(',').next().unwrap();
        if gain != "NA" {
            assert!(gain.parse::<f64>().unwrap() >= 0.0, "{line}");
        }
    }
}

#[test]
fn evaluate_reports_error_bar() {
    let v = json(&spinshot(&["evaluate", "--experiment", "broome_l"]));
    let fm = v["report"]["f_m"].as_f64().unwrap();
    assert!((fm - 0.971).abs() < 0.003);
    assert!(v["report"]["error_fm"].as_f64().unwrap() > 0.0);
}

#[test]
fn sequence_best_order() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("q.csv");
    std::fs::write(&f, "name,measure_time,t1_relax\nQ1,3,5\nQ2,1,2\nQ3,2,10\n").unwrap();
    let out = stdout(&spinshot(&["sequence", "--file", f.to_str().unwrap()]));
    assert!(out.contains("Q2 Q1 Q3") || out.contains("Q2;Q1;Q3") || out.contains("Q2,Q1,Q3"), "{out}");
    assert!(out.contains("0.829684"), "{out}");
}

#[test]
fn perfect_detector_reaches_unit_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("e.txt");
    // Huge level separation, fast sampling and t_out0 far beyond t_out1.
    std::fs::write(
        &f,
        "[perfect]\nmu0 = 0\nmu1 = 1e6\nnoise_psd = 1e-3\nfilter_cutoff = 1e8\nsample_rate = 2e8\n\
         t_in0 = 1e-3\nt_out0 = 1e12\nt_out1 = 1e-3\nt1_relax = 1e12\n",
    )
    .unwrap();
    let v = json(&spinshot(&["--data", f.to_str().unwrap(), "evaluate", "--experiment", "perfect"]));
    assert!(v["report"]["f_m"].as_f64().unwrap() > 0.9999, "{v}");
}

#[test]
fn exit_codes() {
    assert_eq!(spinshot(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(spinshot(&["evaluate", "--experiment", "nobody"]).status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.txt");
    std::fs::write(&f, "[x]\nmu0 = zero\n").unwrap();
    let o = spinshot(&["--data", f.to_str().unwrap(), "table2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2:"));
    std::fs::write(&f, "[x]\nmu0 = 0\nmu1 = -1\n").unwrap();
    assert_eq!(spinshot(&["--data", f.to_str().unwrap(), "table2"]).status.code(), Some(3));
}

#[test]
fn simulate_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");
    let v = json(&spinshot(&[
        "simulate",
        "--experiment",
        "watson_dm",
        "--n",
        "2000",
        "--dump",
        prefix.to_str().unwrap(),
        "--dump-traces",
        "5",
    ]));
    assert_eq!(v["comparison"]["n_traces"], 2000);
    for tag in ["state0", "state1"] {
        let car = std::fs::read_to_string(prefix.with_extension(format!("{tag}.json"))).unwrap();
        let car = spinshot_cli::sidecar::parse_sidecar(&car).unwrap();
        let bytes = std::fs::read(prefix.with_extension(format!("{tag}.bin"))).unwrap();
        let traces = spinshot::montecarlo::read_raw(&bytes, car.samples_per_trace).unwrap();
        assert_eq!(traces.len(), 5);
    }
}

#[test]
fn bundled_fixture_matches_data_dir() {
    let on_disk = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/experiments.txt")).unwrap();
    assert_eq!(on_disk, spinshot_cli::app::BUNDLED_EXPERIMENTS);
}
