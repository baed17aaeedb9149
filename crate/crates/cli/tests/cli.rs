use std::path::Path;
use std::process::{Command, Output};

use gaitcont::archive::FamilyArchive;
use gaitcont::homotopy::HomotopyStatus;

fn gaitcont(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitcont"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gaitcont(&["--help"], dir.path())), 0);
    assert_eq!(code(&gaitcont(&["scan", "--bogus"], dir.path())), 1);
    assert_eq!(
        code(&gaitcont(&["scan", "--interval", "1,0.5"], dir.path())),
        1
    );
    assert_eq!(
        code(&gaitcont(
            &["audit", "--archive", "missing.json"],
            dir.path()
        )),
        1
    );
}

#[test]
fn scan_reports_both_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = gaitcont(&["scan", "--out", "scan.json"], dir.path());
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("classification: crossings"));
    assert!(text.contains("seed 0: tau = 0.62"));
    assert!(text.contains("seed 1: tau = 0.68"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scan.json")).unwrap())
            .unwrap();
    assert_eq!(json["status"], "crossings");
    assert_eq!(json["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn rootless_window_exits_two_with_remediation() {
    let dir = tempfile::tempdir().unwrap();
    let o = gaitcont(
        &["scan", "--interval", "0.1,0.5", "--steps", "20"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let text = stdout(&o);
    assert!(text.contains("classification: no-crossing"));
    assert!(text.contains("remediation: "));
    let o = gaitcont(
        &[
            "trace",
            "--interval",
            "0.1,0.5",
            "--steps",
            "20",
            "--out",
            "empty.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let archive = FamilyArchive::load(&dir.path().join("empty.json")).unwrap();
    assert_eq!(archive.gait_count(), 0);
}

#[test]
fn bad_model_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("unknown.toml", "model = \"compass\"\nspeed = 3\n"),
        ("kind.toml", "model = \"hexapod\"\n"),
        ("params.toml", "model = \"compass\"\n[params]\nm = -1.0\n"),
        ("section.toml", "model = \"compass\"\n[vhc]\ndegree = 5\n"),
    ] {
        std::fs::write(dir.path().join(name), text).unwrap();
        let o = gaitcont(&["scan", "--model", name], dir.path());
        assert_eq!(
            code(&o),
            1,
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn trace_export_audit_and_queries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let trace = ["trace", "--seed-index", "1", "--count", "181", "--out"];
    let o = gaitcont(&[&trace[..], &["fam.json"]].concat(), d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let archive = FamilyArchive::load(&d.join("fam.json")).unwrap();
    assert_eq!(archive.branches.len(), 2);
    assert_eq!(archive.gait_count(), 362);

    // Reruns are byte-identical.
    assert_eq!(
        code(&gaitcont(&[&trace[..], &["again.json"]].concat(), d)),
        0
    );
    assert_eq!(
        std::fs::read(d.join("fam.json")).unwrap(),
        std::fs::read(d.join("again.json")).unwrap()
    );

    let o = gaitcont(&["audit", "--archive", "fam.json"], d);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("gaits checked: 362"));

    assert_eq!(
        code(&gaitcont(
            &[
                "export",
                "--archive",
                "fam.json",
                "--format",
                "csv",
                "--out",
                "fam.csv"
            ],
            d
        )),
        0
    );
    let csv = std::fs::read_to_string(d.join("fam.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 362);
    assert!(csv.starts_with("branch,seed,level,direction,index,tau,q0,q1,qdot0,qdot1,residual,"));

    assert_eq!(
        code(&gaitcont(
            &[
                "export",
                "--archive",
                "fam.json",
                "--format",
                "svg",
                "--out",
                "fam.svg"
            ],
            d
        )),
        0
    );
    let svg = std::fs::read_to_string(d.join("fam.svg")).unwrap();
    let taus: Vec<f64> = svg
        .split(r#"class="crossing" data-tau=""#)
        .skip(1)
        .map(|s| s.split('"').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(taus.len(), 2);
    assert!(
        (taus[0] - 0.62).abs() < 0.01 && (taus[1] - 0.68).abs() < 0.01,
        "{taus:?}"
    );
    assert_eq!(svg.matches(r#"class="branch""#).count(), 2);

    let o = gaitcont(
        &[
            "export",
            "--archive",
            "fam.json",
            "--format",
            "frames",
            "--gait",
            "0:50",
            "--out",
            "frames.json",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    let frames: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("frames.json")).unwrap()).unwrap();
    assert_eq!(frames["gaits"].as_array().unwrap().len(), 1);
    assert_eq!(frames["gaits"][0]["index"], 50);

    // Tampering with a stored gait makes the audit fail.
    let mut bad = archive.clone();
    bad.branches[0].gaits[10].x0[2] += 1e-3;
    bad.save(&d.join("bad.json")).unwrap();
    let o = gaitcont(&["audit", "--archive", "bad.json"], d);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAILED branch 0 gait 10"));

    // Level ground with the hip actuator, starting from a passive gait.
    std::fs::write(d.join("act.toml"), "model = \"compass_actuated\"\n").unwrap();
    std::fs::write(
        d.join("flat.toml"),
        "[[constraint]]\nquantity = \"slope\"\nkind = \"equality\"\ntarget = 0.0\n",
    )
    .unwrap();
    let o = gaitcont(
        &[
            "query",
            "--model",
            "act.toml",
            "--archive",
            "fam.json",
            "--query",
            "flat.toml",
            "--index",
            "180",
            "--out",
            "flat.json",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let solved = FamilyArchive::load(&d.join("flat.json")).unwrap();
    let q = &solved.queries[0];
    assert_eq!(q.status, HomotopyStatus::Converged);
    assert_eq!(q.reference, (0, 180));
    let last = q.iterates.last().unwrap();
    assert!(last.p.abs() < 1e-8 && last.residual < 1e-8);
    assert!(
        ((last.mu[0].abs() - 5.34) / 5.34).abs() < 0.1,
        "mu0 = {}",
        last.mu[0]
    );

    // A slope beyond every traced gait: the query stops without reaching it.
    std::fs::write(
        d.join("far.toml"),
        "[[constraint]]\nquantity = \"slope\"\nkind = \"equality\"\ntarget = 3.0\n[options]\nmax_iterations = 3\n",
    )
    .unwrap();
    let o = gaitcont(
        &[
            "query",
            "--archive",
            "fam.json",
            "--query",
            "far.toml",
            "--index",
            "180",
            "--out",
            "far.json",
        ],
        d,
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("query failed"));
    let failed = FamilyArchive::load(&d.join("far.json")).unwrap();
    assert_eq!(failed.queries[0].status, HomotopyStatus::IterationLimit);
    assert!(failed.queries[0].iterates.last().unwrap().p.abs() > 0.5);
}
