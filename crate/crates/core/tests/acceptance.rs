//! Acceptance gate: one PASS/FAIL line per criterion on the reference
//! configuration. Run with `cargo test -p twohab-core --test acceptance -- --nocapture`.

use twohab_core::suites::{self, RunConfig, Suite, CRITERIA};

#[test]
fn acceptance_criteria() {
    let cfg = RunConfig::reference();
    let dir = std::env::temp_dir().join(format!("twohab-acceptance-{}", std::process::id()));
    let report = suites::run(&cfg, &Suite::ALL, Some(&dir)).expect("suite run failed");

    println!("acceptance results:");
    let mut failed = Vec::new();
    for key in CRITERIA {
        let o = report
            .outcomes
            .iter()
            .find(|o| o.key == key)
            .unwrap_or_else(|| panic!("{key} missing from report"));
        println!("{}", o.line());
        if !o.pass {
            failed.push(key);
        }
        assert_eq!(report.summary[key]["pass"], o.pass);
    }
    for name in [
        "propositions",
        "operator",
        "resolvent",
        "sweep",
        "evolve",
        "oracle-compare",
    ] {
        assert!(dir.join(format!("{name}.csv")).exists(), "{name}.csv not written");
    }
    let _ = std::fs::remove_dir_all(&dir);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
