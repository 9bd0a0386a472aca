mod common;

use common::*;
use serde_json::{json, Map, Value};

fn mock(entries: Value) -> Map<String, Value> {
    entries.as_object().unwrap().clone()
}

#[test]
fn screen_three_rows() {
    let p = Project::new(&["IVM"]);
    p.write_dataset("IVM", &labelled_rows(3, 1));
    p.write_mock(mock(json!({ "IVM/0": "Included." })));
    let out = p.run(&["screen"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let results = p.read_out("IVM.csv");
    assert_eq!(column(&results, "decision"), ["included", "excluded", "excluded"]);
    assert_eq!(column(&results, "human_decision"), ["included", "excluded", "excluded"]);
    let report = p.json_out("run_report.json");
    assert_eq!(report["datasets"][0]["rows_screened"], 3);
    assert_eq!(p.read_out("run_log.jsonl").lines().count(), 3);
    assert!(stdout(&out).contains("IVM: 3 rows, 3 screened"));
}

#[test]
fn resume_dispatches_only_undecided_rows() {
    let p = Project::new(&["IVM"]);
    p.write_dataset("IVM", &labelled_rows(6, 2));
    assert_eq!(code(&p.run(&["screen", "--limit", "4"])), 0);
    assert_eq!(p.read_out("run_log.jsonl").lines().count(), 4);
    let partial = p.read_out("IVM.csv");
    assert_eq!(column(&partial, "decision").iter().filter(|d| d.is_empty()).count(), 2);

    let out = p.run(&["screen", "--resume"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = p.read_out("run_log.jsonl");
    let rows: Vec<u64> = log
        .lines()
        .skip(4)
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["row"].as_u64().unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|&r| r >= 4), "{rows:?}");
    assert_eq!(p.json_out("run_report.json")["datasets"][0]["rows_skipped_resume"], 4);
}

#[test]
fn resume_refuses_foreign_results() {
    let p = Project::new(&["IVM"]);
    p.write_dataset("IVM", &labelled_rows(4, 1));
    assert_eq!(code(&p.run(&["screen"])), 0);
    p.write_dataset("IVM", &labelled_rows(5, 1));
    let out = p.run(&["screen", "--resume"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("does not match"), "{}", stderr(&out));
}

#[test]
fn persistent_fault_exits_one() {
    let p = Project::new(&["IVM"]);
    p.write_dataset("IVM", &labelled_rows(3, 1));
    p.write_mock(mock(json!({ "failures": { "IVM/1": { "status": 503 } } })));
    let out = p.run(&["screen"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert_eq!(column(&p.read_out("IVM.csv"), "decision"), ["excluded", "error", "excluded"]);
    assert_eq!(p.json_out("run_report.json")["datasets"][0]["error_count"], 1);
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let mut p = Project::new(&["IVM"]);
    p.write_dataset("IVM", &labelled_rows(2, 1));
    p.config_extra = "checkpoint_every = 0".into();
    let out = p.run(&["screen"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("checkpoint_every"), "{}", stderr(&out));

    let p = Project::new(&["IVM"]);
    let out = p.run(&["screen", "--base-url", "http://127.0.0.1:9", "--mock-script", "mock.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("exactly one"), "{}", stderr(&out));

    let out = p.run(&["screen", "--manifest", "nope.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.csv"), "{}", stderr(&out));
}

#[test]
fn http_backend_without_key_exits_two() {
    let p = Project::new(&["IVM"]);
    p.write_dataset("IVM", &labelled_rows(2, 1));
    let out = p.run(&["screen", "--base-url", "http://127.0.0.1:9", "--api-key-env", "ABSIEVE_TEST_UNSET"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("ABSIEVE_TEST_UNSET"), "{}", stderr(&out));
}

fn screened_with_disagreements(disagree: &[usize]) -> Project {
    let p = Project::new(&["IVM"]);
    p.write_dataset("IVM", &labelled_rows(8, 3));
    // model says included exactly for rows 0..3, except the listed flips
    let mut m = Map::new();
    for i in 0..8 {
        let included = (i < 3) != disagree.contains(&i);
        if included {
            m.insert(format!("IVM/{i}"), json!("included"));
        }
        m.insert(format!("IVM/{i}/reflect"), json!(format!("Reflection on {i}.")));
        m.insert(format!("IVM/{i}/explain"), json!(format!("Explanation of {i}.")));
    }
    p.write_mock(m);
    assert_eq!(code(&p.run(&["screen"])), 0);
    p
}

#[test]
fn reflect_fills_both_disagreements() {
    let p = screened_with_disagreements(&[1, 6]);
    let out = p.run(&["reflect", "--dataset", "IVM", "--sample", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reflections = column(&p.read_out("IVM.csv"), "reflection");
    for (i, r) in reflections.iter().enumerate() {
        if i == 1 || i == 6 {
            assert_eq!(r, &format!("Reflection on {i}."));
        } else {
            assert!(r.is_empty(), "row {i}: {r}");
        }
    }
}

#[test]
fn reflect_without_disagreements_fails() {
    let p = screened_with_disagreements(&[]);
    let out = p.run(&["explain", "--mode", "reflect", "--dataset", "IVM", "--sample", "3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no rows eligible for reflect"), "{}", stderr(&out));
}

#[test]
fn explain_sampling_is_seeded() {
    let picked = |seed: &str| {
        let p = screened_with_disagreements(&[]);
        let out = p.run(&["explain", "--dataset", "IVM", "--sample", "3", "--seed", seed]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        column(&p.read_out("IVM.csv"), "explanation")
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_empty())
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    };
    let a = picked("7");
    assert_eq!(a.len(), 3);
    assert_eq!(a, picked("7"));
}

#[test]
fn explain_explicit_rows() {
    let p = screened_with_disagreements(&[]);
    let out = p.run(&["explain", "--dataset", "IVM", "--rows", "2,5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let explanations = column(&p.read_out("IVM.csv"), "explanation");
    assert_eq!(explanations[2], "Explanation of 2.");
    assert_eq!(explanations[5], "Explanation of 5.");
    assert_eq!(explanations.iter().filter(|e| !e.is_empty()).count(), 2);
    // decisions untouched
    assert_eq!(column(&p.read_out("IVM.csv"), "decision")[2], "included");
}

#[test]
fn evaluate_self_agreement() {
    let p = Project::new(&["A", "B"]);
    p.write_dataset("A", &labelled_rows(10, 4));
    p.write_dataset("B", &labelled_rows(5, 0));
    std::fs::create_dir(p.path("out")).unwrap();
    std::fs::copy(p.path("data/A.csv"), p.out("A.csv")).unwrap();
    std::fs::copy(p.path("data/B.csv"), p.out("B.csv")).unwrap();
    let out = p.run(&["evaluate", "--all", "--pred", "human_decision"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let m = p.json_out("metrics.json");
    assert_eq!(m["datasets"][0]["accuracy"], 1.0);
    assert_eq!(m["datasets"][0]["kappa"], 1.0);
    // one class only: kappa and included sensitivity are undefined
    assert_eq!(m["datasets"][1]["kappa"], Value::Null);
    assert_eq!(m["datasets"][1]["sensitivity_included"], Value::Null);
    let table = p.read_out("metrics.csv");
    assert!(table.contains("B,1.000,undefined,1.000,undefined"), "{table}");
    assert!(p.out("confusion_A.svg").is_file());
    assert_eq!(
        p.read_out("confusion_A.csv"),
        "truth\\predicted,included,excluded\nincluded,4,0\nexcluded,0,6\n"
    );
}

#[test]
fn evaluate_missing_column() {
    let p = Project::new(&["A"]);
    p.write_dataset("A", &labelled_rows(4, 1));
    std::fs::create_dir(p.path("out")).unwrap();
    std::fs::copy(p.path("data/A.csv"), p.out("A.csv")).unwrap();
    let out = p.run(&["evaluate", "--dataset", "A", "--pred", "second_reviewer"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing column `second_reviewer`"), "{}", stderr(&out));

    // the decision column exists but nothing has been screened
    let out = p.run(&["evaluate", "--dataset", "A"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no rows where both"), "{}", stderr(&out));
}

#[test]
fn evaluate_pooled_matrix() {
    let p = Project::new(&["A", "B"]);
    p.write_dataset("A", &labelled_rows(6, 2));
    p.write_dataset("B", &labelled_rows(4, 2));
    p.write_mock(mock(json!({ "A/0": "included", "B/0": "included", "B/3": "included" })));
    assert_eq!(code(&p.run(&["screen"])), 0);
    let out = p.run(&["evaluate", "--all", "--pooled"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = p.json_out("metrics.json");
    assert_eq!(m["pooled"]["confusion"], json!({ "tp": 2, "fn": 2, "fp": 1, "tn": 5, "dropped": 0 }));
    assert!(p.out("confusion_Overall__pooled_.csv").is_file());
    assert!(stdout(&out).contains("weighting:"));
}

#[test]
fn estimate_cost_is_additive() {
    let p = Project::new(&["A", "B"]);
    p.write_dataset("A", &labelled_rows(30, 3));
    p.write_dataset("B", &[]);
    let out = p.run(&["estimate-cost", "--dataset", "B"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(p.json_out("cost_estimate.json")["cost"], 0.0);

    assert_eq!(code(&p.run(&["estimate-cost", "--dataset", "A"])), 0);
    let a = p.json_out("cost_estimate.json")["cost"].as_f64().unwrap();
    assert_eq!(code(&p.run(&["estimate-cost"])), 0);
    let total = p.json_out("cost_estimate.json");
    assert!((total["cost"].as_f64().unwrap() - a).abs() < 1e-12);
    assert_eq!(total["datasets"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_dataset_exits_two() {
    let p = Project::new(&["A"]);
    let out = p.run(&["screen", "--dataset", "ZZZ"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("ZZZ"));
}
