use std::path::Path;
use std::process::Command;

fn funnel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_funnel")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const GOOD: &str = r#"{
    "schema": 1,
    "mdp": {"preset": "bandit"},
    "agents": [{"label": "ts", "algorithm": {"kind": "ts"}}],
    "consumers": 200,
    "seeds": 2
}"#;

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let cases = [
        GOOD.replace("\"seeds\": 2", "\"seeds\": 2, \"consumer\": 5"),
        GOOD.replace(r#"{"kind": "ts"}"#, r#"{"kind": "mfabl", "epsilon": 2.0}"#),
        GOOD.replace("\"schema\": 1", "\"schema\": 7"),
        GOOD.replace("bandit", "nowhere"),
        "not json".to_string(),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{i}.json"), text);
        let o = funnel(&["run", "--config", &cfg, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = funnel(&["run", "--config", dir.path().join("missing.json").to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_report_solve_generate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.json", GOOD);
    let out = dir.path().join("run");
    let o = funnel(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.csv", "timings.csv", "curves.csv", "config.json", "runs/ts_seed0.csv", "runs/ts_seed1.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let before = std::fs::read(out.join("summary.csv")).unwrap();
    assert!(funnel(&["report", "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(out.join("summary.csv")).unwrap(), before);

    let solved = dir.path().join("solved");
    assert!(funnel(&["solve", "--preset", "bandit", "--out", solved.to_str().unwrap()]).status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(solved.join("v_star.json")).unwrap()).unwrap();
    assert!((v["v_star"].as_f64().unwrap() - 0.3).abs() < 1e-12);

    let gen = dir.path().join("gen");
    assert!(funnel(&["generate", "--preset", "funnel-small", "--out", gen.to_str().unwrap()]).status.success());
    let model = gen.join("mdp.json");
    let o = funnel(&["solve", "--config", model.to_str().unwrap(), "--out", solved.to_str().unwrap()]);
    assert!(o.status.success());
}
