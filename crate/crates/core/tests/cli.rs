use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_etrpcp"))
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn json(args: &[&str]) -> serde_json::Value {
    let mut a = args.to_vec();
    a.push("--json");
    let (code, out, err) = run(&a);
    assert_eq!(code, 0, "{err}");
    serde_json::from_str(&out).expect("valid JSON")
}

#[test]
fn eval_shipped_witness() {
    let (i, w) = (data("small.etrcq"), data("small.witness"));
    let v = json(&["eval", i.to_str().unwrap(), w.to_str().unwrap()]);
    assert_eq!(v["fraction"], "1");
    assert_eq!(v["config"]["command"], "eval");
    let again: serde_json::Value = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(again, v);
}

#[test]
fn eval_failure_and_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.etr");
    std::fs::write(&bad, "etrcq 1/64 2\nMUL3 0 1\n").unwrap();
    let (code, _, err) = run(&["eval", bad.to_str().unwrap(), data("small.witness").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");
    let wrong = dir.path().join("wrong.txt");
    std::fs::write(&wrong, "1\n1\n1\n1\n").unwrap();
    let (code, out, _) = run(&["eval", data("small.etrcq").to_str().unwrap(), wrong.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("satisfied 2/4"), "{out}");
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn reduce_is_deterministic_and_witness_carries_over() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let i = data("small.etrcq");
    let w = data("small.witness");
    for d in [&d1, &d2] {
        let (code, out, err) =
            run(&["reduce", i.to_str().unwrap(), "--witness", w.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("reference 1266+2k = 1278"), "{out}");
    }
    for f in ["psi.etr", "trace.json", "report.json"] {
        assert!(d1.path().join(f).exists(), "{f}");
    }
    for f in ["psi.etr", "trace.json"] {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap());
    }
    let v = json(&["reduce", i.to_str().unwrap(), "--witness", w.to_str().unwrap()]);
    assert_eq!(v["forward_witness_fraction"], "1");
    assert_eq!(v["reference_block_size"], 1278);
}

#[test]
fn randomized_commands_need_a_seed() {
    let g = data("triangle3.cgraph");
    let (code, _, err) = run(&["pipeline", g.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("--seed"));
    let (code, _, _) = run(&["codeexp", "--k1", "16", "--k2", "2"]);
    assert_eq!(code, 2);
}

#[test]
fn seeded_runs_reproduce() {
    let args = ["codeexp", "--k1", "64", "--k2", "4", "--adversary", "overlay", "--seed", "5", "--trials", "2000"];
    let a = json(&args);
    let b = json(&args);
    assert_eq!(a, b);
    assert!(a["overlay"].as_u64().unwrap() > 0);
}

#[test]
fn pipeline_reports_transport() {
    let g = data("triangle3.cgraph");
    let v = json(&["pipeline", g.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(v["witness_transported"], true);
    assert_eq!(v["trace"]["stages"].as_array().unwrap().len(), 4);
    let g = data("pentagon2.cgraph");
    let v = json(&["pipeline", g.to_str().unwrap(), "--seed", "1", "--d", "6"]);
    assert_eq!(v["input_satisfiable"], false);
}

#[test]
fn approx_results_reevaluate() {
    let i = data("mixed.etrinv");
    for m in ["8", "2"] {
        let v = json(&["approx", i.to_str().unwrap(), "--method", m]);
        assert!(v["satisfied"].as_u64().unwrap() >= 2, "{v}");
    }
    let a = json(&["approx", i.to_str().unwrap(), "--method", "8", "--randomized", "--seed", "4", "--trials", "20"]);
    let b = json(&["approx", i.to_str().unwrap(), "--method", "8", "--randomized", "--seed", "4", "--trials", "20"]);
    assert_eq!(a, b);
}

#[test]
fn hardgen_writes_files() {
    let d = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&["hardgen", "--p", "3", "--out", d.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("p = 3"));
    assert!(d.path().join("hard_p3.etr").exists());
    let w: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("hard_p3.witness.json")).unwrap()).unwrap();
    assert_eq!(w[0]["value"], "2^(1/3)");
    assert!(w[0]["decimal"].as_str().unwrap().starts_with("1.259921049894873164767"));
    let (code, _, _) = run(&["hardgen", "--p", "4"]);
    assert_eq!(code, 2);
}
