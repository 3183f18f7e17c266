use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cada(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cada"))
        .args(args)
        .env_remove("CADA_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cada(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "\
epochs = 1
batch_size = 4
instances_per_epoch = 8
val_size = 4
n = 6
milestones =
tasks = CVRP, VRPTW
d_h = 16
heads = 2
layers = 1
d_ff = 32
";

/// Trains the tiny configuration into `dir` and returns the checkpoint.
fn tiny_model(dir: &Path) -> PathBuf {
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out), "--seed", "3"]);
    out.join("epoch-0001.ckpt")
}

#[test]
fn dataset_round_trip_and_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    ok(&["generate", "--variant", "all", "--n", "6", "--count", "2", "--out", s(&a), "--seed", "9"]);
    ok(&["generate", "--variant", "all", "--n", "6", "--count", "2", "--out", s(&b), "--seed", "9"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().matches("vrp ").count(), 32);

    let exact = ok(&["baseline", "--data", s(&a), "--method", "exact"]);
    let heur = ok(&["baseline", "--data", s(&a), "--method", "nn-2opt"]);
    let rows = |t: &str| -> Vec<(f64, String)> {
        t.lines()
            .skip(1)
            .map(|l| {
                let c: Vec<&str> = l.split(',').collect();
                (c[1].parse().unwrap(), c[2].to_string())
            })
            .collect()
    };
    let (e, h) = (rows(&exact), rows(&heur));
    assert_eq!(e.len(), 32);
    for ((ec, flag), (hc, _)) in e.iter().zip(&h) {
        assert_eq!(flag, "1");
        assert!(ec <= &(hc + 1e-9));
    }
}

#[test]
fn train_eval_solve_validate() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_model(dir.path());
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,variant,mean_cost,loss,lr\n"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);

    let data = dir.path().join("data.txt");
    ok(&["generate", "--variant", "CVRP,OVRPBTW", "--n", "6", "--count", "3", "--out", s(&data)]);
    let refs = dir.path().join("refs.csv");
    ok(&["baseline", "--data", s(&data), "--method", "exact", "--out", s(&refs)]);
    let report = ok(&["eval", "--model", s(&ckpt), "--data", s(&data), "--refs", s(&refs), "--aug8", "--k", "2", "--csv"]);
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "variant,n,mean_obj,gap,time_s");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let gap: f64 = l.split(',').nth(3).unwrap().parse().unwrap();
        assert!(gap >= -1e-9, "model beat the exact optimum: {l}");
    }

    let sol = dir.path().join("sol.txt");
    let printed = ok(&["solve", "--model", s(&ckpt), "--instance", s(&data), "--index", "4", "--prompt-aug", "32"]);
    fs::write(&sol, &printed).unwrap();
    let checked = ok(&["validate", "--instance", s(&data), "--solution", s(&sol), "--index", "4"]);
    assert!(checked.contains("feasible"));

    // drop one customer from the sequence
    let mut lines: Vec<String> = printed.lines().map(String::from).collect();
    let seq = lines[1].clone();
    let mut toks: Vec<&str> = seq.split_whitespace().collect();
    let victim = toks.iter().rposition(|t| *t != "0" && *t != "seq").unwrap();
    toks.remove(victim);
    lines[1] = toks.join(" ");
    fs::write(&sol, lines.join("\n")).unwrap();
    let out = cada(&["validate", "--instance", s(&data), "--solution", s(&sol), "--index", "4"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("violation") && text.contains("infeasible"), "{text}");

    let attn = dir.path().join("attn");
    ok(&["attn-stats", "--model", s(&ckpt), "--data", s(&data), "--out", s(&attn)]);
    let depot = fs::read_to_string(attn.join("attn_depot.csv")).unwrap();
    assert_eq!(depot.lines().next(), Some("layer,head,instance,customer,weight"));
    // 6 instances x 1 layer x 2 heads x 6 customers
    assert_eq!(depot.lines().count(), 1 + 6 * 2 * 6);
    let tw = fs::read_to_string(attn.join("attn_tw.csv")).unwrap();
    assert_eq!(tw.lines().count(), 1 + 3 * 2 * 6 * 5);
}

#[test]
fn training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("two.cfg");
    fs::write(&cfg, TINY.replace("epochs = 1", "epochs = 2")).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--config", s(&cfg), "--out", s(&a), "--exec", "sequential"]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b), "--exec", "parallel"]);
    let ma = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read_to_string(b.join("metrics.csv")).unwrap());

    // stop after one epoch, then resume to two
    let c = dir.path().join("c");
    let one = dir.path().join("one.cfg");
    fs::write(&one, TINY).unwrap();
    ok(&["train", "--config", s(&one), "--out", s(&c)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&c), "--resume"]);
    assert_eq!(ma, fs::read_to_string(c.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("epoch-0002.ckpt")).unwrap(),
        fs::read(c.join("epoch-0002.ckpt")).unwrap()
    );
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("env.cfg");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_cada"))
        .args(["train", "--out", s(&out)])
        .env("CADA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let sidecar = fs::read_to_string(out.join("epoch-0001.ckpt.cfg")).unwrap();
    assert!(sidecar.contains("d_h = 16"));
}

#[test]
fn cvrplib_run_reports_gap() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_model(dir.path());
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/tiny.vrp");
    let bks = dir.path().join("bks.csv");
    // depot (0,0), customers (3,4) and (6,0); one route of 5 + 5 + 6
    fs::write(&bks, "name,cost\ntiny-n3,16\n").unwrap();
    let out = ok(&["cvrplib", "--model", s(&ckpt), fixture, "--bks", s(&bks), "--k", "1", "--csv"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "tiny-n3");
    assert_eq!(row[2], "16");
    assert_eq!(row[4], "0");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cada(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(cada(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cada(&["eval", "--model", "m", "--data", "d", "--prompt-aug", "7"]).status.code(), Some(2));
    let missing = cada(&["solve", "--model", "/nonexistent.ckpt", "--instance", "/nonexistent.txt"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}
