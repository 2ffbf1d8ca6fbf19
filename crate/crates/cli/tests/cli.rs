use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn llrbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llrbc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("LLRBC_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    format!(
        r#"{{
  "problem": "tsp",
  "orders": [{{"name": "tiny", "tasks": ["U", "GM"]}}],
  "methods": ["finetune", "llr-bc"],
  "seed": 3,
  "output_dir": "{}",
  "overrides": {{
    "scale": 5, "epochs_per_task": 2, "instances_per_epoch": 8, "batch_size": 4,
    "test_instances": 6, "curve_instances": 2, "buffer_capacity": 3
  }}
}}"#,
        dir.display()
    )
}

#[test]
fn validate_only_parses_without_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, tiny_config(&out)).unwrap();
    let o = llrbc(&["run", "--validate-only", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("config ok"));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_one_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"problem": "tsp", "orders": ["order1"], "methods": ["finetune"], "sead": 1}"#).unwrap();
    let o = llrbc(&["run", "--validate-only", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sead"), "{}", stderr(&o));

    let o = llrbc(&["run", "--validate-only", "--preset", "order9", "--method", "finetune"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("order9"));

    let o = llrbc(&["run", "--preset", "order1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let o = llrbc(&["bench-eval", "--checkpoint", "/nonexistent/policy.json", "--dir", "."]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn report_on_an_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = llrbc(&["report", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error"));
}

#[test]
fn gen_tasks_writes_frozen_sets_and_library_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let args = ["gen-tasks", "--problem", "cvrp", "--tasks", "U,C", "--scale", "7", "--count", "3", "--output", out, "--tsplib"];
    let o = llrbc(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let sets: Vec<_> = fs::read_dir(tmp.path().join("test_sets")).unwrap().collect();
    assert_eq!(sets.len(), 2);
    let mut files = 0;
    for task in fs::read_dir(tmp.path().join("tsplib")).unwrap() {
        for f in fs::read_dir(task.unwrap().path()).unwrap() {
            let text = fs::read_to_string(f.unwrap().path()).unwrap();
            assert!(text.contains("CAPACITY") && text.contains("DEMAND_SECTION"));
            files += 1;
        }
    }
    assert_eq!(files, 6);
    let before = fs::read(tmp.path().join("test_sets").join(sets[0].as_ref().unwrap().file_name())).unwrap();
    assert!(llrbc(&args).status.success());
    let after = fs::read(tmp.path().join("test_sets").join(sets[0].as_ref().unwrap().file_name())).unwrap();
    assert_eq!(before, after);
}

#[test]
fn tiny_run_writes_artifacts_reproducibly_and_feeds_bench_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let mut metrics = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let cfg = tmp.path().join(format!("{name}.json"));
        fs::write(&cfg, tiny_config(&out)).unwrap();
        let o = llrbc(&["run", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("finetune") && stdout.contains("llr-bc"), "{stdout}");
        for f in ["manifest.json", "metrics.csv", "report.md", "runs/tiny/finetune/matrix.csv", "runs/tiny/llr-bc/curves.csv"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        let charts: Vec<_> = fs::read_dir(out.join("charts")).unwrap().collect();
        assert_eq!(charts.len(), 2);
        metrics.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);

    let run = tmp.path().join("a");
    let o = llrbc(&["report", run.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), metrics[0]);

    let ckpt = run.join("runs/tiny/llr-bc/checkpoints/task_1/policy.json");
    let spec = format!("bc={}", ckpt.display());
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/tsplib");
    let o = llrbc(&["bench-eval", "--checkpoint", &spec, "--dir", data.to_str().unwrap(), "--limit", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8_lossy(&o.stdout);
    let row = csv.lines().find(|l| l.starts_with("berlin52,")).expect("berlin52 row");
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[1], "52");
    assert!(cols[2].parse::<f64>().unwrap() >= 7542.0);
    assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0);
}
