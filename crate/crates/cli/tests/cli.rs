use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use dkt_cli::{Cli, Command as Sub, HeatmapExport, CHECKPOINT_FILE, REPORT_FILE, TEST_SPLIT_FILE};
use tempfile::TempDir;

fn dkt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dkt")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn simulate(dir: &TempDir, name: &str, students: &str, seed: &str) -> String {
    let out = path(dir, name);
    let o = dkt(&["simulate", "--students", students, "--exercises", "8", "--concepts", "2", "--seed", seed, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const SMALL_TRAIN: [&str; 12] = [
    "--hidden-size", "4", "--max-epochs", "3", "--batch-size", "8", "--learning-rate", "0.1", "--optimizer", "adam",
    "--dropout-rate", "0.5",
];

fn train(data: &str, out_dir: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", data, "--out-dir", out_dir];
    args.extend_from_slice(&SMALL_TRAIN);
    args.extend_from_slice(extra);
    dkt(&args)
}

#[test]
fn simulate_is_deterministic_and_summarizes() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "a.txt", "10", "7");
    let b = simulate(&dir, "b.txt", "10", "7");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = simulate(&dir, "c.txt", "10", "8");
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn simulate_defaults_give_2000_records_of_50() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "sim.txt");
    let o = dkt(&["simulate", "--out", &out]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3 * 2000);
    assert!(lines.chunks(3).all(|r| r[0] == "50" && r[1].split(',').count() == 50));
    assert!(String::from_utf8_lossy(&o.stdout).contains("students=2000"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "x.txt");
    assert_eq!(code(&dkt(&["simulate", "--concepts", "6", "--exercises", "5", "--out", &out])), 1);
    assert!(!Path::new(&out).exists());
    assert_eq!(code(&dkt(&["simulate", "--bogus"])), 1);
    assert_eq!(code(&dkt(&["train"])), 1);
    assert_eq!(code(&dkt(&["--help"])), 0);
}

#[test]
fn missing_data_is_a_data_error_without_outputs() {
    let dir = TempDir::new().unwrap();
    let out_dir = path(&dir, "run");
    let o = train(&path(&dir, "nope.txt"), &out_dir, &[]);
    assert_eq!(code(&o), 2);
    assert!(!Path::new(&out_dir).exists());
}

#[test]
fn train_then_eval_reproduces_the_report() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.txt", "40", "1");
    let run = path(&dir, "run");
    let o = train(&data, &run, &["--lambda-r", "0.1", "--lambda-w1", "0.003", "--lambda-w2", "3.0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ck = format!("{run}/{CHECKPOINT_FILE}");
    let test = format!("{run}/{TEST_SPLIT_FILE}");
    let report = path(&dir, "eval.txt");
    let o = dkt(&["eval", "--checkpoint", &ck, "--data", &test, "--out", &report]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&report).unwrap(), fs::read(format!("{run}/{REPORT_FILE}")).unwrap());
}

#[test]
fn eval_refuses_skill_count_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.txt", "20", "2");
    let run = path(&dir, "run");
    assert_eq!(code(&train(&data, &run, &[])), 0);
    let ck = format!("{run}/{CHECKPOINT_FILE}");
    assert_eq!(code(&dkt(&["eval", "--checkpoint", &ck, "--data", &data, "--num-skills", "9"])), 2);

    let wide = path(&dir, "wide.txt");
    fs::write(&wide, "2\n0,30\n1,0\n2\n1,2\n0,1\n").unwrap();
    assert_eq!(code(&dkt(&["eval", "--checkpoint", &ck, "--data", &wide])), 2);
}

#[test]
fn zero_model_reports_chance_auc() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.txt", "20", "3");
    let run = path(&dir, "run");
    let o = dkt(&[
        "train", "--data", &data, "--out-dir", &run, "--hidden-size", "4", "--init-stddev", "0",
        "--learning-rate", "0", "--max-epochs", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = dkt_cli::read_report(&Path::new(&run).join(REPORT_FILE)).unwrap();
    assert_eq!((report.auc_n, report.auc_c, report.w1, report.m1), (0.5, 0.5, 0.0, 0.0));
}

#[test]
fn baseline_only_grid() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.txt", "30", "4");
    let mut args = vec!["gridsearch", "--data", &data, "--grid-r", "0", "--grid-w1", "0", "--grid-w2", "0", "--folds", "3"];
    args.extend_from_slice(&SMALL_TRAIN);
    let o = dkt(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("cells=1"));
    assert!(text.contains("warning"));
    assert!(text.contains("selected lambda_r=0 lambda_w1=0 lambda_w2=0"));
    assert_eq!(text.lines().filter(|l| l.starts_with("lambda_r=")).count(), 1);
}

#[test]
fn default_grid_has_252_cells() {
    let cli = Cli::try_parse_from(["dkt", "gridsearch", "--data", "x"]).unwrap();
    let Sub::Gridsearch(g) = cli.command else { panic!("wrong subcommand") };
    assert_eq!(g.grid_r.len() * g.grid_w1.len() * g.grid_w2.len(), 252);
}

#[test]
fn heatmap_shape_and_files() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "d.txt");
    fs::write(&data, "3\n5,2,5\n1,0,1\n4\n0,1,3,4\n1,1,0,1\n3\n1,2,3\n1,0,1\n3\n4,4,4\n1,0,1\n").unwrap();
    let run = path(&dir, "run");
    assert_eq!(code(&train(&data, &run, &["--test-fraction", "0.25"])), 0);
    let ck = format!("{run}/{CHECKPOINT_FILE}");
    let prefix = path(&dir, "hm");
    let o = dkt(&["heatmap", "--checkpoint", &ck, "--data", &data, "--student", "0", "--out-prefix", &prefix]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(format!("{prefix}.csv")).unwrap();
    assert!(csv.starts_with("skill,5:1,2:0,5:1\n"));
    let h = HeatmapExport::from_csv(&csv).unwrap();
    assert_eq!(h.skills, vec![2, 5]);
    assert!(h.cells.iter().flatten().all(|&p| p > 0.0 && p < 1.0));
    assert!(Path::new(&format!("{prefix}.svg")).exists());
    assert!(Path::new(&format!("{prefix}_lines.svg")).exists());
    assert_eq!(
        code(&dkt(&["heatmap", "--checkpoint", &ck, "--data", &data, "--student", "9", "--out-prefix", &prefix])),
        1
    );
}

#[test]
fn matrix_counts_ordered_pairs() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "d.txt");
    fs::write(&data, "2\n32,33\n1,0\n").unwrap();
    let o = dkt(&["matrix", "--data", &data, "--skill-a", "32", "--skill-b", "33"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let nums: Vec<u64> = text
        .split_whitespace()
        .filter_map(|w| w.parse().ok())
        .collect();
    // correct row: 0 1 1; incorrect row: 0 0 0; totals: 0 1 1
    assert_eq!(nums, vec![0, 1, 1, 0, 0, 0, 0, 1, 1]);
    assert_eq!(code(&dkt(&["matrix", "--data", &data, "--skill-a", "34", "--skill-b", "0"])), 1);
}
