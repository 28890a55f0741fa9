use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[world]
topics = 8
articles = 2000
users = 200
[policy]
tier = \"tiny\"
warmup_steps = 20
[grpo]
steps = 4
[distill]
steps = 4
[eval]
users = 50
seeds = 1
tiers = [\"tiny\", \"small\"]
n_list = [1, 2]
";

fn interest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interest"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let o = interest(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = interest(&["gen-world", "--out", "x", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_world_gives_a_single_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = interest(&[
        "evaluate",
        "--world",
        p(&dir.path().join("nope")),
        "--verbatim",
        "--out",
        p(&dir.path().join("r.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error: kind=io msg="), "{err}");
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[rewards]\nlambda_align = 0.9\n").unwrap();
    let o = interest(&["--config", p(&cfg), "gen-world", "--out", p(&dir.path().join("w"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error: kind=config"));
}

#[test]
fn gen_world_is_reproducible_and_prints_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = interest(&["--config", p(&cfg), "--seed", "11", "gen-world", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("# effective config"));
        assert!(stdout.contains("seed = 11"));
        assert!(stdout.contains("users = 200"));
    }
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
}

#[test]
fn pipeline_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let c = p(&cfg);
    let run = |args: &[&str]| {
        let mut all = vec!["--config", c, "--threads", "1"];
        all.extend_from_slice(args);
        let o = interest(&all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    let world = d.join("world");
    let filter = d.join("filter.txt");
    let teacher = d.join("teacher.qlpc");
    let student = d.join("student.qlpc");
    run(&["gen-world", "--out", p(&world)]);
    run(&["train-filter", "--world", p(&world), "--out", p(&filter)]);
    run(&[
        "train-teacher",
        "--world",
        p(&world),
        "--filter",
        p(&filter),
        "--out",
        p(&teacher),
        "--log",
        p(&d.join("teacher.csv")),
    ]);
    run(&[
        "distill",
        "--world",
        p(&world),
        "--mode",
        "onpolicy",
        "--teacher",
        p(&teacher),
        "--out",
        p(&student),
        "--log",
        p(&d.join("distill.csv")),
    ]);
    run(&[
        "evaluate",
        "--world",
        p(&world),
        "--ckpt",
        p(&student),
        "--n",
        "2",
        "--out",
        p(&d.join("report.csv")),
    ]);
    run(&["sweep", "capacity", "--world", p(&world), "--out", p(&d.join("sweep"))]);

    let log = std::fs::read_to_string(d.join("teacher.csv")).unwrap();
    assert!(log.starts_with("step,mean_reward,r_align,r_cov,r_spec,r_div,r_struct,kl,clip_frac,valid_frac"));
    assert_eq!(log.lines().count(), 5);
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(report.lines().last().unwrap().starts_with("all,"));
    let sweep = std::fs::read_to_string(d.join("sweep/capacity.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(d.join("sweep/capacity.svg").exists());
}

#[test]
fn distill_without_teacher_needs_mode_none() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let world = dir.path().join("w");
    let o = interest(&["--config", p(&cfg), "gen-world", "--out", p(&world)]);
    assert!(o.status.success());
    let o = interest(&[
        "--config",
        p(&cfg),
        "distill",
        "--world",
        p(&world),
        "--out",
        p(&dir.path().join("s.qlpc")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error: kind=config"));
}
