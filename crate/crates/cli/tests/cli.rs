use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("delayfeed-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn delayfeed(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delayfeed")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = delayfeed(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 4] = ["--hours", "4", "--clicks-per-hour", "2000"];

fn run_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run"];
    v.extend(SMALL);
    v.extend(extra);
    v
}

#[test]
fn identical_runs_write_identical_reports() {
    let dir = scratch("determinism");
    for loss in ["defuse", "bi-defuse"] {
        // The output directory is part of the echoed config, so both runs
        // write to the same place.
        ok(&run_args(&["--loss", loss, "--out", "a"]), &dir);
        fs::rename(dir.join("a"), dir.join("first")).unwrap();
        ok(&run_args(&["--loss", loss, "--out", "a"]), &dir);
        let first = fs::read(dir.join("first/report.json")).unwrap();
        let second = fs::read(dir.join("a/report.json")).unwrap();
        assert!(!first.is_empty());
        assert_eq!(first, second, "{loss}: same config, different bytes");
        for f in ["report.csv", "checkpoints/f_theta.json", "checkpoints/f_dp.json", "checkpoints/f_rn.json"] {
            assert!(dir.join("a").join(f).is_file(), "{loss}: missing {f}");
        }
        for d in ["a", "first"] {
            fs::remove_dir_all(dir.join(d)).unwrap();
        }
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_file_matches_flags() {
    let dir = scratch("config");
    fs::write(
        dir.join("arm.toml"),
        "pipeline = \"fnw\"\nloss = \"fnw-defuse\"\nz = \"z2\"\nwo-minutes = 15\nwa-hours = 12\nhours = 4\n\
         clicks-per-hour = 2000\nseed = 3\nlr = 0.01\nl2 = 0.0005\nbatch = 128\nout = \"from-file\"\n",
    )
    .unwrap();
    ok(&["run", "--config", "arm.toml"], &dir);
    ok(
        &[
            "run", "--pipeline", "fnw", "--loss", "fnw-defuse", "--z", "z2", "--wo-minutes", "15", "--wa-hours", "12",
            "--hours", "4", "--clicks-per-hour", "2000", "--seed", "3", "--lr", "0.01", "--l2", "0.0005", "--batch",
            "128", "--out", "from-file",
        ],
        &dir,
    );
    let from_flags = fs::read(dir.join("from-file/report.json")).unwrap();
    fs::remove_dir_all(dir.join("from-file")).unwrap();
    ok(&["run", "--config", "arm.toml"], &dir);
    assert_eq!(fs::read(dir.join("from-file/report.json")).unwrap(), from_flags);

    ok(&["run", "--config", "arm.toml", "--seed", "4", "--out", "override"], &dir);
    let report = fs::read_to_string(dir.join("override/report.json")).unwrap();
    assert!(report.contains("\"seed\": 4"));
    assert!(report.contains("\"w_o\": 900"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_input_is_refused() {
    let dir = scratch("refusals");
    fs::write(dir.join("typo.toml"), "learning-rate = 0.1\n").unwrap();
    for args in [
        vec!["run", "--config", "typo.toml", "--out", "x"],
        vec!["run", "--pipeline", "fnw", "--loss", "defuse", "--out", "x"],
        vec!["run", "--pipeline", "nope", "--out", "x"],
        vec!["run", "--hours", "4"],
        vec!["run", "--wo-minutes", "2000", "--wa-hours", "1", "--out", "x"],
    ] {
        let out = delayfeed(&args, &dir);
        assert!(!out.status.success(), "{args:?} should fail");
    }
    assert!(!dir.join("x").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn generated_log_trains_like_the_synthetic_source() {
    let dir = scratch("generate");
    let mut gen = vec!["generate"];
    gen.extend(SMALL);
    gen.extend(["--out", "clicks.tsv.gz"]);
    ok(&gen, &dir);
    assert!(dir.join("clicks.tsv.gz").is_file());
    let stdout = ok(
        &run_args(&["--log", "clicks.tsv.gz", "--n-numeric", "0", "--n-categorical", "1", "--hash-dim", "1024", "--out", "r"]),
        &dir,
    );
    assert!(stdout.contains("esdfm/defuse+z1"));
    let report = fs::read_to_string(dir.join("r/report.json")).unwrap();
    assert!(report.contains("\"type\": \"log\""));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn grid_and_compare_agree() {
    let dir = scratch("grid");
    let mut grid = vec!["grid"];
    grid.extend(SMALL);
    grid.extend(["--pipelines", "esdfm,vanilla", "--losses", "vanilla,defuse", "--zs", "z1,oracle", "--threads", "2"]);
    grid.extend(["--out", "g"]);
    let table = ok(&grid, &dir);
    for arm in ["oracle__ideal", "esdfm__defuse+z1", "esdfm__defuse+oracle", "esdfm__vanilla", "vanilla__vanilla"] {
        assert!(dir.join("g").join(arm).join("report.json").is_file(), "missing arm {arm}");
    }
    let csv = fs::read_to_string(dir.join("g/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 4);
    assert!(table.contains("100.00"));

    ok(&["compare", "--oracle", "g/oracle__ideal", "g/esdfm__defuse+z1", "--out", "cmp.csv"], &dir);
    let cmp = fs::read_to_string(dir.join("cmp.csv")).unwrap();
    let row = |text: &str, arm: &str| text.lines().find(|l| l.starts_with(arm)).map(str::to_owned);
    assert_eq!(row(&cmp, "esdfm/defuse+z1"), row(&csv, "esdfm/defuse+z1"));

    ok(&run_args(&["--lr", "0.02", "--out", "other"]), &dir);
    let refused = delayfeed(&["compare", "--oracle", "g/oracle__ideal", "other"], &dir);
    assert!(!refused.status.success());
    fs::remove_dir_all(&dir).unwrap();
}
