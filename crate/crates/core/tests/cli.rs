//! End-to-end tests of the `rinav` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SCENARIO: &str = "duration = 12\nbuildings = 12\nworld_extent = 120\nseed = 3\n";

fn rinav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rinav")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rinav(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Flight {
    dir: TempDir,
}

impl Flight {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn new() -> Self {
        let f = Flight { dir: TempDir::new().unwrap() };
        fs::write(f.path("scenario.txt"), SCENARIO).unwrap();
        ok(&[
            "simulate",
            "--scenario",
            s(&f.path("scenario.txt")),
            "--out",
            s(&f.path("data.txt.gz")),
            "--world-out",
            s(&f.path("world.txt")),
            "--gt-out",
            s(&f.path("gt.txt")),
            "--config-out",
            s(&f.path("run.conf")),
        ]);
        f
    }

    fn run(&self, out: &str, extra: &[&str]) -> String {
        let (data, conf, out) = (self.path("data.txt.gz"), self.path("run.conf"), self.path(out));
        let mut args = vec!["run", "--dataset", s(&data), "--config", s(&conf), "--out", s(&out)];
        args.extend(extra);
        ok(&args)
    }

    fn eval(&self, est: &str, align: &str) -> Vec<(String, f64)> {
        ok(&["eval", "--est", s(&self.path(est)), "--gt", s(&self.path("gt.txt")), "--align", align])
            .lines()
            .filter_map(|l| {
                let (k, v) = l.split_once(' ')?;
                Some((k.to_owned(), v.parse().ok()?))
            })
            .collect()
    }
}

fn metric(m: &[(String, f64)], key: &str) -> f64 {
    m.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("missing {key}")).1
}

#[test]
fn simulate_run_eval_round_trip() {
    let f = Flight::new();
    let events = f.path("events.txt");
    let stdout = f.run("est.txt", &["--events", s(&events)]);
    assert!(stdout.starts_with("mode full"), "{stdout}");
    assert!(fs::read_to_string(&events).unwrap().starts_with("run mode=full\n"));

    let m = f.eval("est.txt", "first");
    assert!(metric(&m, "pairs") > 100.0);
    assert!(metric(&m, "path_length_m") > 50.0);
    assert!(metric(&m, "ape_translation_rmse_m") < 1.0);
}

#[test]
fn prior_map_and_mode_override() {
    let f = Flight::new();
    let stdout = f.run("map.txt", &["--prior-map", s(&f.path("world.txt")), "--mode", "doppler-only"]);
    assert!(stdout.starts_with("mode doppler-only"), "{stdout}");
    assert!(metric(&f.eval("map.txt", "none"), "ape_translation_rmse_m").is_finite());
}

#[test]
fn runs_are_byte_identical() {
    let f = Flight::new();
    f.run("a.txt", &[]);
    f.run("b.txt", &[]);
    assert_eq!(fs::read(f.path("a.txt")).unwrap(), fs::read(f.path("b.txt")).unwrap());

    let again = TempDir::new().unwrap();
    let data = again.path().join("data.txt.gz");
    ok(&["simulate", "--scenario", s(&f.path("scenario.txt")), "--out", s(&data)]);
    assert_eq!(fs::read(f.path("data.txt.gz")).unwrap(), fs::read(&data).unwrap());
}

#[test]
fn unknown_config_key_fails_fast() {
    let f = Flight::new();
    let mut conf = fs::read_to_string(f.path("run.conf")).unwrap();
    conf.push_str("bogus = 1\n");
    fs::write(f.path("bad.conf"), conf).unwrap();
    let out = rinav(&[
        "run",
        "--dataset",
        s(&f.path("data.txt.gz")),
        "--config",
        s(&f.path("bad.conf")),
        "--out",
        s(&f.path("est.txt")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key \"bogus\""));
    assert!(!f.path("est.txt").exists());
}

#[test]
fn unknown_scenario_key_fails_fast() {
    let dir = TempDir::new().unwrap();
    let scn = dir.path().join("s.txt");
    fs::write(&scn, "duration = 5\nwingspan = 3\n").unwrap();
    let out = rinav(&["simulate", "--scenario", s(&scn), "--out", s(&dir.path().join("d.txt"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("wingspan"));
}
