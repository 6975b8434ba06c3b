use std::fs;
use std::path::Path;
use std::process::Command;

use phasedamage::cli::{parse_config, parse_config_str, simulate_into, Outcome, OUTPUT_ROOT_ENV};

const SMALL: &str = r#"
seed = 3

[grid]
dim = 1
cells = [12]
dirichlet = ["left", "right"]

[model]
mode = "cahn-hilliard"

[time]
horizon = 0.02
steps = STEPS

[initial]
kind = "perturbed"
mean = [0.5, 0.5]
amplitude = 0.05

[output]
dir = "run"
"#;

fn small(steps: usize) -> String {
    SMALL.replace("STEPS", &steps.to_string())
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phasedamage"))
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn state_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir.join("states")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn zero_steps_writes_initial_state_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(&small(0)).unwrap();
    let outcome = simulate_into(&cfg, tmp.path(), &mut Vec::new()).unwrap();
    assert_eq!(outcome, Outcome::Pass);
    assert_eq!(state_files(tmp.path()), ["state_0000.csv"]);
    assert_eq!(read(&tmp.path().join("ledger.csv")).lines().count(), 2);
}

#[test]
fn runs_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = parse_config_str(&small(4)).unwrap();
    simulate_into(&cfg, a.path(), &mut Vec::new()).unwrap();
    simulate_into(&cfg, b.path(), &mut Vec::new()).unwrap();
    for f in state_files(a.path()).iter().map(|f| format!("states/{f}")).chain(["ledger.csv".into(), "audit.csv".into(), "manifest.toml".into()]) {
        assert_eq!(read(&a.path().join(&f)), read(&b.path().join(&f)), "{f}");
    }
}

#[test]
fn manifest_reproduces_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = parse_config_str(&small(3)).unwrap();
    simulate_into(&cfg, a.path(), &mut Vec::new()).unwrap();
    let manifest = read(&a.path().join("manifest.toml"));
    assert!(manifest.contains("status = \"pass\""));
    let again = parse_config(&a.path().join("manifest.toml")).unwrap();
    simulate_into(&again, b.path(), &mut Vec::new()).unwrap();
    assert_eq!(read(&a.path().join("states/state_0003.csv")), read(&b.path().join("states/state_0003.csv")));
    assert_eq!(read(&a.path().join("ledger.csv")), read(&b.path().join("ledger.csv")));
}

#[test]
fn state_csv_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(&small(1)).unwrap();
    simulate_into(&cfg, tmp.path(), &mut Vec::new()).unwrap();
    let text = read(&tmp.path().join("states/state_0001.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cell,x,y,u_x,c_0,c_1,w_0,w_1,z"));
    assert_eq!(lines.count(), 12);
    let audit = read(&tmp.path().join("audit.csv"));
    assert!(audit.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.toml");
    fs::write(&good, small(2)).unwrap();
    let status = bin().arg("simulate").arg(&good).env(OUTPUT_ROOT_ENV, tmp.path()).output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    assert!(tmp.path().join("run/manifest.toml").exists());

    let out = bin().arg("audit").arg(&good).arg(tmp.path().join("run")).arg("--csv").arg(tmp.path().join("re.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read(&tmp.path().join("re.csv")), read(&tmp.path().join("run/audit.csv")));

    // Tampered mass must fail the re-audit.
    let state = tmp.path().join("run/states/state_0002.csv");
    let text = read(&state);
    let mut rows: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cols: Vec<String> = rows[5].split(',').map(str::to_string).collect();
    let c0: f64 = cols[4].parse().unwrap();
    let c1: f64 = cols[5].parse().unwrap();
    cols[4] = (c0 + 1e-4).to_string();
    cols[5] = (c1 - 1e-4).to_string();
    rows[5] = cols.join(",");
    fs::write(&state, rows.join("\n") + "\n").unwrap();
    let out = bin().arg("audit").arg(&good).arg(tmp.path().join("run")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, small(2).replace("[output]", "[output]\nbogus = 1")).unwrap();
    let out = bin().arg("simulate").arg(&bad).env(OUTPUT_ROOT_ENV, tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = bin().arg("oracle-check").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
