use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn acert(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acert"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("ACERT_SEED")
        .env_remove("ACERT_WORKERS")
        .output()
        .unwrap()
}

const MISSING_SIGMA: &str = r#"
[scenario]
name = "broken"
[mc]
n_paths = 1000
h = 0.01
[process]
kind = "brownian"
b = "0"
"#;

#[test]
fn missing_sigma_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    fs::write(&cfg, MISSING_SIGMA).unwrap();
    let o = acert(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("process.sigma"), "{err}");
}

#[test]
fn unknown_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    fs::write(&cfg, MISSING_SIGMA.replace("b = \"0\"", "sigma = \"1\"\nsigmaa = \"2\"")).unwrap();
    let o = acert(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("process.sigmaa"));
}

#[test]
fn holder_benchmark_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let o = acert(&["run", "--builtin", "brownian_holder075", "--seed", "17", "--plotdata"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["charfn.csv", "bound.csv", "density.csv", "exponents.csv", "l2_tail.csv", "summary.csv", "plot_charfn.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap_or_else(|_| panic!("{f} missing"));
        for key in ["# acert ", "# scenario_sha256: ", "# master_seed: 17", "# n_paths: 20000", "# h: ", "# variant: brownian"] {
            assert!(text.contains(key), "{f} lacks `{key}`");
        }
    }
    let plot = fs::read_to_string(dir.path().join("plot_density.csv")).unwrap();
    assert!(plot.lines().any(|l| l == "x,y,band"));
}

#[test]
fn atom_counterexample_fails_certification() {
    let dir = tempfile::tempdir().unwrap();
    let o = acert(&["run", "--builtin", "atom_counterexample"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn list_shows_catalog() {
    let o = Command::new(env!("CARGO_BIN_EXE_acert")).arg("list").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("  ") && l.contains('[')).count() >= 8);
    assert!(text.contains("symmetric_power_density"));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_acert"))
        .args(["run", "--builtin", "spde_additive", "--out"])
        .arg(dir.path())
        .env("ACERT_SEED", "123")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("exponents.csv")).unwrap();
    assert!(text.contains("# master_seed: 123"));
}
