use std::fs;
use std::path::Path;
use std::process::Command;

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stochflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stochflow")).args(args).output().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|h| h == name).unwrap();
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

#[test]
fn zero_family_trajectories_are_constant_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "zero.toml",
        "kind = \"simulate\"\nseed = 5\npaths = 3\nfamily = { name = \"ZERO\" }\nwindow = { t_end = 1.0, base_steps = 8 }\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = stochflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = read_csv(&a.join("trajectories.csv"));
    assert_eq!(rows.len(), 1 + 3 * 9 * 9);
    assert_eq!(column(&rows, "x0"), column(&rows, "X0"));
    assert_eq!(fs::read(a.join("trajectories.csv")).unwrap(), fs::read(b.join("trajectories.csv")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["family"]["name"], "ZERO");
    assert!(manifest["library_version"].is_string());
}

#[test]
fn failed_assumptions_are_a_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "gbm.toml",
        "kind = \"assumptions\"\nseed = 1\nfamily = { name = \"GBM\", mu = 0.1, nu = 0.2 }\n\
         window = { t_end = 1.0 }\nregularity = { n0 = 0.01 }\nspace = { lower = -10.0, upper = 10.0, step = 0.5 }\n",
    );
    let out = dir.path().join("out");
    let o = stochflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows = read_csv(&out.join("assumptions.csv"));
    assert!(column(&rows, "satisfied").iter().any(|s| s == "false"));
    assert_eq!(rows.last().unwrap()[0], "overall");
    assert_eq!(rows.last().unwrap()[3], "false");
}

#[test]
fn drift_shift_limit_reports_t_over_n() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ode.toml",
        "kind = \"limit\"\nseed = 2\npaths = 4\nfamily = { name = \"ZERO\" }\n\
         window = { t_end = 2.0, base_steps = 64 }\nnorms = { epsilon = 1.0, p = 1.0 }\n\
         limit = { ns = [1, 2, 4, 8], perturbation = \"drift_shift\" }\n",
    );
    let out = dir.path().join("out");
    let o = stochflow(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("limit.csv"));
    let ns = column(&rows, "n");
    let values = column(&rows, "flow_distance_value");
    for (n, v) in ns.iter().zip(&values) {
        let n: f64 = n.parse().unwrap();
        assert_eq!(v.parse::<f64>().unwrap(), 2.0 / n);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(
        dir.path(),
        "good.toml",
        "kind = \"spde\"\nseed = 1\nfamily = { name = \"GBM\", mu = 0.1, nu = 0.2 }\nwindow = { t_end = 1.0 }\n",
    );
    assert_eq!(stochflow(&["validate", good.to_str().unwrap()]).status.code(), Some(0));

    let unknown = write_config(dir.path(), "bad.toml", &format!("{}foo = 1\n", fs::read_to_string(&good).unwrap()));
    let o = stochflow(&["validate", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));
    assert_eq!(stochflow(&["run", "/nonexistent/config.toml"]).status.code(), Some(1));

    // the characteristics solver needs H = 0
    let jumps = write_config(
        dir.path(),
        "jumps.toml",
        "kind = \"spde\"\nseed = 1\npaths = 1\nfamily = { name = \"GBM\", mu = 0.1, nu = 0.2 }\n\
         window = { t_end = 1.0, base_steps = 8 }\njump = { name = \"LINJUMP\", c = -0.5 }\n\
         atoms = [{ mark = 0.0, rate = 1.0 }]\n",
    );
    let out = dir.path().join("out");
    let o = stochflow(&["run", jumps.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_override_changes_the_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "gbm.toml",
        "kind = \"simulate\"\nseed = 1\npaths = 2\nfamily = { name = \"GBM\", mu = 0.1, nu = 0.2 }\n\
         window = { t_end = 1.0, base_steps = 8 }\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    stochflow(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    stochflow(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed-override", "9"]);
    assert_ne!(fs::read(a.join("trajectories.csv")).unwrap(), fs::read(b.join("trajectories.csv")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
}
