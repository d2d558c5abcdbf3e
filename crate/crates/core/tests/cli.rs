use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coop-track"));
    c.env_remove("COOP_TRACK_OUT");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SCALAR_STAR: &str = r#"
[leader]
a0 = [[1.0]]
c0 = [[1]]

[[followers]]
a = [[0.0]]
b = [[1.0]]
c = [[1.0]]

[[followers]]
a = [[0.0]]
b = [[1.0]]
c = [[1.0]]

[topology]
adjacency = [[0, 0], [0, 0]]
leader_links = [1, 1]

[noise]
multiplicative = [{ i = 1, j = 0, sigma = 0.8 }, { i = 2, j = 0, sigma = 0.8 }]

[synthesis]
alpha = 1.0
k1 = 1.0
k2 = 1.0

[initial]
x0 = [0.0]
followers = [{ x = [0.0], xhat = [0.0], xhat0 = [1.0] }, { x = [0.0], xhat = [0.0], xhat0 = [1.0] }]
"#;

#[test]
fn validate_preset_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", "--preset", "example-4.1"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert!(s.contains("verdict = true"));
    assert!(s.contains("lambda1 = 0.381966011250"));
}

#[test]
fn scalar_star_with_large_sigma_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("star.toml");
    std::fs::write(&path, SCALAR_STAR).unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scalar_star_verdict = false"), "{err}");

    let ok = SCALAR_STAR.replace("sigma = 0.8", "sigma = 0.6");
    std::fs::write(&path, ok).unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("scalar_star_verdict = true"));
}

#[test]
fn malformed_input_exits_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, SCALAR_STAR.replacen("b = [[1.0]]", "b = [[1.0], [2.0, 3.0]]", 1)).unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("followers[1].b"));

    std::fs::write(&path, SCALAR_STAR.replacen("[topology]", "[topology]\nextra = 1", 1)).unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["validate", "--preset", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["validate", "--scenario", "/nonexistent/x.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synthesize_writes_reloadable_gains() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synthesize", "--preset", "example-4.1"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert!(s.contains("window_nonempty = false"));
    assert!(s.contains("# warning: coupling window is empty"));
    let gains = dir.path().join("gains.toml");
    let text = std::fs::read_to_string(&gains).unwrap();
    assert!(text.contains("[[synthesis.overrides]]"));
    assert!(text.contains("-10.0"), "reference K1 entries survive");

    let o = run(&["validate", "--scenario", gains.to_str().unwrap()], dir.path());
    assert!(o.status.success());

    let o = run(&["synthesize", "--preset", "example-4.1", "--design"], dir.path());
    assert!(o.status.success(), "{o:?}");
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--preset", "example-4.1", "--seed", "7", "--dt", "1e-3", "--horizon", "30"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    let x = std::fs::read(a.path().join("trajectory.csv")).unwrap();
    let y = std::fs::read(b.path().join("trajectory.csv")).unwrap();
    assert_eq!(x, y);
    let head = String::from_utf8_lossy(&x[..200]).into_owned();
    assert!(head.starts_with("t,y0_1,y1_1,err1_sq,y2_1,err2_sq,y3_1,err3_sq\n"), "{head}");
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["simulate", "--preset", "example-4.1", "--horizon", "0.1"])
        .env("COOP_TRACK_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(dir.path().join("trajectory.csv").exists());
}

#[test]
fn montecarlo_additive_plateau_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["montecarlo", "--preset", "example-4.1", "--trials", "200"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert!(s.contains("plateau_verdict = \"PASS\""), "{s}");
    assert!(s.contains("divergent = 0"));
    let csv = std::fs::read_to_string(dir.path().join("mse.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,mse_1,se_1,mse_2,se_2,mse_3,se_3");
    assert_eq!(csv.lines().count(), 3002);
}

#[test]
fn montecarlo_without_additive_reports_decay_and_time_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", "--preset", "example-4.1-noadditive", "--trials", "50", "--horizon", "10"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let s = stdout(&o);
    assert!(s.contains("decay_verdict = "));
    assert!(s.contains("t_eps_bound = "));
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("mse.csv").exists());
}
