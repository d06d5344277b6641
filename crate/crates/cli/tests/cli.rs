use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn charmap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charmap")).args(args).current_dir(cwd).output().expect("spawn charmap")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "scenario = swirl2d\nnc = 8\nnf = 16\na = 1\nt = 1\nresolution = 64\nsnapshots = 0.5\n";

#[test]
fn run_writes_artifacts_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), SMALL).unwrap();
    let o = charmap(&["run", "-c", "c.cfg", "--checkpoint-every", "4", "output=out"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("t=1 ") && text.contains("l2="), "{text}");
    let out = dir.path().join("out");
    for f in ["config.txt", "steps.csv", "metrics.csv", "timing.csv", "circle_t0p5.pgm", "circle_t1.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(out.join("checkpoint_000004/manifest.txt").exists());
    let pgm = fs::read(out.join("circle_t1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(pgm.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
    let steps = fs::read_to_string(out.join("steps.csv")).unwrap();
    assert!(steps.starts_with("step,t,m1,remapped,nf"));
}

#[test]
fn config_echo_reproduces_the_metrics() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), SMALL).unwrap();
    assert!(charmap(&["run", "-c", "c.cfg", "output=a"], dir.path()).status.success());
    let echo = dir.path().join("a/config.txt");
    let o = charmap(&["run", "-c", echo.to_str().unwrap(), "output=b"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn contour_dump_and_load_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), SMALL).unwrap();
    assert!(charmap(&["run", "-c", "c.cfg", "t=0.5", "output=out"], dir.path()).status.success());
    let o = charmap(&["contour", "out/checkpoint_final", "--resolution", "64", "-o", "cont"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("cont/circle_t0p5.txt").exists());

    assert!(charmap(&["dump", "out/checkpoint_final", "-o", "global.map"], dir.path()).status.success());
    let head = fs::read_to_string(dir.path().join("global.map")).unwrap();
    assert!(head.starts_with("charmap-hermite 1\ndims 2\ncells 16\n"));
    let o = charmap(&["load", "global.map", "--set", "circle", "--resolution", "64", "-o", "loaded"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("dims=2 cells=16 boundary=clamped"));

    // the dump and the checkpoint give the same contour up to composition error
    let a = fs::read_to_string(dir.path().join("cont/circle_t0p5.txt")).unwrap();
    let b = fs::read_to_string(dir.path().join("loaded/circle_t0.txt")).unwrap();
    assert!(!a.is_empty() && !b.is_empty());
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), SMALL).unwrap();
    assert!(charmap(&["run", "-c", "c.cfg", "output=full"], dir.path()).status.success());
    assert!(charmap(&["run", "-c", "c.cfg", "t=0.5", "output=half"], dir.path()).status.success());
    let o = charmap(&["run", "-c", "c.cfg", "output=rest", "--resume", "half/checkpoint_final"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let last = |p: &str| fs::read_to_string(dir.path().join(p)).unwrap().lines().last().unwrap().to_string();
    assert_eq!(last("full/metrics.csv"), last("rest/metrics.csv"));
}

#[test]
fn sweep_and_scaling_print_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = charmap(&["sweep-e1", "--e1", "1e-4", "--nf", "16", "nc=8", "t=0.5", "a=1", "resolution=32"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.starts_with("e1,nf,l2,time_s,m\n1e-4,16,"));

    let o = charmap(&["scaling", "--sizes", "8,16", "nc=8", "t=0.25", "a=1", "resolution=32", "output=sc"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 5);
    assert!(dir.path().join("sc/scaling.csv").exists());
}

#[test]
fn usage_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = charmap(&["run", "colour=blue"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let o = charmap(&["run", "method=gals", "e1=1e-3"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("e1"));
    let o = charmap(&["run", "nf_min=16", "nf_init=24", "nf_max=64"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nf_init"));
    let o = charmap(&["load", "missing.map"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn zero_time_run_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = charmap(&["run", "t=0", "resolution=64"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("l2=0.000e0 hausdorff=0.000e0"), "{text}");
}
