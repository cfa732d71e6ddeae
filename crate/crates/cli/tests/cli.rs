use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const SMALL: &[&str] = &["--phases", "0,0.5,1.0,1.5,2.0,2.5,3.0", "--rounds", "3000", "--shots", "2000", "--seed", "9"];
const OUTPUTS: [&str; 4] = ["sweep.csv", "estimates.csv", "cfi.csv", "report.json"];

fn sqrs(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqrs"))
        .args(args)
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn free_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

fn spawn(args: &[&str], out: &Path) -> Child {
    Command::new(env!("CARGO_BIN_EXE_sqrs"))
        .args(args)
        .args(["--out", out.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

#[test]
fn tomography_then_sweep_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let mut args = vec!["tomography"];
        args.extend(SMALL);
        ok(&sqrs(&args, d));
        let mut args = vec!["sweep"];
        args.extend(SMALL);
        ok(&sqrs(&args, d));
    }
    for f in OUTPUTS.iter().chain(&["tomography_counts.csv", "rho_hat.txt"]) {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
    let sweep = String::from_utf8(read(a.path(), "sweep.csv")).unwrap();
    assert!(sweep.starts_with("# sqrs-v1 config_hash="));
    assert_eq!(sweep.lines().nth(1).unwrap(), "phi_k,group,n0,n1,p_exp,p_model");
    assert_eq!(sweep.lines().count(), 2 + 7 * 5);
}

#[test]
fn sweep_without_tomography_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep"];
    args.extend(SMALL);
    let o = sqrs(&args, d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tomography"));
}

#[test]
fn bad_config_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let o = sqrs(&["sweep", "--ideal", "--werner-p", "1.5"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let o = sqrs(&["sweep", "--ideal", "--phases", "0,2,1"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn low_fidelity_tomography_exits_three_and_keeps_counts() {
    let d = tempfile::tempdir().unwrap();
    let o = sqrs(&["tomography", "--werner-p", "0.6", "--shots", "500"], d.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(d.path().join("tomography_counts.csv").exists());
    assert!(!d.path().join("rho_hat.txt").exists());
}

#[test]
fn alice_without_bob_exits_four() {
    let d = tempfile::tempdir().unwrap();
    let ep = free_port();
    let o = sqrs(&["run-alice", "--ideal", "--endpoint", &ep, "--connect-timeout", "0"], d.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn eve_tap_writes_matching_report() {
    let d = tempfile::tempdir().unwrap();
    let tap = d.path().join("link.bin");
    let mut args = vec!["sweep", "--ideal", "--eve-tap", tap.to_str().unwrap()];
    args.extend(SMALL);
    ok(&sqrs(&args, d.path()));
    assert_eq!(&read(d.path(), "link.bin")[..4], b"SQRS");
    let eve: serde_json::Value = serde_json::from_slice(&read(d.path(), "eve_report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&read(d.path(), "report.json")).unwrap();
    assert_eq!(eve["points"], report["eve"]["points"]);
    assert_eq!(eve["cfi"], report["eve"]["cfi"]);
}

#[test]
fn cfi_command_rebuilds_table() {
    let d = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--ideal"];
    args.extend(SMALL);
    ok(&sqrs(&args, d.path()));
    let again = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sqrs"))
        .args(["cfi", "--in", d.path().to_str().unwrap(), "--out", again.path().to_str().unwrap()])
        .args(["--centering", "2,5"])
        .output()
        .unwrap();
    ok(&o);
    let text = String::from_utf8(read(again.path(), "cfi.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("center_index,phase,series,P,slope,F,floor"));
    let centres: std::collections::BTreeSet<&str> =
        text.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(centres.into_iter().collect::<Vec<_>>(), vec!["2", "5"]);
}

#[test]
fn two_processes_match_single_process() {
    let single = tempfile::tempdir().unwrap();
    let bob = tempfile::tempdir().unwrap();
    let alice = tempfile::tempdir().unwrap();
    let mut tomo = vec!["tomography"];
    tomo.extend(SMALL);
    ok(&sqrs(&tomo, single.path()));
    ok(&sqrs(&tomo, bob.path()));
    let mut sweep = vec!["sweep"];
    sweep.extend(SMALL);
    ok(&sqrs(&sweep, single.path()));

    let ep = free_port();
    let mut b = vec!["serve-bob", "--endpoint", &ep];
    b.extend(SMALL);
    let mut bob_proc = spawn(&b, bob.path());
    let mut a = vec!["run-alice", "--endpoint", &ep];
    a.extend(SMALL);
    ok(&sqrs(&a, alice.path()));
    assert!(bob_proc.wait().unwrap().success());

    for f in OUTPUTS {
        assert_eq!(read(single.path(), f), read(alice.path(), f), "{f} differs");
    }
}

#[test]
fn killed_bob_resumes_to_identical_outputs() {
    let single = tempfile::tempdir().unwrap();
    let bob = tempfile::tempdir().unwrap();
    let alice = tempfile::tempdir().unwrap();
    let mut sweep = vec!["sweep", "--ideal"];
    sweep.extend(SMALL);
    ok(&sqrs(&sweep, single.path()));

    let ep = free_port();
    let mut a = vec!["run-alice", "--ideal", "--endpoint", &ep, "--connect-timeout", "20"];
    a.extend(SMALL);
    let alice_proc = spawn(&a, alice.path());

    let mut b = vec!["serve-bob", "--ideal", "--endpoint", &ep, "--stop-after", "3"];
    b.extend(SMALL);
    let status = spawn(&b, bob.path()).wait().unwrap();
    assert_eq!(status.code(), Some(137));
    let progress = std::fs::read_to_string(bob.path().join("bob_progress")).unwrap();
    assert!(progress.contains("last_completed=3"), "{progress}");

    let mut b = vec!["serve-bob", "--ideal", "--endpoint", &ep];
    b.extend(SMALL);
    assert!(spawn(&b, bob.path()).wait().unwrap().success());
    let out = alice_proc.wait_with_output().unwrap();
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("reconnecting"));
    assert!(!bob.path().join("bob_progress").exists());

    for f in OUTPUTS {
        assert_eq!(read(single.path(), f), read(alice.path(), f), "{f} differs");
    }
}
