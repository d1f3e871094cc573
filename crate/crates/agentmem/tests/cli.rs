use std::path::Path;
use std::process::{Command, Output};

fn agentmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentmem"))
        .args(args)
        .env_remove("AGENTMEM_FIXTURES")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_fixtures_reproduces_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentmem(&["gen-fixtures", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for rel in stdout(&o).lines().map(|l| Path::new(l).strip_prefix(dir.path()).unwrap().to_path_buf()) {
        assert_eq!(
            std::fs::read_to_string(dir.path().join(&rel)).unwrap(),
            std::fs::read_to_string(bundled.join(&rel)).unwrap(),
            "{}",
            rel.display()
        );
    }
}

#[test]
fn bench_schedule_writes_csv_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("schedule.csv");
    let o = agentmem(&["bench-schedule", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out).unwrap();
    assert!(csv.starts_with("scenario,category,serial_ms,coarse_ms,fine_ms"));
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn bench_profile_reports_alignment() {
    let o = agentmem(&["bench-profile"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("user,test_id,method"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("retrieval oracle calls: 0"));
}

#[test]
fn run_inspect_and_replay_a_session() {
    let dir = tempfile::tempdir().unwrap();
    let mem = dir.path().join("mem");
    let mem = mem.to_str().unwrap();
    let task = "query the price of DJI Action 5";
    for _ in 0..2 {
        let o = agentmem(&["run", "--memory", mem, "--app", "shop_a", "--task", task]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = agentmem(&["inspect", "--memory", mem, "sessions"]);
    assert_eq!(stdout(&o).lines().count(), 2);
    let o = agentmem(&["inspect", "--memory", mem, "acttree"]);
    assert!(stdout(&o).contains("shop_a"));

    let session = Path::new(mem).join("sessions").join("s0001.json");
    let o = agentmem(&["replay-session", session.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("0 of 6 steps differ"));

    let mutation = dir.path().join("mutation.json");
    std::fs::write(&mutation, r#"{"screen": "home", "target": "btn_search", "op": "remove_element"}"#).unwrap();
    let o = agentmem(&["replay-session", session.to_str().unwrap(), "--mutation", mutation.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stdout(&o).contains("0 of 6"));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentmem(&["--fixtures", dir.path().to_str().unwrap(), "bench-profile"]);
    assert_eq!(o.status.code(), Some(2));
    let o = agentmem(&["run", "--memory", dir.path().to_str().unwrap(), "--app", "nope", "--task", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown app"));
}
