use std::path::PathBuf;
use std::process::Command;

use rmfs::harness::{read_csv, summarize, Grid, InstanceSource, SweepParam};
use rmfs_core::datagen::Scale;
use rmfs_core::{AllocatorKind, SchedulerKind, SimConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rmfs"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn gen_run_and_replay_round_trip() {
    let data = scratch("micro.jsonl");
    let log = scratch("micro.log.jsonl");
    let out = bin()
        .args(["gen", "--scenario", "micro", "--seed", "3", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["run", "--allocator", "cp", "--scheduler", "tsp", "--seed", "3", "--dataset"])
        .arg(&data)
        .arg("--log")
        .arg(&log)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let row: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(row["allocator"], "cp");
    assert_eq!(row["error"], "");

    let out = bin().args(["replay", "--dataset"]).arg(&data).arg("--log").arg(&log).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&log).unwrap();
    let tampered = scratch("tampered.log.jsonl");
    std::fs::write(&tampered, text.replacen("\"eta\":", "\"eta\":9", 1)).unwrap();
    let out = bin().args(["replay", "--dataset"]).arg(&data).arg("--log").arg(&tampered).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn sweep_writes_one_row_per_episode() {
    let csv = scratch("sweep.csv");
    let out = bin()
        .args([
            "sweep", "--scenario", "micro", "--seeds", "2", "--allocators", "soft,wlb", "--schedulers", "bias",
            "--param", "K", "--values", "2,5", "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| !r.failed() && r.completed > 0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("±"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = bin().args(["run", "--scheduler", "psychic", "--scenario", "micro"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["run", "--scenario", "nowhere"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

#[test]
fn grid_sweeps_p_and_summarizes_over_seeds() {
    let grid = Grid {
        source: InstanceSource::Scenario {
            scenario: "micro".into(),
            scale: Scale::Small,
            orders: Some(8),
        },
        allocators: vec![AllocatorKind::Soft],
        schedulers: vec![SchedulerKind::Nearest, SchedulerKind::Earliest],
        seeds: vec![0, 1, 2],
        sweep: Some((SweepParam::P, vec![2.0, 16.0])),
        base: SimConfig::default(),
    };
    let rows = grid.run().unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3);
    assert!(rows.iter().all(|r| r.orders == 8 && !r.failed()));
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 4);
    for c in &summary {
        assert_eq!(c.makespan.n, 3);
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheduler == c.scheduler && r.p == c.p)
            .map(|r| r.makespan as f64)
            .collect();
        assert_eq!(c.makespan.mean, xs.iter().sum::<f64>() / 3.0);
    }
    let mut buf = Vec::new();
    rmfs::harness::write_csv(&rows, &mut buf).unwrap();
    assert_eq!(read_csv(&buf[..]).unwrap(), rows);
}
