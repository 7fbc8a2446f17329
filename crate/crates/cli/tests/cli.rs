use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wpm_core::topology::read_binary;

fn wpm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wpm"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.txt");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    wpm().args(args).output().unwrap()
}

const BLOBS: &str = "# small blobs run\ndevices=4\ndensity=0.5\niterations=10\nbatch_size=8\neta0=0.5\np=3\nblobs_train=400\nblobs_test=100\n";

#[test]
fn run_writes_one_row_per_iteration() {
    let dir = scratch("rows");
    let cfg = write_config(&dir, BLOBS);
    let out = dir.join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iteration,mean_loss,mean_accuracy,consensus_distance");
    assert_eq!(lines.len(), 11);
    assert!(!trace.contains('\r'));
    for f in ["summary.txt", "plots/accuracy.svg", "plots/loss.svg", "plots/consensus.svg", "topology.wpmt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let topo = read_binary(&fs::read(out.join("topology.wpmt")).unwrap()[..]).unwrap();
    assert_eq!((topo.num_nodes(), topo.len()), (4, 10));
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = scratch("determinism");
    let cfg = write_config(&dir, BLOBS);
    let traces: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.join(name);
            let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            assert!(o.status.success());
            fs::read(out.join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);

    let out = dir.join("threads");
    let o = wpm()
        .env("WPM_THREADS", "3")
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("trace.csv")).unwrap(), traces[0]);

    let out = dir.join("reseeded");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5"]);
    assert!(o.status.success());
    assert_ne!(fs::read(out.join("trace.csv")).unwrap(), traces[0]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = scratch("config-errors");
    let cfg = write_config(&dir, "p=3\nlearning_rate=0.1\n");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("learning_rate"), "{err}");

    let o = wpm().env("WPM_THREADS", "zero").args(["verify", "--samples", "10"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["run", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = scratch("runtime-errors");
    let cfg = write_config(&dir, "dataset=mnist\ndata_dir=does-not-exist\n");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.join("bad.csv");
    fs::write(&bad, "iteration,mean_loss,mean_accuracy,consensus_distance\n0,1,oops,0\n").unwrap();
    let o = run(&["plot", "--out", dir.join("p.svg").to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));
}

#[test]
fn generated_topology_drives_a_run_unchanged() {
    let dir = scratch("topology");
    let cfg = write_config(&dir, BLOBS);
    for name in ["topo.wpmt", "topo.csv"] {
        let file = dir.join(name);
        let o = run(&[
            "gen-topology", "--out", file.to_str().unwrap(), "--devices", "4", "--density", "0.5",
            "--iterations", "10", "--seed", "3",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let before = fs::read(&file).unwrap();
        let out = dir.join(format!("out-{name}"));
        let o = run(&[
            "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
            "--topology", file.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(fs::read(&file).unwrap(), before);
    }
    // Both encodings describe the same graphs, so the traces agree.
    assert_eq!(
        fs::read(dir.join("out-topo.wpmt/trace.csv")).unwrap(),
        fs::read(dir.join("out-topo.csv/trace.csv")).unwrap()
    );
}

#[test]
fn sweep_and_plot() {
    let dir = scratch("sweep");
    let text = BLOBS.replace("p=3", "p=1,3,9,15");
    let cfg = write_config(&dir, &text);
    let out = dir.join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let traces: Vec<String> = ["p1", "p3", "p9", "p15"]
        .iter()
        .map(|p| out.join(p).join("trace.csv").to_str().unwrap().to_string())
        .collect();
    let svg_path = |n: &str| dir.join(n).to_str().unwrap().to_string();
    let mut args = vec!["plot".to_string(), "--out".into(), svg_path("a.svg"), "--metric".into(), "loss".into()];
    args.extend(traces.iter().cloned());
    assert!(wpm().args(&args).output().unwrap().status.success());
    args[2] = svg_path("b.svg");
    assert!(wpm().args(&args).output().unwrap().status.success());
    let a = fs::read_to_string(svg_path("a.svg")).unwrap();
    assert_eq!(a, fs::read_to_string(svg_path("b.svg")).unwrap());
    assert_eq!(a.matches("<polyline").count(), 4);
    for label in ["p1", "p3", "p9", "p15"] {
        assert!(a.contains(&format!(">{label}</text>")));
    }
    let overview = fs::read_to_string(out.join("plots/accuracy.svg")).unwrap();
    assert_eq!(overview.matches("<polyline").count(), 4);
}

#[test]
fn verify_passes_by_default() {
    let o = run(&["verify", "--samples", "2000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
