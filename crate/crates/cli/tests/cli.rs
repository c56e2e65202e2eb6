use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nbvlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbvlab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("NBVLAB_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "\
scene.objects = 1,2
camera.width = 16
camera.height = 16
dataset.n_poses = 20
classifier.groups = 1,1
classifier.widths = 4,128
classifier.epochs = 1
sac.batch_size = 8
sac.hidden = 16,16
sac.learning_starts_per_object = 10
schedule.total_steps = 40
schedule.validation_interval = 20
schedule.episodes_per_object = 1
schedule.seq_len = 3
env.steps_per_episode = 3
evaluate.starts_per_object = 2
evaluate.seq_len = 3
";

#[test]
fn validate_config_accepts_good_and_has_no_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = nbvlab(&["validate-config", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn malformed_config_and_unknown_subcommand_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dataset.n_poses = lots\n");
    assert_eq!(nbvlab(&["validate-config", "--config", &cfg], dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), "no equals sign\n");
    assert_eq!(nbvlab(&["gen-dataset", "--config", &cfg], dir.path()).status.code(), Some(2));
    assert_eq!(nbvlab(&["fly"], dir.path()).status.code(), Some(2));
    assert_eq!(nbvlab(&["validate-config", "--seed-override", "sac.tau=3"], dir.path()).status.code(), Some(2));
}

#[test]
fn evaluate_without_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = nbvlab(&["evaluate", "--config", &cfg, "--out", "eval"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing checkpoint"));
}

#[test]
fn gen_dataset_reports_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scene.objects = 1,2\ncamera.width = 8\ncamera.height = 8\ndataset.n_poses = 2000\n");
    let out = nbvlab(&["gen-dataset", "--config", &cfg, "--out", "ds"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("ds/summary.txt")).unwrap();
    assert!(summary.contains("result.train_per_object = 1600"));
    assert!(summary.contains("result.val_per_object = 200"));
    assert!(summary.contains("result.test_per_object = 200"));
    let manifest = fs::read_to_string(dir.path().join("ds/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.ends_with(".pgm")).count(), 4000);
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nbvlab"))
        .args(["gen-objects"])
        .current_dir(dir.path())
        .env("NBVLAB_OUT", dir.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("root/gen-objects/objects/o06.txt").is_file());
    assert!(dir.path().join("root/gen-objects/summary.txt").is_file());
}

#[test]
fn full_pipeline_runs_and_reruns_identically_from_its_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, SMALL);
    let ok = |out: Output| assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    ok(nbvlab(&["gen-dataset", "--config", &cfg, "--out", "ds", "--threads", "1"], d));
    let with_ds = format!("{SMALL}dataset.dir = ds\nclassifier.checkpoint = cls/classifier.ck\nevaluate.agent = agent/agent.ck\nevaluate.features_dataset = ds\n");
    let cfg = write_config(d, &with_ds);
    ok(nbvlab(&["train-classifier", "--config", &cfg, "--out", "cls"], d));
    ok(nbvlab(&["train-agent", "--config", &cfg, "--out", "agent"], d));
    ok(nbvlab(&["evaluate", "--config", &cfg, "--out", "eval"], d));
    for f in ["sequences.csv", "sequence_rows.csv", "confusion_best.csv", "confusion_start.csv", "features_test.csv"] {
        assert!(d.join("eval").join(f).is_file(), "{f}");
    }
    let curve = fs::read_to_string(d.join("agent/validation_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 40 / 20 + 1);

    // The summary is itself a config that reproduces the run.
    ok(nbvlab(&["train-agent", "--config", "agent/summary.txt", "--out", "agent2"], d));
    assert_eq!(fs::read(d.join("agent/training_log.csv")).unwrap(), fs::read(d.join("agent2/training_log.csv")).unwrap());
    assert_eq!(fs::read(d.join("agent/agent.ck")).unwrap(), fs::read(d.join("agent2/agent.ck")).unwrap());

    ok(nbvlab(&["train-agent", "--config", &cfg, "--out", "agent3", "--seed-override", "sac=5"], d));
    assert_ne!(fs::read(d.join("agent/agent.ck")).unwrap(), fs::read(d.join("agent3/agent.ck")).unwrap());
}

#[test]
fn occlusion_measurement_writes_per_object_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "occlusion.objects = 1,4\nocclusion.views = 16\nocclusion.samples = 500\n");
    let out = nbvlab(&["measure-occlusion", "--config", &cfg, "--out", "occ"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = fs::read_to_string(dir.path().join("occ/occlusion_summary.csv")).unwrap();
    assert_eq!(t.lines().count(), 3);
    assert!(dir.path().join("occ/octants_o04.csv").is_file());
}
