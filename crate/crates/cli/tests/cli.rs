use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cropseg_core::imagery::{render_sequence, SequenceSpec};
use cropseg_core::netbuilder::save_checkpoint;
use cropseg_core::{build_network, BinaryMask, NetworkConfig};

fn cropseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropseg"))
        .args(args)
        .env_remove("CROPSEG_DEVICE")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn random_checkpoint(dir: &Path, side: usize) -> PathBuf {
    let mut net = build_network(NetworkConfig::new(2, 4, side), 1).unwrap();
    save_checkpoint(&mut net, dir, "tiny", 0, None).unwrap()
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["train", "finetune", "eval", "ablate", "segment", "track", "report", "synth", "probe"] {
        let o = cropseg(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
    assert_eq!(cropseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[training]\nlearning_rat = 0.01\n").unwrap();
    let o = cropseg(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[data]\ntrain_dir = \"nowhere\"\n").unwrap();
    let o = cropseg(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"));
}

#[test]
fn unknown_device_is_refused() {
    let o = Command::new(env!("CARGO_BIN_EXE_cropseg"))
        .args(["probe", "missing.png"])
        .env("CROPSEG_DEVICE", "cuda:0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CROPSEG_DEVICE"));
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let o = cropseg(&["--seed", "2", "synth", "--count", "4", "--side", "16", "--out", s(&scenes)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[network]\ndepth = 2\nbase_width = 4\ninput_side = 16\n\
         [training]\nlearning_rate = 3e38\nbatch_size = 2\nmax_epochs = 3\neval_every = 1\n\
         [data]\ntrain_dir = \"scenes\"\n",
    )
    .unwrap();
    let o = cropseg(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn segment_runs_one_or_eight_forward_images() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = random_checkpoint(dir.path(), 32);
    let frames = render_sequence(&SequenceSpec { frames: 1, ..SequenceSpec::default() }, 1).unwrap();
    let photo = dir.path().join("photo.png");
    frames[0].image.save(&photo).unwrap();

    let run = |extra: &[&str], out: &str| {
        let out = dir.path().join(out);
        let mut args = vec!["segment", "--checkpoint", s(&ckpt), s(&photo), "--out", s(&out)];
        args.extend_from_slice(extra);
        let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = cropseg(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        (stdout(&o), out)
    };
    let (single, _) = run(&["--no-d4"], "single");
    assert!(single.contains("forward passes: 1"), "{single}");
    let (all, loose) = run(&[], "loose");
    assert!(all.contains("forward passes: 8"), "{all}");
    for f in ["photo_prob.png", "photo_mask.png", "photo_overlay.png"] {
        assert!(loose.join(f).is_file(), "{f}");
    }

    let (_, strict) = run(&["--threshold", "0.9"], "strict");
    let hi = BinaryMask::load(strict.join("photo_mask.png")).unwrap();
    let lo = BinaryMask::load(loose.join("photo_mask.png")).unwrap();
    assert!(hi.foreground().all(|(x, y)| lo.get(x, y)));
}

#[test]
fn track_writes_the_full_tree_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let o = cropseg(&["--seed", "3", "synth", "--kind", "sequence", "--count", "5", "--out", s(&seq)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fruit starts at"));
    let ckpt = random_checkpoint(dir.path(), 32);

    let track = |name: &str| {
        let out = dir.path().join(name);
        let o = cropseg(&[
            "track",
            "--checkpoint",
            s(&ckpt),
            "--manifest",
            s(&seq.join("manifest.csv")),
            "--center",
            "240,180",
            "--window",
            "150",
            "--no-d4",
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("frames processed: 5"));
        out
    };
    let a = track("a");
    for f in ["raw.csv", "clamped.csv", "track.json", "report/area_timeline.png", "report/positions.png"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let header = fs::read_to_string(a.join("raw.csv")).unwrap();
    assert!(header.starts_with("photo_id,cx,cy,area,clamped,low_confidence,count_s100"));
    assert_eq!(header.lines().count(), 6);

    let b = track("b");
    for f in ["raw.csv", "clamped.csv", "report/timeline.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let o = cropseg(&["report", "--csv", s(&a.join("raw.csv")), "--out", s(&dir.path().join("r")), "--night", "2:3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("r/area_boxplot.png").is_file());
}

#[test]
fn track_rejects_a_center_outside_the_photo() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    assert!(cropseg(&["synth", "--kind", "sequence", "--count", "2", "--out", s(&seq)]).status.success());
    let ckpt = random_checkpoint(dir.path(), 32);
    let o = cropseg(&[
        "track",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&seq),
        "--center",
        "9000,10",
        "--window",
        "100",
        "--out",
        s(&dir.path().join("t")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_scores_a_synthetic_set() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    assert!(cropseg(&["synth", "--count", "3", "--side", "32", "--out", s(&scenes)]).status.success());
    let ckpt = random_checkpoint(dir.path(), 32);
    let csv = dir.path().join("scores.csv");
    let o = cropseg(&["eval", "--checkpoint", s(&ckpt), "--data", s(&scenes), "--out", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("samples: 3"));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn probe_prints_a_coordinate_grid() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    assert!(cropseg(&["synth", "--count", "1", "--side", "64", "--out", s(&scenes)]).status.success());
    let png = dir.path().join("grid.png");
    let o = cropseg(&["probe", s(&scenes.join("scene_0000.png")), "--grid", "16", "--out", s(&png)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("64x64 photo"));
    assert!(png.is_file());
}
