//! End-to-end runs of the command line tool on a tiny corpus.

use std::path::{Path, PathBuf};
use std::process::Command;

use weaksed::model::Checkpoint;
use weaksed::viz;

const TINY: &str = r#"
seed = 3

[datamix]
n_classes = 3
clips_per_snr = 12
snr_levels = [20.0]
clip_seconds = 1.0
event_seconds = [0.1, 0.3]
events_per_clip = [0, 3]
background = { kind = "pink", rms = 0.01 }

[features]
n_mels = 16

[model]
channel_widths = [4]

[training]
max_epochs = 1
batch_size = 4

[ablation]
folds = [0]
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn weaksed(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_weaksed")).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn mix_is_reproducible_and_stamped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(weaksed(&["mix", "--config", s(&cfg), "--out", s(&a)]), 0);
    assert_eq!(weaksed(&["mix", "--config", s(&cfg), "--out", s(&b)]), 0);

    let read = |d: &Path| std::fs::read(d.join("corpus/manifest.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let (ma, mb) = (json(&a.join("corpus/mix.json")), json(&b.join("corpus/mix.json")));
    assert_eq!(ma["details"]["manifest_hash"], mb["details"]["manifest_hash"]);
    assert_eq!(ma["config_hash"].as_str().unwrap().len(), 16);
    let wavs = std::fs::read_dir(a.join("corpus/audio")).unwrap().count();
    assert_eq!(wavs, 12);

    // A different seed gives a different corpus and a different hash.
    let c = dir.path().join("c");
    assert_eq!(weaksed(&["mix", "--config", s(&cfg), "--out", s(&c), "--seed", "4"]), 0);
    assert_ne!(read(&a), read(&c));
    assert_ne!(ma["config_hash"], json(&c.join("corpus/mix.json"))["config_hash"]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let no_bg = TINY.replace("background = { kind = \"pink\", rms = 0.01 }\n", "");
    let cfg = write_config(dir.path(), "no_bg.toml", &no_bg);
    let out = dir.path().join("out");
    assert_eq!(weaksed(&["mix", "--config", s(&cfg), "--out", s(&out)]), 2);

    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    assert_eq!(weaksed(&["train", "--config", s(&cfg), "--out", s(&out), "--head", "mean"]), 2);
    assert_eq!(weaksed(&["train", "--config", s(&cfg), "--out", s(&out), "--fold", "9"]), 2);
    let missing = dir.path().join("nope.toml");
    assert_eq!(weaksed(&["mix", "--config", s(&missing)]), 2);
    assert_eq!(weaksed(&["mix"]), 2);
}

#[test]
fn train_evaluate_and_visualize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("out");
    let o = s(&out);
    let c = s(&cfg);

    assert_eq!(weaksed(&["train", "--config", c, "--out", o, "--head", "gwrp", "--alpha", "0"]), 0);
    let gwrp = out.join("train/gwrp_alpha0_fold0/checkpoint.json");
    assert_eq!(Checkpoint::load(&gwrp).unwrap().head, "gwrp");
    assert_eq!(weaksed(&["evaluate", "--config", c, "--out", o, "--checkpoint", s(&gwrp)]), 0);
    let metrics = json(&out.join("evaluate/gwrp_alpha0_fold0_fold0/metrics.json"));
    assert!(metrics["micro_precision"].is_number());

    // Visualizing a non-attention head is unsupported.
    assert_eq!(
        weaksed(&["visualize", "--config", c, "--out", o, "--checkpoint", s(&gwrp), "--clip", "clip00000"]),
        2
    );

    // A checkpoint trained on other features does not match this corpus.
    let other = write_config(
        dir.path(),
        "other.toml",
        &TINY.replace("n_mels = 16", "n_mels = 24"),
    );
    let other_out = dir.path().join("other");
    assert_eq!(weaksed(&["train", "--config", s(&other), "--out", s(&other_out)]), 0);
    let foreign = other_out.join("train/2ap_alpha0.001_fold0/checkpoint.json");
    assert_eq!(weaksed(&["evaluate", "--config", c, "--out", o, "--checkpoint", s(&foreign)]), 2);

    assert_eq!(weaksed(&["train", "--config", c, "--out", o]), 0);
    let two_ap = out.join("train/2ap_alpha0.001_fold0/checkpoint.json");
    assert_eq!(
        weaksed(&["visualize", "--config", c, "--out", o, "--checkpoint", s(&two_ap), "--clip", "missing"]),
        2
    );
    assert_eq!(
        weaksed(&["visualize", "--config", c, "--out", o, "--checkpoint", s(&two_ap), "--clip", "clip00003"]),
        0
    );
    let vis = out.join("visualize/clip00003");
    let mut pngs: Vec<_> = std::fs::read_dir(&vis)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".png"))
        .collect();
    pngs.sort();
    assert_eq!(pngs.len(), viz::N_PANELS);
    assert!(vis.join(viz::DUMP_FILE).is_file());

    // Re-plotting the dump reproduces every panel byte for byte.
    let again = dir.path().join("again");
    let panels = viz::rerender(&vis.join(viz::DUMP_FILE), &again).unwrap();
    for p in &panels {
        let name = p.path.file_name().unwrap();
        assert_eq!(std::fs::read(&p.path).unwrap(), std::fs::read(vis.join(name)).unwrap());
    }
}

#[test]
fn ablate_writes_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("out");
    assert_eq!(weaksed(&["ablate", "--config", s(&cfg), "--out", s(&out)]), 0);
    let table = std::fs::read_to_string(out.join("ablation/table.md")).unwrap();
    for alpha in ["| 0 ", "| 0.001 ", "| 0.01 "] {
        assert!(table.lines().any(|l| l.contains(alpha)), "{alpha} missing from\n{table}");
    }
    let record = json(&out.join("ablation/ablate.json"));
    assert_eq!(record["details"]["cells"], 3);
}
