use std::path::Path;
use std::process::{Command, Output};

use accentnet::dataset::{load_wav, write_wav, AudioClip, WavFormat};

fn accentnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accentnet"))
        .current_dir(dir)
        .env_remove("ACCENT_CACHE_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tone(freq: f64, secs: f64, channels: usize, sr: u32) -> AudioClip {
    let n = (secs * sr as f64) as usize;
    let ch = (0..channels)
        .map(|c| {
            (0..n)
                .map(|t| (0.4 * (2.0 * std::f64::consts::PI * freq * t as f64 / sr as f64 + c as f64).sin()) as f32)
                .collect()
        })
        .collect();
    AudioClip::new(ch, sr).unwrap()
}

/// Six short tone clips at 16 kHz, one per accent.
fn corpus(dir: &Path) {
    let mut manifest = String::from("path,accent,age_group,gender\n");
    for a in 0..6 {
        let name = format!("clip{a}.wav");
        write_wav(&dir.join(&name), &tone(220.0 * (a + 1) as f64, 2.0, 1, 16_000), WavFormat::Pcm16).unwrap();
        manifest.push_str(&format!("{name},{a},{},{}\n", a % 5, a % 2));
    }
    std::fs::write(dir.join("manifest.csv"), manifest).unwrap();
}

#[test]
fn inspect_reports_counts_and_rejects_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let o = accentnet(dir.path(), &["inspect", "densenet121", "--classes", "1000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("(7.98M)"), "{}", stdout(&o));

    let o = accentnet(dir.path(), &["inspect", "mpsa"]);
    let table = stdout(&o);
    for cell in ["32x256", "448", "208", "976", "488", "2024", "1012", "1396", "2x16"] {
        assert!(table.contains(cell), "missing {cell} in\n{table}");
    }

    let o = accentnet(dir.path(), &["inspect", "resnet50"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("densenet121") && stderr(&o).contains("mpsa"));
}

#[test]
fn train_echoes_defaults_and_applies_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let o = accentnet(dir.path(), &["train", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("epochs=128") && out.contains("batch_size=16") && out.contains("learning_rate=0.0001"), "{out}");
    assert!(out.contains("model=mpsa "));

    std::fs::write(dir.path().join("run.toml"), "model = \"densenet121\"\n[train]\nepochs = 5\nbatch_size = 4\n").unwrap();
    let o = accentnet(dir.path(), &["--config", "run.toml", "train", "--dry-run", "--epochs", "7"]);
    let out = stdout(&o);
    assert!(out.contains("model=densenet121") && out.contains("epochs=7") && out.contains("batch_size=4"), "{out}");

    let o = accentnet(dir.path(), &["train", "--dry-run", "--task-weights", "0.5,0.6,0.1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = accentnet(dir.path(), &["--config", "missing.toml", "train", "--dry-run"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn preprocess_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "path,accent,age_group,gender\n").unwrap();
    let o = accentnet(dir.path(), &["preprocess", "empty.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("0 processed"), "{}", stdout(&o));

    write_wav(&dir.path().join("short.wav"), &tone(440.0, 3.0, 1, 44_100), WavFormat::Pcm16).unwrap();
    std::fs::write(dir.path().join("one.csv"), "path,accent,age_group,gender\nshort.wav,2,1,0\n").unwrap();
    let o = accentnet(dir.path(), &["--data-dir", "out", "preprocess", "one.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let clip = load_wav(&dir.path().join("out/short.wav")).unwrap();
    assert_eq!((clip.num_channels(), clip.sample_rate(), clip.len()), (2, 44_100, 264_600));

    std::fs::write(dir.path().join("bad.csv"), "path,accent,age_group,gender\nnope.wav,1,1,1\nshort.wav,2,1,0\n").unwrap();
    let o = accentnet(dir.path(), &["--data-dir", "bad", "preprocess", "bad.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.wav"));
    let o = accentnet(dir.path(), &["--data-dir", "bad", "preprocess", "bad.csv", "--keep-going"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("1 processed") && stdout(&o).contains("1 failed"), "{}", stdout(&o));
}

#[test]
fn augmentation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    for out in ["a", "b"] {
        let o = accentnet(dir.path(), &["--seed", "7", "--data-dir", out, "preprocess", "manifest.csv", "--augment", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let aug: Vec<_> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("_aug"))
        .collect();
    // 6 clips split 4/1/1; only the training clips get copies.
    assert_eq!(aug.len(), 8);
    for name in aug {
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    assert!(accentnet(d, &["preprocess", "manifest.csv"]).status.success());

    let o = accentnet(d, &["train", "--model", "mpsa-tiny", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run extract first"), "{}", stderr(&o));

    let o = accentnet(d, &["extract"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("4 records: 4 computed"), "{}", stdout(&o));
    let cached = std::fs::read_dir(d.join("cache")).unwrap().count();
    assert_eq!(cached, 6);
    let o = accentnet(d, &["extract"]);
    assert!(stdout(&o).contains("0 computed"), "{}", stdout(&o));

    let o = accentnet(d, &["train", "--model", "mpsa-tiny", "--epochs", "2", "--batch-size", "2", "--lr", "0.001"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = d.join("runs/run-0001");
    for f in ["config.toml", "log.csv", "last.tns", "last.toml", "best.tns", "best.toml"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let o = accentnet(d, &["train", "--model", "mpsa-tiny", "--epochs", "3", "--batch-size", "2", "--lr", "0.001", "--resume", "runs/run-0001/last.tns"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resumed = std::fs::read_to_string(d.join("runs/run-0002/log.csv")).unwrap();
    assert_eq!(resumed.lines().count(), 4);
    assert!(resumed.starts_with(&log));
    let o = accentnet(d, &["train", "--model", "densenet-tiny", "--epochs", "3", "--resume", "runs/run-0001/last.tns"]);
    assert_eq!(o.status.code(), Some(1));

    let ck = "runs/run-0001/last.tns";
    let o = accentnet(d, &["evaluate", ck, "--split", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for task in ["accent", "gender", "age"] {
        assert!(d.join(format!("reports/train_{task}.toml")).exists());
        let csv = std::fs::read_to_string(d.join(format!("reports/train_{task}_confusion.csv"))).unwrap();
        for row in csv.lines().skip(1) {
            let s: f64 = row.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-9, "{row}");
        }
    }
    let o = accentnet(d, &["evaluate", ck, "--split", "holdout"]);
    assert_eq!(o.status.code(), Some(1));

    write_wav(&d.join("probe.wav"), &tone(300.0, 1.5, 1, 22_050), WavFormat::Pcm16).unwrap();
    let a = accentnet(d, &["predict", ck, "probe.wav"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = accentnet(d, &["predict", ck, "probe.wav"]);
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    for task in ["accent", "gender", "age"] {
        let block: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with(&format!("{task}:")))
            .skip(1)
            .take_while(|l| l.starts_with("  "))
            .collect();
        let s: f64 = block.iter().map(|l| l.split_whitespace().last().unwrap().parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-4, "{task}: {s}");
    }
}
