use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn nfsnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfsnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bundle_hash(dir: &Path) -> Vec<u8> {
    let mut h = Sha256::new();
    for f in ["manifest.json", "arrays.bin"] {
        h.update(std::fs::read(dir.join(f)).unwrap());
    }
    h.finalize().to_vec()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn help_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for sub in ["", "synth", "train", "restore", "nf2ff", "eval", "plot"] {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let out = nfsnet(&args);
        assert_eq!(code(&out), 0);
        let text = String::from_utf8(out.stdout).unwrap();
        let name = if sub.is_empty() { "help.txt".to_string() } else { format!("help_{sub}.txt") };
        let path = golden_dir().join(name);
        if update {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&path, &text).unwrap();
        } else {
            let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
            assert_eq!(text, want, "{} is stale; rerun with UPDATE_GOLDEN=1", path.display());
        }
    }
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let text = String::from_utf8(nfsnet(&["eval", "--help"]).stdout).unwrap();
    for flag in ["--factor", "--pad-factor", "--floor-db", "--alt-floor-db", "--snr", "--cs-lambda", "--cs-iters"] {
        let at = text.find(flag).unwrap_or_else(|| panic!("{flag} missing"));
        assert!(text[at..].contains("[default:"), "{flag}");
    }
}

#[test]
fn synth_is_deterministic_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = nfsnet(&["synth", "--scenes", "3", "--grid", "24", "--seed", "7", "--out", s(dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(bundle_hash(&a), bundle_hash(&b));

    let out = nfsnet(&["synth", "--scenes", "0", "--seed", "7", "--out", s(&tmp.path().join("c"))]);
    assert_eq!(code(&out), 2);
    let out = nfsnet(&["synth", "--scenes", "3", "--out", s(&tmp.path().join("c"))]);
    assert_eq!(code(&out), 2, "seed is mandatory");
}

#[test]
fn config_file_layers_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[synth]\nscenes = 2\ngrid = 20\n").unwrap();
    let out_dir = tmp.path().join("d");
    let out = nfsnet(&["--config", s(&cfg), "synth", "--grid", "22", "--seed", "1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["n_scenes"], 2);
    assert_eq!(manifest["config"]["grid_n"], 22);

    std::fs::write(&cfg, "[synth]\nscenez = 2\n").unwrap();
    let out = nfsnet(&["--config", s(&cfg), "synth", "--seed", "1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    std::fs::write(&cfg, "[synthesis]\nscenes = 2\n").unwrap();
    let out = nfsnet(&["--config", s(&cfg), "synth", "--seed", "1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_writes_params_and_loss_history() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = nfsnet(&["synth", "--scenes", "2", "--grid", "44", "--seed", "3", "--out", s(&data)]);
    assert_eq!(code(&out), 0);
    let net = tmp.path().join("net");
    let args = [
        "train",
        "--data",
        s(&data),
        "--channel",
        "phase",
        "--seed",
        "5",
        "--out",
        s(&net),
        "--epochs",
        "2",
        "--decay-every",
        "1",
        "--base-channels",
        "2",
        "--stages",
        "1",
    ];
    let out = nfsnet(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(net.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
    let first = bundle_hash(&net);
    assert_eq!(code(&nfsnet(&args)), 0);
    assert_eq!(bundle_hash(&net), first, "training is reproducible");

    let tuned = tmp.path().join("tuned");
    let resume = |channel: &str| {
        nfsnet(&[
            "train", "--data", s(&data), "--channel", channel, "--seed", "6", "--out", s(&tuned), "--epochs", "1",
            "--decay-every", "1", "--init", s(&net),
        ])
    };
    let out = resume("phase");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_ne!(bundle_hash(&tuned), first);
    assert_eq!(code(&resume("mag")), 2, "phase weights cannot seed a magnitude net");

    let out = nfsnet(&["train", "--data", s(&tmp.path().join("missing")), "--channel", "mag", "--seed", "1", "--out", s(&net)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn restore_nf2ff_plot_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let maps = tmp.path().join("maps");
    let out = nfsnet(&[
        "synth", "--scenes", "5", "--grid", "48", "--seed", "9", "--out", s(&data), "--field-maps", s(&maps),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scene = std::fs::read_dir(&maps)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.contains("_x"))
        .min()
        .unwrap();
    let full = maps.join(&scene);
    let low = maps.join(format!("{scene}_x3"));

    let restored = tmp.path().join("restored");
    let out = nfsnet(&["restore", "--in", s(&low), "--method", "bicubic", "--size", "48", "--out", s(&restored)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = nfsnet(&["restore", "--in", s(&low), "--out", s(&restored)]);
    assert_eq!(code(&out), 2, "nfsnet without models");

    let (gt, rc) = (tmp.path().join("gt.csv"), tmp.path().join("recon.csv"));
    for (src, dst) in [(&full, &gt), (&restored, &rc)] {
        let out = nfsnet(&["nf2ff", "--in", s(src), "--cut", "E", "--out", s(dst)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&gt).unwrap();
    assert_eq!(text.lines().next().unwrap(), "angle_deg,level_db");
    assert_eq!(text.lines().count(), 1 + 181);

    let svg = tmp.path().join("fig/overlay.svg");
    let overlay = format!("{},{}", s(&gt), s(&rc));
    let out = nfsnet(&["plot", "--overlay", &overlay, "--out", s(&svg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));

    let ev = tmp.path().join("ev");
    let out = nfsnet(&["eval", "--data", s(&data), "--study", "snr", "--snr", "10,20,30", "--out", s(&ev)]);
    assert_eq!(code(&out), 2, "snr study needs a seed");
    let out = nfsnet(&[
        "eval", "--data", s(&data), "--study", "snr", "--snr", "10,20,30", "--methods", "bicubic", "--seed", "4",
        "--out", s(&ev),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(ev.join("snr.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3);

    let out = nfsnet(&[
        "eval", "--data", s(&data), "--methods", "bicubic,identity", "--plots", "--out", s(&ev),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(ev.join("report.csv")).unwrap();
    let rows = report.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let held_out = manifest["split"]["test_scenes"].as_array().unwrap().len();
    assert_eq!(rows, 2 * held_out);
    assert_eq!(std::fs::read_dir(ev.join("plots")).unwrap().count(), 2 * held_out);
    let again = tmp.path().join("ev2");
    let out = nfsnet(&["eval", "--data", s(&data), "--methods", "bicubic,identity", "--out", s(&again)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(again.join("report.csv")).unwrap(), report.into_bytes());
}
