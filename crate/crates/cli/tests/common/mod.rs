//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/episode_8")
}

pub fn kvaf(args: &[&str], threads: Option<&str>) -> (i32, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kvaf"));
    cmd.args(args).env_remove("KVAF_THREADS");
    if let Some(t) = threads {
        cmd.env("KVAF_THREADS", t);
    }
    let out = cmd.output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Runs every subcommand twice under different worker counts; all artifacts,
/// manifests included, must match byte for byte. The round trip uses the
/// 8-frame fixture, whose gripper only partly opens, so its gripper bound is
/// relaxed.
pub fn all_commands_deterministic(tmp: &Path) -> Result<(), String> {
    let cfg = write_config(
        tmp,
        &format!(
            "[synth]\nframes = 6\n[roundtrip]\nframes = 12\nmax_gripper_error = 1.0\n[train]\nsteps = 3\nsize = 16\nframes = 4\nepisodes = 2\n[paths]\nepisode = {:?}\n",
            fixture().to_str().unwrap()
        ),
    );
    // Inputs are part of the hashed config, so every run reads the same frames.
    let shared = tmp.join("shared");
    let (code, err) = kvaf(&["render", "--config", &cfg, "--out", shared.to_str().unwrap()], None);
    if code != 0 {
        return Err(format!("render exited {code}: {err}"));
    }
    let frames = shared.join("frames").to_string_lossy().into_owned();
    let run = |tag: &str, threads: &str| -> Result<PathBuf, String> {
        let root = tmp.join(tag);
        let o = |c: &str| root.join(c).to_string_lossy().into_owned();
        let frames = frames.clone();
        let steps: Vec<Vec<String>> = vec![
            vec!["synth".into(), "--seed".into(), "5".into(), "--out".into(), o("synth")],
            vec!["render".into(), "--out".into(), o("render")],
            vec!["recover".into(), "--input".into(), frames.clone(), "--out".into(), o("recover")],
            vec!["roundtrip".into(), "--out".into(), o("roundtrip")],
            vec!["event-target".into(), "--input".into(), frames.clone(), "--out".into(), o("event")],
            vec!["fuse-train".into(), "--seed".into(), "3".into(), "--out".into(), o("train")],
        ];
        for mut args in steps {
            args.extend(["--config".into(), cfg.clone()]);
            let argv: Vec<&str> = args.iter().map(String::as_str).collect();
            let (code, err) = kvaf(&argv, Some(threads));
            if code != 0 {
                return Err(format!("{} exited {code}: {err}", args[0]));
            }
        }
        Ok(root)
    };
    let a = snapshot(&run("t1", "1")?);
    let b = snapshot(&run("t4", "4")?);
    let c = snapshot(&run("t4b", "4")?);
    if a.len() < 20 {
        return Err(format!("only {} artifacts", a.len()));
    }
    for (name, other) in [("KVAF_THREADS=4", &b), ("second run", &c)] {
        if a.keys().ne(other.keys()) {
            return Err(format!("{name}: different file sets"));
        }
        if let Some(k) = a.keys().find(|k| a[*k] != other[*k]) {
            return Err(format!("{name}: {k} differs"));
        }
    }
    Ok(())
}
