#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(name)
}

pub fn mhi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhi"))
        .args(args)
        .output()
        .expect("run mhi")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

/// Small config for fast estimation: five normals, eight distances.
pub fn small_config(dir: &Path, normals: usize) -> PathBuf {
    let p = dir.join(format!("config_n{normals}.json"));
    write(
        &p,
        &format!(r#"{{"format_version": 1, "normals": {normals}, "distances": 8}}"#),
    );
    p
}

/// Estimates an MHI from the demo stereo pair into `dir/name`.
pub fn estimate_demo(dir: &Path, name: &str, normals: usize) -> PathBuf {
    let cfg = small_config(dir, normals);
    let out = dir.join(name);
    let o = mhi(&[
        "estimate",
        "--left",
        s(&demo("left.png")),
        "--right",
        s(&demo("right.png")),
        "--cams",
        s(&demo("cams.json")),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

pub fn zero_pose(dir: &Path) -> PathBuf {
    let p = dir.join("zero_pose.json");
    write(&p, r#"{"format_version": 1}"#);
    p
}

/// SHA-256 over the sorted relative paths and contents of every file under `root`.
pub fn dir_digest(root: &Path) -> String {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap().to_string_lossy().into_owned();
        h.update(rel.as_bytes());
        h.update([0]);
        let bytes = std::fs::read(&f).unwrap();
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    format!("{:x}", h.finalize())
}
