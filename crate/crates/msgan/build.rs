//! Embeds a content hash of both crates' sources as `MSGAN_CODE_HASH`, in
//! the spirit of a git tree hash: every file contributes its relative path,
//! length and bytes, in sorted path order.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            collect(&p, out);
        } else if p.extension().is_some_and(|x| x == "rs" || x == "toml") {
            out.push(p);
        }
    }
}

fn main() {
    let here = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let crates = here.parent().unwrap().to_path_buf();
    let mut files = Vec::new();
    for c in ["core", "msgan"] {
        let root = crates.join(c);
        collect(&root.join("src"), &mut files);
        files.push(root.join("Cargo.toml"));
        if c == "msgan" {
            files.push(root.join("build.rs"));
        }
        println!("cargo:rerun-if-changed={}", root.join("src").display());
        println!("cargo:rerun-if-changed={}", root.join("Cargo.toml").display());
    }
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        let bytes = std::fs::read(f).unwrap_or_default();
        let rel = f.strip_prefix(&crates).unwrap_or(f);
        h.update(format!("blob {} {}\0", rel.display(), bytes.len()).as_bytes());
        h.update(&bytes);
    }
    let hex = hex::encode(h.finalize());
    println!("cargo:rustc-env=MSGAN_CODE_HASH={hex}");
}
