//! Reproducibility manifests written next to every output.

use std::path::Path;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::Failure;

/// SHA-256 over `blob <len>\0<content>`, the same framing git uses for blobs.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("sha256:{}", hex::encode(h.finalize()))
}

fn manifest_path(output: &Path) -> std::path::PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

pub fn write<C: Serialize>(output: &Path, command: &str, config: &C, input: &Path) -> Result<(), Failure> {
    let bytes = std::fs::read(input).map_err(|e| Failure::Io(format!("{}: {e}", input.display())))?;
    let m = json!({
        "tool": "lpcoreset",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "config": config,
        "input": { "path": input, "bytes": bytes.len(), "hash": content_hash(&bytes) },
    });
    store(output, &m)
}

pub fn write_synthetic<C: Serialize>(output: &Path, command: &str, config: &C) -> Result<(), Failure> {
    let m = json!({
        "tool": "lpcoreset",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "config": config,
        "input": { "synthetic": true },
    });
    store(output, &m)
}

fn store(output: &Path, m: &serde_json::Value) -> Result<(), Failure> {
    let path = manifest_path(output);
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}
