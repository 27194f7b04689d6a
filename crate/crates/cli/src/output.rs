//! Atomic file output with a metadata sidecar per file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Writes `bytes` to `path` and a `<name>.meta.json` record holding the
/// content hash and the resolved configuration.
pub fn write_with_meta(path: &Path, bytes: &[u8], config: &serde_json::Value, extra: serde_json::Value) -> Result<(), CliError> {
    write_atomic(path, bytes)?;
    let meta = json!({
        "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "sha256": sha256_hex(bytes),
        "bytes": bytes.len(),
        "config": config,
        "info": extra,
    });
    let text = serde_json::to_string_pretty(&meta).expect("metadata serialises");
    write_atomic(&sidecar_path(path), text.as_bytes())
}

pub fn require_dir(dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io(format!("output directory {} does not exist", dir.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_records_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_with_meta(&p, b"x\n", &json!({}), json!(null)).unwrap();
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(meta["sha256"], sha256_hex(b"x\n"));
        assert!(!dir.path().join("a.csv.tmp").exists());
    }
}
