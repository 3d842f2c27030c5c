use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{BackendConfig, InferError};

/// SHA-256 over the request identity, as lowercase hex. The system prompt
/// and wire format are part of the identity since they change the answer
/// or the body layout.
pub fn cache_key(prompt: &str, backend: &BackendConfig) -> String {
    let material = json!([
        prompt,
        backend.model_name,
        backend.temperature,
        backend.max_tokens,
        backend.system_prompt,
        backend.wire.to_string(),
    ]);
    let digest = Sha256::digest(material.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One file per key; the file holds the raw response body.
#[derive(Debug)]
pub struct Cache {
    dir: PathBuf,
    seq: AtomicU64,
}

impl Cache {
    /// Creates the directory if needed and checks that it accepts writes.
    pub fn open(dir: &Path) -> Result<Self, InferError> {
        let unwritable = |source| InferError::CacheUnwritable {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(unwritable)?;
        let probe = dir.join(format!(".probe-{}", std::process::id()));
        fs::write(&probe, b"").map_err(unwritable)?;
        let _ = fs::remove_file(&probe);
        Ok(Self {
            dir: dir.to_path_buf(),
            seq: AtomicU64::new(0),
        })
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.path(key)).ok()
    }

    /// Write-then-rename, so readers never observe a partial body.
    pub fn put(&self, key: &str, body: &str) -> io::Result<()> {
        let n = self.seq.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, self.path(key))
    }
}
