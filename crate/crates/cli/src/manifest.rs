use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Incomplete,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

/// Describes one run directory: what produced it and a digest of every
/// file in it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, Stage>,
    /// Relative path to SHA-256 (hex) of every other file in the directory.
    pub files: BTreeMap<String, String>,
}

pub fn digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            walk(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
        if rel == MANIFEST || rel.ends_with(".tmp") {
            continue;
        }
        out.insert(rel, digest(&path)?);
    }
    Ok(())
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or_default()
    ));
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: "crossfit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            stages: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        ))
    }

    pub fn set_stage(&mut self, name: &str, status: Status, step: Option<usize>) {
        self.stages.insert(name.into(), Stage { status, step });
    }

    pub fn is_complete(&self) -> bool {
        !self.stages.is_empty() && self.stages.values().all(|s| s.status == Status::Complete)
    }

    /// Re-digests the directory's files and writes the manifest.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        let mut files = BTreeMap::new();
        walk(dir, dir, &mut files)?;
        self.files = files;
        let text = serde_json::to_string_pretty(self)? + "\n";
        write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }

    /// Files whose contents no longer match their recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut bad = Vec::new();
        for (rel, want) in &self.files {
            let path = dir.join(rel);
            match digest(&path) {
                Ok(got) if &got == want => {}
                Ok(_) => bad.push(format!("{rel} (changed)")),
                Err(_) => bad.push(format!("{rel} (missing)")),
            }
        }
        if !bad.is_empty() {
            bail!("{} does not match its manifest: {}", dir.display(), bad.join(", "));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_records_digests_and_verify_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/a.txt"), "a").unwrap();
        let mut m = RunManifest::new("test", serde_json::json!({}));
        m.set_stage("s", Status::Complete, None);
        m.save(dir.path()).unwrap();
        assert_eq!(m.files.len(), 1);
        let back = RunManifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        fs::write(dir.path().join("sub/a.txt"), "b").unwrap();
        assert!(back.verify(dir.path()).is_err());
    }
}
