//! Output files stamped with the program version and configuration hash.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
    command: String,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, resolved_config: &str, command: &str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            config_hash: sha256_hex(resolved_config),
            command: command.to_string(),
            written: Vec::new(),
        })
    }

    pub fn meta(&self) -> Value {
        json!({
            "program": "epichaos",
            "version": env!("CARGO_PKG_VERSION"),
            "library_version": epichaos::VERSION,
            "command": self.command,
            "config_sha256": self.config_hash,
        })
    }

    fn header(&self) -> String {
        format!(
            "# epichaos {} (library {})\n# command: {}\n# config-sha256: {}\n",
            env!("CARGO_PKG_VERSION"),
            epichaos::VERSION,
            self.command,
            self.config_hash
        )
    }

    /// Writes `body` (CSV text with its own header row) after the comment block.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, format!("{}{body}", self.header()))
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes a JSON object with a `meta` field added.
    pub fn json(&mut self, name: &str, mut value: Value) -> Result<()> {
        if let Value::Object(map) = &mut value {
            map.insert("meta".into(), self.meta());
        }
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&value)? + "\n";
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn files_carry_header_and_meta() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path(), "seed = 1\n", "test").unwrap();
        out.csv("a.csv", "x,y\n1,2\n").unwrap();
        out.json("b.json", json!({"k": 1})).unwrap();
        let a = fs::read_to_string(tmp.path().join("a.csv")).unwrap();
        assert!(a.starts_with("# epichaos "));
        assert!(a.contains(&format!("# config-sha256: {}", sha256_hex("seed = 1\n"))));
        assert!(a.ends_with("x,y\n1,2\n"));
        let b: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("b.json")).unwrap()).unwrap();
        assert_eq!(b["meta"]["config_sha256"], sha256_hex("seed = 1\n"));
        assert_eq!(out.written().len(), 2);
    }
}
