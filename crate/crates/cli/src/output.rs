//! Staged artifact writing: nothing lands in the output directory until every
//! file of a command has been produced.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Identity of a run, stamped into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    /// Hash of the command plus the effective config. Output location and
    /// worker count do not change results, so they are left out.
    pub fn new(command: &str, cfg: &RunConfig, seed: u64) -> Result<Self> {
        let mut canon = cfg.clone();
        canon.output_dir = None;
        canon.jobs = None;
        canon.seed = Some(seed);
        let body = serde_json::to_vec(&json!({ "command": command, "config": canon }))?;
        Ok(Stamp {
            command: command.to_string(),
            config_hash: hex::encode(Sha256::digest(&body)),
            seed,
        })
    }

    pub fn csv_comment(&self) -> String {
        format!("config_hash={} seed={} command={}", self.config_hash, self.seed, self.command)
    }

    pub fn provenance(&self) -> Vec<(&'static str, Value)> {
        vec![
            ("command", json!(self.command)),
            ("config_hash", json!(self.config_hash)),
            ("seed", json!(self.seed)),
        ]
    }

    pub fn header(&self) -> Value {
        json!(self)
    }

    /// `{command, config_hash, seed, <key>: payload}` as pretty JSON.
    pub fn wrap_json(&self, key: &str, payload: &impl Serialize) -> Result<Vec<u8>> {
        let mut obj = serde_json::Map::new();
        obj.insert("command".into(), json!(self.command));
        obj.insert("config_hash".into(), json!(self.config_hash));
        obj.insert("seed".into(), json!(self.seed));
        obj.insert(key.into(), serde_json::to_value(payload)?);
        let mut out = serde_json::to_vec_pretty(&Value::Object(obj))?;
        out.push(b'\n');
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Write every file to a temporary sibling, then rename them all into
    /// place. On failure, temporaries are dropped and already-renamed files
    /// removed.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let mut temps = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::Builder::new()
                .prefix(&format!(".{name}."))
                .tempfile_in(dir)
                .with_context(|| format!("staging {name}"))?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            temps.push((tmp, dir.join(name)));
        }
        let mut done: Vec<PathBuf> = Vec::with_capacity(temps.len());
        for (tmp, target) in temps {
            if let Err(e) = tmp.persist(&target) {
                for p in &done {
                    let _ = fs::remove_file(p);
                }
                return Err(e.error).with_context(|| format!("renaming into {}", target.display()));
            }
            done.push(target);
        }
        Ok(done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_placement() {
        let mut a = RunConfig::default();
        let b = RunConfig {
            output_dir: Some("elsewhere".into()),
            jobs: Some(8),
            ..RunConfig::default()
        };
        assert_eq!(Stamp::new("synth", &a, 1).unwrap().config_hash, Stamp::new("synth", &b, 1).unwrap().config_hash);
        assert_ne!(Stamp::new("synth", &a, 1).unwrap().config_hash, Stamp::new("synth", &a, 2).unwrap().config_hash);
        a.split = Some(Default::default());
        assert_ne!(Stamp::new("synth", &a, 1).unwrap().config_hash, Stamp::new("synth", &b, 1).unwrap().config_hash);
    }

    #[test]
    fn commit_writes_all_without_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staged::default();
        s.add("a.txt", b"one".to_vec());
        s.add("b.txt", b"two".to_vec());
        s.commit(dir.path()).unwrap();
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["a.txt", "b.txt"]);
    }
}
