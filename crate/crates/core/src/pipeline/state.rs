use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{file_sha256, read_toml, write_toml};

pub const STATE_FILE: &str = "state.toml";

/// Hash of an artifact and of everything it was computed from. Inputs are
/// other artifacts (by relative path) or `config:<section>` digests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub sha256: String,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Missing,
    Stale(String),
}

impl PipelineState {
    pub fn load(out: &Path) -> Result<Self> {
        let path = out.join(STATE_FILE);
        if path.exists() {
            read_toml(path)
        } else {
            Ok(PipelineState::default())
        }
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_toml(out.join(STATE_FILE), self)
    }

    /// Current digest of an input key: a file hash or a recorded config digest.
    fn current(out: &Path, key: &str, configs: &BTreeMap<String, String>) -> Option<String> {
        if key.starts_with("config:") {
            return configs.get(key).cloned();
        }
        let path = out.join(key);
        if path.exists() {
            file_sha256(path).ok()
        } else {
            None
        }
    }

    pub fn freshness(
        &self,
        out: &Path,
        name: &str,
        configs: &BTreeMap<String, String>,
    ) -> Result<Freshness> {
        let path = out.join(name);
        let Some(rec) = self.artifacts.get(name) else {
            return Ok(if path.exists() {
                Freshness::Stale("not produced by this pipeline".into())
            } else {
                Freshness::Missing
            });
        };
        if !path.exists() {
            return Ok(Freshness::Missing);
        }
        if file_sha256(&path)? != rec.sha256 {
            return Ok(Freshness::Stale("file changed since it was written".into()));
        }
        for (key, digest) in &rec.inputs {
            match Self::current(out, key, configs) {
                Some(d) if d == *digest => {}
                Some(_) => return Ok(Freshness::Stale(format!("input '{key}' changed"))),
                None => return Ok(Freshness::Stale(format!("input '{key}' is missing"))),
            }
        }
        Ok(Freshness::Fresh)
    }

    /// Records `name` as produced from `inputs`.
    pub fn record(
        &mut self,
        out: &Path,
        name: &str,
        inputs: &[String],
        configs: &BTreeMap<String, String>,
    ) -> Result<()> {
        let mut map = BTreeMap::new();
        for key in inputs {
            let digest = Self::current(out, key, configs).ok_or_else(|| Error::StaleArtifact {
                path: PathBuf::from(key),
                reason: "input missing while recording".into(),
            })?;
            map.insert(key.clone(), digest);
        }
        self.artifacts.insert(
            name.to_string(),
            ArtifactRecord {
                sha256: file_sha256(out.join(name))?,
                inputs: map,
            },
        );
        Ok(())
    }
}
