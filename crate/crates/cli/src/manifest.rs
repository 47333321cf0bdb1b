//! Line-delimited JSON shape manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::config_error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative paths are taken from the manifest's directory.
    pub mesh: PathBuf,
    pub class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut r: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| config_error(format!("manifest line {}: {e}", i + 1)))?;
            if r.id.is_empty() || r.id.contains(['/', '\\']) {
                return Err(config_error(format!("manifest line {}: bad id {:?}", i + 1, r.id)));
            }
            if !seen.insert(r.id.clone()) {
                return Err(config_error(format!("manifest line {}: duplicate id {:?}", i + 1, r.id)));
            }
            if r.mesh.is_relative() {
                r.mesh = base.join(&r.mesh);
            }
            records.push(r);
        }
        if records.is_empty() {
            return Err(config_error("manifest has no records"));
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))
            .map_err(|e| config_error(format!("{e:#}")))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Records carrying `split`, or all records when `split` is `None`.
    pub fn filter_split(self, split: Option<&str>) -> anyhow::Result<Self> {
        let Some(split) = split else { return Ok(self) };
        let records: Vec<_> = self.records.into_iter().filter(|r| r.split.as_deref() == Some(split)).collect();
        if records.is_empty() {
            return Err(config_error(format!("no manifest records in split {split:?}")));
        }
        Ok(Self { records })
    }

    pub fn num_classes(&self) -> usize {
        self.records.iter().map(|r| r.class + 1).max().unwrap_or(0)
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigError;

    #[test]
    fn parses_and_resolves_paths() {
        let text = "{\"id\":\"a\",\"mesh\":\"m/a.obj\",\"class\":2}\n\n{\"id\":\"b\",\"mesh\":\"/abs/b.obj\",\"class\":0,\"split\":\"train\"}\n";
        let m = Manifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.records[0].mesh, PathBuf::from("/data/m/a.obj"));
        assert_eq!(m.records[1].mesh, PathBuf::from("/abs/b.obj"));
        assert_eq!(m.num_classes(), 3);
        assert_eq!(m.clone().filter_split(Some("train")).unwrap().records.len(), 1);
        assert!(m.clone().filter_split(Some("test")).is_err());
        assert_eq!(Manifest::parse(&m.to_jsonl(), Path::new("/")).unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_and_junk() {
        for text in [
            "{\"id\":\"a\",\"mesh\":\"x\",\"class\":0}\n{\"id\":\"a\",\"mesh\":\"y\",\"class\":0}",
            "{\"id\":\"a\",\"mesh\":\"x\"}",
            "{\"id\":\"a/b\",\"mesh\":\"x\",\"class\":0}",
            "{\"id\":\"a\",\"mesh\":\"x\",\"class\":0,\"extra\":1}",
            "",
            "not json",
        ] {
            let e = Manifest::parse(text, Path::new(".")).unwrap_err();
            assert!(e.downcast_ref::<ConfigError>().is_some(), "{text}");
        }
    }
}
