//! Dataset manifest: a JSON file listing every cloud with its path, label
//! and split, plus the corruption kind for corrupted sets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
    /// Corruption kind name for corrupted sets; absent for clean data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub clouds: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.clouds.iter().filter(move |e| e.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = Manifest {
            clouds: vec![
                ManifestEntry {
                    path: "a.xyz".into(),
                    label: 0,
                    split: Split::Train,
                    corruption: None,
                },
                ManifestEntry {
                    path: "b.xyz".into(),
                    label: 3,
                    split: Split::Test,
                    corruption: Some("gaussian".into()),
                },
            ],
        };
        manifest.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.clouds.len(), 2);
        assert_eq!(back.clouds[1].corruption.as_deref(), Some("gaussian"));
        assert_eq!(back.split(Split::Train).count(), 1);

        std::fs::write(
            &path,
            r#"{"clouds": [], "extra_key": 1}"#,
        )
        .unwrap();
        assert!(Manifest::load(&path).is_err());
    }
}
