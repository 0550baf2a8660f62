use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::stage::SleepStage;

/// One image in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub subject: String,
    pub night: u32,
    pub epoch_index: usize,
    pub label: SleepStage,
    pub image_path: PathBuf,
}

impl ManifestRecord {
    pub fn make_id(subject: &str, night: u32, epoch_index: usize) -> String {
        format!("{subject}_{night}_{epoch_index}")
    }
}

/// Ordered list of records; order defines row alignment of every tensor
/// produced from the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self, DatasetError> {
        let m = Manifest { records };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_unique_ids(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    /// Records whose subject is in `subjects`, keeping order.
    pub fn filter_subjects(&self, subjects: &[String]) -> Manifest {
        Manifest {
            records: self
                .records
                .iter()
                .filter(|r| subjects.contains(&r.subject))
                .cloned()
                .collect(),
        }
    }

    /// Distinct subjects in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.subject) {
                out.push(r.subject.clone());
            }
        }
        out
    }

    pub fn class_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for r in &self.records {
            c[r.label.index()] += 1;
        }
        c
    }

    /// Read JSONL; relative image paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::Io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut r: ManifestRecord = serde_json::from_str(line).map_err(|e| DatasetError::MalformedManifest {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if r.image_path.is_relative() {
                r.image_path = base.join(&r.image_path);
            }
            records.push(r);
        }
        Manifest::new(records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let io = |e| DatasetError::Io(path.display().to_string(), e);
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    /// Every referenced image exists on disk.
    pub fn check_files(&self) -> Result<(), DatasetError> {
        for r in &self.records {
            if !r.image_path.is_file() {
                return Err(DatasetError::MissingImage(r.image_path.display().to_string()));
            }
        }
        Ok(())
    }
}
