//! Single-file persistence for a workbench.
//!
//! The store is one JSON file holding a full corpus document plus the
//! annotator tokens. Saves write a sibling temp file, fsync it and rename
//! it over the store, so a crash leaves either the old or the new state.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::document::{export_corpus, import_corpus, CorpusDocument, ExportOptions};
use crate::error::{Error, Result};
use crate::ids::AnnotatorId;
use crate::workbench::Workbench;

#[derive(Serialize, Deserialize)]
struct StoreFile {
    tokens: BTreeMap<AnnotatorId, String>,
    corpus: CorpusDocument,
}

#[derive(Debug, Clone)]
pub struct Store {
    path: PathBuf,
}

impl Store {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Store { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    /// Loads the workbench, or a fresh one with `config` if the file does
    /// not exist yet.
    pub fn load_or_init(&self, config: StudyConfig) -> Result<Workbench> {
        if !self.exists() {
            return Ok(Workbench::new(config));
        }
        self.load()
    }

    pub fn load(&self) -> Result<Workbench> {
        let text = fs::read_to_string(&self.path)
            .map_err(|e| Error::Io(format!("{}: {e}", self.path.display())))?;
        let file: StoreFile = serde_json::from_str(&text)?;
        let mut wb = import_corpus(&file.corpus)?;
        for (id, token) in file.tokens {
            wb.reissue_token(&id, token)?;
        }
        Ok(wb)
    }

    pub fn save(&self, wb: &Workbench) -> Result<()> {
        let file = StoreFile {
            tokens: wb.tokens.clone(),
            corpus: export_corpus(wb, ExportOptions::full()),
        };
        let json = serde_json::to_vec_pretty(&file)?;
        let dir = match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let name = self
            .path
            .file_name()
            .ok_or_else(|| Error::Io(format!("{} is not a file path", self.path.display())))?;
        let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&json)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        if let Ok(d) = fs::File::open(&dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::IngestOptions;

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path().join("study.json"));
        let mut wb = store.load_or_init(StudyConfig::default()).unwrap();
        wb.ingest("# C\n## S\nsome text\n", &IngestOptions::default())
            .unwrap();
        wb.register_annotator("ann".into(), "Ann", "secret-token-1".into())
            .unwrap();
        store.save(&wb).unwrap();
        let back = store.load().unwrap();
        assert_eq!(back, wb);
        assert_eq!(
            back.authenticate("secret-token-1"),
            Some(&AnnotatorId::from("ann"))
        );
        assert!(!dir.path().join(".study.json.tmp").exists());
    }

    #[test]
    fn missing_store_is_fresh() {
        let dir = tempfile::tempdir().unwrap();
        let wb = Store::new(dir.path().join("none.json"))
            .load_or_init(StudyConfig::default())
            .unwrap();
        assert!(wb.textbooks().is_empty());
    }
}
