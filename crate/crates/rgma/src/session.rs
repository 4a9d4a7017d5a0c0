//! CLI session state: at most one producer per type and one archiver,
//! each running as a background `rgmad` process and remembered by a small
//! JSON file in the session directory.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    /// Producer type name, or `archiver`.
    pub kind: String,
    pub component_id: String,
    pub table: String,
    pub address: String,
    pub pid: u32,
}

#[derive(Debug, Clone)]
pub struct SessionDir {
    dir: PathBuf,
}

impl SessionDir {
    pub fn new(dir: PathBuf) -> Self {
        SessionDir { dir }
    }

    /// `RGMA_SESSION_DIR`, else a directory under the system temp dir.
    pub fn from_env() -> Self {
        let dir = std::env::var_os("RGMA_SESSION_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| std::env::temp_dir().join("rgma-session"));
        SessionDir { dir }
    }

    pub fn dir(&self) -> &PathBuf {
        &self.dir
    }

    fn path(&self, kind: &str) -> PathBuf {
        self.dir.join(format!("{kind}.json"))
    }

    pub fn log_path(&self, kind: &str) -> PathBuf {
        self.dir.join(format!("{kind}.log"))
    }

    pub fn storage_path(&self, component: &str) -> PathBuf {
        self.dir.join(format!("{}.dat", component.replace(['/', '\\'], "_")))
    }

    pub fn get(&self, kind: &str) -> Option<SessionEntry> {
        let bytes = std::fs::read(self.path(kind)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, entry: &SessionEntry) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.path(&entry.kind), serde_json::to_vec_pretty(entry).expect("entry encodes"))
    }

    pub fn remove(&self, kind: &str) -> std::io::Result<()> {
        match std::fs::remove_file(self.path(kind)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    pub fn entries(&self) -> Vec<SessionEntry> {
        let Ok(rd) = std::fs::read_dir(&self.dir) else { return vec![] };
        let mut v: Vec<SessionEntry> = rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .filter_map(|e| serde_json::from_slice(&std::fs::read(e.path()).ok()?).ok())
            .collect();
        v.sort_by(|a, b| a.kind.cmp(&b.kind));
        v
    }
}
