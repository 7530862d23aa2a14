//! Durable state under a data root.
//!
//! ```text
//! volumes/<volume_id>.vol          uploaded volume file, as received
//! sessions/<session_id>.json       session metadata and state, masks as RLE
//! ```
//! Every write goes to a temporary file that is renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{Session, SessionMeta, SessionState};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Serialize, Deserialize)]
struct SessionSnapshot {
    meta: SessionMeta,
    state: SessionState,
}

pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("volumes"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn volume_path(&self, id: &str) -> PathBuf {
        self.root.join("volumes").join(format!("{id}.vol"))
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    pub fn save_volume(&self, id: &str, bytes: &[u8]) -> Result<()> {
        let path = self.volume_path(id);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(())
    }

    /// Raw bytes of every stored volume, keyed by id.
    pub fn volumes(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("volumes"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "vol") {
                let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                out.push((id, fs::read(&path)?));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    pub fn save_session(&self, session: &Session) -> Result<()> {
        let snap = SessionSnapshot {
            meta: session.meta().clone(),
            state: session.state().clone(),
        };
        let bytes = serde_json::to_vec(&snap).map_err(|e| Error::InvalidRequest(e.to_string()))?;
        write_atomic(&self.session_path(session.id()), &bytes)?;
        Ok(())
    }

    /// Every readable session snapshot; unreadable files are logged and skipped.
    pub fn sessions(&self) -> Result<Vec<Session>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("sessions"))? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let parsed = fs::read(&path).map_err(Error::from).and_then(|b| {
                serde_json::from_slice::<SessionSnapshot>(&b).map_err(|e| Error::InvalidRequest(e.to_string()))
            });
            match parsed {
                Ok(snap) => {
                    let session = Session::restore(snap.meta, snap.state);
                    match session.audit() {
                        Ok(()) => out.push(session),
                        Err(e) => log::warn!("skipping inconsistent session {}: {e}", path.display()),
                    }
                }
                Err(e) => log::warn!("skipping unreadable session {}: {e}", path.display()),
            }
        }
        out.sort_by(|a, b| a.id().cmp(b.id()));
        Ok(out)
    }
}
