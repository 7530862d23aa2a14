use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};

use super::{BridgeClient, BridgePredictor, Predictor, PredictorDescriptor};

struct Entry {
    predictor: Arc<dyn Predictor>,
    from_bridge: bool,
}

/// Available predictors, in registration order. Read-mostly: lookups take a
/// shared lock and registration only happens at start-up and on re-scan.
pub struct PredictorRegistry {
    entries: RwLock<Vec<Entry>>,
    bridge: Mutex<Option<Arc<BridgeClient>>>,
}

impl PredictorRegistry {
    /// A registry holding the built-in predictor.
    pub fn new(native: Arc<dyn Predictor>) -> Self {
        PredictorRegistry {
            entries: RwLock::new(vec![Entry {
                predictor: native,
                from_bridge: false,
            }]),
            bridge: Mutex::new(None),
        }
    }

    fn insert(&self, predictor: Arc<dyn Predictor>, from_bridge: bool) -> Result<()> {
        let desc = predictor.descriptor();
        desc.validate()?;
        let mut entries = self.entries.write();
        if entries.iter().any(|e| e.predictor.descriptor().id == desc.id) {
            log::warn!(
                "rejecting duplicate predictor id {:?}; keeping the first registration",
                desc.id
            );
            return Err(Error::DuplicatePredictorId(desc.id.clone()));
        }
        entries.push(Entry { predictor, from_bridge });
        Ok(())
    }

    /// Adds a predictor; a duplicate id is rejected and the first one kept.
    pub fn register(&self, predictor: Arc<dyn Predictor>) -> Result<()> {
        self.insert(predictor, false)
    }

    pub fn list(&self) -> Vec<PredictorDescriptor> {
        self.entries
            .read()
            .iter()
            .map(|e| e.predictor.descriptor().clone())
            .collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Predictor>> {
        self.entries
            .read()
            .iter()
            .find(|e| e.predictor.descriptor().id == id)
            .map(|e| e.predictor.clone())
            .ok_or_else(|| Error::UnknownPredictor(id.to_string()))
    }

    /// Drops predictors from any previous bridge, starts `command` and
    /// registers what its handshake advertises. Invalid or duplicate
    /// descriptors are logged and skipped. Returns how many were added.
    pub fn attach_bridge(&self, command: &str) -> Result<usize> {
        self.detach_bridge();
        let client = Arc::new(BridgeClient::spawn(command)?);
        let descriptors = client.hello()?;
        let mut added = 0;
        for desc in descriptors {
            let id = desc.id.clone();
            match self.insert(Arc::new(BridgePredictor::new(client.clone(), desc)), true) {
                Ok(()) => added += 1,
                Err(e) => log::warn!("bridge predictor {id:?} not registered: {e}"),
            }
        }
        *self.bridge.lock() = Some(client);
        Ok(added)
    }

    /// Removes every bridge-backed predictor and stops the bridge.
    pub fn detach_bridge(&self) {
        self.entries.write().retain(|e| !e.from_bridge);
        self.bridge.lock().take();
    }

    pub fn bridge_command(&self) -> Option<String> {
        self.bridge.lock().as_ref().map(|c| c.command().to_string())
    }
}
