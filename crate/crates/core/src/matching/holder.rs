use std::sync::{Arc, Mutex};

use arc_swap::ArcSwapOption;

use super::snapshot::Snapshot;
use crate::error::{Error, Result};

/// Current snapshot reference. Readers take a lock-free `Arc` and keep
/// using it for the whole request; writers are serialized.
#[derive(Default)]
pub struct SnapshotHolder {
    current: ArcSwapOption<Snapshot>,
    writer: Mutex<()>,
}

impl SnapshotHolder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&self) -> Option<Arc<Snapshot>> {
        self.current.load_full()
    }

    pub fn version(&self) -> Option<u64> {
        self.current.load().as_ref().map(|s| s.version)
    }

    /// Runs `build` with the current version under the writer lock and
    /// installs its result. Keeps the version check and the store atomic
    /// with respect to other writers.
    pub fn replace_with<F>(&self, build: F) -> Result<(Option<u64>, u64)>
    where
        F: FnOnce(Option<u64>) -> Result<Snapshot>,
    {
        let _guard = self.writer.lock().map_err(|_| Error::Internal("snapshot writer lock poisoned".into()))?;
        let previous = self.version();
        let next = build(previous)?;
        if let Some(current) = previous {
            if next.version <= current {
                return Err(Error::VersionRegression {
                    current,
                    offered: next.version,
                });
            }
        }
        let v = next.version;
        self.current.store(Some(Arc::new(next)));
        Ok((previous, v))
    }
}

/// Installs `snapshot`, returning the version it replaced.
pub fn swap_snapshot(holder: &SnapshotHolder, snapshot: Snapshot) -> Result<Option<u64>> {
    holder.replace_with(|_| Ok(snapshot)).map(|(prev, _)| prev)
}
