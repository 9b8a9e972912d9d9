//! Per-scene editing state: current poses, version counter, undo/redo.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use labelkit_core::geometry::RigidTransform;
use labelkit_core::ingest::Scene;

pub const UNDO_DEPTH: usize = 256;

/// One applied pose change, enough to replay it in either direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEdit {
    pub object_id: u16,
    pub before: RigidTransform,
    pub after: RigidTransform,
}

#[derive(Debug)]
pub struct SessionState {
    pub scene: Scene,
    /// Bumped on every pose mutation, including undo and redo.
    pub version: u64,
    undo: VecDeque<PoseEdit>,
    redo: Vec<PoseEdit>,
    pub dirty: bool,
}

impl SessionState {
    pub fn new(scene: Scene) -> Self {
        SessionState {
            scene,
            version: 0,
            undo: VecDeque::new(),
            redo: Vec::new(),
            dirty: false,
        }
    }

    pub fn pose(&self, object_id: u16) -> Option<RigidTransform> {
        self.scene.object(object_id).map(|o| o.pose_world)
    }

    fn set_pose(&mut self, object_id: u16, pose: RigidTransform) {
        if let Some(o) = self.scene.object_mut(object_id) {
            o.pose_world = pose;
        }
        self.version += 1;
        self.dirty = true;
    }

    /// Sets the pose and records the edit. Clears the redo stack. Returns `None`
    /// for an unknown object.
    pub fn apply(&mut self, object_id: u16, pose: RigidTransform) -> Option<u64> {
        let before = self.pose(object_id)?;
        self.set_pose(object_id, pose);
        if self.undo.len() == UNDO_DEPTH {
            self.undo.pop_front();
        }
        self.undo.push_back(PoseEdit {
            object_id,
            before,
            after: pose,
        });
        self.redo.clear();
        Some(self.version)
    }

    pub fn undo(&mut self) -> Option<PoseEdit> {
        let e = self.undo.pop_back()?;
        self.set_pose(e.object_id, e.before);
        self.redo.push(e);
        Some(e)
    }

    pub fn redo(&mut self) -> Option<PoseEdit> {
        let e = self.redo.pop()?;
        self.set_pose(e.object_id, e.after);
        self.undo.push_back(e);
        Some(e)
    }

    pub fn undo_len(&self) -> usize {
        self.undo.len()
    }

    pub fn redo_len(&self) -> usize {
        self.redo.len()
    }
}

/// A loaded scene plus its lock. Readers take the read lock briefly and copy
/// what they need, so renders never see a half-applied edit.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    /// Where `save` writes the scene config; `None` for in-memory scenes.
    pub config_path: Option<PathBuf>,
    state: RwLock<SessionState>,
    busy: AtomicBool,
}

/// Marks a long-running writer (refinement); dropped to release.
pub struct BusyGuard(Arc<Session>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

impl Session {
    pub fn new(id: impl Into<String>, scene: Scene, config_path: Option<PathBuf>) -> Self {
        Session {
            id: id.into(),
            config_path,
            state: RwLock::new(SessionState::new(scene)),
            busy: AtomicBool::new(false),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, SessionState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, SessionState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::Acquire)
    }

    pub fn try_begin(self: &Arc<Self>) -> Option<BusyGuard> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| BusyGuard(Arc::clone(self)))
    }
}
