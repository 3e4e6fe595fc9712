use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use tokio::sync::Mutex;

use frugal_core::pool::{split_train_test, Pool};
use frugal_core::{RunConfig, Session};

use crate::error::ApiError;

/// Environment variable naming the directory sessions are checkpointed to.
pub const STORE_DIR_ENV: &str = "FRUGAL_STORE_DIR";

#[derive(Debug)]
pub struct RegisteredPool {
    pub id: String,
    pub pool: Arc<Pool>,
}

#[derive(Debug)]
pub(crate) struct SessionEntry {
    pub session: Session,
    pub pool_id: String,
    pub checkpoint_dir: Option<PathBuf>,
}

impl SessionEntry {
    /// Writes `runlog.jsonl` and `labeled.json`, each via a temp file and
    /// rename so a crash never leaves a torn checkpoint.
    pub fn checkpoint(&self) -> std::io::Result<()> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        write_atomic(
            &dir.join("runlog.jsonl"),
            self.session.log().to_jsonl().as_bytes(),
        )?;
        let labeled = serde_json::to_vec_pretty(self.session.labeled().entries())
            .map_err(std::io::Error::other)?;
        write_atomic(&dir.join("labeled.json"), &labeled)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

/// Pool registry and live sessions. Cheap to clone.
#[derive(Debug, Clone, Default)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Debug, Default)]
struct Inner {
    pools: RwLock<HashMap<String, Arc<RegisteredPool>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    store_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(store_dir: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::new(Inner {
                store_dir,
                ..Inner::default()
            }),
        }
    }

    /// Reads the checkpoint directory from `FRUGAL_STORE_DIR`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(STORE_DIR_ENV).map(PathBuf::from))
    }

    pub fn store_dir(&self) -> Option<&Path> {
        self.inner.store_dir.as_deref()
    }

    pub fn register_pool(&self, pool: Pool) -> Arc<RegisteredPool> {
        let entry = Arc::new(RegisteredPool {
            id: uuid::Uuid::new_v4().simple().to_string(),
            pool: Arc::new(pool),
        });
        self.inner
            .pools
            .write()
            .insert(entry.id.clone(), entry.clone());
        entry
    }

    pub fn pool(&self, id: &str) -> Result<Arc<RegisteredPool>, ApiError> {
        self.inner
            .pools
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("pool", id))
    }

    pub fn pool_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.pools.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub(crate) fn session(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        self.inner
            .sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    /// Builds a session against a registered pool. Pools with complete
    /// ground truth are split so a held-out half can score every iteration;
    /// otherwise the whole pool is the labeling pool and EER stays absent.
    pub(crate) fn create_session(
        &self,
        pool: &RegisteredPool,
        config: &RunConfig,
    ) -> Result<(String, Arc<Mutex<SessionEntry>>), ApiError> {
        let (train, test) = match split_for_session(&pool.pool, config.split_seed)? {
            Some((train, test)) => (Arc::new(train), Some(Arc::new(test))),
            None => (pool.pool.clone(), None),
        };
        let session = Session::new(train, test, config, config.seed)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let entry = SessionEntry {
            session,
            pool_id: pool.id.clone(),
            checkpoint_dir: self.inner.store_dir.as_ref().map(|d| d.join(&id)),
        };
        entry
            .checkpoint()
            .map_err(|e| ApiError::internal(format!("checkpoint failed: {e}")))?;
        let entry = Arc::new(Mutex::new(entry));
        self.inner
            .sessions
            .write()
            .insert(id.clone(), entry.clone());
        Ok((id, entry))
    }
}

fn split_for_session(pool: &Pool, seed: u64) -> Result<Option<(Pool, Pool)>, ApiError> {
    let (neg, pos) = pool.class_counts();
    if !pool.has_truths() || neg < 2 || pos < 2 {
        return Ok(None);
    }
    let split = split_train_test(pool, seed)?;
    Ok(Some((split.train, split.test)))
}
