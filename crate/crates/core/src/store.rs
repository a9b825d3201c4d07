//! File-backed registry of users, sessions, the class catalog, schedules,
//! parking blocks and the append-only video history.
//!
//! The store file is one JSON document followed by a checksum line
//! `#crc32:<8 hex>` covering the document bytes. Writes go to a temporary
//! sibling file that is renamed over the target.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Block, ClassEntry, SeedData};
use crate::password::{self, PasswordDigest, PolicyError};

pub const SESSION_DAYS: i64 = 14;
pub const MAX_USERNAME_LEN: usize = 64;
pub const CHECKSUM_PREFIX: &str = "#crc32:";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("username is already taken")]
    UsernameTaken,
    #[error("username must be 1 to {MAX_USERNAME_LEN} characters")]
    InvalidUsername,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid username or password")]
    InvalidCredentials,
    #[error("session is not valid")]
    SessionInvalid,
    #[error("session has expired")]
    SessionExpired,
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("unknown block {0}")]
    UnknownBlock(String),
    #[error("no video registered for block {0}")]
    NoVideoRegistered(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store: {0}")]
    CorruptStore(String),
}

impl StoreError {
    /// Stable machine-readable code for API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UsernameTaken => "UsernameTaken",
            StoreError::InvalidUsername => "InvalidUsername",
            StoreError::Policy(PolicyError::TooShort) => "PasswordTooShort",
            StoreError::Policy(PolicyError::SimilarToUsername) => "PasswordSimilarToUsername",
            StoreError::Policy(PolicyError::TooCommon) => "PasswordTooCommon",
            StoreError::Policy(PolicyError::AllNumeric) => "PasswordAllNumeric",
            StoreError::InvalidCredentials => "invalid_credentials",
            StoreError::SessionInvalid => "SessionInvalid",
            StoreError::SessionExpired => "SessionExpired",
            StoreError::UnknownUser(_) => "UnknownUser",
            StoreError::UnknownClass(_) => "UnknownClass",
            StoreError::UnknownBlock(_) => "UnknownBlock",
            StoreError::NoVideoRegistered(_) => "NoVideoRegistered",
            StoreError::InvalidRecord(_) => "InvalidRecord",
            StoreError::IoFailure { .. } => "IoFailure",
            StoreError::CorruptStore(_) => "CorruptStore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub username: String,
    pub password_digest: PasswordDigest,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub username: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub username: String,
    pub class_id: String,
    pub enrolled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub record_id: u64,
    pub block_id: String,
    pub frames_path: String,
    pub slot_map_path: String,
    pub reference_path: String,
    pub registered_at: DateTime<Utc>,
}

/// A catalog class together with the caller's Yes/No answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduledClass {
    #[serde(flatten)]
    pub class: ClassEntry,
    pub enrolled: bool,
}

/// The persisted document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreData {
    pub users: Vec<UserAccount>,
    pub sessions: Vec<Session>,
    pub classes: Vec<ClassEntry>,
    pub schedules: Vec<ScheduleEntry>,
    pub blocks: Vec<Block>,
    pub videos: Vec<VideoRecord>,
}

impl StoreData {
    fn user(&self, username: &str) -> Option<&UserAccount> {
        self.users.iter().find(|u| u.username == username)
    }

    fn class(&self, class_id: &str) -> Option<&ClassEntry> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    fn block(&self, block_id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.block_id == block_id)
    }

    fn next_record_id(&self) -> u64 {
        self.videos.last().map_or(1, |v| v.record_id + 1)
    }

    /// Serialized document plus checksum line.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_string_pretty(self).expect("store serialization is infallible");
        let crc = crc32fast::hash(json.as_bytes());
        format!("{json}\n{CHECKSUM_PREFIX}{crc:08x}\n").into_bytes()
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let corrupt = |m: &str| StoreError::CorruptStore(m.to_owned());
        let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
        let body = text.strip_suffix('\n').unwrap_or(text);
        let (json, trailer) = body
            .rsplit_once('\n')
            .ok_or_else(|| corrupt("missing checksum line"))?;
        let hex = trailer
            .strip_prefix(CHECKSUM_PREFIX)
            .ok_or_else(|| corrupt("missing checksum line"))?;
        let expected = u32::from_str_radix(hex, 16)
            .ok()
            .filter(|_| hex.len() == 8)
            .ok_or_else(|| corrupt("malformed checksum"))?;
        if crc32fast::hash(json.as_bytes()) != expected {
            return Err(corrupt("checksum mismatch"));
        }
        let data: StoreData =
            serde_json::from_str(json).map_err(|e| StoreError::CorruptStore(e.to_string()))?;
        Ok(data)
    }
}

fn new_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Concurrent handle over [`StoreData`]: mutations take the write lock,
/// reads share a consistent snapshot.
#[derive(Debug)]
pub struct Registry {
    data: RwLock<StoreData>,
    path: Option<PathBuf>,
    iterations: u32,
    persist_lock: Mutex<()>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Registry {
    pub fn in_memory() -> Self {
        Self::from_data(StoreData::default(), None)
    }

    pub fn from_data(data: StoreData, path: Option<PathBuf>) -> Self {
        Self {
            data: RwLock::new(data),
            path,
            iterations: password::DEFAULT_ITERATIONS,
            persist_lock: Mutex::new(()),
        }
    }

    /// Overrides the PBKDF2 iteration count for newly created digests.
    pub fn with_iterations(mut self, iterations: u32) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(|source| StoreError::IoFailure {
            path: path.to_owned(),
            source,
        })?;
        Ok(Self::from_data(StoreData::from_file_bytes(&bytes)?, Some(path.to_owned())))
    }

    /// Loads `path` if it exists, otherwise starts empty and persists there.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::from_data(StoreData::default(), Some(path.to_owned())))
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn read(&self) -> RwLockReadGuard<'_, StoreData> {
        self.data.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, StoreData> {
        self.data.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> StoreData {
        self.read().clone()
    }

    /// Writes the current state to the configured path; a no-op when in memory.
    pub fn persist(&self) -> Result<(), StoreError> {
        match &self.path {
            Some(path) => self.persist_to(path),
            None => Ok(()),
        }
    }

    pub fn persist_to(&self, path: &Path) -> Result<(), StoreError> {
        let _guard = self.persist_lock.lock().unwrap_or_else(|e| e.into_inner());
        let bytes = self.read().to_file_bytes();
        let io = |source| StoreError::IoFailure {
            path: path.to_owned(),
            source,
        };
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "store".into());
        let tmp = path.with_file_name(format!(
            ".{file_name}.{}.{}.tmp",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result.map_err(io)
    }

    pub fn apply_seed(&self, seed: &SeedData) -> Result<(), StoreError> {
        for block in &seed.blocks {
            self.upsert_block(block.clone())?;
        }
        for class in &seed.classes {
            self.upsert_class(class.clone())?;
        }
        Ok(())
    }

    pub fn upsert_block(&self, block: Block) -> Result<(), StoreError> {
        if block.block_id.is_empty() || block.slot_map_path.is_empty() {
            return Err(StoreError::InvalidRecord("block needs an id and a slot map path".into()));
        }
        let mut data = self.write();
        match data.blocks.iter_mut().find(|b| b.block_id == block.block_id) {
            Some(existing) => *existing = block,
            None => data.blocks.push(block),
        }
        data.blocks.sort_by(|a, b| a.block_id.cmp(&b.block_id));
        Ok(())
    }

    pub fn upsert_class(&self, class: ClassEntry) -> Result<(), StoreError> {
        if class.start_time >= class.end_time {
            return Err(StoreError::InvalidRecord(format!(
                "class {} starts at or after it ends",
                class.class_id
            )));
        }
        let mut data = self.write();
        if data.block(&class.home_block).is_none() {
            return Err(StoreError::UnknownBlock(class.home_block));
        }
        match data.classes.iter_mut().find(|c| c.class_id == class.class_id) {
            Some(existing) => *existing = class,
            None => data.classes.push(class),
        }
        data.classes.sort_by(|a, b| a.class_id.cmp(&b.class_id));
        Ok(())
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.read().blocks.clone()
    }

    pub fn classes(&self) -> Vec<ClassEntry> {
        self.read().classes.clone()
    }

    pub fn create_user(&self, username: &str, password: &str, now: DateTime<Utc>) -> Result<UserAccount, StoreError> {
        let len = username.chars().count();
        if len == 0 || len > MAX_USERNAME_LEN {
            return Err(StoreError::InvalidUsername);
        }
        if self.read().user(username).is_some() {
            return Err(StoreError::UsernameTaken);
        }
        password::check_policy(username, password)?;
        let account = UserAccount {
            username: username.to_owned(),
            password_digest: PasswordDigest::create(password, self.iterations),
            created_at: now,
        };
        let mut data = self.write();
        // Re-check under the write lock; hashing ran unlocked.
        if data.user(username).is_some() {
            return Err(StoreError::UsernameTaken);
        }
        data.users.push(account.clone());
        Ok(account)
    }

    /// Unknown users and wrong passwords fail identically.
    pub fn login(&self, username: &str, password: &str, now: DateTime<Utc>) -> Result<Session, StoreError> {
        let digest = self.read().user(username).map(|u| u.password_digest.clone());
        let ok = match digest {
            Some(d) => d.verify(password),
            None => {
                // Spend the same derivation time as a real check.
                let _ = PasswordDigest::with_salt(password, &[0u8; password::SALT_LEN], self.iterations);
                false
            }
        };
        if !ok {
            return Err(StoreError::InvalidCredentials);
        }
        let session = Session {
            token: new_token(),
            username: username.to_owned(),
            expires_at: now + Duration::days(SESSION_DAYS),
        };
        let mut data = self.write();
        data.sessions.retain(|s| s.expires_at > now);
        data.sessions.push(session.clone());
        Ok(session)
    }

    pub fn logout(&self, token: &str) {
        self.write().sessions.retain(|s| s.token != token);
    }

    /// The session's user, provided `now` is strictly before expiry.
    pub fn validate_session(&self, token: &str, now: DateTime<Utc>) -> Result<String, StoreError> {
        let data = self.read();
        let session = data
            .sessions
            .iter()
            .find(|s| s.token == token)
            .ok_or(StoreError::SessionInvalid)?;
        if now < session.expires_at {
            Ok(session.username.clone())
        } else {
            Err(StoreError::SessionExpired)
        }
    }

    /// Replaces the user's selections wholesale.
    pub fn set_schedule(&self, username: &str, selections: &BTreeMap<String, bool>) -> Result<(), StoreError> {
        let mut data = self.write();
        if data.user(username).is_none() {
            return Err(StoreError::UnknownUser(username.to_owned()));
        }
        if let Some(unknown) = selections.keys().find(|id| data.class(id).is_none()) {
            return Err(StoreError::UnknownClass(unknown.clone()));
        }
        data.schedules.retain(|e| e.username != username);
        data.schedules.extend(selections.iter().map(|(class_id, &enrolled)| ScheduleEntry {
            username: username.to_owned(),
            class_id: class_id.clone(),
            enrolled,
        }));
        data.schedules
            .sort_by(|a, b| (&a.username, &a.class_id).cmp(&(&b.username, &b.class_id)));
        Ok(())
    }

    /// Whole catalog annotated with the user's answers (absent means no).
    pub fn schedule(&self, username: &str) -> Result<Vec<ScheduledClass>, StoreError> {
        let data = self.read();
        if data.user(username).is_none() {
            return Err(StoreError::UnknownUser(username.to_owned()));
        }
        Ok(data
            .classes
            .iter()
            .map(|c| ScheduledClass {
                class: c.clone(),
                enrolled: data
                    .schedules
                    .iter()
                    .any(|e| e.username == username && e.class_id == c.class_id && e.enrolled),
            })
            .collect())
    }

    pub fn enrolled_classes(&self, username: &str) -> Result<Vec<ClassEntry>, StoreError> {
        Ok(self
            .schedule(username)?
            .into_iter()
            .filter(|s| s.enrolled)
            .map(|s| s.class)
            .collect())
    }

    /// Appends a record; the slot map path is taken from the block.
    pub fn register_video(
        &self,
        block_id: &str,
        frames_path: &str,
        reference_path: &str,
        now: DateTime<Utc>,
    ) -> Result<VideoRecord, StoreError> {
        if frames_path.is_empty() || reference_path.is_empty() {
            return Err(StoreError::InvalidRecord("video paths must be non-empty".into()));
        }
        let mut data = self.write();
        let block = data
            .block(block_id)
            .ok_or_else(|| StoreError::UnknownBlock(block_id.to_owned()))?;
        let record = VideoRecord {
            record_id: data.next_record_id(),
            block_id: block_id.to_owned(),
            frames_path: frames_path.to_owned(),
            slot_map_path: block.slot_map_path.clone(),
            reference_path: reference_path.to_owned(),
            registered_at: now,
        };
        data.videos.push(record.clone());
        Ok(record)
    }

    /// Highest record id for the block.
    pub fn latest_video(&self, block_id: &str) -> Result<VideoRecord, StoreError> {
        let data = self.read();
        if data.block(block_id).is_none() {
            return Err(StoreError::UnknownBlock(block_id.to_owned()));
        }
        data.videos
            .iter()
            .filter(|v| v.block_id == block_id)
            .max_by_key(|v| v.record_id)
            .cloned()
            .ok_or_else(|| StoreError::NoVideoRegistered(block_id.to_owned()))
    }

    pub fn videos(&self) -> Vec<VideoRecord> {
        self.read().videos.clone()
    }
}
