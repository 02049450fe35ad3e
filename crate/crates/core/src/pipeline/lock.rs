//! Per-slide lock files.
//!
//! A lock is `locks/{slide_id}.lock` created with `O_EXCL`, holding the
//! owner pid, a creation timestamp and a random token. It is stale once
//! older than the TTL or, on Linux, once the owning process has exited.
//! Stale locks are reclaimed under a short-lived `.reclaim` guard so two
//! processes can never both take over the same stale lock.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

const RECLAIM_GUARD_TTL: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockInfo {
    pub pid: u32,
    pub created_unix: u64,
    pub token: String,
}

/// Held lock; the file is removed on drop if it is still ours.
#[derive(Debug)]
pub struct SlideLock {
    path: PathBuf,
    token: String,
}

impl SlideLock {
    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for SlideLock {
    fn drop(&mut self) {
        if read_info(&self.path).is_some_and(|i| i.token == self.token) {
            let _ = fs::remove_file(&self.path);
        }
    }
}

pub fn lock_path(lock_dir: &Path, slide_id: &str) -> PathBuf {
    lock_dir.join(format!("{slide_id}.lock"))
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn new_token() -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("{:x}-{:x}-{:x}", std::process::id(), nanos, COUNTER.fetch_add(1, Ordering::Relaxed))
}

fn read_info(path: &Path) -> Option<LockInfo> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

#[cfg(target_os = "linux")]
fn process_alive(pid: u32) -> bool {
    Path::new("/proc").join(pid.to_string()).exists()
}

#[cfg(not(target_os = "linux"))]
fn process_alive(_pid: u32) -> bool {
    true
}

fn file_age(path: &Path) -> Option<Duration> {
    let modified = fs::metadata(path).ok()?.modified().ok()?;
    Some(SystemTime::now().duration_since(modified).unwrap_or_default())
}

/// Whether the lock at `path` may be reclaimed. Unreadable contents fall
/// back to the file's modification time so a half-written lock from a
/// crashed process still expires.
pub fn is_stale(path: &Path, ttl: Duration) -> bool {
    match read_info(path) {
        Some(info) => now_unix().saturating_sub(info.created_unix) > ttl.as_secs() || !process_alive(info.pid),
        None => file_age(path).is_some_and(|age| age > ttl),
    }
}

fn create_exclusive(path: &Path, info: &LockInfo) -> Result<bool> {
    match OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(mut f) => {
            f.write_all(&serde_json::to_vec(info)?)?;
            f.sync_all()?;
            Ok(true)
        }
        Err(e) if e.kind() == ErrorKind::AlreadyExists => Ok(false),
        Err(e) => Err(e.into()),
    }
}

/// Try to take the lock for `slide_id`. `Ok(None)` means another live owner
/// holds a fresh lock.
pub fn try_acquire(lock_dir: &Path, slide_id: &str, ttl: Duration) -> Result<Option<SlideLock>> {
    fs::create_dir_all(lock_dir)?;
    let path = lock_path(lock_dir, slide_id);
    let info = LockInfo { pid: std::process::id(), created_unix: now_unix(), token: new_token() };
    let lock = |p: PathBuf| SlideLock { path: p, token: info.token.clone() };
    if create_exclusive(&path, &info)? {
        return Ok(Some(lock(path)));
    }
    if !is_stale(&path, ttl) {
        return Ok(None);
    }

    let mut guard = path.clone().into_os_string();
    guard.push(".reclaim");
    let guard = PathBuf::from(guard);
    if file_age(&guard).is_some_and(|age| age > RECLAIM_GUARD_TTL) {
        let _ = fs::remove_file(&guard);
    }
    match OpenOptions::new().write(true).create_new(true).open(&guard) {
        Ok(_) => {}
        Err(e) if e.kind() == ErrorKind::AlreadyExists => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let result = (|| {
        // re-check under the guard: someone may have reclaimed it already
        if path.exists() && !is_stale(&path, ttl) {
            return Ok(None);
        }
        log::warn!("reclaiming stale lock {}", path.display());
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(create_exclusive(&path, &info)?.then(|| lock(path.clone())))
    })();
    let _ = fs::remove_file(&guard);
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOUR: Duration = Duration::from_secs(3600);

    #[test]
    fn exclusive_then_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = try_acquire(dir.path(), "s", HOUR).unwrap().expect("first acquire");
        assert!(try_acquire(dir.path(), "s", HOUR).unwrap().is_none());
        assert!(try_acquire(dir.path(), "t", HOUR).unwrap().is_some());
        let p = a.path().to_path_buf();
        drop(a);
        assert!(!p.exists());
        assert!(try_acquire(dir.path(), "s", HOUR).unwrap().is_some());
    }

    #[test]
    fn expired_lock_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        let old = LockInfo { pid: std::process::id(), created_unix: now_unix() - 7200, token: "old".into() };
        fs::write(lock_path(dir.path(), "s"), serde_json::to_vec(&old).unwrap()).unwrap();
        let l = try_acquire(dir.path(), "s", HOUR).unwrap().expect("reclaimed");
        assert_ne!(read_info(l.path()).unwrap().token, "old");
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn dead_owner_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        let mut child = std::process::Command::new("true").spawn().unwrap();
        let pid = child.id();
        child.wait().unwrap();
        let info = LockInfo { pid, created_unix: now_unix(), token: "dead".into() };
        fs::write(lock_path(dir.path(), "s"), serde_json::to_vec(&info).unwrap()).unwrap();
        assert!(try_acquire(dir.path(), "s", HOUR).unwrap().is_some());
    }

    #[test]
    fn stolen_lock_is_not_removed_by_old_owner() {
        let dir = tempfile::tempdir().unwrap();
        let a = try_acquire(dir.path(), "s", HOUR).unwrap().unwrap();
        let p = a.path().to_path_buf();
        let other = LockInfo { pid: std::process::id(), created_unix: now_unix(), token: "other".into() };
        fs::write(&p, serde_json::to_vec(&other).unwrap()).unwrap();
        drop(a);
        assert!(p.exists());
    }
}
