//! On-disk response cache: one JSON file per key, written temp-then-rename.

use super::{ChatRequest, ChatResponse, GatewayError};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    request: ChatRequest,
    response: StoredResponse,
}

#[derive(Serialize, Deserialize)]
struct StoredResponse {
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| GatewayError::Io(format!("{}: {e}", dir.display())))?;
        Ok(DiskCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<ChatResponse>, GatewayError> {
        let bytes = match std::fs::read(self.path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Io(e.to_string())),
        };
        let entry: Entry = serde_json::from_slice(&bytes)
            .map_err(|_| GatewayError::CacheCorrupt(key.to_string()))?;
        if entry.key != key {
            return Err(GatewayError::CacheCorrupt(key.to_string()));
        }
        Ok(Some(ChatResponse {
            text: entry.response.text,
            prompt_tokens: entry.response.prompt_tokens,
            completion_tokens: entry.response.completion_tokens,
            latency_ms: entry.response.latency_ms,
            cached: true,
        }))
    }

    pub fn put(
        &self,
        key: &str,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<(), GatewayError> {
        let entry = Entry {
            key: key.to_string(),
            request: request.normalized(),
            response: StoredResponse {
                text: response.text.clone(),
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
                latency_ms: response.latency_ms,
            },
        };
        let io = |e: std::io::Error| GatewayError::Io(e.to_string());
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempfile_in(&self.dir)
            .map_err(io)?;
        serde_json::to_writer_pretty(&mut tmp, &entry)
            .map_err(|e| GatewayError::Io(e.to_string()))?;
        tmp.flush().map_err(io)?;
        tmp.persist(self.path(key)).map_err(|e| io(e.error))?;
        Ok(())
    }

    fn entries(&self) -> Result<Vec<PathBuf>, GatewayError> {
        let rd = std::fs::read_dir(&self.dir).map_err(|e| GatewayError::Io(e.to_string()))?;
        let mut out = Vec::new();
        for entry in rd {
            let p = entry.map_err(|e| GatewayError::Io(e.to_string()))?.path();
            let is_entry = p.extension().is_some_and(|e| e == "json")
                && p.file_name()
                    .is_some_and(|n| !n.to_string_lossy().starts_with('.'));
            if is_entry {
                out.push(p);
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> Result<CacheStats, GatewayError> {
        let mut s = CacheStats {
            entries: 0,
            bytes: 0,
        };
        for p in self.entries()? {
            s.entries += 1;
            s.bytes += std::fs::metadata(&p).map(|m| m.len()).unwrap_or(0);
        }
        Ok(s)
    }

    /// Remove every entry; returns how many were removed.
    pub fn clear(&self) -> Result<u64, GatewayError> {
        let mut n = 0;
        for p in self.entries()? {
            std::fs::remove_file(&p).map_err(|e| GatewayError::Io(e.to_string()))?;
            n += 1;
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Message;

    fn response(text: &str) -> ChatResponse {
        ChatResponse {
            text: text.into(),
            prompt_tokens: 4,
            completion_tokens: 5,
            latency_ms: 6,
            cached: false,
        }
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::open(dir.path()).unwrap();
        let req = super::super::ChatRequest::new("e", vec![Message::user("hi")]);
        let key = req.cache_key();
        assert_eq!(c.get(&key).unwrap(), None);
        c.put(&key, &req, &response("hello")).unwrap();
        let hit = c.get(&key).unwrap().unwrap();
        assert_eq!(hit.text, "hello");
        assert!(hit.cached);
        assert_eq!(c.stats().unwrap().entries, 1);
        assert_eq!(c.clear().unwrap(), 1);
        assert_eq!(c.get(&key).unwrap(), None);
    }

    #[test]
    fn leftover_temp_files_are_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::open(dir.path()).unwrap();
        std::fs::write(dir.path().join(".tmp-abc123"), b"{\"key\": \"trunc").unwrap();
        assert_eq!(c.stats().unwrap().entries, 0);
    }

    #[test]
    fn truncated_entry_is_reported_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::open(dir.path()).unwrap();
        std::fs::write(dir.path().join("deadbeef.json"), b"{\"key\": \"dead").unwrap();
        assert_eq!(
            c.get("deadbeef"),
            Err(GatewayError::CacheCorrupt("deadbeef".into()))
        );
    }
}
