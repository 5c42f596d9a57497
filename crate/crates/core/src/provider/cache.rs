use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{CacheKey, ChatProvider, ChatRequest, ChatResponse, ProviderError, Role, Usage};
use crate::io::write_atomic;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredResponse {
    text: String,
    usage: Usage,
}

/// Persistent response store: one JSON file per key, sharded by the first
/// two hex digits. Writes are atomic renames, so concurrent writers of the
/// same key leave one complete entry behind.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ProviderError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.dir.join(&k[..2.min(k.len())]).join(format!("{k}.json"))
    }

    fn get(&self, key: &CacheKey) -> Option<StoredResponse> {
        let text = fs::read_to_string(self.path_for(key)).ok()?;
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                tracing::warn!(key = %key, error = %e, "ignoring unreadable cache entry");
                None
            }
        }
    }

    fn put(&self, key: &CacheKey, value: &StoredResponse) -> Result<(), ProviderError> {
        let bytes = serde_json::to_vec(value).expect("cache entry serializes");
        write_atomic(&self.path_for(key), &bytes)
            .map_err(|e| ProviderError::Cache(format!("{key}: {e}")))
    }
}

/// Serves repeated requests from a [`ResponseCache`]. Optimizer requests
/// without a run nonce bypass the cache: they are sampled at high temperature
/// and meant to differ between runs.
pub struct CachedProvider<P> {
    inner: P,
    cache: ResponseCache,
    upstream_calls: AtomicUsize,
}

impl<P: ChatProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: ResponseCache) -> Self {
        Self {
            inner,
            cache,
            upstream_calls: AtomicUsize::new(0),
        }
    }

    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn cacheable(request: &ChatRequest) -> bool {
        request.role != Role::Optimizer || request.run_nonce.is_some()
    }
}

impl<P: ChatProvider> ChatProvider for CachedProvider<P> {
    fn endpoint_id(&self) -> &str {
        self.inner.endpoint_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if !Self::cacheable(request) {
            self.upstream_calls.fetch_add(1, Ordering::SeqCst);
            return self.inner.complete(request);
        }
        let key = CacheKey::for_request(self.inner.endpoint_id(), request);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(ChatResponse {
                text: hit.text,
                usage: hit.usage,
                from_cache: true,
            });
        }
        self.upstream_calls.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(request)?;
        self.cache.put(
            &key,
            &StoredResponse {
                text: response.text.clone(),
                usage: response.usage,
            },
        )?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{Matcher, ScriptEntry, ScriptedMock};

    fn mock() -> ScriptedMock {
        ScriptedMock::new(vec![
            ScriptEntry::text(Role::Judge, Matcher::Any, "judgment: 1"),
            ScriptEntry::text(Role::Optimizer, Matcher::Any, "new rule"),
        ])
    }

    #[test]
    fn second_identical_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let upstream = mock();
        let cached = CachedProvider::new(&upstream, ResponseCache::open(dir.path()).unwrap());
        let req = ChatRequest::new(Role::Judge, "sys", "taskA");
        let first = cached.complete(&req).unwrap();
        let second = cached.complete(&req).unwrap();
        assert!(!first.from_cache);
        assert!(second.from_cache);
        assert_eq!(first.text, second.text);
        assert_eq!(upstream.call_count(), 1);
    }

    #[test]
    fn cache_persists_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let req = ChatRequest::new(Role::Judge, "sys", "taskA");
        {
            let upstream = mock();
            let cached = CachedProvider::new(&upstream, ResponseCache::open(dir.path()).unwrap());
            cached.complete(&req).unwrap();
        }
        let upstream = mock();
        let cached = CachedProvider::new(&upstream, ResponseCache::open(dir.path()).unwrap());
        assert!(cached.complete(&req).unwrap().from_cache);
        assert_eq!(upstream.call_count(), 0);
    }

    #[test]
    fn optimizer_requests_bypass_cache_without_nonce() {
        let dir = tempfile::tempdir().unwrap();
        let upstream = mock();
        let cached = CachedProvider::new(&upstream, ResponseCache::open(dir.path()).unwrap());
        let req = ChatRequest::new(Role::Optimizer, "P_o", "go");
        cached.complete(&req).unwrap();
        assert!(!cached.complete(&req).unwrap().from_cache);
        assert_eq!(upstream.call_count(), 2);

        let with_nonce = req.with_run_nonce(Some("run-1".into()));
        cached.complete(&with_nonce).unwrap();
        assert!(cached.complete(&with_nonce).unwrap().from_cache);
        assert_eq!(upstream.call_count(), 3);
    }

    #[test]
    fn temperature_separates_entries() {
        let dir = tempfile::tempdir().unwrap();
        let upstream = mock();
        let cached = CachedProvider::new(&upstream, ResponseCache::open(dir.path()).unwrap());
        let req = ChatRequest::new(Role::Judge, "sys", "t");
        cached.complete(&req).unwrap();
        assert!(!cached.complete(&req.clone().with_temperature(0.7)).unwrap().from_cache);
    }

    #[test]
    fn concurrent_writers_leave_consistent_entries() {
        let dir = tempfile::tempdir().unwrap();
        let upstream = mock();
        let cached = CachedProvider::new(&upstream, ResponseCache::open(dir.path()).unwrap());
        std::thread::scope(|s| {
            for t in 0..8 {
                let cached = &cached;
                s.spawn(move || {
                    for i in 0..20 {
                        let req = ChatRequest::new(Role::Judge, "sys", format!("task{}", (i + t) % 10));
                        assert_eq!(cached.complete(&req).unwrap().text, "judgment: 1");
                    }
                });
            }
        });
        for i in 0..10 {
            let req = ChatRequest::new(Role::Judge, "sys", format!("task{i}"));
            assert!(cached.complete(&req).unwrap().from_cache);
        }
    }
}
