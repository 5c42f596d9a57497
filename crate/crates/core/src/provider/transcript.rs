use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CacheKey, ChatProvider, ChatRequest, ChatResponse, ProviderError, Usage};
use crate::io::write_atomic;

/// One recorded exchange. Transcript files hold one record per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub key: CacheKey,
    pub endpoint: String,
    #[serde(flatten)]
    pub request: ChatRequest,
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
}

/// Captures every successful exchange of the wrapped provider. Records are
/// keyed by request digest, so the saved file is sorted and independent of
/// completion order.
pub struct Recorder<P> {
    inner: P,
    records: Mutex<BTreeMap<CacheKey, TranscriptRecord>>,
}

impl<P: ChatProvider> Recorder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records
            .lock()
            .expect("transcript lock")
            .values()
            .cloned()
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ChatProvider> ChatProvider for Recorder<P> {
    fn endpoint_id(&self) -> &str {
        self.inner.endpoint_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        let key = CacheKey::for_request(self.inner.endpoint_id(), request);
        let record = TranscriptRecord {
            key: key.clone(),
            endpoint: self.inner.endpoint_id().to_string(),
            request: request.clone(),
            text: response.text.clone(),
            usage: response.usage,
        };
        self.records
            .lock()
            .expect("transcript lock")
            .insert(key, record);
        Ok(response)
    }
}

pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, ProviderError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                ProviderError::InvalidRequest(format!("{}:{}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}
