//! Response cache keyed by a content hash of the task and backend identity.
//! Optionally persisted as an append-only JSON-lines file that is reloaded
//! on open; safe for concurrent lookups and inserts.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OracleResponse;
use crate::template::UnitTask;

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: OracleResponse,
}

pub struct ResponseCache {
    entries: Mutex<HashMap<String, OracleResponse>>,
    sink: Option<Mutex<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache { entries: Mutex::new(HashMap::new()), sink: None }
    }

    /// Open a persistent cache, loading any prior entries. Corrupt lines
    /// (for example from a truncated write) are skipped.
    pub fn with_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(entry.key, entry.response);
                }
            }
        }
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ResponseCache { entries: Mutex::new(entries), sink: Some(Mutex::new(sink)) })
    }

    /// Cache key: template identity, rendered text, and backend fingerprint.
    pub fn key(task: &UnitTask, fingerprint: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(task.template_id.as_bytes());
        hasher.update([0]);
        hasher.update(task.template_version.to_le_bytes());
        hasher.update(task.rendered_text.as_bytes());
        hasher.update([0]);
        hasher.update(fingerprint.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<OracleResponse> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn put(&self, key: String, response: OracleResponse) {
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                response: response.clone(),
            })
            .expect("cache line serializes");
            let mut file = sink.lock().expect("cache sink lock");
            let _ = writeln!(file, "{line}");
        }
        self.entries.lock().expect("cache lock").insert(key, response);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
