use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{cassette_key, Backend, ChatRequest, ChatResponse, GatewayError};

/// One recorded exchange; a cassette file holds one of these per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

impl CassetteEntry {
    pub fn new(request: ChatRequest, response: ChatResponse) -> Self {
        CassetteEntry {
            key: cassette_key(&request),
            request,
            response,
        }
    }
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteEntry>, GatewayError> {
    let file = File::open(path)
        .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Cassette(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
            GatewayError::Cassette(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Append-only cassette file that several recording backends may share.
pub struct CassetteWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl CassetteWriter {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| GatewayError::Cassette(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        Ok(CassetteWriter {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one entry as a single line under the file lock.
    pub fn append(&self, entry: &CassetteEntry) -> Result<(), GatewayError> {
        let mut line = serde_json::to_string(entry).map_err(|e| GatewayError::Cassette(e.to_string()))?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| GatewayError::Cassette(e.to_string()))
    }
}

/// Wraps a live backend and appends every successful exchange to a cassette.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    writer: Arc<CassetteWriter>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Ok(Self::shared(inner, Arc::new(CassetteWriter::open(path)?)))
    }

    pub fn shared(inner: Arc<dyn Backend>, writer: Arc<CassetteWriter>) -> Self {
        RecordingBackend { inner, writer }
    }

    pub fn path(&self) -> &Path {
        self.writer.path()
    }
}

impl Backend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let resp = self.inner.complete(req)?;
        self.writer.append(&CassetteEntry::new(req.clone(), resp.clone()))?;
        Ok(resp)
    }
}

/// Serves recorded responses by exact request digest. When a key was
/// recorded more than once the first entry wins.
pub struct ReplayBackend {
    id: String,
    entries: HashMap<String, ChatResponse>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let entries = read_cassette(path)?;
        Ok(Self::from_entries(format!("replay:{}", path.display()), entries))
    }

    pub fn from_entries(id: impl Into<String>, entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            map.entry(e.key).or_insert(e.response);
        }
        ReplayBackend {
            id: id.into(),
            entries: map,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = cassette_key(req);
        self.entries
            .get(&key)
            .cloned()
            .ok_or(GatewayError::ReplayMiss(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, FnBackend, Usage};

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            max_tokens: 16,
            stop: None,
        }
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let live: Arc<dyn Backend> = Arc::new(FnBackend::new("live", |r: &ChatRequest| {
            format!("echo: {}\n  trailing  ", r.messages[0].content)
        }));
        let rec = RecordingBackend::new(live, &path).unwrap();
        let a = rec.complete(&req("one")).unwrap();
        rec.complete(&req("two")).unwrap();

        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.len(), 2);
        let b = replay.complete(&req("one")).unwrap();
        assert_eq!(a.content.as_bytes(), b.content.as_bytes());
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_key_is_a_miss() {
        let replay = ReplayBackend::from_entries(
            "r",
            [CassetteEntry::new(
                req("known"),
                ChatResponse {
                    content: "x".into(),
                    usage: Usage::default(),
                    latency_ms: 0,
                    backend_id: "r".into(),
                },
            )],
        );
        assert!(replay.complete(&req("known")).is_ok());
        assert!(matches!(
            replay.complete(&req("unknown")),
            Err(GatewayError::ReplayMiss(_))
        ));
    }
}
