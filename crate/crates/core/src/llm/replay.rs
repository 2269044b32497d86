//! Record and replay of completions keyed by prompt hash.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, LlmError, LlmRequest};

/// One line of `llm.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    pub key: String,
    pub template: String,
    pub response: String,
}

/// Ordered records of one session.
#[derive(Debug, Default)]
pub struct ReplayStore {
    records: Mutex<Vec<ReplayRecord>>,
    file: Mutex<Option<File>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends every record to `path` as it is made, truncating first.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self {
            records: Mutex::new(Vec::new()),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn load(path: &Path) -> Result<Vec<ReplayRecord>, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Vec<ReplayRecord>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect()
    }

    /// Appends are serialized; the file sees whole lines only.
    pub fn append(&self, record: ReplayRecord) -> std::io::Result<()> {
        let mut records = self.records.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(f) = self.file.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        records.push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<ReplayRecord> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

/// Passes calls through to `inner`, recording every response.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    store: Arc<ReplayStore>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, store: Arc<ReplayStore>) -> Self {
        Self { inner, store }
    }
}

impl ChatBackend for RecordingBackend {
    fn name(&self) -> String {
        format!("record({})", self.inner.name())
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(request)?;
        self.store
            .append(ReplayRecord {
                key: request.key(),
                template: request.template.to_string(),
                response: response.clone(),
            })
            .map_err(|e| LlmError::Backend(format!("cannot record completion: {e}")))?;
        Ok(response)
    }
}

/// Serves recorded responses; a key seen several times is answered in
/// recording order. Never touches the network.
pub struct ReplayBackend {
    by_key: Mutex<HashMap<String, VecDeque<String>>>,
    name: String,
}

impl ReplayBackend {
    pub fn new(records: Vec<ReplayRecord>) -> Self {
        let mut by_key: HashMap<String, VecDeque<String>> = HashMap::new();
        for r in records {
            by_key.entry(r.key).or_default().push_back(r.response);
        }
        Self {
            by_key: Mutex::new(by_key),
            name: "replay".into(),
        }
    }

    /// Reports the name of the backend that made the recording, so a
    /// replayed transcript matches the original.
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl ChatBackend for ReplayBackend {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let key = request.key();
        let mut map = self.by_key.lock().unwrap_or_else(|p| p.into_inner());
        let queue = map.get_mut(&key);
        match queue {
            Some(q) if q.len() > 1 => Ok(q.pop_front().expect("non-empty")),
            // the last response for a key keeps serving repeats
            Some(q) if q.len() == 1 => Ok(q[0].clone()),
            _ => Err(LlmError::ReplayMiss {
                template: request.template.to_string(),
                key,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CallOrigin, ChatExchange, ChatParams, Message, Role, ScriptedBackend, TemplateId};

    fn req(text: &str) -> LlmRequest {
        LlmRequest {
            template: TemplateId::QuestionGen,
            exchange: ChatExchange {
                messages: vec![Message { role: Role::User, text: text.into() }],
                params: ChatParams { model_id: "m".into(), temperature: 0.0, max_tokens: 8, seed: Some(3) },
            },
            origin: CallOrigin::default(),
        }
    }

    #[test]
    fn record_to_disk_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s/llm.jsonl");
        let store = Arc::new(ReplayStore::create(&path).unwrap());
        let inner = Arc::new(
            ScriptedBackend::new()
                .push(TemplateId::QuestionGen, "one")
                .push(TemplateId::QuestionGen, "two"),
        );
        let rec = RecordingBackend::new(inner, store.clone());
        assert_eq!(rec.complete(&req("a")).unwrap(), "one");
        assert_eq!(rec.complete(&req("a")).unwrap(), "two");
        let loaded = ReplayStore::load(&path).unwrap();
        assert_eq!(loaded, store.records());
        let replay = ReplayBackend::new(loaded);
        assert_eq!(replay.complete(&req("a")).unwrap(), "one");
        assert_eq!(replay.complete(&req("a")).unwrap(), "two");
        assert!(matches!(replay.complete(&req("b")), Err(LlmError::ReplayMiss { .. })));
    }
}
