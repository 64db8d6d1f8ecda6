//! Structured event log: one JSON object per line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde_json::{Map, Value};

use crate::time::Nanos;

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// Time since the log was created.
    pub t: Nanos,
    pub event: String,
    pub fields: Map<String, Value>,
}

impl LogEntry {
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("t".into(), Value::from(self.t.as_secs_f64()));
        obj.insert("event".into(), Value::from(self.event.clone()));
        for (k, v) in &self.fields {
            obj.insert(k.clone(), v.clone());
        }
        Value::Object(obj)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.fields.get(key).and_then(Value::as_u64)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.fields.get(key).and_then(Value::as_str)
    }
}

pub struct EventLog {
    start: Instant,
    entries: Mutex<Vec<LogEntry>>,
    sink: Option<Mutex<BufWriter<File>>>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog {
            start: Instant::now(),
            entries: Mutex::new(Vec::new()),
            sink: None,
        }
    }

    /// Also appends every entry to `path` as JSON lines.
    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = File::create(path)?;
        Ok(EventLog {
            sink: Some(Mutex::new(BufWriter::new(file))),
            ..EventLog::in_memory()
        })
    }

    pub fn now(&self) -> Nanos {
        self.start.elapsed().into()
    }

    pub fn start(&self) -> Instant {
        self.start
    }

    /// Records `event` with the fields of `fields` (a JSON object; other
    /// values are stored under `value`).
    pub fn record(&self, event: &str, fields: Value) {
        let fields = match fields {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => Map::from_iter([("value".to_owned(), other)]),
        };
        let entry = LogEntry {
            t: self.now(),
            event: event.to_owned(),
            fields,
        };
        if let Some(sink) = &self.sink {
            let mut w = sink.lock().expect("event sink");
            let _ = writeln!(w, "{}", entry.to_json());
            let _ = w.flush();
        }
        self.entries.lock().expect("event log").push(entry);
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.entries.lock().expect("event log").clone()
    }

    pub fn count(&self, event: &str) -> usize {
        self.entries
            .lock()
            .expect("event log")
            .iter()
            .filter(|e| e.event == event)
            .count()
    }

    pub fn to_jsonl(&self) -> String {
        let entries = self.entries.lock().expect("event log");
        let mut out = String::new();
        for e in entries.iter() {
            out.push_str(&e.to_json().to_string());
            out.push('\n');
        }
        out
    }
}
