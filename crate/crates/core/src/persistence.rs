//! Append-only event log: one newline-delimited JSON stream per session,
//! with a recovery scan that drops a torn tail left by a crash.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::clock::Timestamp;
use crate::session::{EventPayload, SessionEvent, EVENT_SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("event for session `{session}` has sequence {got}, expected {expected}")]
    OutOfOrder { session: String, expected: u64, got: u64 },
    #[error("session `{0}` has no stream; the first event must be session_started")]
    UnknownStream(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("event log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt event log {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

impl LogError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LogError::Io(_))
    }
}

/// Failure injected into the next write, for crash testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailPoint {
    #[default]
    None,
    /// Write the full record, then fail before acknowledging it.
    AfterWrite,
    /// Write half a record, then fail.
    TornWrite,
}

#[derive(Debug, Default)]
struct Stream {
    events: Vec<SessionEvent>,
    needs_recovery: bool,
}

#[derive(Debug, Default)]
pub struct EventLog {
    dir: Option<PathBuf>,
    streams: RwLock<HashMap<String, Arc<Mutex<Stream>>>>,
    children: RwLock<BTreeMap<String, Vec<String>>>,
    fail_point: Mutex<FailPoint>,
}

fn valid_stream_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open a log directory, recovering every stream in it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, LogError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut loaded = Vec::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
                continue;
            }
            let events = recover_file(&path)?;
            if let Some(first) = events.first() {
                loaded.push((first.wall, first.session_id.clone(), first.child_id.clone(), events));
            }
        }
        loaded.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let log = Self { dir: Some(dir), ..Self::default() };
        {
            let mut streams = log.streams.write();
            let mut children = log.children.write();
            for (_, session, child, events) in loaded {
                children.entry(child).or_default().push(session.clone());
                streams.insert(session, Arc::new(Mutex::new(Stream { events, needs_recovery: false })));
            }
        }
        Ok(log)
    }

    pub fn inject_failure(&self, point: FailPoint) {
        *self.fail_point.lock() = point;
    }

    fn path_for(&self, session_id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{session_id}.ndjson")))
    }

    fn write_line(&self, session_id: &str, event: &SessionEvent) -> Result<(), LogError> {
        let Some(path) = self.path_for(session_id) else {
            return match std::mem::take(&mut *self.fail_point.lock()) {
                FailPoint::None => Ok(()),
                _ => Err(LogError::Io(std::io::Error::other("injected failure"))),
            };
        };
        let mut line = serde_json::to_string(event).map_err(|e| LogError::Contract(e.to_string()))?;
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        match std::mem::take(&mut *self.fail_point.lock()) {
            FailPoint::None => {}
            FailPoint::AfterWrite => {
                file.write_all(line.as_bytes())?;
                file.sync_data()?;
                return Err(LogError::Io(std::io::Error::other("injected failure after write")));
            }
            FailPoint::TornWrite => {
                file.write_all(&line.as_bytes()[..line.len() / 2])?;
                file.sync_data()?;
                return Err(LogError::Io(std::io::Error::other("injected torn write")));
            }
        }
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    /// Durably append `event`, whose `seq` must be the stream's next number.
    /// Re-recording an already stored identical event returns its number.
    pub fn record(&self, event: &SessionEvent) -> Result<u64, LogError> {
        if !valid_stream_id(&event.session_id) {
            return Err(LogError::Contract(format!("invalid session id `{}`", event.session_id)));
        }
        let stream = {
            let existing = self.streams.read().get(&event.session_id).cloned();
            match existing {
                Some(s) => s,
                None => {
                    if !matches!(event.payload, EventPayload::SessionStarted { .. }) {
                        return Err(LogError::UnknownStream(event.session_id.clone()));
                    }
                    let mut streams = self.streams.write();
                    let s = streams.entry(event.session_id.clone()).or_default().clone();
                    let mut children = self.children.write();
                    let list = children.entry(event.child_id.clone()).or_default();
                    if !list.contains(&event.session_id) {
                        list.push(event.session_id.clone());
                    }
                    s
                }
            }
        };
        let mut stream = stream.lock();
        if stream.needs_recovery {
            if let Some(path) = self.path_for(&event.session_id) {
                stream.events = if path.exists() { recover_file(&path)? } else { Vec::new() };
            }
            stream.needs_recovery = false;
        }
        let next = stream.events.len() as u64;
        if event.seq < next {
            return if stream.events[event.seq as usize] == *event {
                Ok(event.seq)
            } else {
                Err(LogError::Contract(format!(
                    "sequence {} of session `{}` is already taken by a different event",
                    event.seq, event.session_id
                )))
            };
        }
        if event.seq > next {
            return Err(LogError::OutOfOrder { session: event.session_id.clone(), expected: next, got: event.seq });
        }
        if let Some(first) = stream.events.first() {
            if first.child_id != event.child_id {
                return Err(LogError::Contract(format!("session `{}` belongs to another child", event.session_id)));
            }
            if matches!(event.payload, EventPayload::SessionStarted { .. }) {
                return Err(LogError::Contract(format!("session `{}` already started", event.session_id)));
            }
        }
        if let Err(e) = self.write_line(&event.session_id, event) {
            stream.needs_recovery = true;
            return Err(e);
        }
        stream.events.push(event.clone());
        Ok(event.seq)
    }

    /// Build the next event of a stream and record it.
    pub fn append(
        &self,
        session_id: &str,
        child_id: &str,
        payload: EventPayload,
        at: Timestamp,
    ) -> Result<SessionEvent, LogError> {
        let seq = self.next_seq(session_id);
        let event = SessionEvent {
            v: EVENT_SCHEMA_VERSION,
            seq,
            session_id: session_id.to_string(),
            child_id: child_id.to_string(),
            mono_ns: at.mono_ns,
            wall: at.wall,
            payload,
        };
        self.record(&event)?;
        Ok(event)
    }

    pub fn next_seq(&self, session_id: &str) -> u64 {
        self.streams.read().get(session_id).map_or(0, |s| s.lock().events.len() as u64)
    }

    pub fn stream(&self, session_id: &str) -> Vec<SessionEvent> {
        self.streams.read().get(session_id).map(|s| s.lock().events.clone()).unwrap_or_default()
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.children.read().values().flatten().cloned().collect()
    }

    /// Session ids of one child, in start order.
    pub fn sessions_for_child(&self, child_id: &str) -> Vec<String> {
        self.children.read().get(child_id).cloned().unwrap_or_default()
    }

    /// Snapshot of every stream of one child, in start order.
    pub fn child_streams(&self, child_id: &str) -> Vec<Vec<SessionEvent>> {
        self.sessions_for_child(child_id).iter().map(|s| self.stream(s)).collect()
    }
}

/// Read a stream file, truncating a torn final record.
fn recover_file(path: &Path) -> Result<Vec<SessionEvent>, LogError> {
    let bytes = std::fs::read(path)?;
    let mut events: Vec<SessionEvent> = Vec::new();
    let mut good_len = 0usize;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        let Some(rel) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            tracing::warn!(path = %path.display(), "dropping torn record at end of stream");
            break;
        };
        line_no += 1;
        let line = &bytes[offset..offset + rel];
        let end = offset + rel + 1;
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<SessionEvent>(s).map_err(|e| e.to_string()));
        match parsed {
            Ok(ev) => {
                let expected = events.len() as u64;
                if ev.seq < expected && events[ev.seq as usize] == ev {
                    // A write that was not acknowledged and then retried.
                } else if ev.seq != expected {
                    return Err(LogError::Corrupt {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!("sequence {} where {expected} was expected", ev.seq),
                    });
                } else {
                    events.push(ev);
                }
                good_len = end;
            }
            Err(message) if end == bytes.len() => {
                tracing::warn!(path = %path.display(), %message, "dropping unreadable final record");
                break;
            }
            Err(message) => return Err(LogError::Corrupt { path: path.to_path_buf(), line: line_no, message }),
        }
        offset = end;
    }
    if good_len < bytes.len() {
        let file = File::options().write(true).open(path)?;
        file.set_len(good_len as u64)?;
        file.sync_data()?;
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, SteppingClock};

    fn started(session: &str) -> EventPayload {
        EventPayload::SessionStarted {
            session_id: session.into(),
            child_id: "c".into(),
            book_id: "b".into(),
            book_title: "B".into(),
            page_count: 3,
            greeting: true,
            profile: None,
        }
    }

    fn page(i: usize) -> EventPayload {
        EventPayload::PageShown { page_index: i, audio_key: None }
    }

    #[test]
    fn sequences_start_at_zero_and_increase() {
        let clock = SteppingClock::fixture();
        let log = EventLog::in_memory();
        assert_eq!(log.append("s", "c", started("s"), clock.now()).unwrap().seq, 0);
        assert_eq!(log.append("s", "c", page(0), clock.now()).unwrap().seq, 1);
        assert_eq!(log.append("s", "c", page(1), clock.now()).unwrap().seq, 2);
    }

    #[test]
    fn stream_must_start_with_session_started() {
        let clock = SteppingClock::fixture();
        let log = EventLog::in_memory();
        assert!(matches!(log.append("s", "c", page(0), clock.now()), Err(LogError::UnknownStream(_))));
    }

    #[test]
    fn out_of_order_and_idempotent_retry() {
        let clock = SteppingClock::fixture();
        let log = EventLog::in_memory();
        let first = log.append("s", "c", started("s"), clock.now()).unwrap();
        assert_eq!(log.record(&first).unwrap(), 0);
        let mut skip = first.clone();
        skip.seq = 5;
        skip.payload = page(0);
        assert!(matches!(log.record(&skip), Err(LogError::OutOfOrder { expected: 1, got: 5, .. })));
        let mut clash = first;
        clash.payload = page(0);
        assert!(matches!(log.record(&clash), Err(LogError::Contract(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clock = SteppingClock::fixture();
        {
            let log = EventLog::open(dir.path()).unwrap();
            log.append("s1", "c", started("s1"), clock.now()).unwrap();
            log.append("s1", "c", page(0), clock.now()).unwrap();
            log.append("s2", "c", started("s2"), clock.now()).unwrap();
        }
        let log = EventLog::open(dir.path()).unwrap();
        assert_eq!(log.stream("s1").len(), 2);
        assert_eq!(log.sessions_for_child("c"), ["s1", "s2"]);
        assert_eq!(log.next_seq("s1"), 2);
    }

    #[test]
    fn crash_after_write_leaves_no_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let clock = SteppingClock::fixture();
        let log = EventLog::open(dir.path()).unwrap();
        log.append("s", "c", started("s"), clock.now()).unwrap();
        let ev = SessionEvent {
            v: EVENT_SCHEMA_VERSION,
            seq: 1,
            session_id: "s".into(),
            child_id: "c".into(),
            mono_ns: 5,
            wall: clock.now().wall,
            payload: page(0),
        };
        log.inject_failure(FailPoint::AfterWrite);
        let err = log.record(&ev).unwrap_err();
        assert!(err.is_retryable());
        // Retry in the same process: the recovered stream already holds it.
        assert_eq!(log.record(&ev).unwrap(), 1);
        drop(log);
        let reopened = EventLog::open(dir.path()).unwrap();
        let seqs: Vec<u64> = reopened.stream("s").iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [0, 1]);
        let raw = std::fs::read_to_string(dir.path().join("s.ndjson")).unwrap();
        assert_eq!(raw.lines().count(), 2);
    }

    #[test]
    fn crash_mid_write_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let clock = SteppingClock::fixture();
        {
            let log = EventLog::open(dir.path()).unwrap();
            log.append("s", "c", started("s"), clock.now()).unwrap();
            log.inject_failure(FailPoint::TornWrite);
            assert!(log.append("s", "c", page(0), clock.now()).is_err());
        }
        let log = EventLog::open(dir.path()).unwrap();
        assert_eq!(log.stream("s").len(), 1);
        let again = log.append("s", "c", page(0), clock.now()).unwrap();
        assert_eq!(again.seq, 1);
        let reopened = EventLog::open(dir.path()).unwrap();
        assert_eq!(reopened.stream("s").len(), 2);
    }

    #[test]
    fn rejects_path_like_session_ids() {
        let clock = SteppingClock::fixture();
        let log = EventLog::in_memory();
        assert!(matches!(log.append("../x", "c", started("../x"), clock.now()), Err(LogError::Contract(_))));
    }
}
