//! Append-only event log with a session index.
//!
//! Every state change is one JSON line in `events.ndjson`. The index file
//! `index.ndjson` maps each session to the byte offset of its creation
//! event; it is derived data and is rebuilt whenever it disagrees with the
//! log. A final line without its newline is a torn write and is cut off when
//! the log is opened.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use fairprobe::engine::{Classification, EngineConfig};
use fairprobe::study::{Demographics, DisplayOrder, Explanation, Scenario, SurveyResponse, SCHEMA_VERSION};
use fairprobe::{Choice, TestId};
use serde::{Deserialize, Serialize};

use crate::config::ExplanationVariant;
use crate::error::{Result, ServiceError};

pub const LOG_FILE: &str = "events.ndjson";
pub const INDEX_FILE: &str = "index.ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema_version: u32,
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventBody {
    SessionCreated {
        session_id: String,
        scenario: Scenario,
        explanation_variant: ExplanationVariant,
        display_seed: u64,
        config: EngineConfig,
    },
    TestSelected {
        session_id: String,
        step: usize,
        test_id: TestId,
        display_order: DisplayOrder,
    },
    ResponseRecorded {
        session_id: String,
        test_id: TestId,
        choice: Choice,
        explanation: Explanation,
    },
    SessionCompleted {
        session_id: String,
        return_code: String,
        classification: Classification,
    },
    SessionAborted {
        session_id: String,
        reason: String,
    },
    DemographicsRecorded {
        session_id: String,
        demographics: Demographics,
    },
    SurveySubmitted {
        survey_id: String,
        response: SurveyResponse,
    },
}

impl EventBody {
    pub fn session_id(&self) -> Option<&str> {
        match self {
            EventBody::SessionCreated { session_id, .. }
            | EventBody::TestSelected { session_id, .. }
            | EventBody::ResponseRecorded { session_id, .. }
            | EventBody::SessionCompleted { session_id, .. }
            | EventBody::SessionAborted { session_id, .. }
            | EventBody::DemographicsRecorded { session_id, .. } => Some(session_id),
            EventBody::SurveySubmitted { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session_id: String,
    pub seq: u64,
    pub offset: u64,
}

pub struct EventLog {
    dir: PathBuf,
    log: File,
    index: File,
    len: u64,
    next_seq: u64,
    sync: bool,
    entries: Vec<IndexEntry>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("dir", &self.dir)
            .field("len", &self.len)
            .field("next_seq", &self.next_seq)
            .finish()
    }
}

impl EventLog {
    /// Opens (or creates) the log in `dir` and returns every intact event.
    pub fn open(dir: &Path, sync: bool) -> Result<(EventLog, Vec<Event>)> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new().read(true).append(true).create(true).open(&log_path)?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes)?;

        let intact = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if intact < bytes.len() {
            tracing::warn!(
                dropped = bytes.len() - intact,
                "discarding torn trailing write in {}",
                log_path.display()
            );
            log.set_len(intact as u64)?;
            log.sync_all()?;
        }

        let mut events = Vec::new();
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for (i, line) in bytes[..intact].split_inclusive(|&b| b == b'\n').enumerate() {
            let text = std::str::from_utf8(line).map_err(|e| ServiceError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !text.trim().is_empty() {
                let event: Event = serde_json::from_str(text).map_err(|e| ServiceError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if event.seq != events.len() as u64 {
                    return Err(ServiceError::Corrupt {
                        line: i + 1,
                        message: format!("expected sequence number {}, found {}", events.len(), event.seq),
                    });
                }
                if let EventBody::SessionCreated { session_id, .. } = &event.body {
                    entries.push(IndexEntry {
                        session_id: session_id.clone(),
                        seq: event.seq,
                        offset,
                    });
                }
                events.push(event);
            }
            offset += line.len() as u64;
        }

        let index_path = dir.join(INDEX_FILE);
        let on_disk: Option<Vec<IndexEntry>> = std::fs::read(&index_path)
            .ok()
            .and_then(|b| fairprobe::study::read_ndjson(&b[..]).ok());
        if on_disk.as_ref() != Some(&entries) {
            let tmp = dir.join(format!("{INDEX_FILE}.tmp"));
            let mut f = File::create(&tmp)?;
            fairprobe::study::write_ndjson(&entries, &mut f)?;
            f.sync_all()?;
            std::fs::rename(&tmp, &index_path)?;
        }
        let index = OpenOptions::new().append(true).open(&index_path)?;

        Ok((
            EventLog {
                dir: dir.to_path_buf(),
                log,
                index,
                len: intact as u64,
                next_seq: events.len() as u64,
                sync,
                entries,
            },
            events,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Sequence number the next appended event must carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Byte length of the log.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Stamps `body` with the next sequence number.
    pub fn stamp(&self, body: EventBody, timestamp_ms: u64) -> Event {
        Event {
            schema_version: SCHEMA_VERSION,
            seq: self.next_seq,
            timestamp_ms,
            body,
        }
    }

    /// Appends one event as a single write.
    pub fn append(&mut self, event: &Event) -> Result<()> {
        if event.seq != self.next_seq {
            return Err(ServiceError::Conflict(format!(
                "event sequence {} does not follow {}",
                event.seq, self.next_seq
            )));
        }
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        if self.sync {
            self.log.sync_data()?;
        }
        if let EventBody::SessionCreated { session_id, .. } = &event.body {
            let entry = IndexEntry {
                session_id: session_id.clone(),
                seq: event.seq,
                offset: self.len,
            };
            let mut idx = serde_json::to_vec(&entry)?;
            idx.push(b'\n');
            self.index.write_all(&idx)?;
            if self.sync {
                self.index.sync_data()?;
            }
            self.entries.push(entry);
        }
        self.len += line.len() as u64;
        self.next_seq += 1;
        Ok(())
    }

    /// Every event of one session, found by seeking to its creation offset.
    pub fn session_events(&self, session_id: &str) -> Result<Vec<Event>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.session_id == session_id)
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        let mut file = File::open(self.dir.join(LOG_FILE))?;
        file.seek(SeekFrom::Start(entry.offset))?;
        let reader = BufReader::new(file.take(self.len - entry.offset));
        let mut out = Vec::new();
        for line in reader.lines() {
            let event: Event = serde_json::from_str(&line?)?;
            if event.body.session_id() == Some(session_id) {
                out.push(event);
            }
        }
        Ok(out)
    }
}
