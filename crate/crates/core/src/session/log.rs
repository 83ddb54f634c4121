//! Line-delimited JSON event log.
//!
//! ```text
//! {"type":"config","v":1,"created_at":...,"config":{...}}
//! {"type":"round","v":1,"record":{...}}
//! {"type":"metrics","v":1,"point":{...}}
//! {"type":"note","v":1,"note":{"kind":"pending",...}}
//! ```
//!
//! A round counts once its metrics line follows it. Loading stops at the
//! first unreadable or out-of-order line and the file is cut back to the
//! last complete event group, so appends continue from a clean state.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricsPoint, PendingRound, RoundRecord, Session, SessionConfig, SessionError};

pub const EVENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Event {
    Config {
        v: u32,
        created_at: u64,
        config: Box<SessionConfig>,
    },
    Round {
        v: u32,
        record: Box<RoundRecord>,
    },
    Metrics {
        v: u32,
        point: MetricsPoint,
    },
    Note {
        v: u32,
        note: Note,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Note {
    /// A plan shown to a human and not yet labeled.
    Pending {
        pending: Box<PendingRound>,
    },
    Message {
        text: String,
    },
}

impl Event {
    pub fn version(&self) -> u32 {
        match self {
            Event::Config { v, .. }
            | Event::Round { v, .. }
            | Event::Metrics { v, .. }
            | Event::Note { v, .. } => *v,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

/// Appends one event as a line and flushes.
pub fn append_event<W: Write>(log: &mut W, event: &Event) -> std::io::Result<()> {
    write_lines(log, &[event.to_line()])
}

pub(crate) fn write_lines<W: Write>(log: &mut W, lines: &[String]) -> std::io::Result<()> {
    let mut buf = String::new();
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    log.write_all(buf.as_bytes())?;
    log.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    /// 1-based line number of the first line not applied.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CorruptLog: line {}: {}", self.line, self.message)
    }
}

/// Rebuilds a session from its log and reopens the file for appending.
pub fn load_session(path: &Path) -> Result<(Session, Vec<LoadWarning>), SessionError> {
    let text = std::fs::read(path)?;
    let (mut session, committed, warnings) = replay(&text)?;
    for w in &warnings {
        tracing::warn!(path = %path.display(), "{w}");
    }
    let file = OpenOptions::new().read(true).write(true).open(path)?;
    if (committed as u64) < file.metadata()?.len() {
        file.set_len(committed as u64)?;
    }
    drop(file);
    let file = OpenOptions::new().append(true).open(path)?;
    session.sink = Some(BufWriter::new(file));
    Ok((session, warnings))
}

/// Applies log bytes to a fresh session. Returns the session, the byte
/// length of the committed prefix, and any warnings.
pub(crate) fn replay(bytes: &[u8]) -> Result<(Session, usize, Vec<LoadWarning>), SessionError> {
    let mut lines = Vec::new();
    let mut start = 0;
    while start < bytes.len() {
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p + 1);
        match end {
            Some(e) => {
                lines.push((start, e, true));
                start = e;
            }
            None => {
                lines.push((start, bytes.len(), false));
                start = bytes.len();
            }
        }
    }
    let mut iter = lines.iter().enumerate();
    let (mut session, mut committed) = loop {
        let Some((idx, &(s, e, terminated))) = iter.next() else {
            return Err(SessionError::EmptyLog);
        };
        let raw = &bytes[s..e];
        if raw.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let corrupt = |message: String| SessionError::CorruptLog {
            line: idx + 1,
            message,
        };
        if !terminated {
            return Err(corrupt("config line is truncated".into()));
        }
        let event: Event = serde_json::from_slice(raw).map_err(|e| corrupt(e.to_string()))?;
        match event {
            Event::Config {
                v: EVENT_VERSION,
                created_at,
                config,
            } => {
                let mut session = Session::skeleton(*config, created_at)?;
                session.events.push(line_text(raw));
                break (session, e);
            }
            Event::Config { v, .. } => return Err(corrupt(format!("unsupported version {v}"))),
            _ => return Err(corrupt("first event is not a config".into())),
        }
    };

    let mut warnings = Vec::new();
    let mut staged: Option<(Box<RoundRecord>, String)> = None;
    for (idx, &(s, e, terminated)) in iter {
        let raw = &bytes[s..e];
        let mut stop = |message: String| {
            warnings.push(LoadWarning {
                line: idx + 1,
                message,
            })
        };
        if raw.iter().all(u8::is_ascii_whitespace) {
            if staged.is_none() {
                committed = e;
            }
            continue;
        }
        if !terminated {
            stop("line is truncated".into());
            break;
        }
        let event: Event = match serde_json::from_slice(raw) {
            Ok(ev) => ev,
            Err(err) => {
                stop(err.to_string());
                break;
            }
        };
        if event.version() != EVENT_VERSION {
            stop(format!("unsupported version {}", event.version()));
            break;
        }
        let next = session.rounds_done() + 1;
        match event {
            Event::Round { record, .. } if staged.is_none() && record.round == next => {
                staged = Some((record, line_text(raw)));
            }
            Event::Metrics { point, .. }
                if staged.as_ref().is_some_and(|(r, _)| r.round == point.round) =>
            {
                let (record, round_line) = staged.take().expect("checked");
                session.state = record.state.clone();
                session.rngs = record.rng.clone();
                session.pending = None;
                session.records.push(*record);
                session.metrics.push(point);
                session.events.push(round_line);
                session.events.push(line_text(raw));
                committed = e;
            }
            Event::Note {
                note: Note::Pending { pending },
                ..
            } if staged.is_none() && pending.round == next => {
                session.pending = Some(*pending);
                session.events.push(line_text(raw));
                committed = e;
            }
            Event::Note {
                note: Note::Message { .. },
                ..
            } if staged.is_none() => {
                session.events.push(line_text(raw));
                committed = e;
            }
            other => {
                stop(format!("unexpected {} event at round {next}", kind(&other)));
                break;
            }
        }
    }
    if let Some((record, _)) = staged.filter(|_| warnings.is_empty()) {
        warnings.push(LoadWarning {
            line: lines.len(),
            message: format!("round {} has no metrics line and was dropped", record.round),
        });
    }
    Ok((session, committed, warnings))
}

fn kind(e: &Event) -> &'static str {
    match e {
        Event::Config { .. } => "config",
        Event::Round { .. } => "round",
        Event::Metrics { .. } => "metrics",
        Event::Note { .. } => "note",
    }
}

fn line_text(raw: &[u8]) -> String {
    String::from_utf8_lossy(raw).trim_end().to_string()
}
