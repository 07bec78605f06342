//! Frame-stamped record of a session's inbound messages. Replaying it into a
//! fresh session reproduces every snapshot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Outbound, Session, SessionError, SessionMessage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg: Option<SessionMessage>,
    /// Marks the frame the recording stopped at.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub end: bool,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: frame {frame} is earlier than the previous entry")]
    OutOfOrder { line: usize, frame: u64 },
    #[error("transcript has no end marker")]
    NoEnd,
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<(u64, SessionMessage)>,
    pub end_frame: u64,
}

impl Transcript {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let entries = self
            .messages
            .iter()
            .map(|(frame, msg)| TranscriptEntry {
                frame: *frame,
                msg: Some(msg.clone()),
                end: false,
            })
            .chain(std::iter::once(TranscriptEntry {
                frame: self.end_frame,
                msg: None,
                end: true,
            }));
        for e in entries {
            out.push_str(&serde_json::to_string(&e).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, TranscriptError> {
        let mut t = Transcript::default();
        let mut last = 0;
        let mut ended = false;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TranscriptEntry =
                serde_json::from_str(line).map_err(|source| TranscriptError::Parse { line: i + 1, source })?;
            if e.frame < last {
                return Err(TranscriptError::OutOfOrder {
                    line: i + 1,
                    frame: e.frame,
                });
            }
            last = e.frame;
            if let Some(m) = e.msg {
                t.messages.push((e.frame, m));
            }
            if e.end {
                t.end_frame = e.frame;
                ended = true;
            }
        }
        if !ended {
            return Err(TranscriptError::NoEnd);
        }
        Ok(t)
    }

    /// Runs a fresh session through the recording and returns all its output.
    pub fn replay(&self) -> Result<Vec<Outbound>, TranscriptError> {
        let mut rec = Recorder::new(Session::default());
        let mut out = Vec::new();
        let mut pending = self.messages.iter().peekable();
        while rec.session.frame() < self.end_frame {
            while let Some((_, msg)) = pending.next_if(|(f, _)| *f <= rec.session.frame()) {
                out.push(rec.handle(msg.clone()));
            }
            out.extend(rec.tick()?);
        }
        for (_, msg) in pending {
            out.push(rec.handle(msg.clone()));
        }
        Ok(out)
    }
}

/// A session that keeps a transcript of what it was sent.
pub struct Recorder {
    pub session: Session,
    transcript: Transcript,
}

impl Recorder {
    pub fn new(session: Session) -> Self {
        Self {
            session,
            transcript: Transcript::default(),
        }
    }

    pub fn handle(&mut self, msg: SessionMessage) -> Outbound {
        let r = self.session.handle(&msg);
        let reply = Outbound::from_result(&msg, r);
        self.transcript.messages.push((self.session.frame(), msg));
        reply
    }

    pub fn tick(&mut self) -> Result<Vec<Outbound>, SessionError> {
        self.session.tick()
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            messages: self.transcript.messages.clone(),
            end_frame: self.session.frame(),
        }
    }
}
