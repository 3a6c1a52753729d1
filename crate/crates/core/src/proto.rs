//! Scheduler/worker/client wire protocol.
//!
//! Frame: `u32 length` (payload size + 4), `u16 kind`, `u16 version`,
//! payload. All integers little-endian, strings u16-length-prefixed UTF-8.
//! Kinds 1–7 are the worker channel; 8 and 9 carry a run submission from a
//! client and its completion report.

use std::io::{self, Read, Write};

use crate::engine::{EntryRange, Mode, PartialResult};
use crate::metrics::JobRecord;
use crate::wire::{ByteReader, ByteWriter, DecodeError};

pub const VERSION: u16 = 1;
/// Upper bound on a frame body; larger lengths are treated as corruption.
pub const MAX_FRAME: u32 = 1 << 30;

pub mod kind {
    pub const REGISTER: u16 = 1;
    pub const GRAPH: u16 = 2;
    pub const TASK: u16 = 3;
    pub const RESULT: u16 = 4;
    pub const FAIL: u16 = 5;
    pub const HEARTBEAT: u16 = 6;
    pub const SHUTDOWN: u16 = 7;
    pub const SUBMIT: u16 = 8;
    pub const COMPLETE: u16 = 9;
}

#[derive(Debug, thiserror::Error)]
pub enum ProtoError {
    #[error("frame length {0} is below the 4-byte minimum")]
    LengthTooSmall(u32),
    #[error("frame length {0} exceeds the limit")]
    LengthTooLarge(u32),
    #[error("truncated frame")]
    Truncated,
    #[error("protocol version {0} not supported")]
    VersionMismatch(u16),
    #[error("unknown message kind {0}")]
    UnknownKind(u16),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<DecodeError> for ProtoError {
    fn from(e: DecodeError) -> Self {
        ProtoError::Malformed(e.to_string())
    }
}

impl From<crate::wire::Truncated> for ProtoError {
    fn from(e: crate::wire::Truncated) -> Self {
        ProtoError::Malformed(e.to_string())
    }
}

/// Execution mode of a task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskMode {
    Engine(Mode),
    /// A legacy job: download `payload_bytes` of `payload_uri`, then run
    /// each pass in order over the whole range.
    Legacy {
        payload_uri: String,
        payload_bytes: u64,
        passes: Vec<Mode>,
    },
}

/// How the scheduler splits a submitted dataset into tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// factor × workers cluster-aligned tasks.
    Partitioned { factor: u32 },
    /// One task per whole file.
    PerFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submit {
    pub run_id: String,
    pub spec: String,
    pub plan: PlanKind,
    pub mode: TaskMode,
    pub min_workers: u32,
    /// Return per-task partials instead of only the merged result.
    pub keep_partials: bool,
    /// Re-dispatches allowed per task before the run fails.
    pub max_retries: u32,
    /// Cap on concurrently running tasks of this run; 0 for none.
    pub max_concurrent: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Complete {
    pub run_id: String,
    /// Empty on success.
    pub error: String,
    pub merged: PartialResult,
    pub partials: Vec<(u64, PartialResult)>,
    pub records: Vec<JobRecord>,
    pub wall_time: f64,
    /// Metadata bytes the scheduler read while planning.
    pub planning_bytes: u64,
    /// Tasks re-dispatched after a failure or a lost worker.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Register {
        worker: String,
        slots: u32,
    },
    Graph {
        graph_id: u64,
        spec: String,
    },
    Task {
        task_id: u64,
        graph_id: u64,
        range: EntryRange,
        mode: TaskMode,
        attempt: u32,
    },
    Result {
        task_id: u64,
        t_total: f64,
        partial: PartialResult,
    },
    Fail {
        task_id: u64,
        error: String,
    },
    Heartbeat {
        worker: String,
    },
    Shutdown,
    Submit(Submit),
    Complete(Box<Complete>),
}

impl Message {
    pub fn kind(&self) -> u16 {
        match self {
            Message::Register { .. } => kind::REGISTER,
            Message::Graph { .. } => kind::GRAPH,
            Message::Task { .. } => kind::TASK,
            Message::Result { .. } => kind::RESULT,
            Message::Fail { .. } => kind::FAIL,
            Message::Heartbeat { .. } => kind::HEARTBEAT,
            Message::Shutdown => kind::SHUTDOWN,
            Message::Submit(_) => kind::SUBMIT,
            Message::Complete(_) => kind::COMPLETE,
        }
    }
}

fn put_text(w: &mut ByteWriter, s: &str) {
    w.blob(s.as_bytes());
}

fn get_text(r: &mut ByteReader<'_>) -> Result<String, ProtoError> {
    String::from_utf8(r.blob()?.to_vec()).map_err(|_| ProtoError::Malformed("invalid UTF-8".into()))
}

fn put_mode(w: &mut ByteWriter, m: &Mode) -> Result<(), DecodeError> {
    match m {
        Mode::SinglePass => {
            w.u8(0);
        }
        Mode::OnlyUniverse(u) => {
            w.u8(1).str(u)?;
        }
        Mode::WeightPass => {
            w.u8(2);
        }
    }
    Ok(())
}

fn get_mode(r: &mut ByteReader<'_>) -> Result<Mode, ProtoError> {
    let tag = r.u8()?;
    mode_from_tag(tag, r)
}

fn mode_from_tag(tag: u8, r: &mut ByteReader<'_>) -> Result<Mode, ProtoError> {
    Ok(match tag {
        0 => Mode::SinglePass,
        1 => Mode::OnlyUniverse(r.str()?),
        2 => Mode::WeightPass,
        t => return Err(ProtoError::Malformed(format!("unknown mode tag {t}"))),
    })
}

fn put_task_mode(w: &mut ByteWriter, m: &TaskMode) -> Result<(), DecodeError> {
    match m {
        TaskMode::Engine(m) => put_mode(w, m),
        TaskMode::Legacy {
            payload_uri,
            payload_bytes,
            passes,
        } => {
            w.u8(3).str(payload_uri)?;
            w.u64(*payload_bytes).u32(passes.len() as u32);
            passes.iter().try_for_each(|p| put_mode(w, p))
        }
    }
}

fn get_task_mode(r: &mut ByteReader<'_>) -> Result<TaskMode, ProtoError> {
    let tag = r.u8()?;
    if tag != 3 {
        return Ok(TaskMode::Engine(mode_from_tag(tag, r)?));
    }
    let payload_uri = r.str()?;
    let payload_bytes = r.u64()?;
    let n = r.u32()? as usize;
    let passes = (0..n).map(|_| get_mode(r)).collect::<Result<Vec<_>, _>>()?;
    Ok(TaskMode::Legacy {
        payload_uri,
        payload_bytes,
        passes,
    })
}

fn put_partial(w: &mut ByteWriter, p: &PartialResult) -> Result<(), DecodeError> {
    p.encode(w)
}

fn encode_payload(msg: &Message, w: &mut ByteWriter) -> Result<(), DecodeError> {
    match msg {
        Message::Register { worker, slots } => {
            w.str(worker)?.u32(*slots);
        }
        Message::Graph { graph_id, spec } => {
            w.u64(*graph_id);
            put_text(w, spec);
        }
        Message::Task {
            task_id,
            graph_id,
            range,
            mode,
            attempt,
        } => {
            w.u64(*task_id).u64(*graph_id).str(&range.uri)?;
            w.u64(range.begin).u64(range.end).u32(*attempt);
            put_task_mode(w, mode)?;
        }
        Message::Result {
            task_id,
            t_total,
            partial,
        } => {
            w.u64(*task_id).f64(*t_total);
            put_partial(w, partial)?;
        }
        Message::Fail { task_id, error } => {
            w.u64(*task_id);
            put_text(w, error);
        }
        Message::Heartbeat { worker } => {
            w.str(worker)?;
        }
        Message::Shutdown => {}
        Message::Submit(s) => {
            w.str(&s.run_id)?;
            put_text(w, &s.spec);
            match s.plan {
                PlanKind::Partitioned { factor } => w.u8(0).u32(factor),
                PlanKind::PerFile => w.u8(1),
            };
            put_task_mode(w, &s.mode)?;
            w.u32(s.min_workers).u8(u8::from(s.keep_partials)).u32(s.max_retries).u32(s.max_concurrent);
        }
        Message::Complete(c) => {
            w.str(&c.run_id)?;
            put_text(w, &c.error);
            put_partial(w, &c.merged)?;
            w.u32(c.partials.len() as u32);
            for (id, p) in &c.partials {
                w.u64(*id);
                put_partial(w, p)?;
            }
            w.u32(c.records.len() as u32);
            for r in &c.records {
                r.encode(w)?;
            }
            w.f64(c.wall_time).u64(c.planning_bytes).u32(c.retries);
        }
    }
    Ok(())
}

fn decode_payload(kind: u16, r: &mut ByteReader<'_>) -> Result<Message, ProtoError> {
    Ok(match kind {
        kind::REGISTER => Message::Register {
            worker: r.str()?,
            slots: r.u32()?,
        },
        kind::GRAPH => Message::Graph {
            graph_id: r.u64()?,
            spec: get_text(r)?,
        },
        kind::TASK => {
            let task_id = r.u64()?;
            let graph_id = r.u64()?;
            let uri = r.str()?;
            let begin = r.u64()?;
            let end = r.u64()?;
            let attempt = r.u32()?;
            Message::Task {
                task_id,
                graph_id,
                range: EntryRange { uri, begin, end },
                mode: get_task_mode(r)?,
                attempt,
            }
        }
        kind::RESULT => Message::Result {
            task_id: r.u64()?,
            t_total: r.f64()?,
            partial: PartialResult::decode(r)?,
        },
        kind::FAIL => Message::Fail {
            task_id: r.u64()?,
            error: get_text(r)?,
        },
        kind::HEARTBEAT => Message::Heartbeat { worker: r.str()? },
        kind::SHUTDOWN => Message::Shutdown,
        kind::SUBMIT => {
            let run_id = r.str()?;
            let spec = get_text(r)?;
            let plan = match r.u8()? {
                0 => PlanKind::Partitioned { factor: r.u32()? },
                1 => PlanKind::PerFile,
                t => return Err(ProtoError::Malformed(format!("unknown plan tag {t}"))),
            };
            Message::Submit(Submit {
                run_id,
                spec,
                plan,
                mode: get_task_mode(r)?,
                min_workers: r.u32()?,
                keep_partials: r.u8()? != 0,
                max_retries: r.u32()?,
                max_concurrent: r.u32()?,
            })
        }
        kind::COMPLETE => {
            let run_id = r.str()?;
            let error = get_text(r)?;
            let merged = PartialResult::decode(r)?;
            let n = r.u32()? as usize;
            let mut partials = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let id = r.u64()?;
                partials.push((id, PartialResult::decode(r)?));
            }
            let n = r.u32()? as usize;
            let mut records = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                records.push(JobRecord::decode(r)?);
            }
            Message::Complete(Box::new(Complete {
                run_id,
                error,
                merged,
                partials,
                records,
                wall_time: r.f64()?,
                planning_bytes: r.u64()?,
                retries: r.u32()?,
            }))
        }
        other => return Err(ProtoError::UnknownKind(other)),
    })
}

/// Serializes `msg` into one complete frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtoError> {
    let mut w = ByteWriter::new();
    w.u32(0).u16(msg.kind()).u16(VERSION);
    encode_payload(msg, &mut w)?;
    let mut buf = w.into_inner();
    let len = (buf.len() - 4) as u32;
    buf[..4].copy_from_slice(&len.to_le_bytes());
    Ok(buf)
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtoError> {
    match split_frame(bytes)? {
        Some((msg, used)) if used == bytes.len() => Ok(msg),
        Some(_) => Err(ProtoError::Malformed("trailing bytes after frame".into())),
        None => Err(ProtoError::Truncated),
    }
}

/// Decodes the first frame of `bytes`, returning it and its total size, or
/// `None` if more bytes are needed.
fn split_frame(bytes: &[u8]) -> Result<Option<(Message, usize)>, ProtoError> {
    if bytes.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
    check_len(len)?;
    let total = 4 + len as usize;
    if bytes.len() < total {
        return Ok(None);
    }
    Ok(Some((decode_body(&bytes[4..total])?, total)))
}

fn check_len(len: u32) -> Result<(), ProtoError> {
    if len < 4 {
        return Err(ProtoError::LengthTooSmall(len));
    }
    if len > MAX_FRAME {
        return Err(ProtoError::LengthTooLarge(len));
    }
    Ok(())
}

/// `body` is everything after the length field.
fn decode_body(body: &[u8]) -> Result<Message, ProtoError> {
    let kind = u16::from_le_bytes([body[0], body[1]]);
    let version = u16::from_le_bytes([body[2], body[3]]);
    if version != VERSION {
        return Err(ProtoError::VersionMismatch(version));
    }
    let mut r = ByteReader::new(&body[4..]);
    let msg = decode_payload(kind, &mut r)?;
    if !r.is_empty() {
        return Err(ProtoError::Malformed(format!("{} unread payload bytes", r.remaining())));
    }
    Ok(msg)
}

/// Incremental decoder for a byte stream of concatenated frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, if any.
    pub fn next_message(&mut self) -> Result<Option<Message>, ProtoError> {
        match split_frame(&self.buf)? {
            None => Ok(None),
            Some((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Blocking read of one frame. `Ok(None)` on a clean EOF between frames.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, ProtoError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtoError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    check_len(len)?;
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtoError::Truncated,
        _ => ProtoError::Io(e),
    })?;
    decode_body(&body).map(Some)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), ProtoError> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}
