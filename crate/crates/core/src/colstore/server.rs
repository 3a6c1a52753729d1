//! Byte-range file server with per-session read accounting.
//!
//! Every request and reply is a frame:
//!
//! ```text
//! u32 length (= 2 + payload bytes) | u16 opcode | payload
//! ```
//!
//! | opcode | request                        | reply                           |
//! |--------|--------------------------------|---------------------------------|
//! | 1 OPEN | path string                    | u64 id, u64 size                |
//! | 2 READ | u64 id, u64 offset, u32 len    | raw bytes (short at EOF)        |
//! | 3 STAT | path string                    | u64 size                        |
//! | 4 METRICS | optional u8 scope (0 session, 1 server) | u64 bytes_served, u64 read_calls |
//! | 5 CLOSE | u64 id                        | empty                           |
//!
//! Failures are answered with opcode `0xFFFF`, a u16 error code and a message
//! string. Strings are u16-length-prefixed UTF-8.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::{ColstoreError, Result};
use crate::wire::{ByteReader, ByteWriter};

pub const OP_OPEN: u16 = 1;
pub const OP_READ: u16 = 2;
pub const OP_STAT: u16 = 3;
pub const OP_METRICS: u16 = 4;
pub const OP_CLOSE: u16 = 5;
pub const OP_ERROR: u16 = 0xFFFF;

pub const ERR_BAD_REQUEST: u16 = 1;
pub const ERR_NOT_FOUND: u16 = 2;
pub const ERR_PATH_ESCAPE: u16 = 3;
pub const ERR_BAD_ID: u16 = 4;
pub const ERR_IO: u16 = 5;

const MAX_FRAME: u32 = 256 << 20;
const MAX_READ: u32 = 64 << 20;

fn write_frame<W: Write>(w: &mut W, opcode: u16, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len() + 2)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&opcode.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean EOF before the length prefix.
fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<(u16, Vec<u8>)>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if !(2..=MAX_FRAME).contains(&len) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad frame length {len}"),
        ));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    let opcode = u16::from_le_bytes([body[0], body[1]]);
    body.drain(..2);
    Ok(Some((opcode, body)))
}

/// Server-wide counters, summed over all sessions.
#[derive(Debug, Default)]
pub struct ServerStats {
    bytes_served: AtomicU64,
    read_calls: AtomicU64,
    sessions: AtomicU64,
}

impl ServerStats {
    pub fn bytes_served(&self) -> u64 {
        self.bytes_served.load(Ordering::SeqCst)
    }

    pub fn read_calls(&self) -> u64 {
        self.read_calls.load(Ordering::SeqCst)
    }

    pub fn sessions(&self) -> u64 {
        self.sessions.load(Ordering::SeqCst)
    }
}

/// A running data server. Dropping it stops accepting new sessions.
pub struct DataServer {
    addr: SocketAddr,
    root: PathBuf,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    sessions: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

/// Serves the files under `root` on `addr` (use port 0 for an ephemeral port).
pub fn serve(root: impl AsRef<Path>, addr: impl ToSocketAddrs) -> io::Result<DataServer> {
    let root = root.as_ref().canonicalize()?;
    if !root.is_dir() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} is not a directory", root.display()),
        ));
    }
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stats = Arc::new(ServerStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let sessions = Arc::new(Mutex::new(Vec::new()));

    let accept = {
        let (root, stats, stop, sessions) = (
            root.clone(),
            Arc::clone(&stats),
            Arc::clone(&stop),
            Arc::clone(&sessions),
        );
        std::thread::Builder::new()
            .name("colsrv-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let _ = stream.set_nodelay(true);
                    if let Ok(clone) = stream.try_clone() {
                        sessions.lock().expect("session list").push(clone);
                    }
                    stats.sessions.fetch_add(1, Ordering::SeqCst);
                    let session = Session::new(root.clone(), Arc::clone(&stats));
                    let _ = std::thread::Builder::new()
                        .name("colsrv-session".into())
                        .spawn(move || session.run(stream));
                }
            })?
    };
    log::info!("data server on {addr} serving {}", root.display());
    Ok(DataServer {
        addr,
        root,
        stats,
        stop,
        sessions,
        accept: Some(accept),
    })
}

impl DataServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    /// `colsrv://` URI for a path relative to the served root.
    pub fn uri_for(&self, relative: &str) -> String {
        format!("colsrv://{}/{}", self.addr, relative.trim_start_matches('/'))
    }

    /// Blocks until the accept loop exits (i.e. forever unless shut down).
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for s in self.sessions.lock().expect("session list").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for DataServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct OpenFile {
    file: File,
    size: u64,
}

struct Session {
    root: PathBuf,
    stats: Arc<ServerStats>,
    files: HashMap<u64, OpenFile>,
    next_id: u64,
    bytes_served: u64,
    read_calls: u64,
}

struct Reject(u16, String);

impl From<io::Error> for Reject {
    fn from(e: io::Error) -> Self {
        Reject(ERR_IO, e.to_string())
    }
}

impl From<crate::wire::Truncated> for Reject {
    fn from(_: crate::wire::Truncated) -> Self {
        Reject(ERR_BAD_REQUEST, "truncated request".into())
    }
}

impl From<crate::wire::DecodeError> for Reject {
    fn from(e: crate::wire::DecodeError) -> Self {
        Reject(ERR_BAD_REQUEST, e.to_string())
    }
}

impl Session {
    fn new(root: PathBuf, stats: Arc<ServerStats>) -> Self {
        Session {
            root,
            stats,
            files: HashMap::new(),
            next_id: 1,
            bytes_served: 0,
            read_calls: 0,
        }
    }

    fn run(mut self, stream: TcpStream) {
        let Ok(read_half) = stream.try_clone() else {
            return;
        };
        let mut input = BufReader::new(read_half);
        let mut output = BufWriter::new(stream);
        loop {
            let (opcode, payload) = match read_frame(&mut input) {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => {
                    log::debug!("session closed: {e}");
                    break;
                }
            };
            let reply = self.handle(opcode, &payload);
            let sent = match reply {
                Ok(body) => write_frame(&mut output, opcode, &body),
                Err(Reject(code, msg)) => {
                    let mut w = ByteWriter::new();
                    w.u16(code);
                    let msg: String = msg.chars().take(1000).collect();
                    w.str(&msg).expect("message fits");
                    write_frame(&mut output, OP_ERROR, w.as_slice())
                }
            };
            if sent.is_err() {
                break;
            }
        }
    }

    fn resolve(&self, path: &str) -> Result<PathBuf, Reject> {
        let rel = Path::new(path);
        let escapes = rel.components().any(|c| {
            matches!(
                c,
                Component::ParentDir | Component::RootDir | Component::Prefix(_)
            )
        });
        if escapes || path.is_empty() {
            return Err(Reject(ERR_PATH_ESCAPE, format!("path '{path}' rejected")));
        }
        let full = self.root.join(rel);
        let canonical = full
            .canonicalize()
            .map_err(|_| Reject(ERR_NOT_FOUND, format!("'{path}' not found")))?;
        if !canonical.starts_with(&self.root) {
            return Err(Reject(ERR_PATH_ESCAPE, format!("path '{path}' rejected")));
        }
        Ok(canonical)
    }

    fn handle(&mut self, opcode: u16, payload: &[u8]) -> Result<Vec<u8>, Reject> {
        let mut r = ByteReader::new(payload);
        let mut w = ByteWriter::new();
        match opcode {
            OP_OPEN => {
                let path = self.resolve(&r.str()?)?;
                let file = File::open(&path)?;
                let size = file.metadata()?.len();
                if !file.metadata()?.is_file() {
                    return Err(Reject(ERR_NOT_FOUND, "not a regular file".into()));
                }
                let id = self.next_id;
                self.next_id += 1;
                self.files.insert(id, OpenFile { file, size });
                w.u64(id).u64(size);
            }
            OP_READ => {
                let id = r.u64()?;
                let offset = r.u64()?;
                let len = r.u32()?;
                if len > MAX_READ {
                    return Err(Reject(ERR_BAD_REQUEST, format!("read of {len} bytes")));
                }
                let f = self
                    .files
                    .get_mut(&id)
                    .ok_or_else(|| Reject(ERR_BAD_ID, format!("unknown file id {id}")))?;
                let avail = f.size.saturating_sub(offset).min(u64::from(len)) as usize;
                let mut buf = vec![0u8; avail];
                f.file.seek(SeekFrom::Start(offset))?;
                f.file.read_exact(&mut buf)?;
                self.bytes_served += avail as u64;
                self.read_calls += 1;
                self.stats
                    .bytes_served
                    .fetch_add(avail as u64, Ordering::SeqCst);
                self.stats.read_calls.fetch_add(1, Ordering::SeqCst);
                return Ok(buf);
            }
            OP_STAT => {
                let path = self.resolve(&r.str()?)?;
                w.u64(std::fs::metadata(path)?.len());
            }
            OP_METRICS => {
                let scope = if r.is_empty() { 0 } else { r.u8()? };
                match scope {
                    0 => w.u64(self.bytes_served).u64(self.read_calls),
                    1 => w
                        .u64(self.stats.bytes_served())
                        .u64(self.stats.read_calls()),
                    s => return Err(Reject(ERR_BAD_REQUEST, format!("unknown scope {s}"))),
                };
            }
            OP_CLOSE => {
                let id = r.u64()?;
                self.files
                    .remove(&id)
                    .ok_or_else(|| Reject(ERR_BAD_ID, format!("unknown file id {id}")))?;
            }
            other => {
                return Err(Reject(ERR_BAD_REQUEST, format!("unknown opcode {other}")));
            }
        }
        Ok(w.into_inner())
    }
}

/// Blocking client for one data-server session.
pub struct DataClient {
    input: BufReader<TcpStream>,
    output: BufWriter<TcpStream>,
}

impl DataClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(DataClient {
            input: BufReader::new(stream.try_clone()?),
            output: BufWriter::new(stream),
        })
    }

    fn call(&mut self, opcode: u16, payload: &[u8]) -> Result<Vec<u8>> {
        write_frame(&mut self.output, opcode, payload)?;
        let (op, body) = read_frame(&mut self.input)?.ok_or_else(|| {
            ColstoreError::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "data server closed the connection",
            ))
        })?;
        if op == OP_ERROR {
            let mut r = ByteReader::new(&body);
            let code = r.u16().unwrap_or(0);
            let message = r.str().unwrap_or_default();
            return Err(ColstoreError::Server { code, message });
        }
        if op != opcode {
            return Err(ColstoreError::Protocol(format!(
                "reply opcode {op} to request {opcode}"
            )));
        }
        Ok(body)
    }

    fn path_payload(path: &str) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.str(path)
            .map_err(|e| ColstoreError::Protocol(e.to_string()))?;
        Ok(w.into_inner())
    }

    pub fn open(&mut self, path: &str) -> Result<(u64, u64)> {
        let body = self.call(OP_OPEN, &Self::path_payload(path)?)?;
        let mut r = ByteReader::new(&body);
        let bad = |_| ColstoreError::Protocol("short OPEN reply".into());
        Ok((r.u64().map_err(bad)?, r.u64().map_err(bad)?))
    }

    pub fn read(&mut self, id: u64, offset: u64, len: u32) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.u64(id).u64(offset).u32(len);
        self.call(OP_READ, w.as_slice())
    }

    pub fn stat(&mut self, path: &str) -> Result<u64> {
        let body = self.call(OP_STAT, &Self::path_payload(path)?)?;
        ByteReader::new(&body)
            .u64()
            .map_err(|_| ColstoreError::Protocol("short STAT reply".into()))
    }

    fn metrics_scope(&mut self, scope: u8) -> Result<(u64, u64)> {
        let body = self.call(OP_METRICS, &[scope])?;
        let mut r = ByteReader::new(&body);
        let bad = |_| ColstoreError::Protocol("short METRICS reply".into());
        Ok((r.u64().map_err(bad)?, r.u64().map_err(bad)?))
    }

    /// `(bytes_served, read_calls)` for this session.
    pub fn metrics(&mut self) -> Result<(u64, u64)> {
        self.metrics_scope(0)
    }

    /// `(bytes_served, read_calls)` summed over every session of the server.
    pub fn server_metrics(&mut self) -> Result<(u64, u64)> {
        self.metrics_scope(1)
    }

    pub fn close(&mut self, id: u64) -> Result<()> {
        let mut w = ByteWriter::new();
        w.u64(id);
        self.call(OP_CLOSE, w.as_slice()).map(|_| ())
    }

    /// Sends an arbitrary frame and returns the raw reply. For protocol tests.
    pub fn raw_call(&mut self, opcode: u16, payload: &[u8]) -> Result<Vec<u8>> {
        self.call(opcode, payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn server_with_file(content: &[u8]) -> (tempfile::TempDir, DataServer) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/a.bin"), content).unwrap();
        let srv = serve(dir.path(), "127.0.0.1:0").unwrap();
        (dir, srv)
    }

    #[test]
    fn open_read_and_short_read_past_eof() {
        let (_dir, srv) = server_with_file(b"0123456789");
        let mut c = DataClient::connect(srv.local_addr()).unwrap();
        let (id, size) = c.open("sub/a.bin").unwrap();
        assert_eq!(size, 10);
        assert_eq!(c.read(id, 2, 3).unwrap(), b"234");
        assert_eq!(c.read(id, 8, 100).unwrap(), b"89");
        assert_eq!(c.read(id, 50, 4).unwrap(), b"");
        assert_eq!(c.stat("sub/a.bin").unwrap(), 10);
        assert_eq!(c.metrics().unwrap(), (5, 3));
        c.close(id).unwrap();
        assert!(matches!(
            c.read(id, 0, 1),
            Err(ColstoreError::Server {
                code: ERR_BAD_ID,
                ..
            })
        ));
    }

    #[test]
    fn rejects_path_escape() {
        let (_dir, srv) = server_with_file(b"x");
        let mut c = DataClient::connect(srv.local_addr()).unwrap();
        for bad in ["../etc/passwd", "/etc/passwd", "sub/../../x"] {
            match c.open(bad) {
                Err(ColstoreError::Server { code, .. }) => assert_eq!(code, ERR_PATH_ESCAPE),
                other => panic!("{bad}: {other:?}"),
            }
        }
        assert!(matches!(
            c.open("missing.bin"),
            Err(ColstoreError::Server {
                code: ERR_NOT_FOUND,
                ..
            })
        ));
    }

    #[test]
    fn sessions_have_isolated_counters() {
        let (_dir, srv) = server_with_file(&[7u8; 100]);
        let mut a = DataClient::connect(srv.local_addr()).unwrap();
        let mut b = DataClient::connect(srv.local_addr()).unwrap();
        let (ia, _) = a.open("sub/a.bin").unwrap();
        let (ib, _) = b.open("sub/a.bin").unwrap();
        a.read(ia, 0, 40).unwrap();
        b.read(ib, 0, 25).unwrap();
        b.read(ib, 90, 25).unwrap();
        assert_eq!(a.metrics().unwrap(), (40, 1));
        assert_eq!(b.metrics().unwrap(), (35, 2));
        assert_eq!(a.server_metrics().unwrap(), (75, 3));
        assert_eq!(srv.stats().bytes_served(), 75);
    }

    #[test]
    fn unknown_opcode_is_an_error_reply() {
        let (_dir, srv) = server_with_file(b"x");
        let mut c = DataClient::connect(srv.local_addr()).unwrap();
        assert!(matches!(
            c.raw_call(42, &[]),
            Err(ColstoreError::Server {
                code: ERR_BAD_REQUEST,
                ..
            })
        ));
    }

    #[test]
    fn port_in_use_is_reported() {
        let (dir, srv) = server_with_file(b"x");
        assert!(serve(dir.path(), srv.local_addr()).is_err());
    }
}
