use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::PathBuf;

use super::server::DataClient;
use super::{ColstoreError, Result, TransportKind};

pub const REMOTE_SCHEME: &str = "colsrv://";

/// Where a URI points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Local(PathBuf),
    /// `colsrv://addr/path`; `path` is relative to the server root.
    Remote { addr: String, path: String },
}

impl Location {
    pub fn kind(&self) -> TransportKind {
        match self {
            Location::Local(_) => TransportKind::Local,
            Location::Remote { addr, .. } => TransportKind::Remote {
                server: addr.clone(),
            },
        }
    }
}

pub fn parse_uri(uri: &str) -> Result<Location> {
    if let Some(rest) = uri.strip_prefix(REMOTE_SCHEME) {
        let (addr, path) = rest
            .split_once('/')
            .ok_or_else(|| ColstoreError::InvalidUri(uri.to_string()))?;
        if addr.is_empty() || path.is_empty() {
            return Err(ColstoreError::InvalidUri(uri.to_string()));
        }
        Ok(Location::Remote {
            addr: addr.to_string(),
            path: path.to_string(),
        })
    } else if uri.contains("://") {
        Err(ColstoreError::InvalidUri(uri.to_string()))
    } else {
        Ok(Location::Local(PathBuf::from(uri)))
    }
}

/// Positional byte source behind a reader session.
pub trait Transport: Send {
    fn size(&self) -> u64;

    /// Reads up to `len` bytes at `offset`. Returns fewer bytes only at EOF.
    fn read_at(&mut self, offset: u64, len: usize) -> Result<Vec<u8>>;
}

pub(crate) struct LocalTransport {
    file: File,
    size: u64,
}

impl LocalTransport {
    pub fn open(path: &std::path::Path) -> Result<Self> {
        let file = File::open(path)?;
        let size = file.metadata()?.len();
        Ok(LocalTransport { file, size })
    }
}

impl Transport for LocalTransport {
    fn size(&self) -> u64 {
        self.size
    }

    fn read_at(&mut self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let avail = self.size.saturating_sub(offset).min(len as u64) as usize;
        let mut buf = vec![0u8; avail];
        self.file.seek(SeekFrom::Start(offset))?;
        self.file.read_exact(&mut buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                ColstoreError::Io(io::Error::new(e.kind(), "file shrank while reading"))
            } else {
                e.into()
            }
        })?;
        Ok(buf)
    }
}

pub(crate) struct RemoteTransport {
    client: DataClient,
    id: u64,
    size: u64,
}

impl RemoteTransport {
    pub fn open(addr: &str, path: &str) -> Result<Self> {
        let mut client = DataClient::connect(addr)?;
        let (id, size) = client.open(path)?;
        Ok(RemoteTransport { client, id, size })
    }
}

impl Transport for RemoteTransport {
    fn size(&self) -> u64 {
        self.size
    }

    fn read_at(&mut self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let len = u32::try_from(len)
            .map_err(|_| ColstoreError::Protocol("read larger than 4 GiB".into()))?;
        self.client.read(self.id, offset, len)
    }
}

impl Drop for RemoteTransport {
    fn drop(&mut self) {
        let _ = self.client.close(self.id);
    }
}

pub(crate) fn connect(location: &Location) -> Result<Box<dyn Transport>> {
    Ok(match location {
        Location::Local(path) => Box::new(LocalTransport::open(path)?),
        Location::Remote { addr, path } => Box::new(RemoteTransport::open(addr, path)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_dispatch() {
        assert_eq!(
            parse_uri("data/f.col").unwrap(),
            Location::Local(PathBuf::from("data/f.col"))
        );
        assert_eq!(
            parse_uri("colsrv://127.0.0.1:9000/data/f.col").unwrap(),
            Location::Remote {
                addr: "127.0.0.1:9000".into(),
                path: "data/f.col".into()
            }
        );
        assert!(parse_uri("colsrv://127.0.0.1:9000").is_err());
        assert!(parse_uri("http://x/y").is_err());
    }
}
