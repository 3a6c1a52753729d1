//! Columnar event files.
//!
//! A file holds a fixed schema of named columns, split along the entry axis
//! into clusters. Every cluster stores one chunk per column and is the
//! smallest unit that can be read independently. The footer indexes chunk
//! locations so that a reader can fetch exactly the columns and clusters it
//! needs, and every byte fetched is counted in a [`ReadAccount`].
//!
//! ```text
//! +------+-----+-----+                           +--------+-----------------------------+
//! | CSTR | ver | pad |  chunk chunk chunk ...    | footer | u64 off | u32 crc | TOOF    |
//! +------+-----+-----+                           +--------+-----------------------------+
//! ```
//!
//! Files are reachable either as local paths or through the data server as
//! `colsrv://host:port/relative/path`.

mod format;
mod reader;
pub mod server;
mod transport;

use std::io;

pub use format::{write_dataset, DEFAULT_CLUSTER_SIZE, FORMAT_VERSION};
pub use reader::{fetch_raw, open, BatchIter, Reader};
pub use server::{serve, DataClient, DataServer, ServerStats};
pub use transport::{parse_uri, Location, Transport, REMOTE_SCHEME};

/// Errors raised while writing, opening or reading columnar files.
#[derive(Debug, thiserror::Error)]
pub enum ColstoreError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated footer")]
    TruncatedFooter,
    #[error("footer CRC mismatch")]
    FooterCrc,
    #[error("chunk CRC mismatch in cluster {cluster}, column '{column}'")]
    ChunkCrc { cluster: usize, column: String },
    #[error("malformed chunk in cluster {cluster}, column '{column}': {reason}")]
    MalformedChunk {
        cluster: usize,
        column: String,
        reason: String,
    },
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("invalid column name '{0}'")]
    InvalidColumnName(String),
    #[error("duplicate column '{0}'")]
    DuplicateColumn(String),
    #[error("column '{name}' has {len} entries, expected {expected}")]
    LengthMismatch {
        name: String,
        len: usize,
        expected: usize,
    },
    #[error("cluster size must be at least 1")]
    ZeroClusterSize,
    #[error("invalid range [{begin}, {end}) for {total} entries")]
    InvalidRange { begin: u64, end: u64, total: u64 },
    #[error("invalid URI '{0}'")]
    InvalidUri(String),
    #[error("data server error {code}: {message}")]
    Server { code: u16, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T, E = ColstoreError> = std::result::Result<T, E>;

/// Storage type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    F64,
    I64,
    Bool,
    VecF64,
    VecI64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::I64 => 1,
            Dtype::Bool => 2,
            Dtype::VecF64 => 3,
            Dtype::VecI64 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        Some(match code {
            0 => Dtype::F64,
            1 => Dtype::I64,
            2 => Dtype::Bool,
            3 => Dtype::VecF64,
            4 => Dtype::VecI64,
            _ => return None,
        })
    }

    pub fn is_vector(self) -> bool {
        matches!(self, Dtype::VecF64 | Dtype::VecI64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub name: String,
    pub dtype: Dtype,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, dtype: Dtype) -> Self {
        ColumnSchema {
            name: name.into(),
            dtype,
        }
    }
}

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Location and checksum of one column chunk inside a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkInfo {
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterInfo {
    pub entry_start: u64,
    pub entry_count: u32,
    /// One chunk per schema column, in schema order.
    pub chunks: Vec<ChunkInfo>,
}

impl ClusterInfo {
    pub fn entry_end(&self) -> u64 {
        self.entry_start + u64::from(self.entry_count)
    }
}

/// How a dataset is reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportKind {
    Local,
    Remote { server: String },
}

/// Immutable description of an opened file: schema plus cluster index.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub uri: String,
    pub schema: Vec<ColumnSchema>,
    pub clusters: Vec<ClusterInfo>,
    pub total_entries: u64,
    pub transport: TransportKind,
    pub file_size: u64,
    /// Bytes consumed by `open` (header, trailer and footer body).
    pub meta_bytes: u64,
}

impl DatasetHandle {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    /// Sum of chunk lengths for the given columns over all clusters.
    pub fn chunk_bytes(&self, columns: &[&str]) -> Result<u64> {
        let idx = columns
            .iter()
            .map(|c| {
                self.column_index(c)
                    .ok_or_else(|| ColstoreError::UnknownColumn(c.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .clusters
            .iter()
            .flat_map(|cl| idx.iter().map(move |&i| cl.chunks[i].length))
            .sum())
    }

    /// Total bytes of all chunks in the file.
    pub fn data_bytes(&self) -> u64 {
        self.clusters
            .iter()
            .flat_map(|cl| cl.chunks.iter().map(|c| c.length))
            .sum()
    }

    /// Indices of the clusters overlapping `[begin, end)`.
    pub fn clusters_overlapping(&self, begin: u64, end: u64) -> std::ops::Range<usize> {
        if begin >= end {
            return 0..0;
        }
        let first = self.clusters.partition_point(|c| c.entry_end() <= begin);
        let last = self.clusters.partition_point(|c| c.entry_start < end);
        first..last.max(first)
    }
}

/// Byte counters of one reader session. Only ever grows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadAccount {
    /// Every byte received, metadata and raw downloads included.
    pub bytes_read: u64,
    pub read_calls: u64,
    /// Bytes that belonged to column chunks.
    pub chunk_bytes: u64,
}

impl ReadAccount {
    pub fn record(&mut self, bytes: u64) {
        self.bytes_read += bytes;
        self.read_calls += 1;
    }

    pub fn since(&self, earlier: &ReadAccount) -> ReadAccount {
        ReadAccount {
            bytes_read: self.bytes_read - earlier.bytes_read,
            read_calls: self.read_calls - earlier.read_calls,
            chunk_bytes: self.chunk_bytes - earlier.chunk_bytes,
        }
    }

    pub fn add(&mut self, other: &ReadAccount) {
        self.bytes_read += other.bytes_read;
        self.read_calls += other.read_calls;
        self.chunk_bytes += other.chunk_bytes;
    }
}

/// Decoded values of one column. Vector columns are stored flattened, with
/// `offsets.len() == entries + 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    F64(Vec<f64>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
    VecF64 { offsets: Vec<usize>, values: Vec<f64> },
    VecI64 { offsets: Vec<usize>, values: Vec<i64> },
}

impl ColumnData {
    pub fn empty(dtype: Dtype) -> ColumnData {
        match dtype {
            Dtype::F64 => ColumnData::F64(Vec::new()),
            Dtype::I64 => ColumnData::I64(Vec::new()),
            Dtype::Bool => ColumnData::Bool(Vec::new()),
            Dtype::VecF64 => ColumnData::VecF64 {
                offsets: vec![0],
                values: Vec::new(),
            },
            Dtype::VecI64 => ColumnData::VecI64 {
                offsets: vec![0],
                values: Vec::new(),
            },
        }
    }

    /// Builds a vector column from per-entry vectors.
    pub fn vec_f64<I: IntoIterator<Item = Vec<f64>>>(rows: I) -> ColumnData {
        let mut offsets = vec![0];
        let mut values = Vec::new();
        for row in rows {
            values.extend(row);
            offsets.push(values.len());
        }
        ColumnData::VecF64 { offsets, values }
    }

    pub fn vec_i64<I: IntoIterator<Item = Vec<i64>>>(rows: I) -> ColumnData {
        let mut offsets = vec![0];
        let mut values = Vec::new();
        for row in rows {
            values.extend(row);
            offsets.push(values.len());
        }
        ColumnData::VecI64 { offsets, values }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ColumnData::F64(_) => Dtype::F64,
            ColumnData::I64(_) => Dtype::I64,
            ColumnData::Bool(_) => Dtype::Bool,
            ColumnData::VecF64 { .. } => Dtype::VecF64,
            ColumnData::VecI64 { .. } => Dtype::VecI64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::F64(v) => v.len(),
            ColumnData::I64(v) => v.len(),
            ColumnData::Bool(v) => v.len(),
            ColumnData::VecF64 { offsets, .. } | ColumnData::VecI64 { offsets, .. } => {
                offsets.len() - 1
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of entries `[begin, end)`.
    pub fn slice(&self, begin: usize, end: usize) -> ColumnData {
        fn rebase(offsets: &[usize], begin: usize, end: usize) -> (Vec<usize>, usize, usize) {
            let lo = offsets[begin];
            let hi = offsets[end];
            (offsets[begin..=end].iter().map(|o| o - lo).collect(), lo, hi)
        }
        match self {
            ColumnData::F64(v) => ColumnData::F64(v[begin..end].to_vec()),
            ColumnData::I64(v) => ColumnData::I64(v[begin..end].to_vec()),
            ColumnData::Bool(v) => ColumnData::Bool(v[begin..end].to_vec()),
            ColumnData::VecF64 { offsets, values } => {
                let (offsets, lo, hi) = rebase(offsets, begin, end);
                ColumnData::VecF64 {
                    offsets,
                    values: values[lo..hi].to_vec(),
                }
            }
            ColumnData::VecI64 { offsets, values } => {
                let (offsets, lo, hi) = rebase(offsets, begin, end);
                ColumnData::VecI64 {
                    offsets,
                    values: values[lo..hi].to_vec(),
                }
            }
        }
    }

    /// Appends entry `row` of `other`, which must have the same dtype.
    pub fn push_from(&mut self, other: &ColumnData, row: usize) {
        match (self, other) {
            (ColumnData::F64(a), ColumnData::F64(b)) => a.push(b[row]),
            (ColumnData::I64(a), ColumnData::I64(b)) => a.push(b[row]),
            (ColumnData::Bool(a), ColumnData::Bool(b)) => a.push(b[row]),
            (
                ColumnData::VecF64 { offsets, values },
                ColumnData::VecF64 {
                    offsets: o,
                    values: v,
                },
            ) => {
                values.extend_from_slice(&v[o[row]..o[row + 1]]);
                offsets.push(values.len());
            }
            (
                ColumnData::VecI64 { offsets, values },
                ColumnData::VecI64 {
                    offsets: o,
                    values: v,
                },
            ) => {
                values.extend_from_slice(&v[o[row]..o[row + 1]]);
                offsets.push(values.len());
            }
            (a, b) => panic!("push_from dtype mismatch: {:?} vs {:?}", a.dtype(), b.dtype()),
        }
    }

    /// Approximate heap footprint of the decoded values.
    pub fn heap_bytes(&self) -> usize {
        use std::mem::size_of;
        match self {
            ColumnData::F64(v) => v.len() * 8,
            ColumnData::I64(v) => v.len() * 8,
            ColumnData::Bool(v) => v.len(),
            ColumnData::VecF64 { offsets, values } => {
                offsets.len() * size_of::<usize>() + values.len() * 8
            }
            ColumnData::VecI64 { offsets, values } => {
                offsets.len() * size_of::<usize>() + values.len() * 8
            }
        }
    }
}

/// Decoded slice of a file: `entry_count` entries of the requested columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBatch {
    pub entry_start: u64,
    pub entry_count: usize,
    pub columns: Vec<(String, ColumnData)>,
}

impl ColumnBatch {
    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn heap_bytes(&self) -> usize {
        self.columns.iter().map(|(_, c)| c.heap_bytes()).sum()
    }
}
