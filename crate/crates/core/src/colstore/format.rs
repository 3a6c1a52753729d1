use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{
    is_valid_identifier, ChunkInfo, ClusterInfo, ColstoreError, ColumnData, ColumnSchema, Dtype,
    Result,
};
use crate::wire::{ByteReader, ByteWriter};

pub const FORMAT_VERSION: u8 = 1;
pub const DEFAULT_CLUSTER_SIZE: usize = 10_000;

pub(crate) const HEADER_MAGIC: &[u8; 4] = b"CSTR";
pub(crate) const TRAILER_MAGIC: &[u8; 4] = b"TOOF";
pub(crate) const HEADER_LEN: u64 = 8;
pub(crate) const TRAILER_LEN: u64 = 16;

/// Decoded footer body.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Footer {
    pub schema: Vec<ColumnSchema>,
    pub total_entries: u64,
    pub clusters: Vec<ClusterInfo>,
}

/// Writes `columns` to `path` as a columnar file with clusters of
/// `cluster_size` entries (the last one may be short).
pub fn write_dataset(
    path: impl AsRef<Path>,
    columns: &[(String, ColumnData)],
    cluster_size: usize,
) -> Result<Vec<ClusterInfo>> {
    if cluster_size == 0 {
        return Err(ColstoreError::ZeroClusterSize);
    }
    let entries = columns.first().map_or(0, |(_, c)| c.len());
    let mut schema = Vec::with_capacity(columns.len());
    for (name, data) in columns {
        if !is_valid_identifier(name) {
            return Err(ColstoreError::InvalidColumnName(name.clone()));
        }
        if schema.iter().any(|s: &ColumnSchema| &s.name == name) {
            return Err(ColstoreError::DuplicateColumn(name.clone()));
        }
        if data.len() != entries {
            return Err(ColstoreError::LengthMismatch {
                name: name.clone(),
                len: data.len(),
                expected: entries,
            });
        }
        schema.push(ColumnSchema::new(name.clone(), data.dtype()));
    }

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(HEADER_MAGIC)?;
    out.write_all(&[FORMAT_VERSION, 0, 0, 0])?;
    let mut offset = HEADER_LEN;

    let mut clusters = Vec::new();
    let mut start = 0usize;
    while start < entries {
        let end = (start + cluster_size).min(entries);
        let mut chunks = Vec::with_capacity(columns.len());
        for (_, data) in columns {
            let bytes = encode_chunk(data, start, end);
            out.write_all(&bytes)?;
            chunks.push(ChunkInfo {
                offset,
                length: bytes.len() as u64,
                crc32: crc32fast::hash(&bytes),
            });
            offset += bytes.len() as u64;
        }
        clusters.push(ClusterInfo {
            entry_start: start as u64,
            entry_count: (end - start) as u32,
            chunks,
        });
        start = end;
    }

    let footer = Footer {
        schema,
        total_entries: entries as u64,
        clusters,
    };
    let body = encode_footer(&footer)?;
    out.write_all(&body)?;
    let mut trailer = ByteWriter::with_capacity(TRAILER_LEN as usize);
    trailer
        .u64(offset)
        .u32(crc32fast::hash(&body))
        .bytes(TRAILER_MAGIC);
    out.write_all(trailer.as_slice())?;
    out.flush()?;
    Ok(footer.clusters)
}

pub(crate) fn encode_footer(footer: &Footer) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.u32(footer.schema.len() as u32);
    for col in &footer.schema {
        w.str(&col.name)
            .map_err(|_| ColstoreError::InvalidColumnName(col.name.clone()))?;
        w.u8(col.dtype.code());
    }
    w.u64(footer.total_entries);
    w.u32(footer.clusters.len() as u32);
    for cl in &footer.clusters {
        w.u64(cl.entry_start).u32(cl.entry_count);
        for ch in &cl.chunks {
            w.u64(ch.offset).u64(ch.length).u32(ch.crc32);
        }
    }
    Ok(w.into_inner())
}

pub(crate) fn decode_footer(body: &[u8]) -> Result<Footer> {
    let trunc = |_| ColstoreError::TruncatedFooter;
    let mut r = ByteReader::new(body);
    let n_columns = r.u32().map_err(trunc)? as usize;
    let mut schema = Vec::with_capacity(n_columns.min(4096));
    for _ in 0..n_columns {
        let name = r.str().map_err(|_| ColstoreError::TruncatedFooter)?;
        let code = r.u8().map_err(trunc)?;
        let dtype = Dtype::from_code(code)
            .ok_or_else(|| ColstoreError::Protocol(format!("unknown dtype code {code}")))?;
        schema.push(ColumnSchema { name, dtype });
    }
    let total_entries = r.u64().map_err(trunc)?;
    let n_clusters = r.u32().map_err(trunc)? as usize;
    let mut clusters = Vec::with_capacity(n_clusters.min(1 << 20));
    for _ in 0..n_clusters {
        let entry_start = r.u64().map_err(trunc)?;
        let entry_count = r.u32().map_err(trunc)?;
        let mut chunks = Vec::with_capacity(n_columns);
        for _ in 0..n_columns {
            chunks.push(ChunkInfo {
                offset: r.u64().map_err(trunc)?,
                length: r.u64().map_err(trunc)?,
                crc32: r.u32().map_err(trunc)?,
            });
        }
        clusters.push(ClusterInfo {
            entry_start,
            entry_count,
            chunks,
        });
    }
    Ok(Footer {
        schema,
        total_entries,
        clusters,
    })
}

/// Encodes entries `[begin, end)` of a column as one chunk.
pub(crate) fn encode_chunk(data: &ColumnData, begin: usize, end: usize) -> Vec<u8> {
    let n = end - begin;
    match data {
        ColumnData::F64(v) => v[begin..end].iter().flat_map(|x| x.to_le_bytes()).collect(),
        ColumnData::I64(v) => v[begin..end].iter().flat_map(|x| x.to_le_bytes()).collect(),
        ColumnData::Bool(v) => v[begin..end].iter().map(|&b| b as u8).collect(),
        ColumnData::VecF64 { offsets, values } => {
            let mut out = Vec::with_capacity(n * 4 + (offsets[end] - offsets[begin]) * 8);
            for i in begin..end {
                out.extend_from_slice(&((offsets[i + 1] - offsets[i]) as u32).to_le_bytes());
            }
            for x in &values[offsets[begin]..offsets[end]] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
        ColumnData::VecI64 { offsets, values } => {
            let mut out = Vec::with_capacity(n * 4 + (offsets[end] - offsets[begin]) * 8);
            for i in begin..end {
                out.extend_from_slice(&((offsets[i + 1] - offsets[i]) as u32).to_le_bytes());
            }
            for x in &values[offsets[begin]..offsets[end]] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
    }
}

/// Decodes a chunk holding `n` entries. Returns a description of the problem
/// when the byte length does not match the encoding.
pub(crate) fn decode_chunk(
    dtype: Dtype,
    n: usize,
    bytes: &[u8],
) -> std::result::Result<ColumnData, String> {
    let words = |b: &[u8]| -> Vec<[u8; 8]> {
        b.chunks_exact(8)
            .map(|c| c.try_into().expect("8-byte chunk"))
            .collect()
    };
    match dtype {
        Dtype::F64 | Dtype::I64 => {
            if bytes.len() != n * 8 {
                return Err(format!("expected {} bytes, found {}", n * 8, bytes.len()));
            }
            Ok(if dtype == Dtype::F64 {
                ColumnData::F64(words(bytes).into_iter().map(f64::from_le_bytes).collect())
            } else {
                ColumnData::I64(words(bytes).into_iter().map(i64::from_le_bytes).collect())
            })
        }
        Dtype::Bool => {
            if bytes.len() != n {
                return Err(format!("expected {} bytes, found {}", n, bytes.len()));
            }
            bytes
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(format!("invalid bool byte {other}")),
                })
                .collect::<std::result::Result<_, _>>()
                .map(ColumnData::Bool)
        }
        Dtype::VecF64 | Dtype::VecI64 => {
            if bytes.len() < n * 4 {
                return Err(format!("lengths array needs {} bytes", n * 4));
            }
            let (lens, rest) = bytes.split_at(n * 4);
            let mut offsets = Vec::with_capacity(n + 1);
            offsets.push(0usize);
            let mut total = 0usize;
            for l in lens.chunks_exact(4) {
                total += u32::from_le_bytes(l.try_into().expect("4-byte chunk")) as usize;
                offsets.push(total);
            }
            if rest.len() != total * 8 {
                return Err(format!(
                    "expected {} value bytes, found {}",
                    total * 8,
                    rest.len()
                ));
            }
            Ok(if dtype == Dtype::VecF64 {
                ColumnData::VecF64 {
                    offsets,
                    values: words(rest).into_iter().map(f64::from_le_bytes).collect(),
                }
            } else {
                ColumnData::VecI64 {
                    offsets,
                    values: words(rest).into_iter().map(i64::from_le_bytes).collect(),
                }
            })
        }
    }
}
