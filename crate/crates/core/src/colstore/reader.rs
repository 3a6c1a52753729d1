use std::sync::Arc;

use super::format::{
    decode_chunk, decode_footer, FORMAT_VERSION, HEADER_LEN, HEADER_MAGIC, TRAILER_LEN,
    TRAILER_MAGIC,
};
use super::transport::{connect, parse_uri, Transport};
use super::{ColstoreError, ColumnBatch, ColumnData, DatasetHandle, ReadAccount, Result};
use crate::wire::ByteReader;

/// Largest single request issued by [`fetch_raw`].
const RAW_READ_SIZE: usize = 1 << 20;

/// A reader session: one transport connection plus its byte account.
pub struct Reader {
    handle: Arc<DatasetHandle>,
    transport: Box<dyn Transport>,
    account: ReadAccount,
}

/// Opens a local path or `colsrv://` URI, reading only the header, trailer
/// and footer.
pub fn open(uri: &str) -> Result<Reader> {
    let location = parse_uri(uri)?;
    let mut transport = connect(&location)?;
    let mut account = ReadAccount::default();
    let size = transport.size();

    let header = transport.read_at(0, HEADER_LEN as usize)?;
    account.record(header.len() as u64);
    if header.len() < 4 || &header[..4] != HEADER_MAGIC {
        return Err(ColstoreError::BadMagic);
    }
    if header.len() < HEADER_LEN as usize {
        return Err(ColstoreError::TruncatedFooter);
    }
    if header[4] != FORMAT_VERSION {
        return Err(ColstoreError::UnsupportedVersion(header[4]));
    }
    if size < HEADER_LEN + TRAILER_LEN {
        return Err(ColstoreError::TruncatedFooter);
    }

    let trailer = transport.read_at(size - TRAILER_LEN, TRAILER_LEN as usize)?;
    account.record(trailer.len() as u64);
    let mut r = ByteReader::new(&trailer);
    let footer_offset = r.u64().map_err(|_| ColstoreError::TruncatedFooter)?;
    let footer_crc = r.u32().map_err(|_| ColstoreError::TruncatedFooter)?;
    let magic = r.take(4).map_err(|_| ColstoreError::TruncatedFooter)?;
    if magic != TRAILER_MAGIC {
        return Err(ColstoreError::TruncatedFooter);
    }
    if footer_offset < HEADER_LEN || footer_offset > size - TRAILER_LEN {
        return Err(ColstoreError::TruncatedFooter);
    }

    let body_len = (size - TRAILER_LEN - footer_offset) as usize;
    let body = transport.read_at(footer_offset, body_len)?;
    account.record(body.len() as u64);
    if body.len() != body_len {
        return Err(ColstoreError::TruncatedFooter);
    }
    if crc32fast::hash(&body) != footer_crc {
        return Err(ColstoreError::FooterCrc);
    }
    let footer = decode_footer(&body)?;
    validate_index(&footer, footer_offset)?;

    let handle = DatasetHandle {
        uri: uri.to_string(),
        schema: footer.schema,
        clusters: footer.clusters,
        total_entries: footer.total_entries,
        transport: location.kind(),
        file_size: size,
        meta_bytes: account.bytes_read,
    };
    Ok(Reader {
        handle: Arc::new(handle),
        transport,
        account,
    })
}

fn validate_index(footer: &super::format::Footer, data_end: u64) -> Result<()> {
    let corrupt = |what: &str| Err(ColstoreError::Protocol(format!("corrupt index: {what}")));
    let mut next = 0u64;
    let mut regions = Vec::new();
    for cl in &footer.clusters {
        if cl.entry_start != next {
            return corrupt("clusters are not contiguous");
        }
        if cl.entry_count == 0 {
            return corrupt("empty cluster");
        }
        if cl.chunks.len() != footer.schema.len() {
            return corrupt("chunk count differs from column count");
        }
        next = cl.entry_end();
        for ch in &cl.chunks {
            let end = ch.offset.checked_add(ch.length);
            match end {
                Some(end) if ch.offset >= HEADER_LEN && end <= data_end => {
                    regions.push((ch.offset, end))
                }
                _ => return corrupt("chunk outside the data region"),
            }
        }
    }
    if next != footer.total_entries {
        return corrupt("total_entries differs from cluster sum");
    }
    regions.sort_unstable();
    if regions.windows(2).any(|w| w[1].0 < w[0].1) {
        return corrupt("overlapping chunks");
    }
    Ok(())
}

impl Reader {
    /// Starts a new session on an already opened handle. Reads no metadata.
    pub fn session(handle: Arc<DatasetHandle>) -> Result<Reader> {
        let transport = connect(&parse_uri(&handle.uri)?)?;
        Ok(Reader {
            handle,
            transport,
            account: ReadAccount::default(),
        })
    }

    pub fn handle(&self) -> &Arc<DatasetHandle> {
        &self.handle
    }

    pub fn account(&self) -> ReadAccount {
        self.account
    }

    /// Streams the requested columns over `[begin, end)`, one batch per
    /// overlapped cluster, trimmed at the edges.
    pub fn read_range<S: AsRef<str>>(
        &mut self,
        columns: &[S],
        begin: u64,
        end: u64,
    ) -> Result<BatchIter<'_>> {
        let total = self.handle.total_entries;
        if begin > end || end > total {
            return Err(ColstoreError::InvalidRange { begin, end, total });
        }
        let mut selected = Vec::with_capacity(columns.len());
        for c in columns {
            let c = c.as_ref();
            let idx = self
                .handle
                .column_index(c)
                .ok_or_else(|| ColstoreError::UnknownColumn(c.to_string()))?;
            selected.push(idx);
        }
        let clusters = self.handle.clusters_overlapping(begin, end);
        Ok(BatchIter {
            reader: self,
            selected,
            clusters,
            begin,
            end,
        })
    }

    /// Reads and decodes the listed columns of cluster `cluster`.
    pub fn read_cluster(&mut self, cluster: usize, columns: &[usize]) -> Result<ColumnBatch> {
        let handle = Arc::clone(&self.handle);
        let info = &handle.clusters[cluster];
        let n = info.entry_count as usize;
        let mut out = Vec::with_capacity(columns.len());
        for &col in columns {
            let schema = &handle.schema[col];
            let chunk = info.chunks[col];
            let bytes = self.transport.read_at(chunk.offset, chunk.length as usize)?;
            self.account.record(bytes.len() as u64);
            self.account.chunk_bytes += bytes.len() as u64;
            if bytes.len() as u64 != chunk.length {
                return Err(ColstoreError::MalformedChunk {
                    cluster,
                    column: schema.name.clone(),
                    reason: format!("short read: {} of {} bytes", bytes.len(), chunk.length),
                });
            }
            if crc32fast::hash(&bytes) != chunk.crc32 {
                return Err(ColstoreError::ChunkCrc {
                    cluster,
                    column: schema.name.clone(),
                });
            }
            let data = decode_chunk(schema.dtype, n, &bytes).map_err(|reason| {
                ColstoreError::MalformedChunk {
                    cluster,
                    column: schema.name.clone(),
                    reason,
                }
            })?;
            out.push((schema.name.clone(), data));
        }
        Ok(ColumnBatch {
            entry_start: info.entry_start,
            entry_count: n,
            columns: out,
        })
    }

    /// Reads every selected column over the full range into one batch.
    pub fn read_all<S: AsRef<str>>(&mut self, columns: &[S]) -> Result<ColumnBatch> {
        let total = self.handle.total_entries;
        let names: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
        let mut merged: Vec<(String, ColumnData)> = Vec::new();
        for batch in self.read_range(&names, 0, total)? {
            let batch = batch?;
            if merged.is_empty() {
                merged = batch.columns;
                continue;
            }
            for ((_, acc), (_, part)) in merged.iter_mut().zip(&batch.columns) {
                for row in 0..part.len() {
                    acc.push_from(part, row);
                }
            }
        }
        if merged.is_empty() {
            let handle = &self.handle;
            merged = names
                .iter()
                .map(|n| {
                    let idx = handle.column_index(n).expect("validated by read_range");
                    (n.clone(), ColumnData::empty(handle.schema[idx].dtype))
                })
                .collect();
        }
        Ok(ColumnBatch {
            entry_start: 0,
            entry_count: total as usize,
            columns: merged,
        })
    }
}

/// Iterator over the batches of a [`Reader::read_range`] call.
pub struct BatchIter<'r> {
    reader: &'r mut Reader,
    selected: Vec<usize>,
    clusters: std::ops::Range<usize>,
    begin: u64,
    end: u64,
}

impl Iterator for BatchIter<'_> {
    type Item = Result<ColumnBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        let cluster = self.clusters.next()?;
        let batch = match self.reader.read_cluster(cluster, &self.selected) {
            Ok(b) => b,
            Err(e) => {
                self.clusters = 0..0;
                return Some(Err(e));
            }
        };
        let start = batch.entry_start;
        let lo = self.begin.max(start) - start;
        let hi = self.end.min(start + batch.entry_count as u64) - start;
        if lo == 0 && hi == batch.entry_count as u64 {
            return Some(Ok(batch));
        }
        let (lo, hi) = (lo as usize, hi as usize);
        Some(Ok(ColumnBatch {
            entry_start: start + lo as u64,
            entry_count: hi - lo,
            columns: batch
                .columns
                .into_iter()
                .map(|(n, c)| (n, c.slice(lo, hi)))
                .collect(),
        }))
    }
}

/// Downloads the first `len` bytes of an arbitrary file (local or remote),
/// recording every read in `account`. The bytes are discarded.
pub fn fetch_raw(uri: &str, len: u64, account: &mut ReadAccount) -> Result<()> {
    if len == 0 {
        return Ok(());
    }
    let mut transport = connect(&parse_uri(uri)?)?;
    if transport.size() < len {
        return Err(ColstoreError::Protocol(format!(
            "'{uri}' has {} bytes, {len} requested",
            transport.size()
        )));
    }
    let mut offset = 0u64;
    while offset < len {
        let want = (len - offset).min(RAW_READ_SIZE as u64) as usize;
        let got = transport.read_at(offset, want)?;
        account.record(got.len() as u64);
        if got.is_empty() {
            return Err(ColstoreError::Protocol(format!("'{uri}' ended early")));
        }
        offset += got.len() as u64;
    }
    Ok(())
}
