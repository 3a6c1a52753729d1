use crate::hist::{HistError, ResultValue};
use crate::wire::{ByteReader, ByteWriter, DecodeError};

/// Named results grouped by universe, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    pub universes: Vec<(String, Vec<(String, ResultValue)>)>,
}

impl ResultSet {
    pub fn new() -> Self {
        ResultSet::default()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.universes.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.universes.is_empty()
    }

    pub fn universe(&self, label: &str) -> Option<&[(String, ResultValue)]> {
        self.universes
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, r)| r.as_slice())
    }

    pub fn get(&self, universe: &str, name: &str) -> Option<&ResultValue> {
        self.universe(universe)?
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    /// Adds a universe, or merges into it if already present.
    pub fn insert(&mut self, label: &str, results: Vec<(String, ResultValue)>) -> Result<(), HistError> {
        match self.universes.iter_mut().find(|(l, _)| l == label) {
            None => {
                self.universes.push((label.to_string(), results));
                Ok(())
            }
            Some((_, mine)) => merge_named(mine, &results),
        }
    }

    /// Per-universe merge; universes missing on one side are taken as is.
    pub fn merge(&mut self, other: &ResultSet) -> Result<(), HistError> {
        for (label, results) in &other.universes {
            self.insert(label, results.clone())?;
        }
        Ok(())
    }

    /// Plain JSON view: `{universe: {name: value}}`, histograms as axis
    /// plus per-bin sums including under- and overflow.
    pub fn to_json(&self) -> serde_json::Value {
        let mut doc = serde_json::Map::new();
        for (label, results) in &self.universes {
            let mut u = serde_json::Map::new();
            for (name, v) in results {
                let j = match v {
                    ResultValue::Histo(h) => serde_json::json!({
                        "nbins": h.nbins(),
                        "xmin": h.xmin(),
                        "xmax": h.xmax(),
                        "entries": h.entries(),
                        "sumw": h.sumw(),
                        "sumw2": h.sumw2(),
                    }),
                    ResultValue::Scalar(s) => serde_json::json!(s.value),
                };
                u.insert(name.clone(), j);
            }
            doc.insert(label.clone(), serde_json::Value::Object(u));
        }
        serde_json::Value::Object(doc)
    }

    /// Reorders universes to follow `order`; unknown labels go last.
    pub fn sort_by_labels(&mut self, order: &[String]) {
        self.universes.sort_by_key(|(l, _)| {
            order.iter().position(|o| o == l).unwrap_or(usize::MAX)
        });
    }

    /// Largest relative per-bin difference; `None` if the two sets do not
    /// hold the same universes and names.
    pub fn max_relative_diff(&self, other: &ResultSet) -> Option<f64> {
        if self.universes.len() != other.universes.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for (label, results) in &self.universes {
            let theirs = other.universe(label)?;
            if theirs.len() != results.len() {
                return None;
            }
            for (name, v) in results {
                let w = theirs.iter().find(|(n, _)| n == name)?;
                worst = worst.max(v.max_relative_diff(&w.1)?);
            }
        }
        Some(worst)
    }

    pub fn encode(&self, w: &mut ByteWriter) -> Result<(), DecodeError> {
        w.u32(self.universes.len() as u32);
        for (label, results) in &self.universes {
            w.str(label)?;
            w.u32(results.len() as u32);
            for (name, v) in results {
                w.str(name)?;
                v.encode(w);
            }
        }
        Ok(())
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<ResultSet, DecodeError> {
        let n = r.u32()? as usize;
        let mut universes = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let label = r.str()?;
            let m = r.u32()? as usize;
            let mut results = Vec::with_capacity(m.min(4096));
            for _ in 0..m {
                let name = r.str()?;
                results.push((name, ResultValue::decode(r)?));
            }
            universes.push((label, results));
        }
        Ok(ResultSet { universes })
    }
}

fn merge_named(mine: &mut Vec<(String, ResultValue)>, theirs: &[(String, ResultValue)]) -> Result<(), HistError> {
    for (name, v) in theirs {
        match mine.iter_mut().find(|(n, _)| n == name) {
            Some((_, m)) => m.merge(v)?,
            None => mine.push((name.clone(), v.clone())),
        }
    }
    Ok(())
}

/// Output of one engine task, or the merge of several.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartialResult {
    pub results: ResultSet,
    /// Snapshot part files written (nominal universe only).
    pub snapshot_parts: Vec<String>,
    pub events_processed: u64,
    /// Event-loop seconds, summed over merged tasks.
    pub t_loop: f64,
    /// All bytes read, metadata included.
    pub bytes_read: u64,
    pub read_calls: u64,
    /// Bytes of column chunks only.
    pub chunk_bytes: u64,
    /// Peak bytes held in decoded column buffers (max over merged tasks).
    pub peak_buffer_bytes: u64,
}

impl PartialResult {
    pub fn merge(&mut self, other: &PartialResult) -> Result<(), HistError> {
        self.results.merge(&other.results)?;
        self.snapshot_parts.extend(other.snapshot_parts.iter().cloned());
        self.events_processed += other.events_processed;
        self.t_loop += other.t_loop;
        self.bytes_read += other.bytes_read;
        self.read_calls += other.read_calls;
        self.chunk_bytes += other.chunk_bytes;
        self.peak_buffer_bytes = self.peak_buffer_bytes.max(other.peak_buffer_bytes);
        Ok(())
    }

    pub fn encode(&self, w: &mut ByteWriter) -> Result<(), DecodeError> {
        w.u64(self.events_processed)
            .f64(self.t_loop)
            .u64(self.bytes_read)
            .u64(self.read_calls)
            .u64(self.chunk_bytes)
            .u64(self.peak_buffer_bytes);
        w.u32(self.snapshot_parts.len() as u32);
        for p in &self.snapshot_parts {
            w.str(p)?;
        }
        self.results.encode(w)
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<PartialResult, DecodeError> {
        let events_processed = r.u64()?;
        let t_loop = r.f64()?;
        let bytes_read = r.u64()?;
        let read_calls = r.u64()?;
        let chunk_bytes = r.u64()?;
        let peak_buffer_bytes = r.u64()?;
        let n = r.u32()? as usize;
        let mut snapshot_parts = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            snapshot_parts.push(r.str()?);
        }
        Ok(PartialResult {
            results: ResultSet::decode(r)?,
            snapshot_parts,
            events_processed,
            t_loop,
            bytes_read,
            read_calls,
            chunk_bytes,
            peak_buffer_bytes,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.encode(&mut w).expect("names fit in u16");
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PartialResult, DecodeError> {
        PartialResult::decode(&mut ByteReader::new(bytes))
    }
}
