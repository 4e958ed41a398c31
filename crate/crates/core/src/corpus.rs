//! Chat-log ingestion and conversation chunking.
//!
//! A corpus is read from line-delimited JSON records (`id`, `author`, `role`,
//! `ts`, `text`) and segmented into chunks by looking for peaks in the
//! inter-message time intervals: a boundary is placed before message `i`
//! when the gap from message `i - 1` clears both an absolute floor and a
//! multiple of the median nonzero gap.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus has no records")]
    EmptyCorpus,
    #[error("malformed record at index {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Designer,
    User,
    Other,
}

impl Role {
    fn parse(s: &str) -> Option<Role> {
        match s.trim().to_ascii_lowercase().as_str() {
            "designer" => Some(Role::Designer),
            "user" => Some(Role::User),
            "other" => Some(Role::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub author: String,
    pub role: Role,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub text: String,
    pub chunk_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub message_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub messages: Vec<Message>,
    pub chunks: Vec<Chunk>,
    pub metadata: BTreeMap<String, String>,
}

/// Peak-detection controls for [`segment_chunks`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Absolute floor on a boundary gap, in seconds.
    pub min_gap: i64,
    /// A boundary gap must also be at least this multiple of the median
    /// nonzero gap.
    pub prominence_factor: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            min_gap: 1800,
            prominence_factor: 3.0,
        }
    }
}

/// One input line before validation. Field names are fixed by the corpus
/// file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: Option<Value>,
    pub author: Option<String>,
    pub role: Option<String>,
    pub ts: Option<Value>,
    pub text: Option<String>,
}

impl RawRecord {
    pub fn new(id: &str, author: &str, role: &str, ts: impl Into<Value>, text: &str) -> Self {
        RawRecord {
            id: Some(Value::String(id.to_string())),
            author: Some(author.to_string()),
            role: Some(role.to_string()),
            ts: Some(ts.into()),
            text: Some(text.to_string()),
        }
    }
}

/// Parses an ISO-8601 instant or integer epoch seconds.
pub fn parse_timestamp(value: &Value) -> Option<i64> {
    match value {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.floor() as i64)),
        Value::String(s) => {
            let s = s.trim();
            if let Ok(secs) = s.parse::<i64>() {
                return Some(secs);
            }
            if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                return Some(dt.timestamp());
            }
            for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
                if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
                    return Some(Utc.from_utc_datetime(&naive).timestamp());
                }
            }
            None
        }
        _ => None,
    }
}

fn value_to_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Validates raw records and builds a timestamp-sorted corpus.
///
/// Records whose text is present but blank are dropped; a missing field,
/// unparseable timestamp, unknown role or duplicate id is an error carrying
/// the offending record index.
pub fn ingest_corpus(records: &[RawRecord]) -> Result<Corpus, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    let mut messages = Vec::with_capacity(records.len());
    for (index, rec) in records.iter().enumerate() {
        let bad = |reason: &str| CorpusError::MalformedRecord {
            index,
            reason: reason.to_string(),
        };
        let id = rec
            .id
            .as_ref()
            .and_then(value_to_id)
            .ok_or_else(|| bad("missing id"))?;
        let author = rec.author.clone().ok_or_else(|| bad("missing author"))?;
        let role = rec.role.as_deref().ok_or_else(|| bad("missing role"))?;
        let role = Role::parse(role).ok_or_else(|| bad(&format!("unknown role {role:?}")))?;
        let ts = rec.ts.as_ref().ok_or_else(|| bad("missing ts"))?;
        let timestamp = parse_timestamp(ts).ok_or_else(|| bad(&format!("unparseable ts {ts}")))?;
        let text = rec.text.as_ref().ok_or_else(|| bad("missing text"))?;
        if !seen.insert(id.clone()) {
            return Err(bad(&format!("duplicate id {id}")));
        }
        if text.trim().is_empty() {
            log::warn!("dropping record {index} ({id}): empty text");
            continue;
        }
        messages.push(Message {
            id,
            author,
            role,
            timestamp,
            text: text.clone(),
            chunk_id: None,
        });
    }
    if messages.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    // stable sort keeps input order for equal timestamps
    messages.sort_by_key(|m| m.timestamp);
    Ok(Corpus {
        messages,
        chunks: Vec::new(),
        metadata: BTreeMap::new(),
    })
}

/// Reads line-delimited records. Blank lines are skipped; a line that is
/// not a JSON object is reported with its record index.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<RawRecord>, CorpusError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                index: out.len(),
                reason: e.to_string(),
            })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Serialize)]
struct OutputRecord<'a> {
    id: &'a str,
    author: &'a str,
    role: Role,
    ts: String,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    chunk_id: Option<&'a str>,
}

/// Writes the corpus back as line-delimited records with `chunk_id` added.
pub fn write_records<W: Write>(corpus: &Corpus, mut w: W) -> Result<(), CorpusError> {
    for m in &corpus.messages {
        let ts = Utc
            .timestamp_opt(m.timestamp, 0)
            .single()
            .map(|dt| dt.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
            .unwrap_or_else(|| m.timestamp.to_string());
        let rec = OutputRecord {
            id: &m.id,
            author: &m.author,
            role: m.role,
            ts,
            text: &m.text,
            chunk_id: m.chunk_id.as_deref(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a corpus file previously written by [`write_records`], restoring
/// chunks from the `chunk_id` column when every message carries one.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut chunk_ids = Vec::new();
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            index: records.len(),
            reason: e.to_string(),
        })?;
        chunk_ids.push(v.get("chunk_id").and_then(|c| c.as_str()).map(str::to_string));
        let rec: RawRecord =
            serde_json::from_value(v).map_err(|e| CorpusError::MalformedRecord {
                index: records.len(),
                reason: e.to_string(),
            })?;
        records.push(rec);
    }
    let mut corpus = ingest_corpus(&records)?;
    if chunk_ids.iter().all(Option::is_some) {
        let by_id: BTreeMap<String, String> = records
            .iter()
            .zip(&chunk_ids)
            .filter_map(|(r, c)| Some((value_to_id(r.id.as_ref()?)?, c.clone()?)))
            .collect();
        for m in &mut corpus.messages {
            m.chunk_id = by_id.get(&m.id).cloned();
        }
        corpus.chunks = chunks_from_assignments(&corpus.messages);
    }
    Ok(corpus)
}

fn chunks_from_assignments(messages: &[Message]) -> Vec<Chunk> {
    let mut chunks: Vec<Chunk> = Vec::new();
    for m in messages {
        let cid = m.chunk_id.clone().unwrap_or_default();
        match chunks.last_mut() {
            Some(c) if c.id == cid => c.message_ids.push(m.id.clone()),
            _ => chunks.push(Chunk {
                id: cid,
                message_ids: vec![m.id.clone()],
            }),
        }
    }
    chunks
}

/// Median of the strictly positive values, or `None` when there are none.
pub(crate) fn median_nonzero(values: &[i64]) -> Option<f64> {
    let mut nz: Vec<i64> = values.iter().copied().filter(|&v| v > 0).collect();
    if nz.is_empty() {
        return None;
    }
    nz.sort_unstable();
    let n = nz.len();
    Some(if n % 2 == 1 {
        nz[n / 2] as f64
    } else {
        (nz[n / 2 - 1] as f64 + nz[n / 2] as f64) / 2.0
    })
}

/// Indices `i` (into the message list) before which a chunk boundary falls.
pub fn boundary_indices(timestamps: &[i64], params: &SegmentParams) -> Vec<usize> {
    let intervals: Vec<i64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    let Some(median) = median_nonzero(&intervals) else {
        return Vec::new();
    };
    let prominence = params.prominence_factor * median;
    intervals
        .iter()
        .enumerate()
        .filter(|&(_, &gap)| gap >= params.min_gap && gap as f64 >= prominence)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Assigns every message to a chunk; existing chunks are replaced.
pub fn segment_chunks(mut corpus: Corpus, params: &SegmentParams) -> Corpus {
    let stamps: Vec<i64> = corpus.messages.iter().map(|m| m.timestamp).collect();
    let boundaries = boundary_indices(&stamps, params);
    let mut chunk = 0usize;
    let mut next = boundaries.iter().peekable();
    for (i, m) in corpus.messages.iter_mut().enumerate() {
        if next.peek() == Some(&&i) {
            chunk += 1;
            next.next();
        }
        m.chunk_id = Some(ChunkId(chunk).to_string());
    }
    corpus.chunks = chunks_from_assignments(&corpus.messages);
    corpus
}

struct ChunkId(usize);

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{:03}", self.0)
    }
}

impl Corpus {
    pub fn message(&self, id: &str) -> Option<&Message> {
        self.messages.iter().find(|m| m.id == id)
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.id == id)
    }

    pub fn is_segmented(&self) -> bool {
        !self.chunks.is_empty() && self.messages.iter().all(|m| m.chunk_id.is_some())
    }

    /// Messages of a chunk, in corpus order.
    pub fn chunk_messages<'a>(&'a self, chunk: &'a Chunk) -> impl Iterator<Item = &'a Message> + 'a {
        chunk.message_ids.iter().filter_map(move |id| self.message(id))
    }

    pub fn research_question(&self) -> Option<&str> {
        self.metadata.get("research_question").map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(gaps: &[i64]) -> Vec<RawRecord> {
        let mut t = 1_700_000_000i64;
        let mut out = vec![RawRecord::new("m0", "a", "user", t, "hello")];
        for (i, g) in gaps.iter().enumerate() {
            t += g;
            out.push(RawRecord::new(&format!("m{}", i + 1), "a", "user", t, "hi"));
        }
        out
    }

    #[test]
    fn sorts_by_timestamp_keeping_input_order_for_ties() {
        let recs = vec![
            RawRecord::new("b", "x", "user", 20, "two"),
            RawRecord::new("a", "x", "designer", 10, "one"),
            RawRecord::new("c", "x", "user", 20, "three"),
        ];
        let c = ingest_corpus(&recs).unwrap();
        let ids: Vec<_> = c.messages.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(c.metadata.is_empty());
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(ingest_corpus(&[]), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn malformed_records_carry_their_index() {
        let mut recs = stream(&[5, 5]);
        recs[1].ts = Some(Value::String("yesterday".into()));
        match ingest_corpus(&recs) {
            Err(CorpusError::MalformedRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
        let mut recs = stream(&[5, 5]);
        recs[2].id = recs[0].id.clone();
        assert!(matches!(
            ingest_corpus(&recs),
            Err(CorpusError::MalformedRecord { index: 2, .. })
        ));
        let mut recs = stream(&[5]);
        recs[0].author = None;
        assert!(matches!(
            ingest_corpus(&recs),
            Err(CorpusError::MalformedRecord { index: 0, .. })
        ));
    }

    #[test]
    fn blank_text_is_dropped_at_ingest() {
        let mut recs = stream(&[5, 5]);
        recs[1].text = Some("   ".into());
        let c = ingest_corpus(&recs).unwrap();
        assert_eq!(c.messages.len(), 2);
    }

    #[test]
    fn iso_and_epoch_timestamps() {
        assert_eq!(parse_timestamp(&Value::from(12)), Some(12));
        assert_eq!(parse_timestamp(&Value::from("12")), Some(12));
        assert_eq!(
            parse_timestamp(&Value::from("1970-01-01T00:01:00Z")),
            Some(60)
        );
        assert_eq!(
            parse_timestamp(&Value::from("1970-01-01T01:00:00+01:00")),
            Some(0)
        );
        assert_eq!(parse_timestamp(&Value::from("1970-01-01 00:00:05")), Some(5));
        assert_eq!(parse_timestamp(&Value::Null), None);
    }

    #[test]
    fn uniform_intervals_give_one_chunk() {
        let c = ingest_corpus(&stream(&[10; 8])).unwrap();
        let params = SegmentParams {
            min_gap: 300,
            prominence_factor: 3.0,
        };
        let c = segment_chunks(c, &params);
        assert_eq!(c.chunks.len(), 1);
        assert_eq!(c.chunks[0].message_ids.len(), 9);
    }

    #[test]
    fn planted_gap_splits_once() {
        let c = ingest_corpus(&stream(&[5, 5, 3600, 5, 5])).unwrap();
        let params = SegmentParams {
            min_gap: 300,
            prominence_factor: 3.0,
        };
        let c = segment_chunks(c, &params);
        assert_eq!(c.chunks.len(), 2);
        assert_eq!(c.chunks[0].message_ids, ["m0", "m1", "m2"]);
        assert_eq!(c.chunks[1].message_ids, ["m3", "m4", "m5"]);
        assert_eq!(c.messages[3].chunk_id.as_deref(), Some("c001"));
    }

    #[test]
    fn threshold_ties_split() {
        // median nonzero = 100, so 300 meets both min_gap and 3x median exactly
        let b = boundary_indices(
            &[0, 100, 200, 500, 600],
            &SegmentParams {
                min_gap: 300,
                prominence_factor: 3.0,
            },
        );
        assert_eq!(b, vec![3]);
    }

    #[test]
    fn zero_intervals_are_excluded_from_the_median() {
        // nonzero gaps: 10, 10, 400 -> median 10
        let b = boundary_indices(
            &[0, 0, 0, 0, 10, 20, 420],
            &SegmentParams {
                min_gap: 300,
                prominence_factor: 3.0,
            },
        );
        assert_eq!(b, vec![6]);
        assert!(boundary_indices(&[5, 5, 5], &SegmentParams::default()).is_empty());
    }

    #[test]
    fn single_message_is_one_chunk() {
        let c = segment_chunks(ingest_corpus(&stream(&[])).unwrap(), &SegmentParams::default());
        assert_eq!(c.chunks.len(), 1);
    }

    #[test]
    fn corpus_file_round_trip_keeps_chunks() {
        let c = segment_chunks(
            ingest_corpus(&stream(&[5, 4000, 5])).unwrap(),
            &SegmentParams {
                min_gap: 300,
                prominence_factor: 3.0,
            },
        );
        let mut buf = Vec::new();
        write_records(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.contains("\"chunk_id\"")));
        let back = read_corpus(&buf[..]).unwrap();
        assert_eq!(back.chunks, c.chunks);
        assert_eq!(back.messages, c.messages);
    }
}
