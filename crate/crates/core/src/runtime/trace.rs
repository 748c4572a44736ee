//! Line-oriented event trace: `tick kind src dst digest`.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TRACE_VERSION: &str = "distlist-trace/1";

#[derive(Debug, Default, Clone)]
pub struct Trace {
    lines: Vec<String>,
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn digest<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("serializable payload");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

impl Trace {
    pub fn record(&mut self, tick: u64, kind: &str, src: impl std::fmt::Display, dst: impl std::fmt::Display, digest: &str) {
        self.lines.push(format!("{tick} {kind} {src} {dst} {digest}"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Full file text: a version header carrying the config, the records,
    /// and a trailing digest over everything before it.
    pub fn render(&self, config_json: &str) -> String {
        let mut s = format!("# {TRACE_VERSION} {config_json}\n");
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        let d = hex::encode(Sha256::digest(s.as_bytes()));
        s.push_str(&format!("# digest {d}\n"));
        s
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct ParsedTrace {
    pub config_json: String,
    pub records: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("missing or unsupported trace header")]
    Version,
    #[error("trace digest mismatch")]
    Digest,
    #[error("malformed record on line {0}")]
    Record(usize),
}

pub fn parse(text: &str) -> Result<ParsedTrace, TraceError> {
    let body_end = text.rfind("# digest ").ok_or(TraceError::Digest)?;
    let (body, tail) = text.split_at(body_end);
    let want = tail.trim_start_matches("# digest ").trim();
    if hex::encode(Sha256::digest(body.as_bytes())) != want {
        return Err(TraceError::Digest);
    }
    let mut lines = body.lines();
    let header = lines.next().ok_or(TraceError::Version)?;
    let config_json = header
        .strip_prefix(&format!("# {TRACE_VERSION} "))
        .ok_or(TraceError::Version)?
        .to_string();
    let mut records = vec![];
    for (i, l) in lines.enumerate() {
        if l.split(' ').count() != 5 {
            return Err(TraceError::Record(i + 2));
        }
        records.push(l.to_string());
    }
    Ok(ParsedTrace { config_json, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_roundtrip() {
        let mut t = Trace::default();
        t.record(3, "Move", "s0", "s1", &digest(&42u32));
        let text = t.render("{}");
        let p = parse(&text).unwrap();
        assert_eq!(p.config_json, "{}");
        assert_eq!(p.records, t.lines());
    }

    #[test]
    fn edits_are_detected() {
        let mut t = Trace::default();
        t.record(3, "Move", "s0", "s1", "00");
        let text = t.render("{}").replace("Move", "Mave");
        assert_eq!(parse(&text), Err(TraceError::Digest));
        let text = t.render("{}").replace(TRACE_VERSION, "other/9");
        assert!(parse(&text).is_err());
    }
}
