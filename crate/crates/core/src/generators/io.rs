use std::io::{BufRead, Write};

use super::GeneratorError;
use crate::engine::EventRecord;

/// One record per line.
pub fn write_stream<W: Write>(mut w: W, records: &[EventRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_stream<R: BufRead>(r: R) -> Result<Vec<EventRecord>, GeneratorError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| GeneratorError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GeneratorError::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{gen_flights, Counts, GeneratorConfig};

    #[test]
    fn roundtrip() {
        let cfg = GeneratorConfig { counts: Counts { flights: 50, ..Counts::default() }, ..GeneratorConfig::default() };
        let recs = gen_flights(&cfg).unwrap();
        let mut buf = Vec::new();
        write_stream(&mut buf, &recs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 50);
        assert_eq!(read_stream(&buf[..]).unwrap(), recs);
        assert!(matches!(read_stream(&b"{}\n"[..]), Err(GeneratorError::Parse { line: 1, .. })));
    }
}
