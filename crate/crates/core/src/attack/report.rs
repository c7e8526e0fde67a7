use std::io::Write;

use super::{AttackError, QrsrReport, RecoveredQuery};

fn io(e: csv::Error) -> AttackError {
    AttackError::Io(e.to_string())
}

/// One line per operator: query, operator, stage, samples, correct, percent,
/// and the query's QRSR (percent) on every line of that query.
pub fn write_qrsr_csv<W: Write>(w: W, r: &QrsrReport) -> Result<(), AttackError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["query", "operator", "stage", "samples", "correct", "percent", "qrsr"]).map_err(io)?;
    for q in &r.queries {
        let qrsr = q.qrsr.map_or_else(|| "excluded".to_owned(), |v| format!("{:.2}", v * 100.0));
        for o in &q.operators {
            out.write_record([
                q.query_id.clone(),
                o.kind.name().to_owned(),
                o.stage.map_or_else(String::new, |s| s.to_string()),
                o.samples.to_string(),
                o.correct.to_string(),
                format!("{:.2}", o.accuracy * 100.0),
                qrsr.clone(),
            ])
            .map_err(io)?;
        }
        if q.operators.is_empty() {
            out.write_record([q.query_id.as_str(), "", "", "0", "0", "", &qrsr]).map_err(io)?;
        }
    }
    out.flush().map_err(|e| AttackError::Io(e.to_string()))
}

/// One line per recovered stage.
pub fn write_stage_csv<W: Write>(w: W, queries: &[RecoveredQuery]) -> Result<(), AttackError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["query", "stage", "truth", "predicted", "confidence", "window_size", "slide", "deltas", "cv"])
        .map_err(io)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
    for q in queries {
        for s in &q.stages {
            out.write_record([
                q.name.clone(),
                s.stage.to_string(),
                s.truth.name().to_owned(),
                s.prediction.map_or_else(String::new, |p| p.kind.name().to_owned()),
                opt(s.prediction.map(|p| p.confidence)),
                opt(s.window_size),
                opt(s.slide),
                s.deltas.to_string(),
                opt(s.dispersion),
            ])
            .map_err(io)?;
        }
    }
    out.flush().map_err(|e| AttackError::Io(e.to_string()))
}
