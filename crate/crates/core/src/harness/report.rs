//! Recovery CSV ingestion and pivoted report tables.

use std::io::Write;
use std::path::Path;

use super::eval::RecoveryRow;
use crate::error::{Error, Result};

/// Parses a recovery CSV produced by `write_recovery_csv`.
pub fn read_recovery_csv(path: &Path) -> Result<Vec<RecoveryRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parameter(format!(
                "{}: line {} has {} fields, expected 6",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Parameter(format!("bad number {s}: {e}")))
        };
        rows.push(RecoveryRow {
            method: fields[0].to_string(),
            p_e: parse(fields[1])?,
            mean: parse(fields[2])?,
            std: parse(fields[3])?,
            trials: fields[4]
                .parse()
                .map_err(|e| Error::Parameter(format!("bad trials: {e}")))?,
            seed: fields[5]
                .parse()
                .map_err(|e| Error::Parameter(format!("bad seed: {e}")))?,
        });
    }
    Ok(rows)
}

/// Collapses duplicate (method, p_e) rows into trial-weighted means.
pub fn merge_recovery_rows(rows: &[RecoveryRow]) -> Vec<RecoveryRow> {
    let mut merged: Vec<RecoveryRow> = Vec::new();
    for r in rows {
        if let Some(existing) = merged
            .iter_mut()
            .find(|m| m.method == r.method && m.p_e == r.p_e)
        {
            let (wa, wb) = (existing.trials as f64, r.trials as f64);
            let total = wa + wb;
            existing.mean = (existing.mean * wa + r.mean * wb) / total;
            // Pooled variance of the two groups.
            let va = existing.std * existing.std;
            let vb = r.std * r.std;
            existing.std = ((va * wa + vb * wb) / total).sqrt();
            existing.trials += r.trials;
        } else {
            merged.push(r.clone());
        }
    }
    merged
}

/// Pivoted table, one row per noise level and one mean/std column pair per
/// method, methods in first-seen order.
pub fn write_report_csv<W: Write>(mut w: W, rows: &[RecoveryRow]) -> Result<()> {
    let merged = merge_recovery_rows(rows);
    let mut methods: Vec<String> = Vec::new();
    for r in &merged {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut levels: Vec<f64> = Vec::new();
    for r in &merged {
        if !levels.contains(&r.p_e) {
            levels.push(r.p_e);
        }
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut header = vec!["p_e".to_string()];
    for m in &methods {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    writeln!(w, "{}", header.join(","))?;
    for &p_e in &levels {
        let mut fields = vec![format!("{p_e}")];
        for m in &methods {
            match merged.iter().find(|r| r.method == *m && r.p_e == p_e) {
                Some(r) => {
                    fields.push(format!("{}", r.mean));
                    fields.push(format!("{}", r.std));
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
