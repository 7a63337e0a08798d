//! The training metrics CSV: header `epoch,train_loss,train_acc,val_loss,val_acc`,
//! one row per epoch. The plot command reads this file back verbatim.

use std::io::Write;
use std::path::Path;

use caedet_core::error::{Error, Result};
use caedet_core::train::EpochMetrics;

pub const HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{HEADER}").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => {
            return Err(Error::format(
                0,
                format!("metrics CSV header must be '{HEADER}', found {other:?}"),
            ));
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<EpochMetrics> {
            let [epoch, tl, ta, vl, va] = fields.as_slice() else {
                return None;
            };
            Some(EpochMetrics {
                epoch: epoch.parse().ok()?,
                train_loss: tl.parse().ok()?,
                train_acc: ta.parse().ok()?,
                val_loss: vl.parse().ok()?,
                val_acc: va.parse().ok()?,
            })
        })();
        rows.push(parsed.ok_or_else(|| {
            Error::format(0, format!("metrics CSV line {} is malformed: {line:?}", lineno + 2))
        })?);
    }
    if rows.is_empty() {
        return Err(Error::format(0, "metrics CSV has no data rows".to_string()));
    }
    Ok(rows)
}
