use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::trainer::EpochMetrics;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,encoder_loss,prior_loss,objective_nats,objective_bits,validation_score";

#[derive(Serialize)]
struct Row<'a> {
    epoch: usize,
    encoder_loss: f64,
    prior_loss: &'a Option<f64>,
    objective_nats: f64,
    objective_bits: f64,
    validation_score: f64,
}

/// One line per epoch under [`METRICS_HEADER`]; floats use the shortest
/// representation that round-trips, and a missing prior loss is empty.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for h in history {
        let prior = h.prior_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{}",
            h.epoch, h.encoder_loss, prior, h.objective_nats, h.objective_bits, h.validation_score
        )
        .expect("writing to a string");
    }
    s
}

pub fn metrics_json(history: &[EpochMetrics]) -> Result<String> {
    let rows: Vec<Row> = history
        .iter()
        .map(|h| Row {
            epoch: h.epoch,
            encoder_loss: h.encoder_loss,
            prior_loss: &h.prior_loss,
            objective_nats: h.objective_nats,
            objective_bits: h.objective_bits,
            validation_score: h.validation_score,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

/// Writes `metrics.csv` and `metrics.json` into `dir`.
pub fn write_metrics(dir: &Path, history: &[EpochMetrics]) -> Result<()> {
    let csv = dir.join("metrics.csv");
    fs::write(&csv, metrics_csv(history)).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join("metrics.json");
    fs::write(&json, metrics_json(history)?).map_err(|e| Error::io(&json, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_one_row_per_epoch() {
        let h = vec![
            EpochMetrics {
                epoch: 1,
                encoder_loss: -1.5,
                prior_loss: Some(2.0),
                objective_nats: 0.25,
                objective_bits: 0.25 / std::f64::consts::LN_2,
                validation_score: 0.5,
            },
            EpochMetrics {
                epoch: 2,
                encoder_loss: -1.0,
                prior_loss: None,
                objective_nats: 1.0,
                objective_bits: 1.0 / std::f64::consts::LN_2,
                validation_score: 0.75,
            },
        ];
        let csv = metrics_csv(&h);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,-1.5,2,0.25,"));
        assert!(lines[2].starts_with("2,-1,,1,"));
        let json: serde_json::Value = serde_json::from_str(&metrics_json(&h).unwrap()).unwrap();
        assert_eq!(json[1]["prior_loss"], serde_json::Value::Null);
    }
}
