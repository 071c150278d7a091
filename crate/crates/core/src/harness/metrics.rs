use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "round,client_id,pm_acc,gm_acc,train_loss,sparsity,cluster_id,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client_id: usize,
    pub pm_acc: Option<f64>,
    pub gm_acc: Option<f64>,
    pub train_loss: f64,
    pub cluster_id: Option<usize>,
}

/// One round of the metric stream. Accuracies are averaged over clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Completed rounds, starting at 1.
    pub round: usize,
    pub pm_acc: Option<f64>,
    pub gm_acc: Option<f64>,
    pub train_loss: f64,
    pub sparsity: Option<f64>,
    pub cluster_assignments: Option<Vec<usize>>,
    pub wall_time_s: Option<f64>,
    pub clients: Vec<ClientMetrics>,
}

#[derive(Serialize)]
struct Row {
    round: usize,
    client_id: Option<usize>,
    pm_acc: Option<f64>,
    gm_acc: Option<f64>,
    train_loss: f64,
    sparsity: Option<f64>,
    cluster_id: Option<usize>,
    wall_time_s: Option<f64>,
}

/// Append-only CSV sink: one aggregate row per round (empty `client_id`),
/// followed by that round's per-client rows when they were collected.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "metrics.csv".into(),
        source: std::io::Error::other(e.to_string()),
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        inner.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<()> {
        self.inner
            .serialize(Row {
                round: m.round,
                client_id: None,
                pm_acc: m.pm_acc,
                gm_acc: m.gm_acc,
                train_loss: m.train_loss,
                sparsity: m.sparsity,
                cluster_id: None,
                wall_time_s: m.wall_time_s,
            })
            .map_err(csv_err)?;
        for c in &m.clients {
            self.inner
                .serialize(Row {
                    round: m.round,
                    client_id: Some(c.client_id),
                    pm_acc: c.pm_acc,
                    gm_acc: c.gm_acc,
                    train_loss: c.train_loss,
                    sparsity: None,
                    cluster_id: c.cluster_id,
                    wall_time_s: None,
                })
                .map_err(csv_err)?;
        }
        self.inner.flush().map_err(|e| Error::io("metrics.csv", e))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::io("metrics.csv", std::io::Error::other(e.to_string())))
    }
}

/// Maximum of `values` over rounds in the trailing `window` of a run of
/// `rounds` rounds. Rounds without a value are skipped.
pub fn final_score(values: &[(usize, Option<f64>)], rounds: usize, window: usize) -> Option<f64> {
    let first = rounds.saturating_sub(window) + 1;
    values
        .iter()
        .filter(|(r, _)| *r >= first)
        .filter_map(|(_, v)| *v)
        .fold(None, |best: Option<f64>, v| Some(best.map_or(v, |b| b.max(v))))
}
