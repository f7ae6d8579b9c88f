//! Per-epoch metrics and their CSV form.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact header of a metrics file.
pub const METRICS_HEADER: &str = "epoch,lr,test_acc_a,test_acc_b,train_noisy_acc_a,train_noisy_acc_b,\
train_clean_acc_a,train_clean_acc_b,mean_eps_a,mean_eps_b,chi,count_a2b,count_b2a,loss_a,loss_b";

/// One completed epoch. Epochs are numbered from 1; the threshold `chi` is
/// the one in force during the epoch (`+inf` when everything is distilled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub test_acc_a: f64,
    pub test_acc_b: f64,
    pub train_noisy_acc_a: f64,
    pub train_noisy_acc_b: f64,
    pub train_clean_acc_a: f64,
    pub train_clean_acc_b: f64,
    pub mean_eps_a: f64,
    pub mean_eps_b: f64,
    pub chi: f64,
    pub count_a2b: usize,
    pub count_b2a: usize,
    pub loss_a: f64,
    pub loss_b: f64,
}

impl EpochRecord {
    pub fn mean_test_acc(&self) -> f64 {
        0.5 * (self.test_acc_a + self.test_acc_b)
    }

    pub fn communication(&self) -> usize {
        self.count_a2b + self.count_b2a
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Mean of both models' final-epoch test accuracy.
    pub fn final_mean_acc(&self) -> Option<f64> {
        self.last().map(EpochRecord::mean_test_acc)
    }

    /// Best mean test accuracy over all epochs.
    pub fn peak_mean_acc(&self) -> Option<f64> {
        self.records.iter().map(EpochRecord::mean_test_acc).reduce(f64::max)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
        if header != METRICS_HEADER {
            return Err(Error::invalid(format!(
                "{}: not a metrics file (header `{header}`)",
                path.display()
            )));
        }
        let records = reader.deserialize().collect::<Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = MetricsWriter::create(path)?;
        for r in &self.records {
            w.append(r)?;
        }
        Ok(())
    }
}

/// Appends records to a metrics file, flushing after each one so the file
/// stays readable while a run is in progress.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{METRICS_HEADER}")?;
        let inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(Self { inner })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        self.inner.serialize(record)?;
        self.inner.flush()?;
        Ok(())
    }
}
