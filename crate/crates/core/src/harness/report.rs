//! Plot-ready curves extracted from a metrics file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::metrics::RunMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    /// Mean test accuracy of both models.
    Acc,
    /// Knowledge communication frequency, `count_a2b + count_b2a`.
    Comm,
    /// Selection threshold.
    Chi,
}

impl Curve {
    pub fn as_str(self) -> &'static str {
        match self {
            Curve::Acc => "acc",
            Curve::Comm => "comm",
            Curve::Chi => "chi",
        }
    }
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Curve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" => Ok(Curve::Acc),
            "comm" => Ok(Curve::Comm),
            "chi" => Ok(Curve::Chi),
            other => Err(Error::invalid(format!(
                "unknown curve `{other}` (expected acc, comm or chi)"
            ))),
        }
    }
}

/// `(epoch, value)` pairs, one per record.
pub fn extract_curve(metrics: &RunMetrics, curve: Curve) -> Vec<(usize, f64)> {
    metrics
        .records
        .iter()
        .map(|r| {
            let v = match curve {
                Curve::Acc => r.mean_test_acc(),
                Curve::Comm => r.communication() as f64,
                Curve::Chi => r.chi,
            };
            (r.epoch, v)
        })
        .collect()
}

/// Writes an `epoch,value` CSV.
pub fn write_curve(points: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "value"])?;
    for (epoch, v) in points {
        w.serialize((epoch, v))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::EpochRecord;

    fn metrics() -> RunMetrics {
        let r = |epoch, acc_a, chi| EpochRecord {
            epoch,
            lr: 0.1,
            test_acc_a: acc_a,
            test_acc_b: 0.5,
            train_noisy_acc_a: 0.0,
            train_noisy_acc_b: 0.0,
            train_clean_acc_a: 0.0,
            train_clean_acc_b: 0.0,
            mean_eps_a: 0.0,
            mean_eps_b: 0.0,
            chi,
            count_a2b: 3 * epoch,
            count_b2a: 4,
            loss_a: 0.0,
            loss_b: 0.0,
        };
        RunMetrics {
            records: vec![r(1, 0.25, 1.5), r(2, 0.75, 1.25)],
        }
    }

    #[test]
    fn curves() {
        let m = metrics();
        assert_eq!(extract_curve(&m, Curve::Acc), vec![(1, 0.375), (2, 0.625)]);
        assert_eq!(extract_curve(&m, Curve::Comm), vec![(1, 7.0), (2, 10.0)]);
        assert_eq!(extract_curve(&m, Curve::Chi), vec![(1, 1.5), (2, 1.25)]);
    }

    #[test]
    fn curve_names() {
        for c in [Curve::Acc, Curve::Comm, Curve::Chi] {
            assert_eq!(c.as_str().parse::<Curve>().unwrap(), c);
        }
        assert!("loss".parse::<Curve>().is_err());
    }

    #[test]
    fn written_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_curve(&extract_curve(&metrics(), Curve::Chi), &path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "epoch,value\n1,1.5\n2,1.25\n");
    }
}
