//! Binned calibration metrics over prediction logs: ECE, its class-wise
//! variant SCE, reliability-diagram rows, and size-weighted averaging.
//!
//! Bins are equal width over `(0, 1]` and half open on the left, so a
//! confidence `c` lands in bin `ceil(c * n_bins)` (1-based) and `1.0` falls in
//! the top bin.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::argmax;

pub const DEFAULT_BINS: usize = 15;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
    pub true_class: usize,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn new(probabilities: Vec<f64>, true_class: usize) -> Result<Self> {
        Self::validated(probabilities, true_class, 0)
    }

    fn validated(probabilities: Vec<f64>, true_class: usize, record: usize) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidProbabilities { record, reason };
        if probabilities.is_empty() {
            return Err(invalid("no classes".into()));
        }
        if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(invalid(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("sums to {sum}")));
        }
        if true_class >= probabilities.len() {
            return Err(invalid(format!(
                "true class {true_class} out of range for {} classes",
                probabilities.len()
            )));
        }
        let predicted = argmax(probabilities.iter().copied());
        let confidence = probabilities[predicted];
        if !(confidence > 0.0) {
            return Err(invalid("zero confidence".into()));
        }
        Ok(Self {
            probabilities,
            predicted,
            true_class,
            confidence,
        })
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.true_class
    }

    pub fn n_classes(&self) -> usize {
        self.probabilities.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_bins: usize,
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub sce: f64,
    pub accuracy: f64,
}

pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let k = (confidence * n_bins as f64).ceil();
    (k.max(1.0) as usize).min(n_bins) - 1
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BinAcc {
    count: usize,
    hits: usize,
    conf: KahanSum,
}

/// Bins `(confidence, correct)` pairs and returns the per-bin accumulators.
fn accumulate(items: impl Iterator<Item = (f64, bool)>, n_bins: usize) -> Vec<BinAcc> {
    let mut bins = vec![BinAcc::default(); n_bins];
    for (conf, correct) in items {
        let b = &mut bins[bin_index(conf, n_bins)];
        b.count += 1;
        b.hits += usize::from(correct);
        b.conf.add(conf);
    }
    bins
}

fn weighted_gap(bins: &[BinAcc], total: usize) -> f64 {
    let m = total as f64;
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| {
            let c = b.count as f64;
            (c / m) * (b.hits as f64 / c - b.conf.sum / c).abs()
        })
        .sum()
}

fn check_bins(n_bins: usize) -> Result<()> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("n_bins must be >= 1".into()));
    }
    Ok(())
}

/// Expected calibration error plus the full per-bin breakdown. The report's
/// `sce` field is filled with [`compute_sce`] over the same bins.
pub fn compute_ece(records: &[PredictionRecord], n_bins: usize) -> Result<CalibrationReport> {
    check_bins(n_bins)?;
    if records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let accs = accumulate(records.iter().map(|r| (r.confidence, r.is_correct())), n_bins);
    let width = 1.0 / n_bins as f64;
    let bins = accs
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let (mean_confidence, accuracy) = if b.count == 0 {
                (0.0, 0.0)
            } else {
                (b.conf.sum / b.count as f64, b.hits as f64 / b.count as f64)
            };
            CalibrationBin {
                lower: k as f64 * width,
                upper: if k + 1 == n_bins { 1.0 } else { (k + 1) as f64 * width },
                count: b.count,
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(CalibrationReport {
        n_bins,
        bins,
        ece: weighted_gap(&accs, records.len()),
        sce: compute_sce(records, n_bins)?,
        accuracy: correct as f64 / records.len() as f64,
    })
}

/// Static calibration error: ECE computed separately on every class's
/// probability column and averaged over classes.
pub fn compute_sce(records: &[PredictionRecord], n_bins: usize) -> Result<f64> {
    check_bins(n_bins)?;
    let first = records.first().ok_or(Error::EmptyLog)?;
    let k = first.n_classes();
    if let Some((record, r)) = records.iter().enumerate().find(|(_, r)| r.n_classes() != k) {
        return Err(Error::RaggedProbabilities {
            record,
            expected: k,
            actual: r.n_classes(),
        });
    }
    let total: f64 = (0..k)
        .map(|class| {
            let accs = accumulate(
                records.iter().map(|r| (r.probabilities[class], r.true_class == class)),
                n_bins,
            );
            weighted_gap(&accs, records.len())
        })
        .sum();
    Ok(total / k as f64)
}

/// `sum(size_i * metric_i) / sum(size_i)`.
pub fn weighted_average(per_dataset: &[(usize, f64)]) -> Result<f64> {
    if per_dataset.is_empty() {
        return Err(Error::EmptySet);
    }
    if per_dataset.iter().any(|&(size, _)| size == 0) {
        return Err(Error::InvalidConfig("dataset sizes must be > 0".into()));
    }
    let size: f64 = per_dataset.iter().map(|&(s, _)| s as f64).sum();
    let weighted: f64 = per_dataset.iter().map(|&(s, m)| s as f64 * m).sum();
    Ok(weighted / size)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub bin_center: f64,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub count: usize,
}

/// One row per non-empty bin.
pub fn reliability_data(report: &CalibrationReport) -> Vec<ReliabilityRow> {
    report
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| ReliabilityRow {
            bin_center: 0.5 * (b.lower + b.upper),
            accuracy: b.accuracy,
            mean_confidence: b.mean_confidence,
            count: b.count,
        })
        .collect()
}

pub fn write_reliability_csv<W: Write>(rows: &[ReliabilityRow], mut w: W) -> Result<()> {
    writeln!(w, "bin_center,accuracy,mean_confidence,count")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.bin_center, r.accuracy, r.mean_confidence, r.count)?;
    }
    Ok(())
}

/// Parses a prediction log with header `true_class,p_0,...,p_{K-1}`.
/// Errors carry the 1-based line number of the offending row.
pub fn read_prediction_log<R: Read>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let k = header.len().saturating_sub(1);
    let header_ok = header.get(0) == Some("true_class")
        && k >= 1
        && header.iter().skip(1).enumerate().all(|(i, h)| h == format!("p_{i}"));
    if !header_ok {
        return Err(Error::Parse {
            line: 1,
            message: "expected header true_class,p_0,...,p_{K-1}".into(),
        });
    }
    let mut records = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != k + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", k + 1, rec.len()),
            });
        }
        let parse_err = |s: &str| Error::Parse {
            line,
            message: format!("cannot parse {s:?}"),
        };
        let true_class: usize = rec[0].parse().map_err(|_| parse_err(&rec[0]))?;
        let probs = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| parse_err(s)))
            .collect::<Result<Vec<_>>>()?;
        let record = PredictionRecord::validated(probs, true_class, idx).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_prediction_log<W: Write>(records: &[PredictionRecord], mut w: W) -> Result<()> {
    let k = records.first().map_or(0, PredictionRecord::n_classes);
    let header: Vec<String> = std::iter::once("true_class".to_string())
        .chain((0..k).map(|i| format!("p_{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let probs: Vec<String> = r.probabilities.iter().map(|p| p.to_string()).collect();
        writeln!(w, "{},{}", r.true_class, probs.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(p: &[f64], t: usize) -> PredictionRecord {
        PredictionRecord::new(p.to_vec(), t).unwrap()
    }

    #[test]
    fn record_invariants() {
        let r = rec(&[0.4, 0.4, 0.2], 1);
        assert_eq!(r.predicted, 0, "ties go to the lowest index");
        assert_eq!(r.confidence, 0.4);
        assert!(PredictionRecord::new(vec![0.5, 0.6], 0).is_err());
        assert!(PredictionRecord::new(vec![0.5, 0.5], 2).is_err());
        assert!(PredictionRecord::new(vec![1.2, -0.2], 0).is_err());
    }

    #[test]
    fn bin_edges_are_left_open() {
        assert_eq!(bin_index(1.0, 15), 14);
        assert_eq!(bin_index(0.5, 2), 0);
        assert_eq!(bin_index(0.5000001, 2), 1);
        assert_eq!(bin_index(1e-300, 10), 0);
        assert_eq!(bin_index(0.0, 10), 0);
    }

    #[test]
    fn perfect_confident_log() {
        let log = vec![rec(&[0.0, 1.0], 1); 5];
        let report = compute_ece(&log, DEFAULT_BINS).unwrap();
        assert_eq!(report.ece, 0.0);
        assert_eq!(report.sce, 0.0);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), 5);
    }

    #[test]
    fn empty_log_and_zero_bins() {
        assert!(matches!(compute_ece(&[], 15), Err(Error::EmptyLog)));
        assert!(matches!(compute_sce(&[], 15), Err(Error::EmptyLog)));
        assert!(compute_ece(&[rec(&[1.0], 0)], 0).is_err());
    }

    #[test]
    fn ragged_probabilities() {
        let log = vec![rec(&[0.5, 0.5], 0), rec(&[0.2, 0.3, 0.5], 2)];
        assert!(matches!(
            compute_sce(&log, 10),
            Err(Error::RaggedProbabilities { record: 1, expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn weighted_average_examples() {
        assert_eq!(weighted_average(&[(7, 0.42)]).unwrap(), 0.42);
        assert_abs_diff_eq!(weighted_average(&[(1, 0.2), (1, 0.4)]).unwrap(), 0.3, epsilon = 1e-15);
        assert!(matches!(weighted_average(&[]), Err(Error::EmptySet)));
        assert!(weighted_average(&[(0, 1.0)]).is_err());
    }

    #[test]
    fn reliability_rows_skip_empty_bins() {
        let log = vec![rec(&[0.9, 0.1], 0), rec(&[0.3, 0.7], 0)];
        let report = compute_ece(&log, 10).unwrap();
        let rows = reliability_data(&report);
        assert_eq!(rows.len(), 2);
        assert!(rows.len() <= report.n_bins);
        assert_abs_diff_eq!(rows[0].bin_center, 0.65, epsilon = 1e-12);
        assert_eq!(rows[0].accuracy, 0.0);
        assert_eq!(rows[1].accuracy, 1.0);
    }

    #[test]
    fn prediction_log_round_trip() {
        let log = vec![rec(&[0.9, 0.1], 0), rec(&[0.25, 0.75], 0)];
        let mut buf = Vec::new();
        write_prediction_log(&log, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("true_class,p_0,p_1\n"));
        assert_eq!(read_prediction_log(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn prediction_log_errors_carry_line() {
        let ragged = "true_class,p_0,p_1\n0,0.5,0.5\n1,0.5\n";
        assert!(matches!(read_prediction_log(ragged.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let bad_header = "label,p_0\n0,1.0\n";
        assert!(matches!(read_prediction_log(bad_header.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let bad_sum = "true_class,p_0,p_1\n0,0.5,0.6\n";
        assert!(matches!(read_prediction_log(bad_sum.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
