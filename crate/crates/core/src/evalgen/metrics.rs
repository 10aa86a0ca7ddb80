//! Per-record design metrics and their aggregation into a report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alphabet;
use crate::error::{Error, Result};
use crate::geometry::kabsch_rmsd;
use crate::io::records::ProteinRecord;
use crate::model::{Model, Prediction, PROB_FLOOR};
use crate::training::prepare;

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(op, format!("lengths differ: {a} vs {b}")));
    }
    Ok(())
}

/// Percentage of non-fragment positions where `predicted` matches the
/// record; 100 when every position is a fragment.
pub fn recovery(predicted: &str, record: &ProteinRecord) -> Result<f64> {
    check_len("recovery", predicted.len(), record.len())?;
    let mut fragment = vec![false; record.len()];
    for i in record.fragment_positions() {
        fragment[i] = true;
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, (a, b)) in predicted.bytes().zip(record.sequence.bytes()).enumerate() {
        if !fragment[i] {
            total += 1;
            hits += (a == b) as usize;
        }
    }
    Ok(if total == 0 {
        100.0
    } else {
        100.0 * hits as f64 / total as f64
    })
}

/// Percentage of all positions where the sequences agree.
pub fn identity(predicted: &str, reference: &str) -> Result<f64> {
    check_len("identity", predicted.len(), reference.len())?;
    if predicted.is_empty() {
        return Ok(100.0);
    }
    let hits = predicted.bytes().zip(reference.bytes()).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / predicted.len() as f64)
}

/// `exp` of the mean negative log-probability of the true residues over
/// non-fragment positions (1 when there are none).
pub fn perplexity(pred: &Prediction, record: &ProteinRecord) -> f64 {
    let mut fragment = vec![false; record.len()];
    for i in record.fragment_positions() {
        fragment[i] = true;
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for (i, &a) in record.residue_indices().iter().enumerate() {
        if !fragment[i] {
            nll -= pred.probs.at2(i, a).max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    if count == 0 {
        1.0
    } else {
        (nll / count as f64).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub id: String,
    pub length: usize,
    pub recovery: f64,
    pub identity: f64,
    /// Absent for records too short to superpose.
    pub rmsd: Option<f64>,
    pub perplexity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        };
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<RecordMetrics>,
    pub recovery: Option<Summary>,
    pub identity: Option<Summary>,
    pub rmsd: Option<Summary>,
    pub perplexity: Option<Summary>,
}

impl EvalReport {
    pub fn new(records: Vec<RecordMetrics>) -> Self {
        Self {
            recovery: Summary::of(records.iter().map(|r| r.recovery)),
            identity: Summary::of(records.iter().map(|r| r.identity)),
            rmsd: Summary::of(records.iter().filter_map(|r| r.rmsd)),
            perplexity: Summary::of(records.iter().map(|r| r.perplexity)),
            records,
        }
    }

    pub fn to_text(&self) -> String {
        let width = self.records.iter().map(|r| r.id.len()).max().unwrap_or(2).max(6);
        let mut s = format!(
            "{:<width$} {:>6} {:>9} {:>9} {:>8} {:>10}\n",
            "id", "length", "recovery", "identity", "rmsd", "perplexity"
        );
        let rmsd = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:<width$} {:>6} {:>9.2} {:>9.2} {:>8} {:>10.3}",
                r.id,
                r.length,
                r.recovery,
                r.identity,
                rmsd(r.rmsd),
                r.perplexity
            );
        }
        for (label, pick) in [
            ("mean", (|s: &Summary| s.mean) as fn(&Summary) -> f64),
            ("median", |s: &Summary| s.median),
        ] {
            let get = |o: &Option<Summary>| o.as_ref().map(pick);
            let _ = writeln!(
                s,
                "{:<width$} {:>6} {:>9.2} {:>9.2} {:>8} {:>10.3}",
                label,
                "",
                get(&self.recovery).unwrap_or(f64::NAN),
                get(&self.identity).unwrap_or(f64::NAN),
                rmsd(get(&self.rmsd)),
                get(&self.perplexity).unwrap_or(f64::NAN)
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,length,recovery,identity,rmsd,perplexity\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.id,
                r.length,
                r.recovery,
                r.identity,
                r.rmsd.map_or(String::new(), |v| v.to_string()),
                r.perplexity
            );
        }
        s
    }
}

/// Metrics for one prediction against its record.
pub fn record_metrics(pred: &Prediction, record: &ProteinRecord) -> Result<RecordMetrics> {
    let rmsd = if record.len() >= 3 {
        Some(kabsch_rmsd(&pred.coords, &record.coords)?)
    } else {
        None
    };
    Ok(RecordMetrics {
        id: record.id.clone(),
        length: record.len(),
        recovery: recovery(&pred.sequence, record)?,
        identity: identity(&pred.sequence, &record.sequence)?,
        rmsd,
        perplexity: perplexity(pred, record),
    })
}

/// Predicts each record from its real fragments, starting from the same
/// per-record layout that validation uses, and scores the result.
pub fn evaluate(model: &Model, records: &[ProteinRecord], seed: u64) -> Result<EvalReport> {
    let metrics = records
        .iter()
        .map(|r| {
            let ex = prepare(model, r, 0.0, seed, 0, 0)?;
            let pred = model.predict_from(r, &ex.fragments, &ex.x0)?;
            record_metrics(&pred, r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(metrics))
}

/// Uniform distribution rows for `n` residues; handy as a reference point.
pub fn uniform_prediction(record: &ProteinRecord) -> Prediction {
    let n = record.len();
    let k = alphabet::NUM_AMINO_ACIDS;
    let probs = crate::tensor::Tensor::full(&[n, k], 1.0 / k as f64);
    Prediction {
        logits: crate::tensor::Tensor::zeros(&[n, k]),
        probs,
        coords: record.coords.clone(),
        sequence: record.sequence.clone(),
    }
}
