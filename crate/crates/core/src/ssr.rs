//! Confidence thresholds, observation and estimation matrices, and the
//! per-sample weights derived from them.
//!
//! With predictions `p = argmax` of each probability row:
//! - `t[b]` is the mean top confidence over samples predicted `b`;
//! - `O[a][b]` counts samples predicted `a`, labeled `b`, whose probability
//!   for `b` is at least `t[b]`;
//! - `E[a][b] = (O[a][b] / R[a]) |X_a| / sum_j (O[j][b] / R[j]) |X_j|` with
//!   `R[a]` the row sum of `O` and `|X_a|` the number predicted `a`;
//! - `kappa_i = E[y_i][y_i]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_rows(conf: &Tensor, n: usize) -> Result<()> {
    if conf.rows() != n {
        return Err(Error::shape(format!("{} probability rows for {n} samples", conf.rows())));
    }
    Ok(())
}

/// Per-class mean predicted-class confidence; `1` for classes never predicted.
pub fn compute_thresholds(conf: &Tensor, preds: &[usize]) -> Result<Vec<f64>> {
    check_rows(conf, preds.len())?;
    let m = conf.cols();
    let mut sum = vec![0.0; m];
    let mut count = vec![0usize; m];
    for (i, &p) in preds.iter().enumerate() {
        sum[p] += conf.get(i, p);
        count[p] += 1;
    }
    Ok((0..m)
        .map(|b| if count[b] == 0 { 1.0 } else { sum[b] / count[b] as f64 })
        .collect())
}

pub fn compute_observation(conf: &Tensor, preds: &[usize], truth: &[usize], t: &[f64]) -> Result<Vec<Vec<u64>>> {
    check_rows(conf, preds.len())?;
    if truth.len() != preds.len() {
        return Err(Error::shape("labels and predictions differ in length"));
    }
    let m = conf.cols();
    if t.len() != m {
        return Err(Error::shape("threshold count differs from class count"));
    }
    let mut o = vec![vec![0u64; m]; m];
    for i in 0..preds.len() {
        let (a, b) = (preds[i], truth[i]);
        if b >= m {
            return Err(Error::contract(format!("label {b} outside {m} classes")));
        }
        if conf.get(i, b) >= t[b] {
            o[a][b] += 1;
        }
    }
    Ok(o)
}

/// Column-normalized estimation matrix; a column with zero denominator is
/// uniform `1/m`.
pub fn compute_estimation(o: &[Vec<u64>], pred_counts: &[usize]) -> Result<Tensor> {
    let m = o.len();
    if m == 0 || pred_counts.len() != m || o.iter().any(|r| r.len() != m) {
        return Err(Error::shape("observation matrix must be square and match the counts"));
    }
    let mut e = Tensor::zeros(m, m);
    let rows: Vec<u64> = o.iter().map(|r| r.iter().sum()).collect();
    for b in 0..m {
        let contrib: Vec<f64> = (0..m)
            .map(|a| {
                if rows[a] == 0 {
                    0.0
                } else {
                    o[a][b] as f64 / rows[a] as f64 * pred_counts[a] as f64
                }
            })
            .collect();
        let den: f64 = contrib.iter().sum();
        for a in 0..m {
            e.set(a, b, if den > 0.0 { contrib[a] / den } else { 1.0 / m as f64 });
        }
    }
    Ok(e)
}

pub fn kappa_for(labels: &[usize], e: &Tensor) -> Result<Vec<f64>> {
    let m = e.rows();
    labels
        .iter()
        .map(|&y| {
            if y < m {
                Ok(e.get(y, y))
            } else {
                Err(Error::contract(format!("label {y} outside {m} classes")))
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsrState {
    pub thresholds: Vec<f64>,
    pub observation: Vec<Vec<u64>>,
    pub estimation: Tensor,
    pub kappa: Vec<f64>,
}

impl SsrState {
    /// Full pipeline from class-probability rows and ground-truth labels.
    pub fn from_predictions(conf: &Tensor, truth: &[usize]) -> Result<Self> {
        let preds = conf.argmax_rows();
        let t = compute_thresholds(conf, &preds)?;
        let o = compute_observation(conf, &preds, truth, &t)?;
        let mut counts = vec![0usize; conf.cols()];
        for &p in &preds {
            counts[p] += 1;
        }
        let e = compute_estimation(&o, &counts)?;
        let kappa = kappa_for(truth, &e)?;
        Ok(Self {
            thresholds: t,
            observation: o,
            estimation: e,
            kappa,
        })
    }

    /// Weight 1 for every sample.
    pub fn uniform(n: usize, m: usize) -> Self {
        Self {
            thresholds: vec![1.0; m],
            observation: vec![vec![0; m]; m],
            estimation: Tensor::identity(m),
            kappa: vec![1.0; n],
        }
    }
}
