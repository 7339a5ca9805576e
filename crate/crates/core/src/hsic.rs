//! Biased Hilbert-Schmidt independence criterion,
//! `tr(K H L H) / (n - 1)^2` with `H = I - 11^T / n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median pairwise Euclidean distance of the sample.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum KernelSpec {
    Linear,
    Rbf { bandwidth: Bandwidth },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Median,
        }
    }
}

/// Median of pairwise distances `i < j` of the rows of `x`.
pub fn median_distance(x: &Tensor) -> f64 {
    let n = x.rows();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Kernel matrix of the rows of `x`. The RBF diagonal is exactly 1.
pub fn gram(tape: &mut Tape, x: Var, spec: KernelSpec) -> Result<Var> {
    let n = tape.value(x).rows();
    if n < 2 {
        return Err(Error::contract("gram matrix needs at least 2 samples"));
    }
    let xt = tape.transpose(x);
    let inner = tape.matmul(x, xt)?;
    match spec {
        KernelSpec::Linear => Ok(inner),
        KernelSpec::Rbf { bandwidth } => {
            let sigma = match bandwidth {
                Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => s,
                Bandwidth::Fixed(s) => return Err(Error::config("kernel.bandwidth", format!("{s} is not positive"))),
                Bandwidth::Median => {
                    let m = median_distance(tape.value(x));
                    if m <= 0.0 {
                        return Err(Error::Domain("degenerate median bandwidth: samples coincide".into()));
                    }
                    m
                }
            };
            let sq = tape.square(x);
            let norms = tape.sum_rows(sq);
            let norms_t = tape.transpose(norms);
            let a = tape.add(norms, norms_t)?;
            let two_inner = tape.scale(inner, 2.0);
            let d2 = tape.sub(a, two_inner)?;
            let mut off_diag = Tensor::full(n, n, 1.0);
            for i in 0..n {
                off_diag.set(i, i, 0.0);
            }
            let mask = tape.constant(off_diag);
            let d2 = tape.mul(d2, mask)?;
            let d2 = tape.clamp_min(d2, 0.0);
            let scaled = tape.scale(d2, -1.0 / (2.0 * sigma * sigma));
            Ok(tape.exp(scaled))
        }
    }
}

/// `K - row means - column means + grand mean`, i.e. `H K H`.
pub fn center(tape: &mut Tape, k: Var) -> Result<Var> {
    let rm = tape.mean_rows(k);
    let cm = tape.mean_cols(k);
    let gm = tape.mean(k);
    let a = tape.sub(k, rm)?;
    let b = tape.sub(a, cm)?;
    tape.add(b, gm)
}

pub fn hsic(tape: &mut Tape, a: Var, b: Var, spec: KernelSpec) -> Result<Var> {
    let n = tape.value(a).rows();
    if n != tape.value(b).rows() {
        return Err(Error::shape("hsic inputs need equal sample counts"));
    }
    if n < 2 {
        return Err(Error::contract("hsic needs at least 2 samples"));
    }
    let k = gram(tape, a, spec)?;
    let l = gram(tape, b, spec)?;
    let kc = center(tape, k)?;
    // tr(K H L H) = sum((H K H) .* L) for symmetric L.
    let prod = tape.mul(kc, l)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, 1.0 / ((n - 1) * (n - 1)) as f64))
}
