//! Variational mutual-information bounds and the critics they rely on.
//!
//! The lower bound uses a categorical critic `q(y|z)`:
//! `I(Z;Y) >= H(Y) + E log q(y|z)`. The upper bound is the contrastive
//! log-ratio form `E log q(y_i|z_i) - E_i E_j log q(y_j|z_i)`, with the
//! critic fitted separately by maximum likelihood.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::sparse::RowOperator;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Floor applied to categorical probabilities before the log.
pub const PROB_FLOOR: f64 = 1e-12;
/// Gaussian critic log-variances lie in `(-LOGVAR_BOUND, LOGVAR_BOUND)`.
pub const LOGVAR_BOUND: f64 = 8.0;

/// Entropy in nats of the empirical label distribution.
pub fn empirical_entropy(y: &[usize], classes: usize) -> f64 {
    let freq = frequencies(y, classes);
    -freq.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn frequencies(y: &[usize], classes: usize) -> Vec<f64> {
    let mut f = vec![0.0; classes];
    for &c in y {
        f[c] += 1.0;
    }
    let n = y.len().max(1) as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

fn check_pairs(n_z: usize, n_y: usize) -> Result<()> {
    if n_z != n_y {
        return Err(Error::shape(format!("{n_z} samples against {n_y} targets")));
    }
    if n_z < 2 {
        return Err(Error::contract("estimator needs at least 2 samples"));
    }
    Ok(())
}

/// `log q(y_i | z_i)` for each row, as an `n x 1` column.
pub fn label_log_likelihood(tape: &mut Tape, log_q: Var, y: &[usize]) -> Result<Var> {
    let (n, m) = tape.value(log_q).dims();
    check_pairs(n, y.len())?;
    if y.iter().any(|&c| c >= m) {
        return Err(Error::contract(format!("label outside {m} classes")));
    }
    let hot = tape.constant(Tensor::one_hot(y, m));
    let picked = tape.mul(log_q, hot)?;
    Ok(tape.sum_rows(picked))
}

/// `H(Y) + mean_i log q(y_i|z_i)` from precomputed log-probabilities.
pub fn ba_from_log_q(tape: &mut Tape, log_q: Var, y: &[usize]) -> Result<Var> {
    let m = tape.value(log_q).cols();
    let ll = label_log_likelihood(tape, log_q, y)?;
    let mean = tape.mean(ll);
    Ok(tape.add_scalar(mean, empirical_entropy(y, m)))
}

/// Categorical contrastive log-ratio bound from precomputed log-probabilities.
/// The all-pairs term equals `mean_i sum_c p(c) log q(c|z_i)` with `p` the
/// empirical label frequencies.
pub fn club_from_log_q(tape: &mut Tape, log_q: Var, y: &[usize]) -> Result<Var> {
    let m = tape.value(log_q).cols();
    let ll = label_log_likelihood(tape, log_q, y)?;
    let pos = tape.mean(ll);
    let freq = tape.constant(Tensor::row_vector(frequencies(y, m)));
    let weighted = tape.mul(log_q, freq)?;
    let per_row = tape.sum_rows(weighted);
    let neg = tape.mean(per_row);
    tape.sub(pos, neg)
}

pub fn ba_lower_bound(tape: &mut Tape, z: Var, y: &[usize], critic: &CategoricalCritic) -> Result<Var> {
    let lq = critic.log_probs(tape, z, false)?;
    ba_from_log_q(tape, lq, y)
}

pub fn club_upper_bound(tape: &mut Tape, z: Var, y: &[usize], critic: &CategoricalCritic) -> Result<Var> {
    let lq = critic.log_probs(tape, z, false)?;
    club_from_log_q(tape, lq, y)
}

/// Gaussian contrastive log-ratio bound for a continuous `target` given the
/// critic's conditional mean and log-variance. The normalizers cancel:
/// `mean_i sum_d [ (m2_d - 2 mu_id ybar_d + mu_id^2) - (y_id - mu_id)^2 ] / (2 var_id)`.
pub fn club_gaussian(tape: &mut Tape, mu: Var, logvar: Var, target: Var) -> Result<Var> {
    let (n, d) = tape.value(mu).dims();
    check_pairs(n, tape.value(target).rows())?;
    if tape.value(logvar).dims() != (n, d) || tape.value(target).cols() != d {
        return Err(Error::shape("gaussian critic output does not match target"));
    }
    let neg_lv = tape.neg(logvar);
    let inv_var = tape.exp(neg_lv);
    let diff = tape.sub(target, mu)?;
    let pos = tape.square(diff);
    let t2 = tape.square(target);
    let m2 = tape.mean_cols(t2);
    let ybar = tape.mean_cols(target);
    let cross = tape.mul(mu, ybar)?;
    let cross2 = tape.scale(cross, 2.0);
    let mu2 = tape.square(mu);
    let a = tape.sub(m2, cross2)?;
    let neg = tape.add(a, mu2)?;
    let gap = tape.sub(neg, pos)?;
    let weighted = tape.mul(gap, inv_var)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 0.5 / n as f64))
}

/// Mean over rows of `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_compression(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let (n, _) = tape.value(mu).dims();
    if tape.value(mu).dims() != tape.value(logvar).dims() {
        return Err(Error::shape("mu and logvar differ in shape"));
    }
    let ev = tape.exp(logvar);
    let mu2 = tape.square(mu);
    let a = tape.add(ev, mu2)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    Ok(tape.scale(s, 0.5 / n as f64))
}

/// Class-stratified contrastive bound on `I(Z; view | Y)`: the per-class
/// bound predicting the view id from `z`, averaged with class frequencies.
/// Classes with fewer than 2 samples get weight 0.
pub fn conditional_club_view(
    tape: &mut Tape,
    z: Var,
    view_ids: &[usize],
    y: &[usize],
    critics: &[CategoricalCritic],
) -> Result<Var> {
    let n = tape.value(z).rows();
    if view_ids.len() != n || y.len() != n {
        return Err(Error::shape("view ids and labels must align with samples"));
    }
    if let Some(c) = y.iter().find(|&&c| c >= critics.len()) {
        return Err(Error::contract(format!("no critic for class {c}")));
    }
    let mut total: Option<Var> = None;
    let mut weight = 0usize;
    for (c, critic) in critics.iter().enumerate() {
        let idx: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
        if idx.len() < 2 {
            continue;
        }
        let gather = Arc::new(RowOperator::gather(&idx, n)?);
        let zc = tape.row_op(&gather, z)?;
        let views: Vec<usize> = idx.iter().map(|&i| view_ids[i]).collect();
        let club = club_upper_bound(tape, zc, &views, critic)?;
        let scaled = tape.scale(club, idx.len() as f64);
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
        weight += idx.len();
    }
    Ok(match total {
        Some(t) => tape.scale(t, 1.0 / weight as f64),
        None => tape.constant(Tensor::scalar(0.0)),
    })
}

/// Conditional model `q(y|z)` over `classes` labels with its own optimizer.
#[derive(Clone, Debug)]
pub struct CategoricalCritic {
    pub store: ParamStore,
    net: Mlp,
    opt: Adam,
    classes: usize,
}

impl CategoricalCritic {
    /// `widths = [in, hidden..., classes]`.
    pub fn new(name: &str, widths: &[usize], lr: f64, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::contract("critic needs input and output widths"));
        }
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, name, widths, rng)?;
        let opt = Adam::new(&store, lr);
        Ok(Self {
            store,
            net,
            opt,
            classes: *widths.last().expect("widths"),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Row-wise `log q(.|z)`, floored at `ln PROB_FLOOR`.
    pub fn log_probs(&self, tape: &mut Tape, z: Var, trainable: bool) -> Result<Var> {
        let logits = self.net.forward(&self.store, tape, z, trainable)?;
        let lq = tape.log_softmax_rows(logits);
        Ok(tape.clamp_min(lq, PROB_FLOOR.ln()))
    }

    pub fn probs(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let logits = self.net.forward(&self.store, &mut tape, zv, false)?;
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).clone())
    }

    /// One maximum-likelihood step on detached samples. Returns the mean
    /// negative log-likelihood before the step.
    pub fn fit_step(&mut self, z: &Tensor, y: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let lq = self.log_probs(&mut tape, zv, true)?;
        let ll = label_log_likelihood(&mut tape, lq, y)?;
        let mean = tape.mean(ll);
        let loss = tape.neg(mean);
        tape.backward(loss)?;
        self.store.accumulate(&tape);
        self.opt.step(&mut self.store)?;
        self.store.zero_grad();
        Ok(tape.scalar(loss))
    }
}

/// Conditional Gaussian `q(t|z) = N(mu(z), diag exp(logvar(z)))`.
#[derive(Clone, Debug)]
pub struct GaussianCritic {
    pub store: ParamStore,
    trunk: Mlp,
    mu: Linear,
    logvar: Linear,
    opt: Adam,
}

impl GaussianCritic {
    pub fn new(name: &str, in_dim: usize, hidden: usize, out_dim: usize, lr: f64, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let trunk = Mlp::new(&mut store, &format!("{name}.trunk"), &[in_dim, hidden], rng)?;
        let mu = Linear::new(&mut store, &format!("{name}.mu"), hidden, out_dim, true, rng)?;
        let logvar = Linear::new(&mut store, &format!("{name}.logvar"), hidden, out_dim, true, rng)?;
        let opt = Adam::new(&store, lr);
        Ok(Self {
            store,
            trunk,
            mu,
            logvar,
            opt,
        })
    }

    /// Conditional mean and bounded log-variance.
    pub fn forward(&self, tape: &mut Tape, z: Var, trainable: bool) -> Result<(Var, Var)> {
        let h = self.trunk.forward(&self.store, tape, z, trainable)?;
        let h = tape.relu(h);
        let mu = self.mu.forward(&self.store, tape, h, trainable)?;
        let raw = self.logvar.forward(&self.store, tape, h, trainable)?;
        let s = tape.scale(raw, 1.0 / LOGVAR_BOUND);
        let t = tape.tanh(s);
        Ok((mu, tape.scale(t, LOGVAR_BOUND)))
    }

    pub fn club(&self, tape: &mut Tape, z: Var, target: Var) -> Result<Var> {
        let (mu, lv) = self.forward(tape, z, false)?;
        club_gaussian(tape, mu, lv, target)
    }

    /// One maximum-likelihood step; returns the mean negative log-density
    /// (without the `ln 2 pi` constant) before the step.
    pub fn fit_step(&mut self, z: &Tensor, target: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let tv = tape.constant(target.clone());
        let (mu, lv) = self.forward(&mut tape, zv, true)?;
        let diff = tape.sub(tv, mu)?;
        let sq = tape.square(diff);
        let neg_lv = tape.neg(lv);
        let iv = tape.exp(neg_lv);
        let a = tape.mul(sq, iv)?;
        let b = tape.add(a, lv)?;
        let s = tape.sum(b);
        let loss = tape.scale(s, 0.5 / target.rows() as f64);
        tape.backward(loss)?;
        self.store.accumulate(&tape);
        self.opt.step(&mut self.store)?;
        self.store.zero_grad();
        Ok(tape.scalar(loss))
    }
}
