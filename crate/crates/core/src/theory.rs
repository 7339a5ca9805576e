//! Exact discrete-probability checks of the redundancy lemmas and of the
//! ideal-threshold theorem.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Largest supported axis cardinality.
pub const MAX_CARD: usize = 16;
pub const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub card: usize,
}

/// Dense joint distribution over named finite variables, row-major with the
/// last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub axes: Vec<Axis>,
    pub probs: Vec<f64>,
}

fn plogp_ratio(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

impl JointTable {
    pub fn new(axes: Vec<(&str, usize)>, probs: Vec<f64>) -> Result<Self> {
        let t = Self {
            axes: axes
                .into_iter()
                .map(|(n, c)| Axis {
                    name: n.to_string(),
                    card: c,
                })
                .collect(),
            probs,
        };
        t.validate()?;
        Ok(t)
    }

    /// Table from an unnormalized weight function over all index tuples.
    pub fn from_fn(axes: Vec<(&str, usize)>, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let cards: Vec<usize> = axes.iter().map(|a| a.1).collect();
        let size: usize = cards.iter().product();
        let mut probs = Vec::with_capacity(size);
        let mut idx = vec![0; cards.len()];
        for flat in 0..size {
            unravel(flat, &cards, &mut idx);
            probs.push(f(&idx));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Table("weights sum to zero".into()));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(axes, probs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Table("no axes".into()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if a.card == 0 || a.card > MAX_CARD {
                return Err(Error::Table(format!("axis `{}` has cardinality {}", a.name, a.card)));
            }
            if self.axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Table(format!("duplicate axis `{}`", a.name)));
            }
        }
        let size: usize = self.axes.iter().map(|a| a.card).product();
        if self.probs.len() != size {
            return Err(Error::Table(format!("{} entries for a product space of {size}", self.probs.len())));
        }
        if let Some(p) = self.probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Table(format!("invalid entry {p}")));
        }
        let mass: f64 = self.probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Table(format!("total mass {mass} differs from 1")));
        }
        Ok(())
    }

    pub fn axis(&self, name: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Table(format!("no axis `{name}`")))
    }

    pub fn card(&self, axis: usize) -> usize {
        self.axes[axis].card
    }

    fn cards(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.card).collect()
    }

    /// Marginal over `keep` (in that order), row-major.
    pub fn marginal(&self, keep: &[usize]) -> Vec<f64> {
        let cards = self.cards();
        let kc: Vec<usize> = keep.iter().map(|&k| cards[k]).collect();
        let mut out = vec![0.0; kc.iter().product()];
        let mut idx = vec![0; cards.len()];
        for (flat, &p) in self.probs.iter().enumerate() {
            unravel(flat, &cards, &mut idx);
            let mut o = 0;
            for (&k, &c) in keep.iter().zip(&kc) {
                o = o * c + idx[k];
            }
            out[o] += p;
        }
        out
    }

    /// Joint entropy of `axes` in nats.
    pub fn entropy(&self, axes: &[usize]) -> f64 {
        -self.marginal(axes).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Coarsens axis `axis` by mapping each value through `merge`.
    pub fn coarsen(&self, axis: usize, merge: &[usize]) -> Result<JointTable> {
        let cards = self.cards();
        if merge.len() != cards[axis] {
            return Err(Error::Table("merge map must cover the axis".into()));
        }
        let new_card = merge.iter().max().map_or(0, |m| m + 1);
        let mut new_cards = cards.clone();
        new_cards[axis] = new_card;
        let mut probs = vec![0.0; new_cards.iter().product()];
        let mut idx = vec![0; cards.len()];
        for (flat, &p) in self.probs.iter().enumerate() {
            unravel(flat, &cards, &mut idx);
            idx[axis] = merge[idx[axis]];
            probs[ravel(&idx, &new_cards)] += p;
        }
        let mut axes = self.axes.clone();
        axes[axis].card = new_card;
        let t = JointTable { axes, probs };
        t.validate()?;
        Ok(t)
    }
}

fn unravel(mut flat: usize, cards: &[usize], idx: &mut [usize]) {
    for k in (0..cards.len()).rev() {
        idx[k] = flat % cards[k];
        flat /= cards[k];
    }
}

fn ravel(idx: &[usize], cards: &[usize]) -> usize {
    idx.iter().zip(cards).fold(0, |acc, (&i, &c)| acc * c + i)
}

fn distinct(axes: &[usize]) -> Result<()> {
    for i in 0..axes.len() {
        if axes[i + 1..].contains(&axes[i]) {
            return Err(Error::Table("axes must be distinct".into()));
        }
    }
    Ok(())
}

/// `sum p(a,b) ln(p(a,b) / p(a) p(b))` in nats.
pub fn mi(t: &JointTable, a: usize, b: usize) -> Result<f64> {
    distinct(&[a, b])?;
    let pab = t.marginal(&[a, b]);
    let pa = t.marginal(&[a]);
    let pb = t.marginal(&[b]);
    let cb = t.card(b);
    let mut s = 0.0;
    for i in 0..t.card(a) {
        for j in 0..cb {
            s += plogp_ratio(pab[i * cb + j], pa[i] * pb[j]);
        }
    }
    Ok(s)
}

/// `sum_c p(c) I(A; B | C = c)`.
pub fn conditional_mi(t: &JointTable, a: usize, b: usize, c: usize) -> Result<f64> {
    distinct(&[a, b, c])?;
    let pabc = t.marginal(&[c, a, b]);
    let pc = t.marginal(&[c]);
    let (ca, cb) = (t.card(a), t.card(b));
    let mut s = 0.0;
    for k in 0..t.card(c) {
        if pc[k] == 0.0 {
            continue;
        }
        let block = &pabc[k * ca * cb..(k + 1) * ca * cb];
        let pa: Vec<f64> = (0..ca).map(|i| block[i * cb..(i + 1) * cb].iter().sum::<f64>() / pc[k]).collect();
        let pb: Vec<f64> = (0..cb).map(|j| (0..ca).map(|i| block[i * cb + j]).sum::<f64>() / pc[k]).collect();
        let mut inner = 0.0;
        for i in 0..ca {
            for j in 0..cb {
                inner += plogp_ratio(block[i * cb + j] / pc[k], pa[i] * pb[j]);
            }
        }
        s += pc[k] * inner;
    }
    Ok(s)
}

/// `I(A; B | C = c)` for one value of `C`.
pub fn slice_mi(t: &JointTable, a: usize, b: usize, c: usize, value: usize) -> Result<f64> {
    distinct(&[a, b, c])?;
    let pabc = t.marginal(&[c, a, b]);
    let (ca, cb) = (t.card(a), t.card(b));
    let block = &pabc[value * ca * cb..(value + 1) * ca * cb];
    let mass: f64 = block.iter().sum();
    if mass == 0.0 {
        return Err(Error::Table(format!("slice {value} has zero mass")));
    }
    let pa: Vec<f64> = (0..ca).map(|i| block[i * cb..(i + 1) * cb].iter().sum::<f64>() / mass).collect();
    let pb: Vec<f64> = (0..cb).map(|j| (0..ca).map(|i| block[i * cb + j]).sum::<f64>() / mass).collect();
    let mut s = 0.0;
    for i in 0..ca {
        for j in 0..cb {
            s += plogp_ratio(block[i * cb + j] / mass, pa[i] * pb[j]);
        }
    }
    Ok(s)
}

pub const EXACT_TOL: f64 = 1e-12;
pub const VIOLATION_GAP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub i_y_phi: f64,
    pub i_z_phi_given_y: f64,
    pub i_z_y: f64,
    pub i_z_y_given_phi: f64,
    pub gap: f64,
    pub conditions_hold: bool,
    pub equivalence_holds: bool,
}

/// Evaluates both redundancy conditions and the gap
/// `|I(Z;Y) - I(Z;Y|Phi)|` on a table with axes `Z`, `Y`, `Phi`.
pub fn check_lemma1(t: &JointTable) -> Result<Lemma1Report> {
    let (z, y, phi) = (t.axis("Z")?, t.axis("Y")?, t.axis("Phi")?);
    let i_y_phi = mi(t, y, phi)?;
    let i_z_phi_given_y = conditional_mi(t, z, phi, y)?;
    let i_z_y = mi(t, z, y)?;
    let i_z_y_given_phi = conditional_mi(t, z, y, phi)?;
    let gap = (i_z_y - i_z_y_given_phi).abs();
    let conditions_hold = i_y_phi < EXACT_TOL && i_z_phi_given_y < EXACT_TOL;
    Ok(Lemma1Report {
        i_y_phi,
        i_z_phi_given_y,
        i_z_y,
        i_z_y_given_phi,
        gap,
        conditions_hold,
        equivalence_holds: conditions_hold && gap < EXACT_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    /// `I(Z; Y | Phi)`.
    pub lhs: f64,
    /// `sum_i theta_i I(Z; Y | Phi = phi_i)`.
    pub rhs: f64,
    pub gap: f64,
    pub theta: Vec<f64>,
    pub view_probs: Vec<f64>,
    pub per_view: Vec<f64>,
    /// Largest `|theta_i - P(phi_i)|`; the decomposition needs it to vanish.
    pub theta_mismatch: f64,
}

pub fn check_lemma2(t: &JointTable, theta: &[f64]) -> Result<Lemma2Report> {
    let (z, y, phi) = (t.axis("Z")?, t.axis("Y")?, t.axis("Phi")?);
    if theta.len() != t.card(phi) {
        return Err(Error::Table(format!("{} weights for {} views", theta.len(), t.card(phi))));
    }
    if theta.iter().any(|&w| !(w >= 0.0)) || (theta.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Table("view weights must be non-negative and sum to 1".into()));
    }
    let view_probs = t.marginal(&[phi]);
    let per_view = (0..t.card(phi))
        .map(|v| if view_probs[v] > 0.0 { slice_mi(t, z, y, phi, v) } else { Ok(0.0) })
        .collect::<Result<Vec<_>>>()?;
    let lhs = conditional_mi(t, z, y, phi)?;
    let rhs: f64 = theta.iter().zip(&per_view).map(|(w, m)| w * m).sum();
    let theta_mismatch = theta.iter().zip(&view_probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Lemma2Report {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        theta: theta.to_vec(),
        view_probs,
        per_view,
        theta_mismatch,
    })
}

/// Binary symmetric channel weight: `1 - eps` if equal, `eps` otherwise.
fn bsc(a: usize, b: usize, eps: f64) -> f64 {
    if a == b {
        1.0 - eps
    } else {
        eps
    }
}

pub mod constructions {
    //! Tables with known redundancy structure.

    use super::*;

    /// `Y` uniform, `Phi` uniform over 3 views independent of `Y`, `Z` a
    /// noisy copy of `Y` with flip rate 0.2 independent of `Phi`.
    pub fn lemma1_satisfied() -> JointTable {
        JointTable::from_fn(vec![("Z", 2), ("Y", 2), ("Phi", 3)], |i| bsc(i[0], i[1], 0.2))
            .expect("valid construction")
    }

    /// `Z = Y` exactly, `Phi` uniform and independent.
    pub fn lemma1_deterministic() -> JointTable {
        JointTable::from_fn(vec![("Z", 2), ("Y", 2), ("Phi", 2)], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
            .expect("valid construction")
    }

    /// `P(Y = 1 | Phi)` varies with the view and `Z` reads the view through
    /// a view-dependent channel, breaking both conditions.
    pub fn lemma1_violated() -> JointTable {
        let py1 = [0.2, 0.8];
        let flip = [0.05, 0.35];
        JointTable::from_fn(vec![("Z", 2), ("Y", 2), ("Phi", 2)], |i| {
            let (z, y, v) = (i[0], i[1], i[2]);
            let py = if y == 1 { py1[v] } else { 1.0 - py1[v] };
            0.5 * py * bsc(z, y, flip[v])
        })
        .expect("valid construction")
    }

    /// `Y` only correlated with `Phi`; `Z` a view-independent noisy copy of
    /// `Y`, so only the first condition fails.
    pub fn lemma1_label_view_dependent() -> JointTable {
        let py1 = [0.1, 0.9];
        JointTable::from_fn(vec![("Z", 2), ("Y", 2), ("Phi", 2)], |i| {
            let (z, y, v) = (i[0], i[1], i[2]);
            let py = if y == 1 { py1[v] } else { 1.0 - py1[v] };
            py * bsc(z, y, 0.2)
        })
        .expect("valid construction")
    }

    /// Uniform `Phi` over `views`, uniform `Y`, and the same flip rate in
    /// every view's channel `Y -> Z`.
    pub fn lemma2_symmetric(views: usize) -> JointTable {
        JointTable::from_fn(vec![("Z", 2), ("Y", 2), ("Phi", views)], |i| bsc(i[0], i[1], 0.15))
            .expect("valid construction")
    }

    /// Two equiprobable views with channels of different quality.
    pub fn lemma2_asymmetric() -> JointTable {
        let flip = [0.05, 0.3];
        JointTable::from_fn(vec![("Z", 2), ("Y", 2), ("Phi", 2)], |i| bsc(i[0], i[1], flip[i[2]]))
            .expect("valid construction")
    }
}

/// Samples with a reported posterior, a ground-truth label drawn from that
/// posterior, and the argmax prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub classes: usize,
    pub confidences: Vec<Vec<f64>>,
    pub truth: Vec<usize>,
    pub preds: Vec<usize>,
    /// Population value of `E[max confidence | prediction = c]`.
    pub expected_top: Vec<f64>,
}

/// Binary population whose posterior for class 1 is `q[j]` with probability
/// `w[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointMixture {
    pub q: [f64; 2],
    pub w: [f64; 2],
}

impl Default for TwoPointMixture {
    fn default() -> Self {
        Self {
            q: [0.9, 0.25],
            w: [0.5, 0.5],
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl TwoPointMixture {
    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|q| !(0.0..=1.0).contains(q)) || self.q.contains(&0.5) {
            return Err(Error::Table("mixture posteriors must lie in [0, 1] and avoid ties".into()));
        }
        if self.w.iter().any(|&w| !(w >= 0.0)) || (self.w[0] + self.w[1] - 1.0).abs() > 1e-12 {
            return Err(Error::Table("mixture weights must form a distribution".into()));
        }
        Ok(())
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Population> {
        self.validate()?;
        let mut rng = rng_for(seed, &[0x7e0]);
        let mut conf = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        for _ in 0..n {
            let j = usize::from(rng.random::<f64>() >= self.w[0]);
            let p = vec![1.0 - self.q[j], self.q[j]];
            truth.push(usize::from(rng.random::<f64>() < self.q[j]));
            preds.push(argmax(&p));
            conf.push(p);
        }
        let mut mass = [0.0; 2];
        let mut top = [0.0; 2];
        for j in 0..2 {
            let p = [1.0 - self.q[j], self.q[j]];
            let c = argmax(&p);
            mass[c] += self.w[j];
            top[c] += self.w[j] * p[c];
        }
        Ok(Population {
            classes: 2,
            confidences: conf,
            truth,
            preds,
            expected_top: (0..2).map(|c| if mass[c] > 0.0 { top[c] / mass[c] } else { 1.0 }).collect(),
        })
    }
}

/// Every sample one-hot with its label; `m` classes visited round-robin.
pub fn deterministic_population(n: usize, m: usize) -> Population {
    let truth: Vec<usize> = (0..n).map(|i| i % m).collect();
    Population {
        classes: m,
        confidences: truth
            .iter()
            .map(|&y| (0..m).map(|k| if k == y { 1.0 } else { 0.0 }).collect())
            .collect(),
        preds: truth.clone(),
        truth,
        expected_top: vec![1.0; m],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub n: usize,
    /// Mean predicted-class confidence over samples predicted `c`.
    pub threshold: Vec<f64>,
    /// `sum_k p(pred = c | y = k) p(y = k | pred = c)` from empirical counts.
    pub multisource: Vec<f64>,
    /// Population expectation of the top confidence given `pred = c`.
    pub expectation: Vec<f64>,
    pub gap_threshold_multisource: Vec<f64>,
    pub gap_multisource_expectation: Vec<f64>,
    pub max_gap: f64,
}

pub const THEOREM1_TOL: f64 = 0.02;

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.max_gap < THEOREM1_TOL
    }
}

pub fn check_theorem1(pop: &Population, m: usize) -> Result<Theorem1Report> {
    let n = pop.truth.len();
    if n == 0 || pop.preds.len() != n || pop.confidences.len() != n || pop.classes != m || pop.expected_top.len() != m {
        return Err(Error::Table("population is inconsistent".into()));
    }
    let mut pred_count = vec![0usize; m];
    let mut truth_count = vec![0usize; m];
    let mut joint = vec![vec![0usize; m]; m];
    let mut conf_sum = vec![0.0; m];
    for i in 0..n {
        let (c, k) = (pop.preds[i], pop.truth[i]);
        if c >= m || k >= m || pop.confidences[i].len() != m {
            return Err(Error::Table(format!("sample {i} is outside {m} classes")));
        }
        pred_count[c] += 1;
        truth_count[k] += 1;
        joint[c][k] += 1;
        conf_sum[c] += pop.confidences[i][c];
    }
    let threshold: Vec<f64> = (0..m)
        .map(|c| if pred_count[c] == 0 { 1.0 } else { conf_sum[c] / pred_count[c] as f64 })
        .collect();
    let multisource: Vec<f64> = (0..m)
        .map(|c| {
            if pred_count[c] == 0 {
                return 1.0;
            }
            (0..m)
                .filter(|&k| truth_count[k] > 0)
                .map(|k| {
                    let p_pred_given_truth = joint[c][k] as f64 / truth_count[k] as f64;
                    let p_truth_given_pred = joint[c][k] as f64 / pred_count[c] as f64;
                    p_pred_given_truth * p_truth_given_pred
                })
                .sum()
        })
        .collect();
    let g1: Vec<f64> = threshold.iter().zip(&multisource).map(|(a, b)| (a - b).abs()).collect();
    let g2: Vec<f64> = multisource.iter().zip(&pop.expected_top).map(|(a, b)| (a - b).abs()).collect();
    let max_gap = g1.iter().chain(&g2).cloned().fold(0.0, f64::max);
    Ok(Theorem1Report {
        n,
        threshold,
        multisource,
        expectation: pop.expected_top.clone(),
        gap_threshold_multisource: g1,
        gap_multisource_expectation: g2,
        max_gap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub name: String,
    pub expectation: String,
    pub pass: bool,
    pub report: serde_json::Value,
}

/// Every constructed lemma and theorem check.
pub fn run_all(seed: u64) -> Result<Vec<OracleEntry>> {
    use constructions::*;
    let mut out = Vec::new();
    let mut push = |name: &str, expectation: &str, pass: bool, report: serde_json::Value| {
        out.push(OracleEntry {
            name: name.into(),
            expectation: expectation.into(),
            pass,
            report,
        })
    };

    let r = check_lemma1(&lemma1_satisfied())?;
    push("lemma1_satisfied", "equivalence holds", r.equivalence_holds, serde_json::to_value(&r)?);
    let r = check_lemma1(&lemma1_deterministic())?;
    push("lemma1_deterministic", "equivalence holds", r.equivalence_holds, serde_json::to_value(&r)?);
    let r = check_lemma1(&lemma1_violated())?;
    push(
        "lemma1_violated",
        "gap above 1e-3",
        !r.conditions_hold && r.gap > VIOLATION_GAP,
        serde_json::to_value(&r)?,
    );

    let t = lemma2_symmetric(3);
    let r = check_lemma2(&t, &[1.0 / 3.0; 3])?;
    push("lemma2_symmetric", "gap below 1e-12", r.gap < EXACT_TOL, serde_json::to_value(&r)?);
    let r = check_lemma2(&lemma2_symmetric(1), &[1.0])?;
    push("lemma2_single_view", "gap below 1e-12", r.gap < EXACT_TOL, serde_json::to_value(&r)?);
    let r = check_lemma2(&lemma2_asymmetric(), &[0.8, 0.2])?;
    push(
        "lemma2_mismatched_weights",
        "nonzero gap when weights differ from view probabilities",
        r.gap > VIOLATION_GAP,
        serde_json::to_value(&r)?,
    );

    let r = check_theorem1(&deterministic_population(1000, 3), 3)?;
    push("theorem1_deterministic", "all gaps below 0.02", r.holds(), serde_json::to_value(&r)?);
    let mix = TwoPointMixture::default();
    let small = check_theorem1(&mix.sample(500, seed)?, 2)?;
    let large = check_theorem1(&mix.sample(50_000, seed)?, 2)?;
    push("theorem1_mixture", "all gaps below 0.02 at n = 50000", large.holds(), serde_json::to_value(&large)?);
    push(
        "theorem1_consistency",
        "max gap shrinks from n = 500 to n = 50000",
        large.max_gap < small.max_gap,
        serde_json::json!({ "small": small, "large": large }),
    );
    Ok(out)
}
