#![allow(dead_code)]

use std::sync::Arc;

use dibod::batch::GraphBatch;
use dibod::graph::{synth_motif_corpus, Graph, MotifSpec};
use dibod::hsic::{hsic, Bandwidth, KernelSpec};
use dibod::mi::{ba_from_log_q, club_from_log_q, club_gaussian, kl_compression};
use dibod::models::{
    gcn_layer, student_forward, teacher_forward, DibodModel, Mode, ModelConfig, StudentOutput, TeacherOutput,
};
use dibod::objectives::{loss_ckd, loss_ibs, loss_ibt, loss_total, LossInputs, LossWeights, PhaseKind};
use dibod::params::ParamStore;
use dibod::rng::{rng_for, Rng};
use dibod::tape::{Tape, Var};
use dibod::tensor::Tensor;
use dibod::views::{make_view_set, ViewSet, ViewSpec};
use dibod::Result;
use rand::Rng as _;
use rand_distr::StandardNormal;

pub const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

pub fn randn(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

pub fn labels(n: usize, classes: usize, rng: &mut Rng) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for i in (1..n).rev() {
        y.swap(i, rng.random_range(0..=i));
    }
    y
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Max relative error between tape gradients and central differences over
/// every entry of every input.
pub fn check_entries(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.scalar(out)
    };
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for e in 0..xs[k].len() {
            let x0 = xs[k].data()[e];
            xs[k].data_mut()[e] = x0 + STEP;
            let up = eval(&xs);
            xs[k].data_mut()[e] = x0 - STEP;
            let down = eval(&xs);
            xs[k].data_mut()[e] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads[k].data()[e];
            if analytic.abs().max(numeric.abs()) > 1e-7 {
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}

pub fn small_cfg() -> ModelConfig {
    let mut cfg = ModelConfig::new(2, 2);
    cfg.adapter_width = 6;
    cfg.hidden = 8;
    cfg.gcn_layers = 2;
    cfg.proj_dim = 5;
    cfg.critic_hidden = 6;
    cfg
}

pub fn small_batch(seed: u64, graphs: usize) -> (Arc<GraphBatch>, ViewSet) {
    let ds = synth_motif_corpus(20, seed, &MotifSpec::clean()).unwrap();
    let refs: Vec<&Graph> = ds.graphs.iter().take(graphs).collect();
    let base = Arc::new(GraphBatch::from_graphs(&refs).unwrap());
    let views = make_view_set(base.clone(), &ViewSpec::defaults(), seed ^ 0x77).unwrap();
    (base, views)
}

pub fn gcn_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0x9c1]);
    let (base, _) = small_batch(seed, 2);
    let p = Arc::new(base.propagation());
    let n = base.num_nodes();
    let h = randn(n, 3, &mut rng);
    let w = randn(3, 4, &mut rng);
    let weights = randn(n, 4, &mut rng);
    check_entries(&[h, w], &|tape, v| {
        let out = gcn_layer(tape, v[0], &p, v[1])?;
        let c = tape.constant(weights.clone());
        let m = tape.mul(out, c)?;
        Ok(tape.sum(m))
    })
}

pub fn ba_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0xba]);
    let y = labels(7, 3, &mut rng);
    check_entries(&[randn(7, 3, &mut rng)], &|tape, v| {
        let lq = tape.log_softmax_rows(v[0]);
        ba_from_log_q(tape, lq, &y)
    })
}

pub fn club_categorical_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0xc1b]);
    let y = labels(7, 3, &mut rng);
    check_entries(&[randn(7, 3, &mut rng)], &|tape, v| {
        let lq = tape.log_softmax_rows(v[0]);
        club_from_log_q(tape, lq, &y)
    })
}

pub fn club_gaussian_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0xc16]);
    let ins = [randn(6, 3, &mut rng), randn(6, 3, &mut rng).map(|x| 0.5 * x), randn(6, 3, &mut rng)];
    check_entries(&ins, &|tape, v| club_gaussian(tape, v[0], v[1], v[2]))
}

pub fn kl_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0x4c1]);
    let ins = [randn(5, 4, &mut rng), randn(5, 4, &mut rng).map(|x| 0.5 * x)];
    check_entries(&ins, &|tape, v| kl_compression(tape, v[0], v[1]))
}

pub fn hsic_linear_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0x451]);
    let ins = [randn(6, 3, &mut rng), randn(6, 2, &mut rng)];
    check_entries(&ins, &|tape, v| hsic(tape, v[0], v[1], KernelSpec::Linear))
}

pub fn hsic_rbf_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0x452]);
    let ins = [randn(6, 3, &mut rng), randn(6, 2, &mut rng)];
    let spec = KernelSpec::Rbf {
        bandwidth: Bandwidth::Fixed(1.5),
    };
    check_entries(&ins, &|tape, v| hsic(tape, v[0], v[1], spec))
}

pub fn ckd_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0xc4d]);
    let ins = [randn(5, 4, &mut rng), randn(5, 4, &mut rng), randn(5, 4, &mut rng)];
    check_entries(&ins, &|tape, v| loss_ckd(tape, v[0], v[1], v[2], 0.5))
}

pub fn rng_model(seed: u64) -> DibodModel {
    DibodModel::new(small_cfg(), dibod::graph::SYNTH_FEATURE_DIM, 0.01, seed).unwrap()
}

pub fn ibt_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0x1b7]);
    let model = rng_model(seed);
    let g = 6;
    let views = 2;
    let y = labels(g, 2, &mut rng);
    let view_ids: Vec<usize> = (0..views * g).map(|r| r / g).collect();
    let view_labels: Vec<usize> = (0..views * g).map(|r| y[r % g]).collect();
    let w = LossWeights {
        lambda_view: 0.7,
        ..LossWeights::default()
    };
    let ins = [
        randn(g, 2, &mut rng),
        randn(g, 4, &mut rng),
        randn(g, 4, &mut rng).map(|x| 0.5 * x),
        randn(views * g, 8, &mut rng),
    ];
    check_entries(&ins, &|tape, v| {
        let kl = kl_compression(tape, v[1], v[2])?;
        let out = TeacherOutput {
            z_nodes: v[1],
            z_graph: v[1],
            kl,
            logits: v[0],
            mu: v[1],
            logvar: v[2],
            view_graph: v[3],
            view_ids: view_ids.clone(),
            view_labels: view_labels.clone(),
            survivors: g,
        };
        let terms = loss_ibt(tape, &out, &y, &model.critics, &w)?;
        assert!(terms.view.is_some());
        Ok(terms.total)
    })
}

pub fn ibs_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0x1b5]);
    let model = rng_model(seed);
    let n = 6;
    let y = labels(n, 2, &mut rng);
    let kappa: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let w = LossWeights::default();
    let ins = [
        randn(n, 8, &mut rng),
        randn(n, 8, &mut rng),
        randn(n, 2, &mut rng),
        randn(n, 2, &mut rng),
    ];
    let z_graph = randn(n, 8, &mut rng);
    check_entries(&ins, &|tape, v| {
        let lq = tape.log_softmax_rows(v[3]);
        let out = StudentOutput {
            z_vs: v[0],
            z_vr: v[1],
            logits_vs: v[2],
            logits_vr: lq,
            proj_vs: v[0],
            proj_vr: v[1],
            proj_teacher: v[0],
        };
        let zg = tape.constant(z_graph.clone());
        let terms = loss_ibs(tape, &out, zg, &y, &kappa, &model.critics, &w)?;
        Ok(terms.total)
    })
}

fn stores(model: &mut DibodModel) -> Vec<&mut ParamStore> {
    let mut out: Vec<&mut ParamStore> = Vec::new();
    if !model.teacher.frozen {
        out.push(&mut model.teacher.backbone);
    }
    for head in model.teacher.heads.values_mut() {
        if !head.frozen {
            out.push(&mut head.store);
        }
    }
    out.push(&mut model.student.store);
    out
}

fn total_loss(model: &DibodModel, views: &ViewSet, kappa: &[f64], w: &LossWeights, kind: PhaseKind, noise: u64, grads: bool) -> (f64, Tape) {
    let mut tape = Tape::new();
    let t = teacher_forward(&mut tape, views, &model.teacher, Mode::Train { noise_seed: noise }).unwrap();
    let s = student_forward(&mut tape, t.z_graph, &model.student).unwrap();
    let terms = loss_total(
        &mut tape,
        &LossInputs {
            views,
            teacher: &model.teacher,
            teacher_out: &t,
            student_out: &s,
            critics: &model.critics,
            kappa,
            weights: w,
            phase: kind,
        },
    )
    .unwrap();
    let value = tape.scalar(terms.total);
    if grads {
        tape.backward(terms.total).unwrap();
    }
    (value, tape)
}

/// Directional check of the full objective with respect to every trainable
/// parameter: `grad . d` against a central difference along a random
/// direction `d`, at randomly jittered parameters. Even seeds train the teacher without the detached
/// student-teacher bound; odd seeds freeze it and keep that bound.
pub fn total_point(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[0x707]);
    let mut model = rng_model(seed);
    for store in stores(&mut model) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for x in store.get_mut(id).data_mut() {
                *x += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let (base, views) = small_batch(seed, 4);
    let n = base.num_graphs();
    let kappa: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let w = LossWeights {
        lambda_ib: 0.3,
        lambda_r: 0.2,
        lambda_kd: 0.4,
        lambda_orth: 0.5,
        lambda_view: 0.3,
        kernel: KernelSpec::Rbf {
            bandwidth: Bandwidth::Fixed(2.0),
        },
        ..LossWeights::default()
    };
    let noise = seed ^ 0xfeed;
    let kind = if seed.is_multiple_of(2) { PhaseKind::Pretrain } else { PhaseKind::Adapt };
    let w = LossWeights {
        student_teacher_term: kind == PhaseKind::Adapt,
        ..w
    };
    if kind == PhaseKind::Adapt {
        model.teacher.freeze();
    }

    let (_, tape) = total_loss(&model, &views, &kappa, &w, kind, noise, true);
    let mut analytic = 0.0;
    let mut dirs: Vec<Vec<Tensor>> = Vec::new();
    for store in stores(&mut model) {
        store.zero_grad();
        store.accumulate(&tape);
        let ids: Vec<_> = store.ids().collect();
        let mut ds = Vec::new();
        for id in ids {
            let (r, c) = store.get(id).dims();
            let d = randn(r, c, &mut rng);
            if let Some(g) = store.grad(id) {
                analytic += g.iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>();
            }
            ds.push(d);
        }
        store.zero_grad();
        dirs.push(ds);
    }
    let shifted = |model: &DibodModel, h: f64| -> f64 {
        let mut m = model.clone();
        for (store, ds) in stores(&mut m).into_iter().zip(&dirs) {
            let ids: Vec<_> = store.ids().collect();
            for (id, d) in ids.into_iter().zip(ds) {
                for (x, dx) in store.get_mut(id).data_mut().iter_mut().zip(d.data()) {
                    *x += h * dx;
                }
            }
        }
        total_loss(&m, &views, &kappa, &w, kind, noise, false).0
    };
    let numeric = (shifted(&model, STEP) - shifted(&model, -STEP)) / (2.0 * STEP);
    rel_err(analytic, numeric)
}

pub type Check = (&'static str, fn(u64) -> f64);

pub const CHECKS: [Check; 11] = [
    ("gcn_layer", gcn_point),
    ("ba_bound", ba_point),
    ("club_categorical", club_categorical_point),
    ("club_gaussian", club_gaussian_point),
    ("kl_compression", kl_point),
    ("hsic_linear", hsic_linear_point),
    ("hsic_rbf_fixed", hsic_rbf_point),
    ("loss_ckd", ckd_point),
    ("loss_ibt", ibt_point),
    ("loss_ibs", ibs_point),
    ("loss_total", total_point),
];

/// Worst relative error of `check` over `points` random points.
pub fn worst_over(check: fn(u64) -> f64, points: u64) -> f64 {
    (0..points).map(|s| check(1000 + s)).fold(0.0, f64::max)
}

pub const GAUSS_RHO: f64 = 0.9;
pub const GAUSS_N: usize = 4096;
pub const GAUSS_BINS: usize = 16;

/// Analytic `I(X; Y)` of a standard bivariate Gaussian.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

pub fn gaussian_pairs(n: usize, rho: f64, seed: u64) -> (Tensor, Tensor) {
    let mut rng = rng_for(seed, &[0x6a55]);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let s = (1.0 - rho * rho).sqrt();
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        x.push(a);
        y.push(rho * a + s * b);
    }
    (Tensor::column(x), Tensor::column(y))
}

/// Equal-count bins of a column by rank.
pub fn rank_bins(y: &Tensor, bins: usize) -> Vec<usize> {
    let n = y.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y.get(a, 0).total_cmp(&y.get(b, 0)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

pub struct Bracket {
    pub ba: f64,
    pub club: f64,
}

/// Fits a categorical critic on binned `y` and a Gaussian critic on `y`, then
/// evaluates both bounds on the same sample.
pub fn gaussian_bracket(seed: u64, steps: usize) -> Bracket {
    use dibod::mi::{ba_lower_bound, CategoricalCritic, GaussianCritic};
    let (x, y) = gaussian_pairs(GAUSS_N, GAUSS_RHO, seed);
    let bins = rank_bins(&y, GAUSS_BINS);
    let mut rng = rng_for(seed, &[0xc717]);
    let mut cat = CategoricalCritic::new("ba", &[1, 32, 32, GAUSS_BINS], 0.01, &mut rng).unwrap();
    let mut gauss = GaussianCritic::new("club", 1, 32, 1, 0.01, &mut rng).unwrap();
    for _ in 0..steps {
        cat.fit_step(&x, &bins).unwrap();
        gauss.fit_step(&x, &y).unwrap();
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let ba = ba_lower_bound(&mut tape, xv, &bins, &cat).unwrap();
    let club = gauss.club(&mut tape, xv, yv).unwrap();
    Bracket {
        ba: tape.scalar(ba),
        club: tape.scalar(club),
    }
}

pub fn hsic_value(a: &Tensor, b: &Tensor, spec: KernelSpec) -> f64 {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let h = hsic(&mut tape, av, bv, spec).unwrap();
    tape.scalar(h)
}

fn dense_product(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[i][j] += x[i][k] * y[k][j];
            }
        }
    }
    out
}

/// `tr(K H L H) / (n-1)^2` with linear kernels, by explicit matrix products.
pub fn hsic_brute_linear(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.rows();
    let kernel = |x: &Tensor| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| x.row(i).iter().zip(x.row(j)).map(|(p, q)| p * q).sum()).collect())
            .collect()
    };
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect())
        .collect();
    let khlh = dense_product(&dense_product(&dense_product(&kernel(a), &h), &kernel(b)), &h);
    (0..n).map(|i| khlh[i][i]).sum::<f64>() / ((n - 1) * (n - 1)) as f64
}

pub const HSIC_INDEP_N: usize = 2048;
pub const HSIC_INDEP_LIMIT: f64 = 5e-3;

/// Median-bandwidth RBF HSIC of independent standard-normal pairs and of a
/// copied pair.
pub fn rbf_independence(seed: u64) -> (f64, f64) {
    let mut rng = rng_for(seed, &[0x1d9]);
    let a = randn(HSIC_INDEP_N, 1, &mut rng);
    let b = randn(HSIC_INDEP_N, 1, &mut rng);
    let spec = KernelSpec::default();
    (hsic_value(&a, &b, spec), hsic_value(&a, &a, spec))
}

/// Eight samples over three classes: probability rows and true labels.
pub fn ssr_fixture() -> (Tensor, Vec<usize>) {
    let conf = Tensor::from_rows(&[
        vec![0.7, 0.2, 0.1],
        vec![0.9, 0.05, 0.05],
        vec![0.5, 0.45, 0.05],
        vec![0.3, 0.4, 0.3],
        vec![0.25, 0.45, 0.3],
        vec![0.3, 0.45, 0.25],
        vec![0.2, 0.2, 0.6],
        vec![0.35, 0.05, 0.6],
    ])
    .unwrap();
    (conf, vec![0, 0, 1, 1, 1, 2, 2, 0])
}

/// Thresholds, observation counts and weights by direct enumeration.
pub fn ssr_brute(conf: &Tensor, truth: &[usize]) -> (Vec<f64>, Vec<Vec<u64>>, Vec<f64>) {
    let (n, m) = conf.dims();
    let pred: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..m {
                if conf.get(i, c) > conf.get(i, best) {
                    best = c;
                }
            }
            best
        })
        .collect();
    let t: Vec<f64> = (0..m)
        .map(|b| {
            let members: Vec<f64> = (0..n).filter(|&i| pred[i] == b).map(|i| conf.get(i, b)).collect();
            if members.is_empty() {
                1.0
            } else {
                members.iter().sum::<f64>() / members.len() as f64
            }
        })
        .collect();
    let o: Vec<Vec<u64>> = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| (0..n).filter(|&i| pred[i] == a && truth[i] == b && conf.get(i, b) >= t[b]).count() as u64)
                .collect()
        })
        .collect();
    let count = |a: usize| (0..n).filter(|&i| pred[i] == a).count() as f64;
    let row = |a: usize| o[a].iter().sum::<u64>() as f64;
    let e = |a: usize, b: usize| -> f64 {
        let term = |j: usize| if row(j) == 0.0 { 0.0 } else { o[j][b] as f64 / row(j) * count(j) };
        let den: f64 = (0..m).map(term).sum();
        if den == 0.0 {
            1.0 / m as f64
        } else {
            term(a) / den
        }
    };
    let kappa = truth.iter().map(|&y| e(y, y)).collect();
    (t, o, kappa)
}

/// Random square count matrix with at least one nonzero per column.
pub fn random_observation(m: usize, rng: &mut Rng) -> (Vec<Vec<u64>>, Vec<usize>) {
    let mut o: Vec<Vec<u64>> = (0..m).map(|_| (0..m).map(|_| rng.random_range(0..20u64)).collect()).collect();
    for b in 0..m {
        if (0..m).all(|a| o[a][b] == 0) {
            o[b][b] = 1;
        }
    }
    let counts = o.iter().map(|r| r.iter().sum::<u64>() as usize + rng.random_range(0..5usize)).collect();
    (o, counts)
}
