//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use canopy_core::data::{Rng, PLANET_LABELS, PLANET_WEATHER_COUNT};
use canopy_core::nn::{Activation, HiddenSpec, LossKind, Mode, NetSpec, Network};
use canopy_core::{LabelMatrix, LabelVocabulary, ProbMatrix, RngSeed};
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub fn vocab(k: usize) -> Arc<LabelVocabulary> {
    Arc::new(LabelVocabulary::new((0..k).map(|j| format!("l{j}")).collect(), 0).unwrap())
}

pub fn random_labels(rng: &mut Rng, n: usize, k: usize, p: f64) -> LabelMatrix {
    let values = Array2::from_shape_simple_fn((n, k), || u8::from(rng.random_bool(p)));
    LabelMatrix::new(values, vocab(k)).unwrap()
}

/// Label counts over the 40,479 training chips, in `PLANET_LABELS` order.
pub const PLANET_COUNTS: [usize; 17] = [
    28431, 2089, 2697, 7261, 12315, 339, 862, 332, 101, 100, 4547, 3660, 37513, 8071, 340, 209, 7411,
];
pub const PLANET_TOTAL: usize = 40479;

/// Truth with one weather label per row and independent ground labels, all
/// at the dataset's marginal frequencies.
pub fn planet_like_truth(n: usize, seed: RngSeed) -> LabelMatrix {
    let mut rng = seed.rng();
    let weather_total: usize = PLANET_COUNTS[..PLANET_WEATHER_COUNT].iter().sum();
    let mut values = Array2::<u8>::zeros((n, 17));
    for i in 0..n {
        let mut r = rng.random_range(0..weather_total);
        for (j, &c) in PLANET_COUNTS[..PLANET_WEATHER_COUNT].iter().enumerate() {
            if r < c {
                values[[i, j]] = 1;
                break;
            }
            r -= c;
        }
        for j in PLANET_WEATHER_COUNT..17 {
            values[[i, j]] = u8::from(rng.random_bool(PLANET_COUNTS[j] as f64 / PLANET_TOTAL as f64));
        }
    }
    LabelMatrix::new(values, Arc::new(LabelVocabulary::planet())).unwrap()
}

pub fn planet_vocab_names() -> Vec<&'static str> {
    PLANET_LABELS.to_vec()
}

/// Noisy probability predictions of `truth`. Larger `skill` separates the
/// classes more; `bias` shifts each label's logits so that 0.5 is a poor cutoff.
pub fn noisy_probs(truth: &LabelMatrix, skill: f64, bias: &[f64], rng: &mut Rng) -> ProbMatrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let values = Array2::from_shape_fn(truth.values().dim(), |(i, j)| {
        let sign = if truth.get(i, j) { 1.0 } else { -1.0 };
        let z = skill * sign + bias[j] + normal.sample(rng);
        1.0 / (1.0 + (-z).exp())
    });
    ProbMatrix::new(values, truth.vocab().clone()).unwrap()
}

/// Naive per-class counts: (tp, fp, fn, tn) by explicit double loop.
pub fn naive_counts(pred: &Array2<u8>, truth: &Array2<u8>, per_sample: bool) -> Vec<[u64; 4]> {
    let (n, k) = pred.dim();
    let len = if per_sample { n } else { k };
    let mut out = vec![[0u64; 4]; len];
    for i in 0..n {
        for j in 0..k {
            let slot = if per_sample { i } else { j };
            let (p, t) = (pred[[i, j]] == 1, truth[[i, j]] == 1);
            let idx = match (p, t) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            out[slot][idx] += 1;
        }
    }
    out
}

pub fn naive_div(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn naive_f(c: [u64; 4], beta: f64) -> f64 {
    let [tp, fp, fn_, _] = c;
    if tp == 0 {
        return 0.0;
    }
    let b2 = beta * beta;
    let num = (1.0 + b2) * tp as f64;
    num / (num + b2 * fn_ as f64 + fp as f64)
}

/// (precision, recall, fbeta) under the named scheme.
pub fn naive_averaged(pred: &Array2<u8>, truth: &Array2<u8>, scheme: &str, weights: &[f64], beta: f64) -> (f64, f64, f64) {
    let per_sample = scheme == "sample";
    let c = naive_counts(pred, truth, per_sample);
    let prec = |c: [u64; 4]| naive_div(c[0], c[0] + c[1]);
    let rec = |c: [u64; 4]| naive_div(c[0], c[0] + c[2]);
    match scheme {
        "micro" => {
            let mut tot = [0u64; 4];
            for x in &c {
                for q in 0..4 {
                    tot[q] += x[q];
                }
            }
            (prec(tot), rec(tot), naive_f(tot, beta))
        }
        "weighted" => {
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for (x, w) in c.iter().zip(weights) {
                p += w * prec(*x);
                r += w * rec(*x);
                f += w * naive_f(*x, beta);
            }
            (p, r, f)
        }
        _ => {
            let len = c.len() as f64;
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for x in &c {
                p += prec(*x);
                r += rec(*x);
                f += naive_f(*x, beta);
            }
            if c.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                (p / len, r / len, f / len)
            }
        }
    }
}

/// Sample F-beta of `scores >= cutoffs` by direct evaluation.
pub fn sample_f_at(scores: &Array2<f64>, truth: &Array2<u8>, cutoffs: &[f64], beta: f64) -> f64 {
    let pred = Array2::from_shape_fn(scores.dim(), |(i, j)| u8::from(scores[[i, j]] >= cutoffs[j]));
    naive_averaged(&pred, truth, "sample", &[], beta).2
}

pub fn distinct(col: impl Iterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = col.map(f64::to_bits).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Best sample F-beta over the cross product of each label's observed
/// scores plus the 0.5 default.
pub fn grid_best(scores: &Array2<f64>, truth: &Array2<u8>, beta: f64) -> f64 {
    let k = scores.ncols();
    let cands: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut c = distinct(scores.column(j).iter().copied());
            c.push(0.5);
            c
        })
        .collect();
    let mut idx = vec![0usize; k];
    let mut best = f64::NEG_INFINITY;
    loop {
        let cut: Vec<f64> = (0..k).map(|j| cands[j][idx[j]]).collect();
        best = best.max(sample_f_at(scores, truth, &cut, beta));
        let mut j = 0;
        loop {
            if j == k {
                return best;
            }
            idx[j] += 1;
            if idx[j] < cands[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Best single-label F-beta over that label's observed scores.
pub fn class_best(scores: &[f64], truth: &[u8], beta: f64) -> f64 {
    distinct(scores.iter().copied())
        .into_iter()
        .map(|c| {
            let mut cnt = [0u64; 4];
            for (s, t) in scores.iter().zip(truth) {
                let idx = match (*s >= c, *t == 1) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                cnt[idx] += 1;
            }
            naive_f(cnt, beta)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Brute-force weighted vote for one label: 1 iff 2·Σw·y > Σw.
pub fn brute_vote(votes: &[u8], weights: &[u32]) -> u8 {
    let v: u64 = votes.iter().zip(weights).map(|(&y, &w)| u64::from(y) * u64::from(w)).sum();
    let total: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    u8::from(2 * v > total)
}

/// Truth rows for `kind`: a one-hot block for softmax parts, Bernoulli elsewhere.
pub fn truth_for(kind: LossKind, n: usize, k: usize, rng: &mut Rng) -> Array2<f64> {
    let one_hot = match kind {
        LossKind::Bce => 0,
        LossKind::SoftmaxCe => k,
        LossKind::Hybrid { weather_count } => weather_count,
    };
    let mut y = Array2::from_shape_fn((n, k), |_| f64::from(u8::from(rng.random_bool(0.5))));
    for i in 0..n {
        if one_hot > 0 {
            y.row_mut(i).slice_mut(ndarray::s![..one_hot]).fill(0.0);
            y[[i, rng.random_range(0..one_hot)]] = 1.0;
        }
    }
    y
}

pub fn random_net(rng: &mut Rng, kind: LossKind, d: usize, k: usize) -> Network {
    let hidden = (0..rng.random_range(0..3))
        .map(|_| HiddenSpec {
            units: rng.random_range(2..6),
            activation: if rng.random_bool(0.5) { Activation::Relu } else { Activation::Sigmoid },
            batch_norm: rng.random_bool(0.6),
            dropout: 0.0,
        })
        .collect();
    let mut net = Network::new(&NetSpec::for_loss(d, hidden, k, kind), rng).unwrap();
    // move γ, β and biases off their initial values so every term is exercised
    let p: Vec<f64> = net.params().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    net.set_params(&p).unwrap();
    net
}

/// Max over parameters of |a - n| / max(|a|, |n|, 1e-6).
pub fn gradient_error(net: &Network, x: &Array2<f64>, y: &Array2<f64>, kind: LossKind) -> f64 {
    let (_, analytic, _) = net.loss_and_gradient(x.view(), y.view(), kind, Mode::Train, None).unwrap();
    let base = net.params();
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for p in 0..base.len() {
        let mut plus = base.clone();
        plus[p] += h;
        probe.set_params(&plus).unwrap();
        let lp = probe.loss_and_gradient(x.view(), y.view(), kind, Mode::Train, None).unwrap().0;
        let mut minus = base.clone();
        minus[p] -= h;
        probe.set_params(&minus).unwrap();
        let lm = probe.loss_and_gradient(x.view(), y.view(), kind, Mode::Train, None).unwrap().0;
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[p];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
