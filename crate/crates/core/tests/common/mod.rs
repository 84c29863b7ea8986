//! Independent reference implementations and fixtures shared by integration tests.
#![allow(dead_code)]

use hsdetect::bundle::SampleBundle;
use hsdetect::distance::{KernelSpec, NormOrder, PointSet};
use hsdetect::selection::StreamKey;
use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `‖v‖_p` straight from the definition.
pub fn norm(v: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::Infinity => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        NormOrder::Finite(p) => v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
    }
}

pub fn dist(x: &[f64], y: &[f64], p: NormOrder) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    norm(&d, p)
}

pub fn kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> f64 {
    -dist(x, y, spec.norm_order).powf(spec.exponent)
}

/// Exactly rounded sum: splits every term into a non-overlapping expansion (Shewchuk).
pub fn exact_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in terms {
        let mut kept = 0;
        for k in 0..partials.len() {
            let mut y = partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    partials.iter().rev().sum()
}

/// Unbiased MMD² as the explicit double sum over ordered pairs.
pub fn mmd2_oracle(x: &[Vec<f64>], y: &[Vec<f64>], spec: &KernelSpec) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut terms = Vec::new();
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                terms.push(kernel(&x[i], &x[j], spec) / (m * (m - 1.0)));
            }
        }
    }
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                terms.push(kernel(&y[i], &y[j], spec) / (n * (n - 1.0)));
            }
        }
    }
    for a in x {
        for b in y {
            terms.push(-2.0 * kernel(a, b, spec) / (m * n));
        }
    }
    exact_sum(terms)
}

/// V-statistic MMD² with kernel `-‖x-y‖₂^q`.
pub fn neg_cost_mmd_biased(x: &[Vec<f64>], y: &[Vec<f64>], q: f64) -> f64 {
    let c = |a: &[f64], b: &[f64]| dist(a, b, NormOrder::Finite(2.0)).powf(q);
    let mean = |u: &[Vec<f64>], v: &[Vec<f64>]| {
        let mut s = 0.0;
        for a in u {
            for b in v {
                s += c(a, b);
            }
        }
        s / (u.len() * v.len()) as f64
    };
    2.0 * mean(x, y) - mean(x, x) - mean(y, y)
}

/// Exact OT cost between two uniform 2-point measures: the optimal plan is one of
/// the two permutation matrices scaled by 1/2.
pub fn exact_ot_2x2(x: &[Vec<f64>], y: &[Vec<f64>], q: f64) -> f64 {
    let c = |a: &[f64], b: &[f64]| dist(a, b, NormOrder::Finite(2.0)).powf(q);
    let straight = c(&x[0], &y[0]) + c(&x[1], &y[1]);
    let crossed = c(&x[0], &y[1]) + c(&x[1], &y[0]);
    straight.min(crossed) / 2.0
}

pub fn hausdorff_oracle(x: &[Vec<f64>], y: &[Vec<f64>], p: NormOrder) -> f64 {
    let directed = |u: &[Vec<f64>], v: &[Vec<f64>]| {
        u.iter()
            .map(|a| {
                v.iter()
                    .map(|b| dist(a, b, p))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(x, y).max(directed(y, x))
}

/// AUROC by counting ordered (positive, negative) pairs, ties worth one half.
pub fn auc_pair_count(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut twice_wins, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                if scores[i] > scores[j] {
                    twice_wins += 2;
                } else if scores[i] == scores[j] {
                    twice_wins += 1;
                }
            }
        }
    }
    twice_wins as f64 / (2 * pos * neg) as f64
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn point_set(rows: &[Vec<f64>]) -> PointSet {
    PointSet::from_rows(rows).unwrap()
}

/// A bundle with random f32 streams.
pub fn random_bundle(
    rng: &mut ChaCha8Rng,
    id: &str,
    keys: &[StreamKey],
    prompt_len: usize,
    response_len: usize,
    dim: usize,
) -> SampleBundle {
    let streams: IndexMap<StreamKey, Vec<f32>> = keys
        .iter()
        .map(|k| {
            let m = (0..(prompt_len + response_len) * dim)
                .map(|_| rng.random_range(-2.0f32..2.0))
                .collect();
            (*k, m)
        })
        .collect();
    SampleBundle {
        sample_id: id.into(),
        label: rng.random_range(0..=1),
        prompt_len,
        response_len,
        dim,
        streams,
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
