//! Base kernels and set-to-set divergence estimators.
//!
//! Every estimator takes two [`PointSet`]s and returns a scalar. The base
//! kernel family is `k(x, y) = -‖x - y‖_p^q`, which is not positive definite;
//! nothing here assumes it is. All accumulation happens in `f64`.

mod sinkhorn;

pub use sinkhorn::{regularized_ot, sinkhorn_divergence, Epsilon, SinkhornConfig, SinkhornMode};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistanceError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("non-finite coordinate at point {point}, coordinate {coord}")]
    NonFinite { point: usize, coord: usize },

    #[error("point set is empty")]
    EmptySet,

    #[error("point dimension must be positive")]
    ZeroDimension,

    #[error("set has {got} points; the unbiased estimator requires at least {min}")]
    TooFewPoints { got: usize, min: usize },

    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),

    #[error("invalid sinkhorn configuration: {0}")]
    InvalidConfig(String),

    #[error("sinkhorn did not converge in {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error(
        "exp-domain sinkhorn overflowed or underflowed at epsilon {epsilon:e}; use log-domain mode"
    )]
    ExpDomainOverflow { epsilon: f64 },
}

pub type Result<T> = std::result::Result<T, DistanceError>;

/// An ordered collection of equal-dimension finite vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
}

impl PointSet {
    /// Build from a flat row-major buffer.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(DistanceError::ZeroDimension);
        }
        if data.is_empty() {
            return Err(DistanceError::EmptySet);
        }
        if data.len() % dim != 0 {
            return Err(DistanceError::DimensionMismatch(data.len() % dim, dim));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DistanceError::NonFinite {
                point: pos / dim,
                coord: pos % dim,
            });
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(DistanceError::EmptySet)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(DistanceError::DimensionMismatch(dim, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Order of the vector norm `‖·‖_p`. `Infinity` is the max-coordinate norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    Finite(f64),
    Infinity,
}

impl NormOrder {
    pub const GRID: [NormOrder; 4] = [
        NormOrder::Finite(1.0),
        NormOrder::Finite(1.5),
        NormOrder::Finite(2.0),
        NormOrder::Infinity,
    ];

    pub fn validate(self) -> Result<Self> {
        match self {
            NormOrder::Finite(p) if !(p.is_finite() && p > 0.0) => Err(
                DistanceError::InvalidKernel(format!("norm order must be positive, got {p}")),
            ),
            other => Ok(other),
        }
    }

    /// `‖v‖_p`.
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormOrder::Infinity => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            NormOrder::Finite(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
            NormOrder::Finite(p) if p == 2.0 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormOrder::Finite(p) => v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }

    /// `‖x - y‖_p` without allocating.
    pub fn distance(self, x: &[f64], y: &[f64]) -> f64 {
        let diffs = x.iter().zip(y).map(|(a, b)| (a - b).abs());
        match self {
            NormOrder::Infinity => diffs.fold(0.0f64, f64::max),
            NormOrder::Finite(p) if p == 1.0 => diffs.sum(),
            NormOrder::Finite(p) if p == 2.0 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            NormOrder::Finite(p) => diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }

    /// Writes `∂‖δ‖_p / ∂δ` into `out`, given `norm = ‖δ‖_p`. Zero at `δ = 0`.
    pub fn norm_gradient(self, delta: &[f64], norm: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if norm == 0.0 {
            return;
        }
        match self {
            NormOrder::Infinity => {
                // first coordinate attaining the max carries the whole subgradient
                let (idx, _) = delta
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |(bi, bv), (i, v)| {
                        if v.abs() > bv {
                            (i, v.abs())
                        } else {
                            (bi, bv)
                        }
                    });
                out[idx] = delta[idx].signum();
            }
            NormOrder::Finite(p) if p == 1.0 => {
                for (o, d) in out.iter_mut().zip(delta) {
                    *o = if *d == 0.0 { 0.0 } else { d.signum() };
                }
            }
            NormOrder::Finite(p) if p == 2.0 => {
                for (o, d) in out.iter_mut().zip(delta) {
                    *o = d / norm;
                }
            }
            NormOrder::Finite(p) => {
                let denom = norm.powf(p - 1.0);
                for (o, d) in out.iter_mut().zip(delta) {
                    *o = if *d == 0.0 {
                        0.0
                    } else {
                        d.signum() * d.abs().powf(p - 1.0) / denom
                    };
                }
            }
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::Finite(p) => write!(f, "{p}"),
            NormOrder::Infinity => write!(f, "inf"),
        }
    }
}

impl Serialize for NormOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormOrder::Finite(p) => s.serialize_f64(*p),
            NormOrder::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => NormOrder::Finite(p)
                .validate()
                .map_err(serde::de::Error::custom),
            Raw::Str(s) => match s.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(NormOrder::Infinity),
                other => other
                    .parse::<f64>()
                    .map_err(serde::de::Error::custom)
                    .and_then(|p| {
                        NormOrder::Finite(p)
                            .validate()
                            .map_err(serde::de::Error::custom)
                    }),
            },
        }
    }
}

/// Parameters of the base kernel `k(x, y) = -‖x - y‖_p^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub norm_order: NormOrder,
    pub exponent: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            norm_order: NormOrder::Finite(2.0),
            exponent: 1.0,
        }
    }
}

impl KernelSpec {
    pub const EXPONENT_GRID: [f64; 3] = [0.5, 1.0, 2.0];

    pub fn new(norm_order: NormOrder, exponent: f64) -> Result<Self> {
        Self {
            norm_order,
            exponent,
        }
        .validate()
    }

    pub fn validate(self) -> Result<Self> {
        self.norm_order.validate()?;
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(DistanceError::InvalidKernel(format!(
                "exponent must be positive, got {}",
                self.exponent
            )));
        }
        Ok(self)
    }

    /// The 12 norm-order × exponent combinations searched by `grid-kernel`.
    pub fn grid() -> Vec<KernelSpec> {
        NormOrder::GRID
            .iter()
            .flat_map(|&norm_order| {
                Self::EXPONENT_GRID.iter().map(move |&exponent| KernelSpec {
                    norm_order,
                    exponent,
                })
            })
            .collect()
    }

    /// `∂k(a, b)/∂a` written into `out`; `scratch` holds `a - b`.
    pub fn grad_first(&self, a: &[f64], b: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        for ((s, x), y) in scratch.iter_mut().zip(a).zip(b) {
            *s = x - y;
        }
        let d = self.norm_order.norm(scratch);
        self.norm_order.norm_gradient(scratch, d, out);
        if d == 0.0 {
            return;
        }
        let scale = -self.exponent * pow_q(d, self.exponent) / d;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    /// Kernel value on already-validated slices.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.norm_order.distance(x, y);
        -pow_q(d, self.exponent)
    }
}

#[inline]
pub(crate) fn pow_q(d: f64, q: f64) -> f64 {
    if q == 1.0 {
        d
    } else if q == 2.0 {
        d * d
    } else if q == 0.5 {
        d.sqrt()
    } else {
        d.powf(q)
    }
}

fn check_vec(v: &[f64], which: usize) -> Result<()> {
    match v.iter().position(|c| !c.is_finite()) {
        Some(coord) => Err(DistanceError::NonFinite {
            point: which,
            coord,
        }),
        None => Ok(()),
    }
}

/// `-(‖x - y‖_p)^q`.
pub fn base_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(DistanceError::DimensionMismatch(x.len(), y.len()));
    }
    check_vec(x, 0)?;
    check_vec(y, 1)?;
    spec.validate()?;
    Ok(spec.eval(x, y))
}

/// Gaussian kernel `exp(-‖x - y‖² / (2σ²))`, kept for sanity checks against a PSD kernel.
pub fn gaussian_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

fn check_dims(x: &PointSet, y: &PointSet) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(DistanceError::DimensionMismatch(x.dim(), y.dim()));
    }
    Ok(())
}

/// Unbiased MMD² estimate with an arbitrary kernel closure.
pub fn mmd2_unbiased_with<K>(x: &PointSet, y: &PointSet, kernel: K) -> Result<f64>
where
    K: Fn(&[f64], &[f64]) -> f64,
{
    check_dims(x, y)?;
    let (m, n) = (x.len(), y.len());
    for got in [m, n] {
        if got < 2 {
            return Err(DistanceError::TooFewPoints { got, min: 2 });
        }
    }

    // symmetric kernels: sum over i<j and double
    let within = |s: &PointSet| {
        let mut acc = NeumaierSum::default();
        for i in 0..s.len() {
            let a = s.point(i);
            for j in (i + 1)..s.len() {
                acc.add(kernel(a, s.point(j)));
            }
        }
        acc.scaled(2.0)
    };
    let kxx = within(x);
    let kyy = within(y);
    let mut kxy = NeumaierSum::default();
    for a in x.points() {
        for b in y.points() {
            kxy.add(kernel(a, b));
        }
    }
    let (mf, nf) = (m as f64, n as f64);
    let mut out = NeumaierSum::default();
    kxx.divide_into(mf * (mf - 1.0), &mut out);
    kyy.divide_into(nf * (nf - 1.0), &mut out);
    kxy.scaled(-2.0).divide_into(mf * nf, &mut out);
    Ok(out.total())
}

/// Compensated running sum; MMD terms cancel heavily when the two sets are close.
#[derive(Debug, Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    carry: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.carry
    }

    /// Exact for powers of two.
    fn scaled(self, k: f64) -> Self {
        Self {
            sum: k * self.sum,
            carry: k * self.carry,
        }
    }

    /// Adds `self / d` to `out`, keeping the rounding remainder of the quotient.
    fn divide_into(self, d: f64, out: &mut NeumaierSum) {
        let q = self.sum / d;
        let rem = (-q).mul_add(d, self.sum);
        out.add(q);
        out.add((rem + self.carry) / d);
    }
}

/// Unbiased MMD² with the base kernel. May be negative.
pub fn mmd2_unbiased(x: &PointSet, y: &PointSet, spec: &KernelSpec) -> Result<f64> {
    let spec = spec.validate()?;
    mmd2_unbiased_with(x, y, |a, b| spec.eval(a, b))
}

/// Unbiased MMD² with the base kernel, plus its gradient with respect to every
/// coordinate of `x` and `y` (same row-major layout as the inputs).
///
/// At coincident points the kernel gradient is taken as zero.
pub fn mmd2_unbiased_grad(
    x: &PointSet,
    y: &PointSet,
    spec: &KernelSpec,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let value = mmd2_unbiased(x, y, spec)?;
    let dim = x.dim();
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut gx = vec![0.0; x.as_flat().len()];
    let mut gy = vec![0.0; y.as_flat().len()];
    let mut delta = vec![0.0; dim];
    let mut g = vec![0.0; dim];

    let mut within = |s: &PointSet, grad: &mut [f64], weight: f64| {
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                spec.grad_first(s.point(i), s.point(j), &mut delta, &mut g);
                for k in 0..dim {
                    grad[i * dim + k] += weight * g[k];
                    grad[j * dim + k] -= weight * g[k];
                }
            }
        }
    };
    within(x, &mut gx, 2.0 / (m * (m - 1.0)));
    within(y, &mut gy, 2.0 / (n * (n - 1.0)));

    let cross = -2.0 / (m * n);
    for i in 0..x.len() {
        for j in 0..y.len() {
            spec.grad_first(x.point(i), y.point(j), &mut delta, &mut g);
            for k in 0..dim {
                gx[i * dim + k] += cross * g[k];
                gy[j * dim + k] -= cross * g[k];
            }
        }
    }
    Ok((value, gx, gy))
}

/// Biased (V-statistic) MMD² with the base kernel; the large-ε limit of the Sinkhorn divergence.
pub fn mmd2_biased(x: &PointSet, y: &PointSet, spec: &KernelSpec) -> Result<f64> {
    check_dims(x, y)?;
    let spec = spec.validate()?;
    let mean = |a: &PointSet, b: &PointSet| {
        let mut acc = 0.0;
        for p in a.points() {
            for q in b.points() {
                acc += spec.eval(p, q);
            }
        }
        acc / (a.len() * b.len()) as f64
    };
    Ok(mean(x, x) + mean(y, y) - 2.0 * mean(x, y))
}

/// Mean of `‖x_i - y_j‖_p` over all cross pairs.
pub fn mean_pairwise_distance(x: &PointSet, y: &PointSet, norm: NormOrder) -> Result<f64> {
    check_dims(x, y)?;
    let norm = norm.validate()?;
    let mut acc = 0.0;
    for a in x.points() {
        for b in y.points() {
            acc += norm.distance(a, b);
        }
    }
    Ok(acc / (x.len() * y.len()) as f64)
}

fn directed_hausdorff(from: &PointSet, to: &PointSet, norm: NormOrder) -> f64 {
    from.points()
        .map(|a| {
            to.points()
                .map(|b| norm.distance(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two finite point sets.
pub fn hausdorff(x: &PointSet, y: &PointSet, norm: NormOrder) -> Result<f64> {
    check_dims(x, y)?;
    let norm = norm.validate()?;
    Ok(directed_hausdorff(x, y, norm).max(directed_hausdorff(y, x, norm)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f64]]) -> PointSet {
        PointSet::from_rows(rows).unwrap()
    }

    fn spec(p: NormOrder, q: f64) -> KernelSpec {
        KernelSpec::new(p, q).unwrap()
    }

    #[test]
    fn base_kernel_examples() {
        for s in KernelSpec::grid() {
            assert_eq!(base_kernel(&[0.0, 0.0], &[0.0, 0.0], &s).unwrap(), 0.0);
        }
        let k = base_kernel(&[0.0, 0.0], &[3.0, 4.0], &spec(NormOrder::Finite(2.0), 1.0));
        assert_eq!(k.unwrap(), -5.0);
        let k = base_kernel(
            &[1.0, -2.0],
            &[4.0, 2.0],
            &spec(NormOrder::Finite(1.0), 2.0),
        );
        assert_eq!(k.unwrap(), -49.0);
        let k = base_kernel(&[1.0, -2.0], &[4.0, 2.0], &spec(NormOrder::Infinity, 1.0));
        assert_eq!(k.unwrap(), -4.0);
    }

    #[test]
    fn base_kernel_errors() {
        let s = KernelSpec::default();
        assert_eq!(
            base_kernel(&[0.0], &[0.0, 1.0], &s),
            Err(DistanceError::DimensionMismatch(1, 2))
        );
        assert!(matches!(
            base_kernel(&[f64::NAN], &[0.0], &s),
            Err(DistanceError::NonFinite { .. })
        ));
        assert!(matches!(
            KernelSpec::new(NormOrder::Finite(2.0), 0.0),
            Err(DistanceError::InvalidKernel(_))
        ));
        assert!(KernelSpec::new(NormOrder::Finite(-1.0), 1.0).is_err());
    }

    #[test]
    fn point_set_rejects_bad_input() {
        assert_eq!(
            PointSet::from_rows::<Vec<f64>>(&[]),
            Err(DistanceError::EmptySet)
        );
        assert!(matches!(
            PointSet::from_rows(&[vec![0.0, 1.0], vec![0.0]]),
            Err(DistanceError::DimensionMismatch(2, 1))
        ));
        assert!(matches!(
            PointSet::from_rows(&[vec![0.0, f64::INFINITY]]),
            Err(DistanceError::NonFinite { point: 0, coord: 1 })
        ));
    }

    #[test]
    fn mmd_examples() {
        let s = KernelSpec::default();
        let zeros = set(&[&[0.0], &[0.0]]);
        assert_eq!(mmd2_unbiased(&zeros, &zeros, &s).unwrap(), 0.0);

        let x = set(&[&[0.0], &[1.0]]);
        let y = set(&[&[2.0], &[3.0]]);
        assert_eq!(mmd2_unbiased(&x, &y, &s).unwrap(), 2.0);
        assert_eq!(mmd2_unbiased(&y, &x, &s).unwrap(), 2.0);
    }

    #[test]
    fn mmd_requires_two_points() {
        let one = set(&[&[0.0]]);
        let two = set(&[&[0.0], &[1.0]]);
        let err = mmd2_unbiased(&one, &two, &KernelSpec::default()).unwrap_err();
        assert_eq!(err, DistanceError::TooFewPoints { got: 1, min: 2 });
        assert!(err.to_string().contains("at least 2"));
        assert!(mmd2_unbiased(&two, &one, &KernelSpec::default()).is_err());
    }

    #[test]
    fn mean_pairwise_examples() {
        let x = set(&[&[5.0, 5.0]]);
        assert_eq!(
            mean_pairwise_distance(&x, &x, NormOrder::Finite(2.0)).unwrap(),
            0.0
        );
        let x = set(&[&[0.0]]);
        let y = set(&[&[2.0], &[4.0]]);
        assert_eq!(
            mean_pairwise_distance(&x, &y, NormOrder::Finite(2.0)).unwrap(),
            3.0
        );
    }

    #[test]
    fn hausdorff_examples() {
        let x = set(&[&[0.0], &[1.0]]);
        let y = set(&[&[2.0], &[5.0]]);
        assert_eq!(hausdorff(&x, &x, NormOrder::Finite(2.0)).unwrap(), 0.0);
        assert_eq!(hausdorff(&x, &y, NormOrder::Finite(2.0)).unwrap(), 4.0);
        let a = set(&[&[0.0]]);
        let b = set(&[&[3.0]]);
        assert_eq!(hausdorff(&a, &b, NormOrder::Infinity).unwrap(), 3.0);
    }

    #[test]
    fn norm_serde_accepts_inf() {
        let s: KernelSpec = serde_json::from_str(r#"{"norm_order":"inf","exponent":0.5}"#).unwrap();
        assert_eq!(s.norm_order, NormOrder::Infinity);
        let round: KernelSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(round, s);
        assert!(serde_json::from_str::<KernelSpec>(r#"{"norm_order":-2,"exponent":1}"#).is_err());
    }

    #[test]
    fn gaussian_mmd_is_nonnegative_in_expectation_sanity() {
        // PSD kernel on well separated sets gives a clearly positive estimate
        let x = set(&[&[0.0, 0.0], &[0.1, 0.1], &[0.2, 0.0]]);
        let y = set(&[&[5.0, 5.0], &[5.1, 5.1], &[5.2, 5.0]]);
        let v = mmd2_unbiased_with(&x, &y, |a, b| gaussian_kernel(a, b, 1.0)).unwrap();
        assert!(v > 0.5);
    }

    #[test]
    fn norm_gradient_matches_finite_difference() {
        let delta = [0.3, -1.2, 0.7];
        for p in NormOrder::GRID {
            let n = p.norm(&delta);
            let mut g = [0.0; 3];
            p.norm_gradient(&delta, n, &mut g);
            for k in 0..3 {
                let h = 1e-6;
                let mut plus = delta;
                let mut minus = delta;
                plus[k] += h;
                minus[k] -= h;
                let fd = (p.norm(&plus) - p.norm(&minus)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "{p} coord {k}: {fd} vs {}", g[k]);
            }
        }
    }
}
