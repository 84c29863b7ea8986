//! Entropic optimal transport between uniform empirical measures.

use super::{check_dims, pow_q, DistanceError, PointSet, Result};
use serde::{Deserialize, Serialize};

/// Entropic regularization strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Epsilon {
    Absolute(f64),
    /// `factor × median(C_ij)` of the cross cost matrix.
    MedianScaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornMode {
    LogDomain,
    ExpDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub epsilon: Epsilon,
    pub max_iterations: usize,
    /// Sup-norm change of the dual potentials that counts as converged.
    pub convergence_tol: f64,
    /// Cost is `‖x - y‖₂^q`.
    pub cost_exponent: f64,
    pub mode: SinkhornMode,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::MedianScaled(0.1),
            max_iterations: 1000,
            convergence_tol: 1e-6,
            cost_exponent: 1.0,
            mode: SinkhornMode::LogDomain,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon: Epsilon::Absolute(epsilon),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DistanceError::InvalidConfig(msg));
        match self.epsilon {
            Epsilon::Absolute(e) | Epsilon::MedianScaled(e) if !(e.is_finite() && e > 0.0) => {
                return bad(format!("epsilon must be positive, got {e}"));
            }
            _ => {}
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(self.convergence_tol > 0.0) {
            return bad(format!(
                "convergence_tol must be positive, got {}",
                self.convergence_tol
            ));
        }
        if !(self.cost_exponent.is_finite() && self.cost_exponent > 0.0) {
            return bad(format!(
                "cost exponent must be positive, got {}",
                self.cost_exponent
            ));
        }
        Ok(())
    }

    fn resolve_epsilon(&self, cost: &CostMatrix) -> f64 {
        match self.epsilon {
            Epsilon::Absolute(e) => e,
            Epsilon::MedianScaled(factor) => {
                let median = cost.median();
                // all-zero costs: any positive epsilon gives the zero plan cost
                if median > 0.0 {
                    factor * median
                } else {
                    factor
                }
            }
        }
    }
}

struct CostMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl CostMatrix {
    fn new(x: &PointSet, y: &PointSet, q: f64) -> Self {
        let mut data = Vec::with_capacity(x.len() * y.len());
        for a in x.points() {
            for b in y.points() {
                let sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                data.push(pow_q(sq.sqrt(), q));
            }
        }
        Self {
            data,
            rows: x.len(),
            cols: y.len(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn median(&self) -> f64 {
        let mut v = self.data.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn transport_cost(cost: &CostMatrix, epsilon: f64, cfg: &SinkhornConfig) -> Result<f64> {
    match cfg.mode {
        SinkhornMode::LogDomain => log_domain(cost, epsilon, cfg),
        SinkhornMode::ExpDomain => exp_domain(cost, epsilon, cfg),
    }
}

fn log_domain(cost: &CostMatrix, epsilon: f64, cfg: &SinkhornConfig) -> Result<f64> {
    let (m, n) = (cost.rows, cost.cols);
    let log_a = -(m as f64).ln();
    let log_b = -(n as f64).ln();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        residual = 0.0;
        for i in 0..m {
            let next =
                -epsilon * log_sum_exp((0..n).map(|j| log_b + (g[j] - cost.at(i, j)) / epsilon));
            residual = residual.max((next - f[i]).abs());
            f[i] = next;
        }
        for j in 0..n {
            let next =
                -epsilon * log_sum_exp((0..m).map(|i| log_a + (f[i] - cost.at(i, j)) / epsilon));
            residual = residual.max((next - g[j]).abs());
            g[j] = next;
        }
        if !residual.is_finite() {
            break;
        }
        if residual < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DistanceError::NotConverged {
            iterations: cfg.max_iterations,
            residual,
        });
    }

    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let c = cost.at(i, j);
            let plan = (log_a + log_b + (f[i] + g[j] - c) / epsilon).exp();
            total += plan * c;
        }
    }
    Ok(total)
}

/// Self-transport `W_ε(x, x)`: one shared potential, averaged updates.
fn log_domain_symmetric(cost: &CostMatrix, epsilon: f64, cfg: &SinkhornConfig) -> Result<f64> {
    let m = cost.rows;
    let log_a = -(m as f64).ln();
    let mut f = vec![0.0; m];
    let mut next = vec![0.0; m];
    let mut residual = f64::INFINITY;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        residual = 0.0;
        for (i, out) in next.iter_mut().enumerate() {
            let t =
                -epsilon * log_sum_exp((0..m).map(|j| log_a + (f[j] - cost.at(i, j)) / epsilon));
            *out = 0.5 * (f[i] + t);
            residual = residual.max((t - f[i]).abs());
        }
        std::mem::swap(&mut f, &mut next);
        if !residual.is_finite() {
            break;
        }
        if residual < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DistanceError::NotConverged {
            iterations: cfg.max_iterations,
            residual,
        });
    }

    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let c = cost.at(i, j);
            total += (2.0 * log_a + (f[i] + f[j] - c) / epsilon).exp() * c;
        }
    }
    Ok(total)
}

fn self_transport_cost(cost: &CostMatrix, epsilon: f64, cfg: &SinkhornConfig) -> Result<f64> {
    match cfg.mode {
        SinkhornMode::LogDomain => log_domain_symmetric(cost, epsilon, cfg),
        SinkhornMode::ExpDomain => exp_domain(cost, epsilon, cfg),
    }
}

fn exp_domain(cost: &CostMatrix, epsilon: f64, cfg: &SinkhornConfig) -> Result<f64> {
    let (m, n) = (cost.rows, cost.cols);
    let overflow = || DistanceError::ExpDomainOverflow { epsilon };
    let gibbs: Vec<f64> = cost.data.iter().map(|c| (-c / epsilon).exp()).collect();
    let (a, b) = (1.0 / m as f64, 1.0 / n as f64);
    let mut u = vec![1.0f64; m];
    let mut v = vec![1.0f64; n];
    let mut residual = f64::INFINITY;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        residual = 0.0;
        for i in 0..m {
            let kv: f64 = (0..n).map(|j| gibbs[i * n + j] * v[j]).sum();
            let next = a / kv;
            if !next.is_finite() || next == 0.0 {
                return Err(overflow());
            }
            // potentials are ε·log(u), compare on that scale
            residual = residual.max((epsilon * (next.ln() - u[i].ln())).abs());
            u[i] = next;
        }
        for j in 0..n {
            let ktu: f64 = (0..m).map(|i| gibbs[i * n + j] * u[i]).sum();
            let next = b / ktu;
            if !next.is_finite() || next == 0.0 {
                return Err(overflow());
            }
            residual = residual.max((epsilon * (next.ln() - v[j].ln())).abs());
            v[j] = next;
        }
        if residual < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DistanceError::NotConverged {
            iterations: cfg.max_iterations,
            residual,
        });
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            total += u[i] * gibbs[i * n + j] * v[j] * cost.at(i, j);
        }
    }
    if !total.is_finite() {
        return Err(overflow());
    }
    Ok(total)
}

/// Transport cost `⟨π_ε, C⟩` of the entropic plan between uniform measures on `x` and `y`.
///
/// The entropy term is not included in the returned value.
pub fn regularized_ot(x: &PointSet, y: &PointSet, cfg: &SinkhornConfig) -> Result<f64> {
    check_dims(x, y)?;
    cfg.validate()?;
    let cost = CostMatrix::new(x, y, cfg.cost_exponent);
    let epsilon = cfg.resolve_epsilon(&cost);
    cross_cost(x, y, &cost, epsilon, cfg)
}

// identical inputs: alternating updates crawl when the plan is near a permutation
fn cross_cost(
    x: &PointSet,
    y: &PointSet,
    cost: &CostMatrix,
    epsilon: f64,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    if x.as_flat() == y.as_flat() {
        self_transport_cost(cost, epsilon, cfg)
    } else {
        transport_cost(cost, epsilon, cfg)
    }
}

/// Debiased divergence `2 W_ε(x, y) - W_ε(x, x) - W_ε(y, y)`.
///
/// A median-scaled ε is resolved once from the cross cost matrix and shared by all three terms.
pub fn sinkhorn_divergence(x: &PointSet, y: &PointSet, cfg: &SinkhornConfig) -> Result<f64> {
    check_dims(x, y)?;
    cfg.validate()?;
    let q = cfg.cost_exponent;
    let cross = CostMatrix::new(x, y, q);
    let epsilon = cfg.resolve_epsilon(&cross);
    let wxy = cross_cost(x, y, &cross, epsilon, cfg)?;
    let wxx = self_transport_cost(&CostMatrix::new(x, x, q), epsilon, cfg)?;
    let wyy = self_transport_cost(&CostMatrix::new(y, y, q), epsilon, cfg)?;
    Ok(2.0 * wxy - wxx - wyy)
}
