//! Stochastic gradients for quantile estimation, VaR/CVaR and portfolio CVaR
//! minimization.
//!
//! Every oracle splits its gradient as `H = F + G` with `F` Lipschitz in θ and
//! `G` a bounded, discontinuous indicator term. Indicator conventions are
//! fixed: the quantile oracle uses `x < θ`, the VaR/CVaR and portfolio
//! oracles use `f(x) ≥ θ`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{ensure, Error, Result};
use crate::rng::ChainRng;
use crate::sgld::{AssumptionConstants, DataStream, GradientOracle, ParameterPoint, StreamFactory};

/// Regularization weight used for quantile estimation unless overridden.
pub const DEFAULT_QUANTILE_GAMMA: f64 = 1e-6;
/// Regularization weight used for VaR/CVaR and portfolio runs unless overridden.
pub const DEFAULT_RISK_GAMMA: f64 = 1e-8;

fn check_level(name: &str, level: f64) -> Result<()> {
    ensure!(level > 0.0 && level < 1.0, "{name} must lie in (0, 1), got {level}");
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    ensure!(gamma > 0.0 && gamma.is_finite(), "gamma must be positive, got {gamma}");
    Ok(())
}

/// Root of a nondecreasing function by bisection, bracket grown outward from
/// `start`.
fn increasing_root(h: impl Fn(f64) -> f64, start: f64) -> f64 {
    let (mut lo, mut hi) = (start - 1.0, start + 1.0);
    let mut step = 1.0;
    while h(lo) > 0.0 {
        step *= 2.0;
        lo -= step;
    }
    step = 1.0;
    while h(hi) < 0.0 {
        step *= 2.0;
        hi += step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Pinball-loss quantile estimation, `min_θ E[l_q(X − θ)] + γθ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileObjective {
    pub q: f64,
    pub gamma: f64,
}

/// `H(θ, x) = −q + 1{x < θ} + 2γθ`.
#[inline]
pub fn quantile_grad(theta: f64, x: f64, obj: &QuantileObjective) -> f64 {
    let indicator = if x < theta { 1.0 } else { 0.0 };
    -obj.q + indicator + 2.0 * obj.gamma * theta
}

impl QuantileObjective {
    pub fn new(q: f64, gamma: f64) -> Result<Self> {
        check_level("q", q)?;
        check_gamma(gamma)?;
        Ok(QuantileObjective { q, gamma })
    }

    /// Plug-in estimate of `E[l_q(X − θ)] + γθ²`.
    pub fn value_mc(&self, theta: f64, samples: &[f64]) -> Result<f64> {
        ensure!(!samples.is_empty(), "objective estimate needs at least one sample");
        let loss: f64 = samples
            .iter()
            .map(|&x| {
                let z = x - theta;
                if z >= 0.0 {
                    self.q * z
                } else {
                    (self.q - 1.0) * z
                }
            })
            .sum();
        Ok(loss / samples.len() as f64 + self.gamma * theta * theta)
    }

    /// Exact minimizer for data with marginal `law`.
    pub fn minimizer(&self, law: &DistributionSpec) -> f64 {
        increasing_root(|t| law.cdf(t) - self.q + 2.0 * self.gamma * t, law.mean())
    }

    /// `U''(θ) = f(θ) + 2γ`.
    pub fn curvature(&self, law: &DistributionSpec, theta: f64) -> f64 {
        law.pdf(theta) + 2.0 * self.gamma
    }

    /// Constants of the structural assumptions for data whose marginal
    /// density is bounded by `density_bound`.
    pub fn assumption_constants(&self, e_k_rho: f64, density_bound: f64) -> AssumptionConstants {
        AssumptionConstants {
            rho: 0.0,
            l1: 2.0 * self.gamma,
            l2: 0.0,
            k1_bound: 1.0,
            l_clc: 2.0 * self.gamma + density_bound,
            a_dissip: self.gamma,
            b_dissip: self.q * self.q / (4.0 * self.gamma),
            e_k_rho,
        }
    }
}

impl GradientOracle for QuantileObjective {
    fn dim(&self) -> usize {
        1
    }

    fn data_dim(&self) -> usize {
        1
    }

    #[inline]
    fn gradient(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = quantile_grad(theta[0], x[0], self);
    }

    fn split(&self, theta: &[f64], x: &[f64], lipschitz: &mut [f64], bounded: &mut [f64]) {
        lipschitz[0] = -self.q + 2.0 * self.gamma * theta[0];
        bounded[0] = if x[0] < theta[0] { 1.0 } else { 0.0 };
    }

    fn bounded_part_bound(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
}

/// Scalar payoff `f` applied to the data before the risk measure.
#[derive(Clone, Default)]
pub enum Payoff {
    #[default]
    Identity,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Payoff {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Payoff::Identity => x,
            Payoff::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Identity => f.write_str("Identity"),
            Payoff::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// `V(θ) = E[θ + (f(X) − θ)_+ / (1 − q̄)] + γθ²`; its minimizer is the VaR and
/// its minimum the CVaR of `f(X)`.
#[derive(Debug, Clone)]
pub struct VarCvarObjective {
    pub q_bar: f64,
    pub gamma: f64,
    pub payoff: Payoff,
}

/// `H(θ, x) = 1 − 1{f(x) ≥ θ}/(1 − q̄) + 2γθ`.
#[inline]
pub fn var_cvar_grad(theta: f64, x: f64, obj: &VarCvarObjective) -> f64 {
    let tail = if obj.payoff.apply(x) >= theta { 1.0 } else { 0.0 };
    1.0 - tail / (1.0 - obj.q_bar) + 2.0 * obj.gamma * theta
}

impl VarCvarObjective {
    pub fn new(q_bar: f64, gamma: f64) -> Result<Self> {
        check_level("q_bar", q_bar)?;
        check_gamma(gamma)?;
        Ok(VarCvarObjective {
            q_bar,
            gamma,
            payoff: Payoff::Identity,
        })
    }

    pub fn with_payoff(mut self, payoff: Payoff) -> Self {
        self.payoff = payoff;
        self
    }

    /// Plug-in estimate `θ + mean((f(x) − θ)_+)/(1 − q̄) + γθ²`.
    pub fn value_mc(&self, theta: f64, samples: &[f64]) -> Result<f64> {
        ensure!(!samples.is_empty(), "objective estimate needs at least one sample");
        let excess: f64 = samples.iter().map(|&x| (self.payoff.apply(x) - theta).max(0.0)).sum();
        Ok(theta + excess / (samples.len() as f64 * (1.0 - self.q_bar)) + self.gamma * theta * theta)
    }

    /// Exact minimizer for identity payoff and data law `law`.
    pub fn minimizer(&self, law: &DistributionSpec) -> f64 {
        let tail = 1.0 - self.q_bar;
        increasing_root(|t| 1.0 - (1.0 - law.cdf(t)) / tail + 2.0 * self.gamma * t, law.mean())
    }

    /// `V''(θ) = f(θ)/(1 − q̄) + 2γ` for identity payoff.
    pub fn curvature(&self, law: &DistributionSpec, theta: f64) -> f64 {
        law.pdf(theta) / (1.0 - self.q_bar) + 2.0 * self.gamma
    }

    pub fn assumption_constants(&self, e_k_rho: f64, density_bound: f64) -> AssumptionConstants {
        let tail = 1.0 - self.q_bar;
        AssumptionConstants {
            rho: 0.0,
            l1: 2.0 * self.gamma,
            l2: 0.0,
            k1_bound: 1.0 / tail,
            l_clc: 2.0 * self.gamma + density_bound / tail,
            a_dissip: self.gamma,
            b_dissip: self.q_bar * self.q_bar / (4.0 * self.gamma * tail * tail),
            e_k_rho,
        }
    }
}

impl GradientOracle for VarCvarObjective {
    fn dim(&self) -> usize {
        1
    }

    fn data_dim(&self) -> usize {
        1
    }

    #[inline]
    fn gradient(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = var_cvar_grad(theta[0], x[0], self);
    }

    fn split(&self, theta: &[f64], x: &[f64], lipschitz: &mut [f64], bounded: &mut [f64]) {
        let tail = 1.0 - self.q_bar;
        lipschitz[0] = -self.q_bar / tail + 2.0 * self.gamma * theta[0];
        bounded[0] = if self.payoff.apply(x[0]) < theta[0] {
            1.0 / tail
        } else {
            0.0
        };
    }

    fn bounded_part_bound(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 / (1.0 - self.q_bar);
    }
}

/// Softmax weights `g_i(w) = e^{w_i} / Σ_j e^{w_j}`.
pub fn softmax_weights(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Jacobian of the softmax map; entry `[i][j]` is `∂g_i/∂w_j`.
pub fn softmax_jacobian(w: &[f64]) -> Vec<Vec<f64>> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let total2 = total * total;
    (0..w.len())
        .map(|i| {
            (0..w.len())
                .map(|j| {
                    if i == j {
                        let others: f64 = exps.iter().enumerate().filter(|&(l, _)| l != j).map(|(_, e)| e).sum();
                        exps[j] * others / total2
                    } else {
                        -exps[i] * exps[j] / total2
                    }
                })
                .collect()
        })
        .collect()
}

/// Portfolio state `θ̂ = (θ, w_1, …, w_n)`: a VaR threshold and unconstrained
/// logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioParameter {
    pub theta: f64,
    pub w: Vec<f64>,
}

impl PortfolioParameter {
    pub fn new(theta: f64, w: Vec<f64>) -> Result<Self> {
        ensure!(w.len() >= 2, "a portfolio needs at least two assets, got {}", w.len());
        ensure!(
            theta.is_finite() && w.iter().all(|v| v.is_finite()),
            "portfolio parameter must be finite"
        );
        Ok(PortfolioParameter { theta, w })
    }

    pub fn from_point(point: &ParameterPoint) -> Result<Self> {
        let c = point.coords();
        ensure!(c.len() >= 3, "portfolio point needs θ and at least two logits");
        Self::new(c[0], c[1..].to_vec())
    }

    pub fn to_point(&self) -> ParameterPoint {
        let mut coords = Vec::with_capacity(self.w.len() + 1);
        coords.push(self.theta);
        coords.extend_from_slice(&self.w);
        ParameterPoint::new(coords)
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax_weights(&self.w)
    }

    fn norm_sq(&self) -> f64 {
        self.theta * self.theta + self.w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `V(θ̂) = E[θ + (Σ g_i(w) X_i − θ)_+ / (1 − q̄)] + γ|θ̂|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioObjective {
    pub q_bar: f64,
    pub gamma: f64,
    pub n_assets: usize,
}

impl PortfolioObjective {
    pub fn new(q_bar: f64, gamma: f64, n_assets: usize) -> Result<Self> {
        check_level("q_bar", q_bar)?;
        check_gamma(gamma)?;
        ensure!(n_assets >= 2, "a portfolio needs at least two assets, got {n_assets}");
        Ok(PortfolioObjective { q_bar, gamma, n_assets })
    }

    /// Gradient into `out` (length n+1) at `theta_hat = (θ, w)`.
    ///
    /// Uses `Σ_i (∂g_i/∂w_j) x_i = g_j (x_j − Σ_i g_i x_i)`, which avoids
    /// materializing the Jacobian.
    #[inline]
    fn write_gradient(&self, theta_hat: &[f64], x: &[f64], out: &mut [f64]) {
        let theta = theta_hat[0];
        let w = &theta_hat[1..];
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut weighted = 0.0;
        for (&wi, &xi) in w.iter().zip(x) {
            let e = (wi - max).exp();
            total += e;
            weighted += e * xi;
        }
        let value = weighted / total;
        let tail = 1.0 - self.q_bar;
        let in_tail = value >= theta;
        let indicator = if in_tail { 1.0 } else { 0.0 };
        out[0] = 1.0 - indicator / tail + 2.0 * self.gamma * theta;
        for (j, (&wj, &xj)) in w.iter().zip(x).enumerate() {
            let directional = if in_tail {
                let gj = (wj - max).exp() / total;
                let g_hat = gj * (xj - value);
                debug_assert!(g_hat.abs() <= x.iter().map(|v| v.abs()).sum::<f64>() * (1.0 + 1e-12));
                g_hat / tail
            } else {
                0.0
            };
            out[j + 1] = directional + 2.0 * self.gamma * wj;
        }
    }

    /// Plug-in estimate of `V(θ̂)` over the rows of `samples`.
    pub fn value_mc(&self, param: &PortfolioParameter, samples: &crate::distributions::DataMatrix) -> Result<f64> {
        ensure!(!samples.is_empty(), "objective estimate needs at least one sample");
        ensure!(
            samples.cols() == self.n_assets && param.w.len() == self.n_assets,
            "expected {} assets, got {} columns and {} logits",
            self.n_assets,
            samples.cols(),
            param.w.len()
        );
        let g = param.weights();
        let excess: f64 = samples
            .iter_rows()
            .map(|row| (row.iter().zip(&g).map(|(x, gi)| x * gi).sum::<f64>() - param.theta).max(0.0))
            .sum();
        Ok(param.theta + excess / (samples.rows() as f64 * (1.0 - self.q_bar)) + self.gamma * param.norm_sq())
    }

    pub fn assumption_constants(&self, e_k_rho: f64, k1_bound: f64, l_clc: f64) -> AssumptionConstants {
        AssumptionConstants {
            rho: 0.0,
            l1: 2.0 * self.gamma,
            l2: 0.0,
            k1_bound,
            l_clc,
            a_dissip: 2.0 * self.gamma,
            b_dissip: 0.0,
            e_k_rho,
        }
    }
}

/// `H_θ̂ = (H_θ, H_{w_1}, …, H_{w_n})` for one data vector.
pub fn portfolio_grad(param: &PortfolioParameter, x: &[f64], obj: &PortfolioObjective) -> Result<Vec<f64>> {
    ensure!(
        x.len() == obj.n_assets && param.w.len() == obj.n_assets,
        "expected {} assets, got data of length {} and {} logits",
        obj.n_assets,
        x.len(),
        param.w.len()
    );
    let point = param.to_point();
    let mut out = vec![0.0; obj.n_assets + 1];
    obj.write_gradient(point.coords(), x, &mut out);
    Ok(out)
}

impl GradientOracle for PortfolioObjective {
    fn dim(&self) -> usize {
        self.n_assets + 1
    }

    fn data_dim(&self) -> usize {
        self.n_assets
    }

    #[inline]
    fn gradient(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        self.write_gradient(theta, x, out);
    }

    fn split(&self, theta: &[f64], x: &[f64], lipschitz: &mut [f64], bounded: &mut [f64]) {
        self.write_gradient(theta, x, bounded);
        for (j, (f, g)) in lipschitz.iter_mut().zip(bounded.iter_mut()).enumerate() {
            *f = 2.0 * self.gamma * theta[j];
            *g -= *f;
        }
    }

    fn bounded_part_bound(&self, x: &[f64], out: &mut [f64]) {
        let tail = 1.0 - self.q_bar;
        out[0] = (2.0 - self.q_bar) / tail;
        let abs_sum: f64 = x.iter().map(|v| v.abs()).sum();
        for o in &mut out[1..] {
            *o = abs_sum / tail;
        }
    }
}

/// `U(θ) = c|θ|²/2` with the deterministic gradient `H(θ) = cθ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticOracle {
    pub curvature: f64,
    pub dim: usize,
}

impl QuadraticOracle {
    pub fn new(curvature: f64, dim: usize) -> Self {
        QuadraticOracle { curvature, dim }
    }
}

impl GradientOracle for QuadraticOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn data_dim(&self) -> usize {
        0
    }

    #[inline]
    fn gradient(&self, theta: &[f64], _x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(theta) {
            *o = self.curvature * t;
        }
    }

    fn split(&self, theta: &[f64], x: &[f64], lipschitz: &mut [f64], bounded: &mut [f64]) {
        self.gradient(theta, x, lipschitz);
        bounded.fill(0.0);
    }

    fn bounded_part_bound(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Empty data stream for deterministic oracles.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoData;

impl DataStream for NoData {
    fn data_dim(&self) -> usize {
        0
    }

    fn next_into(&mut self, _out: &mut [f64]) {}
}

impl StreamFactory for NoData {
    type Stream = NoData;

    fn data_dim(&self) -> usize {
        0
    }

    fn stream(&self, _rng: ChainRng) -> NoData {
        NoData
    }
}

/// Attaches assumption constants to an oracle so that runs can compare their
/// step size with the theoretical bound.
#[derive(Debug, Clone)]
pub struct Calibrated<O> {
    pub oracle: O,
    pub constants: AssumptionConstants,
}

impl<O: GradientOracle> GradientOracle for Calibrated<O> {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn data_dim(&self) -> usize {
        self.oracle.data_dim()
    }

    #[inline]
    fn gradient(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        self.oracle.gradient(theta, x, out);
    }

    fn split(&self, theta: &[f64], x: &[f64], lipschitz: &mut [f64], bounded: &mut [f64]) {
        self.oracle.split(theta, x, lipschitz, bounded);
    }

    fn bounded_part_bound(&self, x: &[f64], out: &mut [f64]) {
        self.oracle.bounded_part_bound(x, out);
    }

    fn assumption_constants(&self) -> Option<AssumptionConstants> {
        Some(self.constants)
    }
}

/// Objectives addressable by name from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Quantile,
    VarCvar,
    Portfolio,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Quantile => "quantile",
            ObjectiveKind::VarCvar => "var-cvar",
            ObjectiveKind::Portfolio => "portfolio",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(ObjectiveKind::Quantile),
            "var-cvar" | "var_cvar" => Ok(ObjectiveKind::VarCvar),
            "portfolio" => Ok(ObjectiveKind::Portfolio),
            other => Err(Error::Parse(format!("unknown objective {other:?}"))),
        }
    }
}
