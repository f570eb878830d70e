//! The SGLD iteration engine.
//!
//! One step of the scheme is
//!
//! ```text
//! θ' = θ − λ·H(θ, x) + sqrt(2λ/β)·ξ,    ξ ~ N(0, I_d)
//! ```
//!
//! where `H` is a (possibly discontinuous) stochastic gradient and `x` a fresh
//! data sample. [`run_chain`] iterates the step, [`sample_pi_beta`] runs many
//! independent chains and keeps their terminal points, which approximate the
//! Gibbs measure `π_β ∝ exp(−βU)` for small `λ`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{chain_seed, data_rng, noise_rng, ChainRng};

/// Inverse temperature that callers pass when they want (practically) noiseless
/// gradient descent. `β = ∞` itself is rejected.
pub const PURE_SGD_BETA: f64 = 1e30;

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint(Vec<f64>);

impl ParameterPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        ParameterPoint(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        ParameterPoint(vec![0.0; dim])
    }

    pub fn scalar(value: f64) -> Self {
        ParameterPoint(vec![value])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParameterPoint {
    fn from(coords: Vec<f64>) -> Self {
        ParameterPoint(coords)
    }
}

impl std::ops::Index<usize> for ParameterPoint {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Settings of a single chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    /// Step size λ.
    pub lambda: f64,
    /// Inverse temperature β.
    pub beta: f64,
    /// Number of SGLD steps n.
    pub iterations: u64,
    /// Leading iterates excluded from the recorded trace.
    pub burn_in: u64,
    pub theta0: ParameterPoint,
    pub seed: u64,
}

impl SgldConfig {
    pub fn new(lambda: f64, beta: f64, iterations: u64, theta0: ParameterPoint) -> Result<Self> {
        let config = SgldConfig {
            lambda,
            beta,
            iterations,
            burn_in: 0,
            theta0,
            seed: 0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Result<Self> {
        self.burn_in = burn_in;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn with_iterations(mut self, iterations: u64) -> Result<Self> {
        self.iterations = iterations;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda > 0.0 && self.lambda.is_finite(),
            "step size must be positive and finite, got {}",
            self.lambda
        );
        ensure!(
            self.beta > 0.0 && self.beta.is_finite(),
            "inverse temperature must be positive and finite, got {} (use {PURE_SGD_BETA:e} for noiseless runs)",
            self.beta
        );
        ensure!(self.iterations >= 1, "iterations must be positive");
        ensure!(
            self.burn_in < self.iterations,
            "burn-in ({}) must be smaller than iterations ({})",
            self.burn_in,
            self.iterations
        );
        ensure!(
            self.theta0.dim() >= 1,
            "initial point must have at least one coordinate"
        );
        ensure!(self.theta0.is_finite(), "initial point must be finite");
        Ok(())
    }

    /// `sqrt(2λ/β)`, the standard deviation of the injected noise per coordinate.
    pub fn noise_scale(&self) -> f64 {
        noise_scale(self.lambda, self.beta)
    }
}

#[inline]
fn noise_scale(lambda: f64, beta: f64) -> f64 {
    (2.0 * lambda / beta).sqrt()
}

#[inline(always)]
fn update(theta: f64, lambda: f64, grad: f64, scale: f64, noise: f64) -> f64 {
    theta - lambda * grad + scale * noise
}

/// Constants of the structural assumptions an oracle satisfies.
///
/// `rho`, `l1`, `l2` bound the Lipschitz part `F`; `k1_bound` bounds the
/// discontinuous part `G` (an expectation surrogate when the bound depends on
/// the data); `l_clc` is the Lipschitz constant in expectation;
/// `a_dissip`/`b_dissip` are the dissipativity constants; `e_k_rho` is
/// `E[(1 + 2|X|)^(4ρ+4)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub rho: f64,
    pub l1: f64,
    pub l2: f64,
    pub k1_bound: f64,
    pub l_clc: f64,
    pub a_dissip: f64,
    pub b_dissip: f64,
    pub e_k_rho: f64,
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho", self.rho),
            ("l1", self.l1),
            ("l2", self.l2),
            ("k1_bound", self.k1_bound),
            ("b_dissip", self.b_dissip),
        ] {
            ensure!(
                v >= 0.0 && v.is_finite(),
                "{name} must be nonnegative and finite, got {v}"
            );
        }
        ensure!(self.a_dissip > 0.0, "a_dissip must be positive, got {}", self.a_dissip);
        ensure!(self.l_clc > 0.0, "l_clc must be positive, got {}", self.l_clc);
        ensure!(self.e_k_rho >= 1.0, "e_k_rho must be at least 1, got {}", self.e_k_rho);
        Ok(())
    }
}

/// Monte Carlo estimate of `E[(1 + 2|X|)^(4ρ+4)]` from data vectors.
pub fn estimate_e_k_rho<'a>(samples: impl IntoIterator<Item = &'a [f64]>, rho: f64) -> Result<f64> {
    let power = 4.0 * rho + 4.0;
    let (mut sum, mut count) = (0.0, 0usize);
    for x in samples {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        sum += (1.0 + 2.0 * norm).powf(power);
        count += 1;
    }
    ensure!(count > 0, "cannot estimate E[K_rho] from an empty sample");
    Ok(sum / count as f64)
}

/// A stochastic gradient `H(θ, x) = F(θ, x) + G(θ, x)` with `F` Lipschitz
/// and `G` bounded.
pub trait GradientOracle: Send + Sync {
    /// Parameter dimension d.
    fn dim(&self) -> usize;

    /// Dimension of one data sample.
    fn data_dim(&self) -> usize;

    /// Writes `H(θ, x)` into `out`. Called once per SGLD step.
    fn gradient(&self, theta: &[f64], x: &[f64], out: &mut [f64]);

    /// Writes the two parts of the decomposition: `F(θ, x)` into `lipschitz`
    /// and `G(θ, x)` into `bounded`.
    fn split(&self, theta: &[f64], x: &[f64], lipschitz: &mut [f64], bounded: &mut [f64]);

    /// Per-coordinate bound `K_1(x)` on `|G(θ, x)|`, valid for every θ.
    fn bounded_part_bound(&self, x: &[f64], out: &mut [f64]);

    /// Assumption constants, when the oracle has been calibrated against a
    /// data law.
    fn assumption_constants(&self) -> Option<AssumptionConstants> {
        None
    }
}

/// A source of data samples consumed one per SGLD step.
pub trait DataStream {
    fn data_dim(&self) -> usize;
    fn next_into(&mut self, out: &mut [f64]);
}

/// Builds one independent data stream per chain.
pub trait StreamFactory: Sync {
    type Stream: DataStream;

    fn data_dim(&self) -> usize;
    fn stream(&self, rng: ChainRng) -> Self::Stream;
}

/// One SGLD step: `θ − λ·grad + sqrt(2λ/β)·noise`.
pub fn sgld_step(
    theta: &ParameterPoint,
    lambda: f64,
    beta: f64,
    grad: &ParameterPoint,
    noise: &ParameterPoint,
) -> Result<ParameterPoint> {
    ensure!(
        grad.dim() == theta.dim() && noise.dim() == theta.dim(),
        "dimension mismatch: theta {}, grad {}, noise {}",
        theta.dim(),
        grad.dim(),
        noise.dim()
    );
    ensure!(
        theta.is_finite() && grad.is_finite() && noise.is_finite(),
        "sgld_step inputs must be finite"
    );
    ensure!(
        lambda.is_finite() && lambda > 0.0 && beta.is_finite() && beta > 0.0,
        "lambda and beta must be positive and finite"
    );
    let scale = noise_scale(lambda, beta);
    Ok(theta
        .coords()
        .iter()
        .zip(grad.coords())
        .zip(noise.coords())
        .map(|((&t, &g), &xi)| update(t, lambda, g, scale, xi))
        .collect::<Vec<_>>()
        .into())
}

/// Recorded iterates of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    /// Every `stride`-th post-burn-in iterate, ending at the final iterate.
    pub iterates: Vec<ParameterPoint>,
    /// Step index (1-based) of each recorded iterate.
    pub steps: Vec<u64>,
    pub terminal: ParameterPoint,
    pub stride: u64,
    pub config: SgldConfig,
}

impl ChainTrace {
    /// Values of one coordinate along the recorded trace.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.iterates.iter().map(|p| p[i]).collect()
    }
}

/// The stride that records only the terminal iterate.
pub fn terminal_only_stride(config: &SgldConfig) -> u64 {
    config.iterations - config.burn_in
}

/// Step-size bounds, as a pair: the compact bound and the sharper one it is
/// derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeBounds {
    pub lambda_max: f64,
    pub lambda_max_sharp: f64,
}

/// Step-size restriction under dissipativity.
///
/// `lambda_max = min{ min(a, a^(1/3)) / (24 (1+L1)^2 E[K_ρ]), 1/(4a) }` and
/// the sharper
/// `min{ a/(24 L1² E), a^(1/2)/(8 (L1³ E)^(1/2)), a^(1/3)/(32 L1⁴ E)^(1/3), 1/(4a) }`.
/// Terms dividing by `L1 = 0` are infinite.
pub fn lambda_max_nonconvex(c: &AssumptionConstants) -> Result<StepSizeBounds> {
    let (a, l1, e) = (c.a_dissip, c.l1, c.e_k_rho);
    ensure!(a > 0.0 && a.is_finite(), "a_dissip must be positive, got {a}");
    ensure!(e > 0.0 && e.is_finite(), "e_k_rho must be positive, got {e}");
    ensure!(l1 >= 0.0 && l1.is_finite(), "l1 must be nonnegative, got {l1}");

    let dissipative = 1.0 / (4.0 * a);
    let lambda_max = (a.min(a.cbrt()) / (24.0 * (1.0 + l1).powi(2) * e)).min(dissipative);
    let lambda_max_sharp = if l1 == 0.0 {
        dissipative
    } else {
        let t1 = a / (24.0 * l1 * l1 * e);
        let t2 = a.sqrt() / (8.0 * (l1.powi(3) * e).sqrt());
        let t3 = a.cbrt() / (32.0 * l1.powi(4) * e).cbrt();
        t1.min(t2).min(t3).min(dissipative)
    };
    Ok(StepSizeBounds {
        lambda_max,
        lambda_max_sharp,
    })
}

/// Step-size restriction in the convex case:
/// `min{ 1/(2(â + L)), â/(4 L1² E[K_ρ]) }`.
pub fn lambda_max_convex(a_hat: f64, l_clc: f64, l1: f64, e_k_rho: f64) -> Result<f64> {
    ensure!(a_hat > 0.0 && a_hat.is_finite(), "a_hat must be positive, got {a_hat}");
    ensure!(l_clc > 0.0 && l_clc.is_finite(), "l_clc must be positive, got {l_clc}");
    ensure!(l1 >= 0.0 && l1.is_finite(), "l1 must be nonnegative, got {l1}");
    ensure!(
        e_k_rho > 0.0 && e_k_rho.is_finite(),
        "e_k_rho must be positive, got {e_k_rho}"
    );
    let contraction = 1.0 / (2.0 * (a_hat + l_clc));
    if l1 == 0.0 {
        return Ok(contraction);
    }
    Ok(contraction.min(a_hat / (4.0 * l1 * l1 * e_k_rho)))
}

fn warn_if_step_exceeds_bound<O: GradientOracle + ?Sized>(config: &SgldConfig, oracle: &O) {
    let Some(constants) = oracle.assumption_constants() else {
        return;
    };
    if let Ok(bounds) = lambda_max_nonconvex(&constants) {
        if config.lambda > bounds.lambda_max_sharp {
            log::warn!(
                "step size {:e} exceeds the theoretical bound {:e}",
                config.lambda,
                bounds.lambda_max_sharp
            );
        }
    }
}

fn check_shapes<O: GradientOracle + ?Sized>(
    config: &SgldConfig,
    oracle: &O,
    data_dim: usize,
    stride: u64,
) -> Result<()> {
    config.validate()?;
    ensure!(
        oracle.dim() == config.theta0.dim(),
        "oracle dimension {} does not match initial point dimension {}",
        oracle.dim(),
        config.theta0.dim()
    );
    ensure!(
        data_dim == oracle.data_dim(),
        "stream yields {}-dimensional samples, oracle expects {}",
        data_dim,
        oracle.data_dim()
    );
    ensure!(
        stride >= 1 && stride <= config.iterations - config.burn_in,
        "stride must lie in [1, iterations - burn_in], got {stride}"
    );
    Ok(())
}

fn run_chain_unchecked<O, S>(config: &SgldConfig, oracle: &O, stream: &mut S, stride: u64) -> Result<ChainTrace>
where
    O: GradientOracle + ?Sized,
    S: DataStream + ?Sized,
{
    let n = config.iterations;
    let kept = (n - config.burn_in) / stride;
    let first_recorded = n - (kept - 1) * stride;
    let lambda = config.lambda;
    let scale = config.noise_scale();

    let mut theta = config.theta0.coords().to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut x = vec![0.0; oracle.data_dim()];
    let mut rng = noise_rng(config.seed);
    let mut iterates = Vec::with_capacity(kept as usize);
    let mut steps = Vec::with_capacity(kept as usize);

    for k in 1..=n {
        stream.next_into(&mut x);
        oracle.gradient(&theta, &x, &mut grad);
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged { iteration: k });
        }
        let mut finite = true;
        for (t, &g) in theta.iter_mut().zip(&grad) {
            let xi: f64 = rng.sample(StandardNormal);
            *t = update(*t, lambda, g, scale, xi);
            finite &= t.is_finite();
        }
        if !finite {
            return Err(Error::Diverged { iteration: k });
        }
        if k >= first_recorded && (k - first_recorded).is_multiple_of(stride) {
            iterates.push(ParameterPoint(theta.clone()));
            steps.push(k);
        }
    }

    Ok(ChainTrace {
        terminal: ParameterPoint(theta),
        iterates,
        steps,
        stride,
        config: config.clone(),
    })
}

/// Runs `config.iterations` SGLD steps, one data sample and one Gaussian
/// vector per step, recording every `stride`-th post-burn-in iterate.
///
/// Noise comes from the noise stream of `config.seed`; the data stream
/// carries its own generator.
pub fn run_chain<O, S>(config: &SgldConfig, oracle: &O, stream: &mut S, stride: u64) -> Result<ChainTrace>
where
    O: GradientOracle + ?Sized,
    S: DataStream + ?Sized,
{
    check_shapes(config, oracle, stream.data_dim(), stride)?;
    warn_if_step_exceeds_bound(config, oracle);
    run_chain_unchecked(config, oracle, stream, stride)
}

/// Runs one chain with its data stream drawn from the data sub-stream of
/// `config.seed`.
pub fn run_seeded_chain<O, F>(config: &SgldConfig, oracle: &O, factory: &F, stride: u64) -> Result<ChainTrace>
where
    O: GradientOracle + ?Sized,
    F: StreamFactory + ?Sized,
{
    let mut stream = factory.stream(data_rng(config.seed));
    run_chain(config, oracle, &mut stream, stride)
}

/// Terminal points of independent chains, in chain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<ParameterPoint>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Values of coordinate `i` across all points.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[i]).collect()
    }
}

/// Runs `chains` independent chains and returns their terminal points.
///
/// Chain `c` uses `config` with seed `chain_seed(config.seed, c)`, both for
/// its noise and (via [`StreamFactory::stream`]) for its data. Chains run in
/// parallel; the result does not depend on scheduling.
pub fn sample_pi_beta<O, F>(config: &SgldConfig, oracle: &O, factory: &F, chains: usize) -> Result<SampleSet>
where
    O: GradientOracle + ?Sized,
    F: StreamFactory + ?Sized,
{
    ensure!(chains >= 1, "at least one chain is required");
    let stride = terminal_only_stride(config);
    check_shapes(config, oracle, factory.data_dim(), stride)?;
    warn_if_step_exceeds_bound(config, oracle);

    let results: Vec<Result<ParameterPoint>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let chain_config = config.clone().with_seed(chain_seed(config.seed, c as u64));
            let mut stream = factory.stream(data_rng(chain_config.seed));
            run_chain_unchecked(&chain_config, oracle, &mut stream, stride).map(|t| t.terminal)
        })
        .collect();

    if let Some(failed) = results.iter().position(|r| r.is_err()) {
        let mut partial = Vec::with_capacity(chains);
        let mut source = None;
        for (c, r) in results.into_iter().enumerate() {
            match r {
                Ok(p) => partial.push(Some(p)),
                Err(e) => {
                    if c == failed {
                        source = Some(e);
                    }
                    partial.push(None);
                }
            }
        }
        return Err(Error::ChainFailed {
            chain: failed,
            source: Box::new(source.expect("failed chain has an error")),
            partial,
        });
    }
    Ok(SampleSet {
        points: results.into_iter().map(|r| r.expect("checked above")).collect(),
    })
}
