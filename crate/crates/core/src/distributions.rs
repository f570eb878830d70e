//! Scalar laws and data streams, with reference VaR/CVaR.
//!
//! Specs parse from compact strings: `normal:mu,sigma`, `t:df`,
//! `logistic:location,scale`, `lognormal:mu_log,sigma_log` and `ar1:alpha`.
//! `normal` takes the standard deviation, so a law written `N(1, 4)` with
//! variance 4 is `normal:1,2`.

use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalLaw, StudentsT};
use statrs::function::beta::beta_reg;

use crate::error::{ensure, Error, Result};
use crate::quadrature;
use crate::rng::ChainRng;
use crate::sgld::{DataStream, StreamFactory};

/// Smallest Student-t degrees of freedom accepted.
pub const MIN_STUDENT_DF: f64 = 2.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Normal { mu: f64, sigma: f64 },
    StudentT { df: f64 },
    Logistic { location: f64, scale: f64 },
    LogNormal { mu_log: f64, sigma_log: f64 },
}

fn standard_normal() -> NormalLaw {
    NormalLaw::new(0.0, 1.0).expect("valid parameters")
}

/// Student-t CDF through the regularized incomplete beta function, using the
/// central form near zero and the tail form beyond `|x| = √ν`, each where it
/// does not cancel.
fn student_cdf(df: f64, x: f64) -> f64 {
    let x2 = x * x;
    if x2 < df {
        let half = 0.5 * beta_reg(0.5, 0.5 * df, x2 / (df + x2));
        if x < 0.0 {
            0.5 - half
        } else {
            0.5 + half
        }
    } else {
        let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x2));
        if x < 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }
}

fn student(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("validated df")
}

/// Inverse of the standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl DistributionSpec {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        let spec = DistributionSpec::Normal { mu, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn student_t(df: f64) -> Result<Self> {
        let spec = DistributionSpec::StudentT { df };
        spec.validate()?;
        Ok(spec)
    }

    pub fn logistic(location: f64, scale: f64) -> Result<Self> {
        let spec = DistributionSpec::Logistic { location, scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lognormal(mu_log: f64, sigma_log: f64) -> Result<Self> {
        let spec = DistributionSpec::LogNormal { mu_log, sigma_log };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Normal { mu, sigma } => {
                ensure!(mu.is_finite(), "normal mean must be finite");
                ensure!(
                    sigma > 0.0 && sigma.is_finite(),
                    "normal sigma must be positive, got {sigma}"
                );
            }
            DistributionSpec::StudentT { df } => {
                ensure!(
                    df >= MIN_STUDENT_DF && df.is_finite(),
                    "student-t degrees of freedom must be at least {MIN_STUDENT_DF}, got {df}"
                );
            }
            DistributionSpec::Logistic { location, scale } => {
                ensure!(location.is_finite(), "logistic location must be finite");
                ensure!(
                    scale > 0.0 && scale.is_finite(),
                    "logistic scale must be positive, got {scale}"
                );
            }
            DistributionSpec::LogNormal { mu_log, sigma_log } => {
                ensure!(mu_log.is_finite(), "lognormal mu must be finite");
                ensure!(
                    sigma_log > 0.0 && sigma_log.is_finite(),
                    "lognormal sigma must be positive, got {sigma_log}"
                );
            }
        }
        Ok(())
    }

    /// Human-readable notes about assumptions the law breaks.
    pub fn assumption_warnings(&self) -> Vec<String> {
        match *self {
            DistributionSpec::StudentT { df } if df <= 4.0 => vec![format!(
                "student-t with {df} degrees of freedom has no finite fourth moment; the convergence theory does not cover it"
            )],
            _ => Vec::new(),
        }
    }

    /// Builds a reusable sampler.
    pub fn sampler(&self) -> Sampler {
        match *self {
            DistributionSpec::Normal { mu, sigma } => Sampler::Normal(Normal::new(mu, sigma).expect("validated spec")),
            DistributionSpec::StudentT { df } => Sampler::StudentT(StudentT::new(df).expect("validated spec")),
            DistributionSpec::Logistic { location, scale } => Sampler::Logistic { location, scale },
            DistributionSpec::LogNormal { mu_log, sigma_log } => {
                Sampler::LogNormal(LogNormal::new(mu_log, sigma_log).expect("validated spec"))
            }
        }
    }

    /// One draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::Normal { mu, sigma } => normal_pdf((x - mu) / sigma) / sigma,
            DistributionSpec::StudentT { df } => student(df).pdf(x),
            DistributionSpec::Logistic { location, scale } => {
                let e = (-(x - location).abs() / scale).exp();
                e / (scale * (1.0 + e) * (1.0 + e))
            }
            DistributionSpec::LogNormal { mu_log, sigma_log } => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_pdf((x.ln() - mu_log) / sigma_log) / (sigma_log * x)
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::Normal { mu, sigma } => normal_cdf((x - mu) / sigma),
            DistributionSpec::StudentT { df } => student_cdf(df, x),
            DistributionSpec::Logistic { location, scale } => 1.0 / (1.0 + (-(x - location) / scale).exp()),
            DistributionSpec::LogNormal { mu_log, sigma_log } => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_cdf((x.ln() - mu_log) / sigma_log)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { mu, .. } => mu,
            DistributionSpec::StudentT { .. } => 0.0,
            DistributionSpec::Logistic { location, .. } => location,
            DistributionSpec::LogNormal { mu_log, sigma_log } => (mu_log + 0.5 * sigma_log * sigma_log).exp(),
        }
    }

    /// Supremum of the density.
    pub fn density_bound(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { sigma, .. } => 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt()),
            DistributionSpec::StudentT { df } => student(df).pdf(0.0),
            DistributionSpec::Logistic { scale, .. } => 1.0 / (4.0 * scale),
            DistributionSpec::LogNormal { mu_log, sigma_log } => self.pdf((mu_log - sigma_log * sigma_log).exp()),
        }
    }

    /// Symmetric about zero.
    pub fn is_symmetric_about_zero(&self) -> bool {
        match *self {
            DistributionSpec::Normal { mu, .. } => mu == 0.0,
            DistributionSpec::StudentT { .. } => true,
            DistributionSpec::Logistic { location, .. } => location == 0.0,
            DistributionSpec::LogNormal { .. } => false,
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::Normal { mu, sigma } => write!(f, "normal:{mu},{sigma}"),
            DistributionSpec::StudentT { df } => write!(f, "t:{df}"),
            DistributionSpec::Logistic { location, scale } => write!(f, "logistic:{location},{scale}"),
            DistributionSpec::LogNormal { mu_log, sigma_log } => write!(f, "lognormal:{mu_log},{sigma_log}"),
        }
    }
}

fn parse_params(kind: &str, body: &str, expected: usize) -> Result<Vec<f64>> {
    let values = body
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("invalid number {s:?} in {kind} spec")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Parse(format!(
            "{kind} takes {expected} parameter(s), got {}",
            values.len()
        )));
    }
    Ok(values)
}

fn split_spec(s: &str) -> Result<(String, &str)> {
    let (kind, body) = s
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("expected <kind>:<params>, got {s:?}")))?;
    Ok((kind.trim().to_ascii_lowercase(), body))
}

impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = split_spec(s)?;
        let spec = match kind.as_str() {
            "normal" | "n" => {
                let p = parse_params("normal", body, 2)?;
                DistributionSpec::Normal { mu: p[0], sigma: p[1] }
            }
            "t" | "student_t" | "student-t" => {
                let p = parse_params("t", body, 1)?;
                DistributionSpec::StudentT { df: p[0] }
            }
            "logistic" => {
                let p = parse_params("logistic", body, 2)?;
                DistributionSpec::Logistic {
                    location: p[0],
                    scale: p[1],
                }
            }
            "lognormal" => {
                let p = parse_params("lognormal", body, 2)?;
                DistributionSpec::LogNormal {
                    mu_log: p[0],
                    sigma_log: p[1],
                }
            }
            other => return Err(Error::Parse(format!("unknown distribution kind {other:?}"))),
        };
        spec.validate().map_err(|e| Error::Parse(format!("{s}: {e}")))?;
        Ok(spec)
    }
}

/// A prebuilt sampler for a [`DistributionSpec`].
#[derive(Debug, Clone, Copy)]
pub enum Sampler {
    Normal(Normal<f64>),
    StudentT(StudentT<f64>),
    Logistic { location: f64, scale: f64 },
    LogNormal(LogNormal<f64>),
}

impl Sampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::StudentT(d) => d.sample(rng),
            Sampler::Logistic { location, scale } => {
                let u: f64 = rng.sample(Open01);
                location + scale * (u / (1.0 - u)).ln()
            }
            Sampler::LogNormal(d) => d.sample(rng),
        }
    }
}

fn check_level(q_bar: f64) -> Result<()> {
    ensure!(q_bar > 0.0 && q_bar < 1.0, "level must lie in (0, 1), got {q_bar}");
    Ok(())
}

/// Bisection on a nondecreasing CDF until the bracket is narrower than 1e-10.
fn invert_cdf(cdf: impl Fn(f64) -> f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while cdf(lo) > p {
        lo *= 2.0;
    }
    while cdf(hi) < p {
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The `q_bar`-quantile (value-at-risk) of the law.
pub fn reference_var(spec: &DistributionSpec, q_bar: f64) -> Result<f64> {
    check_level(q_bar)?;
    spec.validate()?;
    Ok(match *spec {
        DistributionSpec::Normal { mu, sigma } => mu + sigma * normal_quantile(q_bar),
        DistributionSpec::Logistic { location, scale } => location + scale * (q_bar / (1.0 - q_bar)).ln(),
        DistributionSpec::LogNormal { mu_log, sigma_log } => (mu_log + sigma_log * normal_quantile(q_bar)).exp(),
        DistributionSpec::StudentT { df } => invert_cdf(|x| student_cdf(df, x), q_bar),
    })
}

/// `E[X | X ≥ VaR]`, by adaptive integration of `x f(x)` over the tail.
pub fn reference_cvar(spec: &DistributionSpec, q_bar: f64) -> Result<f64> {
    let var = reference_var(spec, q_bar)?;
    // Integrate (x - VaR) f(x) so that the tail mass near VaR does not cancel.
    let excess = quadrature::integrate_to_infinity(|x| (x - var) * spec.pdf(x), var, 1e-10)?;
    let tail = 1.0 - q_bar;
    Ok(var + excess / tail)
}

/// A first-order autoregression `X_{t+1} = α X_t + ξ_{t+1}` with standard
/// normal innovations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Spec {
    pub alpha: f64,
}

impl Ar1Spec {
    pub fn new(alpha: f64) -> Result<Self> {
        ensure!(
            alpha.abs() < 1.0,
            "AR(1) coefficient must satisfy |alpha| < 1, got {alpha}"
        );
        Ok(Ar1Spec { alpha })
    }

    pub fn stationary_variance(&self) -> f64 {
        1.0 / (1.0 - self.alpha * self.alpha)
    }

    /// The stationary law as a [`DistributionSpec`].
    pub fn stationary_law(&self) -> DistributionSpec {
        DistributionSpec::Normal {
            mu: 0.0,
            sigma: self.stationary_variance().sqrt(),
        }
    }
}

/// An AR(1) path started from a stationary draw.
#[derive(Debug, Clone)]
pub struct Ar1Stream {
    alpha: f64,
    state: f64,
    rng: ChainRng,
}

impl Ar1Stream {
    pub fn new(spec: Ar1Spec, mut rng: ChainRng) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        Ar1Stream {
            alpha: spec.alpha,
            state: z * spec.stationary_variance().sqrt(),
            rng,
        }
    }

    /// Advances the recursion and returns the new value.
    #[inline]
    pub fn next_value(&mut self) -> f64 {
        let xi: f64 = self.rng.sample(StandardNormal);
        self.state = self.alpha * self.state + xi;
        self.state
    }
}

/// Parses `ar1:alpha` stream specs alongside i.i.d. laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stream", rename_all = "snake_case")]
pub enum StreamSpec {
    Iid { law: DistributionSpec },
    Ar1 { ar1: Ar1Spec },
}

impl StreamSpec {
    /// The (stationary) marginal law of one sample.
    pub fn marginal(&self) -> DistributionSpec {
        match self {
            StreamSpec::Iid { law } => *law,
            StreamSpec::Ar1 { ar1 } => ar1.stationary_law(),
        }
    }
}

impl fmt::Display for StreamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamSpec::Iid { law } => law.fmt(f),
            StreamSpec::Ar1 { ar1 } => write!(f, "ar1:{}", ar1.alpha),
        }
    }
}

impl FromStr for StreamSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = split_spec(s)?;
        if kind == "ar1" {
            let p = parse_params("ar1", body, 1)?;
            let ar1 = Ar1Spec::new(p[0]).map_err(|e| Error::Parse(format!("{s}: {e}")))?;
            return Ok(StreamSpec::Ar1 { ar1 });
        }
        Ok(StreamSpec::Iid { law: s.parse()? })
    }
}

/// Scalar data stream: i.i.d. draws or an AR(1) path.
#[derive(Debug, Clone)]
pub enum ScalarStream {
    Iid { sampler: Sampler, rng: ChainRng },
    Ar1(Ar1Stream),
}

impl ScalarStream {
    #[inline]
    pub fn next_value(&mut self) -> f64 {
        match self {
            ScalarStream::Iid { sampler, rng } => sampler.sample(rng),
            ScalarStream::Ar1(s) => s.next_value(),
        }
    }
}

impl DataStream for ScalarStream {
    fn data_dim(&self) -> usize {
        1
    }

    #[inline]
    fn next_into(&mut self, out: &mut [f64]) {
        out[0] = self.next_value();
    }
}

/// Builds scalar streams from a [`StreamSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarStreamFactory {
    pub spec: StreamSpec,
}

impl ScalarStreamFactory {
    pub fn new(spec: StreamSpec) -> Self {
        ScalarStreamFactory { spec }
    }

    pub fn iid(law: DistributionSpec) -> Self {
        ScalarStreamFactory {
            spec: StreamSpec::Iid { law },
        }
    }
}

impl StreamFactory for ScalarStreamFactory {
    type Stream = ScalarStream;

    fn data_dim(&self) -> usize {
        1
    }

    fn stream(&self, rng: ChainRng) -> ScalarStream {
        match self.spec {
            StreamSpec::Iid { law } => ScalarStream::Iid {
                sampler: law.sampler(),
                rng,
            },
            StreamSpec::Ar1 { ar1 } => ScalarStream::Ar1(Ar1Stream::new(ar1, rng)),
        }
    }
}

/// Independent coordinates, each with its own law.
#[derive(Debug, Clone)]
pub struct IidVectorStream {
    samplers: Vec<Sampler>,
    rng: ChainRng,
}

impl DataStream for IidVectorStream {
    fn data_dim(&self) -> usize {
        self.samplers.len()
    }

    #[inline]
    fn next_into(&mut self, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.samplers) {
            *o = s.sample(&mut self.rng);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IidVectorFactory {
    pub laws: Vec<DistributionSpec>,
}

impl IidVectorFactory {
    pub fn new(laws: Vec<DistributionSpec>) -> Result<Self> {
        ensure!(!laws.is_empty(), "at least one law is required");
        for law in &laws {
            law.validate()?;
        }
        Ok(IidVectorFactory { laws })
    }
}

impl StreamFactory for IidVectorFactory {
    type Stream = IidVectorStream;

    fn data_dim(&self) -> usize {
        self.laws.len()
    }

    fn stream(&self, rng: ChainRng) -> IidVectorStream {
        IidVectorStream {
            samplers: self.laws.iter().map(DistributionSpec::sampler).collect(),
            rng,
        }
    }
}

/// Row-major matrix of data vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(cols: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(cols >= 1, "a data matrix needs at least one column");
        ensure!(
            values.len().is_multiple_of(cols),
            "value count is not a multiple of the column count"
        );
        Ok(DataMatrix { cols, values })
    }

    /// Draws `rows` independent vectors, coordinate `j` from `laws[j]`.
    pub fn sample<R: Rng + ?Sized>(laws: &[DistributionSpec], rows: usize, rng: &mut R) -> Self {
        let samplers: Vec<Sampler> = laws.iter().map(DistributionSpec::sampler).collect();
        let mut values = Vec::with_capacity(rows * laws.len());
        for _ in 0..rows {
            for s in &samplers {
                values.push(s.sample(rng));
            }
        }
        DataMatrix {
            cols: laws.len(),
            values,
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.cols)
    }
}
