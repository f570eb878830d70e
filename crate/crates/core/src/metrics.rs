//! One-dimensional Wasserstein distances and log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::distributions::normal_quantile;
use crate::error::{ensure, Error, Result};
use crate::sgld::{sample_pi_beta, GradientOracle, SgldConfig, StreamFactory};

/// Empirical `W_p` distance between two equal-size samples on the line,
/// `p ∈ {1, 2}`. Sorting both samples gives the optimal coupling.
pub fn wasserstein_p_1d(a: &[f64], b: &[f64], p: u32) -> Result<f64> {
    ensure!(
        !a.is_empty() && !b.is_empty(),
        "Wasserstein distance needs nonempty samples"
    );
    ensure!(
        a.len() == b.len(),
        "Wasserstein distance needs equal sample sizes, got {} and {}",
        a.len(),
        b.len()
    );
    ensure!(p == 1 || p == 2, "only p = 1 and p = 2 are supported, got {p}");
    ensure!(
        a.iter().chain(b).all(|x| x.is_finite()),
        "Wasserstein distance needs finite samples"
    );
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    Ok(sorted_distance(&a, &b, p))
}

fn sorted_distance(a: &[f64], b: &[f64], p: u32) -> f64 {
    let n = a.len() as f64;
    match p {
        1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n,
        _ => (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt(),
    }
}

/// `m` evenly spread order statistics of `sorted` (which must be sorted and
/// at least `m` long).
pub fn subsample_sorted(sorted: &[f64], m: usize) -> Vec<f64> {
    let n = sorted.len();
    (0..m).map(|i| sorted[((2 * i + 1) * n) / (2 * m)]).collect()
}

/// Distance of one step size from the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub lambda: f64,
    pub w_distance: f64,
    pub n_chains: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line through `(ln λ, ln W)`.
pub fn fit_loglog_slope(points: &[RatePoint]) -> Result<LogLogFit> {
    ensure!(
        points.len() >= 2,
        "slope fit needs at least two points, got {}",
        points.len()
    );
    if points.iter().all(|p| p.w_distance == 0.0) {
        return Err(Error::Degenerate("all distances are zero".into()));
    }
    for p in points {
        ensure!(
            p.lambda > 0.0 && p.lambda.is_finite(),
            "step sizes must be positive, got {}",
            p.lambda
        );
        ensure!(
            p.w_distance > 0.0 && p.w_distance.is_finite(),
            "distances must be positive, got {} at lambda = {}",
            p.w_distance,
            p.lambda
        );
    }
    for (i, p) in points.iter().enumerate() {
        ensure!(
            points[..i].iter().all(|q| q.lambda != p.lambda),
            "step sizes must be distinct, {} repeats",
            p.lambda
        );
    }
    let xs: Vec<f64> = points.iter().map(|p| p.lambda.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.w_distance.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// How many iterations each step size runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// The same iteration count for every step size.
    Iterations(u64),
    /// `ceil(T/λ)` iterations, i.e. the same continuous time `T`.
    Horizon(f64),
}

impl Schedule {
    pub fn iterations(&self, lambda: f64) -> u64 {
        match *self {
            Schedule::Iterations(n) => n,
            Schedule::Horizon(t) => (t / lambda).ceil().max(1.0) as u64,
        }
    }
}

/// Target the SGLD terminals are compared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// A fixed sample, subsampled evenly when larger than the chain count.
    Samples(Vec<f64>),
    /// Terminals of the same experiment run at a smaller step size.
    Sgld { lambda: f64, seed: u64 },
    /// A Gaussian law, represented by its quantiles at `(i − ½)/n`.
    Gaussian { mean: f64, sd: f64 },
}

/// A rate experiment: every step size runs `n_chains` chains from
/// `base.theta0` with master seed `base.seed`, so step sizes share random
/// numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub base: SgldConfig,
    pub lambdas: Vec<f64>,
    pub schedule: Schedule,
    pub n_chains: usize,
    /// Parameter coordinate whose law is compared.
    pub coordinate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    pub fit: LogLogFit,
}

impl RateExperiment {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambdas.len() >= 2,
            "a rate experiment needs at least two step sizes"
        );
        ensure!(self.n_chains >= 2, "a rate experiment needs at least two chains");
        ensure!(
            self.coordinate < self.base.theta0.dim(),
            "coordinate {} out of range for a {}-dimensional parameter",
            self.coordinate,
            self.base.theta0.dim()
        );
        if let Schedule::Horizon(t) = self.schedule {
            ensure!(t > 0.0 && t.is_finite(), "horizon must be positive, got {t}");
        }
        for &l in &self.lambdas {
            ensure!(l > 0.0 && l.is_finite(), "step sizes must be positive, got {l}");
        }
        Ok(())
    }

    fn config_at(&self, lambda: f64, seed: u64) -> Result<SgldConfig> {
        let n = self.schedule.iterations(lambda);
        Ok(self
            .base
            .clone()
            .with_burn_in(0)?
            .with_iterations(n)?
            .with_lambda(lambda)?
            .with_seed(seed))
    }

    /// Sorted terminal values of the tracked coordinate at step size `lambda`.
    pub fn terminals<O, F>(&self, oracle: &O, factory: &F, lambda: f64, seed: u64) -> Result<Vec<f64>>
    where
        O: GradientOracle + ?Sized,
        F: StreamFactory + ?Sized,
    {
        let config = self.config_at(lambda, seed)?;
        let set = sample_pi_beta(&config, oracle, factory, self.n_chains).map_err(|e| Error::AtStepSize {
            lambda,
            source: Box::new(e),
        })?;
        let mut values = set.coordinate(self.coordinate);
        values.sort_unstable_by(f64::total_cmp);
        Ok(values)
    }

    fn reference_sample<O, F>(&self, oracle: &O, factory: &F, reference: &Reference) -> Result<Vec<f64>>
    where
        O: GradientOracle + ?Sized,
        F: StreamFactory + ?Sized,
    {
        let n = self.n_chains;
        match reference {
            Reference::Samples(s) => {
                ensure!(s.len() >= n, "reference has {} samples, need at least {n}", s.len());
                ensure!(s.iter().all(|x| x.is_finite()), "reference samples must be finite");
                let mut sorted = s.clone();
                sorted.sort_unstable_by(f64::total_cmp);
                Ok(subsample_sorted(&sorted, n))
            }
            Reference::Sgld { lambda, seed } => self.terminals(oracle, factory, *lambda, *seed),
            Reference::Gaussian { mean, sd } => {
                ensure!(
                    *sd >= 0.0 && sd.is_finite(),
                    "reference sd must be nonnegative, got {sd}"
                );
                Ok((0..n)
                    .map(|i| mean + sd * normal_quantile((i as f64 + 0.5) / n as f64))
                    .collect())
            }
        }
    }
}

/// Runs every step size, measures `W_1` of the tracked coordinate against
/// `reference`, and fits the log-log slope.
pub fn rate_experiment<O, F>(
    experiment: &RateExperiment,
    oracle: &O,
    factory: &F,
    reference: &Reference,
) -> Result<RateReport>
where
    O: GradientOracle + ?Sized,
    F: StreamFactory + ?Sized,
{
    experiment.validate()?;
    let target = experiment.reference_sample(oracle, factory, reference)?;
    let seed = experiment.base.seed;
    let mut points = Vec::with_capacity(experiment.lambdas.len());
    for &lambda in &experiment.lambdas {
        let values = experiment.terminals(oracle, factory, lambda, seed)?;
        log::info!("rate experiment: lambda = {lambda:e} done");
        points.push(RatePoint {
            lambda,
            w_distance: sorted_distance(&values, &target, 1),
            n_chains: experiment.n_chains,
            seed,
        });
    }
    let fit = fit_loglog_slope(&points)?;
    Ok(RateReport { points, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lambda: f64, w: f64) -> RatePoint {
        RatePoint {
            lambda,
            w_distance: w,
            n_chains: 10,
            seed: 0,
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(wasserstein_p_1d(&[1.0, 2.0], &[2.0, 1.0], 1).unwrap(), 0.0);
        assert_eq!(wasserstein_p_1d(&[0.0], &[1.0], 1).unwrap(), 1.0);
        assert_eq!(wasserstein_p_1d(&[0.0], &[1.0], 2).unwrap(), 1.0);
        assert_eq!(wasserstein_p_1d(&[2.0, 0.0], &[1.0, 3.0], 1).unwrap(), 1.0);
    }

    #[test]
    fn distance_contract() {
        assert!(wasserstein_p_1d(&[], &[], 1).is_err());
        assert!(wasserstein_p_1d(&[1.0], &[1.0, 2.0], 1).is_err());
        assert!(wasserstein_p_1d(&[1.0], &[1.0], 3).is_err());
        assert!(wasserstein_p_1d(&[f64::NAN], &[1.0], 1).is_err());
    }

    #[test]
    fn slope_examples() {
        let pts: Vec<_> = [1e-5, 1e-4, 1e-3].iter().map(|&l| pt(l, 3.0 * f64::sqrt(l))).collect();
        let fit = fit_loglog_slope(&pts).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);

        let two = [pt(0.1, 0.7), pt(0.4, 0.2)];
        let exact = (0.2f64.ln() - 0.7f64.ln()) / (0.4f64.ln() - 0.1f64.ln());
        assert!((fit_loglog_slope(&two).unwrap().slope - exact).abs() < 1e-12);
    }

    #[test]
    fn slope_errors() {
        assert!(matches!(
            fit_loglog_slope(&[pt(0.1, 0.0), pt(0.2, 0.0)]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            fit_loglog_slope(&[pt(0.1, 0.0), pt(0.2, 1.0)]),
            Err(Error::Contract(_))
        ));
        assert!(fit_loglog_slope(&[pt(0.1, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[pt(0.1, 1.0), pt(0.1, 2.0)]).is_err());
    }

    #[test]
    fn subsample_keeps_spread() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(subsample_sorted(&v, 10), v);
        assert_eq!(subsample_sorted(&v, 2), vec![2.0, 7.0]);
        assert_eq!(subsample_sorted(&v, 1), vec![5.0]);
    }

    #[test]
    fn schedule_iterations() {
        assert_eq!(Schedule::Iterations(7).iterations(0.1), 7);
        assert_eq!(Schedule::Horizon(1.0).iterations(0.25), 4);
        assert_eq!(Schedule::Horizon(1.0).iterations(0.3), 4);
    }
}
