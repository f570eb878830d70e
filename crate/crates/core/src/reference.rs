//! Brute-force and plug-in reference values: empirical quantile and CVaR
//! estimators, the two-asset CVaR grid search, and a Monte Carlo estimate of
//! the oracle's Lipschitz-in-expectation constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DataMatrix, DistributionSpec};
use crate::error::{ensure, Result};
use crate::rng::data_rng;
use crate::sgld::{DataStream, GradientOracle, ParameterPoint, StreamFactory};

/// 1-based rank `ceil(q·n)` of the lower empirical quantile, clamped to
/// `[1, n]`. Products within a few ulps of an integer round to it, so that
/// e.g. `0.95 · 100` selects rank 95.
fn quantile_rank(n: usize, q: f64) -> usize {
    let x = q * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n)
}

fn check_samples(samples: &[f64], level: f64) -> Result<()> {
    ensure!(!samples.is_empty(), "empirical estimate needs at least one sample");
    ensure!(level > 0.0 && level < 1.0, "level must lie in (0, 1), got {level}");
    ensure!(samples.iter().all(|x| !x.is_nan()), "samples contain NaN");
    Ok(())
}

/// Order statistic of rank `ceil(q·N)` (lower empirical quantile).
pub fn empirical_quantile(samples: &[f64], q: f64) -> Result<f64> {
    check_samples(samples, q)?;
    let k = quantile_rank(samples.len(), q);
    let mut work = samples.to_vec();
    let (_, v, _) = work.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*v)
}

/// Plug-in CVaR `θ̂ + mean((x − θ̂)_+)/(1 − q̄)` with `θ̂` the empirical
/// quantile at `q̄`.
pub fn empirical_cvar(samples: &[f64], q_bar: f64) -> Result<f64> {
    let var = empirical_quantile(samples, q_bar)?;
    Ok(cvar_at(samples, q_bar, var))
}

fn cvar_at(samples: &[f64], q_bar: f64, var: f64) -> f64 {
    let excess: f64 = samples.iter().map(|&x| (x - var).max(0.0)).sum();
    var + excess / (samples.len() as f64 * (1.0 - q_bar))
}

/// Standard error of the plug-in CVaR, from the sample spread of
/// `θ̂ + (x − θ̂)_+/(1 − q̄)`.
fn cvar_std_err(samples: &[f64], q_bar: f64, var: f64) -> f64 {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return 0.0;
    }
    let psi = |x: f64| (x - var).max(0.0) / (1.0 - q_bar);
    let mean = samples.iter().map(|&x| psi(x)).sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|&x| (psi(x) - mean).powi(2)).sum();
    (ss / (n - 1.0) / n).sqrt()
}

/// CVaR and VaR of the sample, with the standard error of the CVaR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub var: f64,
    pub cvar: f64,
    pub cvar_std_err: f64,
}

pub fn tail_estimate(samples: &[f64], q_bar: f64) -> Result<TailEstimate> {
    let var = empirical_quantile(samples, q_bar)?;
    Ok(TailEstimate {
        var,
        cvar: cvar_at(samples, q_bar, var),
        cvar_std_err: cvar_std_err(samples, q_bar, var),
    })
}

/// One point of the CVaR-versus-weight curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub weight: f64,
    pub cvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    /// Weight of asset 1 at the minimum.
    pub w_star: f64,
    pub var_star: f64,
    pub cvar_star: f64,
    /// Standard error of `cvar_star`.
    pub cvar_std_err: f64,
    pub curve: Vec<CurvePoint>,
    pub mc_samples: usize,
    pub seed: u64,
}

pub const MIN_GRID_MC_SAMPLES: usize = 10_000;

/// Minimizes the CVaR of `g·X₁ + (1 − g)·X₂` over `grid` evenly spaced
/// weights `g ∈ [0, 1]`.
///
/// All grid points share one sample matrix of `mc_samples` draws, so the
/// curve is smooth in `g` and deterministic given `seed`.
pub fn grid_search_cvar(
    spec1: &DistributionSpec,
    spec2: &DistributionSpec,
    q_bar: f64,
    grid: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    ensure!(grid >= 2, "grid needs at least two points, got {grid}");
    ensure!(
        mc_samples >= MIN_GRID_MC_SAMPLES,
        "grid search needs at least {MIN_GRID_MC_SAMPLES} samples, got {mc_samples}"
    );
    ensure!(q_bar > 0.0 && q_bar < 1.0, "q_bar must lie in (0, 1), got {q_bar}");
    spec1.validate()?;
    spec2.validate()?;

    let mut rng = data_rng(seed);
    let matrix = DataMatrix::sample(&[*spec1, *spec2], mc_samples, &mut rng);
    let weights: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();

    let estimates: Vec<TailEstimate> = weights
        .par_iter()
        .map(|&g| {
            let values: Vec<f64> = matrix.iter_rows().map(|r| g * r[0] + (1.0 - g) * r[1]).collect();
            tail_estimate(&values, q_bar)
        })
        .collect::<Result<_>>()?;

    let best = estimates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cvar.total_cmp(&b.1.cvar))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    Ok(GridSearchResult {
        w_star: weights[best],
        var_star: estimates[best].var,
        cvar_star: estimates[best].cvar,
        cvar_std_err: estimates[best].cvar_std_err,
        curve: weights
            .iter()
            .zip(&estimates)
            .map(|(&weight, e)| CurvePoint { weight, cvar: e.cvar })
            .collect(),
        mc_samples,
        seed,
    })
}

pub const MIN_CLC_DRAWS: usize = 10_000;

/// Monte Carlo estimate of `E|H(θ, X) − H(θ′, X)| / |θ − θ′|` for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClcPairEstimate {
    pub distance: f64,
    pub ratio: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClcReport {
    pub max_ratio: f64,
    pub pairs: Vec<ClcPairEstimate>,
}

/// Estimates the conditional Lipschitz constant of `oracle` over the given
/// parameter pairs. Both points of a pair, and all pairs, see the same data
/// draws. The result is a diagnostic; nothing is asserted.
pub fn validate_clc<O, F>(
    oracle: &O,
    factory: &F,
    theta_pairs: &[(ParameterPoint, ParameterPoint)],
    draws: usize,
    seed: u64,
) -> Result<ClcReport>
where
    O: GradientOracle + ?Sized,
    F: StreamFactory + ?Sized,
{
    ensure!(!theta_pairs.is_empty(), "at least one parameter pair is required");
    ensure!(
        draws >= MIN_CLC_DRAWS,
        "need at least {MIN_CLC_DRAWS} draws, got {draws}"
    );
    ensure!(
        factory.data_dim() == oracle.data_dim(),
        "stream yields {}-dimensional data, oracle expects {}",
        factory.data_dim(),
        oracle.data_dim()
    );
    let dim = oracle.dim();
    for (a, b) in theta_pairs {
        ensure!(
            a.dim() == dim && b.dim() == dim,
            "pair dimensions must equal oracle dimension {dim}"
        );
        ensure!(a.is_finite() && b.is_finite(), "pair coordinates must be finite");
        ensure!(a != b, "pair points must be distinct");
    }

    let pairs = theta_pairs
        .par_iter()
        .map(|(a, b)| {
            let distance = euclidean(a.coords(), b.coords());
            let mut stream = factory.stream(data_rng(seed));
            let mut x = vec![0.0; factory.data_dim()];
            let (mut ha, mut hb) = (vec![0.0; dim], vec![0.0; dim]);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..draws {
                stream.next_into(&mut x);
                oracle.gradient(a.coords(), &x, &mut ha);
                oracle.gradient(b.coords(), &x, &mut hb);
                let d = euclidean(&ha, &hb) / distance;
                sum += d;
                sum_sq += d * d;
            }
            let n = draws as f64;
            let ratio = sum / n;
            let var = ((sum_sq - n * ratio * ratio) / (n - 1.0)).max(0.0);
            ClcPairEstimate {
                distance,
                ratio,
                std_err: (var / n).sqrt(),
            }
        })
        .collect::<Vec<_>>();
    let max_ratio = pairs.iter().map(|p| p.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(ClcReport { max_ratio, pairs })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{NoData, QuadraticOracle};

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.95).unwrap(), 95.0);
        assert_eq!(empirical_quantile(&[7.0], 0.3).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[7.0], 0.999).unwrap(), 7.0);
        assert!(empirical_quantile(&[], 0.5).is_err());
        assert!(empirical_quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn rank_rounding() {
        assert_eq!(quantile_rank(100, 0.95), 95);
        assert_eq!(quantile_rank(100, 0.951), 96);
        assert_eq!(quantile_rank(3, 0.1), 1);
        assert_eq!(quantile_rank(1_000_000, 0.95), 950_000);
        assert_eq!(quantile_rank(1000, 0.99), 990);
    }

    #[test]
    fn cvar_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        // brute force: θ̂ = 95, excesses 0..=5 over 100 samples
        let brute = 95.0 + (0..=5).map(f64::from).sum::<f64>() / (100.0 * 0.05);
        assert!((empirical_cvar(&v, 0.95).unwrap() - brute).abs() < 1e-12);
        assert!((brute - 98.0).abs() < 1e-12);
        assert_eq!(empirical_cvar(&[3.5; 10], 0.9).unwrap(), 3.5);
    }

    #[test]
    fn grid_search_validates_inputs() {
        let n = DistributionSpec::normal(0.0, 1.0).unwrap();
        assert!(grid_search_cvar(&n, &n, 0.95, 1, 10_000, 1).is_err());
        assert!(grid_search_cvar(&n, &n, 0.95, 10, 9_999, 1).is_err());
        assert!(grid_search_cvar(&n, &n, 1.5, 10, 10_000, 1).is_err());
    }

    #[test]
    fn grid_search_curve_shape() {
        let n = DistributionSpec::normal(0.0, 1.0).unwrap();
        let r = grid_search_cvar(&n, &n, 0.9, 11, 20_000, 3).unwrap();
        assert_eq!(r.curve.len(), 11);
        assert_eq!(r.curve[0].weight, 0.0);
        assert_eq!(r.curve[10].weight, 1.0);
        let min = r.curve.iter().map(|c| c.cvar).fold(f64::INFINITY, f64::min);
        assert_eq!(r.cvar_star, min);
        assert!(r.curve.iter().any(|c| c.weight == r.w_star && c.cvar == r.cvar_star));
        assert!(r.var_star <= r.cvar_star);
    }

    #[test]
    fn clc_linear_oracle_is_exact() {
        let oracle = QuadraticOracle::new(2.0, 1);
        let pairs: Vec<_> = [(0.0, 1.0), (3.0, 2.5), (-1.0, 4.0)]
            .iter()
            .map(|&(a, b)| (ParameterPoint::scalar(a), ParameterPoint::scalar(b)))
            .collect();
        let r = validate_clc(&oracle, &NoData, &pairs, 10_000, 0).unwrap();
        for p in &r.pairs {
            assert!((p.ratio - 2.0).abs() < 1e-12);
            assert!(p.std_err < 1e-9);
        }
        assert!((r.max_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clc_rejects_bad_pairs() {
        let oracle = QuadraticOracle::new(2.0, 1);
        let same = vec![(ParameterPoint::scalar(1.0), ParameterPoint::scalar(1.0))];
        assert!(validate_clc(&oracle, &NoData, &same, 10_000, 0).is_err());
        let ok = vec![(ParameterPoint::scalar(1.0), ParameterPoint::scalar(0.0))];
        assert!(validate_clc(&oracle, &NoData, &ok, 10, 0).is_err());
        let wrong_dim = vec![(ParameterPoint::new(vec![1.0, 0.0]), ParameterPoint::new(vec![0.0, 0.0]))];
        assert!(validate_clc(&oracle, &NoData, &wrong_dim, 10_000, 0).is_err());
    }
}
