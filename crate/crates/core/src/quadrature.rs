//! Adaptive Gauss–Kronrod (7/15) integration.

// Nodes and weights are tabulated to more digits than f64 holds.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol`, bisecting
/// the subinterval with the largest error estimate.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 2000;
    let (value, error) = gk15(&f, a, b);
    let mut intervals = vec![(a, b, value, error)];
    let mut total = value;
    let mut total_err = error;
    while total_err > rel_tol * total.abs() && total_err > 1e-300 {
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::Numeric(format!(
                "quadrature did not converge: error estimate {total_err:e} on value {total:e}"
            )));
        }
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("nonempty");
        let (lo, hi, v, e) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let left = gk15(&f, lo, mid);
        let right = gk15(&f, mid, hi);
        total += left.0 + right.0 - v;
        total_err += left.1 + right.1 - e;
        intervals.push((lo, mid, left.0, left.1));
        intervals.push((mid, hi, right.0, right.1));
    }
    if !total.is_finite() {
        return Err(Error::Numeric("quadrature produced a non-finite value".into()));
    }
    // Re-sum to shed the drift of the running updates.
    Ok(intervals.iter().map(|iv| iv.2).sum())
}

/// Integrates `f` over `[a, ∞)` through the substitution `x = a + t/(1−t)`.
pub(crate) fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, rel_tol: f64) -> Result<f64> {
    integrate(
        |t| {
            let s = 1.0 - t;
            if s <= 0.0 {
                return 0.0;
            }
            f(a + t / s) / (s * s)
        },
        0.0,
        1.0,
        rel_tol,
    )
}
