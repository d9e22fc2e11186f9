use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_SMOOTHING: usize = 11;

pub(crate) fn dist2<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum()
}

/// Distance from every point to its `k`-th nearest other point, ascending.
pub fn kdist_curve<T: Scalar, P: AsRef<[T]> + Sync>(points: &[P], k: usize) -> Result<Vec<f64>> {
    if k == 0 || points.len() <= k {
        bail!(Argument, "k-distance with k = {k} needs more than {k} points, got {}", points.len());
    }
    let mut curve: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = points[i].as_ref();
            let mut d: Vec<f64> =
                points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| dist2(p, q.as_ref())).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect();
    curve.sort_by(f64::total_cmp);
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    /// Position on the curve the value was read from.
    pub index: usize,
    /// Set when the curve is flat and has no elbow.
    pub flat: bool,
}

/// How the elbow of a k-distance curve is located.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ElbowRule {
    /// [`chord_elbow`].
    #[default]
    Chord,
    /// [`estimate_epsilon`].
    SecondDifference,
}

impl fmt::Display for ElbowRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElbowRule::Chord => "chord",
            ElbowRule::SecondDifference => "second-difference",
        })
    }
}

impl FromStr for ElbowRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chord" => Ok(ElbowRule::Chord),
            "second-difference" => Ok(ElbowRule::SecondDifference),
            other => Err(Error::Argument(format!("elbow rule must be chord or second-difference, got {other:?}"))),
        }
    }
}

/// Validate a k-distance curve; a constant one is returned as its own flat estimate.
fn check_curve(curve: &[f64]) -> Result<Option<EpsilonEstimate>> {
    if curve.is_empty() {
        bail!(Argument, "empty k-distance curve");
    }
    if curve.iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "k-distance curve contains non-finite values");
    }
    if curve.windows(2).any(|w| w[1] < w[0]) {
        bail!(Argument, "k-distance curve must be sorted ascending");
    }
    let n = curve.len();
    Ok((curve[0] == curve[n - 1]).then_some(EpsilonEstimate { epsilon: curve[0], index: 0, flat: true }))
}

/// Elbow as the point lying furthest below the chord from the first to the
/// last value, with rank and distance both rescaled to [0, 1]. Unlike second
/// differences this does not chase the steepest stretch of a heavy tail:
/// a curve that keeps bending upwards to its end still has its knee where
/// the dense plateau gives way. The earliest of equal maxima wins.
pub fn chord_elbow(curve: &[f64]) -> Result<EpsilonEstimate> {
    if let Some(flat) = check_curve(curve)? {
        return Ok(flat);
    }
    let n = curve.len();
    let (lo, span) = (curve[0], curve[n - 1] - curve[0]);
    let gap = |i: usize| i as f64 / (n - 1) as f64 - (curve[i] - lo) / span;
    let mut index = 0;
    for i in 1..n {
        if gap(i) > gap(index) {
            index = i;
        }
    }
    Ok(EpsilonEstimate { epsilon: curve[index], index, flat: false })
}

/// Dispatch on `rule`; `window` only matters for second differences.
pub fn find_elbow(curve: &[f64], rule: ElbowRule, window: usize) -> Result<EpsilonEstimate> {
    match rule {
        ElbowRule::Chord => chord_elbow(curve),
        ElbowRule::SecondDifference => estimate_epsilon(curve, window),
    }
}

/// Elbow of a sorted k-distance curve: smooth with a centred moving average
/// of width `window` (shrinking symmetrically at the ends), take second
/// differences, and read the raw curve at the end of the smoothing window
/// centred on the largest one. Only the upper half of the curve is searched;
/// among near-equal maxima the earliest wins.
pub fn estimate_epsilon(curve: &[f64], window: usize) -> Result<EpsilonEstimate> {
    let n = curve.len();
    if window == 0 || n <= window {
        bail!(Argument, "curve of length {n} is too short for smoothing window {window}");
    }
    if let Some(flat) = check_curve(curve)? {
        return Ok(flat);
    }
    let half = window / 2;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            curve[i - h..=i + h].iter().sum::<f64>() / (2 * h + 1) as f64
        })
        .collect();
    // Truncated windows at the tail distort the second difference, so only
    // positions whose neighbours are fully smoothed are searched when any exist.
    let mut start = (n / 2).max(half + 1);
    let mut end = n - 1 - half;
    if start >= end {
        start = (n / 2).max(1);
        end = n - 1;
    }
    let second: Vec<(usize, f64)> =
        (start..end).map(|i| (i, smooth[i - 1] - 2.0 * smooth[i] + smooth[i + 1])).collect();
    let best = second.iter().map(|&(_, d)| d).fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-9 * best.abs().max(f64::MIN_POSITIVE);
    let peak = second.iter().find(|&&(_, d)| d >= best - slack).map_or(start, |&(i, _)| i);
    // The smoothed curve bends as soon as its window reaches a sharp elbow,
    // half a window early; read the raw curve at the far edge of that window.
    let index = (peak + half).min(n - 1);
    Ok(EpsilonEstimate { epsilon: curve[index], index, flat: false })
}

/// CSV `rank,distance`, ranks starting at 1.
pub fn kdist_csv(curve: &[f64]) -> String {
    let mut s = String::from("rank,distance\n");
    for (i, d) in curve.iter().enumerate() {
        s.push_str(&format!("{},{:.6}\n", i + 1, d));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_and_lattice() {
        let pts = [[0.0], [1.0], [2.0]];
        assert_eq!(kdist_curve::<f64, _>(&pts, 1).unwrap(), vec![1.0; 3]);
        let grid: Vec<[f64; 2]> = (0..25).map(|i| [(i % 5) as f64, (i / 5) as f64]).collect();
        assert!(kdist_curve::<f64, _>(&grid, 1).unwrap().iter().all(|&d| d == 1.0));
        assert!(matches!(kdist_curve::<f64, _>(&pts, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        for k in [1, 5, 12] {
            let mut expect: Vec<f64> = (0..200)
                .map(|i| {
                    let mut d: Vec<f64> = (0..200)
                        .filter(|&j| j != i)
                        .map(|j| (0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum::<f64>().sqrt())
                        .collect();
                    d.sort_by(f64::total_cmp);
                    d[k - 1]
                })
                .collect();
            expect.sort_by(f64::total_cmp);
            assert_eq!(kdist_curve::<f64, _>(&pts, k).unwrap(), expect);
        }
    }

    #[test]
    fn synthetic_elbow() {
        let mut curve = vec![1.0; 100];
        curve.extend((1..=20).map(|i| 1.0 + 49.0 * i as f64 / 20.0));
        let e = estimate_epsilon(&curve, DEFAULT_SMOOTHING).unwrap();
        assert!((1.0..=5.0).contains(&e.epsilon), "{e:?}");
        assert!((90..=110).contains(&e.index));
        assert!(!e.flat);
    }

    #[test]
    fn flat_curve_warns() {
        let e = estimate_epsilon(&[2.0; 30], DEFAULT_SMOOTHING).unwrap();
        assert_eq!(e, EpsilonEstimate { epsilon: 2.0, index: 0, flat: true });
        assert!(estimate_epsilon(&[1.0; 11], 11).is_err());
        assert!(estimate_epsilon(&[3.0, 2.0, 1.0, 0.0], 1).is_err());
    }

    #[test]
    fn chord_synthetic_elbow() {
        let mut curve = vec![1.0; 100];
        curve.extend((1..=20).map(|i| 1.0 + 49.0 * i as f64 / 20.0));
        let e = chord_elbow(&curve).unwrap();
        assert_eq!((e.epsilon, e.index, e.flat), (1.0, 99, false));
        assert_eq!(chord_elbow(&[2.0; 5]).unwrap(), EpsilonEstimate { epsilon: 2.0, index: 0, flat: true });
        assert!(chord_elbow(&[]).is_err());
        assert!(chord_elbow(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn chord_stays_at_knee_of_accelerating_tail() {
        // Plateau with a gentle slope, then a tail that steepens to the end.
        let mut curve: Vec<f64> = (0..400).map(|i| 4.0 + i as f64 / 400.0).collect();
        curve.extend((1..=100).map(|i| 5.0 + (i as f64 / 25.0).exp() - 1.0));
        let chord = chord_elbow(&curve).unwrap();
        assert!((390..=440).contains(&chord.index), "{chord:?}");
        let second = estimate_epsilon(&curve, DEFAULT_SMOOTHING).unwrap();
        assert!(second.index > 480, "{second:?}");
    }

    #[test]
    fn elbow_rule_parses() {
        for r in [ElbowRule::Chord, ElbowRule::SecondDifference] {
            assert_eq!(r.to_string().parse::<ElbowRule>().unwrap(), r);
        }
        assert!("knee".parse::<ElbowRule>().is_err());
        let curve: Vec<f64> = (0..50).map(|i| (i * i) as f64).collect();
        assert_eq!(find_elbow(&curve, ElbowRule::Chord, 11).unwrap(), chord_elbow(&curve).unwrap());
    }

    #[test]
    fn csv_layout() {
        assert_eq!(kdist_csv(&[0.5, 1.0]), "rank,distance\n1,0.500000\n2,1.000000\n");
    }
}
