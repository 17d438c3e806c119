//! Loss-curve records appended to run logs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Which targets a loss was computed over. `Speech` and `Text` are id-range
/// scopes and exclude marker tokens by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    Speech,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub tokens_seen: u64,
    pub split: Split,
    pub scope: Scope,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn push(&mut self, point: LossPoint) {
        if let Some(last) = self.points.last() {
            debug_assert!(point.step >= last.step, "steps must be non-decreasing");
        }
        self.points.push(point);
    }

    pub fn filtered(&self, split: Split, scope: Scope) -> Vec<(u64, f64)> {
        self.points
            .iter()
            .filter(|p| p.split == split && p.scope == scope)
            .map(|p| (p.step, p.loss))
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            s.push_str(&serde_json::to_string(p).expect("plain struct serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut points = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            points.push(serde_json::from_str(line)?);
        }
        Ok(Self { points })
    }
}

/// Fraction of adjacent moving-average windows that do not increase.
///
/// The series is smoothed with a trailing window of `window` points (capped
/// at the series length); with fewer than two windows the check is trivially
/// 1.0.
pub fn smoothed_nonincreasing_fraction(losses: &[f64], window: usize) -> f64 {
    let n = losses.len();
    let w = window.clamp(1, n.max(1));
    if n < w + 1 {
        return 1.0;
    }
    let mut smooth = Vec::with_capacity(n - w + 1);
    let mut acc: f64 = losses[..w].iter().sum();
    smooth.push(acc / w as f64);
    for i in w..n {
        acc += losses[i] - losses[i - w];
        smooth.push(acc / w as f64);
    }
    let pairs = smooth.len() - 1;
    let ok = smooth.windows(2).filter(|p| p[1] <= p[0]).count();
    ok as f64 / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut c = LossCurve::default();
        c.push(LossPoint {
            step: 1,
            tokens_seen: 2048,
            split: Split::Train,
            scope: Scope::All,
            loss: 6.5,
        });
        c.push(LossPoint {
            step: 2,
            tokens_seen: 4096,
            split: Split::Val,
            scope: Scope::Speech,
            loss: 6.1,
        });
        let back = LossCurve::from_jsonl(&c.to_jsonl()).unwrap();
        assert_eq!(back.points, c.points);
        assert_eq!(back.filtered(Split::Val, Scope::Speech), vec![(2, 6.1)]);
    }

    #[test]
    fn monotone_series_scores_one() {
        let xs: Vec<f64> = (0..200).map(|i| 5.0 - 0.01 * i as f64).collect();
        assert_eq!(smoothed_nonincreasing_fraction(&xs, 50), 1.0);
    }

    #[test]
    fn noise_is_smoothed_away() {
        let xs: Vec<f64> = (0..500)
            .map(|i| 5.0 * (-0.01 * i as f64).exp() + if i % 2 == 0 { 0.02 } else { -0.02 })
            .collect();
        assert!(smoothed_nonincreasing_fraction(&xs, 50) >= 0.95);
    }

    #[test]
    fn short_series_is_trivially_ok() {
        assert_eq!(smoothed_nonincreasing_fraction(&[3.0, 2.0], 50), 1.0);
        assert_eq!(smoothed_nonincreasing_fraction(&[], 50), 1.0);
    }

    #[test]
    fn increasing_series_scores_zero() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(smoothed_nonincreasing_fraction(&xs, 10), 0.0);
    }
}
