//! Accuracy, ROC-AUC (Mann–Whitney) and expected calibration error.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, domain, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ECE_BINS: usize = 10;

/// A scored binary prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8) -> Self {
        Self { score, label }
    }

    /// `ŷ = 1 ⇔ score ≥ 0.5`.
    pub fn predicted(&self) -> u8 {
        u8::from(self.score >= DEFAULT_THRESHOLD)
    }

    pub fn is_correct(&self) -> bool {
        self.predicted() == self.label
    }

    /// `max(s, 1 − s)`.
    pub fn confidence(&self) -> f64 {
        self.score.max(1.0 - self.score)
    }
}

pub fn accuracy(samples: &[ScoredSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(contract!("accuracy of an empty sample set"));
    }
    Ok(samples.iter().filter(|s| s.is_correct()).count() as f64 / samples.len() as f64)
}

/// `P(score_pos > score_neg) + ½·P(tie)`, computed from average ranks in
/// `O(n log n)`. `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, ties sharing their average rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&idx| labels[idx] == 1).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// One confidence bin `((m−1)/M, m/M]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
    pub total: usize,
}

impl CalibrationBins {
    pub fn ece(&self) -> f64 {
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / self.total as f64 * libm::fabs(b.accuracy - b.confidence))
            .sum()
    }
}

/// Index `m−1` of the bin `((m−1)/M, m/M]` holding `conf`; zero goes to the first bin.
fn bin_index(conf: f64, m: usize) -> usize {
    let mf = m as f64;
    let mut idx = libm::ceil(conf * mf).clamp(1.0, mf) as usize;
    while idx > 1 && conf <= (idx - 1) as f64 / mf {
        idx -= 1;
    }
    while idx < m && conf > idx as f64 / mf {
        idx += 1;
    }
    idx - 1
}

pub fn calibration_bins(samples: &[ScoredSample], m: usize) -> Result<CalibrationBins> {
    if m == 0 {
        return Err(domain!("need at least one bin"));
    }
    if samples.is_empty() {
        return Err(contract!("calibration of an empty sample set"));
    }
    let mut count = vec![0usize; m];
    let mut correct = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    for s in samples {
        let b = bin_index(s.confidence(), m);
        count[b] += 1;
        correct[b] += usize::from(s.is_correct());
        conf_sum[b] += s.confidence();
    }
    let bins = (0..m)
        .map(|b| {
            let c = count[b];
            let (accuracy, confidence) = if c == 0 {
                (0.0, 0.0)
            } else {
                (correct[b] as f64 / c as f64, conf_sum[b] / c as f64)
            };
            CalibrationBin {
                lower: b as f64 / m as f64,
                upper: (b + 1) as f64 / m as f64,
                count: c,
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok(CalibrationBins {
        bins,
        total: samples.len(),
    })
}

/// `Σ_m |B_m|/n · |acc(B_m) − conf(B_m)|`.
pub fn ece(samples: &[ScoredSample], m: usize) -> Result<f64> {
    calibration_bins(samples, m).map(|b| b.ece())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn accuracy_extremes() {
        let all_right = [ScoredSample::new(0.9, 1), ScoredSample::new(0.1, 0)];
        let all_wrong = [ScoredSample::new(0.9, 0), ScoredSample::new(0.1, 1)];
        assert_eq!(accuracy(&all_right).unwrap(), 1.0);
        assert_eq!(accuracy(&all_wrong).unwrap(), 0.0);
        assert!(accuracy(&[]).is_err());
        // threshold is inclusive
        assert_eq!(ScoredSample::new(0.5, 1).predicted(), 1);
    }

    #[test]
    fn auc_basic_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), Some(1.0));
        assert_eq!(roc_auc(&[0.4; 6], &[0, 1, 0, 1, 1, 0]), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 1]), None);
        // smartcore doc example
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]), Some(0.75));
    }

    #[test]
    fn ece_hand_example() {
        let s = [
            ScoredSample::new(0.95, 1),
            ScoredSample::new(0.95, 0),
            ScoredSample::new(0.65, 1),
        ];
        let e = ece(&s, 10).unwrap();
        assert!((e - 5.0 / 12.0).abs() < 1e-12, "{e}");
        assert!((e - 0.4167).abs() < 5e-5);
    }

    #[test]
    fn ece_zero_when_confident_and_correct() {
        let s = [ScoredSample::new(1.0, 1), ScoredSample::new(0.0, 0)];
        assert_eq!(ece(&s, 10).unwrap(), 0.0);
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.7, 10), 6);
        assert_eq!(bin_index(0.70001, 10), 7);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.95, 10), 9);
        assert_eq!(bin_index(0.3, 1), 0);
    }

    #[test]
    fn merging_equal_samples_keeps_ece() {
        let a = vec![ScoredSample::new(0.8, 1), ScoredSample::new(0.3, 1)];
        let b = vec![
            ScoredSample::new(0.8, 1),
            ScoredSample::new(0.8, 1),
            ScoredSample::new(0.3, 1),
            ScoredSample::new(0.3, 1),
        ];
        assert!((ece(&a, 10).unwrap() - ece(&b, 10).unwrap()).abs() < 1e-15);
    }
}
