use alloc::vec::Vec;

use super::{MilModel, Prediction};
use crate::data::Dataset;
use crate::error::{contract, Result};
use crate::metrics::{accuracy, ece, roc_auc, ScoredSample, DEFAULT_ECE_BINS};
use crate::pooling::eval_bag_seed;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub acc: f64,
    /// `None` when the dataset holds a single class.
    pub auc: Option<f64>,
    pub ece: f64,
    pub n_bags: usize,
    /// Present when instance labels are available and both classes occur.
    pub instance_auc: Option<f64>,
}

/// Predictions in dataset order; bag `b` is evaluated with
/// [`eval_bag_seed`]`(eval_seed, b.id)`.
pub fn predict_dataset<M: MilModel>(
    model: &M,
    ds: &Dataset,
    eval_seed: u64,
) -> Result<Vec<Prediction>> {
    ds.bags
        .iter()
        .map(|b| model.predict(&b.features, eval_bag_seed(eval_seed, &b.id)))
        .collect()
}

pub fn report_from_predictions(ds: &Dataset, preds: &[Prediction]) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(contract!("evaluation of an empty dataset"));
    }
    if preds.len() != ds.len() {
        return Err(contract!(
            "{} predictions for {} bags",
            preds.len(),
            ds.len()
        ));
    }
    let samples: Vec<ScoredSample> = ds
        .bags
        .iter()
        .zip(preds)
        .map(|(b, p)| ScoredSample::new(p.bag_prob, b.label))
        .collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.bag_prob).collect();
    let labels = ds.labels();
    let mut inst_scores = Vec::new();
    let mut inst_labels = Vec::new();
    let mut have_instances = true;
    for (b, p) in ds.bags.iter().zip(preds) {
        match &b.instance_labels {
            Some(l) => {
                inst_scores.extend_from_slice(&p.instance_probs);
                inst_labels.extend_from_slice(l);
            }
            None => have_instances = false,
        }
    }
    Ok(EvalReport {
        acc: accuracy(&samples)?,
        auc: roc_auc(&scores, &labels),
        ece: ece(&samples, DEFAULT_ECE_BINS)?,
        n_bags: ds.len(),
        instance_auc: if have_instances {
            roc_auc(&inst_scores, &inst_labels)
        } else {
            None
        },
    })
}

pub fn evaluate<M: MilModel>(model: &M, ds: &Dataset, eval_seed: u64) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(contract!("evaluation of an empty dataset"));
    }
    report_from_predictions(ds, &predict_dataset(model, ds, eval_seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Bag;
    use crate::linalg::Matrix;
    use alloc::vec;

    fn dataset(labels: &[u8]) -> Dataset {
        let bags = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| Bag::new(alloc::format!("b{i}"), Matrix::zeros(1, 1), y, None).unwrap())
            .collect();
        Dataset::new("t", bags).unwrap()
    }

    fn preds(scores: &[f64]) -> Vec<Prediction> {
        scores
            .iter()
            .map(|&s| Prediction {
                bag_prob: s,
                instance_probs: vec![s],
            })
            .collect()
    }

    #[test]
    fn perfect_scorer() {
        let ds = dataset(&[0, 1, 1, 0]);
        let r = report_from_predictions(&ds, &preds(&[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!((r.acc, r.auc, r.ece), (1.0, Some(1.0), 0.0));
        assert_eq!(r.instance_auc, None);
    }

    #[test]
    fn constant_half_on_balanced_set() {
        let ds = dataset(&[0, 1, 0, 1]);
        let r = report_from_predictions(&ds, &preds(&[0.5; 4])).unwrap();
        assert_eq!(r.acc, 0.5);
        assert_eq!(r.auc, Some(0.5));
    }

    #[test]
    fn single_class_auc_is_undefined() {
        let ds = dataset(&[1, 1]);
        let r = report_from_predictions(&ds, &preds(&[0.2, 0.9])).unwrap();
        assert_eq!(r.auc, None);
    }
}
