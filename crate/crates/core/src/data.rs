//! Bags, datasets, feature normalization, synthetic MIL bags and stratified
//! cross-validation plans.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, domain, Result};
use crate::linalg::Matrix;
use crate::rng;

/// One MIL bag; column `i` of `features` is instance `i`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bag {
    pub id: String,
    pub features: Matrix,
    pub label: u8,
    pub instance_labels: Option<Vec<u8>>,
}

impl Bag {
    pub fn new(
        id: impl Into<String>,
        features: Matrix,
        label: u8,
        instance_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let id = id.into();
        if features.cols() == 0 {
            return Err(domain!("bag {id} has no instances"));
        }
        if label > 1 {
            return Err(domain!("bag {id} has non-binary label {label}"));
        }
        if let Some(y) = &instance_labels {
            if y.len() != features.cols() {
                return Err(domain!(
                    "bag {id}: {} instance labels for {} instances",
                    y.len(),
                    features.cols()
                ));
            }
            if y.iter().any(|&v| v > 1) {
                return Err(domain!("bag {id} has non-binary instance labels"));
            }
            let max = y.iter().copied().max().unwrap_or(0);
            if max != label {
                return Err(domain!(
                    "bag {id}: label {label} but max instance label {max}"
                ));
            }
        }
        Ok(Self {
            id,
            features,
            label,
            instance_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.features.cols() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub name: String,
    pub feature_dim: usize,
    pub bags: Vec<Bag>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, bags: Vec<Bag>) -> Result<Self> {
        let name = name.into();
        let Some(first) = bags.first() else {
            return Err(domain!("dataset {name} has no bags"));
        };
        let feature_dim = first.dim();
        let mut ids = BTreeSet::new();
        for b in &bags {
            if b.dim() != feature_dim {
                return Err(domain!(
                    "bag {} has dimension {}, expected {feature_dim}",
                    b.id,
                    b.dim()
                ));
            }
            if !ids.insert(b.id.as_str()) {
                return Err(domain!("duplicate bag id {}", b.id));
            }
        }
        Ok(Self {
            name,
            feature_dim,
            bags,
        })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.bags.iter().map(|b| b.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_dim: self.feature_dim,
            bags: indices.iter().map(|&i| self.bags[i].clone()).collect(),
        }
    }

    pub fn num_instances(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }
}

/// Per-dimension z-scoring with statistics from a training split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics over every instance of `bags`; zero-variance dimensions keep scale 1.
    pub fn fit(bags: &[Bag]) -> Result<Self> {
        let d = bags
            .first()
            .ok_or_else(|| contract!("cannot fit a normalizer on no bags"))?
            .dim();
        let mut mean = vec![0.0; d];
        let mut count = 0.0;
        for b in bags {
            for c in 0..b.len() {
                for (m, v) in mean.iter_mut().zip(b.features.col(c)) {
                    *m += v;
                }
                count += 1.0;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for b in bags {
            for c in 0..b.len() {
                for ((s, v), m) in var.iter_mut().zip(b.features.col(c)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = libm::sqrt(s / count);
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply_bag(&self, bag: &Bag) -> Bag {
        let mut out = bag.clone();
        for c in 0..out.len() {
            for ((v, m), s) in out
                .features
                .col_mut(c)
                .iter_mut()
                .zip(&self.mean)
                .zip(&self.std)
            {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        Dataset {
            name: ds.name.clone(),
            feature_dim: ds.feature_dim,
            bags: ds.bags.iter().map(|b| self.apply_bag(b)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub n_bags: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub dim: usize,
    /// Fraction of instances replaced by witnesses in positive bags.
    pub witness_rate: f64,
    /// Distance of the witness mean from the origin along the fixed direction.
    pub separation: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return Err(domain!(
                "witness rate must lie in (0, 1], got {}",
                self.witness_rate
            ));
        }
        if self.separation.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater) {
            return Err(domain!("separation must be positive"));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(domain!(
                "bag size range [{}, {}] is invalid",
                self.k_min,
                self.k_max
            ));
        }
        if self.dim == 0 || self.n_bags == 0 {
            return Err(domain!("need a positive dimension and bag count"));
        }
        Ok(())
    }
}

/// Unit direction along which witnesses are shifted.
pub fn synth_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[0x5eed]);
    loop {
        let u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = libm::sqrt(u.iter().map(|v| v * v).sum());
        if norm > 1e-9 {
            return u.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Alternating negative/positive bags; negatives are all `N(0, I)`,
/// positives swap `⌈witness_rate·k⌉` random instances for `N(separation·u, I)`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let u = synth_direction(cfg.dim, cfg.seed);
    let bags = (0..cfg.n_bags)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, &[1, i as u64]);
            let k = r.random_range(cfg.k_min..=cfg.k_max);
            let label = (i % 2) as u8;
            let mut x = Matrix::from_fn(cfg.dim, k, |_, _| StandardNormal.sample(&mut r));
            let mut y = vec![0u8; k];
            if label == 1 {
                let witnesses = libm::ceil(cfg.witness_rate * k as f64 - 1e-9).max(1.0) as usize;
                let mut order: Vec<usize> = (0..k).collect();
                order.shuffle(&mut r);
                for &c in &order[..witnesses.min(k)] {
                    y[c] = 1;
                    for (v, ui) in x.col_mut(c).iter_mut().zip(&u) {
                        *v += cfg.separation * ui;
                    }
                }
            }
            Bag::new(format!("synth-{i:04}"), x, label, Some(y))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("synthetic", bags)
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` stratified folds; each fold is evaluated by `runs` independent model
/// seeds on the same split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldPlan {
    pub k: usize,
    pub runs: usize,
    pub val_frac: f64,
    pub seed: u64,
    pub folds: Vec<Fold>,
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn run_seed(&self, fold: usize, run: usize) -> u64 {
        rng::derive_seed(self.seed, &[0xF01D, fold as u64, run as u64])
    }
}

pub fn kfold_plan(
    labels: &[u8],
    k: usize,
    runs: usize,
    val_frac: f64,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(domain!("need at least 2 folds, got {k}"));
    }
    if k > labels.len() {
        return Err(domain!("{k} folds for only {} bags", labels.len()));
    }
    if runs == 0 {
        return Err(domain!("need at least one run per fold"));
    }
    if !(0.0..1.0).contains(&val_frac) {
        return Err(domain!("validation fraction must lie in [0, 1)"));
    }
    let mut r = rng::stream(seed, &[0xC0DE]);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[usize::from(y == 1)].push(i);
    }
    by_class.iter_mut().for_each(|c| c.shuffle(&mut r));
    // Deal positives then negatives round-robin: sizes differ by at most one
    // and each class is spread as evenly as possible.
    let mut assignment = vec![0usize; labels.len()];
    let mut slot = 0;
    for class in [1, 0] {
        for &i in &by_class[class] {
            assignment[i] = slot % k;
            slot += 1;
        }
    }
    let mut warnings = Vec::new();
    let folds = (0..k)
        .map(|f| {
            let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
            for class in [0u8, 1] {
                if !test.iter().any(|&i| labels[i] == class) {
                    warnings.push(format!("fold {f}: class {class} absent from test split"));
                }
            }
            let mut train = Vec::new();
            let mut val = Vec::new();
            for class in [0usize, 1] {
                let mut rest: Vec<usize> = by_class[class]
                    .iter()
                    .copied()
                    .filter(|&i| assignment[i] != f)
                    .collect();
                let mut fr = rng::stream(seed, &[0xF01D, f as u64, class as u64]);
                rest.shuffle(&mut fr);
                let n_val = libm::round(val_frac * rest.len() as f64) as usize;
                val.extend_from_slice(&rest[..n_val]);
                train.extend_from_slice(&rest[n_val..]);
            }
            train.sort_unstable();
            val.sort_unstable();
            Fold {
                index: f,
                train,
                val,
                test,
            }
        })
        .collect();
    Ok(FoldPlan {
        k,
        runs,
        val_frac,
        seed,
        folds,
        warnings,
    })
}
