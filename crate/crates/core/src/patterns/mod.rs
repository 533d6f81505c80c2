//! Snuffy sparsity patterns.
//!
//! In layer `l` a patch `k` attends to
//!
//! ```text
//! A_k^l = {k} ∪ [n]     if k ∈ Λ^l
//! A_k^l = {k} ∪ Λ^l     otherwise,      Λ^l = Λ_top ∪ Λ_r^l
//! ```
//!
//! where `Λ_top` (class-related global attentions) is shared by every layer
//! and `Λ_r^l` (random global attentions) is a fresh uniform `λ_r`-subset of
//! `[n] \ Λ_top` per layer.

mod concentration;
mod graph;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use self::concentration::{
    normal_cdf, simulate_layer_concentration, simulate_trial, theoretical_center,
    theoretical_sigma_baum, ConcentrationParams, CouponStats, TailFraction,
};
pub use self::graph::{
    coverage_criterion, coverage_threshold, verify_universal, ConditionReport, HamiltonianMethod,
    UnionGraph, EXACT_HAMILTONIAN_LIMIT,
};

use crate::error::{domain, Error, Result};
use crate::rng;

/// Per-patch attend sets of one attention layer.
pub trait AttendSets {
    fn num_patches(&self) -> usize;

    /// Clears `buf` and writes the attend set of patch `k` into it. The
    /// written order is the summation order used by the attention kernels.
    fn write_attend_set(&self, k: usize, buf: &mut Vec<usize>);
}

impl AttendSets for [Vec<usize>] {
    fn num_patches(&self) -> usize {
        self.len()
    }

    fn write_attend_set(&self, k: usize, buf: &mut Vec<usize>) {
        buf.clear();
        buf.extend_from_slice(&self[k]);
    }
}

impl AttendSets for Vec<Vec<usize>> {
    fn num_patches(&self) -> usize {
        self.len()
    }

    fn write_attend_set(&self, k: usize, buf: &mut Vec<usize>) {
        self.as_slice().write_attend_set(k, buf)
    }
}

/// The random global attentions of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerPattern {
    pub layer: usize,
    /// Sorted ascending, disjoint from the top set.
    pub random_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    n: usize,
    top_set: Vec<usize>,
    layers: Vec<LayerPattern>,
    /// `selected[l][k]` is `k ∈ Λ^l`.
    selected: Vec<Vec<bool>>,
}

impl PatternSet {
    /// Assembles a pattern set from explicit parts, validating ranges,
    /// duplicates and disjointness of every random set from the top set.
    pub fn from_parts(n: usize, top_set: Vec<usize>, random_sets: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(domain!("pattern set needs at least one patch"));
        }
        if random_sets.is_empty() {
            return Err(domain!("pattern set needs at least one layer"));
        }
        let mut top_mask = vec![false; n];
        let top_set = sorted_unique(top_set, n, &mut top_mask, "top set")?;
        let mut layers = Vec::with_capacity(random_sets.len());
        let mut selected = Vec::with_capacity(random_sets.len());
        for (layer, set) in random_sets.into_iter().enumerate() {
            let mut mask = top_mask.clone();
            let mut own = vec![false; n];
            let random_set = sorted_unique(set, n, &mut own, "random set")?;
            for &j in &random_set {
                if top_mask[j] {
                    return Err(domain!(
                        "layer {layer}: random index {j} is also in the top set"
                    ));
                }
                mask[j] = true;
            }
            layers.push(LayerPattern { layer, random_set });
            selected.push(mask);
        }
        Ok(Self {
            n,
            top_set,
            layers,
            selected,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn top_set(&self) -> &[usize] {
        &self.top_set
    }

    pub fn layers(&self) -> &[LayerPattern] {
        &self.layers
    }

    pub fn random_set(&self, l: usize) -> &[usize] {
        &self.layers[l].random_set
    }

    /// `Λ^l = Λ_top ∪ Λ_r^l`, sorted ascending.
    pub fn global_set(&self, l: usize) -> Vec<usize> {
        merge_sorted(&self.top_set, &self.layers[l].random_set)
    }

    #[inline]
    pub fn is_selected(&self, l: usize, k: usize) -> bool {
        self.selected[l][k]
    }

    /// Membership test `j ∈ A_k^l` without materializing the set.
    #[inline]
    pub fn attends(&self, l: usize, k: usize, j: usize) -> bool {
        j == k || self.selected[l][k] || self.selected[l][j]
    }

    pub fn attend_set(&self, l: usize, k: usize) -> Result<Vec<usize>> {
        self.check(l, k)?;
        let mut buf = Vec::new();
        self.layer(l).write_attend_set(k, &mut buf);
        Ok(buf)
    }

    pub fn layer(&self, l: usize) -> LayerView<'_> {
        LayerView {
            ps: self,
            l,
            global: self.global_set(l),
        }
    }

    /// `|⋃_l Λ^l|`, counting the top set once.
    pub fn coverage(&self) -> usize {
        (0..self.n)
            .filter(|&k| self.selected.iter().any(|s| s[k]))
            .count()
    }

    /// The same pattern with every index relabeled as `k -> perm[k]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(domain!("permutation length {} != n {}", perm.len(), self.n));
        }
        let map = |s: &[usize]| s.iter().map(|&k| perm[k]).collect::<Vec<_>>();
        Self::from_parts(
            self.n,
            map(&self.top_set),
            self.layers.iter().map(|l| map(&l.random_set)).collect(),
        )
    }

    fn check(&self, l: usize, k: usize) -> Result<()> {
        if l >= self.layers.len() {
            return Err(domain!(
                "layer {l} out of range for {} layers",
                self.layers.len()
            ));
        }
        if k >= self.n {
            return Err(domain!("patch {k} out of range for n = {}", self.n));
        }
        Ok(())
    }
}

/// One layer of a [`PatternSet`], usable wherever attend sets are consumed.
#[derive(Debug, Clone)]
pub struct LayerView<'a> {
    ps: &'a PatternSet,
    l: usize,
    global: Vec<usize>,
}

impl LayerView<'_> {
    pub fn global_set(&self) -> &[usize] {
        &self.global
    }
}

impl AttendSets for LayerView<'_> {
    fn num_patches(&self) -> usize {
        self.ps.n
    }

    fn write_attend_set(&self, k: usize, buf: &mut Vec<usize>) {
        buf.clear();
        if self.ps.is_selected(self.l, k) {
            buf.extend(0..self.ps.n);
            return;
        }
        let pos = self.global.partition_point(|&j| j < k);
        buf.extend_from_slice(&self.global[..pos]);
        buf.push(k);
        buf.extend_from_slice(&self.global[pos..]);
    }
}

/// Builds Snuffy patterns: `layers` independent uniform `λ_r`-subsets of
/// `[n] \ top_set`, layer `l` drawn from the stream `(rng_seed, l)`.
pub fn build_snuffy_patterns(
    n: usize,
    top_set: &[usize],
    lambda_r: usize,
    layers: usize,
    rng_seed: u64,
) -> Result<PatternSet> {
    if n == 0 {
        return Err(domain!("n must be at least 1"));
    }
    if layers == 0 {
        return Err(domain!("need at least one layer"));
    }
    let mut top_mask = vec![false; n];
    let top = sorted_unique(top_set.to_vec(), n, &mut top_mask, "top set")?;
    let pool: Vec<usize> = (0..n).filter(|&k| !top_mask[k]).collect();
    if lambda_r > pool.len() {
        return Err(Error::Capacity {
            requested: lambda_r,
            available: pool.len(),
        });
    }
    let random_sets = (0..layers)
        .map(|l| {
            let mut rng = rng::stream(rng_seed, &[l as u64]);
            let mut buf = pool.clone();
            let mut picked = sample_prefix(&mut rng, &mut buf, lambda_r).to_vec();
            picked.sort_unstable();
            picked
        })
        .collect();
    PatternSet::from_parts(n, top, random_sets)
}

/// Partial Fisher-Yates: moves a uniform `amount`-subset of `pool` to its
/// front and returns it. `pool` stays a permutation of its input, so it can
/// be reused for further independent draws.
pub(crate) fn sample_prefix<'a, R: Rng + ?Sized>(
    rng: &mut R,
    pool: &'a mut [usize],
    amount: usize,
) -> &'a [usize] {
    let len = pool.len();
    debug_assert!(amount <= len);
    for i in 0..amount {
        let j = rng.random_range(i..len);
        pool.swap(i, j);
    }
    &pool[..amount]
}

fn sorted_unique(
    mut set: Vec<usize>,
    n: usize,
    mask: &mut [bool],
    what: &str,
) -> Result<Vec<usize>> {
    for &k in &set {
        if k >= n {
            return Err(domain!("{what}: index {k} out of range for n = {n}"));
        }
        if mask[k] {
            return Err(domain!("{what}: duplicate index {k}"));
        }
        mask[k] = true;
    }
    set.sort_unstable();
    Ok(set)
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn definition_cases_expand_as_written() {
        let ps = PatternSet::from_parts(4, vec![2], vec![vec![0]]).unwrap();
        let mut a1 = ps.attend_set(0, 1).unwrap();
        a1.sort_unstable();
        assert_eq!(a1, vec![0, 1, 2]);
        assert_eq!(ps.attend_set(0, 2).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(ps.attend_set(0, 0).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_patch_degenerates_to_self_attention() {
        let ps = build_snuffy_patterns(1, &[0], 0, 1, 3).unwrap();
        assert_eq!(ps.attend_set(0, 0).unwrap(), vec![0]);
        let ps = build_snuffy_patterns(1, &[], 0, 1, 3).unwrap();
        assert_eq!(ps.attend_set(0, 0).unwrap(), vec![0]);
    }

    #[test]
    fn attend_set_rejects_out_of_range() {
        let ps = build_snuffy_patterns(5, &[1], 2, 2, 0).unwrap();
        assert!(matches!(ps.attend_set(2, 0), Err(Error::Domain(_))));
        assert!(matches!(ps.attend_set(0, 5), Err(Error::Domain(_))));
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            build_snuffy_patterns(5, &[0, 1], 4, 1, 0),
            Err(Error::Capacity {
                requested: 4,
                available: 3
            })
        );
        assert!(matches!(
            build_snuffy_patterns(5, &[5], 1, 1, 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_snuffy_patterns(5, &[1, 1], 1, 1, 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_snuffy_patterns(0, &[], 0, 1, 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_snuffy_patterns(5, &[], 1, 0, 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            PatternSet::from_parts(4, vec![1], vec![vec![1]]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn coverage_counts_union_once() {
        let ps = PatternSet::from_parts(5, vec![0], vec![vec![1, 2]]).unwrap();
        assert_eq!(ps.coverage(), 3);
        let ps = PatternSet::from_parts(5, vec![], vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(ps.coverage(), 3);
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = build_snuffy_patterns(50, &[3, 7], 10, 4, 11).unwrap();
        let b = build_snuffy_patterns(50, &[7, 3], 10, 4, 11).unwrap();
        let c = build_snuffy_patterns(50, &[3, 7], 10, 4, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.random_set(0), a.random_set(1));
    }

    #[test]
    fn layer_view_matches_membership() {
        let ps = build_snuffy_patterns(30, &[4, 20], 5, 3, 9).unwrap();
        for l in 0..3 {
            for k in 0..30 {
                let set = ps.attend_set(l, k).unwrap();
                assert!(set.windows(2).all(|w| w[0] < w[1]));
                for j in 0..30 {
                    assert_eq!(set.contains(&j), ps.attends(l, k, j), "l={l} k={k} j={j}");
                }
            }
        }
    }
}
