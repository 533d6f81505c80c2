//! Union graph of a pattern set and the three universal-approximation
//! conditions: self-loops, a Hamiltonian path, strong connectivity.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use super::{AttendSets, PatternSet};
use crate::error::{domain, Result};

/// Largest `n` for which the verifier runs the exact Hamiltonian search.
pub const EXACT_HAMILTONIAN_LIMIT: usize = 12;

/// Hard cap for [`UnionGraph::hamiltonian_path`]; the memo table is `2^n · n` bits.
const SEARCH_HARD_LIMIT: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum HamiltonianMethod {
    ExactSearch,
    CoverageCriterion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionReport {
    pub n: usize,
    pub self_loops_ok: bool,
    pub hamiltonian_ok: bool,
    pub hamiltonian_method: HamiltonianMethod,
    pub strongly_connected_ok: bool,
    pub coverage: usize,
}

impl ConditionReport {
    pub fn all_ok(&self) -> bool {
        self.self_loops_ok && self.hamiltonian_ok && self.strongly_connected_ok
    }
}

/// `⌈(n−1)/2⌉`, the coverage that guarantees a Hamiltonian path.
pub fn coverage_threshold(n: usize) -> usize {
    n.saturating_sub(1).div_ceil(2)
}

pub fn coverage_criterion(n: usize, coverage: usize) -> bool {
    coverage >= coverage_threshold(n)
}

/// Directed graph with an edge `k -> j` whenever `j ∈ A_k^l` for some layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnionGraph {
    n: usize,
    words: usize,
    rows: Vec<u64>,
}

impl UnionGraph {
    pub fn empty(n: usize) -> Self {
        let words = n.div_ceil(64);
        Self {
            n,
            words,
            rows: vec![0; n * words],
        }
    }

    pub fn from_patterns(ps: &PatternSet) -> Self {
        let n = ps.n();
        let mut g = Self::empty(n);
        for l in 0..ps.num_layers() {
            let global = ps.global_set(l);
            for k in 0..n {
                if ps.is_selected(l, k) {
                    g.fill_row(k);
                } else {
                    g.add_edge(k, k);
                    for &j in &global {
                        g.add_edge(k, j);
                    }
                }
            }
        }
        g
    }

    pub fn from_layers<A: AttendSets + ?Sized>(n: usize, layers: &[&A]) -> Self {
        let mut g = Self::empty(n);
        let mut buf = Vec::new();
        for layer in layers {
            for k in 0..n.min(layer.num_patches()) {
                layer.write_attend_set(k, &mut buf);
                for &j in &buf {
                    g.add_edge(k, j);
                }
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add_edge(&mut self, from: usize, to: usize) {
        self.rows[from * self.words + to / 64] |= 1 << (to % 64);
    }

    fn fill_row(&mut self, from: usize) {
        let row = &mut self.rows[from * self.words..(from + 1) * self.words];
        row.iter_mut().for_each(|w| *w = u64::MAX);
        let tail = self.n % 64;
        if tail != 0 {
            row[self.words - 1] = (1u64 << tail) - 1;
        }
    }

    #[inline]
    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.rows[from * self.words + to / 64] >> (to % 64) & 1 == 1
    }

    pub fn all_self_loops(&self) -> bool {
        (0..self.n).all(|k| self.has_edge(k, k))
    }

    /// Every node reaches node 0 and node 0 reaches every node.
    pub fn is_strongly_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        self.reach_count(false) == self.n && self.reach_count(true) == self.n
    }

    fn reach_count(&self, reverse: bool) -> usize {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for (v, s) in seen.iter_mut().enumerate() {
                let edge = if reverse {
                    self.has_edge(v, u)
                } else {
                    self.has_edge(u, v)
                };
                if edge && !*s {
                    *s = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    }

    /// Exact search for an ordering `γ` with `γ(i) ∈ A_{γ(i+1)}` for all `i`,
    /// i.e. every node attends to its predecessor. Backtracking with a memo
    /// of dead `(visited, last)` states.
    pub fn hamiltonian_path(&self) -> Result<Option<Vec<usize>>> {
        let n = self.n;
        if n > SEARCH_HARD_LIMIT {
            return Err(domain!(
                "exact Hamiltonian search limited to n <= {SEARCH_HARD_LIMIT}, got {n}"
            ));
        }
        if n == 0 {
            return Ok(Some(Vec::new()));
        }
        // succ[u]: nodes v with an edge v -> u, i.e. v may follow u.
        let succ: Vec<u32> = (0..n)
            .map(|u| {
                (0..n)
                    .filter(|&v| v != u && self.has_edge(v, u))
                    .fold(0u32, |m, v| m | 1 << v)
            })
            .collect();
        let mut dead = vec![0u64; ((1usize << n) * n).div_ceil(64)];
        let mut path = Vec::with_capacity(n);
        for start in 0..n {
            path.clear();
            path.push(start);
            if extend(&succ, n, 1 << start, start, &mut path, &mut dead) {
                return Ok(Some(path));
            }
        }
        Ok(None)
    }
}

fn extend(
    succ: &[u32],
    n: usize,
    visited: u32,
    last: usize,
    path: &mut Vec<usize>,
    dead: &mut [u64],
) -> bool {
    if path.len() == n {
        return true;
    }
    let key = visited as usize * n + last;
    if dead[key / 64] >> (key % 64) & 1 == 1 {
        return false;
    }
    let mut options = succ[last] & !visited;
    while options != 0 {
        let v = options.trailing_zeros() as usize;
        options &= options - 1;
        path.push(v);
        if extend(succ, n, visited | 1 << v, v, path, dead) {
            return true;
        }
        path.pop();
    }
    dead[key / 64] |= 1 << (key % 64);
    false
}

/// Checks the three conditions on the union graph of `ps`. The Hamiltonian
/// condition uses exact search up to [`EXACT_HAMILTONIAN_LIMIT`] patches and
/// the coverage criterion `|⋃ Λ^l| ≥ ⌈(n−1)/2⌉` above it.
pub fn verify_universal(ps: &PatternSet) -> ConditionReport {
    let n = ps.n();
    let self_loops_ok = (0..ps.num_layers()).all(|l| (0..n).all(|k| ps.attends(l, k, k)));
    let graph = UnionGraph::from_patterns(ps);
    let coverage = ps.coverage();
    let (hamiltonian_ok, hamiltonian_method) = if n <= EXACT_HAMILTONIAN_LIMIT {
        let found = graph
            .hamiltonian_path()
            .map(|p| p.is_some())
            .unwrap_or(false);
        (found, HamiltonianMethod::ExactSearch)
    } else {
        (
            coverage_criterion(n, coverage),
            HamiltonianMethod::CoverageCriterion,
        )
    };
    ConditionReport {
        n,
        self_loops_ok,
        hamiltonian_ok,
        hamiltonian_method,
        strongly_connected_ok: graph.is_strongly_connected(),
        coverage,
    }
}
