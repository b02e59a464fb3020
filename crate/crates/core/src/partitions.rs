//! Integer partitions and the generalized Pochhammer symbol.
//!
//! Partitions index every matrix-argument series in this crate. Enumeration
//! order is reverse-lexicographic and fixed, so truncated sums are
//! reproducible bit-for-bit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weakly decreasing tuple of positive integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Partition(Vec<u32>);

impl Partition {
    pub fn new(parts: Vec<u32>) -> Result<Self> {
        if parts.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "partition parts must be positive: {parts:?}"
            )));
        }
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "partition parts must be weakly decreasing: {parts:?}"
            )));
        }
        Ok(Partition(parts))
    }

    /// Builds a partition from parts that may contain zeros or be unsorted.
    pub fn from_unsorted(mut parts: Vec<u32>) -> Self {
        parts.retain(|&p| p > 0);
        parts.sort_unstable_by(|a, b| b.cmp(a));
        Partition(parts)
    }

    pub fn empty() -> Self {
        Partition(Vec::new())
    }

    pub fn parts(&self) -> &[u32] {
        &self.0
    }

    /// Number of nonzero parts.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.0.iter().map(|&p| p as usize).sum()
    }

    /// Part `i` (0-based), zero beyond the length.
    pub fn part(&self, i: usize) -> u32 {
        self.0.get(i).copied().unwrap_or(0)
    }

    /// Dominance order: `self ≥ other` when every partial sum of `self` is at
    /// least the matching partial sum of `other`. Both must have equal weight.
    pub fn dominates(&self, other: &Partition) -> bool {
        if self.weight() != other.weight() {
            return false;
        }
        let (mut a, mut b) = (0u64, 0u64);
        for i in 0..self.len().max(other.len()) {
            a += self.part(i) as u64;
            b += other.part(i) as u64;
            if a < b {
                return false;
            }
        }
        true
    }

    /// ρ_κ = Σ_i κ_i (κ_i − i), i 1-based; the eigenvalue driving the
    /// zonal recurrence.
    pub fn rho(&self) -> i64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &k)| k as i64 * (k as i64 - (i as i64 + 1)))
            .sum()
    }

    /// Conjugate (transposed Young diagram).
    pub fn conjugate(&self) -> Partition {
        let first = self.part(0) as usize;
        let conj = (1..=first as u32)
            .map(|j| self.0.iter().filter(|&&p| p >= j).count() as u32)
            .collect();
        Partition(conj)
    }

    /// Iterates cells as `(arm, leg)` pairs.
    pub fn arms_and_legs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let conj = self.conjugate();
        self.0.iter().enumerate().flat_map(move |(i, &row)| {
            let conj = conj.0.clone();
            (0..row).map(move |j| {
                let arm = row - j - 1;
                let leg = conj[j as usize] - i as u32 - 1;
                (arm, leg)
            })
        })
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(")")
    }
}

impl TryFrom<Vec<u32>> for Partition {
    type Error = Error;

    fn try_from(parts: Vec<u32>) -> Result<Self> {
        Partition::new(parts)
    }
}

impl From<Partition> for Vec<u32> {
    fn from(p: Partition) -> Self {
        p.0
    }
}

/// All partitions of `m` with at most `max_parts` parts, in
/// reverse-lexicographic order. `m = 0` yields the single empty partition.
pub fn partitions_of(m: usize, max_parts: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fill(m as u32, m as u32, max_parts, &mut current, &mut out);
    out
}

fn fill(remaining: u32, cap: u32, slots: usize, current: &mut Vec<u32>, out: &mut Vec<Partition>) {
    if remaining == 0 {
        out.push(Partition(current.clone()));
        return;
    }
    if slots == 0 {
        return;
    }
    for part in (1..=remaining.min(cap)).rev() {
        // remaining - part must fit into slots - 1 parts of size ≤ part
        if (remaining - part) as u64 > part as u64 * (slots as u64 - 1) {
            break;
        }
        current.push(part);
        fill(remaining - part, part, slots - 1, current, out);
        current.pop();
    }
}

/// Generalized Pochhammer symbol in the real (zonal, α = 2) convention:
/// `(a)_κ = ∏_i ∏_{j=1..κ_i} (a − (i−1)/2 + j − 1)`.
pub fn gen_pochhammer(a: f64, kappa: &Partition) -> f64 {
    kappa
        .parts()
        .iter()
        .enumerate()
        .map(|(i, &row)| {
            let base = a - i as f64 / 2.0;
            (0..row).map(|j| base + j as f64).product::<f64>()
        })
        .product()
}

#[cfg(test)]
/// Ordinary rising factorial `(a)_m`.
pub(crate) fn rising(a: f64, m: u32) -> f64 {
    (0..m).map(|j| a + j as f64).product()
}
