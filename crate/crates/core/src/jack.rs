//! Branching-rule evaluation of zonal polynomials in many variables.
//!
//! With `C_κ(x_1..x_r) = Σ_μ C_μ(x_1..x_{r−1}) · x_r^{|κ|−|μ|} · γ_κμ`, summed
//! over `μ ⊆ κ` with `κ/μ` a horizontal strip, the cost depends on the number
//! of parts of κ and not on the number of monomials. This is the evaluator
//! behind the hypergeometric series; the monomial table in [`crate::zonal`]
//! serves as its exact oracle.
//!
//! `γ_κμ = β_κμ · c_κ / c_μ` where `β` is the Jack branching coefficient at
//! α = 2 and `c_ν = 2^{|ν|} |ν|! / ∏ (upper hook · lower hook)` converts the
//! J normalization to C.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_traits::Num;

use crate::error::{Error, Result};
use crate::partitions::{partitions_of, Partition};
use crate::zonal::MAX_TABLE_WEIGHT;

const ALPHA: f64 = 2.0;

/// Most parts a branching table can index.
pub const MAX_PARTS: usize = 8;

fn pack(parts: &[u32]) -> u64 {
    parts.iter().fold(0u64, |acc, &p| (acc << 8) | p as u64) | ((parts.len() as u64) << 60)
}

fn conjugate(parts: &[u32]) -> Vec<u32> {
    let width = parts.first().copied().unwrap_or(0);
    (1..=width).map(|j| parts.iter().filter(|&&p| p >= j).count() as u32).collect()
}

fn upper_hook(parts: &[u32], conj: &[u32], i: usize, j: usize) -> f64 {
    (conj[j] as f64 - i as f64 - 1.0) + ALPHA * (parts[i] as f64 - j as f64)
}

fn lower_hook(parts: &[u32], conj: &[u32], i: usize, j: usize) -> f64 {
    (conj[j] as f64 - i as f64) + ALPHA * (parts[i] as f64 - j as f64 - 1.0)
}

/// `ln(2^m m! / j_κ)`.
fn ln_c_factor(parts: &[u32], conj: &[u32]) -> f64 {
    let m: u32 = parts.iter().sum();
    let mut acc = m as f64 * ALPHA.ln() + (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    for (i, &p) in parts.iter().enumerate() {
        for j in 0..p as usize {
            acc -= upper_hook(parts, conj, i, j).ln() + lower_hook(parts, conj, i, j).ln();
        }
    }
    acc
}

/// Per-partition data reused by every link that touches it.
#[derive(Clone, Debug)]
struct Shape {
    conj: Vec<u32>,
    /// Column sums of ln upper and ln lower hooks.
    col_upper: Vec<f64>,
    col_lower: Vec<f64>,
    ln_c: f64,
}

impl Shape {
    fn new(parts: &[u32]) -> Shape {
        let conj = conjugate(parts);
        let mut col_upper = vec![0.0; conj.len()];
        let mut col_lower = vec![0.0; conj.len()];
        for (i, &p) in parts.iter().enumerate() {
            for j in 0..p as usize {
                col_upper[j] += upper_hook(parts, &conj, i, j).ln();
                col_lower[j] += lower_hook(parts, &conj, i, j).ln();
            }
        }
        let ln_c = ln_c_factor(parts, &conj);
        Shape {
            conj,
            col_upper,
            col_lower,
            ln_c,
        }
    }
}

/// `ln β_κμ`: upper hooks in columns where κ and μ have equal length, lower
/// hooks elsewhere.
fn ln_beta(kappa: &Shape, mu: &Shape) -> f64 {
    let mut acc = 0.0;
    for j in 0..kappa.conj.len() {
        let same = kappa.conj[j] == mu.conj.get(j).copied().unwrap_or(0);
        acc += if same { kappa.col_upper[j] } else { kappa.col_lower[j] };
        if j < mu.conj.len() {
            acc -= if same { mu.col_upper[j] } else { mu.col_lower[j] };
        }
    }
    acc
}

/// Link from κ to a sub-partition μ: `(weight of μ, index of μ, γ_κμ,
/// parts of μ)`. Links are sorted by the last field.
type Link = (u32, u32, f64, u32);

#[derive(Debug)]
pub struct BranchBlock {
    pub kappas: Vec<Partition>,
    links: Vec<Vec<Link>>,
}

/// Partitions with at most `parts` parts, by weight, with their branching
/// coefficients.
#[derive(Clone, Debug)]
pub struct BranchingTable {
    parts: usize,
    blocks: Vec<Arc<BranchBlock>>,
    index: HashMap<u64, (u32, u32)>,
    shapes: Vec<Vec<Arc<Shape>>>,
}

impl BranchingTable {
    pub fn build(max_weight: usize, parts: usize) -> Result<Self> {
        if parts == 0 || parts > MAX_PARTS {
            return Err(Error::InvalidParameter(format!(
                "branching tables support 1..={MAX_PARTS} parts, got {parts}"
            )));
        }
        let mut t = BranchingTable {
            parts,
            blocks: Vec::new(),
            index: HashMap::new(),
            shapes: Vec::new(),
        };
        t.extend_to(max_weight)?;
        Ok(t)
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn max_weight(&self) -> usize {
        self.blocks.len().saturating_sub(1)
    }

    pub fn block(&self, weight: usize) -> Result<&BranchBlock> {
        self.blocks.get(weight).map(|b| &**b).ok_or(Error::TableExhausted {
            requested: weight,
            max: self.max_weight(),
        })
    }

    fn extend_to(&mut self, max_weight: usize) -> Result<()> {
        if max_weight > MAX_TABLE_WEIGHT {
            return Err(Error::InvalidParameter(format!(
                "zonal tables are limited to weight {MAX_TABLE_WEIGHT}"
            )));
        }
        for m in self.blocks.len()..=max_weight {
            let kappas = partitions_of(m, self.parts);
            for (idx, k) in kappas.iter().enumerate() {
                self.index.insert(pack(k.parts()), (m as u32, idx as u32));
            }
            self.shapes
                .push(kappas.iter().map(|k| Arc::new(Shape::new(k.parts()))).collect());
            let links = kappas
                .iter()
                .enumerate()
                .map(|(idx, k)| self.links_of(k.parts(), &self.shapes[m][idx]))
                .collect();
            self.blocks.push(Arc::new(BranchBlock { kappas, links }));
        }
        Ok(())
    }

    fn links_of(&self, kappa: &[u32], shape: &Shape) -> Vec<Link> {
        let mut out = Vec::new();
        // odometer over κ_{i+1} ≤ μ_i ≤ κ_i
        let mut mu: Vec<u32> = (0..kappa.len())
            .map(|i| kappa.get(i + 1).copied().unwrap_or(0))
            .collect();
        loop {
            let len = mu.iter().take_while(|&&p| p > 0).count();
            let &(w, idx) = self
                .index
                .get(&pack(&mu[..len]))
                .expect("sub-partitions are indexed before their parents");
            let mshape = &self.shapes[w as usize][idx as usize];
            let ln_g = ln_beta(shape, mshape) + shape.ln_c - mshape.ln_c;
            out.push((w, idx, ln_g.exp(), len as u32));
            let mut pos = 0;
            loop {
                if pos == mu.len() {
                    // C_μ vanishes on fewer than len(μ) variables
                    out.sort_by_key(|l| l.3);
                    return out;
                }
                if mu[pos] < kappa[pos] {
                    mu[pos] += 1;
                    break;
                }
                mu[pos] = kappa.get(pos + 1).copied().unwrap_or(0);
                pos += 1;
            }
        }
    }
}

type Cache = Mutex<HashMap<usize, Arc<BranchingTable>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared table with at least `max_weight` weights and `parts` parts.
pub fn shared_branching(max_weight: usize, parts: usize) -> Result<Arc<BranchingTable>> {
    if parts == 0 || parts > MAX_PARTS {
        return BranchingTable::build(max_weight, parts).map(Arc::new);
    }
    let mut guard = cache().lock().expect("branching cache poisoned");
    let mut table = match guard.get(&parts) {
        Some(t) if t.max_weight() >= max_weight => return Ok(Arc::clone(t)),
        Some(t) => (**t).clone(),
        None => BranchingTable {
            parts,
            blocks: Vec::new(),
            index: HashMap::new(),
            shapes: Vec::new(),
        },
    };
    table.extend_to(max_weight)?;
    let table = Arc::new(table);
    guard.insert(parts, Arc::clone(&table));
    Ok(table)
}

/// Evaluates `C_κ(x_1..x_n)` weight by weight for every κ in a
/// [`BranchingTable`].
pub struct ZonalEvaluator<T> {
    table: Arc<BranchingTable>,
    vars: Vec<T>,
    powers: Vec<Vec<T>>,
    /// `values[w][idx][r]` is `C_κ(x_1..x_r)` for κ = block w, entry idx.
    values: Vec<Vec<Vec<T>>>,
}

impl<T: Copy + Num + From<f64>> ZonalEvaluator<T> {
    pub fn new(table: Arc<BranchingTable>, vars: &[T]) -> Self {
        ZonalEvaluator {
            table,
            vars: vars.to_vec(),
            powers: vars.iter().map(|_| vec![T::one()]).collect(),
            values: Vec::new(),
        }
    }

    pub fn table(&self) -> &Arc<BranchingTable> {
        &self.table
    }

    /// Swaps in a larger table (same part count) without losing computed values.
    pub fn set_table(&mut self, table: Arc<BranchingTable>) {
        debug_assert_eq!(table.parts(), self.table.parts());
        self.table = table;
    }

    fn power(&mut self, r: usize, d: usize) -> T {
        let row = &mut self.powers[r];
        while row.len() <= d {
            let next = *row.last().unwrap() * self.vars[r];
            row.push(next);
        }
        row[d]
    }

    /// `C_κ(x)` for every κ of weight `m`, in table order.
    pub fn weight(&mut self, m: usize) -> Result<Vec<T>> {
        let n = self.vars.len();
        while self.values.len() <= m {
            let w = self.values.len();
            let table = Arc::clone(&self.table);
            let block = table.block(w)?;
            let mut out = Vec::with_capacity(block.kappas.len());
            for (kappa, links) in block.kappas.iter().zip(&block.links) {
                let mut per_r = vec![T::zero(); n + 1];
                if w == 0 {
                    per_r.iter_mut().for_each(|v| *v = T::one());
                } else {
                    for r in kappa.len().max(1)..=n {
                        let mut acc = T::zero();
                        for &(mw, idx, g, len) in links {
                            if len as usize >= r {
                                break;
                            }
                            let prev = if mw as usize == w {
                                // μ = κ: the value just computed one variable back
                                per_r[r - 1]
                            } else {
                                self.values[mw as usize][idx as usize][r - 1]
                            };
                            if prev.is_zero() {
                                continue;
                            }
                            let d = w - mw as usize;
                            acc = acc + prev * self.power(r - 1, d) * T::from(g);
                        }
                        per_r[r] = acc;
                    }
                }
                out.push(per_r);
            }
            self.values.push(out);
        }
        Ok(self.values[m].iter().map(|v| v[n]).collect())
    }
}
