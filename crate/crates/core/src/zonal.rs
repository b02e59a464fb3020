//! Zonal polynomials `C_κ` in the normalization where the polynomials of a
//! given weight `m` sum to `(tr X)^m`.
//!
//! Coefficients in the monomial basis come from the Jack recurrence at
//! parameter 2, restricted to the dominance order:
//!
//! ```text
//! c_κλ = Σ (λ_i − λ_j + 2t) c_κμ / (ρ_κ − ρ_λ),   μ = λ + t(e_i − e_j) sorted, λ < μ ≤ κ
//! ```
//!
//! starting from the leading coefficient `c_κκ = 2^m m! / ∏_cells (2a + l + 2)`.
//! Weights up to [`EXACT_WEIGHT_LIMIT`] are computed in exact rational
//! arithmetic; higher weights run the same recurrence in `f64`, where every
//! term is positive and rounding stays at a few ulps.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, ToPrimitive};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::SymMatrix;
use crate::partitions::{partitions_of, Partition};

/// Coefficients are kept as exact rationals up to this weight.
pub const EXACT_WEIGHT_LIMIT: usize = 20;

/// Largest weight any table will build.
pub const MAX_TABLE_WEIGHT: usize = 200;

/// Packs a partition with at most 8 parts, each below 256, into a `u64`.
fn pack(parts: &[u32]) -> u64 {
    debug_assert!(parts.len() <= 8 && parts.iter().all(|&p| p < 256));
    parts.iter().fold(0u64, |acc, &p| (acc << 8) | p as u64) | ((parts.len() as u64) << 60)
}

/// One zonal polynomial expanded over the monomial list of its weight.
#[derive(Clone, Debug)]
pub struct ZonalPoly {
    pub kappa: Partition,
    /// `(monomial index, coefficient)` for every nonzero coefficient.
    pub terms: Vec<(usize, f64)>,
    /// Exact coefficients aligned with `terms`, present for weights up to
    /// [`EXACT_WEIGHT_LIMIT`].
    pub exact: Option<Vec<BigRational>>,
}

#[derive(Clone, Debug)]
pub struct WeightBlock {
    pub weight: usize,
    pub monomials: Vec<Partition>,
    pub polys: Vec<ZonalPoly>,
}

/// Zonal coefficient store, grown one weight at a time.
///
/// `kappa_parts` bounds the length of the indexing partitions κ,
/// `monomial_parts` bounds the monomials λ (i.e. the number of variables the
/// table can be evaluated on).
#[derive(Clone, Debug)]
pub struct ZonalTable {
    kappa_parts: usize,
    monomial_parts: usize,
    blocks: Vec<WeightBlock>,
}

impl ZonalTable {
    pub fn build(max_weight: usize, kappa_parts: usize, monomial_parts: usize) -> Result<Self> {
        if kappa_parts == 0 || monomial_parts == 0 {
            return Err(Error::InvalidParameter("zonal table needs at least one part".into()));
        }
        if monomial_parts > 8 {
            return Err(Error::InvalidParameter(format!(
                "zonal tables support at most 8 variables, got {monomial_parts}"
            )));
        }
        let mut table = ZonalTable {
            kappa_parts: kappa_parts.min(monomial_parts),
            monomial_parts,
            blocks: Vec::new(),
        };
        table.extend_to(max_weight)?;
        Ok(table)
    }

    pub fn max_weight(&self) -> usize {
        self.blocks.len().saturating_sub(1)
    }

    pub fn kappa_parts(&self) -> usize {
        self.kappa_parts
    }

    pub fn monomial_parts(&self) -> usize {
        self.monomial_parts
    }

    pub fn block(&self, weight: usize) -> Result<&WeightBlock> {
        self.blocks.get(weight).ok_or(Error::TableExhausted {
            requested: weight,
            max: self.max_weight(),
        })
    }

    pub fn blocks(&self) -> &[WeightBlock] {
        &self.blocks
    }

    fn extend_to(&mut self, max_weight: usize) -> Result<()> {
        if max_weight > MAX_TABLE_WEIGHT {
            return Err(Error::InvalidParameter(format!(
                "zonal tables are limited to weight {MAX_TABLE_WEIGHT}"
            )));
        }
        for m in self.blocks.len()..=max_weight {
            let block = build_block(m, self.kappa_parts, self.monomial_parts);
            self.blocks.push(block);
        }
        Ok(())
    }

    /// Finds κ in the table.
    pub fn poly(&self, kappa: &Partition) -> Result<Option<&ZonalPoly>> {
        let block = self.block(kappa.weight())?;
        Ok(block.polys.iter().find(|p| &p.kappa == kappa))
    }
}

fn build_block(m: usize, kappa_parts: usize, monomial_parts: usize) -> WeightBlock {
    let monomials = partitions_of(m, monomial_parts);
    let index: HashMap<u64, usize> = monomials
        .iter()
        .enumerate()
        .map(|(i, p)| (pack(p.parts()), i))
        .collect();
    let polys = monomials
        .iter()
        .filter(|k| k.len() <= kappa_parts)
        .map(|kappa| {
            if m <= EXACT_WEIGHT_LIMIT {
                let exact = recurrence::<BigRational>(kappa, &monomials, &index);
                let terms = exact
                    .iter()
                    .map(|(i, c)| (*i, c.to_f64().expect("finite rational")))
                    .collect();
                ZonalPoly {
                    kappa: kappa.clone(),
                    terms,
                    exact: Some(exact.into_iter().map(|(_, c)| c).collect()),
                }
            } else {
                ZonalPoly {
                    kappa: kappa.clone(),
                    terms: recurrence::<f64>(kappa, &monomials, &index),
                    exact: None,
                }
            }
        })
        .collect();
    WeightBlock {
        weight: m,
        monomials,
        polys,
    }
}

fn factorial<T: Num + FromPrimitive + Clone>(m: usize) -> T {
    (1..=m).fold(T::one(), |acc, i| acc * T::from_usize(i).unwrap())
}

/// Leading coefficient `c_κκ = 2^m m! / ∏_cells (2·arm + leg + 2)`.
fn leading<T: Num + FromPrimitive + Clone>(kappa: &Partition) -> T {
    let m = kappa.weight();
    let two_pow = (0..m).fold(T::one(), |acc, _| acc * T::from_u32(2).unwrap());
    let hooks = kappa
        .arms_and_legs()
        .fold(T::one(), |acc, (a, l)| acc * T::from_u32(2 * a + l + 2).unwrap());
    two_pow * factorial::<T>(m) / hooks
}

fn recurrence<T: Num + FromPrimitive + Clone>(
    kappa: &Partition,
    monomials: &[Partition],
    index: &HashMap<u64, usize>,
) -> Vec<(usize, T)> {
    let start = index[&pack(kappa.parts())];
    let rho_kappa = kappa.rho();
    let mut coef: Vec<Option<T>> = vec![None; monomials.len()];
    coef[start] = Some(leading(kappa));
    let mut mu = [0u32; 8];
    // reverse-lex order is a linear extension of dominance, so every μ > λ
    // precedes λ in the list
    for (li, lambda) in monomials.iter().enumerate().skip(start + 1) {
        if !kappa.dominates(lambda) {
            continue;
        }
        let parts = lambda.parts();
        let mut acc = T::zero();
        for i in 0..parts.len() {
            for j in (i + 1)..parts.len() {
                for t in 1..=parts[j] {
                    let len = parts.len() - usize::from(parts[j] == t);
                    mu[..parts.len()].copy_from_slice(parts);
                    mu[i] += t;
                    mu[j] -= t;
                    let slot = &mut mu[..parts.len()];
                    slot.sort_unstable_by(|a, b| b.cmp(a));
                    let Some(&mi) = index.get(&pack(&slot[..len])) else {
                        continue;
                    };
                    if let Some(c) = &coef[mi] {
                        let w = parts[i] as i64 - parts[j] as i64 + 2 * t as i64;
                        acc = acc + T::from_i64(w).unwrap() * c.clone();
                    }
                }
            }
        }
        let denom = rho_kappa - lambda.rho();
        debug_assert!(denom > 0, "dominance implies ρ_κ > ρ_λ");
        if !acc.is_zero() {
            coef[li] = Some(acc / T::from_i64(denom).unwrap());
        }
    }
    coef.into_iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (i, c)))
        .collect()
}

type TableKey = (usize, usize);

fn cache() -> &'static Mutex<HashMap<TableKey, Arc<ZonalTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<ZonalTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared, lazily grown table with at least `max_weight` weights.
pub fn shared_table(max_weight: usize, kappa_parts: usize, monomial_parts: usize) -> Result<Arc<ZonalTable>> {
    if kappa_parts == 0 || monomial_parts == 0 || monomial_parts > 8 {
        return ZonalTable::build(max_weight, kappa_parts, monomial_parts).map(Arc::new);
    }
    let kappa_parts = kappa_parts.min(monomial_parts);
    let key = (kappa_parts, monomial_parts);
    let mut guard = cache().lock().expect("zonal cache poisoned");
    if let Some(t) = guard.get(&key) {
        if t.max_weight() >= max_weight {
            return Ok(Arc::clone(t));
        }
    }
    let mut table = match guard.get(&key) {
        Some(t) => (**t).clone(),
        None => ZonalTable {
            kappa_parts,
            monomial_parts,
            blocks: Vec::new(),
        },
    };
    table.extend_to(max_weight)?;
    let table = Arc::new(table);
    guard.insert(key, Arc::clone(&table));
    Ok(table)
}

/// Memoized evaluation of monomial symmetric functions `M_λ(x_1..x_n)` on a
/// fixed point `x`, generic over real and complex scalars.
pub struct MonomialEvaluator<T> {
    vars: Vec<T>,
    powers: Vec<Vec<T>>,
    memo: HashMap<(u64, usize), T>,
}

impl<T: Copy + Num> MonomialEvaluator<T> {
    pub fn new(vars: &[T]) -> Self {
        MonomialEvaluator {
            vars: vars.to_vec(),
            powers: vars.iter().map(|&v| vec![T::one(), v]).collect(),
            memo: HashMap::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    fn power(&mut self, var: usize, p: u32) -> T {
        let row = &mut self.powers[var];
        while row.len() <= p as usize {
            let next = *row.last().unwrap() * self.vars[var];
            row.push(next);
        }
        row[p as usize]
    }

    pub fn eval(&mut self, lambda: &Partition) -> T {
        let n = self.vars.len();
        self.eval_parts(lambda.parts(), n)
    }

    fn eval_parts(&mut self, parts: &[u32], nvars: usize) -> T {
        if parts.len() > nvars {
            return T::zero();
        }
        if parts.is_empty() {
            return T::one();
        }
        let key = (pack(parts), nvars);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        // last variable takes exponent 0 or one of the distinct parts
        let mut total = self.eval_parts(parts, nvars - 1);
        let mut rest = Vec::with_capacity(parts.len());
        for (idx, &p) in parts.iter().enumerate() {
            if idx > 0 && parts[idx - 1] == p {
                continue;
            }
            rest.clear();
            rest.extend_from_slice(&parts[..idx]);
            rest.extend_from_slice(&parts[idx + 1..]);
            let sub = self.eval_parts(&rest, nvars - 1);
            total = total + self.power(nvars - 1, p) * sub;
        }
        self.memo.insert(key, total);
        total
    }
}

/// Evaluates every zonal polynomial of weight `m` in the table at the point
/// held by `eval`. Returns values aligned with `block.polys`.
pub fn evaluate_block<T: Copy + Num + From<f64>>(block: &WeightBlock, eval: &mut MonomialEvaluator<T>) -> Vec<T> {
    let n = eval.nvars();
    let monos: Vec<Option<T>> = block
        .monomials
        .iter()
        .map(|l| (l.len() <= n).then(|| eval.eval(l)))
        .collect();
    block
        .polys
        .iter()
        .map(|poly| {
            if poly.kappa.len() > n {
                return T::zero();
            }
            poly.terms.iter().fold(T::zero(), |acc, &(i, c)| match monos[i] {
                Some(v) => acc + v * T::from(c),
                None => acc,
            })
        })
        .collect()
}

/// `C_κ` at the spectrum `eigs`; exactly zero when κ has more parts than
/// there are eigenvalues.
pub fn zonal_c(kappa: &Partition, eigs: &[f64]) -> Result<f64> {
    if eigs.is_empty() {
        return Err(Error::InvalidParameter("zonal_c needs at least one eigenvalue".into()));
    }
    if kappa.len() > eigs.len() {
        return Ok(0.0);
    }
    let table = shared_table(kappa.weight(), eigs.len(), eigs.len())?;
    let poly = table
        .poly(kappa)?
        .expect("table holds every κ with at most n parts");
    let mut eval = MonomialEvaluator::new(eigs);
    let block = table.block(kappa.weight())?;
    Ok(poly
        .terms
        .iter()
        .map(|&(i, c)| c * eval.eval(&block.monomials[i]))
        .sum())
}

/// `C_κ(X) C_κ(Y) / C_κ(I_n)` for equally sized symmetric `X`, `Y`.
pub fn zonal_two_arg(kappa: &Partition, x: &SymMatrix, y: &SymMatrix) -> Result<f64> {
    let n = x.dim();
    if y.dim() != n {
        return Err(dim_mismatch("zonal_two_arg", n, y.dim()));
    }
    if kappa.len() > n {
        return Ok(0.0);
    }
    let cx = zonal_c(kappa, x.eigenvalues().as_slice())?;
    let cy = zonal_c(kappa, y.eigenvalues().as_slice())?;
    let ci = zonal_c(kappa, &vec![1.0; n])?;
    Ok(cx * cy / ci)
}

/// Exact rational helpers for coefficient dumps.
pub fn rational_to_string(r: &BigRational) -> String {
    if r.denom() == &BigInt::one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(parts: &[u32]) -> Partition {
        Partition::new(parts.to_vec()).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// Brute-force M_λ: sum over all assignments of λ's parts to distinct variables.
    fn monomial_brute(lambda: &[u32], x: &[f64]) -> f64 {
        let n = x.len();
        let mut padded = lambda.to_vec();
        padded.resize(n, 0);
        let mut seen = std::collections::HashSet::new();
        let mut total = 0.0;
        permute(&mut padded, 0, &mut |perm| {
            if seen.insert(perm.to_vec()) {
                total += perm.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product::<f64>();
            }
        });
        total
    }

    fn permute(v: &mut Vec<u32>, k: usize, f: &mut dyn FnMut(&[u32])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn known_low_weight_coefficients() {
        let t = ZonalTable::build(3, 3, 3).unwrap();
        let exact = |kappa: &[u32]| -> Vec<(Partition, BigRational)> {
            let block = t.block(kappa.iter().sum::<u32>() as usize).unwrap();
            let poly = t.poly(&p(kappa)).unwrap().unwrap();
            poly.terms
                .iter()
                .zip(poly.exact.as_ref().unwrap())
                .map(|((i, _), c)| (block.monomials[*i].clone(), c.clone()))
                .collect()
        };
        assert_eq!(exact(&[2]), vec![(p(&[2]), rat(1, 1)), (p(&[1, 1]), rat(2, 3))]);
        assert_eq!(exact(&[1, 1]), vec![(p(&[1, 1]), rat(4, 3))]);
        assert_eq!(
            exact(&[3]),
            vec![(p(&[3]), rat(1, 1)), (p(&[2, 1]), rat(3, 5)), (p(&[1, 1, 1]), rat(2, 5))]
        );
        assert_eq!(exact(&[2, 1]), vec![(p(&[2, 1]), rat(12, 5)), (p(&[1, 1, 1]), rat(18, 5))]);
        assert_eq!(exact(&[1, 1, 1]), vec![(p(&[1, 1, 1]), rat(2, 1))]);
    }

    #[test]
    fn exact_coefficients_sum_to_multinomials() {
        // Σ_κ c_κλ must equal the multinomial m!/∏λ_i! (coefficient of x^λ in p_1^m)
        let t = ZonalTable::build(10, 8, 8).unwrap();
        for block in t.blocks() {
            let m = block.weight;
            for (li, lambda) in block.monomials.iter().enumerate() {
                let mut total = BigRational::zero();
                for poly in &block.polys {
                    for ((i, _), c) in poly.terms.iter().zip(poly.exact.as_ref().unwrap()) {
                        if *i == li {
                            total += c.clone();
                        }
                    }
                }
                let multinomial = lambda
                    .parts()
                    .iter()
                    .fold(factorial::<BigRational>(m), |acc, &part| acc / factorial::<BigRational>(part as usize));
                assert_eq!(total, multinomial, "weight {m}, λ = {lambda}");
            }
        }
    }

    #[test]
    fn monomials_match_brute_force() {
        let x = [0.7, -1.3, 2.1, 0.4];
        let mut eval = MonomialEvaluator::new(&x);
        for m in 0..=7 {
            for lambda in partitions_of(m, 4) {
                let b = monomial_brute(lambda.parts(), &x);
                let v = eval.eval(&lambda);
                assert!((v - b).abs() <= 1e-12 * b.abs().max(1.0), "{lambda}: {v} vs {b}");
            }
        }
    }

    #[test]
    fn spec_examples() {
        assert_eq!(zonal_c(&p(&[1]), &[2.0, 3.0]).unwrap(), 5.0);
        assert_eq!(zonal_c(&p(&[1, 1]), &[4.2]).unwrap(), 0.0);
        let total = zonal_c(&p(&[2]), &[1.0, 1.0]).unwrap() + zonal_c(&p(&[1, 1]), &[1.0, 1.0]).unwrap();
        assert!((total - 4.0).abs() < 1e-14);

        let x = SymMatrix::from_rows(&[vec![1.5, 0.2], vec![0.2, 0.5]]).unwrap();
        let y = SymMatrix::from_rows(&[vec![2.0, -0.4], vec![-0.4, 1.0]]).unwrap();
        let k = p(&[2, 1]);
        let direct = zonal_c(&k, x.eigenvalues().as_slice()).unwrap();
        assert!((zonal_two_arg(&k, &x, &SymMatrix::identity(2)).unwrap() - direct).abs() < 1e-13);
        // tr X = 2, tr Y = 3, tr I = 2
        assert!((zonal_two_arg(&p(&[1]), &x, &y).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(zonal_two_arg(&p(&[2]), &SymMatrix::zeros(2), &y).unwrap(), 0.0);
        assert!(zonal_two_arg(&p(&[1]), &x, &SymMatrix::identity(3)).is_err());
    }

    #[test]
    fn table_exhaustion_is_an_error() {
        let t = ZonalTable::build(4, 2, 2).unwrap();
        assert!(matches!(t.block(5), Err(Error::TableExhausted { requested: 5, max: 4 })));
    }

    #[test]
    fn normalization_homogeneity_and_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=4 {
            for _ in 0..5 {
                let eigs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let tr: f64 = eigs.iter().sum();
                for m in 0..=8 {
                    let total: f64 = partitions_of(m, n).iter().map(|k| zonal_c(k, &eigs).unwrap()).sum();
                    let want = tr.powi(m as i32);
                    let scale: f64 = eigs.iter().map(|v| v.abs()).sum::<f64>().powi(m as i32);
                    assert!((total - want).abs() <= 1e-10 * scale.max(1e-300), "n={n} m={m}");
                }
                let mut shuffled = eigs.clone();
                shuffled.reverse();
                let c = 1.7;
                let scaled: Vec<f64> = eigs.iter().map(|v| v * c).collect();
                for kappa in partitions_of(5, n) {
                    let a = zonal_c(&kappa, &eigs).unwrap();
                    assert!((zonal_c(&kappa, &shuffled).unwrap() - a).abs() <= 1e-12 * a.abs().max(1.0));
                    let b = zonal_c(&kappa, &scaled).unwrap();
                    let want = c.powi(5) * a;
                    assert!((b - want).abs() <= 1e-12 * want.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn float_recurrence_tracks_exact_at_the_boundary() {
        let t = ZonalTable::build(EXACT_WEIGHT_LIMIT, 3, 3).unwrap();
        let block = t.block(EXACT_WEIGHT_LIMIT).unwrap();
        let index: HashMap<u64, usize> = block
            .monomials
            .iter()
            .enumerate()
            .map(|(i, p)| (pack(p.parts()), i))
            .collect();
        for poly in &block.polys {
            let float = recurrence::<f64>(&poly.kappa, &block.monomials, &index);
            assert_eq!(float.len(), poly.terms.len());
            for ((_, f), (_, e)) in float.iter().zip(&poly.terms) {
                assert!((f - e).abs() <= 1e-12 * e.abs());
            }
        }
    }
}
