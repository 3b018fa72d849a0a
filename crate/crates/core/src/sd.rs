//! Exact planar map counts from the Schwinger-Dyson recursion.
//!
//! For a model with stars `q_1..q_n`, the table computes
//!
//! ```text
//! τ^k(X_i P) = Σ_{p ≤ k} Π_j C(k_j, p_j) Σ_{P = P1 X_i P2} τ^p(P1) τ^{k-p}(P2)
//!            + Σ_j k_j τ^{k-1_j}(𝒟_i(F_j) P)
//! τ^k(1)     = 1 if k = 0 else 0
//! ```
//!
//! where the force `F_j` is `q_j + q_j^*` under [`Convention::Doubled`] (the
//! model `V = Σ t_j (q_j + q_j^*)`) and plain `q_j` under
//! [`Convention::Plain`]. In the doubled convention `τ^k(P)` equals the
//! symmetrized count `ℳ(P, (q_1,k_1), ...)`; in the plain one it equals the
//! labeled count `ℳ₀(P, (q_1,k_1), ...)`.
//!
//! The recursion always peels the first letter. Words are memoized verbatim.

use std::collections::HashMap;
use std::fmt;

use dashmap::DashMap;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::ncpoly::Monomial;
use crate::potential::{ParameterAssignment, StarSpec};
use crate::rational::{binomial, factorial, int, pow, powi, to_rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdError {
    #[error("rooted count {0} is not an integer: the star list violates the rooted-map conventions")]
    NonIntegralRootedCount(BigRational),
    #[error("multi-index has {got} entries but the model has {expected} stars")]
    MultiIndexLength { expected: usize, got: usize },
    #[error("free-energy anchors disagree at {index}: {values:?}")]
    InconsistentAnchors { index: MultiIndex, values: Vec<BigUint> },
    #[error("parameter vector has {got} entries but the model has {expected} stars")]
    ParameterLength { expected: usize, got: usize },
    #[error("{0}")]
    Nc(#[from] crate::ncpoly::NcError),
}

/// Which force term each star contributes to the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Convention {
    /// `F_j = q_j + q_j^*`; counts are `ℳ`.
    #[default]
    Doubled,
    /// `F_j = q_j`; counts are `ℳ₀`.
    Plain,
}

/// Star multiplicities `(k_1, ..., k_n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(k: Vec<u32>) -> Self {
        MultiIndex(k)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn unit(n: usize, j: usize) -> Self {
        let mut k = vec![0; n];
        k[j] = 1;
        MultiIndex(k)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    pub fn minus_unit(&self, j: usize) -> MultiIndex {
        let mut k = self.0.clone();
        k[j] -= 1;
        MultiIndex(k)
    }

    pub fn plus_unit(&self, j: usize) -> MultiIndex {
        let mut k = self.0.clone();
        k[j] += 1;
        MultiIndex(k)
    }

    /// `k! = Π k_j!`.
    pub fn factorial(&self) -> BigUint {
        self.0.iter().map(|&k| factorial(k as usize)).product()
    }

    /// Every `p` with `0 <= p_j <= k_j`, in lexicographic order.
    pub fn sub_box(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex(Vec::with_capacity(self.0.len()))];
        for &kj in &self.0 {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..=kj).map(move |v| {
                        let mut next = p.0.clone();
                        next.push(v);
                        MultiIndex(next)
                    })
                })
                .collect();
        }
        out
    }

    /// Every multi-index of length `n` with total at most `max_total`.
    pub fn all_up_to(n: usize, max_total: u32) -> Vec<MultiIndex> {
        let mut out = vec![(Vec::new(), 0u32)];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|(k, used)| {
                    (0..=max_total - used).map(move |v| {
                        let mut next: Vec<u32> = k.clone();
                        next.push(v);
                        (next, used + v)
                    })
                })
                .collect();
        }
        out.into_iter().map(|(k, _)| MultiIndex(k)).collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `C_k`, by the convolution recursion `C_{k+1} = Σ C_p C_{k-p}`.
pub fn catalan(k: usize) -> BigUint {
    let mut c = vec![BigUint::one()];
    for n in 0..k {
        let next = (0..=n).map(|p| &c[p] * &c[n - p]).sum();
        c.push(next);
    }
    c.swap_remove(k)
}

/// Moment of `m` free semicircular variables: the number of color-respecting
/// non-crossing pairings of the letters.
pub fn semicircle_moment(word: &Monomial) -> BigUint {
    fn go(w: &[u8], memo: &mut HashMap<Vec<u8>, BigUint>) -> BigUint {
        if w.is_empty() {
            return BigUint::one();
        }
        if w.len() % 2 == 1 {
            return BigUint::zero();
        }
        if let Some(v) = memo.get(w) {
            return v.clone();
        }
        let head = w[0];
        let rest = &w[1..];
        let mut total = BigUint::zero();
        for (pos, &c) in rest.iter().enumerate() {
            if c == head {
                let left = go(&rest[..pos], memo);
                if !left.is_zero() {
                    total += left * go(&rest[pos + 1..], memo);
                }
            }
        }
        memo.insert(w.to_vec(), total.clone());
        total
    }
    go(word.letters(), &mut HashMap::new())
}

/// Memoized table of `τ^k(P)`.
pub struct MapCountTable {
    spec: StarSpec,
    convention: Convention,
    /// `forces[j][i]`: the terms of `𝒟_i F_j` with their integer multiplicities.
    forces: Vec<Vec<Vec<(Vec<u8>, BigUint)>>>,
    /// Per-star color-count vector, used for the parity shortcut.
    star_colors: Vec<Vec<usize>>,
    memo: DashMap<(Monomial, MultiIndex), BigUint>,
}

impl MapCountTable {
    pub fn new(spec: StarSpec) -> Self {
        Self::with_convention(spec, Convention::Doubled)
    }

    pub fn with_convention(spec: StarSpec, convention: Convention) -> Self {
        let m = spec.alphabet();
        let forces = (0..spec.len())
            .map(|j| {
                let force = match convention {
                    Convention::Doubled => spec.symmetrized(j),
                    Convention::Plain => {
                        crate::ncpoly::NCPolynomial::monomial(m, spec.word(j).clone()).expect("validated by StarSpec")
                    }
                };
                (0..m)
                    .map(|i| {
                        force
                            .cyclic_derivative(i)
                            .expect("color in range")
                            .terms()
                            .map(|(w, c)| {
                                let c = c.to_integer();
                                let c = c.to_biguint().expect("forces have non-negative coefficients");
                                (w.letters().to_vec(), c)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let star_colors = spec.terms().iter().map(|t| t.word.color_counts(m)).collect();
        MapCountTable {
            spec,
            convention,
            forces,
            star_colors,
            memo: DashMap::new(),
        }
    }

    pub fn spec(&self) -> &StarSpec {
        &self.spec
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }

    /// Snapshot of every memoized `((P, k), τ^k(P))`.
    pub fn memo_entries(&self) -> Vec<(Monomial, MultiIndex, BigUint)> {
        let mut out: Vec<_> = self
            .memo
            .iter()
            .map(|e| (e.key().0.clone(), e.key().1.clone(), e.value().clone()))
            .collect();
        out.sort_by(|a, b| (&a.1, &a.0).cmp(&(&b.1, &b.0)));
        out
    }

    fn check_index(&self, k: &MultiIndex) -> Result<(), SdError> {
        if k.len() != self.spec.len() {
            return Err(SdError::MultiIndexLength {
                expected: self.spec.len(),
                got: k.len(),
            });
        }
        Ok(())
    }

    /// True when some color appears an odd number of times in total, which
    /// forces the count to vanish.
    fn parity_obstructed(&self, word: &[u8], k: &MultiIndex) -> bool {
        let m = self
            .spec
            .alphabet()
            .max(word.iter().map(|&c| c as usize + 1).max().unwrap_or(0));
        let mut counts = vec![0usize; m];
        for &c in word {
            counts[c as usize] += 1;
        }
        for (j, &kj) in k.0.iter().enumerate() {
            for (c, &n) in self.star_colors[j].iter().enumerate() {
                counts[c] += n * kj as usize;
            }
        }
        counts.iter().any(|n| n % 2 == 1)
    }

    /// `τ^k(P)`: the number of labeled planar maps with one root star `P` and
    /// `k_j` stars of type `q_j` (or `q_j^*` in the doubled convention).
    pub fn map_count(&self, word: &Monomial, k: &MultiIndex) -> Result<BigUint, SdError> {
        self.check_index(k)?;
        Ok(self.tau(word.letters(), k))
    }

    fn tau(&self, word: &[u8], k: &MultiIndex) -> BigUint {
        if word.is_empty() {
            return if k.is_zero() { BigUint::one() } else { BigUint::zero() };
        }
        if self.parity_obstructed(word, k) {
            return BigUint::zero();
        }
        let key = (Monomial::from(word), k.clone());
        if let Some(v) = self.memo.get(&key) {
            return v.clone();
        }
        let value = self.expand(word, k);
        self.memo.insert(key, value.clone());
        value
    }

    fn expand(&self, word: &[u8], k: &MultiIndex) -> BigUint {
        let head = word[0];
        let rest = &word[1..];
        let mut total = BigUint::zero();

        // splitting term: the root's first branch glues to another branch of the root
        let splits: Vec<usize> = rest
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == head)
            .map(|(p, _)| p)
            .collect();
        if !splits.is_empty() {
            for p in k.sub_box() {
                let weight: BigUint =
                    p.0.iter()
                        .zip(&k.0)
                        .map(|(&pj, &kj)| binomial(kj as usize, pj as usize))
                        .product();
                let q = MultiIndex(k.0.iter().zip(&p.0).map(|(kj, pj)| kj - pj).collect());
                let mut inner = BigUint::zero();
                for &pos in &splits {
                    let left = self.tau(&rest[..pos], &p);
                    if left.is_zero() {
                        continue;
                    }
                    inner += left * self.tau(&rest[pos + 1..], &q);
                }
                total += weight * inner;
            }
        }

        // star term: the root's first branch glues to a branch of one of the k_j stars
        for (j, &kj) in k.0.iter().enumerate() {
            if kj == 0 {
                continue;
            }
            let smaller = k.minus_unit(j);
            let mut inner = BigUint::zero();
            for (force, mult) in &self.forces[j][head as usize] {
                let mut next = Vec::with_capacity(force.len() + rest.len());
                next.extend_from_slice(force);
                next.extend_from_slice(rest);
                inner += mult * self.tau(&next, &smaller);
            }
            total += BigUint::from(kj) * inner;
        }
        total
    }

    /// Fills the table for many cells in parallel. Results are identical to
    /// sequential evaluation since every cell has a unique value.
    pub fn map_counts_parallel(&self, cells: &[(Monomial, MultiIndex)]) -> Result<Vec<BigUint>, SdError> {
        for (_, k) in cells {
            self.check_index(k)?;
        }
        Ok(cells.par_iter().map(|(w, k)| self.tau(w.letters(), k)).collect())
    }

    /// Rooted (unlabeled) count `ℳ / Π k_j! s(q_j)^{k_j}`.
    pub fn rooted_count(&self, word: &Monomial, k: &MultiIndex) -> Result<BigUint, SdError> {
        let labeled = self.map_count(word, k)?;
        let mut divisor = BigUint::one();
        for (j, &kj) in k.0.iter().enumerate() {
            let s = self.spec.word(j).symmetry_degree()?;
            divisor *= factorial(kj as usize) * num_traits::pow(BigUint::from(s), kj as usize);
        }
        let value = BigRational::new(BigInt::from(labeled), BigInt::from(divisor));
        if value.is_integer() {
            Ok(value.to_integer().to_biguint().expect("non-negative"))
        } else {
            Err(SdError::NonIntegralRootedCount(value))
        }
    }

    /// Whether the model can produce a nonzero count for `word` at any `k`:
    /// the word's color-parity vector must lie in the GF(2) span of the stars'.
    pub fn parity_reachable(&self, word: &Monomial) -> bool {
        let to_mask = |counts: &[usize]| -> u64 {
            counts
                .iter()
                .enumerate()
                .fold(0u64, |acc, (c, n)| acc | (((n % 2) as u64) << c))
        };
        let m = self.spec.alphabet().max(word.min_alphabet());
        let mut basis: Vec<u64> = Vec::new();
        for counts in &self.star_colors {
            let mut v = to_mask(counts);
            for b in &basis {
                v = v.min(v ^ b);
            }
            if v != 0 {
                basis.push(v);
                basis.sort_unstable_by(|a, b| b.cmp(a));
            }
        }
        let mut target = to_mask(&word.color_counts(m));
        for b in &basis {
            target = target.min(target ^ b);
        }
        target == 0
    }

    fn check_params(&self, params: &ParameterAssignment) -> Result<(), SdError> {
        if params.len() != self.spec.len() {
            return Err(SdError::ParameterLength {
                expected: self.spec.len(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// `Π (-t_j)^{k_j} / k_j!`.
    fn series_weight(params: &ParameterAssignment, k: &MultiIndex) -> BigRational {
        let mut w = BigRational::one();
        for (t, &kj) in params.values().iter().zip(&k.0) {
            w *= pow(&-t.clone(), kj as usize);
        }
        w / to_rational(&k.factorial())
    }

    /// Partial sum of `τ_t(P) = Σ_k Π (-t_j)^{k_j}/k_j! τ^k(P)` over `|k| <= order`,
    /// with a bound on the discarded tail.
    pub fn series_eval(
        &self,
        word: &Monomial,
        params: &ParameterAssignment,
        order: u32,
        bound: &TruncationBound,
    ) -> Result<SeriesValue, SdError> {
        self.check_params(params)?;
        let indices = MultiIndex::all_up_to(self.spec.len(), order);
        let cells: Vec<_> = indices.iter().map(|k| (word.clone(), k.clone())).collect();
        let counts = self.map_counts_parallel(&cells)?;
        let mut partial = BigRational::zero();
        for (k, count) in indices.iter().zip(&counts) {
            if !count.is_zero() {
                partial += Self::series_weight(params, k) * to_rational(count);
            }
        }
        let tail = if !self.parity_reachable(word) {
            Some(BigRational::zero())
        } else {
            bound.tail(params, order, word.degree())
        };
        Ok(SeriesValue { partial, tail })
    }

    /// `ℳ(k)` for the star list alone, via `ℳ(k + 1_j) = τ^k(F_j)`. Every
    /// available anchor `j` is evaluated and they must agree.
    pub fn unrooted_count(&self, k: &MultiIndex) -> Result<BigUint, SdError> {
        self.check_index(k)?;
        if k.is_zero() {
            return Ok(BigUint::zero());
        }
        let mut values = Vec::new();
        for j in (0..k.len()).filter(|&j| k.0[j] > 0) {
            let smaller = k.minus_unit(j);
            let q = self.spec.word(j);
            let anchor = match self.convention {
                Convention::Doubled => self.tau(q.letters(), &smaller) + self.tau(q.adjoint().letters(), &smaller),
                Convention::Plain => self.tau(q.letters(), &smaller),
            };
            values.push(anchor);
        }
        if values.windows(2).any(|w| w[0] != w[1]) {
            return Err(SdError::InconsistentAnchors {
                index: k.clone(),
                values,
            });
        }
        Ok(values.swap_remove(0))
    }

    /// `F = Σ_{k ≠ 0} Π (-t_j)^{k_j}/k_j! ℳ(k)` truncated at `|k| <= order`.
    pub fn free_energy_series(&self, params: &ParameterAssignment, order: u32) -> Result<FreeEnergySeries, SdError> {
        self.check_params(params)?;
        let mut coefficients = Vec::new();
        let mut partial = BigRational::zero();
        for k in MultiIndex::all_up_to(self.spec.len(), order) {
            if k.is_zero() {
                continue;
            }
            let count = self.unrooted_count(&k)?;
            if !count.is_zero() {
                partial += Self::series_weight(params, &k) * to_rational(&count);
            }
            coefficients.push((k, count));
        }
        Ok(FreeEnergySeries { partial, coefficients })
    }

    /// `χ = -Σ_{k ≠ 0} Π (-t_j)^{k_j}/k_j! (|k| - 1) ℳ(k)`, together with the
    /// two pieces of `χ = τ_t(V_t) + F_t` truncated consistently.
    pub fn entropy_series(&self, params: &ParameterAssignment, order: u32) -> Result<EntropySeries, SdError> {
        let free = self.free_energy_series(params, order)?;
        let mut entropy = BigRational::zero();
        for (k, count) in &free.coefficients {
            let weight = int(k.total() as i64 - 1);
            entropy -= Self::series_weight(params, k) * weight * to_rational(count);
        }
        // τ_t(V) with |k| <= order - 1 so that t_j τ^k lands on |k'| <= order
        let mut potential_term = BigRational::zero();
        if order > 0 {
            for k in MultiIndex::all_up_to(self.spec.len(), order - 1) {
                let w = Self::series_weight(params, &k);
                for (j, t) in params.values().iter().enumerate() {
                    if t.is_zero() {
                        continue;
                    }
                    let q = self.spec.word(j);
                    let value = match self.convention {
                        Convention::Doubled => self.tau(q.letters(), &k) + self.tau(q.adjoint().letters(), &k),
                        Convention::Plain => self.tau(q.letters(), &k),
                    };
                    potential_term += &w * t * to_rational(&value);
                }
            }
        }
        Ok(EntropySeries {
            partial: entropy,
            potential_term,
            free_energy: free.partial,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesValue {
    pub partial: BigRational,
    /// `None` when the couplings lie outside the certified disc.
    pub tail: Option<BigRational>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeEnergySeries {
    pub partial: BigRational,
    /// `(k, ℳ(k))` for every `0 < |k| <= order`.
    pub coefficients: Vec<(MultiIndex, BigUint)>,
}

impl FreeEnergySeries {
    pub fn coefficient(&self, k: &MultiIndex) -> Option<&BigUint> {
        self.coefficients.iter().find(|(kk, _)| kk == k).map(|(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntropySeries {
    pub partial: BigRational,
    pub potential_term: BigRational,
    pub free_energy: BigRational,
}

/// Growth constants with `|τ^k(P)/k!| <= A^{|k|} B^{deg P} Π C_{k_j} C_{deg P}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationBound {
    pub a: BigRational,
    pub b: BigRational,
}

impl TruncationBound {
    /// `B = 2^{n+1}`, `A = 4 n B^{D-2} 4^{D-2}`.
    pub fn default_for(spec: &StarSpec) -> Self {
        let n = spec.len();
        let d = spec.max_degree() as i64;
        let b = int(1i64 << (n + 1));
        let a = int(4 * n as i64) * powi(&b, d - 2) * powi(&int(4), d - 2);
        TruncationBound { a, b }
    }

    /// Left-hand side of `4^n/B² + 2 Σ_j B^{deg q_j - 2} 4^{deg q_j - 2} / A <= 1`.
    pub fn constraint(&self, spec: &StarSpec) -> BigRational {
        let n = spec.len();
        let mut sum = BigRational::zero();
        for t in spec.terms() {
            let e = t.word.degree() as i64 - 2;
            sum += powi(&self.b, e) * powi(&int(4), e);
        }
        let first = pow(&int(4), n) / (&self.b * &self.b);
        if self.a.is_zero() {
            return if sum.is_zero() {
                first
            } else {
                BigRational::from_integer(BigInt::from(u64::MAX))
            };
        }
        first + int(2) * sum / &self.a
    }

    pub fn is_valid(&self, spec: &StarSpec) -> bool {
        self.b >= int(2) && self.constraint(spec) <= BigRational::one()
    }

    /// Searches rational `B = 2^n (1 + i/16)` and takes the smallest admissible
    /// `A` for each, keeping the pair with the smallest `A`.
    pub fn tightened(spec: &StarSpec) -> Self {
        let n = spec.len();
        let default = Self::default_for(spec);
        if n == 0 {
            return default;
        }
        let base = int(1i64 << n);
        let mut best = default;
        for i in 1..=128i64 {
            let b = &base * BigRational::new(BigInt::from(16 + i), BigInt::from(16));
            if b < int(2) {
                continue;
            }
            let slack = BigRational::one() - pow(&int(4), n) / (&b * &b);
            if !slack.is_positive() {
                continue;
            }
            let mut sum = BigRational::zero();
            for t in spec.terms() {
                let e = t.word.degree() as i64 - 2;
                sum += powi(&b, e) * powi(&int(4), e);
            }
            let a = int(2) * sum / slack;
            if a < best.a {
                best = TruncationBound { a, b };
            }
        }
        debug_assert!(best.is_valid(spec));
        best
    }

    /// `A^{|k|} B^{deg P} Π C_{k_j} C_{deg P}`.
    pub fn entry_bound(&self, k: &MultiIndex, degree: usize) -> BigRational {
        let mut v = pow(&self.a, k.total() as usize) * pow(&self.b, degree) * to_rational(&catalan(degree));
        for &kj in k.entries() {
            v *= to_rational(&catalan(kj as usize));
        }
        v
    }

    /// Ratios `ρ_j = 4 A |t_j|`; the series is certified when all are `< 1`.
    fn ratios(&self, params: &ParameterAssignment) -> Vec<BigRational> {
        params.values().iter().map(|t| int(4) * &self.a * t.abs()).collect()
    }

    pub fn certifies(&self, params: &ParameterAssignment) -> bool {
        self.ratios(params).iter().all(|r| r < &BigRational::one())
    }

    /// `B^d C_d [Π_j 1/(1-ρ_j) - Σ_{|k| <= K} Π ρ_j^{k_j}]`, using `C_k <= 4^k`.
    pub fn tail(&self, params: &ParameterAssignment, order: u32, degree: usize) -> Option<BigRational> {
        let ratios = self.ratios(params);
        if ratios.iter().any(|r| r >= &BigRational::one()) {
            return None;
        }
        let full: BigRational = ratios.iter().map(|r| (BigRational::one() - r).recip()).product();
        let mut head = BigRational::zero();
        for k in MultiIndex::all_up_to(ratios.len(), order) {
            head += k
                .entries()
                .iter()
                .zip(&ratios)
                .map(|(&kj, r)| pow(r, kj as usize))
                .product::<BigRational>();
        }
        Some(pow(&self.b, degree) * to_rational(&catalan(degree)) * (full - head))
    }
}
