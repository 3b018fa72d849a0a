//! The two-matrix Ising model `V = Σ_j t_j A^{2j} + Σ_j u_j B^{2j} - c AB`.
//!
//! Three routes to the planar limit are kept side by side:
//!
//! * [`ising_series`]: the recursion with labeled stars `A^{2j}`, `B^{2j}`, `AB`;
//! * [`dressed_series`]: maps in which no two `AB` stars are glued, each
//!   underlying edge dressed by a geometric series in `c²`;
//! * [`bms_series`]: the algebraic equation for quasi-tetravalent Ising maps
//!   solved order by order.
//!
//! A series here is a table of exact coefficients of the monomials
//! `Π t_j^{a_j} u_j^{b_j} c^r`; couplings only enter through [`IsingSeries::evaluate`].

use std::collections::{BTreeMap, HashMap};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::ncpoly::Monomial;
use crate::oracle::{count_ising_filtered, count_ising_rooted, IsingStars, OracleError};
use crate::potential::StarSpec;
use crate::rational::{binomial, factorial, int, pow, to_rational};
use crate::sd::{Convention, MapCountTable, MultiIndex, SdError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsingError {
    #[error("u² = 1 makes the order-zero equation singular")]
    SingularU,
    #[error("the substitution is singular at these values: {0}")]
    Singular(String),
    #[error("the root word must use the two colors A = x1 and B = x2 only")]
    RootAlphabet,
    #[error("dressed counts are not integral at {0:?}")]
    NonIntegral(IsingIndex),
    #[error(transparent)]
    Sd(#[from] SdError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Couplings of `A^{2j}` (`t_a[j-1]`), `B^{2j}` (`t_b[j-1]`) and `AB` (`c`).
/// Only stars with a nonzero coupling take part in the expansion.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IsingCouplings {
    pub t_a: Vec<BigRational>,
    pub t_b: Vec<BigRational>,
    pub c: BigRational,
}

impl IsingCouplings {
    fn active(ts: &[BigRational]) -> Vec<usize> {
        ts.iter()
            .enumerate()
            .filter(|(_, t)| !t.is_zero())
            .map(|(j, _)| j + 1)
            .collect()
    }

    /// Half-degrees `j` of the active `A^{2j}` stars.
    pub fn active_a(&self) -> Vec<usize> {
        Self::active(&self.t_a)
    }

    pub fn active_b(&self) -> Vec<usize> {
        Self::active(&self.t_b)
    }

    pub fn has_coupling(&self) -> bool {
        !self.c.is_zero()
    }
}

/// Star multiplicities: `a[j-1]` copies of `A^{2j}`, `b[j-1]` of `B^{2j}`, `r` of `AB`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IsingIndex {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub r: u32,
}

impl IsingIndex {
    pub fn total(&self) -> u32 {
        self.a.iter().sum::<u32>() + self.b.iter().sum::<u32>() + self.r
    }

    fn stars(&self) -> IsingStars {
        IsingStars {
            a: self.a.iter().map(|&k| k as usize).collect(),
            b: self.b.iter().map(|&k| k as usize).collect(),
            r: self.r as usize,
        }
    }

    /// `Π_j k_j!` over both colors (the `AB` factorial is kept apart).
    fn star_factorials(&self) -> BigUint {
        self.a.iter().chain(&self.b).map(|&k| factorial(k as usize)).product()
    }

    fn sign(&self) -> BigRational {
        let n = self.a.iter().sum::<u32>() + self.b.iter().sum::<u32>();
        if n % 2 == 0 {
            BigRational::one()
        } else {
            -BigRational::one()
        }
    }

    /// Number of edges once every `AB` star is contracted into the edge it sits on.
    fn underlying_edges(&self, root: &Monomial) -> usize {
        let weighted = |ks: &[u32]| ks.iter().enumerate().map(|(j, &k)| (j + 1) * k as usize).sum::<usize>();
        root.degree() / 2 + weighted(&self.a) + weighted(&self.b)
    }
}

/// Exact coefficients of `Π t^a u^b c^r` in a moment `μ(root)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsingSeries {
    pub root: Monomial,
    pub order: u32,
    pub coefficients: BTreeMap<IsingIndex, BigRational>,
}

impl IsingSeries {
    pub fn coefficient(&self, index: &IsingIndex) -> BigRational {
        self.coefficients.get(index).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Partial sum at the given couplings.
    pub fn evaluate(&self, couplings: &IsingCouplings) -> BigRational {
        let mut total = BigRational::zero();
        for (idx, coeff) in &self.coefficients {
            let mut term = coeff.clone();
            for (j, &k) in idx.a.iter().enumerate() {
                term *= pow(couplings.t_a.get(j).unwrap_or(&BigRational::zero()), k as usize);
            }
            for (j, &k) in idx.b.iter().enumerate() {
                term *= pow(couplings.t_b.get(j).unwrap_or(&BigRational::zero()), k as usize);
            }
            term *= pow(&couplings.c, idx.r as usize);
            total += term;
        }
        total
    }
}

fn check_root(root: &Monomial) -> Result<(), IsingError> {
    if root.letters().iter().any(|&c| c > 1) {
        return Err(IsingError::RootAlphabet);
    }
    Ok(())
}

/// All indices over the active stars with total at most `order`.
fn indices(couplings: &IsingCouplings, order: u32) -> Vec<IsingIndex> {
    let (ja, jb) = (couplings.active_a(), couplings.active_b());
    let dims = ja.len() + jb.len() + usize::from(couplings.has_coupling());
    let la = couplings.t_a.len();
    let lb = couplings.t_b.len();
    MultiIndex::all_up_to(dims, order)
        .into_iter()
        .map(|k| {
            let e = k.entries();
            let mut a = vec![0; la];
            let mut b = vec![0; lb];
            for (p, &j) in ja.iter().enumerate() {
                a[j - 1] = e[p];
            }
            for (p, &j) in jb.iter().enumerate() {
                b[j - 1] = e[ja.len() + p];
            }
            let r = if couplings.has_coupling() { e[dims - 1] } else { 0 };
            IsingIndex { a, b, r }
        })
        .collect()
}

/// The recursion's star list for the active stars, in index order.
fn ising_table(couplings: &IsingCouplings) -> (MapCountTable, Vec<(usize, usize)>) {
    let mut words = Vec::new();
    let mut slots = Vec::new();
    for j in couplings.active_a() {
        words.push(Monomial::power(0, 2 * j));
        slots.push((0, j));
    }
    for j in couplings.active_b() {
        words.push(Monomial::power(1, 2 * j));
        slots.push((1, j));
    }
    if couplings.has_coupling() {
        words.push(Monomial::new(vec![0, 1]));
        slots.push((2, 0));
    }
    let spec = StarSpec::new(2, words).expect("distinct Ising stars");
    (MapCountTable::with_convention(spec, Convention::Plain), slots)
}

fn to_multi(index: &IsingIndex, slots: &[(usize, usize)]) -> MultiIndex {
    MultiIndex::new(
        slots
            .iter()
            .map(|&(kind, j)| match kind {
                0 => index.a[j - 1],
                1 => index.b[j - 1],
                _ => index.r,
            })
            .collect(),
    )
}

/// `μ(root)` through total order `order`: the coefficient of `Π t^a u^b c^r` is
/// `(-1)^{|a|+|b|} / (Π a_j! b_j! r!) · ℳ₀(root, (A^{2j}, a_j), (B^{2j}, b_j), (AB, r))`,
/// with `+c` since the potential carries `-cAB`.
pub fn ising_series(couplings: &IsingCouplings, root: &Monomial, order: u32) -> Result<IsingSeries, IsingError> {
    check_root(root)?;
    let (table, slots) = ising_table(couplings);
    let mut coefficients = BTreeMap::new();
    for idx in indices(couplings, order) {
        let m0 = table.map_count(root, &to_multi(&idx, &slots))?;
        let denom = idx.star_factorials() * factorial(idx.r as usize);
        let value = idx.sign() * BigRational::new(BigInt::from(m0), BigInt::from(denom));
        coefficients.insert(idx, value);
    }
    Ok(IsingSeries {
        root: root.clone(),
        order,
        coefficients,
    })
}

/// `(1-c²)^{-e} = Σ_n C(e+n-1, n) c^{2n}`.
fn dressing_coefficient(e: usize, n: usize) -> BigUint {
    if n == 0 {
        BigUint::one()
    } else if e == 0 {
        BigUint::zero()
    } else {
        binomial(e + n - 1, n)
    }
}

/// The dressed expansion
/// `μ(P) = (1-c²)^{-deg P/2} Σ Π_j (1/k_j!) (-t_j / (1-c²)^j)^{k_j} (c^r / r!) ℐ(k, r, P)`
/// re-expanded in `c` through total order `order`. `filtered` supplies `ℐ`.
pub fn dressed_series_with<F>(
    couplings: &IsingCouplings,
    root: &Monomial,
    order: u32,
    mut filtered: F,
) -> Result<IsingSeries, IsingError>
where
    F: FnMut(&Monomial, &IsingIndex) -> Result<BigUint, IsingError>,
{
    check_root(root)?;
    let mut coefficients = BTreeMap::new();
    for idx in indices(couplings, order) {
        let e = idx.underlying_edges(root);
        let mut sum = BigRational::zero();
        for n in 0..=(idx.r / 2) {
            let inner = IsingIndex {
                r: idx.r - 2 * n,
                ..idx.clone()
            };
            let count = filtered(root, &inner)?;
            if count.is_zero() {
                continue;
            }
            let weight = dressing_coefficient(e, n as usize) * count;
            sum += BigRational::new(BigInt::from(weight), BigInt::from(factorial(inner.r as usize)));
        }
        let value = idx.sign() * sum / to_rational(&idx.star_factorials());
        coefficients.insert(idx, value);
    }
    Ok(IsingSeries {
        root: root.clone(),
        order,
        coefficients,
    })
}

/// [`dressed_series_with`] using brute-force `ℐ` counts from the gluing oracle.
pub fn dressed_series(couplings: &IsingCouplings, root: &Monomial, order: u32) -> Result<IsingSeries, IsingError> {
    let mut seen: HashMap<IsingIndex, BigUint> = HashMap::new();
    dressed_series_with(couplings, root, order, |root, idx| {
        if let Some(v) = seen.get(idx) {
            return Ok(v.clone());
        }
        let v = BigUint::from(filtered_count(root, idx)?);
        seen.insert(idx.clone(), v.clone());
        Ok(v)
    })
}

/// `ℐ(k, r, P)` by brute force.
pub fn filtered_count(root: &Monomial, index: &IsingIndex) -> Result<u64, IsingError> {
    let root = if root.is_unit() { None } else { Some(root) };
    Ok(count_ising_filtered(root, &index.stars())?)
}

/// `𝒥(k, r, P)` by brute force.
pub fn rooted_filtered_count(root: &Monomial, index: &IsingIndex) -> Result<u64, IsingError> {
    Ok(count_ising_rooted(root, &index.stars())?)
}

/// `r! Π_j k_j! (2j)^{k_j}`, the labeling factor between `𝒥` and `ℐ`.
pub fn relabeling_factor(index: &IsingIndex) -> BigUint {
    index.stars().relabeling_factor()
}

/// `ℐ` recovered from the recursion by peeling off the dressing:
/// `ℐ(k,r)/r! = ℳ₀(k,r)/r! - Σ_{n ≥ 1} C(e+n-1, n) ℐ(k,r-2n)/(r-2n)!`.
pub fn filtered_counts_via_recursion(
    couplings: &IsingCouplings,
    root: &Monomial,
    order: u32,
) -> Result<BTreeMap<IsingIndex, BigUint>, IsingError> {
    check_root(root)?;
    let (table, slots) = ising_table(couplings);
    let mut out: BTreeMap<IsingIndex, BigUint> = BTreeMap::new();
    let mut all = indices(couplings, order);
    all.sort_by_key(|idx| idx.r);
    for idx in all {
        let e = idx.underlying_edges(root);
        let m0 = table.map_count(root, &to_multi(&idx, &slots))?;
        let mut value = BigRational::new(BigInt::from(m0), BigInt::from(factorial(idx.r as usize)));
        for n in 1..=(idx.r / 2) {
            let inner = IsingIndex {
                r: idx.r - 2 * n,
                ..idx.clone()
            };
            let known = out.get(&inner).cloned().unwrap_or_default();
            value -= BigRational::new(
                BigInt::from(dressing_coefficient(e, n as usize) * known),
                BigInt::from(factorial(inner.r as usize)),
            );
        }
        let scaled = value * to_rational(&factorial(idx.r as usize));
        if !scaled.is_integer() || scaled.is_negative() {
            return Err(IsingError::NonIntegral(idx));
        }
        out.insert(idx, scaled.to_integer().to_biguint().expect("non-negative"));
    }
    Ok(out)
}

/// Truncated power series in two variables with exact coefficients;
/// every coefficient of total degree `≤ order` is stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BivariateSeries {
    order: usize,
    coeffs: BTreeMap<(usize, usize), BigRational>,
}

impl BivariateSeries {
    pub fn zero(order: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        for d in 0..=order {
            for i in 0..=d {
                coeffs.insert((i, d - i), BigRational::zero());
            }
        }
        BivariateSeries { order, coeffs }
    }

    pub fn constant(order: usize, c: BigRational) -> Self {
        let mut s = Self::zero(order);
        s.coeffs.insert((0, 0), c);
        s
    }

    pub fn monomial(order: usize, i: usize, j: usize, c: BigRational) -> Self {
        let mut s = Self::zero(order);
        if i + j <= order {
            s.coeffs.insert((i, j), c);
        }
        s
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficient(&self, i: usize, j: usize) -> BigRational {
        self.coeffs.get(&(i, j)).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn set(&mut self, i: usize, j: usize, c: BigRational) {
        if i + j <= self.order {
            self.coeffs.insert((i, j), c);
        }
    }

    pub fn coefficients(&self) -> impl Iterator<Item = (&(usize, usize), &BigRational)> {
        self.coeffs.iter()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.coeffs {
            *out.coeffs.entry(*k).or_insert_with(BigRational::zero) += v;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-BigRational::one()))
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        BivariateSeries {
            order: self.order,
            coeffs: self.coeffs.iter().map(|(k, v)| (*k, v * c)).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.order);
        for (&(i1, j1), a) in &self.coeffs {
            if a.is_zero() {
                continue;
            }
            for (&(i2, j2), b) in &other.coeffs {
                if b.is_zero() || i1 + i2 + j1 + j2 > self.order {
                    continue;
                }
                *out.coeffs.get_mut(&(i1 + i2, j1 + j2)).expect("within order") += a * b;
            }
        }
        out
    }

    pub fn pow(&self, n: usize) -> Self {
        (0..n).fold(Self::constant(self.order, BigRational::one()), |acc, _| acc.mul(self))
    }

    /// Multiplicative inverse; the constant term must be nonzero.
    pub fn inverse(&self) -> Option<Self> {
        let c0 = self.coefficient(0, 0);
        if c0.is_zero() {
            return None;
        }
        // 1/(c0 (1 + w)) = (1/c0) Σ (-w)^n with w of positive degree
        let inv0 = c0.recip();
        let w = self.scale(&inv0).sub(&Self::constant(self.order, BigRational::one()));
        let mut term = Self::constant(self.order, BigRational::one());
        let mut sum = term.clone();
        let minus_w = w.scale(&-BigRational::one());
        for _ in 0..self.order {
            term = term.mul(&minus_w);
            sum = sum.add(&term);
        }
        Some(sum.scale(&inv0))
    }

    /// `f(sx·X, sy·Y)`.
    pub fn rescale(&self, sx: &BigRational, sy: &BigRational) -> Self {
        BivariateSeries {
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .map(|(&(i, j), v)| ((i, j), v * pow(sx, i) * pow(sy, j)))
                .collect(),
        }
    }
}

/// Which prefactor multiplies the bracket in the formula for `I(X,Y,u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsingNormalization {
    /// `(1 - u^{-2})`, as in the combinatorial source.
    InverseSquare,
    /// `(1 - u²)`, as in the identification with the matrix model.
    Square,
}

/// `P(x, y)` at fixed `u` and the generating function `I(X, Y, u)` built from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmsSolution {
    pub u: BigRational,
    pub p: BivariateSeries,
    /// The bracket of the `I` formula, in `(X, Y)` after `x = X(u - 1/u)²`.
    pub bracket: BivariateSeries,
}

impl BmsSolution {
    pub fn generating_function(&self, normalization: IsingNormalization) -> BivariateSeries {
        let u2 = &self.u * &self.u;
        let prefactor = match normalization {
            IsingNormalization::InverseSquare => BigRational::one() - u2.recip(),
            IsingNormalization::Square => BigRational::one() - u2,
        };
        self.bracket.scale(&prefactor)
    }
}

/// Solves `P = 1 + 3xyP³ + P(1+3xP)(1+3yP) / (u²(1-9xyP²)²)` degree by degree.
///
/// Clearing the denominator gives `H(P) = 0` with
/// `H = (1 + 3xyP³)(1-9xyP²)² + u^{-2} P(1+3xP)(1+3yP) - P(1-9xyP²)²`, whose
/// degree-`n` part is `(u^{-2} - 1) P_n` plus terms in lower coefficients.
pub fn bms_series(u: &BigRational, order: usize) -> Result<BmsSolution, IsingError> {
    let u2 = u * u;
    if u2.is_one() || u.is_zero() {
        return Err(IsingError::SingularU);
    }
    let inv_u2 = u2.recip();
    let pivot = BigRational::one() - &inv_u2;
    let one = BivariateSeries::constant(order, BigRational::one());
    let x = BivariateSeries::monomial(order, 1, 0, BigRational::one());
    let y = BivariateSeries::monomial(order, 0, 1, BigRational::one());
    let xy = x.mul(&y);
    let h = |p: &BivariateSeries| -> BivariateSeries {
        let p2 = p.mul(p);
        let p3 = p2.mul(p);
        let den = one.sub(&xy.mul(&p2).scale(&int(9))).pow(2);
        let first = one.add(&xy.mul(&p3).scale(&int(3))).mul(&den);
        let second = p
            .mul(&one.add(&x.mul(p).scale(&int(3))))
            .mul(&one.add(&y.mul(p).scale(&int(3))))
            .scale(&inv_u2);
        first.add(&second).sub(&p.mul(&den))
    };
    let mut p = BivariateSeries::zero(order);
    for n in 0..=order {
        let residual = h(&p);
        for i in 0..=n {
            let value = residual.coefficient(i, n - i) / &pivot;
            p.set(i, n - i, value);
        }
    }
    let p2 = p.mul(&p);
    let p3 = p2.mul(&p);
    let denom = one.sub(&xy.mul(&p2).scale(&int(9)));
    let inv = denom.inverse().expect("constant term 1");
    let term1 = x.mul(&p3);
    let numer = one
        .sub(&x.mul(&p).scale(&int(3)))
        .sub(&x.mul(&p2).scale(&int(2)))
        .sub(&xy.mul(&p3).scale(&int(6)));
    let term2 = p.mul(&numer).mul(&inv);
    let cube = one.add(&x.mul(&p).scale(&int(3))).pow(3);
    let term3 = y.mul(&p3).mul(&cube).mul(&inv.pow(3)).scale(&inv_u2);
    let bracket_xy = term1.add(&term2).sub(&term3);
    let s = {
        let d = u - u.recip();
        &d * &d
    };
    let bracket = bracket_xy.rescale(&s, &s);
    Ok(BmsSolution {
        u: u.clone(),
        p,
        bracket,
    })
}

/// `Σ_r u^r 𝒥(root A², m A⁴, n B⁴, r AB)`: rooted quasi-tetravalent Ising maps
/// with `m` black and `n` white tetravalent stars, weighted by bicolored edges.
pub fn quasi_tetravalent_count(m: u32, n: u32, u: &BigRational) -> Result<BigRational, IsingError> {
    let root = Monomial::power(0, 2);
    let mut total = BigRational::zero();
    // each AB star spends one B half-edge, all of which land on white stars
    for r in 0..=(4 * n) {
        let idx = IsingIndex {
            a: vec![0, m],
            b: vec![0, n],
            r,
        };
        let count = rooted_filtered_count(&root, &idx)?;
        total += BigRational::from_integer(BigInt::from(count)) * pow(u, r as usize);
    }
    Ok(total)
}

/// `h(w) = (1-3w)² / (1 - c²(1-3w)²(1-3w²))`.
pub fn closed_form_h(w: &BigRational, c: &BigRational) -> Result<BigRational, IsingError> {
    let one = BigRational::one();
    let a = &one - int(3) * w;
    let a2 = &a * &a;
    let den = &one - c * c * &a2 * (&one - int(3) * w * w);
    if den.is_zero() {
        return Err(IsingError::Singular(format!("h({w}) has a vanishing denominator")));
    }
    Ok(a2 / den)
}

/// Substitutes `x = y = -z / (3c² h(z/3))`, `P = -c² h(z/3)`, `u = c` into the
/// algebraic equation and returns `LHS - RHS` exactly.
pub fn change_of_variables_residual(z: &BigRational, c: &BigRational) -> Result<BigRational, IsingError> {
    let one = BigRational::one();
    let c2 = c * c;
    if c2.is_one() {
        return Err(IsingError::SingularU);
    }
    if c.is_zero() {
        return Err(IsingError::Singular("c = 0".into()));
    }
    let h = closed_form_h(&(z / int(3)), c)?;
    if h.is_zero() {
        return Err(IsingError::Singular("h(z/3) = 0".into()));
    }
    let x = -z / (int(3) * &c2 * &h);
    let y = x.clone();
    let p = -&c2 * &h;
    let p2 = &p * &p;
    let p3 = &p2 * &p;
    let den = &one - int(9) * &x * &y * &p2;
    if den.is_zero() {
        return Err(IsingError::Singular("1 - 9xyP² = 0".into()));
    }
    let rhs = &one
        + int(3) * &x * &y * &p3
        + &p * (&one + int(3) * &x * &p) * (&one + int(3) * &y * &p) / (&c2 * &den * &den);
    Ok(p - rhs)
}

/// `|LHS - RHS|` of the substituted equation as a float.
pub fn verify_change_of_variables(z: &BigRational, c: &BigRational) -> Result<f64, IsingError> {
    Ok(crate::rational::to_f64(&change_of_variables_residual(z, c)?.abs()))
}
