//! Non-commutative polynomials in `m` self-adjoint variables over exact rationals.
//!
//! Letters are stored 0-based (`0` is the variable printed as `x1`). The unit
//! monomial is the empty word. Words are kept verbatim: no cyclic
//! canonicalization happens anywhere in this module.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NcError {
    #[error("color x{} out of range for an alphabet of size {m}", .color + 1)]
    ColorOutOfRange { color: usize, m: usize },
    #[error("the symmetry degree of the unit monomial is undefined")]
    UnitMonomial,
}

/// A word `X_{i_1} ... X_{i_p}` over the colored alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Monomial(Vec<u8>);

impl Monomial {
    pub fn unit() -> Self {
        Monomial(Vec::new())
    }

    pub fn new(letters: Vec<u8>) -> Self {
        Monomial(letters)
    }

    /// `X_color^power`.
    pub fn power(color: u8, power: usize) -> Self {
        Monomial(vec![color; power])
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest alphabet that contains every letter of the word.
    pub fn min_alphabet(&self) -> usize {
        self.0.iter().map(|&c| c as usize + 1).max().unwrap_or(0)
    }

    pub fn check_alphabet(&self, m: usize) -> Result<(), NcError> {
        match self.0.iter().find(|&&c| c as usize >= m) {
            Some(&c) => Err(NcError::ColorOutOfRange { color: c as usize, m }),
            None => Ok(()),
        }
    }

    pub fn concat(&self, other: &Monomial) -> Monomial {
        let mut letters = Vec::with_capacity(self.0.len() + other.0.len());
        letters.extend_from_slice(&self.0);
        letters.extend_from_slice(&other.0);
        Monomial(letters)
    }

    /// The adjoint word (letters reversed).
    pub fn adjoint(&self) -> Monomial {
        Monomial(self.0.iter().rev().copied().collect())
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.0.iter().eq(self.0.iter().rev())
    }

    /// Cyclic left shift by `p` positions: `rotate(X1 X2 X3, 1) = X2 X3 X1`.
    pub fn rotate(&self, p: usize) -> Monomial {
        if self.0.is_empty() {
            return self.clone();
        }
        let mut letters = self.0.clone();
        letters.rotate_left(p % self.0.len());
        Monomial(letters)
    }

    /// Number of rotations `0 <= p < deg` fixing the word.
    pub fn symmetry_degree(&self) -> Result<usize, NcError> {
        if self.is_unit() {
            return Err(NcError::UnitMonomial);
        }
        let n = self.0.len();
        let fixed = (0..n)
            .filter(|&p| (0..n).all(|i| self.0[i] == self.0[(i + p) % n]))
            .count();
        Ok(fixed)
    }

    /// Number of occurrences of each color, indexed by color.
    pub fn color_counts(&self, m: usize) -> Vec<usize> {
        let mut counts = vec![0; m.max(self.min_alphabet())];
        for &c in &self.0 {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Every split `self = left · X_color · right`, in order of occurrence.
    pub fn splits_at(&self, color: u8) -> impl Iterator<Item = (&[u8], &[u8])> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == color)
            .map(move |(pos, _)| (&self.0[..pos], &self.0[pos + 1..]))
    }
}

impl From<&[u8]> for Monomial {
    fn from(letters: &[u8]) -> Self {
        Monomial(letters.to_vec())
    }
}

impl fmt::Display for Monomial {
    /// Prints in the potential-file syntax, grouping runs into powers.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let mut first = true;
        let mut i = 0;
        while i < self.0.len() {
            let c = self.0[i];
            let mut run = 1;
            while i + run < self.0.len() && self.0[i + run] == c {
                run += 1;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if run == 1 {
                write!(f, "x{}", c + 1)?;
            } else {
                write!(f, "x{}^{}", c + 1, run)?;
            }
            i += run;
        }
        Ok(())
    }
}

/// Finite rational combination of words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NCPolynomial {
    m: usize,
    terms: BTreeMap<Monomial, BigRational>,
}

impl NCPolynomial {
    pub fn zero(m: usize) -> Self {
        NCPolynomial {
            m,
            terms: BTreeMap::new(),
        }
    }

    pub fn monomial(m: usize, word: Monomial) -> Result<Self, NcError> {
        Self::term(m, word, BigRational::one())
    }

    pub fn term(m: usize, word: Monomial, coeff: BigRational) -> Result<Self, NcError> {
        word.check_alphabet(m)?;
        let mut p = Self::zero(m);
        p.add_term(word, coeff);
        Ok(p)
    }

    pub fn alphabet(&self) -> usize {
        self.m
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, word: &Monomial) -> BigRational {
        self.terms.get(word).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Adds `coeff · word`, dropping the entry if it cancels.
    pub fn add_term(&mut self, word: Monomial, coeff: BigRational) {
        if coeff.is_zero() {
            return;
        }
        let entry = self.terms.entry(word);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &NCPolynomial) -> NCPolynomial {
        let mut out = self.clone();
        out.m = self.m.max(other.m);
        for (w, c) in &other.terms {
            out.add_term(w.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, factor: &BigRational) -> NCPolynomial {
        let mut out = NCPolynomial::zero(self.m);
        for (w, c) in &self.terms {
            out.add_term(w.clone(), c * factor);
        }
        out
    }

    pub fn mul(&self, other: &NCPolynomial) -> NCPolynomial {
        let mut out = NCPolynomial::zero(self.m.max(other.m));
        for (w1, c1) in &self.terms {
            for (w2, c2) in &other.terms {
                out.add_term(w1.concat(w2), c1 * c2);
            }
        }
        out
    }

    /// Reverses every word. Coefficients are real so conjugation is trivial.
    pub fn involution(&self) -> NCPolynomial {
        let mut out = NCPolynomial::zero(self.m);
        for (w, c) in &self.terms {
            out.add_term(w.adjoint(), c.clone());
        }
        out
    }

    fn check_color(&self, color: usize) -> Result<u8, NcError> {
        if color < self.m {
            Ok(color as u8)
        } else {
            Err(NcError::ColorOutOfRange { color, m: self.m })
        }
    }

    /// `D_i P = Σ_{P = P1 X_i P2} P1 ⊗ P2`.
    pub fn nc_derivative(&self, color: usize) -> Result<TensorPolynomial, NcError> {
        let c = self.check_color(color)?;
        let mut out = TensorPolynomial::default();
        for (w, coeff) in &self.terms {
            for (left, right) in w.splits_at(c) {
                out.add_term(Monomial::from(left), Monomial::from(right), coeff.clone());
            }
        }
        Ok(out)
    }

    /// `𝒟_i P = Σ_{P = P1 X_i P2} P2 P1`.
    pub fn cyclic_derivative(&self, color: usize) -> Result<NCPolynomial, NcError> {
        let c = self.check_color(color)?;
        let mut out = NCPolynomial::zero(self.m);
        for (w, coeff) in &self.terms {
            for (left, right) in w.splits_at(c) {
                let mut letters = right.to_vec();
                letters.extend_from_slice(left);
                out.add_term(Monomial(letters), coeff.clone());
            }
        }
        Ok(out)
    }
}

impl fmt::Display for NCPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (w, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({c})*{w}")?;
        }
        Ok(())
    }
}

/// Element of `C<X> ⊗ C<X>`, the range of `D_i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TensorPolynomial {
    terms: BTreeMap<(Monomial, Monomial), BigRational>,
}

impl TensorPolynomial {
    pub fn add_term(&mut self, left: Monomial, right: Monomial, coeff: BigRational) {
        if coeff.is_zero() {
            return;
        }
        let key = (left, right);
        let updated = match self.terms.get(&key) {
            Some(c) => c + &coeff,
            None => coeff,
        };
        if updated.is_zero() {
            self.terms.remove(&key);
        } else {
            self.terms.insert(key, updated);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(Monomial, Monomial), &BigRational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, left: &Monomial, right: &Monomial) -> BigRational {
        self.terms
            .get(&(left.clone(), right.clone()))
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    pub fn add(&self, other: &TensorPolynomial) -> TensorPolynomial {
        let mut out = self.clone();
        for ((l, r), c) in &other.terms {
            out.add_term(l.clone(), r.clone(), c.clone());
        }
        out
    }

    /// `(a ⊗ b) · (c ⊗ d) = ac ⊗ bd`.
    pub fn mul(&self, other: &TensorPolynomial) -> TensorPolynomial {
        let mut out = TensorPolynomial::default();
        for ((l1, r1), c1) in &self.terms {
            for ((l2, r2), c2) in &other.terms {
                out.add_term(l1.concat(l2), r1.concat(r2), c1 * c2);
            }
        }
        out
    }

    /// `a ⊗ b ↦ b a`, turning `D_i` into `𝒟_i`.
    pub fn swap_multiply(&self, m: usize) -> NCPolynomial {
        let mut out = NCPolynomial::zero(m);
        for ((l, r), c) in &self.terms {
            out.add_term(r.concat(l), c.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(letters: &[u8]) -> Monomial {
        Monomial::from(letters)
    }

    fn poly(m: usize, letters: &[u8]) -> NCPolynomial {
        NCPolynomial::monomial(m, w(letters)).unwrap()
    }

    fn int(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    #[test]
    fn involution_reverses_words() {
        assert_eq!(poly(2, &[0, 1]).involution(), poly(2, &[1, 0]));
        assert_eq!(poly(2, &[]).involution(), poly(2, &[]));
        assert_eq!(poly(2, &[0, 0, 1, 1]).involution(), poly(2, &[1, 1, 0, 0]));
    }

    #[test]
    fn nc_derivative_examples() {
        let d = poly(2, &[0, 1, 0]).nc_derivative(0).unwrap();
        let mut expected = TensorPolynomial::default();
        expected.add_term(w(&[]), w(&[1, 0]), int(1));
        expected.add_term(w(&[0, 1]), w(&[]), int(1));
        assert_eq!(d, expected);

        assert!(poly(2, &[0]).nc_derivative(1).unwrap().is_zero());

        let d = poly(1, &[0, 0, 0]).nc_derivative(0).unwrap();
        assert_eq!(d.terms().count(), 3);
        assert_eq!(d.coeff(&w(&[]), &w(&[0, 0])), int(1));
        assert_eq!(d.coeff(&w(&[0]), &w(&[0])), int(1));
        assert_eq!(d.coeff(&w(&[0, 0]), &w(&[])), int(1));

        assert_eq!(
            poly(1, &[0]).nc_derivative(1),
            Err(NcError::ColorOutOfRange { color: 1, m: 1 })
        );
    }

    #[test]
    fn cyclic_derivative_examples() {
        let d = poly(1, &[0, 0, 0, 0]).cyclic_derivative(0).unwrap();
        assert_eq!(d, NCPolynomial::term(1, w(&[0, 0, 0]), int(4)).unwrap());

        let d = poly(2, &[0, 1, 0, 1]).cyclic_derivative(0).unwrap();
        assert_eq!(d, NCPolynomial::term(2, w(&[1, 0, 1]), int(2)).unwrap());

        assert!(poly(2, &[0, 0]).cyclic_derivative(1).unwrap().is_zero());
        assert!(poly(2, &[0, 0]).cyclic_derivative(2).is_err());
    }

    #[test]
    fn rotate_examples() {
        assert_eq!(w(&[0, 1, 2]).rotate(1), w(&[1, 2, 0]));
        let q = w(&[0, 1, 1, 0, 2]);
        assert_eq!(q.rotate(q.degree()), q);
        assert_eq!(Monomial::unit().rotate(5), Monomial::unit());
    }

    #[test]
    fn symmetry_degree_examples() {
        assert_eq!(w(&[0, 0, 0, 0]).symmetry_degree(), Ok(4));
        assert_eq!(w(&[0, 1, 0, 1]).symmetry_degree(), Ok(2));
        assert_eq!(w(&[0, 1]).symmetry_degree(), Ok(1));
        assert_eq!(Monomial::unit().symmetry_degree(), Err(NcError::UnitMonomial));
    }

    #[test]
    fn display_groups_powers() {
        assert_eq!(w(&[0, 0, 1, 0]).to_string(), "x1^2*x2*x1");
        assert_eq!(Monomial::unit().to_string(), "1");
    }

    fn word_strategy(m: u8, max_len: usize) -> impl Strategy<Value = Monomial> {
        prop::collection::vec(0..m, 0..=max_len).prop_map(Monomial::new)
    }

    fn poly_strategy() -> impl Strategy<Value = NCPolynomial> {
        prop::collection::vec((word_strategy(3, 6), -5i64..=5), 0..6).prop_map(|terms| {
            let mut p = NCPolynomial::zero(3);
            for (word, c) in terms {
                p.add_term(word, BigRational::from_integer(c.into()));
            }
            p
        })
    }

    proptest! {
        #[test]
        fn leibniz_rule(p in word_strategy(3, 5), q in word_strategy(3, 5), color in 0usize..3) {
            let pp = NCPolynomial::monomial(3, p.clone()).unwrap();
            let qq = NCPolynomial::monomial(3, q.clone()).unwrap();
            let lhs = pp.mul(&qq).nc_derivative(color).unwrap();

            let mut right_q = TensorPolynomial::default();
            right_q.add_term(Monomial::unit(), q.clone(), BigRational::one());
            let mut left_p = TensorPolynomial::default();
            left_p.add_term(p.clone(), Monomial::unit(), BigRational::one());
            let rhs = pp.nc_derivative(color).unwrap().mul(&right_q)
                .add(&left_p.mul(&qq.nc_derivative(color).unwrap()));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn involution_is_an_involution(p in poly_strategy()) {
            prop_assert_eq!(p.involution().involution(), p);
        }

        #[test]
        fn symmetry_degree_divides_degree(q in word_strategy(3, 10)) {
            prop_assume!(!q.is_unit());
            let s = q.symmetry_degree().unwrap();
            prop_assert!(s >= 1);
            prop_assert_eq!(q.degree() % s, 0);
        }

        #[test]
        fn cyclic_derivative_mass(q in word_strategy(3, 8), color in 0usize..3) {
            let d = NCPolynomial::monomial(3, q.clone()).unwrap().cyclic_derivative(color).unwrap();
            let mass: BigRational = d.terms().map(|(_, c)| c.clone()).sum();
            let count = q.letters().iter().filter(|&&c| c as usize == color).count();
            prop_assert_eq!(mass, BigRational::from_integer((count as i64).into()));
        }

        #[test]
        fn cyclic_is_swap_of_nc(p in poly_strategy(), color in 0usize..3) {
            let via_tensor = p.nc_derivative(color).unwrap().swap_multiply(3);
            prop_assert_eq!(p.cyclic_derivative(color).unwrap(), via_tensor);
        }
    }
}
