//! Models shared by the benchmarks.

use sdmaps::{Monomial, StarSpec};

/// `{x⁴}`.
pub fn quartic() -> StarSpec {
    StarSpec::new(1, vec![Monomial::power(0, 4)]).expect("valid spec")
}

/// `{x₁⁴, x₂⁴, x₁x₂}`.
pub fn two_color() -> StarSpec {
    StarSpec::new(
        2,
        vec![Monomial::power(0, 4), Monomial::power(1, 4), Monomial::new(vec![0, 1])],
    )
    .expect("valid spec")
}
