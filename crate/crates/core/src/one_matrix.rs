//! One-cut equilibrium measure of the one-matrix model.
//!
//! The effective potential is `W(x) = x²/2 + V(x)`. On a single interval
//! `[a, b]` the endpoints solve
//!
//! ```text
//! ∫ W'(s) / √((s-a)(b-s)) ds = 0,      ∫ s W'(s) / √((s-a)(b-s)) ds = 2π,
//! ```
//!
//! and the density is `Ψ(x) = √((x-a)(b-x)) h(x) / 2π` with `h` the polynomial
//! part of `W'(s) / √((s-a)(s-b))` at infinity.

use num_rational::BigRational;
use thiserror::Error;

use crate::potential::{ParameterAssignment, StarSpec};
use crate::rational::to_f64;

const NEWTON_TOL: f64 = 1e-12;
const MAX_NEWTON_STEPS: usize = 200;
const BASE_NODES: usize = 64;
const MAX_NODES: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OneMatrixError {
    #[error("the equilibrium solver handles one color only (got m = {0})")]
    NotOneMatrix(usize),
    #[error("parameter count {got} does not match the {expected} terms of the potential")]
    ParameterLength { expected: usize, got: usize },
    #[error("the potential is not confining: leading term x^{degree} has coefficient {coefficient}")]
    NotConfining { degree: usize, coefficient: f64 },
    #[error("Newton iteration did not converge (last iterate a = {a}, b = {b}, residual {residual:e}); the potential may have left the one-cut regime")]
    NoConvergence { a: f64, b: f64, residual: f64 },
}

/// Real polynomial with coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(i, &c)| i as f64 * c).collect())
    }

    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    /// Coefficients of `p(c + y)` in powers of `y`.
    pub fn shifted(&self, c: f64) -> Poly {
        let n = self.0.len();
        let mut out = self.0.clone();
        // repeated synthetic division
        for i in 0..n {
            for j in (i..n - 1).rev() {
                out[j] += c * out[j + 1];
            }
        }
        Poly(out)
    }
}

/// `W'(s) = s + V'(s)` for a one-color spec, `V = Σ t_j (q_j + q_j^*)`.
pub fn effective_force(spec: &StarSpec, params: &ParameterAssignment) -> Result<Poly, OneMatrixError> {
    let w = formal_force(spec, params)?;
    let top = w.degree() + 1;
    if top > 2 {
        let coefficient = w.0[top - 1] / top as f64;
        if top % 2 == 1 || coefficient <= 0.0 {
            return Err(OneMatrixError::NotConfining {
                degree: top,
                coefficient,
            });
        }
    }
    Ok(w)
}

/// [`effective_force`] without the confinement check.
fn formal_force(spec: &StarSpec, params: &ParameterAssignment) -> Result<Poly, OneMatrixError> {
    if spec.alphabet() != 1 {
        return Err(OneMatrixError::NotOneMatrix(spec.alphabet()));
    }
    if params.len() != spec.len() {
        return Err(OneMatrixError::ParameterLength {
            expected: spec.len(),
            got: params.len(),
        });
    }
    let degree = spec.max_degree().max(2);
    let mut v = vec![0.0; degree + 1];
    for (j, t) in params.values().iter().enumerate() {
        let d = spec.word(j).degree();
        // q = q* for a power of a single letter
        v[d] += 2.0 * to_f64(t);
    }
    let mut w = Poly(v).derivative().0;
    w.resize(degree.max(2), 0.0);
    w[1] += 1.0;
    Ok(Poly(w))
}

/// Support, density factor and the potential it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumMeasure {
    pub a: f64,
    pub b: f64,
    /// `h` in powers of `x`.
    pub h: Poly,
    pub force: Poly,
    /// Largest residual of the two endpoint equations.
    pub residual: f64,
}

fn chebyshev_first(n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |k| ((2 * k - 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos())
}

/// Residuals of the endpoint equations and their Jacobian in `(c, δ)`,
/// where `[a, b] = [c - δ, c + δ]`.
fn endpoint_system(w: &Poly, dw: &Poly, c: f64, delta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    // exact for polynomial integrands of degree < 2n
    let n = w.0.len() + 2;
    let weight = std::f64::consts::PI / n as f64;
    let (mut g1, mut g2) = (0.0, 0.0);
    let mut jac = [[0.0; 2]; 2];
    for u in chebyshev_first(n) {
        let s = c + delta * u;
        let (f, df) = (w.eval(s), dw.eval(s));
        g1 += f;
        g2 += s * f;
        jac[0][0] += df;
        jac[0][1] += u * df;
        jac[1][0] += f + s * df;
        jac[1][1] += u * (f + s * df);
    }
    let scale = |x: f64| x * weight;
    (
        [scale(g1), scale(g2) - 2.0 * std::f64::consts::PI],
        [
            [scale(jac[0][0]), scale(jac[0][1])],
            [scale(jac[1][0]), scale(jac[1][1])],
        ],
    )
}

fn residual_norm(r: &[f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

/// Newton on the two endpoint integrals from `(a, b) = (-2, 2)`.
pub fn solve_endpoints(spec: &StarSpec, params: &ParameterAssignment) -> Result<(f64, f64), OneMatrixError> {
    let w = effective_force(spec, params)?;
    let (a, b, _) = newton(&w)?;
    Ok((a, b))
}

fn newton(w: &Poly) -> Result<(f64, f64, f64), OneMatrixError> {
    let dw = w.derivative();
    let (mut c, mut delta) = (0.0, 2.0);
    let (mut r, mut jac) = endpoint_system(w, &dw, c, delta);
    for _ in 0..MAX_NEWTON_STEPS {
        let norm = residual_norm(&r);
        if norm < NEWTON_TOL {
            return Ok((c - delta, c + delta, norm));
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dc = (jac[1][1] * r[0] - jac[0][1] * r[1]) / det;
        let dd = (jac[0][0] * r[1] - jac[1][0] * r[0]) / det;
        // backtrack until the residual drops and the interval stays proper
        let mut step = 1.0;
        loop {
            let (c2, d2) = (c - step * dc, delta - step * dd);
            if d2 > 0.0 {
                let (r2, j2) = endpoint_system(w, &dw, c2, d2);
                if residual_norm(&r2) < norm || step < 1e-6 {
                    c = c2;
                    delta = d2;
                    r = r2;
                    jac = j2;
                    break;
                }
            }
            step /= 2.0;
            if step < 1e-9 {
                return Err(OneMatrixError::NoConvergence {
                    a: c - delta,
                    b: c + delta,
                    residual: norm,
                });
            }
        }
    }
    let norm = residual_norm(&r);
    if norm < NEWTON_TOL {
        return Ok((c - delta, c + delta, norm));
    }
    Err(OneMatrixError::NoConvergence {
        a: c - delta,
        b: c + delta,
        residual: norm,
    })
}

/// Polynomial part of `W'(s) / √((s-a)(s-b))`, using
/// `1/√((y-δ)(y+δ)) = Σ_k C(2k,k) (δ/2)^{2k} y^{-2k-1}` with `y = s - c`.
pub fn density_factor(w: &Poly, a: f64, b: f64) -> Poly {
    let c = (a + b) / 2.0;
    let delta = (b - a) / 2.0;
    let wy = w.shifted(c);
    let n = wy.0.len();
    let mut hy = vec![0.0; n.saturating_sub(1).max(1)];
    for (i, &wi) in wy.0.iter().enumerate() {
        let mut coeff = 1.0;
        let mut k = 0;
        while 2 * k < i {
            hy[i - 2 * k - 1] += wi * coeff;
            // C(2k+2,k+1)/C(2k,k) = (2k+1)(2k+2)/(k+1)^2, times (δ/2)^2
            coeff *= ((2 * k + 1) * (2 * k + 2)) as f64 / ((k + 1) * (k + 1)) as f64 * (delta / 2.0).powi(2);
            k += 1;
        }
    }
    Poly(hy).shifted(-c)
}

impl EquilibriumMeasure {
    pub fn solve(spec: &StarSpec, params: &ParameterAssignment) -> Result<Self, OneMatrixError> {
        let force = effective_force(spec, params)?;
        let (a, b, residual) = newton(&force)?;
        let h = density_factor(&force, a, b);
        Ok(EquilibriumMeasure {
            a,
            b,
            h,
            force,
            residual,
        })
    }

    /// One-cut solution continued to couplings that are not confining, such
    /// as a small negative quartic term. Only meaningful near the Gaussian
    /// point, e.g. for derivatives in `t` at `t = 0`.
    pub fn solve_formal(spec: &StarSpec, params: &ParameterAssignment) -> Result<Self, OneMatrixError> {
        let force = formal_force(spec, params)?;
        let (a, b, residual) = newton(&force)?;
        let h = density_factor(&force, a, b);
        Ok(EquilibriumMeasure {
            a,
            b,
            h,
            force,
            residual,
        })
    }

    /// `Ψ(x)`, zero off the support.
    pub fn density(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        ((x - self.a) * (self.b - x)).sqrt() * self.h.eval(x) / (2.0 * std::f64::consts::PI)
    }

    /// Smallest value of `h` on an evenly spaced grid of the support.
    pub fn min_density_factor(&self, points: usize) -> f64 {
        (0..=points)
            .map(|i| self.a + (self.b - self.a) * i as f64 / points as f64)
            .map(|x| self.h.eval(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Endpoint residuals recomputed at a fixed high node count.
    pub fn endpoint_residuals(&self) -> [f64; 2] {
        let c = (self.a + self.b) / 2.0;
        let delta = (self.b - self.a) / 2.0;
        endpoint_system(&self.force, &self.force.derivative(), c, delta).0
    }

    fn moment_with(&self, k: usize, nodes: usize) -> f64 {
        let c = (self.a + self.b) / 2.0;
        let delta = (self.b - self.a) / 2.0;
        let step = std::f64::consts::PI / (nodes + 1) as f64;
        let mut sum = 0.0;
        for i in 1..=nodes {
            let theta = i as f64 * step;
            let x = c + delta * theta.cos();
            sum += theta.sin().powi(2) * x.powi(k as i32) * self.h.eval(x);
        }
        sum * step * delta * delta / (2.0 * std::f64::consts::PI)
    }

    /// `∫ x^k Ψ(x) dx` for `k = 0..=k_max`, by second-kind Gauss-Chebyshev
    /// quadrature with the node count doubled until successive values agree.
    pub fn moments(&self, k_max: usize) -> Vec<f64> {
        (0..=k_max)
            .map(|k| {
                let mut nodes = BASE_NODES;
                let mut prev = self.moment_with(k, nodes);
                while nodes < MAX_NODES {
                    nodes *= 2;
                    let next = self.moment_with(k, nodes);
                    if (next - prev).abs() <= 1e-12 * next.abs().max(1.0) {
                        return next;
                    }
                    prev = next;
                }
                prev
            })
            .collect()
    }
}

/// Solves and returns the first `k_max + 1` moments.
pub fn equilibrium_moments(
    spec: &StarSpec,
    params: &ParameterAssignment,
    k_max: usize,
) -> Result<Vec<f64>, OneMatrixError> {
    Ok(EquilibriumMeasure::solve(spec, params)?.moments(k_max))
}

/// Convenience for a single-coupling model.
pub fn single_coupling(t: &BigRational) -> ParameterAssignment {
    ParameterAssignment::new(vec![t.clone()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncpoly::Monomial;
    use crate::rational::parse_rational;

    fn power_spec(d: usize) -> StarSpec {
        StarSpec::new(1, vec![Monomial::power(0, d)]).unwrap()
    }

    fn params(t: &str) -> ParameterAssignment {
        single_coupling(&parse_rational(t).unwrap())
    }

    #[test]
    fn gaussian_gives_semicircle() {
        let em = EquilibriumMeasure::solve(&StarSpec::empty(1), &ParameterAssignment::zeros(0)).unwrap();
        assert!((em.a + 2.0).abs() < 1e-12 && (em.b - 2.0).abs() < 1e-12);
        assert!(em.residual < 1e-12);
        assert_eq!(
            em.h.0.iter().map(|c| (c * 1e12).round() / 1e12).collect::<Vec<_>>(),
            vec![1.0]
        );
        let m = em.moments(8);
        let expected = [1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 5.0, 0.0, 14.0];
        for (x, y) in m.iter().zip(expected) {
            assert!((x - y).abs() < 1e-10, "{m:?}");
        }
    }

    #[test]
    fn quartic_shrinks_support_symmetrically() {
        let em = EquilibriumMeasure::solve(&power_spec(4), &params("1/100")).unwrap();
        assert!((em.a + em.b).abs() < 1e-12);
        assert!(em.b < 2.0);
        assert!((em.b - 1.825_741_858_350_553_8).abs() < 1e-12, "{}", em.b);
        assert!((em.moments(0)[0] - 1.0).abs() < 1e-10);
        assert!(em.min_density_factor(1000) > 0.0);
    }

    #[test]
    fn quartic_matches_closed_form() {
        // V = 2t x⁴: support [-2α, 2α] with 24 t α⁴ + α² = 1,
        // m₂ = (4 - α²) α² / 3
        let t: f64 = 0.01;
        let alpha2 = (-1.0 + (1.0 + 96.0 * t).sqrt()) / (48.0 * t);
        let em = EquilibriumMeasure::solve(&power_spec(4), &params("0.01")).unwrap();
        assert!((em.b - 2.0 * alpha2.sqrt()).abs() < 1e-12);
        let m2 = em.moments(2)[2];
        assert!((m2 - (4.0 - alpha2) * alpha2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn formal_solution_continues_to_negative_coupling() {
        assert!(EquilibriumMeasure::solve(&power_spec(4), &params("-1/1000")).is_err());
        let t: f64 = -0.001;
        let alpha2 = (-1.0 + (1.0 + 96.0 * t).sqrt()) / (48.0 * t);
        let em = EquilibriumMeasure::solve_formal(&power_spec(4), &params("-1/1000")).unwrap();
        assert!((em.b - 2.0 * alpha2.sqrt()).abs() < 1e-12);
        assert!((em.moments(2)[2] - (4.0 - alpha2) * alpha2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_term_shifts_support() {
        // V = 2t x moves the semicircle to [-2 - 2t, 2 - 2t]
        let em = EquilibriumMeasure::solve(&power_spec(1), &params("1/10")).unwrap();
        assert!((em.a + 2.2).abs() < 1e-12 && (em.b - 1.8).abs() < 1e-12);
        assert!((em.moments(1)[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn odd_leading_term_is_rejected() {
        assert!(matches!(
            EquilibriumMeasure::solve(&power_spec(3), &params("1/10")),
            Err(OneMatrixError::NotConfining { degree: 3, .. })
        ));
        assert!(matches!(
            EquilibriumMeasure::solve(&power_spec(4), &params("-1/10")),
            Err(OneMatrixError::NotConfining { .. })
        ));
    }

    #[test]
    fn sextic_mass_and_positivity() {
        let spec = StarSpec::new(1, vec![Monomial::power(0, 4), Monomial::power(0, 6)]).unwrap();
        let p = ParameterAssignment::new(vec![parse_rational("-1/50").unwrap(), parse_rational("1/100").unwrap()]);
        let em = EquilibriumMeasure::solve(&spec, &p).unwrap();
        assert!(em.residual < 1e-12);
        assert!((em.moments(0)[0] - 1.0).abs() < 1e-10);
        assert!(em.min_density_factor(1000) > 0.0);
    }

    #[test]
    fn shift_round_trips() {
        let p = Poly(vec![1.0, -2.0, 0.5, 3.0]);
        let q = p.shifted(0.7).shifted(-0.7);
        for (x, y) in p.0.iter().zip(&q.0) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((p.shifted(0.7).eval(0.3) - p.eval(1.0)).abs() < 1e-12);
    }
}
