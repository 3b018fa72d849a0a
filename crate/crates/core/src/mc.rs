//! Metropolis sampling of the finite-`N` multi-matrix measure
//! `∝ exp(-N tr(½ Σ A_i² + V(A)))`, optionally restricted to `‖A_i‖ ≤ L`.
//!
//! Two samplers share one interface. The entry sampler moves one Hermitian
//! entry pair at a time and works for any number of colors. For one color the
//! default is an eigenvalue sampler: normalized traces of a single matrix only
//! depend on its spectrum, whose joint law is the `β = 2` Coulomb gas
//! `∝ Π_{i<j} |λ_i - λ_j|² exp(-N Σ W(λ_i))`.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::ncpoly::{Monomial, NCPolynomial};
use crate::potential::{ParameterAssignment, StarSpec};
use crate::rational::to_f64;

const ENERGY_CHECK_EVERY: usize = 100;
const ENERGY_TOLERANCE: f64 = 1e-8;
const ADAPT_EVERY: usize = 20;
const TARGET_ACCEPTANCE: f64 = 0.3;
const EIGENSOLVE_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid run parameters: {0}")]
    Invalid(String),
    #[error("{0}; without localization the matrix integral may diverge, set a spectral cut-off L (cutoff = ...)")]
    NeedsLocalization(String),
    #[error("energy became non-finite at sweep {sweep}; the model diverges, set a spectral cut-off L")]
    NonFinite { sweep: usize },
    #[error("tracked energy {tracked} drifted from recomputed {exact} at sweep {sweep}")]
    EnergyDrift { sweep: usize, tracked: f64, exact: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerKind {
    /// Eigenvalues for one color, entries otherwise.
    #[default]
    Auto,
    Eigenvalues,
    Entries,
}

/// Run parameters, readable from `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    pub cutoff: Option<f64>,
    /// Initial proposal scale; adapted during burn-in when unset.
    pub step: Option<f64>,
    pub batches: usize,
    pub sampler: SamplerKind,
    pub assert_convex: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n: 20,
            sweeps: 2000,
            burn_in: 500,
            chains: 1,
            seed: 1,
            cutoff: None,
            step: None,
            batches: 20,
            sampler: SamplerKind::Auto,
            assert_convex: false,
        }
    }
}

impl McConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, McError> {
        let mut cfg = McConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| McError::Config { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| err(format!("`{key}` expects a non-negative integer")))
            };
            let float = |v: &str| v.parse::<f64>().map_err(|_| err(format!("`{key}` expects a number")));
            match key {
                "N" | "n" => cfg.n = int(value)?,
                "sweeps" => cfg.sweeps = int(value)?,
                "burn_in" => cfg.burn_in = int(value)?,
                "chains" => cfg.chains = int(value)?,
                "batches" => cfg.batches = int(value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err("`seed` expects an unsigned integer".into()))?
                }
                "cutoff" => cfg.cutoff = if value == "none" { None } else { Some(float(value)?) },
                "step" => cfg.step = Some(float(value)?),
                "assert_convex" => {
                    cfg.assert_convex = value
                        .parse()
                        .map_err(|_| err("`assert_convex` expects true or false".into()))?
                }
                "sampler" => {
                    cfg.sampler = match value {
                        "auto" => SamplerKind::Auto,
                        "eigenvalues" => SamplerKind::Eigenvalues,
                        "entries" => SamplerKind::Entries,
                        _ => return Err(err("`sampler` expects auto, eigenvalues or entries".into())),
                    }
                }
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.n < 2 {
            return Err(McError::Invalid("N must be at least 2".into()));
        }
        if self.chains == 0 {
            return Err(McError::Invalid("chains must be positive".into()));
        }
        if self.batches < 2 || self.sweeps < self.batches {
            return Err(McError::Invalid(
                "need at least 2 batches and one sweep per batch".into(),
            ));
        }
        if let Some(l) = self.cutoff {
            if !(l > 0.0 && l.is_finite()) {
                return Err(McError::Invalid("cutoff must be positive".into()));
            }
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(McError::Invalid("step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// The potential in floating point: `N tr(Σ_w κ_w w(A))` is the energy.
#[derive(Debug, Clone)]
pub struct Model {
    m: usize,
    potential: NCPolynomial,
    /// `½ x_i²` for every color plus the terms of `V`.
    energy_words: Vec<(Vec<u8>, f64)>,
}

impl Model {
    pub fn new(spec: &StarSpec, params: &ParameterAssignment) -> Result<Self, McError> {
        if params.len() != spec.len() {
            return Err(McError::Invalid(format!(
                "{} parameters for {} terms",
                params.len(),
                spec.len()
            )));
        }
        let m = spec.alphabet();
        if m == 0 {
            return Err(McError::Invalid("the model needs at least one color".into()));
        }
        let potential = spec.potential(params);
        let mut energy_words: Vec<(Vec<u8>, f64)> = (0..m as u8).map(|c| (vec![c, c], 0.5)).collect();
        for (word, coeff) in potential.terms() {
            let c = to_f64(coeff);
            match energy_words.iter_mut().find(|(w, _)| w.as_slice() == word.letters()) {
                Some(entry) => entry.1 += c,
                None => energy_words.push((word.letters().to_vec(), c)),
            }
        }
        Ok(Model {
            m,
            potential,
            energy_words,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.m
    }

    pub fn potential(&self) -> &NCPolynomial {
        &self.potential
    }

    /// `W(x) = x²/2 + V(x)` in increasing degree, one color only.
    fn one_color_poly(&self) -> Vec<f64> {
        let deg = self.energy_words.iter().map(|(w, _)| w.len()).max().unwrap_or(2);
        let mut p = vec![0.0; deg + 1];
        for (w, c) in &self.energy_words {
            p[w.len()] += c;
        }
        p
    }
}

/// A sample: either the spectrum of a single matrix or `m` Hermitian matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleState {
    Eigenvalues(Vec<f64>),
    Matrices(Vec<DMatrix<Complex64>>),
}

impl EnsembleState {
    pub fn size(&self) -> usize {
        match self {
            EnsembleState::Eigenvalues(l) => l.len(),
            EnsembleState::Matrices(ms) => ms[0].nrows(),
        }
    }

    /// `(1/N) tr w(A)`.
    pub fn normalized_trace(&self, word: &Monomial) -> Complex64 {
        let n = self.size() as f64;
        match self {
            EnsembleState::Eigenvalues(l) => {
                let d = word.degree() as i32;
                Complex64::new(l.iter().map(|x| x.powi(d)).sum::<f64>() / n, 0.0)
            }
            EnsembleState::Matrices(ms) => {
                if word.is_unit() {
                    return Complex64::new(1.0, 0.0);
                }
                let letters = word.letters();
                let mut prod = ms[letters[0] as usize].clone();
                for &c in &letters[1..] {
                    prod *= &ms[c as usize];
                }
                prod.trace() / n
            }
        }
    }

    /// Largest spectral radius over the colors.
    pub fn spectral_radius(&self) -> f64 {
        match self {
            EnsembleState::Eigenvalues(l) => l.iter().fold(0.0, |a, x| a.max(x.abs())),
            EnsembleState::Matrices(ms) => ms.iter().map(hermitian_radius).fold(0.0, f64::max),
        }
    }

    /// Largest deviation from Hermitian symmetry.
    pub fn hermiticity_defect(&self) -> f64 {
        match self {
            EnsembleState::Eigenvalues(_) => 0.0,
            EnsembleState::Matrices(ms) => ms
                .iter()
                .map(|a| (a - a.adjoint()).iter().fold(0.0, |m: f64, z| m.max(z.norm())))
                .fold(0.0, f64::max),
        }
    }
}

fn hermitian_radius(a: &DMatrix<Complex64>) -> f64 {
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0, |m, x| m.max(x.abs()))
}

fn energy_of(model: &Model, state: &EnsembleState) -> f64 {
    let n = state.size() as f64;
    match state {
        EnsembleState::Eigenvalues(l) => {
            let w = model.one_color_poly();
            let mut e = n * l.iter().map(|&x| eval(&w, x)).sum::<f64>();
            for i in 0..l.len() {
                for j in i + 1..l.len() {
                    e -= 2.0 * (l[i] - l[j]).abs().ln();
                }
            }
            e
        }
        EnsembleState::Matrices(_) => {
            n * n
                * model
                    .energy_words
                    .iter()
                    .map(|(w, c)| c * state.normalized_trace(&Monomial::new(w.clone())).re)
                    .sum::<f64>()
        }
    }
}

fn eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// One Markov chain.
pub struct Sampler {
    model: Model,
    state: EnsembleState,
    energy: f64,
    step: f64,
    cutoff: Option<f64>,
    /// Upper bound on each color's spectral radius (entry sampler).
    radius_bound: Vec<f64>,
    rng: ChaCha8Rng,
    accepted: u64,
    proposed: u64,
    sweeps: usize,
    w_poly: Vec<f64>,
}

fn chain_seed(seed: u64, chain: usize) -> u64 {
    seed.wrapping_add((chain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl Sampler {
    /// Checks that the run is well defined and draws the initial state.
    pub fn new(model: &Model, cfg: &McConfig, chain: usize) -> Result<Self, McError> {
        cfg.validate()?;
        let kind = match cfg.sampler {
            SamplerKind::Auto if model.m == 1 => SamplerKind::Eigenvalues,
            SamplerKind::Auto => SamplerKind::Entries,
            k => k,
        };
        if kind == SamplerKind::Eigenvalues && model.m != 1 {
            return Err(McError::Invalid(
                "the eigenvalue sampler needs a one-color model".into(),
            ));
        }
        if cfg.cutoff.is_none() {
            if model.m == 1 {
                let w = model.one_color_poly();
                let top = w.iter().rposition(|&c| c != 0.0).unwrap_or(0);
                if top % 2 == 1 || w[top] < 0.0 {
                    return Err(McError::NeedsLocalization(format!(
                        "the leading term of x²/2 + V has degree {top} and coefficient {}",
                        w[top]
                    )));
                }
            } else if !cfg.assert_convex {
                return Err(McError::NeedsLocalization(
                    "multi-matrix potentials are not checked for convexity (set assert_convex = true if it holds)"
                        .into(),
                ));
            }
        }
        let n = cfg.n;
        let mut rng = ChaCha8Rng::seed_from_u64(chain_seed(cfg.seed, chain));
        let shrink = cfg.cutoff.map_or(1.0, |l| (0.8 * l / 2.5).min(1.0));
        let state = match kind {
            SamplerKind::Eigenvalues => EnsembleState::Eigenvalues(
                (0..n)
                    .map(|i| shrink * 2.0 * (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
                    .collect(),
            ),
            _ => EnsembleState::Matrices(
                (0..model.m)
                    .map(|_| gue(n, &mut rng) * Complex64::new(shrink, 0.0))
                    .collect(),
            ),
        };
        let step = cfg.step.unwrap_or(match kind {
            SamplerKind::Eigenvalues => 1.0 / n as f64,
            _ => 0.5 / (n as f64).sqrt(),
        });
        let mut sampler = Sampler {
            model: model.clone(),
            energy: 0.0,
            step,
            cutoff: cfg.cutoff,
            radius_bound: Vec::new(),
            rng,
            accepted: 0,
            proposed: 0,
            sweeps: 0,
            w_poly: model.one_color_poly(),
            state,
        };
        if let Some(l) = cfg.cutoff {
            if sampler.state.spectral_radius() > l {
                return Err(McError::Invalid("initial state violates the cut-off".into()));
            }
        }
        sampler.refresh_radius();
        sampler.energy = energy_of(&sampler.model, &sampler.state);
        if !sampler.energy.is_finite() {
            return Err(McError::NonFinite { sweep: 0 });
        }
        Ok(sampler)
    }

    pub fn state(&self) -> &EnsembleState {
        &self.state
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn refresh_radius(&mut self) {
        if let EnsembleState::Matrices(ms) = &self.state {
            self.radius_bound = ms.iter().map(hermitian_radius).collect();
        }
    }

    /// One sweep: `N` eigenvalue moves or `m N(N+1)/2` entry moves.
    pub fn sweep(&mut self) -> Result<(), McError> {
        if matches!(self.state, EnsembleState::Eigenvalues(_)) {
            self.sweep_eigenvalues();
        } else {
            self.sweep_entries();
        }
        self.sweeps += 1;
        if !self.energy.is_finite() {
            return Err(McError::NonFinite { sweep: self.sweeps });
        }
        if self.sweeps.is_multiple_of(ENERGY_CHECK_EVERY) {
            let exact = energy_of(&self.model, &self.state);
            if !exact.is_finite() {
                return Err(McError::NonFinite { sweep: self.sweeps });
            }
            if (exact - self.energy).abs() > ENERGY_TOLERANCE * exact.abs().max(1.0) {
                return Err(McError::EnergyDrift {
                    sweep: self.sweeps,
                    tracked: self.energy,
                    exact,
                });
            }
            self.energy = exact;
        }
        if self.sweeps.is_multiple_of(EIGENSOLVE_EVERY) {
            self.refresh_radius();
        }
        Ok(())
    }

    /// Burn-in with the step scale steered toward the target acceptance.
    pub fn burn_in(&mut self, sweeps: usize, adapt: bool) -> Result<(), McError> {
        let (mut acc0, mut prop0) = (self.accepted, self.proposed);
        for s in 1..=sweeps {
            self.sweep()?;
            if adapt && s % ADAPT_EVERY == 0 {
                let rate = (self.accepted - acc0) as f64 / (self.proposed - prop0).max(1) as f64;
                self.step *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
                acc0 = self.accepted;
                prop0 = self.proposed;
            }
        }
        self.accepted = 0;
        self.proposed = 0;
        Ok(())
    }

    fn sweep_eigenvalues(&mut self) {
        let EnsembleState::Eigenvalues(l) = &mut self.state else {
            unreachable!()
        };
        let n = l.len();
        let nf = n as f64;
        for _ in 0..n {
            let i = self.rng.random_range(0..n);
            let old = l[i];
            let g: f64 = self.rng.sample(StandardNormal);
            let new = old + self.step * g;
            self.proposed += 1;
            if self.cutoff.is_some_and(|cut| new.abs() > cut) {
                continue;
            }
            let mut log_ratio = 0.0;
            let mut prod = 1.0;
            for (j, &x) in l.iter().enumerate() {
                if j == i {
                    continue;
                }
                prod *= (new - x) / (old - x);
                if j % 16 == 15 {
                    log_ratio += prod.abs().ln();
                    prod = 1.0;
                }
            }
            log_ratio += prod.abs().ln();
            let delta = nf * (eval(&self.w_poly, new) - eval(&self.w_poly, old)) - 2.0 * log_ratio;
            if delta <= 0.0 || self.rng.random::<f64>() < (-delta).exp() {
                l[i] = new;
                self.energy += delta;
                self.accepted += 1;
            }
        }
    }

    fn sweep_entries(&mut self) {
        let n = self.state.size();
        for c in 0..self.model.m {
            for _ in 0..n * (n + 1) / 2 {
                let i = self.rng.random_range(0..n);
                let j = self.rng.random_range(0..n);
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                let g1: f64 = self.rng.sample(StandardNormal);
                let delta = if i == j {
                    Complex64::new(self.step * g1, 0.0)
                } else {
                    let g2: f64 = self.rng.sample(StandardNormal);
                    Complex64::new(g1, g2) * (self.step / std::f64::consts::SQRT_2)
                };
                self.proposed += 1;
                if !self.entry_move(c, i, j, delta) {
                    continue;
                }
                self.accepted += 1;
            }
        }
        // re-symmetrize against round-off
        if let EnsembleState::Matrices(ms) = &mut self.state {
            for a in ms.iter_mut() {
                let h = (&*a + a.adjoint()).scale(0.5);
                *a = h;
            }
        }
    }

    fn entry_move(&mut self, c: usize, i: usize, j: usize, delta: Complex64) -> bool {
        let EnsembleState::Matrices(ms) = &self.state else {
            unreachable!()
        };
        let mut e2 = Matrix2::zeros();
        let norm = if i == j {
            e2[(0, 0)] = delta;
            delta.norm()
        } else {
            e2[(0, 1)] = delta;
            e2[(1, 0)] = delta.conj();
            delta.norm()
        };
        let mut needs_eigensolve = false;
        if let Some(l) = self.cutoff {
            if self.radius_bound[c] + norm > l {
                needs_eigensolve = true;
            }
        }
        let nf = n_of(ms) as f64;
        let mut de = 0.0;
        for (word, kappa) in &self.model.energy_words {
            if word.contains(&(c as u8)) {
                de += kappa * word_delta(ms, word, c as u8, i, j, &e2).re;
            }
        }
        de *= nf;
        if !de.is_finite() {
            self.energy = f64::NAN;
            return false;
        }
        if !(de <= 0.0 || self.rng.random::<f64>() < (-de).exp()) {
            return false;
        }
        let EnsembleState::Matrices(ms) = &mut self.state else {
            unreachable!()
        };
        let a = &mut ms[c];
        a[(i, j)] += delta;
        if i != j {
            a[(j, i)] += delta.conj();
        }
        if needs_eigensolve {
            let radius = hermitian_radius(a);
            if radius > self.cutoff.unwrap_or(f64::INFINITY) {
                a[(i, j)] -= delta;
                if i != j {
                    a[(j, i)] -= delta.conj();
                }
                return false;
            }
            self.radius_bound[c] = radius;
        } else {
            self.radius_bound[c] += norm;
        }
        self.energy += de;
        true
    }
}

fn n_of(ms: &[DMatrix<Complex64>]) -> usize {
    ms[0].nrows()
}

/// `tr w(A + E) - tr w(A)` where `E` only touches rows and columns `i, j` of
/// color `c`: with `P = [e_i, e_j]`, `E = P e2 Pᵀ`, every term with `E` in the
/// positions `s_1 < … < s_k` is `tr(Π_l e2 · Pᵀ G_l P)` for the products `G_l`
/// of the letters strictly between consecutive `E`s.
fn word_delta(ms: &[DMatrix<Complex64>], word: &[u8], c: u8, i: usize, j: usize, e2: &Matrix2<Complex64>) -> Complex64 {
    let d = word.len();
    let n = n_of(ms);
    let positions: Vec<usize> = (0..d).filter(|&p| word[p] == c).collect();
    // seg[a][len]: rows/cols {i, j} of the product of `len` letters from position a
    let mut seg = vec![vec![Matrix2::<Complex64>::identity(); d]; d];
    for a in 0..d {
        let mut rows = DMatrix::<Complex64>::zeros(2, n);
        rows.set_row(0, &ms[word[a] as usize].row(i));
        rows.set_row(1, &ms[word[a] as usize].row(j));
        for len in 1..d {
            seg[a][len] = Matrix2::new(rows[(0, i)], rows[(0, j)], rows[(1, i)], rows[(1, j)]);
            if len + 1 < d {
                rows *= &ms[word[(a + len) % d] as usize];
            }
        }
    }
    let mut total = Complex64::new(0.0, 0.0);
    for mask in 1u32..(1 << positions.len()) {
        let chosen: Vec<usize> = positions
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, &p)| p)
            .collect();
        let k = chosen.len();
        let mut prod = Matrix2::<Complex64>::identity();
        for l in 0..k {
            let s = chosen[l];
            let next = if l + 1 < k { chosen[l + 1] } else { chosen[0] + d };
            let gap = next - s - 1;
            prod = prod * e2 * seg[(s + 1) % d][gap];
        }
        total += prod.trace();
    }
    total
}

fn gue(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let sd = 1.0 / (n as f64).sqrt();
    let mut a = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        let g: f64 = rng.sample(StandardNormal);
        a[(i, i)] = Complex64::new(g * sd, 0.0);
        for j in i + 1..n {
            let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let z = Complex64::new(x, y) * (sd / std::f64::consts::SQRT_2);
            a[(i, j)] = z;
            a[(j, i)] = z.conj();
        }
    }
    a
}

/// Stream of post-burn-in states of a single chain.
pub fn sample(model: &Model, cfg: &McConfig) -> Result<StateStream, McError> {
    let mut sampler = Sampler::new(model, cfg, 0)?;
    sampler.burn_in(cfg.burn_in, cfg.step.is_none())?;
    Ok(StateStream {
        sampler,
        remaining: cfg.sweeps,
        failed: false,
    })
}

pub struct StateStream {
    sampler: Sampler,
    remaining: usize,
    failed: bool,
}

impl Iterator for StateStream {
    type Item = Result<EnsembleState, McError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 || self.failed {
            return None;
        }
        self.remaining -= 1;
        match self.sampler.sweep() {
            Ok(()) => Some(Ok(self.sampler.state().clone())),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Batch-mean estimate of `E[μ̂^N(word)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub word: Monomial,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// `Re Σ coeff Π μ̂(w)`, a polynomial in normalized traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub terms: Vec<(f64, Vec<Monomial>)>,
}

impl Observable {
    pub fn moment(word: &Monomial) -> Self {
        Observable {
            terms: vec![(1.0, vec![word.clone()])],
        }
    }

    /// `μ̂((X_i + 𝒟_i V) P) - Σ μ̂(P_1) μ̂(P_2)` over the splits `P = P_1 X_i P_2`.
    pub fn sd_residual(model: &Model, p: &Monomial, color: usize) -> Result<Self, McError> {
        let m = model.m;
        if color >= m {
            return Err(McError::Invalid(format!("color x{} outside the model", color + 1)));
        }
        let mut terms = vec![(1.0, vec![Monomial::new(vec![color as u8]).concat(p)])];
        let force = model
            .potential
            .cyclic_derivative(color)
            .map_err(|e| McError::Invalid(e.to_string()))?;
        let pp = NCPolynomial::monomial(m, p.clone()).map_err(|e| McError::Invalid(e.to_string()))?;
        for (word, coeff) in force.mul(&pp).terms() {
            terms.push((to_f64(coeff), vec![word.clone()]));
        }
        for (left, right) in p.splits_at(color as u8) {
            terms.push((-1.0, vec![Monomial::new(left.to_vec()), Monomial::new(right.to_vec())]));
        }
        Ok(Observable { terms })
    }

    fn words(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.iter().flat_map(|(_, ws)| ws.iter())
    }

    fn value(&self, traces: &HashMap<Monomial, Complex64>) -> f64 {
        self.terms
            .iter()
            .map(|(c, ws)| {
                let prod = ws.iter().fold(Complex64::new(1.0, 0.0), |acc, w| acc * traces[w]);
                c * prod.re
            })
            .sum()
    }
}

fn traces_for(state: &EnsembleState, observables: &[Observable]) -> HashMap<Monomial, Complex64> {
    let mut traces = HashMap::new();
    for o in observables {
        for w in o.words() {
            if !traces.contains_key(w) {
                traces.insert(w.clone(), state.normalized_trace(w));
            }
        }
    }
    traces
}

/// Means of `batches` contiguous blocks of a series (a leading remainder is dropped).
fn batch_means(series: &[f64], batches: usize) -> Vec<f64> {
    let size = series.len() / batches;
    if size == 0 {
        return series.to_vec();
    }
    let skip = series.len() - size * batches;
    series[skip..]
        .chunks(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect()
}

fn pooled(word: Monomial, means: &[f64], samples: usize) -> MomentEstimate {
    let b = means.len() as f64;
    let mean = means.iter().sum::<f64>() / b;
    let stderr = if means.len() > 1 {
        (means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
    } else {
        0.0
    };
    MomentEstimate {
        word,
        mean,
        stderr,
        samples,
    }
}

/// Batch-mean estimates of `μ̂^N(word)` over a sequence of states.
pub fn estimate_moments(states: &[EnsembleState], words: &[Monomial], batches: usize) -> Vec<MomentEstimate> {
    let obs: Vec<Observable> = words.iter().map(Observable::moment).collect();
    estimate(states, &obs, batches)
        .into_iter()
        .zip(words)
        .map(|(e, w)| MomentEstimate { word: w.clone(), ..e })
        .collect()
}

/// Batch-mean estimate of the finite-`N` Schwinger-Dyson residual for `P` and color `i`.
pub fn sd_residual(
    states: &[EnsembleState],
    model: &Model,
    p: &Monomial,
    color: usize,
    batches: usize,
) -> Result<MomentEstimate, McError> {
    let obs = Observable::sd_residual(model, p, color)?;
    let mut e = estimate(states, std::slice::from_ref(&obs), batches).remove(0);
    e.word = p.clone();
    Ok(e)
}

fn estimate(states: &[EnsembleState], obs: &[Observable], batches: usize) -> Vec<MomentEstimate> {
    let series: Vec<Vec<f64>> = {
        let mut s = vec![Vec::with_capacity(states.len()); obs.len()];
        for st in states {
            let traces = traces_for(st, obs);
            for (k, o) in obs.iter().enumerate() {
                s[k].push(o.value(&traces));
            }
        }
        s
    };
    series
        .iter()
        .map(|s| pooled(Monomial::unit(), &batch_means(s, batches.max(1)), s.len()))
        .collect()
}

/// What to measure in a [`run`].
#[derive(Debug, Clone, Default)]
pub struct Requests {
    pub words: Vec<Monomial>,
    /// `(P, color)` pairs for the Schwinger-Dyson residual.
    pub residuals: Vec<(Monomial, usize)>,
}

/// Results of a multi-chain run.
#[derive(Debug, Clone)]
pub struct McRun {
    pub moments: Vec<MomentEstimate>,
    pub residuals: Vec<(Monomial, usize, MomentEstimate)>,
    pub acceptance: Vec<f64>,
    pub steps: Vec<f64>,
}

/// Runs `cfg.chains` independent chains in parallel and pools their batch means.
pub fn run(model: &Model, cfg: &McConfig, requests: &Requests) -> Result<McRun, McError> {
    cfg.validate()?;
    let mut obs: Vec<Observable> = requests.words.iter().map(Observable::moment).collect();
    for (p, c) in &requests.residuals {
        obs.push(Observable::sd_residual(model, p, *c)?);
    }
    let chains: Vec<Result<(Vec<Vec<f64>>, f64, f64), McError>> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| {
            let mut sampler = Sampler::new(model, cfg, chain)?;
            sampler.burn_in(cfg.burn_in, cfg.step.is_none())?;
            let mut series = vec![Vec::with_capacity(cfg.sweeps); obs.len()];
            for _ in 0..cfg.sweeps {
                sampler.sweep()?;
                let traces = traces_for(sampler.state(), &obs);
                for (k, o) in obs.iter().enumerate() {
                    series[k].push(o.value(&traces));
                }
            }
            let means = series.iter().map(|s| batch_means(s, cfg.batches)).collect();
            Ok((means, sampler.acceptance(), sampler.step()))
        })
        .collect();
    let chains = chains.into_iter().collect::<Result<Vec<_>, _>>()?;
    let total = cfg.sweeps * cfg.chains;
    let estimates: Vec<MomentEstimate> = (0..obs.len())
        .map(|k| {
            let pooled_means: Vec<f64> = chains.iter().flat_map(|(m, _, _)| m[k].iter().copied()).collect();
            pooled(Monomial::unit(), &pooled_means, total)
        })
        .collect();
    let nw = requests.words.len();
    let moments = requests
        .words
        .iter()
        .zip(&estimates[..nw])
        .map(|(w, e)| MomentEstimate {
            word: w.clone(),
            ..e.clone()
        })
        .collect();
    let residuals = requests
        .residuals
        .iter()
        .zip(&estimates[nw..])
        .map(|((p, c), e)| {
            (
                p.clone(),
                *c,
                MomentEstimate {
                    word: p.clone(),
                    ..e.clone()
                },
            )
        })
        .collect();
    Ok(McRun {
        moments,
        residuals,
        acceptance: chains.iter().map(|c| c.1).collect(),
        steps: chains.iter().map(|c| c.2).collect(),
    })
}

/// `word,mean,stderr,n_samples` rows with a header.
pub fn to_csv(estimates: &[MomentEstimate]) -> String {
    let mut out = String::from("word,mean,stderr,n_samples\n");
    for e in estimates {
        out.push_str(&format!("{},{},{},{}\n", e.word, e.mean, e.stderr, e.samples));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::parse_rational;

    fn x(p: usize) -> Monomial {
        Monomial::power(0, p)
    }

    fn one_color(words: &[usize], ts: &[&str]) -> Model {
        let spec = StarSpec::new(1, words.iter().map(|&d| x(d)).collect()).unwrap();
        let params = ParameterAssignment::new(ts.iter().map(|t| parse_rational(t).unwrap()).collect());
        Model::new(&spec, &params).unwrap()
    }

    fn gaussian(m: usize) -> Model {
        Model::new(&StarSpec::empty(m), &ParameterAssignment::zeros(0)).unwrap()
    }

    fn within(e: &MomentEstimate, target: f64, sigmas: f64, slack: f64) -> bool {
        (e.mean - target).abs() <= sigmas * e.stderr + slack
    }

    #[test]
    fn config_parsing() {
        let cfg =
            McConfig::parse("N = 30\nsweeps=400 # comment\nburn_in = 10\nchains = 2\nseed = 9\ncutoff = 3\n").unwrap();
        assert_eq!(
            (cfg.n, cfg.sweeps, cfg.burn_in, cfg.chains, cfg.seed, cfg.cutoff),
            (30, 400, 10, 2, 9, Some(3.0))
        );
        assert!(matches!(McConfig::parse("N = 1"), Err(McError::Invalid(_))));
        assert!(matches!(
            McConfig::parse("sweeps = x"),
            Err(McError::Config { line: 1, .. })
        ));
        assert!(matches!(
            McConfig::parse("\nfoo = 2"),
            Err(McError::Config { line: 2, .. })
        ));
    }

    #[test]
    fn gaussian_eigenvalue_moments() {
        let cfg = McConfig {
            n: 40,
            sweeps: 4000,
            burn_in: 500,
            seed: 3,
            ..Default::default()
        };
        let req = Requests {
            words: vec![Monomial::unit(), x(1), x(2), x(4)],
            residuals: vec![(x(1), 0), (x(3), 0)],
        };
        let r = run(&gaussian(1), &cfg, &req).unwrap();
        assert_eq!((r.moments[0].mean, r.moments[0].stderr), (1.0, 0.0));
        assert!(within(&r.moments[1], 0.0, 4.0, 0.0));
        // finite-N GUE: E tr A²/N = 1, E tr A⁴/N = 2 + 1/N²
        assert!(within(&r.moments[2], 1.0, 4.0, 0.0), "{:?}", r.moments[2]);
        assert!(
            within(&r.moments[3], 2.0 + 1.0 / 1600.0, 4.0, 0.0),
            "{:?}",
            r.moments[3]
        );
        for (_, _, e) in &r.residuals {
            assert!(within(e, 0.0, 4.0, 0.0), "{e:?}");
        }
    }

    #[test]
    fn gaussian_entry_moments() {
        let cfg = McConfig {
            n: 8,
            sweeps: 3000,
            burn_in: 300,
            seed: 5,
            sampler: SamplerKind::Entries,
            ..Default::default()
        };
        let req = Requests {
            words: vec![x(1), x(2)],
            residuals: vec![(x(3), 0)],
        };
        let r = run(&gaussian(1), &cfg, &req).unwrap();
        assert!(within(&r.moments[0], 0.0, 4.0, 0.0));
        assert!(within(&r.moments[1], 1.0, 4.0, 0.0), "{:?}", r.moments[1]);
        assert!(within(&r.residuals[0].2, 0.0, 4.0, 0.0), "{:?}", r.residuals[0]);
    }

    #[test]
    fn entry_delta_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ms = vec![gue(5, &mut rng), gue(5, &mut rng)];
        let word = [0u8, 1, 0, 0, 1, 1];
        for (i, j) in [(1, 3), (2, 2), (0, 4)] {
            let delta = if i == j {
                Complex64::new(0.3, 0.0)
            } else {
                Complex64::new(0.2, -0.7)
            };
            let mut e2 = Matrix2::zeros();
            if i == j {
                e2[(0, 0)] = delta;
            } else {
                e2[(0, 1)] = delta;
                e2[(1, 0)] = delta.conj();
            }
            let w = Monomial::new(word.to_vec());
            let before = EnsembleState::Matrices(ms.clone()).normalized_trace(&w) * 5.0;
            let mut moved = ms.clone();
            moved[0][(i, j)] += delta;
            if i != j {
                moved[0][(j, i)] += delta.conj();
            }
            let after = EnsembleState::Matrices(moved).normalized_trace(&w) * 5.0;
            let d = word_delta(&ms, &word, 0, i, j, &e2);
            assert!((after - before - d).norm() < 1e-12, "{} vs {}", after - before, d);
        }
    }

    #[test]
    fn two_color_entries_with_coupling() {
        // V = -c(x1x2 + x2x1): a Gaussian two-matrix model with E μ̂(x1x2) = c/(1-c²)
        let spec = StarSpec::new(2, vec![Monomial::new(vec![0, 1])]).unwrap();
        let params = ParameterAssignment::new(vec![parse_rational("-1/4").unwrap()]);
        let model = Model::new(&spec, &params).unwrap();
        let cfg = McConfig {
            n: 6,
            sweeps: 4000,
            burn_in: 400,
            seed: 7,
            assert_convex: true,
            ..Default::default()
        };
        let xy = Monomial::new(vec![0, 1]);
        let req = Requests {
            words: vec![xy.clone(), x(2)],
            residuals: vec![(xy, 0), (Monomial::new(vec![1]), 0)],
        };
        let r = run(&model, &cfg, &req).unwrap();
        // the covariance is exact at every N for a Gaussian model
        let c: f64 = 0.5;
        assert!(within(&r.moments[0], c / (1.0 - c * c), 4.0, 0.0), "{:?}", r.moments[0]);
        assert!(
            within(&r.moments[1], 1.0 / (1.0 - c * c), 4.0, 0.0),
            "{:?}",
            r.moments[1]
        );
        for (_, _, e) in &r.residuals {
            assert!(within(e, 0.0, 4.0, 0.0), "{e:?}");
        }
    }

    #[test]
    fn cubic_needs_cutoff() {
        let model = one_color(&[3], &["1/10"]);
        let cfg = McConfig {
            n: 10,
            sweeps: 200,
            burn_in: 50,
            ..Default::default()
        };
        assert!(matches!(
            run(&model, &cfg, &Requests::default()),
            Err(McError::NeedsLocalization(_))
        ));
        let cfg = McConfig {
            cutoff: Some(3.0),
            ..cfg
        };
        let r = run(
            &model,
            &cfg,
            &Requests {
                words: vec![x(2)],
                residuals: vec![],
            },
        )
        .unwrap();
        assert!(r.moments[0].mean.is_finite());
        let two = gaussian(2);
        let cfg = McConfig {
            n: 4,
            sweeps: 20,
            burn_in: 0,
            ..Default::default()
        };
        assert!(matches!(
            run(&two, &cfg, &Requests::default()),
            Err(McError::NeedsLocalization(_))
        ));
    }

    #[test]
    fn cutoff_is_never_violated() {
        let model = one_color(&[3], &["1/5"]);
        for sampler in [SamplerKind::Eigenvalues, SamplerKind::Entries] {
            let cfg = McConfig {
                n: 6,
                sweeps: 300,
                burn_in: 50,
                cutoff: Some(1.5),
                sampler,
                ..Default::default()
            };
            for st in sample(&model, &cfg).unwrap() {
                let st = st.unwrap();
                assert!(st.spectral_radius() <= 1.5 + 1e-12);
                assert!(st.hermiticity_defect() < 1e-12);
            }
        }
    }

    #[test]
    fn streamed_estimates_are_reproducible() {
        let model = one_color(&[4], &["1/20"]);
        let cfg = McConfig {
            n: 10,
            sweeps: 400,
            burn_in: 100,
            seed: 42,
            ..Default::default()
        };
        let states: Vec<EnsembleState> = sample(&model, &cfg).unwrap().map(Result::unwrap).collect();
        let again: Vec<EnsembleState> = sample(&model, &cfg).unwrap().map(Result::unwrap).collect();
        assert_eq!(states, again);
        let est = estimate_moments(&states, &[Monomial::unit(), x(2)], 10);
        assert_eq!(est[0].mean, 1.0);
        assert_eq!(est[1].samples, 400);
        let res = sd_residual(&states, &model, &x(1), 0, 10).unwrap();
        assert!(res.mean.abs() < 5.0 * res.stderr + 1e-3, "{res:?}");
    }

    #[test]
    fn csv_layout() {
        let e = MomentEstimate {
            word: x(2),
            mean: 1.5,
            stderr: 0.25,
            samples: 10,
        };
        assert_eq!(to_csv(&[e]), "word,mean,stderr,n_samples\nx1^2,1.5,0.25,10\n");
    }
}
