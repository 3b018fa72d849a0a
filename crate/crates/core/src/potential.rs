//! Textual model specifications.
//!
//! ```text
//! potential := term ("+" term)* ;
//! term      := param "*" "(" word ")" ;
//! word      := factor ("*" factor)* ;
//! factor    := "x" INT ("^" INT)? ;
//! param     := "t" INT | RATIONAL ;
//! ```
//!
//! Each term `t_i*(q_i)` contributes `t_i (q_i + q_i^*)` to the model, so a
//! self-adjoint `q_i` appears doubled. Whitespace is insignificant.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_rational::BigRational;
use thiserror::Error;

use crate::ncpoly::{Monomial, NCPolynomial};
use crate::rational::{format_rational, parse_rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PotentialError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("monomial {0} appears in more than one term")]
    DuplicateMonomial(String),
    #[error("color x{color} at byte {pos} exceeds the alphabet size {m}")]
    ColorOutOfRange { color: usize, m: usize, pos: usize },
    #[error("parameter {0} is not bound")]
    MissingBinding(String),
    #[error("binding for unknown parameter {0}")]
    ExtraBinding(String),
}

/// One interaction term `q` of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StarTerm {
    pub word: Monomial,
    pub self_adjoint: bool,
}

/// The interaction data `(q_1, ..., q_n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StarSpec {
    m: usize,
    terms: Vec<StarTerm>,
}

impl StarSpec {
    pub fn new(m: usize, words: Vec<Monomial>) -> Result<Self, PotentialError> {
        let mut seen = std::collections::HashSet::new();
        let mut terms = Vec::with_capacity(words.len());
        for word in words {
            if let Err(crate::ncpoly::NcError::ColorOutOfRange { color, m }) = word.check_alphabet(m) {
                return Err(PotentialError::ColorOutOfRange {
                    color: color + 1,
                    m,
                    pos: 0,
                });
            }
            if !seen.insert(word.clone()) {
                return Err(PotentialError::DuplicateMonomial(word.to_string()));
            }
            let self_adjoint = word.is_self_adjoint();
            terms.push(StarTerm { word, self_adjoint });
        }
        Ok(StarSpec { m, terms })
    }

    /// The model with no interaction: everything reduces to semicircular moments.
    pub fn empty(m: usize) -> Self {
        StarSpec { m, terms: Vec::new() }
    }

    pub fn alphabet(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[StarTerm] {
        &self.terms
    }

    pub fn word(&self, j: usize) -> &Monomial {
        &self.terms[j].word
    }

    /// Maximal degree `D` among the `q_i` (0 for the empty model).
    pub fn max_degree(&self) -> usize {
        self.terms.iter().map(|t| t.word.degree()).max().unwrap_or(0)
    }

    /// `q_j + q_j^*`.
    pub fn symmetrized(&self, j: usize) -> NCPolynomial {
        let word = &self.terms[j].word;
        let q = NCPolynomial::monomial(self.m, word.clone()).expect("validated at construction");
        q.add(&q.involution())
    }

    /// `V = Σ t_j (q_j + q_j^*)`.
    pub fn potential(&self, params: &ParameterAssignment) -> NCPolynomial {
        let mut v = NCPolynomial::zero(self.m);
        for (j, t) in params.values().iter().enumerate() {
            v = v.add(&self.symmetrized(j).scale(t));
        }
        v
    }
}

/// Coupling of a term: a named parameter or a literal value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Param {
    Symbol(String),
    Literal(BigRational),
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Symbol(name) => write!(f, "{name}"),
            Param::Literal(v) => write!(f, "{}", format_rational(v)),
        }
    }
}

/// A parsed model: star data plus the coupling of each term, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Potential {
    pub spec: StarSpec,
    pub params: Vec<Param>,
}

impl Potential {
    /// Distinct symbolic names in order of first appearance.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.params {
            if let Param::Symbol(name) = p {
                if !names.contains(name) {
                    names.push(name.clone());
                }
            }
        }
        names
    }

    pub fn bind(&self, assignments: &HashMap<String, BigRational>) -> Result<ParameterAssignment, PotentialError> {
        bind_parameters(&self.params, assignments)
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (term, param)) in self.spec.terms.iter().zip(&self.params).enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{param}*({})", term.word)?;
        }
        Ok(())
    }
}

/// Coupling values `t_1..t_n`, aligned with the star spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterAssignment(Vec<BigRational>);

impl ParameterAssignment {
    pub fn new(values: Vec<BigRational>) -> Self {
        ParameterAssignment(values)
    }

    pub fn zeros(n: usize) -> Self {
        ParameterAssignment(vec![BigRational::from_integer(0.into()); n])
    }

    pub fn values(&self) -> &[BigRational] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `|t| = max |t_i|`.
    pub fn norm(&self) -> BigRational {
        use num_traits::Signed;
        self.0
            .iter()
            .map(|t| t.abs())
            .max()
            .unwrap_or_else(|| BigRational::from_integer(0.into()))
    }
}

/// Orders the bound values along the terms. Literal couplings pass through.
pub fn bind_parameters(
    params: &[Param],
    assignments: &HashMap<String, BigRational>,
) -> Result<ParameterAssignment, PotentialError> {
    let mut values = Vec::with_capacity(params.len());
    for p in params {
        match p {
            Param::Literal(v) => values.push(v.clone()),
            Param::Symbol(name) => match assignments.get(name) {
                Some(v) => values.push(v.clone()),
                None => return Err(PotentialError::MissingBinding(name.clone())),
            },
        }
    }
    let mut extra: Vec<&String> = assignments
        .keys()
        .filter(|k| !params.iter().any(|p| matches!(p, Param::Symbol(n) if n == *k)))
        .collect();
    extra.sort();
    if let Some(name) = extra.first() {
        return Err(PotentialError::ExtraBinding((*name).clone()));
    }
    Ok(ParameterAssignment(values))
}

/// Parses a potential over an alphabet of size `m`.
pub fn parse_potential(text: &str, m: usize) -> Result<Potential, PotentialError> {
    let mut parser = Parser::new(text, m);
    let mut words = Vec::new();
    let mut params = Vec::new();
    let mut positions = BTreeMap::new();
    loop {
        let (param, word, pos) = parser.term()?;
        if positions.insert(word.clone(), pos).is_some() {
            return Err(PotentialError::DuplicateMonomial(word.to_string()));
        }
        words.push(word);
        params.push(param);
        parser.skip_ws();
        if parser.eat(b'+') {
            continue;
        }
        if parser.at_end() {
            break;
        }
        return Err(parser.error("expected `+` or end of input"));
    }
    let spec = StarSpec::new(m, words)?;
    Ok(Potential { spec, params })
}

/// Parses a single word such as `x1^2*x2`, or `1` for the unit.
pub fn parse_word(text: &str, m: usize) -> Result<Monomial, PotentialError> {
    let mut parser = Parser::new(text, m);
    parser.skip_ws();
    if parser.eat(b'1') {
        parser.skip_ws();
        if parser.at_end() {
            return Ok(Monomial::unit());
        }
        return Err(parser.error("unexpected input after unit monomial"));
    }
    let word = parser.word()?;
    parser.skip_ws();
    if !parser.at_end() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(word)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    m: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, m: usize) -> Self {
        Parser {
            src: text.as_bytes(),
            pos: 0,
            m,
        }
    }

    fn error(&self, message: &str) -> PotentialError {
        PotentialError::Syntax {
            pos: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), PotentialError> {
        self.skip_ws();
        if self.eat(b) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", b as char)))
        }
    }

    fn integer(&mut self) -> Result<usize, PotentialError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected an integer"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| PotentialError::Syntax {
                pos: start,
                message: "integer too large".into(),
            })
    }

    fn term(&mut self) -> Result<(Param, Monomial, usize), PotentialError> {
        self.skip_ws();
        let start = self.pos;
        let param = self.param()?;
        self.expect(b'*')?;
        self.expect(b'(')?;
        let word = self.word()?;
        self.expect(b')')?;
        Ok((param, word, start))
    }

    fn param(&mut self) -> Result<Param, PotentialError> {
        self.skip_ws();
        if self.eat(b't') {
            let index = self.integer()?;
            return Ok(Param::Symbol(format!("t{index}")));
        }
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9' | b'.' | b'/' | b'-')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a parameter `t<INT>` or a rational literal"));
        }
        let literal = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        parse_rational(literal)
            .map(Param::Literal)
            .map_err(|e| PotentialError::Syntax {
                pos: start,
                message: e.to_string(),
            })
    }

    fn word(&mut self) -> Result<Monomial, PotentialError> {
        let mut letters = Vec::new();
        loop {
            self.skip_ws();
            let factor_pos = self.pos;
            if !self.eat(b'x') {
                return Err(self.error("expected a variable `x<INT>`"));
            }
            let color = self.integer()?;
            if color == 0 {
                return Err(PotentialError::Syntax {
                    pos: factor_pos,
                    message: "variables are numbered from x1".into(),
                });
            }
            if color > self.m {
                return Err(PotentialError::ColorOutOfRange {
                    color,
                    m: self.m,
                    pos: factor_pos,
                });
            }
            self.skip_ws();
            let power = if self.eat(b'^') {
                let p = self.integer()?;
                if p == 0 {
                    return Err(PotentialError::Syntax {
                        pos: factor_pos,
                        message: "zero exponent".into(),
                    });
                }
                p
            } else {
                1
            };
            letters.extend(std::iter::repeat_n((color - 1) as u8, power));
            self.skip_ws();
            // a `*` followed by something other than `x` belongs to the caller
            if self.peek() == Some(b'*') {
                let save = self.pos;
                self.pos += 1;
                self.skip_ws();
                if self.peek() == Some(b'x') {
                    continue;
                }
                self.pos = save;
            }
            break;
        }
        Ok(Monomial::new(letters))
    }
}
