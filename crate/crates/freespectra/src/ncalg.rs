//! Noncommutative *-polynomials in k indeterminates.
//!
//! A polynomial is a canonical sorted list of monomials; each monomial is a complex
//! coefficient times a word in the generators and their adjoints. Generators declared
//! self-adjoint absorb the star. Canonical form (merge duplicates, drop negligible
//! coefficients, sort by degree then word) makes structural equality meaningful.

use num_complex::Complex64;

use crate::{CMat, Error, Result};

/// Coefficients with magnitude below this are dropped during canonicalization.
pub const COEFF_DROP: f64 = 1e-14;

/// One letter of a word: the 1-based generator index, possibly starred.
///
/// The derived ordering (index, then starred with plain before starred) induces the
/// lexicographic word order used for canonical form and for the self-adjoint split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Generator {
    pub index: usize,
    pub starred: bool,
}

impl Generator {
    pub fn plain(index: usize) -> Self {
        Self {
            index,
            starred: false,
        }
    }
}

/// A coefficient times a word; the empty word is the constant term.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coefficient: Complex64,
    pub word: Vec<Generator>,
}

impl Monomial {
    pub fn new(coefficient: Complex64, word: Vec<Generator>) -> Self {
        Self { coefficient, word }
    }

    pub fn constant(c: Complex64) -> Self {
        Self {
            coefficient: c,
            word: Vec::new(),
        }
    }

    pub fn degree(&self) -> usize {
        self.word.len()
    }
}

/// A *-polynomial in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct NCPolynomial {
    arity: usize,
    selfadjoint: Vec<bool>,
    monomials: Vec<Monomial>,
}

fn adjoint_word(word: &[Generator], selfadjoint: &[bool]) -> Vec<Generator> {
    word.iter()
        .rev()
        .map(|g| {
            if selfadjoint[g.index - 1] {
                Generator::plain(g.index)
            } else {
                Generator {
                    index: g.index,
                    starred: !g.starred,
                }
            }
        })
        .collect()
}

impl NCPolynomial {
    /// Canonicalizing constructor: validates indices, normalizes stars on self-adjoint
    /// generators, merges duplicate words, drops coefficients below [`COEFF_DROP`], and
    /// sorts by (degree, word).
    pub fn new(arity: usize, selfadjoint: Vec<bool>, monomials: Vec<Monomial>) -> Result<Self> {
        if selfadjoint.len() != arity {
            return Err(Error::Parameter(format!(
                "expected {} self-adjointness flags, got {}",
                arity,
                selfadjoint.len()
            )));
        }
        let mut merged: std::collections::BTreeMap<(usize, Vec<Generator>), Complex64> =
            std::collections::BTreeMap::new();
        for mono in monomials {
            let mut word = mono.word;
            for g in &mut word {
                if g.index == 0 || g.index > arity {
                    return Err(Error::Parameter(format!(
                        "generator index {} outside arity {}",
                        g.index, arity
                    )));
                }
                if selfadjoint[g.index - 1] {
                    g.starred = false;
                }
            }
            *merged
                .entry((word.len(), word))
                .or_insert(Complex64::new(0.0, 0.0)) += mono.coefficient;
        }
        let monomials = merged
            .into_iter()
            .filter(|(_, c)| c.norm() >= COEFF_DROP)
            .map(|((_, word), coefficient)| Monomial { coefficient, word })
            .collect();
        Ok(Self {
            arity,
            selfadjoint,
            monomials,
        })
    }

    /// The zero polynomial.
    pub fn zero(arity: usize, selfadjoint: Vec<bool>) -> Result<Self> {
        Self::new(arity, selfadjoint, Vec::new())
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn selfadjoint_flags(&self) -> &[bool] {
        &self.selfadjoint
    }

    /// Canonical monomial list, sorted by (degree, word).
    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    /// Largest word length; 0 for constants and for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.monomials.last().map_or(0, Monomial::degree)
    }

    /// Coefficient of the empty word.
    pub fn constant_term(&self) -> Complex64 {
        self.monomials
            .iter()
            .find(|m| m.word.is_empty())
            .map_or(Complex64::new(0.0, 0.0), |m| m.coefficient)
    }

    /// Formal adjoint: each c·g₁…g_d becomes conj(c)·g_d*…g₁*.
    pub fn adjoint(&self) -> NCPolynomial {
        let monos = self
            .monomials
            .iter()
            .map(|m| Monomial {
                coefficient: m.coefficient.conj(),
                word: adjoint_word(&m.word, &self.selfadjoint),
            })
            .collect();
        Self::new(self.arity, self.selfadjoint.clone(), monos)
            .expect("adjoint of a valid polynomial is valid")
    }

    /// True iff the adjoint has the same canonical form.
    ///
    /// Words must match exactly; coefficients are compared within the drop threshold,
    /// consistent with canonicalization discarding magnitudes below [`COEFF_DROP`].
    pub fn is_selfadjoint(&self) -> bool {
        let adj = self.adjoint();
        if adj.monomials.len() != self.monomials.len() {
            return false;
        }
        self.monomials.iter().zip(adj.monomials.iter()).all(|(a, b)| {
            a.word == b.word && (a.coefficient - b.coefficient).norm() <= COEFF_DROP
        })
    }

    /// Sum of two polynomials over the same generators.
    pub fn add(&self, other: &NCPolynomial) -> Result<NCPolynomial> {
        if self.arity != other.arity || self.selfadjoint != other.selfadjoint {
            return Err(Error::Parameter(
                "cannot add polynomials over different generator sets".into(),
            ));
        }
        let mut monos = self.monomials.clone();
        monos.extend(other.monomials.iter().cloned());
        Self::new(self.arity, self.selfadjoint.clone(), monos)
    }

    /// Scalar multiple.
    pub fn scale(&self, c: Complex64) -> NCPolynomial {
        let monos = self
            .monomials
            .iter()
            .map(|m| Monomial {
                coefficient: m.coefficient * c,
                word: m.word.clone(),
            })
            .collect();
        Self::new(self.arity, self.selfadjoint.clone(), monos)
            .expect("scaling a valid polynomial is valid")
    }

    /// Evaluate at one square complex matrix per generator (common size N). A starred
    /// letter substitutes the conjugate transpose of its argument.
    pub fn evaluate(&self, args: &[CMat]) -> Result<CMat> {
        if args.len() != self.arity {
            return Err(Error::Size(format!(
                "polynomial has arity {} but {} arguments were given",
                self.arity,
                args.len()
            )));
        }
        let n = match args.first() {
            Some(a) => a.nrows(),
            None => {
                return Err(Error::Size(
                    "evaluation needs at least one argument matrix; use arity >= 1".into(),
                ))
            }
        };
        for (j, a) in args.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::Size(format!(
                    "argument {} is {}x{}, expected {}x{}",
                    j + 1,
                    a.nrows(),
                    a.ncols(),
                    n,
                    n
                )));
            }
        }
        let mut adjoints: Vec<Option<CMat>> = vec![None; self.arity];
        let mut out = CMat::zeros((n, n));
        for mono in &self.monomials {
            if mono.word.is_empty() {
                for i in 0..n {
                    out[[i, i]] += mono.coefficient;
                }
                continue;
            }
            let mut acc: Option<CMat> = None;
            for g in &mono.word {
                let factor: &CMat = if g.starred {
                    adjoints[g.index - 1]
                        .get_or_insert_with(|| crate::matops::adjoint(&args[g.index - 1]))
                } else {
                    &args[g.index - 1]
                };
                acc = Some(match acc {
                    None => factor.clone(),
                    Some(a) => a.dot(factor),
                });
            }
            let term = acc.expect("nonempty word").mapv(|z| z * mono.coefficient);
            out += &term;
        }
        Ok(out)
    }

    /// A polynomial P₀ with P₀ + P₀* = self and deg P₀ = deg self.
    ///
    /// Rule: for each adjoint-pair of words {w, w*} with w lexicographically below w*,
    /// the w-monomial goes wholly to P₀; self-paired words (w = w*, including the
    /// constant) contribute half their coefficient.
    pub fn split_selfadjoint(&self) -> Result<NCPolynomial> {
        if !self.is_selfadjoint() {
            return Err(Error::Contract(
                "split_selfadjoint requires a self-adjoint polynomial".into(),
            ));
        }
        let mut monos = Vec::new();
        for m in &self.monomials {
            let wstar = adjoint_word(&m.word, &self.selfadjoint);
            match m.word.cmp(&wstar) {
                std::cmp::Ordering::Less => monos.push(m.clone()),
                std::cmp::Ordering::Equal => monos.push(Monomial {
                    coefficient: m.coefficient * 0.5,
                    word: m.word.clone(),
                }),
                std::cmp::Ordering::Greater => {}
            }
        }
        Self::new(self.arity, self.selfadjoint.clone(), monos)
    }

    /// Render with the config-file names: generators 1..=r print as `x1..xr`, the rest
    /// as `a1..a(arity-r)`.
    pub fn text(&self, r: usize) -> String {
        if self.monomials.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (k, m) in self.monomials.iter().enumerate() {
            let c = m.coefficient;
            let (sign, mag) = if c.im == 0.0 && c.re < 0.0 {
                ("-", Complex64::new(-c.re, 0.0))
            } else {
                ("+", c)
            };
            if k == 0 {
                if sign == "-" {
                    out.push_str("-");
                }
            } else {
                out.push_str(if sign == "-" { " - " } else { " + " });
            }
            let coeff_str = if mag.im == 0.0 {
                format!("{}", mag.re)
            } else {
                format!("({}+{}i)", mag.re, mag.im)
            };
            let mut factors = Vec::new();
            if m.word.is_empty() || !(mag.im == 0.0 && mag.re == 1.0) {
                factors.push(coeff_str);
            }
            for g in &m.word {
                let name = if g.index <= r {
                    format!("x{}", g.index)
                } else {
                    format!("a{}", g.index - r)
                };
                factors.push(if g.starred { format!("{}^*", name) } else { name });
            }
            out.push_str(&factors.join("*"));
        }
        out
    }
}

impl std::fmt::Display for NCPolynomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.text(self.arity))
    }
}

/// Parse the config-file polynomial syntax over generators `x1..xr` (semicircular)
/// and `a1..at` (deterministic Hermitian), e.g. `2.0*x1*a1*a1^* - 0.5`.
///
/// Terms are separated by `+`/`-`; a term is a `*`-separated product of real number
/// literals and generator names, each name optionally followed by `^*`. Deterministic
/// letters stand for Hermitian matrices, so all generators are declared self-adjoint
/// and the adjoint marker is accepted as the identity. Unknown names and out-of-range
/// indices are rejected with their byte position.
pub fn parse_polynomial(text: &str, r: usize, t: usize) -> Result<NCPolynomial> {
    let toks = tokenize(text)?;
    if toks.is_empty() {
        return Err(Error::Parse {
            message: "empty polynomial".into(),
            position: 0,
        });
    }
    let arity = r + t;
    let mut monomials = Vec::new();
    let mut i = 0usize;
    loop {
        // Sign chain before a term.
        let mut sign = 1.0f64;
        let mut saw_sign = false;
        while i < toks.len() {
            match toks[i].kind {
                TokKind::Plus => {
                    saw_sign = true;
                    i += 1;
                }
                TokKind::Minus => {
                    sign = -sign;
                    saw_sign = true;
                    i += 1;
                }
                _ => break,
            }
        }
        if i >= toks.len() {
            if saw_sign {
                return Err(Error::Parse {
                    message: "dangling sign at end of polynomial".into(),
                    position: toks.last().map_or(0, |t| t.pos),
                });
            }
            break;
        }
        let (mono, next) = parse_term(&toks, i, r, t)?;
        monomials.push(Monomial {
            coefficient: mono.coefficient * sign,
            word: mono.word,
        });
        i = next;
        if i < toks.len() {
            match toks[i].kind {
                TokKind::Plus | TokKind::Minus => continue,
                _ => {
                    return Err(Error::Parse {
                        message: "expected `+` or `-` between terms".into(),
                        position: toks[i].pos,
                    })
                }
            }
        } else {
            break;
        }
    }
    NCPolynomial::new(arity, vec![true; arity], monomials)
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Plus,
    Minus,
    Times,
    Adjoint,
    Number(f64),
    Name(String),
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Tok>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                toks.push(Tok {
                    kind: TokKind::Plus,
                    pos: i,
                });
                i += 1;
            }
            b'-' => {
                toks.push(Tok {
                    kind: TokKind::Minus,
                    pos: i,
                });
                i += 1;
            }
            b'*' => {
                toks.push(Tok {
                    kind: TokKind::Times,
                    pos: i,
                });
                i += 1;
            }
            b'^' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'*' {
                    toks.push(Tok {
                        kind: TokKind::Adjoint,
                        pos: i,
                    });
                    i += 2;
                } else {
                    return Err(Error::Parse {
                        message: "`^` must be followed by `*`".into(),
                        position: i,
                    });
                }
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| Error::Parse {
                    message: format!("invalid number literal `{}`", lit),
                    position: start,
                })?;
                toks.push(Tok {
                    kind: TokKind::Number(value),
                    pos: start,
                });
            }
            b'a'..=b'z' | b'A'..=b'Z' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push(Tok {
                    kind: TokKind::Name(text[start..i].to_string()),
                    pos: start,
                });
            }
            _ => {
                return Err(Error::Parse {
                    message: format!("unexpected character `{}`", text[i..].chars().next().unwrap()),
                    position: i,
                })
            }
        }
    }
    Ok(toks)
}

fn resolve_name(name: &str, pos: usize, r: usize, t: usize) -> Result<usize> {
    let (family, digits) = name.split_at(1);
    let index: usize = digits.parse().map_err(|_| Error::Parse {
        message: format!(
            "unknown generator `{}` (expected x1..x{} or a1..a{})",
            name, r, t
        ),
        position: pos,
    })?;
    match family {
        "x" if (1..=r).contains(&index) => Ok(index),
        "a" if (1..=t).contains(&index) => Ok(r + index),
        "x" => Err(Error::Parse {
            message: format!("generator `{}` out of range: model has r = {}", name, r),
            position: pos,
        }),
        "a" => Err(Error::Parse {
            message: format!("generator `{}` out of range: model has t = {}", name, t),
            position: pos,
        }),
        _ => Err(Error::Parse {
            message: format!(
                "unknown generator `{}` (expected x1..x{} or a1..a{})",
                name, r, t
            ),
            position: pos,
        }),
    }
}

fn parse_term(toks: &[Tok], mut i: usize, r: usize, t: usize) -> Result<(Monomial, usize)> {
    let mut coefficient = Complex64::new(1.0, 0.0);
    let mut word = Vec::new();
    loop {
        match &toks[i].kind {
            TokKind::Number(v) => {
                coefficient *= *v;
                i += 1;
            }
            TokKind::Name(name) => {
                let index = resolve_name(name, toks[i].pos, r, t)?;
                i += 1;
                let mut starred = false;
                if i < toks.len() && toks[i].kind == TokKind::Adjoint {
                    starred = true;
                    i += 1;
                }
                word.push(Generator { index, starred });
            }
            TokKind::Adjoint => {
                return Err(Error::Parse {
                    message: "adjoint marker `^*` must follow a generator name".into(),
                    position: toks[i].pos,
                })
            }
            _ => {
                return Err(Error::Parse {
                    message: "expected a number or generator name".into(),
                    position: toks[i].pos,
                })
            }
        }
        if i < toks.len() && toks[i].kind == TokKind::Times {
            i += 1;
            if i >= toks.len() {
                return Err(Error::Parse {
                    message: "dangling `*` at end of polynomial".into(),
                    position: toks[i - 1].pos,
                });
            }
            continue;
        }
        break;
    }
    Ok((Monomial { coefficient, word }, i))
}
