//! Compiles sparse polynomials of linear functionals into signed sums of
//! generalized continued fractions.
//!
//! Euler's continued-fraction formula turns the partial sums
//! `a_0 + a_0 a_1 + ... + a_0 a_1 ... a_d` into the fraction
//!
//! ```text
//! a_0 / (1 + (-a_1) / (1 + a_1 + (-a_2) / (1 + a_2 + ... (-a_d) / (1 + a_d))))
//! ```
//!
//! so a monomial `c * prod_k u_k·x` is the difference of the depth-`d` and
//! depth-`d-1` fractions with `a_0 = c` and `a_k = u_k·x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `weights · x + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weights: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(p: usize, value: f64) -> Self {
        Affine {
            weights: vec![0.0; p],
            constant: value,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(x)
            .fold(self.constant, |acc, (w, xi)| acc + w * xi)
    }
}

/// `N_0 / (1 + N_1 / (1 + D_1 + N_2 / (1 + D_2 + ... N_d / (1 + D_d))))`
/// with affine numerators `N_k` and denominator offsets `D_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedCF {
    pub input_dim: usize,
    /// `d + 1` numerators.
    pub numerators: Vec<Affine>,
    /// `d` denominator offsets; the leading `1 +` is implicit.
    pub denominators: Vec<Affine>,
}

/// Value of a fraction together with the smallest denominator magnitude met.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcfValue {
    pub value: f64,
    pub min_abs_denominator: f64,
}

impl GeneralizedCF {
    pub fn new(
        input_dim: usize,
        numerators: Vec<Affine>,
        denominators: Vec<Affine>,
    ) -> Result<Self> {
        if numerators.len() != denominators.len() + 1 {
            return Err(Error::Config(format!(
                "{} numerators need {} denominators, got {}",
                numerators.len(),
                numerators.len().saturating_sub(1),
                denominators.len()
            )));
        }
        if numerators
            .iter()
            .chain(&denominators)
            .any(|a| a.weights.len() != input_dim)
        {
            return Err(Error::Dimension(format!(
                "every affine term must have {input_dim} weights"
            )));
        }
        Ok(GeneralizedCF {
            input_dim,
            numerators,
            denominators,
        })
    }

    pub fn depth(&self) -> usize {
        self.denominators.len()
    }

    /// Exact evaluation, reporting the smallest denominator magnitude.
    pub fn eval_detailed(&self, x: &[f64]) -> Result<GcfValue> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, fraction expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let d = self.depth();
        let n0 = self.numerators[0].eval(x);
        if d == 0 {
            return Ok(GcfValue {
                value: n0,
                min_abs_denominator: f64::INFINITY,
            });
        }
        let mut min_abs = f64::INFINITY;
        let mut tail = 0.0;
        // Stage k denominator is 1 + D_k + tail for k = d..1, then 1 + tail.
        for k in (1..=d).rev() {
            let denom = 1.0 + self.denominators[k - 1].eval(x) + tail;
            min_abs = min_abs.min(denom.abs());
            if denom == 0.0 {
                return Err(pole_at(k));
            }
            tail = self.numerators[k].eval(x) / denom;
        }
        let denom = 1.0 + tail;
        min_abs = min_abs.min(denom.abs());
        if denom == 0.0 {
            return Err(pole_at(0));
        }
        Ok(GcfValue {
            value: n0 / denom,
            min_abs_denominator: min_abs,
        })
    }
}

fn pole_at(stage: usize) -> Error {
    Error::Pole {
        ladder: None,
        detail: format!("denominator of stage {stage} is zero"),
    }
}

pub fn gcf_eval(g: &GeneralizedCF, x: &[f64]) -> Result<f64> {
    g.eval_detailed(x).map(|v| v.value)
}

/// One monomial `coeff * prod_k dirs[k]·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub dirs: Vec<Vec<f64>>,
}

impl Monomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.dirs
            .iter()
            .map(|u| u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .product::<f64>()
            * self.coeff
    }
}

/// `constant + sum_S c_S prod_{k in S} u_k·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsePoly {
    pub constant: f64,
    #[serde(default)]
    pub monomials: Vec<Monomial>,
}

impl SparsePoly {
    /// Input dimension implied by the direction vectors (zero for a constant).
    pub fn input_dim(&self) -> Result<usize> {
        let mut dim: Option<usize> = None;
        for (i, m) in self.monomials.iter().enumerate() {
            if m.dirs.is_empty() {
                return Err(Error::Config(format!("monomial {i} has no directions")));
            }
            for u in &m.dirs {
                if u.iter().any(|v| !v.is_finite()) || !m.coeff.is_finite() {
                    return Err(Error::NonFinite(format!("monomial {i}")));
                }
                match dim {
                    None => dim = Some(u.len()),
                    Some(p) if p != u.len() => {
                        return Err(Error::Dimension(format!(
                            "monomial {i} has a direction of length {}, expected {p}",
                            u.len()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(dim.unwrap_or(0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.monomials.iter().map(|m| m.eval(x)).sum::<f64>()
    }

    /// Parses textual sugar such as `2*x1^2*x2 - 0.5*x2 + 3`.
    ///
    /// Variables are `x1..xp` (1-based). Powers expand into repeated unit
    /// directions. `input_dim` defaults to the largest variable index.
    pub fn parse(text: &str, input_dim: Option<usize>) -> Result<Self> {
        parse::parse_poly(text, input_dim)
    }
}

/// Euler ladder `a_0 / (1 + (-a_1)/(1 + a_1 + ...))` with `a_0 = coeff`, `a_k = dirs[k]·x`.
fn euler_ladder(coeff: f64, dirs: &[Vec<f64>], p: usize) -> GeneralizedCF {
    let mut numerators = vec![Affine::constant(p, coeff)];
    let mut denominators = Vec::with_capacity(dirs.len());
    for u in dirs {
        numerators.push(Affine {
            weights: u.iter().map(|v| -v).collect(),
            constant: 0.0,
        });
        denominators.push(Affine {
            weights: u.clone(),
            constant: 0.0,
        });
    }
    GeneralizedCF {
        input_dim: p,
        numerators,
        denominators,
    }
}

/// Returns `(F_d, F_{d-1})` whose difference is `coeff * prod_k dirs[k]·x`.
pub fn encode_monomial(coeff: f64, dirs: &[Vec<f64>]) -> Result<(GeneralizedCF, GeneralizedCF)> {
    if dirs.is_empty() {
        return Err(Error::Empty(
            "a monomial needs at least one direction".into(),
        ));
    }
    let p = dirs[0].len();
    if dirs.iter().any(|u| u.len() != p) {
        return Err(Error::Dimension("directions have different lengths".into()));
    }
    let d = dirs.len();
    Ok((
        euler_ladder(coeff, dirs, p),
        euler_ladder(coeff, &dirs[..d - 1], p),
    ))
}

/// A fraction with its mixing sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedCf {
    pub cf: GeneralizedCF,
    pub sign: f64,
}

/// The signed ladders of a polynomial. A zero constant gets no ladder.
pub fn encode_poly(poly: &SparsePoly) -> Result<Vec<SignedCf>> {
    let p = poly.input_dim()?;
    let mut out = Vec::with_capacity(2 * poly.monomials.len() + 1);
    if poly.constant != 0.0 {
        out.push(SignedCf {
            cf: GeneralizedCF {
                input_dim: p,
                numerators: vec![Affine::constant(p, poly.constant)],
                denominators: Vec::new(),
            },
            sign: 1.0,
        });
    }
    for m in &poly.monomials {
        let (long, short) = encode_monomial(m.coeff, &m.dirs)?;
        out.push(SignedCf {
            cf: long,
            sign: 1.0,
        });
        out.push(SignedCf {
            cf: short,
            sign: -1.0,
        });
    }
    Ok(out)
}

/// Signed sum of an encoding at `x` and the smallest denominator seen.
pub fn eval_encoding(enc: &[SignedCf], x: &[f64]) -> Result<GcfValue> {
    let mut value = 0.0;
    let mut min_abs = f64::INFINITY;
    for s in enc {
        let v = s.cf.eval_detailed(x)?;
        value += s.sign * v.value;
        min_abs = min_abs.min(v.min_abs_denominator);
    }
    Ok(GcfValue {
        value,
        min_abs_denominator: min_abs,
    })
}

/// Samples closer than this to a pole are skipped during verification.
pub const POLE_EXCLUSION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub max_relative_error: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// Compares the encoding against direct evaluation at `trials` uniform points
/// of `[lo, hi]^p`. The error at each point is `|enc - poly| / max(|poly|, 1)`.
pub fn verify_encoding(
    poly: &SparsePoly,
    enc: &[SignedCf],
    trials: usize,
    bounds: (f64, f64),
    seed: u64,
) -> Result<Verification> {
    let p = poly.input_dim()?;
    let (lo, hi) = bounds;
    if !(lo < hi) {
        return Err(Error::Config(format!("empty sampling box [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; p];
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut rejected = 0;
    for _ in 0..trials {
        for xi in &mut x {
            *xi = rng.random_range(lo..hi);
        }
        let got = match eval_encoding(enc, &x) {
            Ok(v) if v.min_abs_denominator >= POLE_EXCLUSION => v.value,
            Ok(_) | Err(Error::Pole { .. }) => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let want = poly.eval(&x);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
        accepted += 1;
    }
    Ok(Verification {
        max_relative_error: worst,
        accepted,
        rejected,
    })
}

mod parse {
    use super::{Monomial, SparsePoly};
    use crate::error::{Error, Result};

    struct Lexer<'a> {
        chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    }

    fn err(col: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: 1,
            column: col + 1,
            message: msg.into(),
        }
    }

    impl<'a> Lexer<'a> {
        fn skip_ws(&mut self) {
            while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
                self.chars.next();
            }
        }

        fn peek(&mut self) -> Option<(usize, char)> {
            self.skip_ws();
            self.chars.peek().copied()
        }

        fn number(&mut self) -> Result<f64> {
            let (start, _) = self.peek().ok_or_else(|| err(0, "expected a number"))?;
            let mut s = String::new();
            while let Some(&(_, c)) = self.chars.peek() {
                let exp_sign =
                    matches!(c, '+' | '-') && matches!(s.chars().last(), Some('e' | 'E'));
                if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                    s.push(c);
                    self.chars.next();
                } else {
                    break;
                }
            }
            s.parse()
                .map_err(|_| err(start, format!("bad number {s:?}")))
        }

        fn integer(&mut self) -> Result<usize> {
            let (start, _) = self.peek().ok_or_else(|| err(0, "expected an integer"))?;
            let mut s = String::new();
            while let Some(&(_, c)) = self.chars.peek() {
                if c.is_ascii_digit() {
                    s.push(c);
                    self.chars.next();
                } else {
                    break;
                }
            }
            s.parse().map_err(|_| err(start, "expected an integer"))
        }
    }

    /// Parses `term (('+'|'-') term)*`, each term a `*`-product of numbers and `x<i>[^k]`.
    pub(super) fn parse_poly(text: &str, input_dim: Option<usize>) -> Result<SparsePoly> {
        let mut lx = Lexer {
            chars: text.char_indices().peekable(),
        };
        // (coefficient, variable powers)
        let mut terms: Vec<(f64, Vec<(usize, usize)>)> = Vec::new();
        let mut sign = 1.0;
        if let Some((_, c @ ('+' | '-'))) = lx.peek() {
            lx.chars.next();
            if c == '-' {
                sign = -1.0;
            }
        }
        loop {
            let mut coeff = sign;
            let mut vars = Vec::new();
            loop {
                match lx.peek() {
                    Some((pos, 'x')) => {
                        lx.chars.next();
                        let idx = lx.integer()?;
                        if idx == 0 {
                            return Err(err(pos, "variables are numbered from x1"));
                        }
                        let mut power = 1;
                        if let Some((_, '^')) = lx.peek() {
                            lx.chars.next();
                            power = lx.integer()?;
                        }
                        vars.push((idx - 1, power));
                    }
                    Some((_, c)) if c.is_ascii_digit() || c == '.' => coeff *= lx.number()?,
                    Some((pos, c)) => return Err(err(pos, format!("unexpected {c:?}"))),
                    None => return Err(err(text.len(), "unexpected end of input")),
                }
                match lx.peek() {
                    Some((_, '*')) => {
                        lx.chars.next();
                    }
                    _ => break,
                }
            }
            terms.push((coeff, vars));
            match lx.peek() {
                Some((_, '+')) => sign = 1.0,
                Some((_, '-')) => sign = -1.0,
                None => break,
                Some((pos, c)) => return Err(err(pos, format!("unexpected {c:?}"))),
            }
            lx.chars.next();
        }

        let max_var = terms
            .iter()
            .flat_map(|(_, v)| v.iter().map(|(j, _)| j + 1))
            .max()
            .unwrap_or(0);
        let p = input_dim.unwrap_or(max_var);
        if max_var > p {
            return Err(err(
                0,
                format!("variable x{max_var} exceeds input dimension {p}"),
            ));
        }
        let mut poly = SparsePoly {
            constant: 0.0,
            monomials: Vec::new(),
        };
        for (coeff, vars) in terms {
            let mut dirs = Vec::new();
            for (j, power) in vars {
                let mut u = vec![0.0; p];
                u[j] = 1.0;
                dirs.extend(std::iter::repeat_n(u, power));
            }
            if dirs.is_empty() {
                poly.constant += coeff;
            } else {
                poly.monomials.push(Monomial { coeff, dirs });
            }
        }
        Ok(poly)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(p: usize, j: usize) -> Vec<f64> {
        let mut u = vec![0.0; p];
        u[j] = 1.0;
        u
    }

    #[test]
    fn hand_evaluated_fraction() {
        let g = GeneralizedCF::new(
            1,
            vec![Affine::constant(1, 2.0), Affine::constant(1, -3.0)],
            vec![Affine::constant(1, 3.0)],
        )
        .unwrap();
        assert_eq!(gcf_eval(&g, &[0.0]).unwrap(), 8.0);
    }

    #[test]
    fn depth_zero_fraction() {
        let g = GeneralizedCF::new(
            2,
            vec![Affine {
                weights: vec![1.0, 2.0],
                constant: 0.5,
            }],
            vec![],
        )
        .unwrap();
        assert_eq!(gcf_eval(&g, &[1.0, 1.0]).unwrap(), 3.5);
    }

    #[test]
    fn zero_denominator_is_a_pole() {
        let g = GeneralizedCF::new(
            1,
            vec![Affine::constant(1, 1.0), Affine::constant(1, 1.0)],
            vec![Affine::constant(1, -1.0)],
        )
        .unwrap();
        assert!(matches!(gcf_eval(&g, &[0.0]), Err(Error::Pole { .. })));
    }

    #[test]
    fn monomial_examples() {
        let (f1, f0) = encode_monomial(2.0, &[vec![1.0]]).unwrap();
        assert_eq!(gcf_eval(&f1, &[3.0]).unwrap(), 8.0);
        assert_eq!(gcf_eval(&f0, &[3.0]).unwrap(), 2.0);

        let (f2, f1) = encode_monomial(1.0, &[vec![1.0], vec![1.0]]).unwrap();
        let diff = gcf_eval(&f2, &[2.0]).unwrap() - gcf_eval(&f1, &[2.0]).unwrap();
        assert!((diff - 4.0).abs() < 1e-12);

        let (fa, fb) = encode_monomial(1.7, &[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        let x = [0.8, 0.8];
        assert_eq!(gcf_eval(&fa, &x).unwrap() - gcf_eval(&fb, &x).unwrap(), 0.0);
        assert!(encode_monomial(1.0, &[]).is_err());
    }

    #[test]
    fn euler_partial_sums() {
        let dirs = [vec![0.3, -0.2], vec![1.1, 0.4], vec![-0.6, 0.9]];
        let x = [0.7, -0.35];
        let a: Vec<f64> = dirs.iter().map(|u| u[0] * x[0] + u[1] * x[1]).collect();
        let c = 1.9;
        let mut partial = c;
        let mut product = c;
        for k in 1..=dirs.len() {
            product *= a[k - 1];
            partial += product;
            let g = euler_ladder(c, &dirs[..k], 2);
            assert!((gcf_eval(&g, &x).unwrap() - partial).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_poly() {
        let poly = SparsePoly {
            constant: 5.0,
            monomials: vec![],
        };
        let enc = encode_poly(&poly).unwrap();
        assert_eq!(enc.len(), 1);
        assert_eq!(enc[0].cf.depth(), 0);
        assert_eq!(eval_encoding(&enc, &[]).unwrap().value, 5.0);
        let v = verify_encoding(&poly, &enc, 10, (-1.0, 1.0), 0).unwrap();
        assert_eq!(v.max_relative_error, 0.0);
    }

    #[test]
    fn product_of_two_features() {
        let poly = SparsePoly {
            constant: 0.0,
            monomials: vec![Monomial {
                coeff: 1.0,
                dirs: vec![unit(2, 0), unit(2, 1)],
            }],
        };
        let enc = encode_poly(&poly).unwrap();
        assert_eq!(enc.len(), 2);
        assert!((eval_encoding(&enc, &[2.0, 3.0]).unwrap().value - 6.0).abs() < 1e-12);
        let v = verify_encoding(&poly, &enc, 1000, (-1.0, 1.0), 1).unwrap();
        assert!(v.max_relative_error <= 1e-9, "{v:?}");
    }

    #[test]
    fn quartic_power() {
        let poly = SparsePoly::parse("x1^4", None).unwrap();
        let enc = encode_poly(&poly).unwrap();
        let v = verify_encoding(&poly, &enc, 1000, (-2.0, 2.0), 2).unwrap();
        assert!(v.max_relative_error <= 1e-8, "{v:?}");
    }

    #[test]
    fn matyas_ladder_count() {
        let poly = SparsePoly::parse("0.26*x1^2 + 0.26*x2^2 - 0.48*x1*x2", None).unwrap();
        let enc = encode_poly(&poly).unwrap();
        assert_eq!(enc.len(), 6);
        let x = [1.0, 1.0];
        assert!((eval_encoding(&enc, &x).unwrap().value - 0.04).abs() < 1e-12);
    }

    #[test]
    fn parse_sugar() {
        let poly = SparsePoly::parse("2*x1^2*x2 - 0.5*x2 + 3", None).unwrap();
        assert_eq!(poly.constant, 3.0);
        assert_eq!(poly.monomials.len(), 2);
        assert_eq!(poly.monomials[0].coeff, 2.0);
        assert_eq!(
            poly.monomials[0].dirs,
            vec![unit(2, 0), unit(2, 0), unit(2, 1)]
        );
        assert_eq!(poly.monomials[1].coeff, -0.5);
        assert!((poly.eval(&[2.0, 3.0]) - (24.0 - 1.5 + 3.0)).abs() < 1e-12);

        let neg = SparsePoly::parse("-x1 + 1e-3", Some(3)).unwrap();
        assert_eq!(neg.monomials[0].coeff, -1.0);
        assert_eq!(neg.monomials[0].dirs[0].len(), 3);
        assert_eq!(neg.constant, 1e-3);

        assert!(matches!(
            SparsePoly::parse("2*y", None),
            Err(Error::Parse { .. })
        ));
        assert!(SparsePoly::parse("x0", None).is_err());
        assert!(SparsePoly::parse("x3", Some(2)).is_err());
    }

    #[test]
    fn json_format() {
        let poly: SparsePoly = serde_json::from_str(
            r#"{"constant":0,"monomials":[{"coeff":1,"dirs":[[1,0],[0,1]]}]}"#,
        )
        .unwrap();
        assert_eq!(poly.input_dim().unwrap(), 2);
        assert_eq!(poly.eval(&[2.0, 3.0]), 6.0);
    }
}
