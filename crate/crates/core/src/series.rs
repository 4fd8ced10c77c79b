//! Multivariate power series truncated at a total degree.
//!
//! Series are stored densely over every exponent tuple with total degree at
//! most `D`, graded by degree. Coefficients below the prune threshold are
//! stored as exact zeros and treated as absent. Exponent tuples are packed
//! into a `u128` with six bits per variable so that adding keys adds
//! exponents; this limits series to 21 variables and degree 63.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::Ladder;
use crate::model::CoFrNetModel;

pub const DEFAULT_PRUNE: f64 = 1e-12;

/// Constant terms smaller than this make a reciprocal singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

const BITS_PER_VAR: usize = 6;
const MAX_VARS: usize = 128 / BITS_PER_VAR;
const MAX_DEGREE: usize = (1 << BITS_PER_VAR) - 1;
const MAX_TERMS: usize = 2_000_000;

#[derive(Debug)]
struct Basis {
    num_vars: usize,
    max_degree: usize,
    exponents: Vec<Vec<u32>>,
    degrees: Vec<usize>,
    keys: Vec<u128>,
    index: HashMap<u128, usize>,
}

fn pack(exps: &[u32]) -> u128 {
    exps.iter().enumerate().fold(0u128, |acc, (j, &e)| {
        acc | ((e as u128) << (BITS_PER_VAR * j))
    })
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

impl Basis {
    fn build(num_vars: usize, max_degree: usize) -> Result<Basis> {
        if num_vars > MAX_VARS || max_degree > MAX_DEGREE {
            return Err(Error::Config(format!(
                "series limited to {MAX_VARS} variables and degree {MAX_DEGREE}"
            )));
        }
        match binomial(num_vars + max_degree, max_degree) {
            Some(n) if n <= MAX_TERMS => {}
            _ => {
                return Err(Error::Config(format!(
                    "series over {num_vars} variables to degree {max_degree} has too many terms"
                )))
            }
        }
        let mut exponents = Vec::new();
        for g in 0..=max_degree {
            let mut current = vec![0u32; num_vars];
            push_degree(&mut exponents, &mut current, 0, g as u32);
        }
        let degrees = exponents
            .iter()
            .map(|e| e.iter().sum::<u32>() as usize)
            .collect();
        let keys: Vec<u128> = exponents.iter().map(|e| pack(e)).collect();
        let index = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        Ok(Basis {
            num_vars,
            max_degree,
            exponents,
            degrees,
            keys,
            index,
        })
    }

    fn len(&self) -> usize {
        self.exponents.len()
    }
}

/// Appends all tuples of total degree `remaining` over variables `j..`, in
/// descending lexicographic order.
fn push_degree(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, j: usize, remaining: u32) {
    let n = current.len();
    if n == 0 {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if j == n - 1 {
        current[j] = remaining;
        out.push(current.clone());
        current[j] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[j] = e;
        push_degree(out, current, j + 1, remaining - e);
    }
    current[j] = 0;
}

/// Bases keyed by `(num_vars, max_degree)`.
type BasisCache = Mutex<HashMap<(usize, usize), Arc<Basis>>>;

fn basis(num_vars: usize, max_degree: usize) -> Result<Arc<Basis>> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(b) = guard.get(&(num_vars, max_degree)) {
        return Ok(b.clone());
    }
    let b = Arc::new(Basis::build(num_vars, max_degree)?);
    guard.insert((num_vars, max_degree), b.clone());
    Ok(b)
}

/// A multivariate power series `sum c_i (x - center)^i`, truncated at total degree `D`.
#[derive(Debug, Clone)]
pub struct MultiSeries {
    basis: Arc<Basis>,
    center: Vec<f64>,
    coeffs: Vec<f64>,
    prune: f64,
}

impl PartialEq for MultiSeries {
    fn eq(&self, other: &Self) -> bool {
        self.num_vars() == other.num_vars()
            && self.max_degree() == other.max_degree()
            && self.center == other.center
            && self.coeffs == other.coeffs
    }
}

impl MultiSeries {
    pub fn zero(num_vars: usize, max_degree: usize, center: Vec<f64>) -> Result<Self> {
        if center.len() != num_vars {
            return Err(Error::Dimension(format!(
                "center has {} coordinates for {num_vars} variables",
                center.len()
            )));
        }
        let basis = basis(num_vars, max_degree)?;
        let coeffs = vec![0.0; basis.len()];
        Ok(MultiSeries {
            basis,
            center,
            coeffs,
            prune: DEFAULT_PRUNE,
        })
    }

    pub fn constant(
        num_vars: usize,
        max_degree: usize,
        center: Vec<f64>,
        value: f64,
    ) -> Result<Self> {
        let mut s = Self::zero(num_vars, max_degree, center)?;
        s.coeffs[0] = value;
        s.prune_small();
        Ok(s)
    }

    /// `constant + sum_j linear[j] * t_j` with `t = x - center`.
    pub fn affine(
        max_degree: usize,
        center: Vec<f64>,
        linear: &[f64],
        constant: f64,
    ) -> Result<Self> {
        let mut s = Self::constant(linear.len(), max_degree, center, constant)?;
        if max_degree >= 1 {
            for (j, &w) in linear.iter().enumerate() {
                let i = s.basis.index[&(1u128 << (BITS_PER_VAR * j))];
                s.coeffs[i] = w;
            }
        }
        s.prune_small();
        Ok(s)
    }

    /// The coordinate `t_j = x_j - center_j`.
    pub fn variable(
        num_vars: usize,
        max_degree: usize,
        center: Vec<f64>,
        j: usize,
    ) -> Result<Self> {
        if j >= num_vars {
            return Err(Error::OutOfRange(format!("variable {j} of {num_vars}")));
        }
        let mut linear = vec![0.0; num_vars];
        linear[j] = 1.0;
        Self::affine(max_degree, center, &linear, 0.0)
    }

    /// Builds a series from explicit terms. Terms above the truncation degree are dropped.
    pub fn from_terms(
        num_vars: usize,
        max_degree: usize,
        center: Vec<f64>,
        terms: &[(Vec<u32>, f64)],
    ) -> Result<Self> {
        let mut s = Self::zero(num_vars, max_degree, center)?;
        for (exps, c) in terms {
            if exps.len() != num_vars {
                return Err(Error::Dimension(format!(
                    "exponent tuple {exps:?} for {num_vars} variables"
                )));
            }
            if exps.iter().sum::<u32>() as usize > max_degree {
                continue;
            }
            let i = s.basis.index[&pack(exps)];
            s.coeffs[i] += c;
        }
        s.prune_small();
        Ok(s)
    }

    /// Every exponent tuple of the truncated basis, graded by total degree.
    pub fn basis_exponents(&self) -> Vec<Vec<u32>> {
        self.basis.exponents.clone()
    }

    pub fn with_prune(mut self, threshold: f64) -> Self {
        self.prune = threshold;
        self.prune_small();
        self
    }

    pub fn num_vars(&self) -> usize {
        self.basis.num_vars
    }

    pub fn max_degree(&self) -> usize {
        self.basis.max_degree
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn constant_term(&self) -> f64 {
        self.coeffs[0]
    }

    /// Coefficient of the given exponent tuple (zero if absent or truncated).
    pub fn coefficient(&self, exps: &[u32]) -> f64 {
        if exps.len() != self.num_vars() {
            return 0.0;
        }
        self.basis
            .index
            .get(&pack(exps))
            .map_or(0.0, |&i| self.coeffs[i])
    }

    /// Degree-one coefficients, i.e. the gradient at the center.
    pub fn linear_coefficients(&self) -> Vec<f64> {
        let p = self.num_vars();
        if self.max_degree() == 0 {
            return vec![0.0; p];
        }
        (0..p)
            .map(|j| self.coeffs[self.basis.index[&(1u128 << (BITS_PER_VAR * j))]])
            .collect()
    }

    /// Nonzero terms in graded order.
    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, &c)| (self.basis.exponents[i].as_slice(), c))
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.iter().filter(|c| **c != 0.0).count()
    }

    /// Largest total degree among stored terms.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, _)| self.basis.degrees[i])
            .max()
    }

    fn prune_small(&mut self) {
        let t = self.prune;
        for c in &mut self.coeffs {
            if c.abs() < t {
                *c = 0.0;
            }
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.num_vars() != other.num_vars()
            || self.max_degree() != other.max_degree()
            || self.center != other.center
        {
            return Err(Error::Dimension(format!(
                "series shapes differ: ({} vars, degree {}) vs ({} vars, degree {})",
                self.num_vars(),
                self.max_degree(),
                other.num_vars(),
                other.max_degree()
            )));
        }
        Ok(())
    }

    fn like(&self, coeffs: Vec<f64>) -> Self {
        let mut s = MultiSeries {
            basis: self.basis.clone(),
            center: self.center.clone(),
            coeffs,
            prune: self.prune,
        };
        s.prune_small();
        s
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.like(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.like(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.like(self.coeffs.iter().map(|c| c * factor).collect())
    }

    pub fn add_constant(&self, value: f64) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs[0] += value;
        self.like(coeffs)
    }

    /// Product truncated to degree `D`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let b = &*self.basis;
        let d = b.max_degree;
        let mut out = vec![0.0; b.len()];
        let rhs: Vec<usize> = (0..b.len()).filter(|&j| other.coeffs[j] != 0.0).collect();
        for (i, &ci) in self.coeffs.iter().enumerate() {
            if ci == 0.0 {
                continue;
            }
            let budget = d - b.degrees[i];
            let ki = b.keys[i];
            for &j in &rhs {
                if b.degrees[j] > budget {
                    break;
                }
                let k = b.index[&(ki + b.keys[j])];
                out[k] += ci * other.coeffs[j];
            }
        }
        Ok(self.like(out))
    }

    /// `1/s = (1/c0) sum_{k=0}^{D} (-g/c0)^k` with `g = s - c0`.
    pub fn recip(&self) -> Result<Self> {
        let c0 = self.coeffs[0];
        if c0.abs() < SINGULAR_THRESHOLD {
            return Err(Error::SingularExpansion {
                ladder: None,
                stage: 0,
                constant: c0,
            });
        }
        let mut h = self.scale(-1.0 / c0);
        h.coeffs[0] = 0.0;
        // Horner: r = 1 + h (1 + h (1 + ...)).
        let mut r = self.like({
            let mut one = vec![0.0; self.coeffs.len()];
            one[0] = 1.0;
            one
        });
        for _ in 0..self.max_degree() {
            r = h.mul(&r)?.add_constant(1.0);
        }
        Ok(r.scale(1.0 / c0))
    }

    /// Evaluates the truncated series at `x` (original coordinates).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.num_vars() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates for {} variables",
                x.len(),
                self.num_vars()
            )));
        }
        let d = self.max_degree();
        let powers: Vec<Vec<f64>> = x
            .iter()
            .zip(&self.center)
            .map(|(xi, ci)| {
                let t = xi - ci;
                let mut p = Vec::with_capacity(d + 1);
                let mut acc = 1.0;
                for _ in 0..=d {
                    p.push(acc);
                    acc *= t;
                }
                p
            })
            .collect();
        Ok(self
            .terms()
            .map(|(exps, c)| {
                exps.iter()
                    .enumerate()
                    .fold(c, |acc, (j, &e)| acc * powers[j][e as usize])
            })
            .sum())
    }

    /// Re-expresses the series under `t_old = factor ∘ t_new`, i.e. each
    /// coefficient is multiplied by `prod_j factor_j^{i_j}`, and sets a new center.
    pub fn rescale_variables(&self, factors: &[f64], new_center: Vec<f64>) -> Result<Self> {
        if factors.len() != self.num_vars() || new_center.len() != self.num_vars() {
            return Err(Error::Dimension(
                "rescaling needs one factor per variable".into(),
            ));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&self.basis.exponents)
            .map(|(&c, exps)| {
                exps.iter()
                    .zip(factors)
                    .fold(c, |acc, (&e, f)| acc * f.powi(e as i32))
            })
            .collect();
        let mut s = self.like(coeffs);
        s.center = new_center;
        Ok(s)
    }

    pub fn to_export(&self) -> SeriesExport {
        SeriesExport {
            num_vars: self.num_vars(),
            max_degree: self.max_degree(),
            center: self.center.clone(),
            terms: self
                .terms()
                .map(|(e, c)| ExportTerm {
                    exponents: e.to_vec(),
                    coefficient: c,
                })
                .collect(),
        }
    }

    pub fn from_export(export: &SeriesExport) -> Result<Self> {
        let terms: Vec<(Vec<u32>, f64)> = export
            .terms
            .iter()
            .map(|t| (t.exponents.clone(), t.coefficient))
            .collect();
        Self::from_terms(
            export.num_vars,
            export.max_degree,
            export.center.clone(),
            &terms,
        )
    }
}

/// JSON form of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesExport {
    pub num_vars: usize,
    pub max_degree: usize,
    pub center: Vec<f64>,
    pub terms: Vec<ExportTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportTerm {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

/// Expands a ladder around `center`. Error stages name the layer whose
/// denominator series had a vanishing constant term.
pub fn ladder_to_series(ladder: &Ladder, max_degree: usize, center: &[f64]) -> Result<MultiSeries> {
    let p = ladder.input_dim();
    if center.len() != p {
        return Err(Error::Dimension(format!(
            "center has {} coordinates, ladder expects {p}",
            center.len()
        )));
    }
    let layer = |k: usize| -> Result<MultiSeries> {
        let row = ladder.row(k);
        let linear = &row[..p];
        let constant = row[p] + linear.iter().zip(center).map(|(w, c)| w * c).sum::<f64>();
        MultiSeries::affine(max_degree, center.to_vec(), linear, constant)
    };
    let d = ladder.depth();
    let mut tail: Option<MultiSeries> = None;
    for k in (1..=d).rev() {
        let denom = match tail {
            Some(t) => layer(k)?.add(&t)?,
            None => layer(k)?,
        };
        let r = denom.recip().map_err(|e| match e {
            Error::SingularExpansion { constant, .. } => Error::SingularExpansion {
                ladder: None,
                stage: k,
                constant,
            },
            other => other,
        })?;
        tail = Some(r);
    }
    match tail {
        Some(t) => layer(0)?.add(&t),
        None => layer(0),
    }
}

/// One series per model output.
pub fn model_to_series(
    model: &CoFrNetModel,
    max_degree: usize,
    center: &[f64],
) -> Result<Vec<MultiSeries>> {
    let q = model.output_dim();
    let ladder_series = model
        .ladders()
        .iter()
        .enumerate()
        .map(|(i, l)| ladder_to_series(l, max_degree, center).map_err(|e| e.in_ladder(i)))
        .collect::<Result<Vec<_>>>()?;
    (0..q)
        .map(|m| {
            let mut acc = MultiSeries::constant(
                model.input_dim(),
                max_degree,
                center.to_vec(),
                model.output_bias()[m],
            )?;
            for (i, s) in ladder_series.iter().enumerate() {
                acc = acc.add(&s.scale(model.mixing_weight(i, m)))?;
            }
            Ok(acc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTerm {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
    /// Coefficient divided by the largest coefficient magnitude.
    pub normalized: f64,
}

/// Terms sorted by decreasing magnitude, ties in descending lexicographic
/// exponent order (so `x1` powers come first).
pub fn series_report(s: &MultiSeries, top_k: usize) -> Vec<RankedTerm> {
    let mut terms: Vec<(Vec<u32>, f64)> = s.terms().map(|(e, c)| (e.to_vec(), c)).collect();
    let max = terms.iter().fold(0.0f64, |m, (_, c)| m.max(c.abs()));
    terms.sort_by(|(ea, ca), (eb, cb)| {
        cb.abs()
            .partial_cmp(&ca.abs())
            .unwrap_or(Ordering::Equal)
            .then_with(|| eb.cmp(ea))
    });
    terms
        .into_iter()
        .take(top_k)
        .map(|(exponents, coefficient)| RankedTerm {
            exponents,
            coefficient,
            normalized: if max > 0.0 { coefficient / max } else { 0.0 },
        })
        .collect()
}

/// Human-readable monomial such as `x1^2*x2`; the constant term prints as `1`.
pub fn format_monomial(exps: &[u32], names: Option<&[String]>) -> String {
    let parts: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(j, &e)| {
            let name = names
                .and_then(|n| n.get(j).cloned())
                .unwrap_or_else(|| format!("x{}", j + 1));
            if e == 1 {
                name
            } else {
                format!("{name}^{e}")
            }
        })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}
