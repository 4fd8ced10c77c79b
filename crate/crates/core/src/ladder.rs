//! A single continued-fraction ladder.
//!
//! A ladder of depth `d` holds `d + 1` affine layers `a_k = w_k · [x; 1]` and
//! evaluates the canonical continued fraction
//!
//! ```text
//! a_0 + 1 / (a_1 + 1 / (a_2 + ... + 1 / a_d))
//! ```
//!
//! with every reciprocal replaced by the pole-safe [`safe_recip`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default pole-safety threshold.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// `sgn(z) / max(|z|, eps)` with `sgn(0) = +1`.
#[inline]
pub fn safe_recip(z: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0);
    let mag = z.abs();
    if mag >= eps {
        1.0 / z
    } else if z < 0.0 {
        -1.0 / eps
    } else {
        1.0 / eps
    }
}

/// Derivative of [`safe_recip`] with respect to `z`.
///
/// The clamped region is flat; at `|z| = eps` the unclamped branch is used.
#[inline]
pub fn safe_recip_derivative(z: f64, eps: f64) -> f64 {
    if z.abs() >= eps {
        -1.0 / (z * z)
    } else {
        0.0
    }
}

/// Evaluates `a_0 + 1/(a_1 + 1/(... + 1/a_d))` exactly, bottom-up.
pub fn eval_fraction(a: &[f64]) -> Result<f64> {
    let (&first, rest) = a
        .split_first()
        .ok_or_else(|| Error::Empty("continued fraction needs at least one term".into()))?;
    let mut tail = 0.0;
    for (offset, &ak) in rest.iter().enumerate().rev() {
        let z = ak + tail;
        if z == 0.0 {
            return Err(Error::Pole {
                ladder: None,
                detail: format!("denominator of layer {} is zero", offset + 1),
            });
        }
        tail = 1.0 / z;
    }
    Ok(first + tail)
}

/// Which input features a ladder may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMask {
    Full,
    Single(usize),
}

impl FeatureMask {
    pub fn contains(&self, j: usize) -> bool {
        match *self {
            FeatureMask::Full => true,
            FeatureMask::Single(i) => i == j,
        }
    }

    /// Active feature indices for an input of dimension `p`.
    pub fn indices(&self, p: usize) -> Vec<usize> {
        match *self {
            FeatureMask::Full => (0..p).collect(),
            FeatureMask::Single(i) => vec![i],
        }
    }
}

/// Cached intermediate values of one forward pass.
///
/// `z[k - 1]` and `s[k - 1]` hold the pre-activation denominator `z_k` and its
/// activated value `s_k` for `k = 1..=d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub a: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub eps: f64,
}

impl LayerTrace {
    pub fn depth(&self) -> usize {
        self.z.len()
    }

    /// True if any rung landed in the clamped region.
    pub fn clamped(&self) -> bool {
        self.z.iter().any(|z| z.abs() < self.eps)
    }

    pub fn min_abs_denominator(&self) -> f64 {
        self.z.iter().fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    depth: usize,
    input_dim: usize,
    mask: FeatureMask,
    /// Row-major `(depth + 1) x (input_dim + 1)`, last column is the bias.
    weights: Vec<f64>,
}

impl Ladder {
    pub fn new(input_dim: usize, mask: FeatureMask, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("a ladder needs at least one layer".into()));
        }
        let depth = rows.len() - 1;
        let mut weights = Vec::with_capacity(rows.len() * (input_dim + 1));
        for (k, row) in rows.into_iter().enumerate() {
            if row.len() != input_dim + 1 {
                return Err(Error::Dimension(format!(
                    "layer {k} has {} weights, expected {}",
                    row.len(),
                    input_dim + 1
                )));
            }
            weights.extend(row);
        }
        Self::from_flat(depth, input_dim, mask, weights)
    }

    pub fn from_flat(
        depth: usize,
        input_dim: usize,
        mask: FeatureMask,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != (depth + 1) * (input_dim + 1) {
            return Err(Error::Dimension(format!(
                "ladder of depth {depth} over {input_dim} inputs needs {} weights, got {}",
                (depth + 1) * (input_dim + 1),
                weights.len()
            )));
        }
        if let FeatureMask::Single(j) = mask {
            if j >= input_dim {
                return Err(Error::OutOfRange(format!(
                    "mask feature {j} for input dimension {input_dim}"
                )));
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("ladder weights".into()));
        }
        let ladder = Ladder {
            depth,
            input_dim,
            mask,
            weights,
        };
        for k in 0..=depth {
            for j in 0..input_dim {
                if !mask.contains(j) && ladder.weight(k, j) != 0.0 {
                    return Err(Error::Config(format!(
                        "layer {k} has a nonzero weight on masked feature {j}"
                    )));
                }
            }
        }
        Ok(ladder)
    }

    pub fn zeros(depth: usize, input_dim: usize, mask: FeatureMask) -> Result<Self> {
        Self::from_flat(
            depth,
            input_dim,
            mask,
            vec![0.0; (depth + 1) * (input_dim + 1)],
        )
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mask(&self) -> FeatureMask {
        self.mask
    }

    pub fn row_len(&self) -> usize {
        self.input_dim + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mutable access to the raw weight buffer. Callers must keep masked
    /// columns at zero.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.row_len();
        &self.weights[k * n..(k + 1) * n]
    }

    pub fn weight(&self, k: usize, j: usize) -> f64 {
        self.weights[k * self.row_len() + j]
    }

    pub fn bias(&self, k: usize) -> f64 {
        self.weights[k * self.row_len() + self.input_dim]
    }

    pub fn set_weight(&mut self, k: usize, j: usize, value: f64) {
        debug_assert!(j == self.input_dim || self.mask.contains(j));
        let n = self.row_len();
        self.weights[k * n + j] = value;
    }

    /// Number of weights that are allowed to be nonzero.
    pub fn free_params(&self) -> usize {
        let active = match self.mask {
            FeatureMask::Full => self.input_dim,
            FeatureMask::Single(_) => 1,
        };
        (self.depth + 1) * (active + 1)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, ladder expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// The layer values `a_0..a_d` at `x`.
    pub fn affine(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.affine_unchecked(x))
    }

    pub(crate) fn affine_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..=self.depth).map(|k| self.layer_value(k, x)).collect()
    }

    #[inline]
    fn layer_value(&self, k: usize, x: &[f64]) -> f64 {
        let row = self.row(k);
        match self.mask {
            FeatureMask::Full => {
                let mut acc = row[self.input_dim];
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                acc
            }
            FeatureMask::Single(j) => row[j] * x[j] + row[self.input_dim],
        }
    }

    /// Clamped forward pass with a trace for backpropagation.
    pub fn eval(&self, x: &[f64], eps: f64) -> Result<(f64, LayerTrace)> {
        self.check_input(x)?;
        if !(eps > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {eps}"
            )));
        }
        let a = self.affine_unchecked(x);
        let d = self.depth;
        let mut z = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut tail = 0.0;
        for k in (1..=d).rev() {
            let zk = a[k] + tail;
            let sk = safe_recip(zk, eps);
            z[k - 1] = zk;
            s[k - 1] = sk;
            tail = sk;
        }
        let value = a[0] + tail;
        Ok((value, LayerTrace { a, z, s, eps }))
    }

    /// Clamped forward pass without keeping the trace.
    pub fn value(&self, x: &[f64], eps: f64) -> Result<f64> {
        self.check_input(x)?;
        let mut tail = 0.0;
        for k in (1..=self.depth).rev() {
            tail = safe_recip(self.layer_value(k, x) + tail, eps);
        }
        Ok(self.layer_value(0, x) + tail)
    }

    /// The unclamped continued fraction.
    pub fn exact_value(&self, x: &[f64]) -> Result<f64> {
        eval_fraction(&self.affine(x)?)
    }
}
