//! Continuant polynomials and the exact input gradient of a ladder.
//!
//! The continuant `K_k` of a sequence satisfies `K_0 = 1`, `K_1(a) = a` and
//! `K_k(a_1..a_k) = a_1 K_{k-1}(a_2..a_k) + K_{k-2}(a_3..a_k)`. A canonical
//! continued fraction `a_0 + 1/(a_1 + ...)` equals `K_{d+1}(a_0..a_d) / K_d(a_1..a_d)`,
//! which gives a closed form for its derivative with respect to each layer:
//!
//! ```text
//! d f / d a_k = (-1)^k (K_{d-k}(a_{k+1}..a_d) / K_d(a_1..a_d))^2
//! ```

use crate::error::{Error, Result};
use crate::ladder::Ladder;
use crate::model::CoFrNetModel;

/// Denominator continuants smaller than this are treated as poles.
pub const POLE_TOLERANCE: f64 = 1e-12;

/// Continuants of every suffix of a sequence `a_0..a_d`.
///
/// `get(k)` is `K_k(a_{d-k+1}..a_d)`, the continuant of the last `k` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuantTable {
    k: Vec<f64>,
}

impl ContinuantTable {
    pub fn get(&self, k: usize) -> f64 {
        self.k[k]
    }

    /// Largest available index, equal to the sequence length.
    pub fn len(&self) -> usize {
        self.k.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.k
    }
}

/// All suffix continuants of `a` in `O(len)`.
pub fn continuant_suffix_table(a: &[f64]) -> Result<ContinuantTable> {
    if a.is_empty() {
        return Err(Error::Empty(
            "continuant table needs a nonempty sequence".into(),
        ));
    }
    let n = a.len();
    let mut k = Vec::with_capacity(n + 1);
    k.push(1.0);
    k.push(a[n - 1]);
    for m in 2..=n {
        let next = a[n - m] * k[m - 1] + k[m - 2];
        k.push(next);
    }
    Ok(ContinuantTable { k })
}

/// Continuant of an arbitrary (possibly empty) sequence.
pub fn continuant(a: &[f64]) -> f64 {
    match continuant_suffix_table(a) {
        Ok(t) => t.get(a.len()),
        Err(_) => 1.0,
    }
}

/// Determinant of the tridiagonal matrix with diagonal `a`, superdiagonal `+1`
/// and subdiagonal `-1`, by Laplace expansion along the first row.
///
/// This is deliberately independent of the three-term recurrence; it is the
/// reference against which [`continuant_suffix_table`] is checked.
pub fn continuant_det_oracle(a: &[f64]) -> f64 {
    let k = a.len();
    if k == 0 {
        return 1.0;
    }
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        m[i][i] = a[i];
        if i + 1 < k {
            m[i][i + 1] = 1.0;
            m[i + 1][i] = -1.0;
        }
    }
    laplace_det(&m)
}

fn laplace_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    match n {
        0 => 1.0,
        1 => m[0][0],
        _ => {
            let mut det = 0.0;
            for col in 0..n {
                let entry = m[0][col];
                if entry == 0.0 {
                    continue;
                }
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|&(c, _)| c != col)
                            .map(|(_, &v)| v)
                            .collect()
                    })
                    .collect();
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                det += sign * entry * laplace_det(&minor);
            }
            det
        }
    }
}

/// `K_{d+1}(a_0..a_d) / K_d(a_1..a_d)`.
pub fn cf_via_continuants(a: &[f64]) -> Result<f64> {
    let table = continuant_suffix_table(a)?;
    let d = a.len() - 1;
    let denom = table.get(d);
    if denom.abs() < POLE_TOLERANCE {
        return Err(Error::Pole {
            ladder: None,
            detail: format!("denominator continuant K_{d} = {denom:e}"),
        });
    }
    Ok(table.get(d + 1) / denom)
}

/// Derivatives of the exact fraction with respect to each layer value `a_k`.
pub fn layer_sensitivities(a: &[f64]) -> Result<Vec<f64>> {
    let table = continuant_suffix_table(a)?;
    let d = a.len() - 1;
    let denom = table.get(d);
    if denom.abs() < POLE_TOLERANCE {
        return Err(Error::Pole {
            ladder: None,
            detail: format!("denominator continuant K_{d} = {denom:e}"),
        });
    }
    Ok((0..=d)
        .map(|k| {
            let r = table.get(d - k) / denom;
            let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * r * r
        })
        .collect())
}

/// Exact input gradient of one ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub gradient: Vec<f64>,
    /// Some rung would be clamped at this input under the given epsilon, so
    /// the gradient describes the unclamped fraction rather than the network.
    pub clamped: bool,
}

/// `df/dx_j = sum_k (-1)^k (K_{d-k}(a_{k+1}..a_d) / K_d(a_1..a_d))^2 w_{jk}`.
///
/// `eps` is only used to raise the clamp flag; the gradient is that of the
/// exact fraction.
pub fn ic_input_gradient(ladder: &Ladder, x: &[f64], eps: f64) -> Result<InputGradient> {
    let a = ladder.affine(x)?;
    let coeffs = layer_sensitivities(&a)?;
    let p = ladder.input_dim();
    let mut gradient = vec![0.0; p];
    for j in ladder.mask().indices(p) {
        gradient[j] = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * ladder.weight(k, j))
            .sum();
    }
    let clamped = clamp_flag(&a, eps);
    Ok(InputGradient { gradient, clamped })
}

fn clamp_flag(a: &[f64], eps: f64) -> bool {
    let mut tail = 0.0;
    let mut clamped = false;
    for &ak in a[1..].iter().rev() {
        let z = ak + tail;
        clamped |= z.abs() < eps;
        tail = crate::ladder::safe_recip(z, eps);
    }
    clamped
}

/// Input attributions of a whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    /// Row-major `p x q`: entry `(j, m)` is `d output_m / d x_j`.
    pub matrix: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub clamped: bool,
}

impl Attribution {
    pub fn get(&self, feature: usize, output: usize) -> f64 {
        self.matrix[feature * self.output_dim + output]
    }

    pub fn column(&self, output: usize) -> Vec<f64> {
        (0..self.input_dim).map(|j| self.get(j, output)).collect()
    }
}

pub fn ic_model_attribution(model: &CoFrNetModel, x: &[f64]) -> Result<Attribution> {
    let p = model.input_dim();
    let q = model.output_dim();
    let mut matrix = vec![0.0; p * q];
    let mut clamped = false;
    for (i, ladder) in model.ladders().iter().enumerate() {
        let g = ic_input_gradient(ladder, x, model.epsilon()).map_err(|e| e.in_ladder(i))?;
        clamped |= g.clamped;
        for (j, gj) in g.gradient.iter().enumerate() {
            for m in 0..q {
                matrix[j * q + m] += model.mixing_weight(i, m) * gj;
            }
        }
    }
    Ok(Attribution {
        matrix,
        input_dim: p,
        output_dim: q,
        clamped,
    })
}

/// Both sides of
/// `K_k(a_0..a_{k-1}) K_d(a_1..a_d) - K_{k-1}(a_1..a_{k-1}) K_{d+1}(a_0..a_d) = (-1)^k K_{d-k}(a_{k+1}..a_d)`.
pub fn continuant_identity_check(a: &[f64], k: usize) -> Result<(f64, f64)> {
    if a.is_empty() {
        return Err(Error::Empty(
            "identity check needs a nonempty sequence".into(),
        ));
    }
    let d = a.len() - 1;
    if k > d {
        return Err(Error::OutOfRange(format!("k = {k} exceeds depth {d}")));
    }
    // K_{-1} = 0 by convention.
    let k_prefix_short = if k == 0 { 0.0 } else { continuant(&a[1..k]) };
    let lhs = continuant(&a[..k]) * continuant(&a[1..]) - k_prefix_short * continuant(a);
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let rhs = sign * continuant(&a[k + 1..]);
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder::{eval_fraction, FeatureMask};
    use crate::model::Variant;

    #[test]
    fn table_examples() {
        let t = continuant_suffix_table(&[2.0, 3.0]).unwrap();
        assert_eq!(t.get(2), 7.0);
        let t = continuant_suffix_table(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 3.0, 7.0, 10.0]);
        let t = continuant_suffix_table(&[5.0]).unwrap();
        assert_eq!((t.get(0), t.get(1)), (1.0, 5.0));
        assert!(continuant_suffix_table(&[]).is_err());
    }

    #[test]
    fn determinant_examples() {
        assert_eq!(continuant_det_oracle(&[2.0, 3.0]), 7.0);
        assert_eq!(continuant_det_oracle(&[1.0, 2.0, 3.0]), 10.0);
        assert_eq!(continuant_det_oracle(&[-4.25]), -4.25);
        assert_eq!(continuant_det_oracle(&[]), 1.0);
    }

    #[test]
    fn ratio_examples() {
        assert!((cf_via_continuants(&[1.0, 2.0, 3.0]).unwrap() - 10.0 / 7.0).abs() < 1e-15);
        assert_eq!(cf_via_continuants(&[4.5]).unwrap(), 4.5);
        assert_eq!(cf_via_continuants(&[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            cf_via_continuants(&[1.0, 0.0]),
            Err(Error::Pole { .. })
        ));
    }

    #[test]
    fn gradient_of_x_plus_two_over_x() {
        // f = x + 1/(0.5 x) at x = 2.
        let ladder =
            Ladder::new(1, FeatureMask::Full, vec![vec![1.0, 0.0], vec![0.5, 0.0]]).unwrap();
        let g = ic_input_gradient(&ladder, &[2.0], 0.1).unwrap();
        assert!((g.gradient[0] - 0.5).abs() < 1e-15);
        assert!(!g.clamped);
        let h = 1e-5;
        let fd = (ladder.exact_value(&[2.0 + h]).unwrap()
            - ladder.exact_value(&[2.0 - h]).unwrap())
            / (2.0 * h);
        assert!((fd - 0.5).abs() < 1e-8);
    }

    #[test]
    fn depth_zero_gradient_is_weights() {
        let ladder = Ladder::new(3, FeatureMask::Full, vec![vec![1.5, -2.0, 0.25, 9.0]]).unwrap();
        for x in [[0.0, 0.0, 0.0], [3.0, -1.0, 7.0]] {
            let g = ic_input_gradient(&ladder, &x, 0.1).unwrap();
            assert_eq!(g.gradient, vec![1.5, -2.0, 0.25]);
        }
    }

    #[test]
    fn gradient_sign_structure() {
        // A single nonzero weight on layer k gives a term of sign (-1)^k sgn(w).
        for k in 0..4 {
            for w in [0.7, -0.7] {
                let mut rows = vec![vec![0.0, 1.3]; 4];
                rows[k][0] = w;
                let ladder = Ladder::new(1, FeatureMask::Full, rows).unwrap();
                let g = ic_input_gradient(&ladder, &[0.4], 0.1).unwrap().gradient[0];
                let expected = if k % 2 == 0 { 1.0 } else { -1.0 } * w.signum();
                assert_eq!(g.signum(), expected, "k={k} w={w}");
            }
        }
    }

    #[test]
    fn clamp_flag_is_raised() {
        let ladder =
            Ladder::new(1, FeatureMask::Full, vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(ic_input_gradient(&ladder, &[0.05], 0.1).unwrap().clamped);
        assert!(!ic_input_gradient(&ladder, &[0.5], 0.1).unwrap().clamped);
        assert!(matches!(
            ic_input_gradient(&ladder, &[0.0], 0.1),
            Err(Error::Pole { .. })
        ));
    }

    #[test]
    fn model_attribution_is_linear() {
        let ladder = Ladder::new(
            2,
            FeatureMask::Full,
            vec![vec![0.3, -0.1, 0.2], vec![0.5, 0.8, 1.0]],
        )
        .unwrap();
        let single = ic_input_gradient(&ladder, &[0.4, 0.9], 0.1).unwrap();
        let m = CoFrNetModel::new(Variant::F, vec![ladder], vec![2.0], vec![0.0], 0.1).unwrap();
        let attr = ic_model_attribution(&m, &[0.4, 0.9]).unwrap();
        for j in 0..2 {
            assert_eq!(attr.get(j, 0), 2.0 * single.gradient[j]);
        }
    }

    #[test]
    fn diagonal_attribution_uses_own_ladders() {
        let l0 = Ladder::new(
            2,
            FeatureMask::Single(0),
            vec![vec![0.5, 0.0, 0.0], vec![1.0, 0.0, 2.0]],
        )
        .unwrap();
        let l1 = Ladder::new(
            2,
            FeatureMask::Single(1),
            vec![vec![0.0, -0.2, 0.0], vec![0.0, 0.7, 1.5]],
        )
        .unwrap();
        let g0 = ic_input_gradient(&l0, &[0.3, 0.6], 0.1).unwrap();
        assert_eq!(g0.gradient[1], 0.0);
        let m = CoFrNetModel::new(
            Variant::D,
            vec![l0, l1.clone()],
            vec![1.0, 3.0],
            vec![0.0],
            0.1,
        )
        .unwrap();
        let attr = ic_model_attribution(&m, &[0.3, 0.6]).unwrap();
        assert_eq!(attr.get(0, 0), g0.gradient[0]);
        assert_eq!(
            attr.get(1, 0),
            3.0 * ic_input_gradient(&l1, &[0.3, 0.6], 0.1).unwrap().gradient[1]
        );
    }

    #[test]
    fn attribution_pole_names_ladder() {
        let good = Ladder::new(1, FeatureMask::Full, vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let bad = Ladder::new(1, FeatureMask::Full, vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let m =
            CoFrNetModel::new(Variant::F, vec![good, bad], vec![1.0, 1.0], vec![0.0], 0.1).unwrap();
        match ic_model_attribution(&m, &[0.0]) {
            Err(Error::Pole { ladder, .. }) => assert_eq!(ladder, Some(1)),
            other => panic!("expected pole, got {other:?}"),
        }
    }

    #[test]
    fn identity_examples() {
        let a = [1.0, 2.0, 3.0];
        let (lhs, rhs) = continuant_identity_check(&a, 0).unwrap();
        assert_eq!((lhs, rhs), (7.0, 7.0));
        assert_eq!(continuant_identity_check(&a, 1).unwrap(), (-3.0, -3.0));
        let (lhs, rhs) = continuant_identity_check(&a, 2).unwrap();
        assert_eq!(rhs, 1.0);
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(continuant_identity_check(&a, 3).is_err());
    }

    #[test]
    fn ratio_matches_nested_fraction() {
        let a = [0.5, -1.25, 2.0, 3.5, -0.75];
        let direct = eval_fraction(&a).unwrap();
        let ratio = cf_via_continuants(&a).unwrap();
        assert!((direct - ratio).abs() < 1e-12 * direct.abs());
    }
}
