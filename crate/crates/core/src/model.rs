//! CoFrNet models: linear combinations of ladders.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::{FeatureMask, Ladder, LayerTrace};

/// Architecture variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Every ladder reads every feature.
    F,
    /// Diagonalized: every ladder reads a single feature, giving an additive model.
    D,
    /// One diagonal ladder per feature followed by full ladders of increasing depth.
    DL,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::F => "F",
            Variant::D => "D",
            Variant::DL => "DL",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f" => Ok(Variant::F),
            "d" => Ok(Variant::D),
            "dl" => Ok(Variant::DL),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoFrNetModel {
    variant: Variant,
    input_dim: usize,
    output_dim: usize,
    epsilon: f64,
    ladders: Vec<Ladder>,
    /// Row-major `L x q`.
    mixing: Vec<f64>,
    output_bias: Vec<f64>,
}

/// Parameter counts: what is stored versus the closed-form count for
/// uniform-depth full models, `pL(d-1) + Lq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub actual: usize,
    pub formula: Option<usize>,
}

/// Closed-form parameter count `pL(d-1) + Lq` for a uniform-depth full model.
pub fn formula_param_count(p: usize, ladders: usize, depth: usize, q: usize) -> usize {
    // (d - 1) saturates at zero for depth 0.
    p * ladders * depth.saturating_sub(1) + ladders * q
}

impl CoFrNetModel {
    pub fn new(
        variant: Variant,
        ladders: Vec<Ladder>,
        mixing: Vec<f64>,
        output_bias: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if ladders.is_empty() {
            return Err(Error::Dimension("a model needs at least one ladder".into()));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let input_dim = ladders[0].input_dim();
        if let Some(i) = ladders.iter().position(|l| l.input_dim() != input_dim) {
            return Err(Error::Dimension(format!(
                "ladder {i} has input dimension {}, expected {input_dim}",
                ladders[i].input_dim()
            )));
        }
        let output_dim = output_bias.len();
        if output_dim == 0 {
            return Err(Error::Dimension("output dimension must be positive".into()));
        }
        if mixing.len() != ladders.len() * output_dim {
            return Err(Error::Dimension(format!(
                "mixing has {} entries, expected {} x {}",
                mixing.len(),
                ladders.len(),
                output_dim
            )));
        }
        if mixing.iter().chain(&output_bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixing weights".into()));
        }
        check_variant(variant, input_dim, &ladders)?;
        Ok(CoFrNetModel {
            variant,
            input_dim,
            output_dim,
            epsilon,
            ladders,
            mixing,
            output_bias,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        self.epsilon = epsilon;
        Ok(())
    }

    pub fn ladders(&self) -> &[Ladder] {
        &self.ladders
    }

    pub fn num_ladders(&self) -> usize {
        self.ladders.len()
    }

    pub fn mixing(&self) -> &[f64] {
        &self.mixing
    }

    pub fn mixing_weight(&self, ladder: usize, output: usize) -> f64 {
        self.mixing[ladder * self.output_dim + output]
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.output_bias
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Ladder], &mut [f64], &mut [f64]) {
        (&mut self.ladders, &mut self.mixing, &mut self.output_bias)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Combines ladder values into outputs.
    pub fn combine(&self, ladder_values: &[f64]) -> Vec<f64> {
        let q = self.output_dim;
        let mut out = self.output_bias.clone();
        for (l, v) in ladder_values.iter().enumerate() {
            let row = &self.mixing[l * q..(l + 1) * q];
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * v;
            }
        }
        out
    }

    /// `mixing^T · ladder_values + bias`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let values = self
            .ladders
            .iter()
            .map(|l| l.value(x, self.epsilon))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.combine(&values))
    }

    /// Forward pass keeping every ladder's trace.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.ladders.len());
        let mut traces = Vec::with_capacity(self.ladders.len());
        for ladder in &self.ladders {
            let (v, t) = ladder.eval(x, self.epsilon)?;
            values.push(v);
            traces.push(t);
        }
        let outputs = self.combine(&values);
        Ok(ForwardCache {
            ladder_values: values,
            traces,
            outputs,
        })
    }

    /// The unclamped model.
    pub fn eval_exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let values = self
            .ladders
            .iter()
            .enumerate()
            .map(|(i, l)| l.exact_value(x).map_err(|e| e.in_ladder(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.combine(&values))
    }

    pub fn param_count(&self) -> ParamCount {
        let ladder_params: usize = self.ladders.iter().map(Ladder::free_params).sum();
        let actual = ladder_params + self.mixing.len();
        let depth = self.ladders[0].depth();
        let uniform = self.ladders.iter().all(|l| l.depth() == depth);
        let formula = (self.variant == Variant::F && uniform).then(|| {
            formula_param_count(self.input_dim, self.ladders.len(), depth, self.output_dim)
        });
        ParamCount { actual, formula }
    }

    /// Contribution of the diagonal ladders on `feature` to `output`, evaluated
    /// at each grid value. Other features do not enter singleton ladders.
    pub fn shape_function(&self, feature: usize, output: usize, grid: &[f64]) -> Result<Vec<f64>> {
        if feature >= self.input_dim {
            return Err(Error::OutOfRange(format!(
                "feature {feature} for input dimension {}",
                self.input_dim
            )));
        }
        if output >= self.output_dim {
            return Err(Error::OutOfRange(format!(
                "output {output} for output dimension {}",
                self.output_dim
            )));
        }
        let members: Vec<usize> = self
            .ladders
            .iter()
            .enumerate()
            .filter(|(_, l)| l.mask() == FeatureMask::Single(feature))
            .map(|(i, _)| i)
            .collect();
        let mut x = vec![0.0; self.input_dim];
        grid.iter()
            .map(|&v| {
                x[feature] = v;
                let mut acc = 0.0;
                for &i in &members {
                    acc +=
                        self.mixing_weight(i, output) * self.ladders[i].value(&x, self.epsilon)?;
                }
                Ok(acc)
            })
            .collect()
    }
}

/// Per-example forward results used by training and clamp diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub ladder_values: Vec<f64>,
    pub traces: Vec<LayerTrace>,
    pub outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn clamped(&self) -> bool {
        self.traces.iter().any(LayerTrace::clamped)
    }
}

fn check_variant(variant: Variant, p: usize, ladders: &[Ladder]) -> Result<()> {
    match variant {
        Variant::F => Ok(()),
        Variant::D => {
            if let Some(i) = ladders
                .iter()
                .position(|l| !matches!(l.mask(), FeatureMask::Single(_)))
            {
                return Err(Error::Config(format!(
                    "variant D requires singleton masks, ladder {i} is full"
                )));
            }
            Ok(())
        }
        Variant::DL => {
            if ladders.len() < p {
                return Err(Error::Config(format!(
                    "variant DL needs {p} diagonal ladders, model has {} ladders",
                    ladders.len()
                )));
            }
            for (j, l) in ladders[..p].iter().enumerate() {
                if l.mask() != FeatureMask::Single(j) {
                    return Err(Error::Config(format!(
                        "variant DL: ladder {j} must be masked to feature {j}"
                    )));
                }
            }
            let mut prev = 2;
            for (i, l) in ladders.iter().enumerate().skip(p) {
                if l.mask() != FeatureMask::Full {
                    return Err(Error::Config(format!(
                        "variant DL: ladder {i} must be full"
                    )));
                }
                let expected_first = i == p && l.depth() != 2;
                if expected_first || l.depth() < prev {
                    return Err(Error::Config(format!(
                        "variant DL: full ladders must start at depth 2 and not decrease (ladder {i} has depth {})",
                        l.depth()
                    )));
                }
                prev = l.depth();
            }
            Ok(())
        }
    }
}
