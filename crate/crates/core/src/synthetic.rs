//! Synthetic-function study: ten classic two-dimensional test functions fitted
//! by a single full ladder and by a parameter-matched sigmoid MLP.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Samples, Standardization, Task};
use crate::error::{Error, Result};
use crate::model::{formula_param_count, CoFrNetModel, Variant};
use crate::optim::{AdamConfig, AdamW};
use crate::training::{init_model, mean_loss, predict_first, train, Loss, TrainConfig};

/// Ladder depth used for functions that are not polynomials.
pub const NON_POLYNOMIAL_DEPTH: usize = 6;

#[derive(Clone, Copy)]
pub struct SyntheticFn {
    pub name: &'static str,
    pub slug: &'static str,
    pub formula: &'static str,
    eval: fn(f64, f64) -> f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Total degree for polynomials, `None` otherwise.
    pub degree: Option<usize>,
}

impl std::fmt::Debug for SyntheticFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticFn")
            .field("name", &self.name)
            .field("x_range", &self.x_range)
            .field("y_range", &self.y_range)
            .field("degree", &self.degree)
            .finish()
    }
}

impl SyntheticFn {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }

    /// Polynomial degree, or six for non-polynomials.
    pub fn ladder_depth(&self) -> usize {
        self.degree.unwrap_or(NON_POLYNOMIAL_DEPTH)
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

fn beale(x: f64, y: f64) -> f64 {
    sq(1.5 - x + x * y) + sq(2.25 - x + x * y * y) + sq(2.625 - x + x * y.powi(3))
}

fn goldstein_price(x: f64, y: f64) -> f64 {
    (1.0 + sq(x + y + 1.0) * (19.0 - 14.0 * x + 3.0 * x * x - 14.0 * y + 6.0 * x * y + 3.0 * y * y))
        * (30.0
            + sq(2.0 * x - 3.0 * y)
                * (18.0 - 32.0 * x + 12.0 * x * x + 48.0 * y - 36.0 * x * y + 27.0 * y * y))
}

fn booth(x: f64, y: f64) -> f64 {
    sq(x + 2.0 * y - 7.0) + sq(2.0 * x + y - 5.0)
}

fn cross_in_tray(x: f64, y: f64) -> f64 {
    let inner = (100.0 - (x * x + y * y).sqrt() / PI).abs().exp();
    -0.0001 * ((x.sin() * y.sin() * inner).abs() + 1.0).powf(0.1)
}

fn three_hump_camel(x: f64, y: f64) -> f64 {
    2.0 * x * x - 1.05 * x.powi(4) + x.powi(6) / 6.0 + x * y + y * y
}

fn himmelblau(x: f64, y: f64) -> f64 {
    sq(x * x + y - 11.0) + sq(x + y * y - 7.0)
}

fn bukin_n6(x: f64, y: f64) -> f64 {
    100.0 * (y - 0.01 * x * x).abs().sqrt() + 0.01 * (x + 10.0).abs()
}

fn matyas(x: f64, y: f64) -> f64 {
    0.26 * (x * x + y * y) - 0.48 * x * y
}

fn levi_n13(x: f64, y: f64) -> f64 {
    sq((3.0 * PI * x).sin())
        + sq(x - 1.0) * (1.0 + sq((3.0 * PI * y).sin()))
        + sq(y - 1.0) * (1.0 + sq((2.0 * PI * y).sin()))
}

fn rosenbrock(x: f64, y: f64) -> f64 {
    sq(1.0 - x) + 100.0 * sq(y - x * x)
}

/// The ten registered functions in report order.
pub fn registry() -> Vec<SyntheticFn> {
    vec![
        SyntheticFn {
            name: "Beale",
            slug: "beale",
            formula: "(1.5 - x + xy)^2 + (2.25 - x + xy^2)^2 + (2.625 - x + xy^3)^2",
            eval: beale,
            x_range: (-4.5, 4.5),
            y_range: (-4.5, 4.5),
            degree: Some(8),
        },
        SyntheticFn {
            name: "Goldstein-Price",
            slug: "goldstein-price",
            formula: "(1+(x+y+1)^2(19-14x+3x^2-14y+6xy+3y^2)) * (30+(2x-3y)^2(18-32x+12x^2+48y-36xy+27y^2))",
            eval: goldstein_price,
            x_range: (-2.0, 2.0),
            y_range: (-2.0, 2.0),
            degree: Some(8),
        },
        SyntheticFn {
            name: "Booth",
            slug: "booth",
            formula: "(x + 2y - 7)^2 + (2x + y - 5)^2",
            eval: booth,
            x_range: (-10.0, 10.0),
            y_range: (-10.0, 10.0),
            degree: Some(2),
        },
        SyntheticFn {
            name: "Cross-in-Tray",
            slug: "cross-in-tray",
            formula: "-0.0001(|sin(x)sin(y)exp(|100 - sqrt(x^2+y^2)/pi|)| + 1)^0.1",
            eval: cross_in_tray,
            x_range: (-10.0, 10.0),
            y_range: (-10.0, 10.0),
            degree: None,
        },
        SyntheticFn {
            name: "Three-Hump Camel",
            slug: "three-hump-camel",
            formula: "2x^2 - 1.05x^4 + x^6/6 + xy + y^2",
            eval: three_hump_camel,
            x_range: (-5.0, 5.0),
            y_range: (-5.0, 5.0),
            degree: Some(6),
        },
        SyntheticFn {
            name: "Himmelblau",
            slug: "himmelblau",
            formula: "(x^2 + y - 11)^2 + (x + y^2 - 7)^2",
            eval: himmelblau,
            x_range: (-5.0, 5.0),
            y_range: (-5.0, 5.0),
            degree: Some(4),
        },
        SyntheticFn {
            name: "Bukin N6",
            slug: "bukin-n6",
            formula: "100 sqrt(|y - 0.01x^2|) + 0.01|x + 10|",
            eval: bukin_n6,
            x_range: (-15.0, -5.0),
            y_range: (-3.0, 3.0),
            degree: None,
        },
        SyntheticFn {
            name: "Matyas",
            slug: "matyas",
            formula: "0.26(x^2 + y^2) - 0.48xy",
            eval: matyas,
            x_range: (-10.0, 10.0),
            y_range: (-10.0, 10.0),
            degree: Some(2),
        },
        SyntheticFn {
            name: "Levi N13",
            slug: "levi-n13",
            formula: "sin^2(3 pi x) + (x-1)^2(1 + sin^2(3 pi y)) + (y-1)^2(1 + sin^2(2 pi y))",
            eval: levi_n13,
            x_range: (-10.0, 10.0),
            y_range: (-10.0, 10.0),
            degree: None,
        },
        SyntheticFn {
            name: "Rosenbrock",
            slug: "rosenbrock",
            formula: "(1 - x)^2 + 100(y - x^2)^2",
            eval: rosenbrock,
            x_range: (-2.0, 2.0),
            y_range: (-2.0, 2.0),
            degree: Some(4),
        },
    ]
}

/// Looks a function up by slug or (case-insensitive) name.
pub fn lookup(key: &str) -> Option<SyntheticFn> {
    let k = key.trim().to_ascii_lowercase();
    registry()
        .into_iter()
        .find(|f| f.slug == k || f.name.to_ascii_lowercase() == k)
}

/// Mean absolute error as a percentage of the target range `max - min`.
pub fn mape(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::Empty("no targets".into()));
    }
    let (lo, hi) = target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::ZeroRange);
    }
    let mae = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / target.len() as f64;
    Ok(100.0 * mae / range)
}

/// Closed-form MLP parameter count `pW + (d-2)W^2 + Wq` (weights only).
pub fn mlp_formula_params(p: usize, depth: usize, q: usize, width: usize) -> usize {
    p * width + depth.saturating_sub(2) * width * width + width * q
}

/// Smallest width minimizing `|pW + (d-2)W^2 + Wq - target|`, ties toward larger `W`.
pub fn matched_mlp_width(p: usize, depth: usize, q: usize, target_params: usize) -> usize {
    let target = target_params as i128;
    let count = |w: usize| mlp_formula_params(p, depth, q, w) as i128;
    let mut best = 1;
    let mut best_gap = (count(1) - target).abs();
    let mut w = 2;
    loop {
        let c = count(w);
        let gap = (c - target).abs();
        if gap <= best_gap {
            best = w;
            best_gap = gap;
        }
        // counts grow monotonically, so stop once past the target
        if c > target {
            break;
        }
        w += 1;
    }
    best
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Dense network with `depth - 1` sigmoid hidden layers of equal width and a
/// linear output, so that it has `depth` weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBaseline {
    pub depth: usize,
    pub width: usize,
    sizes: Vec<usize>,
    /// Per layer, row-major `out x in` weights followed by `out` biases.
    layers: Vec<Vec<f64>>,
}

impl MlpBaseline {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        depth: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        if depth < 2 || width == 0 {
            return Err(Error::Config(
                "MLP needs depth >= 2 and positive width".into(),
            ));
        }
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat_n(width, depth - 1));
        sizes.push(output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                (0..n_in * n_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .chain(std::iter::repeat_n(0.0, n_out))
                    .collect()
            })
            .collect();
        Ok(MlpBaseline {
            depth,
            width,
            sizes,
            layers,
        })
    }

    /// Stored parameters including biases.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn formula_params(&self) -> usize {
        mlp_formula_params(
            self.sizes[0],
            self.depth,
            *self.sizes.last().unwrap(),
            self.width,
        )
    }

    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (l, w) in self.layers.iter().enumerate() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = w[n_in * n_out + o]
                        + w[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(input)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if l == last {
                        z
                    } else {
                        sigmoid(z)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).pop().unwrap_or_default()
    }

    fn backward(&self, acts: &[Vec<f64>], upstream: &[f64], grads: &mut [Vec<f64>]) {
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let g = &mut grads[l];
            for o in 0..n_out {
                for i in 0..n_in {
                    g[o * n_in + i] += delta[o] * input[i];
                }
                g[n_in * n_out + o] += delta[o];
            }
            if l > 0 {
                let w = &self.layers[l];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                        let a = input[i];
                        back * a * (1.0 - a)
                    })
                    .collect();
            }
        }
    }

    /// Mini-batch AdamW on squared error; returns the final training MSE.
    pub fn fit(&mut self, data: &Samples, cfg: &TrainConfig) -> Result<f64> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sizes: Vec<usize> = self.layers.iter().map(Vec::len).collect();
        let mut opt = AdamW::new(
            AdamConfig {
                learning_rate: cfg.learning_rate,
                weight_decay: cfg.weight_decay,
                ..AdamConfig::default()
            },
            &sizes,
        );
        let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut best = (f64::INFINITY, self.layers.clone());
        let mut waited = 0;
        for _ in 0..cfg.max_epochs {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                grads.iter_mut().for_each(|g| g.fill(0.0));
                for &i in batch {
                    let acts = self.forward_all(data.input(i));
                    let out = acts.last().unwrap();
                    let up: Vec<f64> = out
                        .iter()
                        .zip(data.target(i))
                        .map(|(o, t)| 2.0 * (o - t))
                        .collect();
                    self.backward(&acts, &up, &mut grads);
                }
                let inv = 1.0 / batch.len() as f64;
                grads
                    .iter_mut()
                    .for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
                if grads.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("MLP gradient".into()));
                }
                opt.step(
                    self.layers
                        .iter_mut()
                        .map(Vec::as_mut_slice)
                        .zip(grads.iter().map(Vec::as_slice)),
                );
            }
            let mse = self.mse(data);
            if mse < best.0 {
                best = (mse, self.layers.clone());
                waited = 0;
            } else {
                waited += 1;
                if waited >= cfg.patience {
                    break;
                }
            }
        }
        self.layers = best.1;
        Ok(best.0)
    }

    pub fn mse(&self, data: &Samples) -> f64 {
        (0..data.len())
            .map(|i| {
                self.eval(data.input(i))
                    .iter()
                    .zip(data.target(i))
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / data.len() as f64
    }
}

/// Settings shared by every benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub num_samples: usize,
    /// Independent initializations per run; the lowest training loss is kept.
    pub restarts: usize,
    pub cofrnet: TrainConfig,
    pub mlp: TrainConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let base = TrainConfig {
            loss: Loss::SquaredError,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            batch_size: 16,
            max_epochs: 2000,
            patience: 150,
            dropout: 0.0,
            seed: 0,
            epsilon: crate::ladder::DEFAULT_EPSILON,
            frozen_rows: Vec::new(),
        };
        BenchConfig {
            num_samples: 300,
            restarts: 5,
            cofrnet: base.clone(),
            mlp: base,
        }
    }
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Trains a single full ladder from `cfg.restarts` initializations and keeps
/// the fit with the lowest training loss. Fails only if every restart diverges.
pub fn train_single_ladder(
    train_set: &Samples,
    depth: usize,
    seed: u64,
    cfg: &BenchConfig,
) -> Result<CoFrNetModel> {
    let mut best: Option<(f64, CoFrNetModel)> = None;
    let mut last_err = None;
    for r in 0..cfg.restarts.max(1) {
        let s = restart_seed(seed, r);
        let init = init_model(
            Variant::F,
            train_set.input_dim(),
            train_set.target_dim(),
            &[depth],
            1,
            s,
        )?;
        let tc = TrainConfig {
            seed: s,
            ..cfg.cofrnet.clone()
        };
        match train(&init, train_set, None, &tc) {
            Ok((model, _)) => {
                let loss = mean_loss(&model, train_set, Loss::SquaredError)?;
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, model));
                }
            }
            Err(e @ Error::NonFinite(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| last_err.unwrap_or(Error::NonFinite("training".into())))
}

fn train_mlp(
    train_set: &Samples,
    depth: usize,
    width: usize,
    seed: u64,
    cfg: &BenchConfig,
) -> Result<MlpBaseline> {
    let mut best: Option<(f64, MlpBaseline)> = None;
    let mut last_err = None;
    for r in 0..cfg.restarts.max(1) {
        let s = restart_seed(seed, r);
        let mut mlp = MlpBaseline::new(
            train_set.input_dim(),
            train_set.target_dim(),
            depth,
            width,
            s,
        )?;
        let tc = TrainConfig {
            seed: s,
            ..cfg.mlp.clone()
        };
        match mlp.fit(train_set, &tc) {
            Ok(loss) => {
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, mlp));
                }
            }
            Err(e @ Error::NonFinite(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| last_err.unwrap_or(Error::NonFinite("training".into())))
}

/// Uniform samples from the function's box, in original units.
pub fn sample_function(f: &SyntheticFn, n: usize, seed: u64) -> Result<Samples> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(f.x_range.0..f.x_range.1);
        let y = rng.random_range(f.y_range.0..f.y_range.1);
        inputs.extend([x, y]);
        targets.push(f.eval(x, y));
    }
    Samples::new(inputs, 2, targets, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub function: String,
    pub seed: u64,
    pub depth: usize,
    pub mlp_width: usize,
    /// `pL(d-1) + Lq` for the single ladder.
    pub cofrnet_params: usize,
    pub cofrnet_stored_params: usize,
    pub mlp_params: usize,
    pub mlp_stored_params: usize,
    /// MAPE on the 300 training points.
    pub cofrnet_mape: f64,
    pub mlp_mape: f64,
    /// MAPE on a fresh resample of the same size.
    pub cofrnet_resample_mape: f64,
    pub mlp_resample_mape: f64,
    pub cofrnet_diverged: bool,
    pub mlp_diverged: bool,
}

/// A fitted single-ladder model together with the scaling it was trained under.
#[derive(Debug, Clone)]
pub struct FittedFunction {
    pub model: CoFrNetModel,
    pub standardization: Standardization,
    pub train: Samples,
}

/// Samples the function, standardizes, and trains a single full ladder.
pub fn fit_cofrnet(f: &SyntheticFn, seed: u64, cfg: &BenchConfig) -> Result<FittedFunction> {
    let raw = sample_function(f, cfg.num_samples, seed)?;
    let st = Standardization::fit(&raw, Task::Regression);
    let train_set = st.apply(&raw);
    let model = train_single_ladder(&train_set, f.ladder_depth(), seed, cfg)?;
    Ok(FittedFunction {
        model,
        standardization: st,
        train: train_set,
    })
}

impl FittedFunction {
    pub fn into_model_file(self) -> crate::model_file::ModelFile {
        let mut file = crate::model_file::ModelFile::new(self.model, Task::Regression);
        file.standardization = Some(self.standardization);
        file.feature_names = vec!["x".into(), "y".into()];
        file.target_name = "f".into();
        file
    }
}

fn resample_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

pub fn run_benchmark(f: &SyntheticFn, seed: u64, cfg: &BenchConfig) -> Result<BenchResult> {
    let depth = f.ladder_depth();
    let raw = sample_function(f, cfg.num_samples, seed)?;
    let st = Standardization::fit(&raw, Task::Regression);
    let train_set = st.apply(&raw);
    let fresh = st.apply(&sample_function(f, cfg.num_samples, resample_seed(seed))?);
    let target_of = |s: &Samples| -> Vec<f64> { (0..s.len()).map(|i| s.target(i)[0]).collect() };
    let train_targets = target_of(&train_set);
    let fresh_targets = target_of(&fresh);

    let cofrnet_params = formula_param_count(2, 1, depth, 1);
    let cofrnet_stored_params = init_model(Variant::F, 2, 1, &[depth], 1, seed)?
        .param_count()
        .actual;
    let (cofrnet_mape, cofrnet_resample_mape, cofrnet_diverged) =
        match train_single_ladder(&train_set, depth, seed, cfg) {
            Ok(model) => (
                mape(&predict_first(&model, &train_set)?, &train_targets)?,
                mape(&predict_first(&model, &fresh)?, &fresh_targets)?,
                false,
            ),
            Err(Error::NonFinite(_)) => (f64::NAN, f64::NAN, true),
            Err(e) => return Err(e),
        };

    let width = matched_mlp_width(2, depth, 1, cofrnet_params);
    let shape = MlpBaseline::new(2, 1, depth, width, seed)?;
    let mlp_params = shape.formula_params();
    let mlp_stored_params = shape.num_params();
    let predict = |m: &MlpBaseline, s: &Samples| -> Vec<f64> {
        (0..s.len()).map(|i| m.eval(s.input(i))[0]).collect()
    };
    let (mlp_mape, mlp_resample_mape, mlp_diverged) =
        match train_mlp(&train_set, depth, width, seed, cfg) {
            Ok(mlp) => (
                mape(&predict(&mlp, &train_set), &train_targets)?,
                mape(&predict(&mlp, &fresh), &fresh_targets)?,
                false,
            ),
            Err(Error::NonFinite(_)) => (f64::NAN, f64::NAN, true),
            Err(e) => return Err(e),
        };

    Ok(BenchResult {
        function: f.name.to_string(),
        seed,
        depth,
        mlp_width: width,
        cofrnet_params,
        cofrnet_stored_params,
        mlp_params,
        mlp_stored_params,
        cofrnet_mape,
        mlp_mape,
        cofrnet_resample_mape,
        mlp_resample_mape,
        cofrnet_diverged,
        mlp_diverged,
    })
}

/// Per-function aggregate over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub function: String,
    pub seeds: Vec<u64>,
    pub depth: usize,
    pub mlp_width: usize,
    pub cofrnet_params: usize,
    pub mlp_params: usize,
    /// Medians across seeds.
    pub cofrnet_mape: f64,
    pub mlp_mape: f64,
    pub cofrnet_resample_mape: f64,
    pub mlp_resample_mape: f64,
    pub runs: Vec<BenchResult>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    // NaN (diverged) sorts last
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn aggregate(runs: Vec<BenchResult>) -> Result<BenchRow> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Empty("no benchmark runs".into()))?;
    let med = |f: fn(&BenchResult) -> f64| median(&mut runs.iter().map(f).collect::<Vec<_>>());
    Ok(BenchRow {
        function: first.function.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        depth: first.depth,
        mlp_width: first.mlp_width,
        cofrnet_params: first.cofrnet_params,
        mlp_params: first.mlp_params,
        cofrnet_mape: med(|r| r.cofrnet_mape),
        mlp_mape: med(|r| r.mlp_mape),
        cofrnet_resample_mape: med(|r| r.cofrnet_resample_mape),
        mlp_resample_mape: med(|r| r.mlp_resample_mape),
        runs,
    })
}

/// Runs every function over `seeds`, one independent thread per function.
pub fn run_suite(
    functions: &[SyntheticFn],
    seeds: &[u64],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let results: Vec<Result<BenchRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = functions
            .iter()
            .map(|f| {
                scope.spawn(move || {
                    let runs = seeds
                        .iter()
                        .map(|&s| run_benchmark(f, s, cfg))
                        .collect::<Result<Vec<_>>>()?;
                    aggregate(runs)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Config("benchmark thread panicked".into())))
            })
            .collect()
    });
    results.into_iter().collect()
}

/// CSV report, one row per function.
pub fn report_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "function,cofrnet_mape,mlp_mape,cofrnet_resample_mape,mlp_resample_mape,seeds,depth,mlp_width,cofrnet_params,mlp_params\n",
    );
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.3},{},{},{},{},{}\n",
            r.function,
            r.cofrnet_mape,
            r.mlp_mape,
            r.cofrnet_resample_mape,
            r.mlp_resample_mape,
            seeds.join(";"),
            r.depth,
            r.mlp_width,
            r.cofrnet_params,
            r.mlp_params
        ));
    }
    out
}

pub fn report_json(rows: &[BenchRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

/// Two-class points in `[-1, 1]^2` labelled by the sign of `x1 * x2`.
pub fn interaction_dataset(n: usize, seed: u64) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        inputs.extend([a, b]);
        targets.push(if a * b > 0.0 { 1.0 } else { 0.0 });
    }
    Samples::new(inputs, 2, targets, 1).expect("finite samples")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_values() {
        let reg = registry();
        assert_eq!(reg.len(), 10);
        let get = |s: &str| lookup(s).unwrap();
        assert!((get("matyas").eval(1.0, 1.0) - 0.04).abs() < 1e-15);
        assert_eq!(get("booth").eval(1.0, 3.0), 0.0);
        assert_eq!(get("rosenbrock").eval(1.0, 1.0), 0.0);
        assert!((get("beale").eval(3.0, 0.5)).abs() < 1e-12);
        assert!((get("goldstein-price").eval(0.0, -1.0) - 3.0).abs() < 1e-12);
        assert!((get("himmelblau").eval(3.0, 2.0)).abs() < 1e-12);
        assert!((get("three-hump-camel").eval(0.0, 0.0)).abs() < 1e-12);
        assert!((get("bukin-n6").eval(-10.0, 1.0)).abs() < 1e-12);
        assert!((get("levi-n13").eval(1.0, 1.0)).abs() < 1e-12);
        assert!((get("cross-in-tray").eval(1.34941, 1.34941) + 2.06261).abs() < 1e-4);
        assert!(get("Levi N13").degree.is_none());
        assert_eq!(get("matyas").ladder_depth(), 2);
        assert_eq!(get("bukin-n6").ladder_depth(), 6);
    }

    #[test]
    fn functions_are_finite_on_their_boxes() {
        for f in registry() {
            let s = sample_function(&f, 200, 1).unwrap();
            assert_eq!(s.len(), 200, "{}", f.name);
        }
    }

    #[test]
    fn mape_examples() {
        assert!((mape(&[1.0, 2.0], &[1.0, 4.0]).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(mape(&[3.0, 5.0], &[3.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mape(&[1.0, 2.0], &[2.0, 2.0]), Err(Error::ZeroRange));
        let target = [1.0, 5.0, 2.0];
        let mean = 8.0 / 3.0;
        assert!(mape(&[mean; 3], &target).unwrap().is_finite());
    }

    #[test]
    fn width_examples() {
        assert_eq!(matched_mlp_width(2, 6, 1, 11), 1);
        // p=2,d=3,q=1: W=3 gives 6+9+3 = 18 exactly
        assert_eq!(matched_mlp_width(2, 3, 1, 18), 3);
        // d = 2: count = W (p + q)
        assert_eq!(matched_mlp_width(2, 2, 1, 14), 5);
        assert_eq!(matched_mlp_width(2, 2, 1, 7), 2);
        // 7 and 22 are equally far from 14.5 -> prefer larger width on ties
        assert_eq!(matched_mlp_width(2, 6, 1, 0), 1);
    }

    #[test]
    fn mlp_parameter_counts() {
        let m = MlpBaseline::new(2, 1, 6, 3, 0).unwrap();
        assert_eq!(m.formula_params(), 6 + 4 * 9 + 3);
        assert_eq!(m.num_params(), m.formula_params() + 3 * 5 + 1);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn mlp_gradient_matches_finite_differences() {
        let mut m = MlpBaseline::new(2, 1, 3, 2, 4).unwrap();
        let x = [0.3, -0.7];
        let acts = m.forward_all(&x);
        let mut grads: Vec<Vec<f64>> = m.layers.iter().map(|l| vec![0.0; l.len()]).collect();
        m.backward(&acts, &[1.0], &mut grads);
        let h = 1e-6;
        for l in 0..m.layers.len() {
            for i in 0..m.layers[l].len() {
                let orig = m.layers[l][i];
                m.layers[l][i] = orig + h;
                let up = m.eval(&x)[0];
                m.layers[l][i] = orig - h;
                let down = m.eval(&x)[0];
                m.layers[l][i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grads[l][i]).abs() < 1e-7, "layer {l} param {i}");
            }
        }
    }

    #[test]
    fn interaction_labels() {
        let s = interaction_dataset(50, 2);
        for i in 0..s.len() {
            let x = s.input(i);
            assert_eq!(s.target(i)[0] == 1.0, x[0] * x[1] > 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = lookup("rosenbrock").unwrap();
        assert_eq!(
            sample_function(&f, 30, 7).unwrap(),
            sample_function(&f, 30, 7).unwrap()
        );
        assert_ne!(
            sample_function(&f, 30, 7).unwrap(),
            sample_function(&f, 30, 8).unwrap()
        );
    }
}
