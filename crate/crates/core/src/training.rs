//! Reverse-mode gradients through the clamped network and the joint training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::ladder::{safe_recip_derivative, FeatureMask, Ladder, LayerTrace, DEFAULT_EPSILON};
use crate::model::{CoFrNetModel, ForwardCache, Variant};
use crate::optim::{AdamConfig, AdamW};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `sum_m (y_hat_m - y_m)^2` per example.
    SquaredError,
    /// Softmax over the outputs; targets are class indices.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Probability of dropping a whole ladder output during training.
    pub dropout: f64,
    pub seed: u64,
    pub epsilon: f64,
    /// `(ladder, layer)` rows excluded from updates.
    pub frozen_rows: Vec<(usize, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::SquaredError,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            dropout: 0.0,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            frozen_rows: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gradients shaped like a model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub ladders: Vec<Vec<f64>>,
    pub mixing: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(model: &CoFrNetModel) -> Self {
        GradientBundle {
            ladders: model
                .ladders()
                .iter()
                .map(|l| vec![0.0; l.weights().len()])
                .collect(),
            mixing: vec![0.0; model.mixing().len()],
            output_bias: vec![0.0; model.output_dim()],
        }
    }

    pub fn reset(&mut self) {
        for g in self
            .ladders
            .iter_mut()
            .chain([&mut self.mixing, &mut self.output_bias])
        {
            g.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self
            .ladders
            .iter_mut()
            .chain([&mut self.mixing, &mut self.output_bias])
        {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        if let Some(i) = self
            .ladders
            .iter()
            .position(|g| g.iter().any(|v| !v.is_finite()))
        {
            return Some(format!("gradient of ladder {i}"));
        }
        if self.mixing.iter().any(|v| !v.is_finite()) {
            return Some("gradient of mixing weights".into());
        }
        if self.output_bias.iter().any(|v| !v.is_finite()) {
            return Some("gradient of output bias".into());
        }
        None
    }
}

/// Backpropagates the adjoint `upstream` of the ladder's output.
///
/// Accumulates into `weight_grad` (shaped like the ladder weights) and, if
/// given, into `input_grad`.
pub fn ladder_backward(
    ladder: &Ladder,
    x: &[f64],
    trace: &LayerTrace,
    upstream: f64,
    weight_grad: &mut [f64],
    mut input_grad: Option<&mut [f64]>,
) {
    let d = ladder.depth();
    let p = ladder.input_dim();
    let n = p + 1;
    let mut accumulate = |k: usize, adj: f64| {
        if adj == 0.0 {
            return;
        }
        let row = &mut weight_grad[k * n..(k + 1) * n];
        match ladder.mask() {
            FeatureMask::Full => {
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += adj * xi;
                }
            }
            FeatureMask::Single(j) => row[j] += adj * x[j],
        }
        row[p] += adj;
        if let Some(ig) = input_grad.as_deref_mut() {
            for j in ladder.mask().indices(p) {
                ig[j] += adj * ladder.weight(k, j);
            }
        }
    };
    accumulate(0, upstream);
    // adjoint of s_1, then down the ladder
    let mut adj_s = upstream;
    for k in 1..=d {
        let adj_z = adj_s * safe_recip_derivative(trace.z[k - 1], trace.eps);
        accumulate(k, adj_z);
        adj_s = adj_z;
    }
}

fn check_cache(model: &CoFrNetModel, cache: &ForwardCache) -> Result<()> {
    if cache.traces.len() != model.num_ladders()
        || cache
            .traces
            .iter()
            .zip(model.ladders())
            .any(|(t, l)| t.depth() != l.depth())
    {
        return Err(Error::Config("missing or mismatched forward trace".into()));
    }
    Ok(())
}

/// Accumulates gradients of `upstream · outputs` into `grads`.
///
/// `ladder_scale` multiplies each ladder's contribution (dropout masks).
pub fn backward_into(
    model: &CoFrNetModel,
    x: &[f64],
    cache: &ForwardCache,
    upstream: &[f64],
    ladder_scale: Option<&[f64]>,
    grads: &mut GradientBundle,
    mut input_grad: Option<&mut [f64]>,
) -> Result<()> {
    check_cache(model, cache)?;
    let q = model.output_dim();
    if upstream.len() != q {
        return Err(Error::Dimension(format!(
            "upstream has {} entries, model has {q} outputs",
            upstream.len()
        )));
    }
    for (m, u) in upstream.iter().enumerate() {
        grads.output_bias[m] += u;
    }
    for (l, ladder) in model.ladders().iter().enumerate() {
        let scale = ladder_scale.map_or(1.0, |s| s[l]);
        if scale == 0.0 {
            continue;
        }
        let v = cache.ladder_values[l];
        let mut adj = 0.0;
        for (m, &u) in upstream.iter().enumerate().take(q) {
            grads.mixing[l * q + m] += u * scale * v;
            adj += u * model.mixing_weight(l, m);
        }
        ladder_backward(
            ladder,
            x,
            &cache.traces[l],
            adj * scale,
            &mut grads.ladders[l],
            input_grad.as_deref_mut(),
        );
    }
    Ok(())
}

/// Gradients of `upstream · outputs` with respect to every parameter.
pub fn backward(
    model: &CoFrNetModel,
    x: &[f64],
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<GradientBundle> {
    let mut grads = GradientBundle::zeros_like(model);
    backward_into(model, x, cache, upstream, None, &mut grads, None)?;
    Ok(grads)
}

/// Input gradient of `upstream · outputs` by reverse mode through the trace.
pub fn input_gradient(
    model: &CoFrNetModel,
    x: &[f64],
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let mut grads = GradientBundle::zeros_like(model);
    let mut ig = vec![0.0; model.input_dim()];
    backward_into(model, x, cache, upstream, None, &mut grads, Some(&mut ig))?;
    Ok(ig)
}

/// Per-example loss and its gradient with respect to the outputs.
pub fn loss_and_upstream(loss: Loss, outputs: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    match loss {
        Loss::SquaredError => {
            let mut total = 0.0;
            let up = outputs
                .iter()
                .zip(target)
                .map(|(o, t)| {
                    let r = o - t;
                    total += r * r;
                    2.0 * r
                })
                .collect();
            (total, up)
        }
        Loss::SoftmaxCrossEntropy => {
            let class = target[0] as usize;
            let max = outputs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = outputs.iter().map(|o| (o - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let loss = sum.ln() + max - outputs[class];
            let up = exps
                .iter()
                .enumerate()
                .map(|(m, e)| e / sum - if m == class { 1.0 } else { 0.0 })
                .collect();
            (loss, up)
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Mean loss over a sample set.
pub fn mean_loss(model: &CoFrNetModel, samples: &Samples, loss: Loss) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let mut total = 0.0;
    for i in 0..samples.len() {
        let out = model.eval(samples.input(i))?;
        total += loss_and_upstream(loss, &out, samples.target(i)).0;
    }
    Ok(total / samples.len() as f64)
}

/// Fraction of samples whose argmax output equals the class target.
pub fn accuracy(model: &CoFrNetModel, samples: &Samples) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let mut hits = 0usize;
    for i in 0..samples.len() {
        let out = model.eval(samples.input(i))?;
        if argmax(&out) == samples.target(i)[0] as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Predictions of the first output for every sample.
pub fn predict_first(model: &CoFrNetModel, samples: &Samples) -> Result<Vec<f64>> {
    (0..samples.len())
        .map(|i| model.eval(samples.input(i)).map(|o| o[0]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored (`None` if no epoch ran).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    /// CSV with header `epoch,train_loss,val_loss,val_metric`.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                fmt(r.val_loss),
                fmt(r.val_metric)
            ));
        }
        out
    }
}

fn metric(model: &CoFrNetModel, samples: &Samples, loss: Loss) -> Result<Option<f64>> {
    match loss {
        Loss::SoftmaxCrossEntropy => accuracy(model, samples).map(Some),
        Loss::SquaredError => {
            let pred = predict_first(model, samples)?;
            let target: Vec<f64> = (0..samples.len()).map(|i| samples.target(i)[0]).collect();
            Ok(crate::synthetic::mape(&pred, &target).ok())
        }
    }
}

fn check_samples(model: &CoFrNetModel, samples: &Samples, loss: Loss, what: &str) -> Result<()> {
    if samples.input_dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "{what} has {} features, model expects {}",
            samples.input_dim(),
            model.input_dim()
        )));
    }
    let expected = match loss {
        Loss::SquaredError => model.output_dim(),
        Loss::SoftmaxCrossEntropy => 1,
    };
    if samples.target_dim() != expected {
        return Err(Error::Dimension(format!(
            "{what} has {} target columns, expected {expected}",
            samples.target_dim()
        )));
    }
    if loss == Loss::SoftmaxCrossEntropy {
        if let Some(i) = (0..samples.len()).find(|&i| {
            let c = samples.target(i)[0];
            c < 0.0 || c.fract() != 0.0 || c as usize >= model.output_dim()
        }) {
            return Err(Error::OutOfRange(format!(
                "{what} row {i} has class {} for {} outputs",
                samples.target(i)[0],
                model.output_dim()
            )));
        }
    }
    Ok(())
}

/// Joint mini-batch training of all ladders with AdamW, whole-ladder dropout
/// and early stopping on validation loss (training loss if no validation set).
/// The best parameters seen are restored at the end.
pub fn train(
    model: &CoFrNetModel,
    train_set: &Samples,
    val_set: Option<&Samples>,
    cfg: &TrainConfig,
) -> Result<(CoFrNetModel, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    check_samples(model, train_set, cfg.loss, "training set")?;
    if let Some(v) = val_set {
        check_samples(model, v, cfg.loss, "validation set")?;
    }
    let mut current = model.clone();
    if cfg.max_epochs == 0 {
        return Ok((current, History::default()));
    }
    current.set_epsilon(cfg.epsilon)?;
    for &(l, k) in &cfg.frozen_rows {
        if l >= current.num_ladders() || k > current.ladders()[l].depth() {
            return Err(Error::OutOfRange(format!("frozen row ({l}, {k})")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes: Vec<usize> = current
        .ladders()
        .iter()
        .map(|l| l.weights().len())
        .chain([current.mixing().len(), current.output_dim()])
        .collect();
    let mut opt = AdamW::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let mut grads = GradientBundle::zeros_like(&current);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let keep = 1.0 - cfg.dropout;
    let mut scales = vec![1.0; current.num_ladders()];

    let mut history = History::default();
    let mut best = (f64::INFINITY, current.clone(), 0usize);
    let mut waited = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.reset();
            for &i in batch {
                let x = train_set.input(i);
                if cfg.dropout > 0.0 {
                    for s in scales.iter_mut() {
                        *s = if rng.random::<f64>() < cfg.dropout {
                            0.0
                        } else {
                            1.0 / keep
                        };
                    }
                }
                let cache = current.forward(x)?;
                let outputs = if cfg.dropout > 0.0 {
                    let scaled: Vec<f64> = cache
                        .ladder_values
                        .iter()
                        .zip(&scales)
                        .map(|(v, s)| v * s)
                        .collect();
                    current.combine(&scaled)
                } else {
                    cache.outputs.clone()
                };
                let (l, up) = loss_and_upstream(cfg.loss, &outputs, train_set.target(i));
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss (epoch {epoch}, batch {b}, example {i})"
                    )));
                }
                let dropout_scales = (cfg.dropout > 0.0).then_some(scales.as_slice());
                backward_into(&current, x, &cache, &up, dropout_scales, &mut grads, None)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(name) = grads.first_non_finite() {
                return Err(Error::NonFinite(format!(
                    "{name} (epoch {epoch}, batch {b})"
                )));
            }
            for &(l, k) in &cfg.frozen_rows {
                let n = current.ladders()[l].row_len();
                grads.ladders[l][k * n..(k + 1) * n].fill(0.0);
            }
            let (ladders, mixing, bias) = current.parts_mut();
            let groups = ladders
                .iter_mut()
                .map(|l| l.weights_mut())
                .zip(grads.ladders.iter().map(Vec::as_slice))
                .chain([
                    (mixing, grads.mixing.as_slice()),
                    (bias, grads.output_bias.as_slice()),
                ]);
            opt.step(groups);
        }

        let train_loss = mean_loss(&current, train_set, cfg.loss)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss after epoch {epoch}"
            )));
        }
        let (val_loss, val_metric) = match val_set {
            Some(v) => (
                Some(mean_loss(&current, v, cfg.loss)?),
                metric(&current, v, cfg.loss)?,
            ),
            None => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, current.clone(), epoch);
            waited = 0;
        } else {
            waited += 1;
            if waited >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = Some(best.2);
    Ok((best.1, history))
}

/// Draws an initial model.
///
/// * `F`: one full ladder per entry of `depths`, or `full_ladders` copies of
///   a single depth.
/// * `D`: one diagonal ladder per feature; `depths` is one depth for all
///   features or one per feature.
/// * `DL`: diagonal ladders as for `D`, then `full_ladders` full ladders of
///   depths `2, 3, ...`.
///
/// Weights are uniform in `±0.5/sqrt(fan_in)`; denominator layers get a bias
/// offset of `+1` so no rung starts clamped.
pub fn init_model(
    variant: Variant,
    input_dim: usize,
    output_dim: usize,
    depths: &[usize],
    full_ladders: usize,
    seed: u64,
) -> Result<CoFrNetModel> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::Config(
            "input and output dimensions must be positive".into(),
        ));
    }
    if depths.is_empty() {
        return Err(Error::Config("at least one depth is required".into()));
    }
    let diagonal_depths = |depths: &[usize]| -> Result<Vec<usize>> {
        match depths.len() {
            1 => Ok(vec![depths[0]; input_dim]),
            n if n == input_dim => Ok(depths.to_vec()),
            n => Err(Error::Config(format!(
                "{n} depths given for {input_dim} diagonal ladders"
            ))),
        }
    };
    let layout: Vec<(usize, FeatureMask)> = match variant {
        Variant::F => {
            let ds = if depths.len() == 1 && full_ladders > 1 {
                vec![depths[0]; full_ladders]
            } else {
                depths.to_vec()
            };
            ds.into_iter().map(|d| (d, FeatureMask::Full)).collect()
        }
        Variant::D => diagonal_depths(depths)?
            .into_iter()
            .enumerate()
            .map(|(j, d)| (d, FeatureMask::Single(j)))
            .collect(),
        Variant::DL => diagonal_depths(depths)?
            .into_iter()
            .enumerate()
            .map(|(j, d)| (d, FeatureMask::Single(j)))
            .chain((0..full_ladders).map(|i| (i + 2, FeatureMask::Full)))
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ladders = Vec::with_capacity(layout.len());
    for (depth, mask) in layout {
        let active = mask.indices(input_dim);
        let bound = 0.5 / (active.len() as f64).sqrt();
        let mut ladder = Ladder::zeros(depth, input_dim, mask)?;
        for k in 0..=depth {
            for &j in &active {
                ladder.set_weight(k, j, rng.random_range(-bound..bound));
            }
            let bias = if k == 0 { 0.0 } else { 1.0 };
            ladder.set_weight(k, input_dim, bias);
        }
        ladders.push(ladder);
    }
    let bound = 1.0 / (ladders.len() as f64).sqrt();
    let mixing = (0..ladders.len() * output_dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    CoFrNetModel::new(
        variant,
        ladders,
        mixing,
        vec![0.0; output_dim],
        DEFAULT_EPSILON,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_difference<F: Fn(&CoFrNetModel) -> f64>(
        model: &CoFrNetModel,
        grads: &GradientBundle,
        f: F,
    ) -> f64 {
        let h = 1e-6;
        let mut worst = 0.0f64;
        for l in 0..model.num_ladders() {
            for i in 0..model.ladders()[l].weights().len() {
                let mut plus = model.clone();
                plus.parts_mut().0[l].weights_mut()[i] += h;
                let mut minus = model.clone();
                minus.parts_mut().0[l].weights_mut()[i] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                worst = worst.max((fd - grads.ladders[l][i]).abs() / fd.abs().max(1.0));
            }
        }
        worst
    }

    #[test]
    fn linear_case_gradient() {
        let ladder = Ladder::new(1, FeatureMask::Full, vec![vec![0.5, 0.25]]).unwrap();
        let model = CoFrNetModel::new(Variant::F, vec![ladder], vec![2.0], vec![0.0], 0.1).unwrap();
        let (x, y) = ([3.0], [1.0]);
        let cache = model.forward(&x).unwrap();
        let (_, up) = loss_and_upstream(Loss::SquaredError, &cache.outputs, &y);
        let g = backward(&model, &x, &cache, &up).unwrap();
        let yhat = 2.0 * (0.5 * 3.0 + 0.25);
        let r = 2.0 * (yhat - 1.0);
        assert_eq!(g.ladders[0], vec![r * 2.0 * 3.0, r * 2.0]);
        assert_eq!(g.mixing, vec![r * (0.5 * 3.0 + 0.25)]);
        assert_eq!(g.output_bias, vec![r]);
    }

    #[test]
    fn depth_one_gradient_matches_layer_sensitivity() {
        let ladder =
            Ladder::new(1, FeatureMask::Full, vec![vec![0.3, 0.1], vec![0.8, 0.6]]).unwrap();
        let model = CoFrNetModel::new(Variant::F, vec![ladder], vec![1.0], vec![0.0], 0.1).unwrap();
        let x = [0.7];
        let cache = model.forward(&x).unwrap();
        let g = backward(&model, &x, &cache, &[1.0]).unwrap();
        let a1 = 0.8 * 0.7 + 0.6;
        let sens = crate::continuants::layer_sensitivities(&[0.3 * 0.7 + 0.1, a1]).unwrap();
        assert!((sens[1] + 1.0 / (a1 * a1)).abs() < 1e-14);
        assert!((g.ladders[0][2] - sens[1] * 0.7).abs() < 1e-14);
        assert!((g.ladders[0][3] - sens[1]).abs() < 1e-14);
        let worst = finite_difference(&model, &g, |m| m.eval(&x).unwrap()[0]);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn clamped_rung_blocks_gradient() {
        let ladder = Ladder::new(
            1,
            FeatureMask::Full,
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let model = CoFrNetModel::new(Variant::F, vec![ladder], vec![1.0], vec![0.0], 0.1).unwrap();
        // z_2 = 0.05 is clamped; z_1 = 0.05 + 10 is not.
        let x = [0.05];
        let cache = model.forward(&x).unwrap();
        assert!(cache.traces[0].z[1].abs() < 0.1);
        let g = backward(&model, &x, &cache, &[1.0]).unwrap();
        assert_eq!(&g.ladders[0][4..6], &[0.0, 0.0]);
        assert_ne!(g.ladders[0][2], 0.0);
    }

    #[test]
    fn masked_columns_get_no_gradient() {
        let model = init_model(Variant::D, 3, 1, &[2], 0, 5).unwrap();
        let x = [0.2, -0.4, 0.9];
        let cache = model.forward(&x).unwrap();
        let g = backward(&model, &x, &cache, &[1.0]).unwrap();
        for (l, ladder) in model.ladders().iter().enumerate() {
            for k in 0..=ladder.depth() {
                for j in 0..3 {
                    if !ladder.mask().contains(j) {
                        assert_eq!(g.ladders[l][k * 4 + j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_trace_is_an_error() {
        let model = init_model(Variant::F, 2, 1, &[2], 1, 0).unwrap();
        let mut cache = model.forward(&[0.1, 0.2]).unwrap();
        cache.traces.clear();
        assert!(backward(&model, &[0.1, 0.2], &cache, &[1.0]).is_err());
    }

    #[test]
    fn cross_entropy_upstream() {
        let (l, up) = loss_and_upstream(Loss::SoftmaxCrossEntropy, &[0.0, 0.0], &[1.0]);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(up, vec![0.5, -0.5]);
    }

    #[test]
    fn init_layouts() {
        let m = init_model(Variant::DL, 3, 2, &[1], 2, 0).unwrap();
        let shape: Vec<(usize, FeatureMask)> =
            m.ladders().iter().map(|l| (l.depth(), l.mask())).collect();
        assert_eq!(
            shape,
            vec![
                (1, FeatureMask::Single(0)),
                (1, FeatureMask::Single(1)),
                (1, FeatureMask::Single(2)),
                (2, FeatureMask::Full),
                (3, FeatureMask::Full),
            ]
        );
        let d = init_model(Variant::D, 2, 3, &[4], 0, 0).unwrap();
        assert_eq!(d.num_ladders(), 2);
        assert_eq!(d.mixing().len(), 6);
        assert!(init_model(Variant::D, 3, 1, &[1, 2], 0, 0).is_err());
        assert_eq!(
            init_model(Variant::F, 2, 1, &[3], 4, 0)
                .unwrap()
                .num_ladders(),
            4
        );
    }

    #[test]
    fn init_is_deterministic_and_unclamped() {
        let a = init_model(Variant::DL, 4, 1, &[3], 3, 42).unwrap();
        let b = init_model(Variant::DL, 4, 1, &[3], 3, 42).unwrap();
        assert_eq!(a, b);
        let c = init_model(Variant::DL, 4, 1, &[3], 3, 43).unwrap();
        assert_ne!(a, c);
        let cache = a.forward(&[0.1, -0.2, 0.3, 0.0]).unwrap();
        assert!(!cache.clamped());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let model = init_model(Variant::F, 1, 1, &[1], 1, 3).unwrap();
        let data = Samples::new(vec![0.5, 1.0], 1, vec![2.0, 1.0], 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let (trained, history) = train(&model, &data, None, &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(history.epochs.is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..Default::default()
            },
            TrainConfig {
                patience: 0,
                ..Default::default()
            },
            TrainConfig {
                epsilon: 0.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn non_finite_targets_abort() {
        let model = init_model(Variant::F, 1, 1, &[1], 1, 3).unwrap();
        let data = Samples::new(vec![0.5, 1.0], 1, vec![f64::INFINITY, 1.0], 1);
        // Samples rejects non-finite values up front.
        assert!(data.is_err());
        let huge = Samples::new(vec![0.5, 1.0], 1, vec![1e300, 1.0], 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 5,
            ..Default::default()
        };
        match train(&model, &huge, None, &cfg) {
            Err(Error::NonFinite(what)) => assert!(what.contains("loss"), "{what}"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let model = init_model(Variant::F, 2, 1, &[2], 2, 9).unwrap();
        let xs: Vec<f64> = (0..40)
            .map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.5)
            .collect();
        let ys: Vec<f64> = xs.chunks(2).map(|r| r[0] * r[1] + 0.3).collect();
        let data = Samples::new(xs, 2, ys, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            batch_size: 4,
            dropout: 0.2,
            learning_rate: 0.01,
            ..Default::default()
        };
        let (a, ha) = train(&model, &data, None, &cfg).unwrap();
        let (b, hb) = train(&model, &data, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha
            .to_csv()
            .starts_with("epoch,train_loss,val_loss,val_metric\n0,"));
    }
}
