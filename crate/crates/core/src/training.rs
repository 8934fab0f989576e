//! Objective, support regularizer, temperature schedules, the Adam training
//! loop and the finite-difference gradient checker.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ddouble::Dd;
use crate::error::{invalid, Error, Result};
use crate::model::{fill_gumbel, Dims, ModelParams};
use crate::reference;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Samples per parallel work unit. Gradients are summed chunk by chunk in a
/// fixed order, so results do not depend on the thread count.
const CHUNK: usize = 32;

/// Geometric schedule from `start` to `end` over the training epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatch size; the whole dataset is one batch when it has fewer rows.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub cov_min: f64,
    pub cov_max: f64,
    /// Conjunction slack, annealed like the temperatures. `{0, 0}` disables it.
    pub epsilon: Schedule,
    pub t_pred: Schedule,
    pub t_list: Schedule,
    pub adam: AdamConfig,
    /// Perturb the rule selector with Gumbel noise during training.
    pub gumbel_noise: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 256,
            learning_rate: 0.005,
            lambda: 0.5,
            cov_min: 0.1,
            cov_max: 0.9,
            epsilon: Schedule { start: 0.05, end: 1e-5 },
            t_pred: Schedule { start: 0.5, end: 0.001 },
            t_list: Schedule { start: 0.5, end: 0.01 },
            adam: AdamConfig::default(),
            gumbel_noise: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.cov_min) || !(0.0..=1.0).contains(&self.cov_max) || self.cov_min >= self.cov_max {
            return Err(invalid(format!(
                "coverage bounds must satisfy 0 <= cov_min < cov_max <= 1, got ({}, {})",
                self.cov_min, self.cov_max
            )));
        }
        let e = self.epsilon;
        let disabled = e.start == 0.0 && e.end == 0.0;
        if !disabled && !(e.end > 0.0 && e.start >= e.end && e.start.is_finite()) {
            return Err(invalid(format!(
                "epsilon schedule needs start >= end > 0 or both zero, got ({}, {})",
                e.start, e.end
            )));
        }
        for (name, s) in [("t_pred", self.t_pred), ("t_list", self.t_list)] {
            if !(s.end > 0.0) || !(s.start >= s.end) || !s.start.is_finite() {
                return Err(invalid(format!(
                    "{name} schedule needs start >= end > 0, got ({}, {})",
                    s.start, s.end
                )));
            }
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch.
    pub loss: f64,
    /// Mean support regularizer over the epoch's minibatches.
    pub reg: f64,
    pub t_pred: f64,
    pub t_list: f64,
    /// Soft coverage of every rule, averaged over the epoch.
    pub coverage: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Writes `epoch,loss,reg,t_pred,t_list,cov_1..cov_k`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.epochs.first().map_or(0, |e| e.coverage.len());
        let mut header: Vec<String> = ["epoch", "loss", "reg", "t_pred", "t_list"].map(String::from).to_vec();
        header.extend((1..=k).map(|j| format!("cov_{j}")));
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut rec = vec![
                e.epoch.to_string(),
                e.loss.to_string(),
                e.reg.to_string(),
                e.t_pred.to_string(),
                e.t_list.to_string(),
            ];
            rec.extend(e.coverage.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Negative log-likelihood of class `y`, with the probability floored at
/// [`PROB_FLOOR`].
pub fn cross_entropy_loss(class_probs: &[f64], y: usize) -> Result<f64> {
    let p = class_probs
        .get(y)
        .ok_or_else(|| invalid(format!("class {y} out of range for {} classes", class_probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean indicator weight per rule over a batch of indicator rows.
pub fn coverage(indicators: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = indicators.first().ok_or_else(|| invalid("coverage of an empty batch"))?;
    let mut cov = vec![0.0; first.len()];
    for row in indicators {
        if row.len() != cov.len() {
            return Err(invalid("indicator rows differ in length"));
        }
        for (c, v) in cov.iter_mut().zip(row) {
            *c += v;
        }
    }
    let n = indicators.len() as f64;
    cov.iter_mut().for_each(|c| *c /= n);
    Ok(cov)
}

/// Mean squared violation of the `[cov_min, cov_max]` band.
pub fn support_regularizer(cov: &[f64], cov_min: f64, cov_max: f64) -> f64 {
    if cov.is_empty() {
        return 0.0;
    }
    let s: f64 = cov
        .iter()
        .map(|&c| (cov_min - c).max(0.0).powi(2) + (c - cov_max).max(0.0).powi(2))
        .sum();
    s / cov.len() as f64
}

fn support_regularizer_grad(cov: &[f64], cov_min: f64, cov_max: f64) -> Vec<f64> {
    let k = cov.len() as f64;
    cov.iter()
        .map(|&c| 2.0 * ((c - cov_max).max(0.0) - (cov_min - c).max(0.0)) / k)
        .collect()
}

/// Geometric interpolation `start * (end / start)^(epoch / total)`.
pub fn anneal(epoch: usize, total: usize, start: f64, end: f64) -> f64 {
    if total == 0 {
        return end;
    }
    if epoch >= total || start == end {
        return end;
    }
    start * (end / start).powf(epoch as f64 / total as f64)
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Source of selector noise for one minibatch.
#[derive(Debug, Clone, Copy)]
enum Noise {
    Zero,
    Gumbel { seed: u64, epoch: usize, batch: usize },
}

impl Noise {
    fn fill(self, sample: usize, out: &mut [f64]) {
        match self {
            Noise::Zero => out.iter_mut().for_each(|g| *g = 0.0),
            Noise::Gumbel { seed, epoch, batch } => fill_gumbel(seed, epoch, batch, sample, out),
        }
    }
}

/// Objective terms of one minibatch.
#[derive(Debug, Clone, PartialEq)]
struct BatchStats {
    ce: f64,
    reg: f64,
    coverage: Vec<f64>,
}

fn batch_rows<'a>(x: &'a [f64], d: usize, batch: &'a [usize]) -> impl Fn(usize) -> &'a [f64] + 'a {
    move |i| &x[batch[i] * d..(batch[i] + 1) * d]
}

/// Soft coverage of a minibatch.
fn batch_coverage(params: &ModelParams, x: &[f64], batch: &[usize], noise: Noise) -> Vec<f64> {
    let k = params.dims().rules;
    let row = batch_rows(x, params.dims().features, batch);
    let partial: Vec<Vec<f64>> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; k];
            let mut g = vec![0.0; k];
            for &i in chunk {
                noise.fill(batch[i], &mut g);
                let out = params.forward_unchecked(row(i), &g);
                for (a, v) in acc.iter_mut().zip(&out.indicator) {
                    *a += v;
                }
            }
            acc
        })
        .collect();
    let mut cov = vec![0.0; k];
    for p in partial {
        for (c, v) in cov.iter_mut().zip(p) {
            *c += v;
        }
    }
    let n = batch.len() as f64;
    cov.iter_mut().for_each(|c| *c /= n);
    cov
}

/// Minibatch objective `mean CE + lambda * R(coverage)` and its gradient.
/// The gradient is written into `grad` (overwritten).
#[allow(clippy::too_many_arguments)]
fn batch_objective(
    params: &ModelParams,
    x: &[f64],
    y: &[usize],
    batch: &[usize],
    noise: Noise,
    lambda: f64,
    cov_min: f64,
    cov_max: f64,
    grad: &mut [f64],
) -> BatchStats {
    let dims = params.dims();
    let (k, n) = (dims.rules, batch.len() as f64);
    let cov = batch_coverage(params, x, batch, noise);
    let reg = support_regularizer(&cov, cov_min, cov_max);
    let dind: Vec<f64> = support_regularizer_grad(&cov, cov_min, cov_max)
        .into_iter()
        .map(|g| lambda * g / n)
        .collect();
    let use_reg = lambda > 0.0 && dind.iter().any(|&g| g != 0.0);

    let row = batch_rows(x, dims.features, batch);
    let partial: Vec<(Vec<f64>, f64)> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; dims.n_params()];
            let mut noise_buf = vec![0.0; k];
            let mut ce = 0.0;
            for &i in chunk {
                noise.fill(batch[i], &mut noise_buf);
                let label = y[batch[i]];
                let out = params.backward_unchecked(
                    row(i),
                    &noise_buf,
                    |out| {
                        let mut dz: Vec<f64> = out.class_probs.iter().map(|p| p / n).collect();
                        dz[label] -= 1.0 / n;
                        dz
                    },
                    use_reg.then_some(dind.as_slice()),
                    &mut g,
                );
                ce += -out.class_probs[label].max(PROB_FLOOR).ln();
            }
            (g, ce)
        })
        .collect();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut ce = 0.0;
    for (g, c) in partial {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        ce += c;
    }
    BatchStats { ce: ce / n, reg, coverage: cov }
}

/// Mean cross-entropy of the whole dataset under zero noise.
pub fn dataset_loss(params: &ModelParams, data: &Dataset) -> f64 {
    let zero = vec![0.0; params.dims().rules];
    let total: f64 = (0..data.n_rows())
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|i| {
            let out = params.forward_unchecked(data.row(i), &zero);
            -out.class_probs[data.labels[i]].max(PROB_FLOOR).ln()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / data.n_rows() as f64
}

/// Trains a soft rule list with `k` rules (including the default rule).
pub fn train(data: &Dataset, config: &TrainConfig, k: usize) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if data.n_rows() == 0 {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if let Some(i) = data.features.iter().position(|v| !v.is_finite()) {
        let d = data.n_features();
        return Err(Error::Data(format!("non-finite value in row {}, column {}", i / d, i % d)));
    }
    let dims = Dims::new(data.n_features(), k, data.n_classes().max(2))?;
    if data.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        log::warn!("training data contains a single class");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let last = config.epochs - 1;
    let mut params = ModelParams::init(dims, config.epsilon.start, config.t_pred.start, config.t_list.start, &mut rng);
    let mut adam = Adam::new(dims.n_params(), config.adam);
    let mut grad = vec![0.0; dims.n_params()];
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let batch_size = config.batch_size.min(data.n_rows());
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        params.pred_temp = anneal(epoch, last, config.t_pred.start, config.t_pred.end);
        params.list_temp = anneal(epoch, last, config.t_list.start, config.t_list.end);
        params.epsilon = anneal(epoch, last, config.epsilon.start, config.epsilon.end);
        order.shuffle(&mut rng);
        let mut ce = 0.0;
        let mut reg = 0.0;
        let mut cov = vec![0.0; k];
        let batches: Vec<&[usize]> = order.chunks(batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let noise = if config.gumbel_noise {
                Noise::Gumbel { seed: config.seed, epoch, batch: b }
            } else {
                Noise::Zero
            };
            let stats = batch_objective(
                &params,
                &data.features,
                &data.labels,
                batch,
                noise,
                config.lambda,
                config.cov_min,
                config.cov_max,
                &mut grad,
            );
            let objective = stats.ce + config.lambda * stats.reg;
            if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let bad = grad.iter().position(|g| !g.is_finite());
                let reason = match bad {
                    Some(i) => format!(
                        "non-finite gradient for {:?} (objective {objective}, t_pred {}, t_list {})",
                        params.kind_of(i),
                        params.pred_temp,
                        params.list_temp
                    ),
                    None => format!("non-finite objective {objective} in batch {b}"),
                };
                return Err(Error::TrainingAborted { epoch, reason });
            }
            adam.step(params.flat_mut(), &grad, config.learning_rate);
            let w = batch.len() as f64 / data.n_rows() as f64;
            ce += stats.ce * w;
            reg += stats.reg / batches.len() as f64;
            for (c, v) in cov.iter_mut().zip(&stats.coverage) {
                *c += v * w;
            }
        }
        log::debug!(
            "epoch {epoch}: loss {ce:.5} reg {reg:.5} t_pred {:.4} t_list {:.4}",
            params.pred_temp,
            params.list_temp
        );
        report.epochs.push(EpochRecord {
            epoch,
            loss: ce,
            reg,
            t_pred: params.pred_temp,
            t_list: params.list_temp,
            coverage: cov,
        });
    }
    if params.flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingAborted { epoch: last, reason: "parameters became non-finite".into() });
    }
    Ok((params, report))
}

/// Settings for [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub pred_temp: f64,
    pub list_temp: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub cov_min: f64,
    pub cov_max: f64,
    /// Samples in each probe's minibatch.
    pub batch: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            pred_temp: 0.1,
            list_temp: 0.2,
            epsilon: 0.05,
            lambda: 0.5,
            cov_min: 0.3,
            cov_max: 0.6,
            batch: 4,
            step: 1e-5,
            seed: 0,
        }
    }
}

/// Worst relative error between the analytic minibatch gradient and central
/// differences over `n_probes` random models and batches. Coordinates where
/// both values are below 1e-8 in magnitude are skipped.
///
/// The differenced objective is evaluated in double-double precision: in
/// plain f64 its roundoff (about 1e-16 / step) would dominate the small
/// coordinates that survive the 1e-8 cutoff.
pub fn gradient_check(dims: Dims, config: &GradCheckConfig, n_probes: usize) -> Result<f64> {
    if !(config.pred_temp > 0.0) || !(config.list_temp > 0.0) || config.batch == 0 {
        return Err(invalid("gradient check needs positive temperatures and a nonempty batch"));
    }
    let worst: Vec<f64> = (0..n_probes)
        .into_par_iter()
        .map(|probe| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(probe as u64);
            probe_error(dims, config, probe, &mut rng)
        })
        .collect();
    Ok(worst.into_iter().fold(0.0, f64::max))
}

fn probe_error(dims: Dims, config: &GradCheckConfig, probe: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut params = ModelParams::init(dims, config.epsilon, config.pred_temp, config.list_temp, rng);
    for idx in 0..params.flat().len() {
        use crate::model::ParamKind::*;
        let v = match params.kind_of(idx) {
            Alpha { .. } | Beta { .. } => rng.gen_range(-0.1..1.1),
            Weight { .. } => rng.gen_range(-3.0..2.0),
            Priority { .. } => rng.gen_range(-1.0..2.0),
            Consequent { .. } => rng.gen_range(-2.0..2.0),
        };
        params.flat_mut()[idx] = v;
    }
    let n = config.batch;
    let x: Vec<f64> = (0..n * dims.features).map(|_| rng.gen()).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..dims.classes)).collect();
    let batch: Vec<usize> = (0..n).collect();
    let noise = Noise::Gumbel { seed: config.seed, epoch: probe, batch: 0 };
    let mut analytic = vec![0.0; dims.n_params()];
    batch_objective(&params, &x, &y, &batch, noise, config.lambda, config.cov_min, config.cov_max, &mut analytic);

    let rows: Vec<&[f64]> = x.chunks(dims.features).collect();
    let noise_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut g = vec![0.0; dims.rules];
            noise.fill(i, &mut g);
            g
        })
        .collect();
    let objective =
        |p: &ModelParams| reference::objective(p, &rows, &y, &noise_rows, config.lambda, config.cov_min, config.cov_max);
    let mut worst: f64 = 0.0;
    for idx in 0..analytic.len() {
        let orig = params.flat()[idx];
        let (up_at, down_at) = (orig + config.step, orig - config.step);
        params.flat_mut()[idx] = up_at;
        let up = objective(&params);
        params.flat_mut()[idx] = down_at;
        let down = objective(&params);
        params.flat_mut()[idx] = orig;
        // divide by the step actually taken after rounding the perturbed values
        let fd = ((up - down) / Dd::from(up_at - down_at)).to_f64();
        let scale = fd.abs().max(analytic[idx].abs());
        if scale >= 1e-8 {
            worst = worst.max((fd - analytic[idx]).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureMeta, Schema};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn threshold_dataset(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let labels = xs.iter().map(|&x| usize::from(x > 0.5)).collect();
        let schema = Schema {
            label: "y".into(),
            classes: vec!["0".into(), "1".into()],
            features: vec![FeatureMeta::numeric("x", 0.0, 1.0)],
        };
        Dataset::new(schema, xs, labels).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy_loss(&[1.0, 0.0], 0).unwrap() < 1e-12);
        assert_relative_eq!(cross_entropy_loss(&[0.5, 0.5], 1).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(cross_entropy_loss(&[0.9, 0.1], 1).unwrap(), 2.302_585_092_994_046, epsilon = 1e-12);
        assert_relative_eq!(cross_entropy_loss(&[1.0, 0.0], 1).unwrap(), -(1e-12f64).ln(), epsilon = 1e-9);
        assert!(cross_entropy_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(coverage(&vec![vec![0.5, 0.5]; 3]).unwrap(), vec![0.5, 0.5]);
        let rows = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(coverage(&rows).unwrap(), vec![0.75, 0.25]);
        assert!(coverage(&[]).is_err());
    }

    #[test]
    fn regularizer_examples() {
        assert_eq!(support_regularizer(&[0.5], 0.1, 0.9), 0.0);
        assert_relative_eq!(support_regularizer(&[0.05], 0.1, 0.9), 0.0025, epsilon = 1e-15);
        assert_relative_eq!(support_regularizer(&[0.95], 0.1, 0.9), 0.0025, epsilon = 1e-15);
    }

    #[test]
    fn regularizer_gradient_matches_differences() {
        let cov = [0.03, 0.5, 0.97, 0.2];
        let g = support_regularizer_grad(&cov, 0.1, 0.9);
        for j in 0..cov.len() {
            let h = 1e-6;
            let mut up = cov;
            up[j] += h;
            let mut down = cov;
            down[j] -= h;
            let fd = (support_regularizer(&up, 0.1, 0.9) - support_regularizer(&down, 0.1, 0.9)) / (2.0 * h);
            assert_relative_eq!(g[j], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal(0, 100, 0.5, 0.01), 0.5);
        assert_eq!(anneal(100, 100, 0.5, 0.01), 0.01);
        assert_relative_eq!(anneal(50, 100, 0.5, 0.02), 0.1, epsilon = 1e-15);
        assert_eq!(anneal(0, 0, 0.5, 0.01), 0.01);
        assert_eq!(anneal(3, 10, 0.0, 0.0), 0.0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut theta = [1.0, -1.0];
        adam.step(&mut theta, &[3.0, -0.5], 0.1);
        assert_relative_eq!(theta[0], 0.9, epsilon = 1e-8);
        assert_relative_eq!(theta[1], -0.9, epsilon = 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let no_slack = TrainConfig { epsilon: Schedule { start: 0.0, end: 0.0 }, ..Default::default() };
        assert!(no_slack.validate().is_ok());
        let bad = [
            TrainConfig { cov_min: 0.9, cov_max: 0.1, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { t_pred: Schedule { start: 0.01, end: 0.5 }, ..Default::default() },
            TrainConfig { t_list: Schedule { start: 0.5, end: 0.0 }, ..Default::default() },
            TrainConfig { epsilon: Schedule { start: 0.05, end: 0.0 }, ..Default::default() },
            TrainConfig { epsilon: Schedule { start: -0.1, end: -0.1 }, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_overlay_from_json() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 7, "t_list": {"start": 1.0, "end": 0.1}}"#).unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.t_list, Schedule { start: 1.0, end: 0.1 });
        assert_eq!(c.learning_rate, TrainConfig::default().learning_rate);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 7}"#).is_err());
    }

    #[test]
    fn learns_a_threshold() {
        let data = threshold_dataset(200);
        // selector noise keeps the training loss of uncovered rows near a coin flip
        let cfg = TrainConfig { epochs: 200, batch_size: 32, gumbel_noise: false, seed: 1, ..Default::default() };
        let (params, report) = train(&data, &cfg, 2).unwrap();
        let final_loss = *report.losses().last().unwrap();
        assert!(final_loss < 0.1, "final loss {final_loss}");
        assert!(dataset_loss(&params, &data) < 0.1);
        assert_eq!(params.pred_temp, cfg.t_pred.end);
        assert_eq!(params.list_temp, cfg.t_list.end);
        assert_eq!(params.epsilon, cfg.epsilon.end);
        assert_eq!(report.epochs.len(), 200);
    }

    #[test]
    fn zero_lambda_with_open_band_has_no_regularizer() {
        let data = threshold_dataset(60);
        let cfg = TrainConfig { epochs: 20, lambda: 0.0, cov_min: 0.0, cov_max: 1.0, ..Default::default() };
        let (_, report) = train(&data, &cfg, 3).unwrap();
        assert!(report.epochs.iter().all(|e| e.reg == 0.0));
    }

    #[test]
    fn training_is_deterministic_across_thread_counts() {
        let data = threshold_dataset(300);
        let cfg = TrainConfig { epochs: 15, batch_size: 128, seed: 5, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&data, &cfg, 3).unwrap())
        };
        let (p1, r1) = run(1);
        let (p4, r4) = run(4);
        assert_eq!(p1, p4);
        assert_eq!(r1, r4);
    }

    #[test]
    fn report_csv_has_coverage_columns() {
        let data = threshold_dataset(40);
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let (_, report) = train(&data, &cfg, 3).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,loss,reg,t_pred,t_list,cov_1,cov_2,cov_3");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut data = threshold_dataset(20);
        data.features[3] = f64::NAN;
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        assert!(matches!(train(&data, &cfg, 2), Err(Error::Data(_))));
    }

    #[test]
    fn diverging_parameters_abort_training() {
        let data = threshold_dataset(20);
        let cfg = TrainConfig { epochs: 5, learning_rate: 1e300, ..Default::default() };
        assert!(matches!(train(&data, &cfg, 2), Err(Error::TrainingAborted { .. })));
    }

    #[test]
    fn small_gradient_check_passes() {
        let dims = Dims::new(3, 3, 2).unwrap();
        assert!(gradient_check(dims, &GradCheckConfig::default(), 20).unwrap() < 1e-4);
        let soft = GradCheckConfig { pred_temp: 0.5, list_temp: 0.5, ..Default::default() };
        assert!(gradient_check(dims, &soft, 20).unwrap() < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn regularizer_is_zero_inside_band(cov in prop::collection::vec(0.1f64..=0.9, 1..10)) {
            prop_assert_eq!(support_regularizer(&cov, 0.1, 0.9), 0.0);
        }

        #[test]
        fn anneal_is_monotone(start in 0.05f64..2.0, ratio in 0.01f64..1.0, total in 1usize..500) {
            let end = start * ratio;
            let mut prev = f64::INFINITY;
            for e in 0..=total {
                let t = anneal(e, total, start, end);
                prop_assert!(t <= prev && t >= end * (1.0 - 1e-12));
                prev = t;
            }
        }
    }
}
