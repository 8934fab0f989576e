//! The soft rule list: active priorities, Gumbel-Softmax rule selection and
//! the mixture of consequents.
//!
//! Rule `k - 1` is the default rule. Its antecedent is identically 1 and its
//! priority is a fixed constant, so neither appears among the trainable
//! parameters; only its consequent is learned.
//!
//! Trainable parameters live in one flat vector laid out as
//!
//! ```text
//! [alpha (m*d) | beta (m*d) | raw weights (m*d) | raw priorities (m) | consequents (k*l)]
//! ```
//!
//! with `m = k - 1` learned rules, which keeps gradients and optimizer state
//! plain vectors of the same shape.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjunction::{relaxed_and, relaxed_and_grad, sigmoid, softplus, softplus_inverse, ConjunctionParams};
use crate::error::{invalid, Error, Result};
use crate::predicate::{activation, activation_and_grad, PredicateParams};

/// Fixed priority of the always-active default rule.
pub const DEFAULT_RULE_PRIORITY: f64 = 0.1;

/// Model shape: `d` features, `k` rules including the default rule, `l` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub features: usize,
    pub rules: usize,
    pub classes: usize,
}

impl Dims {
    pub fn new(features: usize, rules: usize, classes: usize) -> Result<Self> {
        if features == 0 {
            return Err(invalid("model needs at least one feature"));
        }
        if rules < 2 {
            return Err(invalid(format!(
                "model needs at least 2 rules (one learned plus the default), got {rules}"
            )));
        }
        if classes < 2 {
            return Err(invalid(format!("model needs at least 2 classes, got {classes}")));
        }
        Ok(Self { features, rules, classes })
    }

    /// Number of learned (non-default) rules.
    pub fn learned(&self) -> usize {
        self.rules - 1
    }

    pub fn n_params(&self) -> usize {
        let m = self.learned();
        3 * m * self.features + m + self.rules * self.classes
    }

    fn alpha_at(&self, rule: usize) -> usize {
        rule * self.features
    }

    fn beta_at(&self, rule: usize) -> usize {
        (self.learned() + rule) * self.features
    }

    fn weight_at(&self, rule: usize) -> usize {
        (2 * self.learned() + rule) * self.features
    }

    fn priority_at(&self, rule: usize) -> usize {
        3 * self.learned() * self.features + rule
    }

    fn consequent_at(&self, rule: usize) -> usize {
        3 * self.learned() * self.features + self.learned() + rule * self.classes
    }
}

/// Which parameter a flat index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Alpha { rule: usize, feature: usize },
    Beta { rule: usize, feature: usize },
    Weight { rule: usize, feature: usize },
    Priority { rule: usize },
    Consequent { rule: usize, class: usize },
}

/// All learnable tensors of the soft rule list plus the two scheduled temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelDoc", try_from = "ModelDoc")]
pub struct ModelParams {
    dims: Dims,
    theta: Vec<f64>,
    pub epsilon: f64,
    pub pred_temp: f64,
    pub list_temp: f64,
}

impl ModelParams {
    /// Training initialization: sorted uniform bounds, weak conjunction
    /// weights, linearly spaced priorities and zero consequents.
    pub fn init<R: Rng>(dims: Dims, epsilon: f64, pred_temp: f64, list_temp: f64, rng: &mut R) -> Self {
        let mut theta = vec![0.0; dims.n_params()];
        let (m, d) = (dims.learned(), dims.features);
        for j in 0..m {
            for i in 0..d {
                let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                theta[dims.alpha_at(j) + i] = a.min(b);
                theta[dims.beta_at(j) + i] = a.max(b);
            }
        }
        for j in 0..m {
            for i in 0..d {
                theta[dims.weight_at(j) + i] = rng.gen_range(-2.0..0.0);
            }
        }
        for j in 0..m {
            let spread = if m > 1 { j as f64 / (m - 1) as f64 } else { 0.5 };
            let p = 1.5 - spread + 1e-3 * j as f64;
            theta[dims.priority_at(j)] = softplus_inverse(p);
        }
        Self { dims, theta, epsilon, pred_temp, list_temp }
    }

    pub fn from_flat(dims: Dims, theta: Vec<f64>, epsilon: f64, pred_temp: f64, list_temp: f64) -> Result<Self> {
        if theta.len() != dims.n_params() {
            return Err(invalid(format!(
                "expected {} parameters for {:?}, got {}",
                dims.n_params(),
                dims,
                theta.len()
            )));
        }
        let p = Self { dims, theta, epsilon, pred_temp, list_temp };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.pred_temp > 0.0) || !(self.list_temp > 0.0) {
            return Err(invalid("temperatures must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(invalid("epsilon must be nonnegative"));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(invalid("model parameters must be finite"));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn kind_of(&self, index: usize) -> ParamKind {
        let dims = self.dims;
        let (m, d) = (dims.learned(), dims.features);
        let block = m * d;
        if index < block {
            ParamKind::Alpha { rule: index / d, feature: index % d }
        } else if index < 2 * block {
            let r = index - block;
            ParamKind::Beta { rule: r / d, feature: r % d }
        } else if index < 3 * block {
            let r = index - 2 * block;
            ParamKind::Weight { rule: r / d, feature: r % d }
        } else if index < 3 * block + m {
            ParamKind::Priority { rule: index - 3 * block }
        } else {
            let r = index - 3 * block - m;
            ParamKind::Consequent { rule: r / dims.classes, class: r % dims.classes }
        }
    }

    pub fn alpha(&self, rule: usize) -> &[f64] {
        let o = self.dims.alpha_at(rule);
        &self.theta[o..o + self.dims.features]
    }

    pub fn beta(&self, rule: usize) -> &[f64] {
        let o = self.dims.beta_at(rule);
        &self.theta[o..o + self.dims.features]
    }

    pub fn raw_weights(&self, rule: usize) -> &[f64] {
        let o = self.dims.weight_at(rule);
        &self.theta[o..o + self.dims.features]
    }

    /// Effective (softplus-mapped) conjunction weights of a rule. The default
    /// rule has all-zero weights.
    pub fn weights(&self, rule: usize) -> Vec<f64> {
        if self.is_default(rule) {
            return vec![0.0; self.dims.features];
        }
        self.raw_weights(rule).iter().map(|&u| softplus(u)).collect()
    }

    pub fn consequent(&self, rule: usize) -> &[f64] {
        let o = self.dims.consequent_at(rule);
        &self.theta[o..o + self.dims.classes]
    }

    pub fn consequent_mut(&mut self, rule: usize) -> &mut [f64] {
        let o = self.dims.consequent_at(rule);
        let l = self.dims.classes;
        &mut self.theta[o..o + l]
    }

    pub fn is_default(&self, rule: usize) -> bool {
        rule == self.dims.learned()
    }

    pub fn priority(&self, rule: usize) -> f64 {
        if self.is_default(rule) {
            DEFAULT_RULE_PRIORITY
        } else {
            softplus(self.theta[self.dims.priority_at(rule)])
        }
    }

    /// Unconstrained priority parameter of a learned rule.
    pub fn raw_priority(&self, rule: usize) -> f64 {
        self.theta[self.dims.priority_at(rule)]
    }

    pub fn priorities(&self) -> Vec<f64> {
        (0..self.dims.rules).map(|j| self.priority(j)).collect()
    }

    pub fn predicate(&self, rule: usize, feature: usize) -> PredicateParams {
        PredicateParams {
            alpha: self.alpha(rule)[feature],
            beta: self.beta(rule)[feature],
            temp: self.pred_temp,
        }
    }

    pub fn conjunction(&self, rule: usize) -> Option<ConjunctionParams> {
        (!self.is_default(rule)).then(|| ConjunctionParams {
            raw_weights: self.raw_weights(rule).to_vec(),
            epsilon: self.epsilon,
        })
    }

    fn antecedent(&self, rule: usize, x: &[f64], preds: &mut [f64]) -> f64 {
        if self.is_default(rule) {
            return 1.0;
        }
        let (alpha, beta) = (self.alpha(rule), self.beta(rule));
        for i in 0..x.len() {
            preds[i] = activation(x[i], alpha[i], beta[i], self.pred_temp);
        }
        let weights = self.weights(rule);
        relaxed_and(preds, &weights, self.epsilon)
    }

    /// Soft antecedent activation of every rule for one sample.
    pub fn antecedents(&self, x: &[f64]) -> Vec<f64> {
        let mut preds = vec![0.0; self.dims.features];
        (0..self.dims.rules).map(|j| self.antecedent(j, x, &mut preds)).collect()
    }

    fn check_sample(&self, x: &[f64], noise: &GumbelSample) -> Result<()> {
        if x.len() != self.dims.features {
            return Err(invalid(format!(
                "sample has {} features, model expects {}",
                x.len(),
                self.dims.features
            )));
        }
        if noise.noise.len() != self.dims.rules {
            return Err(invalid(format!(
                "noise has {} entries, model has {} rules",
                noise.noise.len(),
                self.dims.rules
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sample contains non-finite values"));
        }
        Ok(())
    }

    /// Full soft forward pass without argument checks.
    pub fn forward_unchecked(&self, x: &[f64], noise: &[f64]) -> RuleListOutput {
        let antecedents = self.antecedents(x);
        let ap: Vec<f64> = antecedents
            .iter()
            .enumerate()
            .map(|(j, a)| a * self.priority(j))
            .collect();
        let indicator = softmax_scaled(&ap, noise, self.list_temp);
        let logits = self.mix_logits(&indicator);
        let class_probs = softmax(&logits);
        RuleListOutput { class_probs, indicator, antecedents, logits }
    }

    fn mix_logits(&self, indicator: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dims.classes];
        for (j, &w) in indicator.iter().enumerate() {
            for (zc, &c) in z.iter_mut().zip(self.consequent(j)) {
                *zc += w * c;
            }
        }
        z
    }

    /// Accumulates into `grad` the parameter gradient of a scalar loss whose
    /// derivatives with respect to the mixed class logits (`dlogits`) and,
    /// optionally, directly with respect to the indicator (`dindicator`) are
    /// given. Returns the forward output for convenience.
    pub fn backward_unchecked(
        &self,
        x: &[f64],
        noise: &[f64],
        dlogits: impl FnOnce(&RuleListOutput) -> Vec<f64>,
        dindicator: Option<&[f64]>,
        grad: &mut [f64],
    ) -> RuleListOutput {
        let dims = self.dims;
        let (k, d) = (dims.rules, dims.features);
        let out = self.forward_unchecked(x, noise);
        let dz = dlogits(&out);

        // consequents and indicator
        let mut di = vec![0.0; k];
        for j in 0..k {
            let c = self.consequent(j);
            let o = dims.consequent_at(j);
            let mut s = 0.0;
            for cls in 0..dims.classes {
                grad[o + cls] += out.indicator[j] * dz[cls];
                s += c[cls] * dz[cls];
            }
            di[j] = s + dindicator.map_or(0.0, |g| g[j]);
        }
        let dot: f64 = out.indicator.iter().zip(&di).map(|(a, b)| a * b).sum();

        let mut preds = vec![0.0; d];
        let mut pred_grads = Vec::with_capacity(d);
        let mut dpreds = vec![0.0; d];
        let mut dweights = vec![0.0; d];
        for j in 0..dims.learned() {
            // d loss / d active priority
            let dap = out.indicator[j] * (di[j] - dot) / self.list_temp;
            let p = self.priority(j);
            let a = out.antecedents[j];
            let po = dims.priority_at(j);
            grad[po] += dap * a * sigmoid(self.theta[po]);
            let da = dap * p;
            if da == 0.0 {
                continue;
            }

            let (alpha, beta) = (self.alpha(j), self.beta(j));
            pred_grads.clear();
            for i in 0..d {
                let (v, g) = activation_and_grad(x[i], alpha[i], beta[i], self.pred_temp);
                preds[i] = v;
                pred_grads.push(g);
            }
            let weights = self.weights(j);
            relaxed_and_grad(&preds, &weights, self.epsilon, &mut dpreds, &mut dweights);
            let (ao, bo, wo) = (dims.alpha_at(j), dims.beta_at(j), dims.weight_at(j));
            let raw = self.raw_weights(j);
            for i in 0..d {
                let dp = da * dpreds[i];
                grad[ao + i] += dp * pred_grads[i].dalpha;
                grad[bo + i] += dp * pred_grads[i].dbeta;
                grad[wo + i] += da * dweights[i] * sigmoid(raw[i]);
            }
        }
        out
    }

    /// Hard-limit forward: crisp predicates, strict conjunction over the
    /// predicates with nonzero weight, and argmax rule selection.
    /// Returns the index of the selected rule.
    pub fn hard_select(&self, x: &[f64]) -> usize {
        let mut best = self.dims.learned();
        let mut best_p = f64::NEG_INFINITY;
        for j in 0..self.dims.learned() {
            let fires = self
                .alpha(j)
                .iter()
                .zip(self.beta(j))
                .zip(x)
                .all(|((&a, &b), &v)| crate::predicate::hard_predicate(v, a, b));
            let p = self.priority(j);
            if fires && p > best_p {
                best = j;
                best_p = p;
            }
        }
        best
    }
}

/// Outputs of a soft rule-list forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleListOutput {
    pub class_probs: Vec<f64>,
    pub indicator: Vec<f64>,
    pub antecedents: Vec<f64>,
    pub logits: Vec<f64>,
}

impl RuleListOutput {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.class_probs)
    }
}

/// Standard Gumbel noise for the rule selector, or zeros in deterministic mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub noise: Vec<f64>,
}

impl GumbelSample {
    pub fn zeros(k: usize) -> Self {
        Self { noise: vec![0.0; k] }
    }

    /// Draws `k` i.i.d. standard Gumbel variates. The draw is a pure function of
    /// `(seed, epoch, batch, sample)`.
    pub fn draw(seed: u64, epoch: usize, batch: usize, sample: usize, k: usize) -> Self {
        let mut noise = vec![0.0; k];
        fill_gumbel(seed, epoch, batch, sample, &mut noise);
        Self { noise }
    }
}

pub(crate) fn fill_gumbel(seed: u64, epoch: usize, batch: usize, sample: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 40) ^ ((batch as u64) << 20) ^ sample as u64);
    for g in out.iter_mut() {
        // uniform on the open interval (0, 1)
        let u: f64 = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        *g = -(-u.ln()).ln();
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn softmax_scaled(ap: &[f64], noise: &[f64], temp: f64) -> Vec<f64> {
    let s: Vec<f64> = ap.iter().zip(noise).map(|(a, g)| (a + g) / temp).collect();
    softmax(&s)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Elementwise product of antecedent activations and priorities.
pub fn active_priority(antecedents: &[f64], priorities: &[f64]) -> Result<Vec<f64>> {
    if antecedents.len() != priorities.len() {
        return Err(invalid(format!(
            "{} antecedents but {} priorities",
            antecedents.len(),
            priorities.len()
        )));
    }
    Ok(antecedents.iter().zip(priorities).map(|(a, p)| a * p).collect())
}

/// Gumbel-Softmax relaxation of the argmax over active priorities.
pub fn soft_indicator(active: &[f64], noise: &GumbelSample, list_temp: f64) -> Result<Vec<f64>> {
    if !(list_temp > 0.0) || !list_temp.is_finite() {
        return Err(invalid(format!("rule-list temperature must be positive, got {list_temp}")));
    }
    if active.len() != noise.noise.len() {
        return Err(invalid("active priorities and noise differ in length"));
    }
    Ok(softmax_scaled(active, &noise.noise, list_temp))
}

/// Soft rule-list forward pass for one scaled sample.
pub fn soft_rulelist_forward(x: &[f64], params: &ModelParams, noise: &GumbelSample) -> Result<RuleListOutput> {
    params.check_sample(x, noise)?;
    Ok(params.forward_unchecked(x, &noise.noise))
}

/// Gradient of `sum_c upstream[c] * class_probs[c]` with respect to every
/// trainable parameter, in the flat layout of [`ModelParams::flat`].
pub fn soft_rulelist_backward(
    x: &[f64],
    params: &ModelParams,
    noise: &GumbelSample,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    params.check_sample(x, noise)?;
    if upstream.len() != params.dims.classes {
        return Err(invalid(format!(
            "upstream gradient has {} entries, model has {} classes",
            upstream.len(),
            params.dims.classes
        )));
    }
    let mut grad = vec![0.0; params.dims.n_params()];
    params.backward_unchecked(
        x,
        &noise.noise,
        |out| {
            // softmax Jacobian
            let p = &out.class_probs;
            let dot: f64 = p.iter().zip(upstream).map(|(a, b)| a * b).sum();
            p.iter().zip(upstream).map(|(pc, uc)| pc * (uc - dot)).collect()
        },
        None,
        &mut grad,
    );
    Ok(grad)
}

#[derive(Serialize, Deserialize)]
struct RuleDoc {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    raw_weights: Vec<f64>,
    raw_priority: f64,
    consequent: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DefaultRuleDoc {
    priority: f64,
    consequent: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    features: usize,
    classes: usize,
    epsilon: f64,
    pred_temp: f64,
    list_temp: f64,
    rules: Vec<RuleDoc>,
    default_rule: DefaultRuleDoc,
}

impl From<ModelParams> for ModelDoc {
    fn from(p: ModelParams) -> Self {
        let rules = (0..p.dims.learned())
            .map(|j| RuleDoc {
                alpha: p.alpha(j).to_vec(),
                beta: p.beta(j).to_vec(),
                raw_weights: p.raw_weights(j).to_vec(),
                raw_priority: p.theta[p.dims.priority_at(j)],
                consequent: p.consequent(j).to_vec(),
            })
            .collect();
        ModelDoc {
            features: p.dims.features,
            classes: p.dims.classes,
            epsilon: p.epsilon,
            pred_temp: p.pred_temp,
            list_temp: p.list_temp,
            rules,
            default_rule: DefaultRuleDoc {
                priority: DEFAULT_RULE_PRIORITY,
                consequent: p.consequent(p.dims.learned()).to_vec(),
            },
        }
    }
}

impl TryFrom<ModelDoc> for ModelParams {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let dims = Dims::new(doc.features, doc.rules.len() + 1, doc.classes)?;
        let mut theta = vec![0.0; dims.n_params()];
        let check = |v: &[f64], n: usize, what: &str| {
            if v.len() == n {
                Ok(())
            } else {
                Err(invalid(format!("{what} has {} entries, expected {n}", v.len())))
            }
        };
        for (j, r) in doc.rules.iter().enumerate() {
            check(&r.alpha, dims.features, "alpha")?;
            check(&r.beta, dims.features, "beta")?;
            check(&r.raw_weights, dims.features, "raw_weights")?;
            check(&r.consequent, dims.classes, "consequent")?;
            theta[dims.alpha_at(j)..][..dims.features].copy_from_slice(&r.alpha);
            theta[dims.beta_at(j)..][..dims.features].copy_from_slice(&r.beta);
            theta[dims.weight_at(j)..][..dims.features].copy_from_slice(&r.raw_weights);
            theta[dims.priority_at(j)] = r.raw_priority;
            theta[dims.consequent_at(j)..][..dims.classes].copy_from_slice(&r.consequent);
        }
        check(&doc.default_rule.consequent, dims.classes, "default consequent")?;
        theta[dims.consequent_at(dims.learned())..][..dims.classes].copy_from_slice(&doc.default_rule.consequent);
        ModelParams::from_flat(dims, theta, doc.epsilon, doc.pred_temp, doc.list_temp)
    }
}
