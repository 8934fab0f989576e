//! Crisp rule lists: extraction from trained soft parameters, prediction,
//! text rendering and the JSON document form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureMeta, Schema};
use crate::error::{invalid, Error, Result};
use crate::model::{argmax, softmax, ModelParams};

pub const RULELIST_FORMAT: &str = "neurules-rulelist/1";

/// Predicates whose effective weight falls below this are dropped.
pub const DEFAULT_WEIGHT_THRESHOLD: f64 = 0.01;

/// Closed interval condition on one feature, in original units. A missing
/// bound is unbounded on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Condition {
    pub fn holds(&self, v: f64) -> bool {
        self.lower.map_or(true, |a| a <= v) && self.upper.map_or(true, |b| v <= b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardRule {
    /// Index of the rule in the trained model.
    pub source: usize,
    pub priority: f64,
    pub conditions: Vec<Condition>,
    pub class_probs: Vec<f64>,
    /// Training samples per class for which this rule fired first.
    pub class_counts: Vec<usize>,
}

impl HardRule {
    pub fn fires(&self, x: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.holds(x[c.feature]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultRule {
    pub class_probs: Vec<f64>,
    pub class_counts: Vec<usize>,
}

/// Ordered if/else-if/else classifier over original feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardRuleList {
    pub format: String,
    pub label: String,
    pub classes: Vec<String>,
    pub features: Vec<FeatureMeta>,
    pub rules: Vec<HardRule>,
    pub default_rule: DefaultRule,
}

/// Outcome of [`hard_predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct HardPrediction {
    pub class: usize,
    pub class_probs: Vec<f64>,
    /// Position of the fired rule; `rules.len()` means the default rule.
    pub rule: usize,
}

impl HardRuleList {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Column layout expected of inputs to this list.
    pub fn schema(&self) -> Schema {
        Schema { label: self.label.clone(), classes: self.classes.clone(), features: self.features.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_format(&value, RULELIST_FORMAT)?;
        let rl: HardRuleList = serde_json::from_value(value)?;
        rl.validate()?;
        Ok(rl)
    }

    fn validate(&self) -> Result<()> {
        let l = self.classes.len();
        let d = self.features.len();
        let probs = self.rules.iter().map(|r| &r.class_probs).chain([&self.default_rule.class_probs]);
        for p in probs {
            if p.len() != l {
                return Err(invalid("rule consequent does not match the class count"));
            }
        }
        if self.rules.iter().flat_map(|r| &r.conditions).any(|c| c.feature >= d) {
            return Err(invalid("condition refers to an unknown feature"));
        }
        Ok(())
    }
}

pub(crate) fn check_format(value: &serde_json::Value, expected: &str) -> Result<()> {
    let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("<missing>");
    if found != expected {
        return Err(Error::Version { found: found.to_string(), expected: expected.to_string() });
    }
    Ok(())
}

/// Interval of one predicate after pruning, in scaled units.
enum Pruned {
    Keep(Option<f64>, Option<f64>),
    Vacuous,
    Unsatisfiable,
}

fn prune(meta: &FeatureMeta, alpha: f64, beta: f64, observed: (f64, f64)) -> Pruned {
    // inverted, or disjoint from every observed value
    if alpha > beta || beta < observed.0 || alpha > observed.1 {
        return Pruned::Unsatisfiable;
    }
    let lower = (alpha > observed.0).then_some(alpha);
    let upper = (beta < observed.1).then_some(beta);
    match (&meta.kind, lower, upper) {
        (_, None, None) => Pruned::Vacuous,
        // no 0/1 value lies strictly between the bounds
        (FeatureKind::OneHot { .. }, Some(a), Some(b)) if a > 0.0 && b < 1.0 => Pruned::Unsatisfiable,
        _ => Pruned::Keep(lower, upper),
    }
}

/// Distance outside a bound at which a single violated predicate pulls the
/// antecedent below 1/2, with every other predicate of the rule satisfied.
///
/// The antecedent drops below 1/2 once the predicate falls under
/// `p* = (1 + eta) / (1 + S / w) - eta`; outside the upper bound the predicate
/// is about `1 / (1 + exp(d / t))`, so the crossing sits at
/// `d = t ln(1 / p* - 1)`. `None` means even a zero predicate leaves the
/// antecedent at or above 1/2, which happens when `w <= epsilon`.
pub(crate) fn decision_margin(weight: f64, weight_sum: f64, epsilon: f64, temp: f64) -> Option<f64> {
    let eta = epsilon / weight_sum;
    let p_star = (1.0 + eta) / (1.0 + weight_sum / weight) - eta;
    (p_star > 0.0).then(|| temp * (1.0 / p_star - 1.0).ln())
}

/// Converts trained parameters into a crisp rule list.
///
/// A predicate is kept when its effective weight reaches `weight_threshold`
/// and its interval cuts into the observed range of the feature. Each bound is
/// moved outward by [`decision_margin`] at the final temperature, so values
/// the soft rule still treats as inside stay inside. Rules with an
/// inverted interval, or one outside the observed range, cannot fire on the
/// training data and are dropped. A rule left without
/// conditions always fires, so it takes over the default consequent and the
/// rules below it are discarded as unreachable.
pub fn extract(params: &ModelParams, data: &Dataset, weight_threshold: f64) -> Result<HardRuleList> {
    let dims = params.dims();
    if data.n_features() != dims.features {
        return Err(invalid(format!(
            "dataset has {} features, model expects {}",
            data.n_features(),
            dims.features
        )));
    }
    let observed = data.observed_ranges();
    let metas = &data.schema.features;
    let mut order: Vec<usize> = (0..dims.learned()).collect();
    // stable sort keeps lower indices first on ties
    order.sort_by(|&a, &b| params.priority(b).total_cmp(&params.priority(a)));

    let mut rules = Vec::new();
    let mut default_logits = params.consequent(dims.learned()).to_vec();
    let mut unsatisfiable = 0;
    for &j in &order {
        let mut conditions = Vec::new();
        let mut satisfiable = true;
        let weights = params.weights(j);
        let weight_sum: f64 = weights.iter().sum();
        for i in 0..dims.features {
            if weights[i] < weight_threshold {
                continue;
            }
            let Some(margin) = decision_margin(weights[i], weight_sum, params.epsilon, params.pred_temp) else {
                continue;
            };
            match prune(&metas[i], params.alpha(j)[i] - margin, params.beta(j)[i] + margin, observed[i]) {
                Pruned::Vacuous => {}
                Pruned::Unsatisfiable => satisfiable = false,
                Pruned::Keep(lo, hi) => conditions.push(Condition {
                    feature: i,
                    lower: lo.map(|v| metas[i].unscale(v)),
                    upper: hi.map(|v| metas[i].unscale(v)),
                }),
            }
        }
        if !satisfiable {
            log::warn!("rule {j} cannot fire on the training data; dropped");
            unsatisfiable += 1;
            continue;
        }
        if conditions.is_empty() {
            log::warn!("rule {j} has no effective conditions; it replaces the default rule");
            default_logits = params.consequent(j).to_vec();
            break;
        }
        rules.push(HardRule {
            source: j,
            priority: params.priority(j),
            conditions,
            class_probs: softmax(params.consequent(j)),
            class_counts: Vec::new(),
        });
    }
    if dims.learned() > 0 && unsatisfiable == dims.learned() {
        return Err(Error::DegenerateModel("no rule can fire on the training data".into()));
    }

    let mut rl = HardRuleList {
        format: RULELIST_FORMAT.to_string(),
        label: data.schema.label.clone(),
        classes: data.schema.classes.clone(),
        features: metas.clone(),
        rules,
        default_rule: DefaultRule { class_probs: softmax(&default_logits), class_counts: Vec::new() },
    };
    attach_class_counts(&mut rl, data);
    Ok(rl)
}

fn attach_class_counts(rl: &mut HardRuleList, data: &Dataset) {
    let l = rl.classes.len();
    let mut counts = vec![vec![0usize; l]; rl.rules.len() + 1];
    for i in 0..data.n_rows() {
        let fired = first_firing(rl, &data.raw_row(i));
        counts[fired][data.labels[i]] += 1;
    }
    rl.default_rule.class_counts = counts.pop().unwrap_or_default();
    for (r, c) in rl.rules.iter_mut().zip(counts) {
        r.class_counts = c;
    }
}

fn first_firing(rl: &HardRuleList, x: &[f64]) -> usize {
    rl.rules.iter().position(|r| r.fires(x)).unwrap_or(rl.rules.len())
}

/// Applies the rule list to an original-unit feature vector.
pub fn hard_predict(rl: &HardRuleList, x: &[f64]) -> Result<HardPrediction> {
    if x.len() != rl.n_features() {
        return Err(invalid(format!("sample has {} features, rule list expects {}", x.len(), rl.n_features())));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(invalid("sample contains NaN"));
    }
    let rule = first_firing(rl, x);
    let class_probs = rl.rules.get(rule).map_or(&rl.default_rule.class_probs, |r| &r.class_probs).clone();
    Ok(HardPrediction { class: argmax(&class_probs), class_probs, rule })
}

/// Fraction of `data` rows where the rule list predicts the same class as the
/// noise-free soft model at its current temperatures.
pub fn fidelity(params: &ModelParams, rl: &HardRuleList, data: &Dataset) -> Result<f64> {
    if data.n_rows() == 0 {
        return Err(invalid("fidelity of an empty dataset"));
    }
    let zeros = vec![0.0; params.dims().rules];
    let mut agree = 0;
    for i in 0..data.n_rows() {
        let soft = params.forward_unchecked(data.row(i), &zeros).predicted_class();
        if hard_predict(rl, &data.raw_row(i))?.class == soft {
            agree += 1;
        }
    }
    Ok(agree as f64 / data.n_rows() as f64)
}

fn format_condition(meta: &FeatureMeta, c: &Condition) -> String {
    match &meta.kind {
        FeatureKind::OneHot { source, value } => {
            if c.lower.is_some() {
                format!("{source} = {value}")
            } else {
                format!("{source} != {value}")
            }
        }
        FeatureKind::Numeric { .. } => match (c.lower, c.upper) {
            (Some(a), Some(b)) => format!("{a:.2} ≤ {} ≤ {b:.2}", meta.name),
            (Some(a), None) => format!("{} ≥ {a:.2}", meta.name),
            (None, Some(b)) => format!("{} ≤ {b:.2}", meta.name),
            (None, None) => format!("{} is any value", meta.name),
        },
    }
}

fn format_consequent(rl: &HardRuleList, probs: &[f64]) -> String {
    // binary lists report the second class, as in "P(disease = present)"
    let class = if probs.len() == 2 { 1 } else { argmax(probs) };
    format!("P({} = {}) = {:.0}%", rl.label, rl.classes[class], 100.0 * probs[class])
}

/// Renders the list as `if ... then ...` / `else if ...` / `else ...` lines.
pub fn render_text(rl: &HardRuleList) -> String {
    let mut out = String::new();
    for (i, rule) in rl.rules.iter().enumerate() {
        let keyword = if i == 0 { "if" } else { "else if" };
        let conds: Vec<String> = rule
            .conditions
            .iter()
            .map(|c| format_condition(&rl.features[c.feature], c))
            .collect();
        let _ = writeln!(out, "{keyword} {}", conds.join(" ∧ "));
        let _ = writeln!(out, "    then {}", format_consequent(rl, &rule.class_probs));
    }
    if rl.rules.is_empty() {
        let _ = writeln!(out, "always {}", format_consequent(rl, &rl.default_rule.class_probs));
    } else {
        let _ = writeln!(out, "else {}", format_consequent(rl, &rl.default_rule.class_probs));
    }
    out
}
