//! Ground-truth rule-list data generator for controlled experiments.
//!
//! Each of the `k` rules tests `m` random features against intervals of width
//! `s^(1/m)`, so a rule covers a fraction `s` of uniform data on expectation.
//! Rules get distinct priorities and a random binary consequent; samples no
//! rule covers receive a fair-coin label.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMeta, Schema};
use crate::error::{invalid, Result};
use crate::extraction::{hard_predict, Condition, DefaultRule, HardRule, HardRuleList, RULELIST_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Feature count.
    pub d: usize,
    /// Sample count.
    pub n: usize,
    /// Expected coverage of each rule.
    pub s: f64,
    /// Rule count.
    pub k: usize,
    /// Predicates per rule.
    pub m: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.k == 0 || self.m == 0 {
            return Err(invalid("d, n, k and m must all be positive"));
        }
        if self.m > self.d {
            return Err(invalid(format!("m = {} exceeds d = {}", self.m, self.d)));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(invalid(format!("s must lie in (0, 1), got {}", self.s)));
        }
        Ok(())
    }

    /// Interval width `s^(1/m)` of every generated predicate.
    pub fn width(&self) -> f64 {
        self.s.powf(1.0 / self.m as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub ground_truth: HardRuleList,
}

/// Draws a dataset and the rule list that labels it.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let SyntheticSpec { d, n, k, m, .. } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.width();

    let features: Vec<f64> = (0..n * d).map(|_| rng.gen()).collect();
    let mut priorities: Vec<usize> = (1..=k).collect();
    priorities.shuffle(&mut rng);
    let mut rules: Vec<HardRule> = (0..k)
        .map(|j| {
            let mut chosen = index::sample(&mut rng, d, m).into_vec();
            chosen.sort_unstable();
            let conditions = chosen
                .into_iter()
                .map(|feature| {
                    let lower = rng.gen_range(0.0..1.0 - r);
                    Condition { feature, lower: Some(lower), upper: Some(lower + r) }
                })
                .collect();
            let class = usize::from(rng.gen_bool(0.5));
            let mut class_probs = vec![0.0; 2];
            class_probs[class] = 1.0;
            HardRule {
                source: j,
                priority: priorities[j] as f64,
                conditions,
                class_probs,
                class_counts: vec![0; 2],
            }
        })
        .collect();
    rules.sort_by(|a, b| b.priority.total_cmp(&a.priority));

    let schema = Schema {
        label: "y".into(),
        classes: vec!["0".into(), "1".into()],
        features: (0..d).map(|i| FeatureMeta::numeric(format!("x{i}"), 0.0, 1.0)).collect(),
    };
    let mut truth = HardRuleList {
        format: RULELIST_FORMAT.into(),
        label: schema.label.clone(),
        classes: schema.classes.clone(),
        features: schema.features.clone(),
        rules,
        default_rule: DefaultRule { class_probs: vec![0.5, 0.5], class_counts: vec![0; 2] },
    };

    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let x = &features[i * d..(i + 1) * d];
        let fired = hard_predict(&truth, x)?;
        let y = if fired.rule < truth.rules.len() {
            fired.class
        } else {
            usize::from(rng.gen_bool(0.5))
        };
        match truth.rules.get_mut(fired.rule) {
            Some(rule) => rule.class_counts[y] += 1,
            None => truth.default_rule.class_counts[y] += 1,
        }
        labels.push(y);
    }
    let positives = labels.iter().sum::<usize>();
    log::info!("synthetic data: {positives} of {n} samples in class 1");
    Ok(SyntheticData { dataset: Dataset::new(schema, features, labels)?, ground_truth: truth })
}

/// The three parameter sweeps: rule complexity, list length and sample size.
pub fn sweep_configs() -> Vec<SyntheticSpec> {
    let base = SyntheticSpec { d: 20, n: 5000, s: 0.1, k: 2, m: 2, seed: 0 };
    let complexity = [2, 4, 6, 8].map(|m| SyntheticSpec { m, ..base });
    let length = [2, 4, 6, 8, 12].map(|k| SyntheticSpec { k, ..base });
    let samples = [100, 500, 1000, 5000, 10000].map(|n| SyntheticSpec { n, ..base });
    complexity.into_iter().chain(length).chain(samples).collect()
}
