//! Classification metrics and rule-list statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::extraction::{hard_predict, HardRuleList};

fn check_labels(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.is_empty() {
        return Err(invalid("metrics of an empty label vector"));
    }
    if y_true.len() != y_pred.len() {
        return Err(invalid(format!("{} true labels but {} predictions", y_true.len(), y_pred.len())));
    }
    Ok(())
}

/// Square confusion matrix indexed `[true][predicted]`.
pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_labels(y_true, y_pred)?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(invalid(format!("label {} out of range for {n_classes} classes", t.max(p))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class F1 averaged with true-class frequencies as weights. A class
/// whose precision and recall are both zero scores 0.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_labels(y_true, y_pred)?;
    let l = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
    let m = confusion(y_true, y_pred, l)?;
    let n = y_true.len() as f64;
    let mut total = 0.0;
    for c in 0..l {
        let tp = m[c][c] as f64;
        let support: usize = m[c].iter().sum();
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        let denom = (support + predicted) as f64;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        total += f1 * support as f64 / n;
    }
    Ok(total)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_labels(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Rule-length histogram and per-rule hard coverage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleStats {
    /// Number of non-default rules with a given condition count.
    pub length_histogram: BTreeMap<usize, usize>,
    /// Fraction of samples first fired by each rule, default rule last.
    pub coverage: Vec<f64>,
    /// Sample counts behind `coverage`.
    pub usage: Vec<usize>,
}

/// Statistics of `rl` over original-unit rows.
pub fn rule_stats(rl: &HardRuleList, rows: &[Vec<f64>]) -> Result<RuleStats> {
    let mut length_histogram = BTreeMap::new();
    for r in &rl.rules {
        *length_histogram.entry(r.conditions.len()).or_insert(0) += 1;
    }
    let mut usage = vec![0; rl.rules.len() + 1];
    for x in rows {
        usage[hard_predict(rl, x)?.rule] += 1;
    }
    let n = rows.len().max(1) as f64;
    let coverage = usage.iter().map(|&u| u as f64 / n).collect();
    Ok(RuleStats { length_histogram, coverage, usage })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub stats: RuleStats,
}

/// Applies `rl` to labelled original-unit rows and collects every metric.
pub fn evaluate(rl: &HardRuleList, rows: &[Vec<f64>], labels: &[usize]) -> Result<EvalReport> {
    let pred = rows
        .iter()
        .map(|x| hard_predict(rl, x).map(|p| p.class))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        weighted_f1: weighted_f1(labels, &pred)?,
        accuracy: accuracy(labels, &pred)?,
        confusion: confusion(labels, &pred, rl.classes.len())?,
        stats: rule_stats(rl, rows)?,
    })
}

impl EvalReport {
    /// Long-format CSV with `metric,key,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "key", "value"])?;
        w.write_record(["weighted_f1", "", &self.weighted_f1.to_string()])?;
        w.write_record(["accuracy", "", &self.accuracy.to_string()])?;
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                w.write_record(["confusion", &format!("{t}:{p}"), &c.to_string()])?;
            }
        }
        for (len, count) in &self.stats.length_histogram {
            w.write_record(["rule_length", &len.to_string(), &count.to_string()])?;
        }
        let last = self.stats.coverage.len().saturating_sub(1);
        for (j, cov) in self.stats.coverage.iter().enumerate() {
            let key = if j == last { "default".to_string() } else { j.to_string() };
            w.write_record(["coverage", &key, &cov.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_text(&self, classes: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "weighted F1  {:.4}", self.weighted_f1);
        let _ = writeln!(s, "accuracy     {:.4}", self.accuracy);
        let _ = writeln!(s, "confusion (rows true, columns predicted): {}", classes.join(", "));
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            let _ = writeln!(s, "  {}", cells.join(""));
        }
        let lengths: Vec<String> = self
            .stats
            .length_histogram
            .iter()
            .map(|(len, n)| format!("{len}:{n}"))
            .collect();
        let _ = writeln!(s, "rule lengths {}", lengths.join(" "));
        let cov: Vec<String> = self.stats.coverage.iter().map(|c| format!("{c:.3}")).collect();
        let _ = writeln!(s, "coverage     {} (last is default)", cov.join(" "));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMeta;
    use crate::extraction::{Condition, DefaultRule, HardRule, RULELIST_FORMAT};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn f1_examples() {
        assert_eq!(weighted_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_relative_eq!(weighted_f1(&[1, 1, 0, 0], &[1, 1, 1, 1]).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(weighted_f1(&[0, 0, 0, 1], &[0, 0, 0, 0]).unwrap(), 0.75 * 6.0 / 7.0, epsilon = 1e-15);
        assert!(weighted_f1(&[], &[]).is_err());
        assert!(weighted_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
    }

    fn two_condition_list() -> HardRuleList {
        HardRuleList {
            format: RULELIST_FORMAT.into(),
            label: "y".into(),
            classes: vec!["0".into(), "1".into()],
            features: vec![FeatureMeta::numeric("a", 0.0, 1.0), FeatureMeta::numeric("b", 0.0, 1.0)],
            rules: vec![
                HardRule {
                    source: 0,
                    priority: 2.0,
                    conditions: vec![
                        Condition { feature: 0, lower: Some(0.5), upper: None },
                        Condition { feature: 1, lower: None, upper: Some(0.5) },
                    ],
                    class_probs: vec![0.2, 0.8],
                    class_counts: vec![],
                },
                HardRule {
                    source: 1,
                    priority: 1.0,
                    conditions: vec![Condition { feature: 0, lower: Some(2.0), upper: None }],
                    class_probs: vec![0.9, 0.1],
                    class_counts: vec![],
                },
            ],
            default_rule: DefaultRule { class_probs: vec![0.6, 0.4], class_counts: vec![] },
        }
    }

    #[test]
    fn rule_stats_examples() {
        let rl = two_condition_list();
        let rows = vec![vec![0.9, 0.1], vec![0.9, 0.9], vec![0.1, 0.1], vec![0.7, 0.3]];
        let s = rule_stats(&rl, &rows).unwrap();
        assert_eq!(s.length_histogram, BTreeMap::from([(1, 1), (2, 1)]));
        assert_eq!(s.coverage, vec![0.5, 0.0, 0.5]);
        assert_relative_eq!(s.coverage.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn report_sums_and_csv() {
        let rl = two_condition_list();
        let rows = vec![vec![0.9, 0.1], vec![0.9, 0.9], vec![0.1, 0.1]];
        let report = evaluate(&rl, &rows, &[1, 0, 1]).unwrap();
        assert_eq!(report.confusion.iter().flatten().sum::<usize>(), 3);
        assert_eq!(report.stats.length_histogram.values().sum::<usize>(), rl.rules.len());
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let mut reader = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(&rows[0][0], "weighted_f1");
        assert!(rows.iter().any(|r| &r[0] == "coverage" && &r[1] == "default"));
    }

    fn naive_f1(t: &[usize], p: &[usize]) -> f64 {
        let mut total = 0.0;
        for c in 0..3 {
            let tp = t.iter().zip(p).filter(|(a, b)| **a == c && **b == c).count() as f64;
            let fp = t.iter().zip(p).filter(|(a, b)| **a != c && **b == c).count() as f64;
            let fne = t.iter().zip(p).filter(|(a, b)| **a == c && **b != c).count() as f64;
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
            let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            total += f1 * t.iter().filter(|&&a| a == c).count() as f64;
        }
        total / t.len() as f64
    }

    proptest! {
        #[test]
        fn metrics_match_direct_counts(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            prop_assert!((weighted_f1(&t, &p).unwrap() - naive_f1(&t, &p)).abs() < 1e-12);
            let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64;
            prop_assert_eq!(accuracy(&t, &p).unwrap(), hits / t.len() as f64);
        }
    }
}
