use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Predicted label for rows whose intent answer did not parse.
pub const UNPARSED: &str = "(unparsed)";
/// Predicted label for parsed answers that match no label.
pub const UNMAPPED: &str = "(unmapped)";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn record(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }

    /// `None` when nothing was scored.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub filter_para: Tally,
    pub pred_value: Tally,
}

/// Scores for one dataset row. `None` means the task did not run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub row: usize,
    pub gold_label: String,
    pub predicted_label: String,
    pub category: String,
    pub tc_label: bool,
    pub category_correct: bool,
    pub filter_para: Option<bool>,
    pub proj_para: Option<bool>,
    pub pred_value: Option<bool>,
    pub extr_value: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: usize,
    pub tc_label: Tally,
    pub category: Tally,
    pub filter_para: Tally,
    pub proj_para: Tally,
    pub pred_value: Tally,
    pub extr_value: Tally,
    /// Rows where either the predicted or the extracted value was right.
    pub union: Tally,
    /// gold label -> predicted label -> count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    /// Keyed by normalized gold category.
    pub per_category: BTreeMap<String, CategoryTally>,
}

impl Metrics {
    /// Aggregate row outcomes. Order does not matter.
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a RowOutcome>, labels: &[String]) -> Metrics {
        let mut m = Metrics::default();
        for l in labels {
            m.confusion.entry(l.clone()).or_default();
        }
        for o in outcomes {
            m.rows += 1;
            m.tc_label.record(o.tc_label);
            m.category.record(o.category_correct);
            *m.confusion.entry(o.gold_label.clone()).or_default().entry(o.predicted_label.clone()).or_default() += 1;
            if let Some(c) = o.filter_para {
                m.filter_para.record(c);
                m.per_category.entry(o.category.clone()).or_default().filter_para.record(c);
            }
            if let Some(c) = o.proj_para {
                m.proj_para.record(c);
            }
            if let (Some(p), Some(e)) = (o.pred_value, o.extr_value) {
                m.pred_value.record(p);
                m.extr_value.record(e);
                m.union.record(p || e);
                m.per_category.entry(o.category.clone()).or_default().pred_value.record(p);
            }
        }
        m
    }

    pub fn acc_tc_label(&self) -> Option<f64> {
        self.tc_label.accuracy()
    }

    pub fn acc_category(&self) -> Option<f64> {
        self.category.accuracy()
    }

    pub fn acc_filter_para(&self) -> Option<f64> {
        self.filter_para.accuracy()
    }

    pub fn acc_proj_para(&self) -> Option<f64> {
        self.proj_para.accuracy()
    }

    pub fn acc_pred_value(&self) -> Option<f64> {
        self.pred_value.accuracy()
    }

    pub fn acc_extr_value(&self) -> Option<f64> {
        self.extr_value.accuracy()
    }

    pub fn acc_union(&self) -> Option<f64> {
        self.union.accuracy()
    }

    /// The seven task tallies with their display names, in table order.
    pub fn tasks(&self) -> [(&'static str, Tally); 7] {
        [
            ("TC label", self.tc_label),
            ("Object category", self.category),
            ("Filter parameter", self.filter_para),
            ("Projection parameter", self.proj_para),
            ("Predicted values", self.pred_value),
            ("Extracted values", self.extr_value),
            ("Pred. / Extr. values", self.union),
        ]
    }

    /// Axis labels of the confusion matrix: every gold label, then any other
    /// predicted label.
    pub fn confusion_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.confusion.keys().cloned().collect();
        for row in self.confusion.values() {
            for p in row.keys() {
                if !labels.contains(p) {
                    labels.push(p.clone());
                }
            }
        }
        let gold = self.confusion.len();
        labels[gold..].sort();
        labels
    }

    pub fn confusion_count(&self, gold: &str, predicted: &str) -> usize {
        self.confusion.get(gold).and_then(|r| r.get(predicted)).copied().unwrap_or(0)
    }

    pub fn confusion_is_diagonal(&self) -> bool {
        self.confusion.iter().all(|(g, row)| row.iter().all(|(p, &n)| n == 0 || g == p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(row: usize, pred: Option<bool>, extr: Option<bool>) -> RowOutcome {
        RowOutcome {
            row,
            gold_label: "A".into(),
            predicted_label: "A".into(),
            category: "door".into(),
            tc_label: true,
            category_correct: true,
            filter_para: Some(true),
            proj_para: Some(true),
            pred_value: pred,
            extr_value: extr,
            errors: vec![],
        }
    }

    #[test]
    fn union_counts_either_value() {
        // pred right on rows 1-7, extr right on rows 5-9 of 10.
        let rows: Vec<_> = (1..=10).map(|i| outcome(i, Some(i <= 7), Some((5..=9).contains(&i)))).collect();
        let m = Metrics::from_outcomes(&rows, &[]);
        assert_eq!(m.acc_pred_value(), Some(0.7));
        assert_eq!(m.acc_extr_value(), Some(0.5));
        assert_eq!(m.acc_union(), Some(0.9));
    }

    #[test]
    fn empty_metrics_have_no_accuracy() {
        let m = Metrics::from_outcomes(&[], &["A".to_string()]);
        assert!(m.tasks().iter().all(|(_, t)| t.accuracy().is_none()));
        assert_eq!(m.confusion_labels(), vec!["A"]);
    }

    #[test]
    fn confusion_axes_include_stray_predictions() {
        let mut o = outcome(0, None, None);
        o.predicted_label = UNPARSED.into();
        o.tc_label = false;
        let m = Metrics::from_outcomes(&[o], &["A".to_string(), "B".to_string()]);
        assert_eq!(m.confusion_labels(), vec!["A", "B", UNPARSED]);
        assert_eq!(m.confusion_count("A", UNPARSED), 1);
        assert!(!m.confusion_is_diagonal());
    }

    #[test]
    fn json_round_trip() {
        let rows: Vec<_> = (0..4).map(|i| outcome(i, Some(i % 2 == 0), Some(true))).collect();
        let m = Metrics::from_outcomes(&rows, &["A".into()]);
        let back: Metrics = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
