use serde::{Deserialize, Serialize};

use super::metrics::{Metrics, Tally};
use crate::prompt::PromptComposition;

/// "83.5%", or "n/a" when nothing was scored.
pub fn format_accuracy(t: Tally) -> String {
    match t.accuracy() {
        Some(a) => format!("{:.1}%", a * 100.0),
        None => "n/a".to_string(),
    }
}

pub fn metrics_table(m: &Metrics) -> String {
    let mut out = format!("{:<22}{:>8}  {}\n", "Task", "Accuracy", "Correct/Total");
    for (name, t) in m.tasks() {
        out.push_str(&format!("{:<22}{:>8}  {}/{}\n", name, format_accuracy(t), t.correct, t.total));
    }
    out
}

pub fn per_category_table(m: &Metrics) -> String {
    let mut out = format!("{:<24}{:>18}{:>18}\n", "Category", "Filter parameter", "Predicted value");
    for (cat, t) in &m.per_category {
        out.push_str(&format!(
            "{:<24}{:>18}{:>18}\n",
            cat,
            format_accuracy(t.filter_para),
            format_accuracy(t.pred_value)
        ));
    }
    out
}

pub fn ablation_table(rows: &[(PromptComposition, Metrics)]) -> String {
    const HEADS: [&str; 7] = ["TC label", "Category", "Filter", "Proj", "Pred", "Extr", "Pred/Extr"];
    let mut out = format!("{:<22}", "Composition");
    for h in HEADS {
        out.push_str(&format!("{h:>11}"));
    }
    out.push('\n');
    for (c, m) in rows {
        out.push_str(&format!("{:<22}", c.label()));
        for (_, t) in m.tasks() {
            out.push_str(&format!("{:>11}", format_accuracy(t)));
        }
        out.push('\n');
    }
    out
}

/// Confusion matrix as CSV: one row per gold label, one column per
/// predicted label.
pub fn confusion_csv(m: &Metrics) -> String {
    let labels = m.confusion_labels();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["gold\\predicted".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).expect("write to memory");
    for gold in m.confusion.keys() {
        let mut rec = vec![gold.clone()];
        rec.extend(labels.iter().map(|p| m.confusion_count(gold, p).to_string()));
        w.write_record(&rec).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub tc_label: Option<f64>,
    pub category: Option<f64>,
    pub filter_para: Option<f64>,
    pub proj_para: Option<f64>,
    pub pred_value: Option<f64>,
    pub extr_value: Option<f64>,
    pub union: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: AccuracyReport,
    pub metrics: Metrics,
}

impl MetricsReport {
    pub fn new(m: &Metrics) -> Self {
        MetricsReport {
            accuracy: AccuracyReport {
                tc_label: m.acc_tc_label(),
                category: m.acc_category(),
                filter_para: m.acc_filter_para(),
                proj_para: m.acc_proj_para(),
                pred_value: m.acc_pred_value(),
                extr_value: m.acc_extr_value(),
                union: m.acc_union(),
            },
            metrics: m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub composition: PromptComposition,
    pub label: String,
    #[serde(flatten)]
    pub report: MetricsReport,
}

pub fn metrics_json(m: &Metrics) -> String {
    serde_json::to_string_pretty(&MetricsReport::new(m)).expect("metrics serialize")
}

pub fn ablation_json(rows: &[(PromptComposition, Metrics)]) -> String {
    let rows: Vec<AblationRow> = rows
        .iter()
        .map(|(c, m)| AblationRow { composition: c.clone(), label: c.label(), report: MetricsReport::new(m) })
        .collect();
    serde_json::to_string_pretty(&rows).expect("ablation serialize")
}
