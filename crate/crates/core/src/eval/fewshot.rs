use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{is_na, LabeledQuery};
use super::EvalError;
use crate::datastore::normalize_text;
use crate::pipeline::FewShotSets;
use crate::prompt::{FewShotExample, IntentOutput, ParameterOutput, ValueOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FewShotTask {
    Intent,
    Parameter,
    Value,
}

/// Examples drawn from a group of `n` rows: `max(1, ceil(fraction * n))`,
/// capped at `n`.
pub fn group_sample_size(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // Guard against products like 0.02 * 150 = 3.0000000000000004.
    let k = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n)
}

fn intent_example(row: &LabeledQuery, index: usize) -> FewShotExample {
    let category = (!is_na(&row.category)).then(|| row.category.clone());
    let line = IntentOutput { intent: row.annotated_intent(), category }.answer_line();
    let mut e = FewShotExample::new(&row.query, line);
    e.source_row = Some(index);
    e
}

fn parameter_example(row: &LabeledQuery, index: usize) -> FewShotExample {
    let line =
        ParameterOutput { filter_parameter: row.filter_para.clone(), projection_parameter: row.proj_para.clone() }
            .answer_line();
    let mut e = FewShotExample::new(&row.query, line).for_category(&row.category);
    e.source_row = Some(index);
    e
}

fn value_example(row: &LabeledQuery, index: usize) -> FewShotExample {
    let line =
        ValueOutput { extracted_value: row.extr_value.clone(), predicted_value: row.pred_value.clone() }.answer_line();
    let mut e = FewShotExample::new(&row.query, line).for_category(&row.category).for_parameter(&row.filter_para);
    e.source_row = Some(index);
    e
}

/// Sample exemplars for one task. Groups are labels (intent), filter
/// parameters within `category` (parameter), or predicted values of
/// `parameter` within `category` (value).
pub fn sample_fewshot(
    dataset: &[LabeledQuery],
    task: FewShotTask,
    category: Option<&str>,
    parameter: Option<&str>,
    fraction: f64,
    seed: u64,
) -> Result<Vec<FewShotExample>, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::InvalidFraction(fraction));
    }
    let same = |a: &str, b: Option<&str>| b.is_none_or(|b| normalize_text(a) == normalize_text(b));
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in dataset.iter().enumerate() {
        let key = match task {
            FewShotTask::Intent => row.tc_label.clone(),
            FewShotTask::Parameter if row.has_parameters() && same(&row.category, category) => {
                normalize_text(&row.filter_para)
            }
            FewShotTask::Value
                if row.has_values() && same(&row.category, category) && same(&row.filter_para, parameter) =>
            {
                normalize_text(&row.pred_value)
            }
            _ => continue,
        };
        groups.entry(key).or_default().push(i);
    }
    if groups.is_empty() {
        return Err(EvalError::EmptyGroupSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for rows in groups.values() {
        let k = group_sample_size(fraction, rows.len());
        let mut picked = rand::seq::index::sample(&mut rng, rows.len(), k).into_vec();
        picked.sort_unstable();
        for p in picked {
            let i = rows[p];
            let row = &dataset[i];
            out.push(match task {
                FewShotTask::Intent => intent_example(row, i),
                FewShotTask::Parameter => parameter_example(row, i),
                FewShotTask::Value => value_example(row, i),
            });
        }
    }
    Ok(out)
}

/// Exemplar pools for every context that occurs in the dataset: one intent
/// set, one parameter set per category, one value set per (category, filter
/// parameter).
pub fn build_fewshot_sets(dataset: &[LabeledQuery], fraction: f64, seed: u64) -> Result<FewShotSets, EvalError> {
    let mut sets = FewShotSets::default();
    if dataset.is_empty() {
        return Ok(sets);
    }
    sets.intent = sample_fewshot(dataset, FewShotTask::Intent, None, None, fraction, seed)?;
    let mut categories: BTreeMap<String, &str> = BTreeMap::new();
    let mut pairs: BTreeMap<(String, String), (&str, &str)> = BTreeMap::new();
    for row in dataset.iter().filter(|r| r.has_parameters()) {
        categories.entry(normalize_text(&row.category)).or_insert(&row.category);
        if row.has_values() {
            pairs
                .entry((normalize_text(&row.category), normalize_text(&row.filter_para)))
                .or_insert((&row.category, &row.filter_para));
        }
    }
    for c in categories.values() {
        sets.parameter.extend(sample_fewshot(dataset, FewShotTask::Parameter, Some(c), None, fraction, seed)?);
    }
    for (c, p) in pairs.values() {
        sets.value.extend(sample_fewshot(dataset, FewShotTask::Value, Some(c), Some(p), fraction, seed)?);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, category: &str, filter: &str, value: &str, n: usize) -> LabeledQuery {
        LabeledQuery {
            query: format!("{label} {category} {filter} {value} #{n}"),
            tc_label: label.into(),
            category: category.into(),
            proj_para: "width".into(),
            filter_para: filter.into(),
            extr_value: value.into(),
            pred_value: value.into(),
        }
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(group_sample_size(0.02, 1), 1);
        assert_eq!(group_sample_size(0.02, 50), 1);
        assert_eq!(group_sample_size(0.02, 51), 2);
        assert_eq!(group_sample_size(0.02, 150), 3);
        assert_eq!(group_sample_size(1.0, 7), 7);
    }

    #[test]
    fn one_per_label_for_small_groups() {
        let data: Vec<_> =
            (0..11).flat_map(|l| (0..50).map(move |n| row(&format!("L{l}"), "door", "room", "x", n))).collect();
        let ex = sample_fewshot(&data, FewShotTask::Intent, None, None, 0.02, 3).unwrap();
        assert_eq!(ex.len(), 11);
    }

    #[test]
    fn parameter_groups_within_category() {
        let mut data: Vec<_> = (0..150).map(|n| row("ATT-DOOR", "door", "room", "x", n)).collect();
        data.extend((0..40).map(|n| row("ATT-WINDOW", "window", "room", "x", n)));
        let ex = sample_fewshot(&data, FewShotTask::Parameter, Some("door"), None, 0.02, 3).unwrap();
        assert_eq!(ex.len(), 3);
        assert!(ex.iter().all(|e| e.category.as_deref() == Some("door")));
        assert!(ex.iter().all(|e| e.answer_line == "A: filter_para: room; proj_para: width"));
    }

    #[test]
    fn empty_context_is_an_error() {
        let data = vec![row("ATT-DOOR", "door", "room", "x", 0)];
        assert_eq!(
            sample_fewshot(&data, FewShotTask::Value, Some("door"), Some("level"), 0.02, 1),
            Err(EvalError::EmptyGroupSet)
        );
        assert_eq!(
            sample_fewshot(&data, FewShotTask::Intent, None, None, 0.0, 1),
            Err(EvalError::InvalidFraction(0.0))
        );
    }

    #[test]
    fn seeds_are_reproducible() {
        let data: Vec<_> = (0..300).map(|n| row("ATT-DOOR", "door", "room", &format!("v{}", n % 3), n)).collect();
        let a = sample_fewshot(&data, FewShotTask::Value, Some("door"), Some("room"), 0.02, 9).unwrap();
        let b = sample_fewshot(&data, FewShotTask::Value, Some("door"), Some("room"), 0.02, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3 * 2);
    }
}
