//! Scoring the interpretation stages against annotated queries.

mod dataset;
mod fewshot;
mod metrics;
mod oracle;
pub mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::datastore::normalize_text;
use crate::llm::Backend;
use crate::pipeline::{intent_stage, parameter_stage, value_stage, FewShotSets, PipelineConfig, PipelineStage};
use crate::prompt::{PromptComposition, PromptLibrary, DEFAULT_BUDGET};
use crate::Store;

pub use dataset::{is_na, load_dataset, read_csv, read_jsonl, LabelMap, LabelTarget, LabeledQuery, COLUMNS};
pub use fewshot::{build_fewshot_sets, group_sample_size, sample_fewshot, FewShotTask};
pub use metrics::{CategoryTally, Metrics, RowOutcome, Tally, UNMAPPED, UNPARSED};
pub use oracle::{user_query, OracleBackend};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("no rows match the sampling context")]
    EmptyGroupSet,
    #[error("few-shot fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("label map: {0}")]
    LabelMap(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Zero,
    Few,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero" => Ok(Scenario::Zero),
            "few" => Ok(Scenario::Few),
            other => Err(format!("unknown scenario '{other}' (expected zero or few)")),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Zero => "zero",
            Scenario::Few => "few",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub scenario: Scenario,
    pub fewshot_fraction: f64,
    pub seed: u64,
    pub composition: PromptComposition,
    /// Only run a task on rows whose preceding task was fully correct.
    pub gated: bool,
    /// Drop rows used as few-shot examples from the test set.
    pub exclude_exemplars: bool,
    /// Rows evaluated at once.
    pub concurrency: usize,
    pub budget: usize,
    pub library: PromptLibrary,
    pub model_name: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scenario: Scenario::Few,
            fewshot_fraction: 0.02,
            seed: 0,
            composition: PromptComposition::full(),
            gated: true,
            exclude_exemplars: false,
            concurrency: 4,
            budget: DEFAULT_BUDGET,
            library: PromptLibrary::default(),
            model_name: String::new(),
        }
    }
}

impl EvalConfig {
    pub fn fewshot_sets(&self, dataset: &[LabeledQuery]) -> Result<FewShotSets, EvalError> {
        match self.scenario {
            Scenario::Zero => Ok(FewShotSets::patterns()),
            Scenario::Few => build_fewshot_sets(dataset, self.fewshot_fraction, self.seed),
        }
    }

    pub fn pipeline_config(&self, fewshot: FewShotSets) -> PipelineConfig {
        PipelineConfig {
            library: self.library.clone(),
            composition: self.composition.clone(),
            fewshot,
            budget: self.budget,
            model_name: self.model_name.clone(),
            ..PipelineConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub metrics: Metrics,
    pub outcomes: Vec<RowOutcome>,
    pub fewshot: FewShotSets,
}

pub async fn run_eval(
    store: &Store,
    backend: &dyn Backend,
    dataset: &[LabeledQuery],
    label_map: &LabelMap,
    config: &EvalConfig,
) -> Result<Metrics, EvalError> {
    run_eval_detailed(store, backend, dataset, label_map, config).await.map(|r| r.metrics)
}

pub async fn run_eval_detailed(
    store: &Store,
    backend: &dyn Backend,
    dataset: &[LabeledQuery],
    label_map: &LabelMap,
    config: &EvalConfig,
) -> Result<EvalRun, EvalError> {
    label_map.check_covers(dataset)?;
    let fewshot = config.fewshot_sets(dataset)?;
    let excluded: BTreeSet<usize> = if config.exclude_exemplars {
        fewshot.intent.iter().chain(&fewshot.parameter).chain(&fewshot.value).filter_map(|e| e.source_row).collect()
    } else {
        BTreeSet::new()
    };
    let pipeline = config.pipeline_config(fewshot.clone());
    let scorer = RowScorer { store, backend, label_map, config: &pipeline, gated: config.gated };
    let mut outcomes: Vec<RowOutcome> =
        futures::stream::iter(dataset.iter().enumerate().filter(|(i, _)| !excluded.contains(i)))
            .map(|(i, row)| scorer.score(i, row))
            .buffer_unordered(config.concurrency.max(1))
            .collect()
            .await;
    outcomes.sort_by_key(|o| o.row);
    let labels: Vec<String> = label_map.labels.keys().cloned().collect();
    let metrics = Metrics::from_outcomes(&outcomes, &labels);
    Ok(EvalRun { metrics, outcomes, fewshot })
}

/// Evaluate each of the four prompt compositions in turn.
pub async fn ablation_matrix(
    store: &Store,
    backend: &dyn Backend,
    dataset: &[LabeledQuery],
    label_map: &LabelMap,
    base: &EvalConfig,
) -> Result<Vec<(PromptComposition, Metrics)>, EvalError> {
    let mut rows = Vec::with_capacity(4);
    for composition in PromptComposition::ablation_rows() {
        let config = EvalConfig { composition: composition.clone(), ..base.clone() };
        let metrics = run_eval(store, backend, dataset, label_map, &config).await?;
        rows.push((composition, metrics));
    }
    Ok(rows)
}

fn same(a: &str, b: &str) -> bool {
    normalize_text(a) == normalize_text(b) || (is_na(a) && is_na(b))
}

struct RowScorer<'a> {
    store: &'a Store,
    backend: &'a dyn Backend,
    label_map: &'a LabelMap,
    config: &'a PipelineConfig,
    gated: bool,
}

impl RowScorer<'_> {
    fn note_error(o: &mut RowOutcome, stage: &PipelineStage) {
        if let Some(e) = &stage.error {
            log::debug!("row {}: {} stage failed: {e}", o.row, stage.name);
            o.errors.push(format!("{}: {e}", stage.name));
        }
    }

    async fn score(&self, index: usize, row: &LabeledQuery) -> RowOutcome {
        let mut o = RowOutcome {
            row: index,
            gold_label: row.tc_label.clone(),
            predicted_label: UNPARSED.to_string(),
            category: normalize_text(&row.category),
            tc_label: false,
            category_correct: false,
            filter_para: None,
            proj_para: None,
            pred_value: None,
            extr_value: None,
            errors: Vec::new(),
        };

        let stage = intent_stage(self.store, self.backend, self.config, &row.query).await;
        Self::note_error(&mut o, &stage);
        if let Some(out) = stage.intent() {
            let label = self.label_map.label_for(out.intent, out.category.as_deref()).unwrap_or(UNMAPPED);
            o.tc_label = label == row.tc_label;
            o.predicted_label = label.to_string();
            o.category_correct = same(out.category.as_deref().unwrap_or("NA"), &row.category);
        }

        if !row.has_parameters() || (self.gated && !(o.tc_label && o.category_correct)) {
            return o;
        }
        let Some(category) = self.store.resolve_category(&row.category) else {
            o.errors.push(format!("store has no category '{}'", row.category));
            o.filter_para = Some(false);
            o.proj_para = Some(false);
            if row.has_values() && !self.gated {
                o.pred_value = Some(false);
                o.extr_value = Some(false);
            }
            return o;
        };

        let stage = parameter_stage(self.store, self.backend, self.config, category, &row.query).await;
        Self::note_error(&mut o, &stage);
        let (filter_ok, proj_ok) = match stage.parameters() {
            Some(p) => (same(&p.filter_parameter, &row.filter_para), same(&p.projection_parameter, &row.proj_para)),
            None => (false, false),
        };
        o.filter_para = Some(filter_ok);
        o.proj_para = Some(proj_ok);

        if !row.has_values() || (self.gated && !(filter_ok && proj_ok)) {
            return o;
        }
        let parameter = self
            .store
            .schema(category)
            .ok()
            .and_then(|s| s.resolve_parameter(&row.filter_para))
            .unwrap_or(&row.filter_para);
        let stage = value_stage(self.store, self.backend, self.config, category, parameter, &row.query).await;
        Self::note_error(&mut o, &stage);
        let (pred_ok, extr_ok) = match stage.value() {
            Some(v) => (same(&v.predicted_value, &row.pred_value), same(&v.extracted_value, &row.extr_value)),
            None => (false, false),
        };
        o.pred_value = Some(pred_ok);
        o.extr_value = Some(extr_ok);
        o
    }
}
