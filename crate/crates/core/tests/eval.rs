use std::collections::HashMap;
use std::path::PathBuf;

use bimassist_core::eval::{
    ablation_matrix, load_dataset, run_eval, run_eval_detailed, user_query, EvalConfig, LabelMap, LabeledQuery,
    Metrics, OracleBackend, RowOutcome, Scenario, Tally, UNPARSED,
};
use bimassist_core::llm::{FnBackend, GenerationRequest, LlmError, ReplayBackend};
use bimassist_core::prompt::{PromptComponentKind, PromptComposition, PromptKind};
use bimassist_core::Store;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/eval").join(name)
}

fn fixture() -> (Store, Vec<LabeledQuery>, LabelMap) {
    (
        Store::load_path(data("store.json")).unwrap(),
        load_dataset(data("dataset.csv")).unwrap(),
        LabelMap::load(data("labels.json")).unwrap(),
    )
}

fn t(correct: usize, total: usize) -> Tally {
    Tally { correct, total }
}

const MISTAKES: [(PromptKind, usize, &str); 11] = [
    (PromptKind::Intent, 7, "A: [search in BIM] for 'door'"),
    (PromptKind::Intent, 12, "A: [search in BIM] for 'door'"),
    (PromptKind::Intent, 16, "gibberish"),
    (PromptKind::Intent, 22, "A: [search in BIM] for 'unit'"),
    (PromptKind::Parameter, 1, "A: filter_para: level; proj_para: width"),
    (PromptKind::Parameter, 14, "A: filter_para: room_id; proj_para: long_name"),
    (PromptKind::Parameter, 18, "A: filter_para: room; proj_para: quantity"),
    (PromptKind::Value, 2, "A: extr_value: '2'; pred_value: '2'"),
    (PromptKind::Value, 9, "A: extr_value: 'medium classrooms'; pred_value: 'medium classrooms'"),
    (PromptKind::Value, 15, "A: extr_value: 'second floor'; pred_value: '02'"),
    (PromptKind::Value, 24, "A: extr_value: 'model'; pred_value: 'rinker'"),
];

/// Oracle answers, except for the listed (prompt kind, 1-based row) pairs.
fn with_mistakes(
    dataset: &[LabeledQuery],
    labels: &LabelMap,
    mistakes: &[(PromptKind, usize, &'static str)],
) -> FnBackend<impl Fn(&GenerationRequest) -> Result<String, LlmError>> {
    let oracle = OracleBackend::new(dataset, labels);
    let wrong: HashMap<(PromptKind, String), &'static str> = mistakes
        .iter()
        .filter(|(_, row, _)| *row <= dataset.len())
        .map(|(kind, row, text)| ((*kind, dataset[row - 1].query.clone()), *text))
        .collect();
    FnBackend::new("flawed", move |req: &GenerationRequest| {
        let key = (req.prompt.kind, user_query(req).unwrap_or_default().to_string());
        match wrong.get(&key) {
            Some(text) => Ok(text.to_string()),
            None => oracle.answer(req),
        }
    })
}

#[test]
fn fixture_loads() {
    let (store, dataset, labels) = fixture();
    assert_eq!(dataset.len(), 24);
    assert_eq!(store.list_categories().len(), 5);
    labels.check_covers(&dataset).unwrap();
}

#[tokio::test]
async fn oracle_scores_perfectly() {
    let (store, dataset, labels) = fixture();
    let oracle = OracleBackend::new(&dataset, &labels);
    for scenario in [Scenario::Zero, Scenario::Few] {
        let config = EvalConfig { scenario, ..EvalConfig::default() };
        let m = run_eval(&store, &oracle, &dataset, &labels, &config).await.unwrap();
        assert_eq!(m.tc_label, t(24, 24));
        assert_eq!(m.category, t(24, 24));
        assert_eq!(m.filter_para, t(21, 21));
        assert_eq!(m.proj_para, t(21, 21));
        assert_eq!(m.pred_value, t(21, 21));
        assert_eq!(m.extr_value, t(21, 21));
        assert_eq!(m.union, t(21, 21));
        assert!(m.confusion_is_diagonal());
        assert_eq!(m.confusion_count("OOD", "OOD"), 3);
    }
}

#[tokio::test]
async fn known_errors_gated() {
    let (store, dataset, labels) = fixture();
    let backend = with_mistakes(&dataset, &labels, &MISTAKES);
    let m = run_eval(&store, &backend, &dataset, &labels, &EvalConfig::default()).await.unwrap();
    assert_eq!(m.tc_label, t(20, 24));
    assert_eq!(m.category, t(21, 24));
    assert_eq!(m.filter_para, t(16, 18));
    assert_eq!(m.proj_para, t(17, 18));
    assert_eq!(m.pred_value, t(12, 15));
    assert_eq!(m.extr_value, t(13, 15));
    assert_eq!(m.union, t(14, 15));
    assert_eq!(m.confusion_count("QTY-DOOR", "ATT-DOOR"), 1);
    assert_eq!(m.confusion_count("ATT-WINDOW", "ATT-DOOR"), 1);
    assert_eq!(m.confusion_count("OOD", "ATT-UNIT"), 1);
    assert_eq!(m.confusion_count("ATT-STOREY", UNPARSED), 1);
    assert_eq!(m.per_category["door"].filter_para, t(2, 4));
    assert_eq!(m.per_category["door"].pred_value, t(2, 2));
    assert!(m.acc_union().unwrap() >= m.acc_pred_value().unwrap().max(m.acc_extr_value().unwrap()));
}

#[tokio::test]
async fn known_errors_ungated() {
    let (store, dataset, labels) = fixture();
    let backend = with_mistakes(&dataset, &labels, &MISTAKES);
    let config = EvalConfig { gated: false, ..EvalConfig::default() };
    let m = run_eval(&store, &backend, &dataset, &labels, &config).await.unwrap();
    assert_eq!(m.filter_para, t(19, 21));
    assert_eq!(m.proj_para, t(20, 21));
    assert_eq!(m.pred_value, t(18, 21));
    assert_eq!(m.extr_value, t(19, 21));
    assert_eq!(m.union, t(20, 21));
}

#[tokio::test]
async fn two_wrong_intents_of_ten() {
    let (store, dataset, labels) = fixture();
    let ten = &dataset[..10];
    // Rows 3 and 7 get wrong intents.
    let backend = with_mistakes(
        ten,
        &labels,
        &[
            (PromptKind::Intent, 3, "A: [count in BIM] for 'window'"),
            (PromptKind::Intent, 7, "A: [search in BIM] for 'door'"),
        ],
    );
    let m = run_eval(&store, &backend, ten, &labels, &EvalConfig::default()).await.unwrap();
    assert_eq!(m.tc_label, t(8, 10));
    assert_eq!(m.filter_para.total, 8);
}

#[tokio::test]
async fn metrics_match_brute_force_recount() {
    let (store, dataset, labels) = fixture();
    let backend = with_mistakes(&dataset, &labels, &MISTAKES);
    let run = run_eval_detailed(&store, &backend, &dataset, &labels, &EvalConfig::default()).await.unwrap();
    let count = |f: &dyn Fn(&RowOutcome) -> Option<bool>| {
        let scored: Vec<bool> = run.outcomes.iter().filter_map(f).collect();
        t(scored.iter().filter(|c| **c).count(), scored.len())
    };
    assert_eq!(run.metrics.tc_label, count(&|o| Some(o.tc_label)));
    assert_eq!(run.metrics.filter_para, count(&|o| o.filter_para));
    assert_eq!(run.metrics.pred_value, count(&|o| o.pred_value));
    assert_eq!(run.metrics.union, count(&|o| o.pred_value.zip(o.extr_value).map(|(p, e)| p || e)));
    // Gated denominators shrink monotonically.
    let m = &run.metrics;
    assert!(m.pred_value.total <= m.filter_para.total && m.filter_para.total <= m.tc_label.total);
    // Aggregation ignores order.
    let mut reversed = run.outcomes.clone();
    reversed.reverse();
    let labels_axis: Vec<String> = labels.labels.keys().cloned().collect();
    assert_eq!(Metrics::from_outcomes(&reversed, &labels_axis), run.metrics);
}

#[tokio::test]
async fn exemplars_can_be_excluded() {
    let (store, dataset, labels) = fixture();
    let oracle = OracleBackend::new(&dataset, &labels);
    let config = EvalConfig { exclude_exemplars: true, ..EvalConfig::default() };
    let run = run_eval_detailed(&store, &oracle, &dataset, &labels, &config).await.unwrap();
    let used: std::collections::BTreeSet<usize> = run
        .fewshot
        .intent
        .iter()
        .chain(&run.fewshot.parameter)
        .chain(&run.fewshot.value)
        .filter_map(|e| e.source_row)
        .collect();
    assert!(!used.is_empty());
    assert_eq!(run.metrics.rows, 24 - used.len());
    assert!(run.outcomes.iter().all(|o| !used.contains(&o.row)));
}

#[tokio::test]
async fn ablation_rows_in_order_and_task_sensitivity() {
    let (store, dataset, labels) = fixture();
    let oracle = OracleBackend::new(&dataset, &labels);
    let rows = ablation_matrix(&store, &oracle, &dataset, &labels, &EvalConfig::default()).await.unwrap();
    let names: Vec<String> = rows.iter().map(|(c, _)| c.label()).collect();
    assert_eq!(names, ["SYS + DB + TASK + FEW", "DB + TASK + FEW", "TASK + FEW", "FEW"]);
    assert!(rows.iter().all(|(_, m)| m.acc_tc_label() == Some(1.0)));

    let sensitive = FnBackend::new("task-sensitive", move |req: &GenerationRequest| {
        if req.prompt.section(PromptComponentKind::TaskInstruction).is_none() {
            return Ok("I am not sure.".into());
        }
        oracle.answer(req)
    });
    let rows = ablation_matrix(&store, &sensitive, &dataset, &labels, &EvalConfig::default()).await.unwrap();
    for (c, m) in &rows {
        let expected = if *c == PromptComposition::new([PromptComponentKind::FewShotExamples]) { 0.0 } else { 1.0 };
        assert_eq!(m.acc_tc_label(), Some(expected), "{}", c.label());
    }
}

#[tokio::test]
async fn replay_is_deterministic() {
    let (store, dataset, labels) = fixture();
    let oracle = OracleBackend::new(&dataset, &labels);
    let recorder = bimassist_core::llm::RecordingBackend::new(oracle);
    let config = EvalConfig { seed: 7, ..EvalConfig::default() };
    let live = run_eval(&store, &recorder, &dataset, &labels, &config).await.unwrap();
    let replay = ReplayBackend::new(&recorder.cassette());
    let a = run_eval(&store, &replay, &dataset, &labels, &config).await.unwrap();
    let b = run_eval(&store, &replay, &dataset, &labels, &config).await.unwrap();
    assert_eq!(a, live);
    assert_eq!(a, b);
}
