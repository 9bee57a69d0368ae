#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use bimassist_core::eval::{load_dataset, user_query, LabelMap, LabeledQuery, OracleBackend};
use bimassist_core::llm::{FnBackend, GenerationRequest, LlmError};
use bimassist_core::prompt::PromptKind;
use bimassist_core::Store;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/eval").join(name)
}

pub fn fixture() -> (Store, Vec<LabeledQuery>, LabelMap) {
    (
        Store::load_path(data("store.json")).unwrap(),
        load_dataset(data("dataset.csv")).unwrap(),
        LabelMap::load(data("labels.json")).unwrap(),
    )
}

/// Wrong answers keyed by (prompt kind, 1-based dataset row).
pub const MISTAKES: [(PromptKind, usize, &str); 11] = [
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

/// Oracle answers, except for the listed mistakes.
pub fn with_mistakes(
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
