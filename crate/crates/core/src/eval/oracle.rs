use std::collections::HashMap;

use async_trait::async_trait;

use super::dataset::{is_na, LabelMap, LabeledQuery};
use crate::datastore::normalize_text;
use crate::llm::{Backend, Completion, GenerationRequest, LlmError};
use crate::prompt::{Intent, IntentOutput, ParameterOutput, PromptComponentKind, PromptKind, ValueOutput};

/// Answers every prompt from the gold annotations of the dataset row whose
/// query appears in the prompt's user section.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    rows: HashMap<String, LabeledQuery>,
    label_map: LabelMap,
}

/// The query text in a prompt's user section.
pub fn user_query(request: &GenerationRequest) -> Option<&str> {
    let user = request.prompt.section(PromptComponentKind::User)?;
    let at = user.text.find("Q: ")?;
    Some(user.text[at + 3..].trim())
}

impl OracleBackend {
    pub fn new(dataset: &[LabeledQuery], label_map: &LabelMap) -> Self {
        let mut rows = HashMap::new();
        for r in dataset {
            rows.entry(normalize_text(&r.query)).or_insert_with(|| r.clone());
        }
        OracleBackend { rows, label_map: label_map.clone() }
    }

    pub fn row(&self, request: &GenerationRequest) -> Option<&LabeledQuery> {
        self.rows.get(&normalize_text(user_query(request)?))
    }

    pub fn answer(&self, request: &GenerationRequest) -> Result<String, LlmError> {
        let row = self.row(request).ok_or_else(|| LlmError::Parse("prompt does not contain a known query".into()))?;
        Ok(match request.prompt.kind {
            PromptKind::Intent => {
                let (intent, category) = match self.label_map.target(&row.tc_label) {
                    Some(t) => (t.intent, t.category.clone()),
                    None => (row.annotated_intent(), row.category.clone()),
                };
                let category = (intent != Intent::AskInGpt && !is_na(&category)).then_some(category);
                IntentOutput { intent, category }.answer_line()
            }
            PromptKind::Parameter => ParameterOutput {
                filter_parameter: row.filter_para.clone(),
                projection_parameter: row.proj_para.clone(),
            }
            .answer_line(),
            PromptKind::Value => {
                ValueOutput { extracted_value: row.extr_value.clone(), predicted_value: row.pred_value.clone() }
                    .answer_line()
            }
            PromptKind::Summary | PromptKind::General => "OK".to_string(),
        })
    }
}

#[async_trait]
impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        self.answer(request).map(|text| Completion { text, from_cache: false })
    }
}
