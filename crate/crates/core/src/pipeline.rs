//! The query pipeline: intent, then either general question answering or
//! parameter identification, value identification, execution and summary.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datastore::{normalize_text, Projection, QueryIntent, QueryResult, Store, StructuredQuery, QUANTITY};
use crate::llm::{generate, Backend, GenerationRequest};
use crate::prompt::{
    enforce_budget, parse_intent_output, parse_parameter_output, parse_value_output, FewShotExample, Intent,
    IntentOutput, ParameterOutput, PromptComposition, PromptError, PromptLibrary, RenderedPrompt, ValueOutput,
    DEFAULT_BUDGET,
};

pub const FAILURE_TEXT: &str = "Sorry, I could not interpret that request.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Intent,
    Parameter,
    Value,
    DbExecute,
    Summary,
    General,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Intent => "intent",
            StageName::Parameter => "parameter",
            StageName::Value => "value",
            StageName::DbExecute => "db_execute",
            StageName::Summary => "summary",
            StageName::General => "general",
        }
    }

    fn failure_hint(self) -> &'static str {
        match self {
            StageName::Intent => "The query intent or building category was not recognized.",
            StageName::Parameter => "The filter or requested parameter was not recognized.",
            StageName::Value => "The filter value was not recognized.",
            StageName::DbExecute => "The database query could not be run.",
            StageName::Summary => "The retrieved results could not be summarized.",
            StageName::General => "No answer could be generated.",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parsed result of a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageOutput {
    Intent(IntentOutput),
    Parameter(ParameterOutput),
    Value(ValueOutput),
    Execute { query: StructuredQuery, result: QueryResult },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbCall {
    pub operation: String,
    pub arguments: Vec<String>,
}

impl DbCall {
    fn new(operation: &str, arguments: &[&str]) -> Self {
        DbCall { operation: operation.to_string(), arguments: arguments.iter().map(|a| a.to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub backend: String,
    pub latency: Duration,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStage {
    pub name: StageName,
    pub prompt: Option<RenderedPrompt>,
    pub raw_output: String,
    pub parsed: Option<StageOutput>,
    pub db_calls: Vec<DbCall>,
    pub duration: Duration,
    pub generation: Option<GenerationInfo>,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

impl PipelineStage {
    fn new(name: StageName) -> Self {
        PipelineStage {
            name,
            prompt: None,
            raw_output: String::new(),
            parsed: None,
            db_calls: Vec::new(),
            duration: Duration::ZERO,
            generation: None,
            notes: Vec::new(),
            error: None,
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn intent(&self) -> Option<&IntentOutput> {
        match &self.parsed {
            Some(StageOutput::Intent(o)) => Some(o),
            _ => None,
        }
    }

    pub fn parameters(&self) -> Option<&ParameterOutput> {
        match &self.parsed {
            Some(StageOutput::Parameter(o)) => Some(o),
            _ => None,
        }
    }

    pub fn value(&self) -> Option<&ValueOutput> {
        match &self.parsed {
            Some(StageOutput::Value(o)) => Some(o),
            _ => None,
        }
    }

    /// One-line description for progress displays.
    pub fn summary_line(&self) -> String {
        if let Some(e) = &self.error {
            return format!("failed: {e}");
        }
        match &self.parsed {
            Some(StageOutput::Intent(o)) => o.answer_line(),
            Some(StageOutput::Parameter(o)) => o.answer_line(),
            Some(StageOutput::Value(o)) => o.answer_line(),
            Some(StageOutput::Execute { query, result }) => format!(
                "{} {} where {} = '{}': {} record(s)",
                query.intent, query.category, query.filter_parameter, query.filter_value, result.count
            ),
            Some(StageOutput::Text { text }) => {
                let mut line: String = text.chars().take(80).collect();
                if text.chars().count() > 80 {
                    line.push_str("...");
                }
                line
            }
            None => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub retrieved_ids: Vec<String>,
    pub trace: Vec<PipelineStage>,
    pub ok: bool,
    pub failure_stage: Option<StageName>,
}

impl Answer {
    pub fn stage(&self, name: StageName) -> Option<&PipelineStage> {
        self.trace.iter().find(|s| s.name == name)
    }

    pub fn structured_query(&self) -> Option<&StructuredQuery> {
        self.trace.iter().find_map(|s| match &s.parsed {
            Some(StageOutput::Execute { query, .. }) => Some(query),
            _ => None,
        })
    }

    pub fn query_result(&self) -> Option<&QueryResult> {
        self.trace.iter().find_map(|s| match &s.parsed {
            Some(StageOutput::Execute { result, .. }) => Some(result),
            _ => None,
        })
    }

    /// Number of backend calls made.
    pub fn generation_count(&self) -> usize {
        self.trace.iter().filter(|s| s.generation.is_some()).count()
    }

    pub fn backend_time(&self) -> Duration {
        self.trace.iter().filter_map(|s| s.generation.as_ref()).map(|g| g.latency).sum()
    }

    pub fn total_time(&self) -> Duration {
        self.trace.iter().map(|s| s.duration).sum()
    }

    /// Copy with every timing zeroed, for comparing runs.
    pub fn without_timings(&self) -> Answer {
        let mut a = self.clone();
        for s in &mut a.trace {
            s.duration = Duration::ZERO;
            if let Some(g) = &mut s.generation {
                g.latency = Duration::ZERO;
            }
        }
        a
    }
}

/// Few-shot pools per prompt kind. Parameter and value examples may be tagged
/// with a category and filter parameter; prompts only show matching ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FewShotSets {
    pub intent: Vec<FewShotExample>,
    pub parameter: Vec<FewShotExample>,
    pub value: Vec<FewShotExample>,
}

impl FewShotSets {
    /// One hypothetical example per kind. They show the answer format without
    /// drawing on any annotated data.
    pub fn patterns() -> Self {
        FewShotSets {
            intent: vec![FewShotExample::new(
                "What is BIM?",
                IntentOutput { intent: Intent::AskInGpt, category: None }.answer_line(),
            )],
            parameter: vec![FewShotExample::new(
                "Who is the manufacturer of the elevator on level 3?",
                ParameterOutput { filter_parameter: "level".into(), projection_parameter: "manufacturer".into() }
                    .answer_line(),
            )],
            value: vec![FewShotExample::new(
                "Which elevators are on the third floor?",
                ValueOutput { extracted_value: "third floor".into(), predicted_value: "3".into() }.answer_line(),
            )],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub library: PromptLibrary,
    pub composition: PromptComposition,
    pub fewshot: FewShotSets,
    pub budget: usize,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_chars: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            library: PromptLibrary::default(),
            composition: PromptComposition::full(),
            fewshot: FewShotSets::patterns(),
            budget: DEFAULT_BUDGET,
            model_name: String::new(),
            temperature: 0.0,
            max_output_chars: 2048,
        }
    }
}

impl PipelineConfig {
    fn request(&self, prompt: RenderedPrompt) -> GenerationRequest {
        GenerationRequest {
            prompt,
            temperature: self.temperature,
            max_output_chars: self.max_output_chars,
            model_name: self.model_name.clone(),
        }
    }
}

/// Budget the prompt, generate, and parse. Fills in the stage fields and
/// returns the parse on success.
async fn generation_stage<T>(
    stage: &mut PipelineStage,
    prompt: Result<RenderedPrompt, PromptError>,
    backend: &dyn Backend,
    config: &PipelineConfig,
    parse: impl FnOnce(&str) -> Result<(T, StageOutput), String>,
) -> Option<T> {
    let start = Instant::now();
    let out = generation_inner(stage, prompt, backend, config, parse).await;
    stage.duration = start.elapsed();
    match out {
        Ok(v) => Some(v),
        Err(e) => {
            stage.error = Some(e);
            None
        }
    }
}

async fn generation_inner<T>(
    stage: &mut PipelineStage,
    prompt: Result<RenderedPrompt, PromptError>,
    backend: &dyn Backend,
    config: &PipelineConfig,
    parse: impl FnOnce(&str) -> Result<(T, StageOutput), String>,
) -> Result<T, String> {
    let prompt = enforce_budget(&prompt.map_err(|e| e.to_string())?, config.budget).map_err(|e| e.to_string())?;
    if prompt.truncated {
        stage.notes.push(format!("prompt truncated to {} characters", prompt.char_count));
    }
    stage.prompt = Some(prompt.clone());
    let result = generate(backend, &config.request(prompt)).await.map_err(|e| e.to_string())?;
    stage.generation =
        Some(GenerationInfo { backend: result.backend, latency: result.latency, from_cache: result.from_cache });
    stage.raw_output = result.text;
    let (value, parsed) = parse(&stage.raw_output)?;
    stage.parsed = Some(parsed);
    Ok(value)
}

pub async fn intent_stage(store: &Store, backend: &dyn Backend, config: &PipelineConfig, query: &str) -> PipelineStage {
    let mut stage = PipelineStage::new(StageName::Intent);
    stage.db_calls.push(DbCall::new("list_categories", &[]));
    let prompt = Ok(config.library.build_intent_prompt(store, &config.composition, &config.fewshot.intent, query));
    generation_stage(&mut stage, prompt, backend, config, |raw| {
        let o = parse_intent_output(raw).map_err(|e| e.to_string())?;
        Ok(((), StageOutput::Intent(o)))
    })
    .await;
    stage
}

pub async fn parameter_stage(
    store: &Store,
    backend: &dyn Backend,
    config: &PipelineConfig,
    category: &str,
    query: &str,
) -> PipelineStage {
    let mut stage = PipelineStage::new(StageName::Parameter);
    stage.db_calls.push(DbCall::new("sample_parameter_values", &[category]));
    let prompt =
        config.library.build_parameter_prompt(store, category, &config.composition, &config.fewshot.parameter, query);
    generation_stage(&mut stage, prompt, backend, config, |raw| {
        let o = parse_parameter_output(raw).map_err(|e| e.to_string())?;
        Ok(((), StageOutput::Parameter(o)))
    })
    .await;
    stage
}

pub async fn value_stage(
    store: &Store,
    backend: &dyn Backend,
    config: &PipelineConfig,
    category: &str,
    filter_parameter: &str,
    query: &str,
) -> PipelineStage {
    let mut stage = PipelineStage::new(StageName::Value);
    stage.db_calls.push(DbCall::new("distinct_values", &[category, filter_parameter]));
    let prompt = config.library.build_value_prompt(
        store,
        category,
        filter_parameter,
        &config.composition,
        &config.fewshot.value,
        query,
    );
    generation_stage(&mut stage, prompt, backend, config, |raw| {
        let o = parse_value_output(raw).map_err(|e| e.to_string())?;
        Ok(((), StageOutput::Value(o)))
    })
    .await;
    stage
}

/// Answer one query. Never fails: problems end the run with `ok = false`.
pub async fn run_query(store: &Store, backend: &dyn Backend, config: &PipelineConfig, query: &str) -> Answer {
    run_query_observed(store, backend, config, query, &mut |_| {}).await
}

/// Like [`run_query`], calling `observer` as each stage completes.
pub async fn run_query_observed(
    store: &Store,
    backend: &dyn Backend,
    config: &PipelineConfig,
    query: &str,
    observer: &mut (dyn FnMut(&PipelineStage) + Send),
) -> Answer {
    let mut run = Run { trace: Vec::new(), observer };
    match run.drive(store, backend, config, query).await {
        Ok((text, retrieved_ids)) => Answer { text, retrieved_ids, trace: run.trace, ok: true, failure_stage: None },
        Err(name) => Answer {
            text: format!("{FAILURE_TEXT} {}", name.failure_hint()),
            retrieved_ids: Vec::new(),
            trace: run.trace,
            ok: false,
            failure_stage: Some(name),
        },
    }
}

struct Run<'o> {
    trace: Vec<PipelineStage>,
    observer: &'o mut (dyn FnMut(&PipelineStage) + Send),
}

impl Run<'_> {
    /// Record a stage; an error on it ends the run.
    fn push(&mut self, stage: PipelineStage) -> Result<(), StageName> {
        (self.observer)(&stage);
        let name = stage.name;
        let failed = !stage.ok();
        if failed {
            log::debug!("{name} stage failed: {}", stage.error.as_deref().unwrap_or_default());
        }
        self.trace.push(stage);
        if failed {
            Err(name)
        } else {
            Ok(())
        }
    }

    fn fail<T>(&mut self, mut stage: PipelineStage, error: String) -> Result<T, StageName> {
        let name = stage.name;
        stage.error.get_or_insert(error);
        self.push(stage)?;
        Err(name)
    }

    async fn drive(
        &mut self,
        store: &Store,
        backend: &dyn Backend,
        config: &PipelineConfig,
        query: &str,
    ) -> Result<(String, Vec<String>), StageName> {
        let stage = intent_stage(store, backend, config, query).await;
        let intent = stage.intent().cloned();
        let Some(intent) = intent else {
            return self.fail(stage, String::new());
        };

        if intent.intent == Intent::AskInGpt {
            self.push(stage)?;
            let mut general = PipelineStage::new(StageName::General);
            let prompt = Ok(config.library.build_general_prompt(query, &config.composition));
            let text = generation_stage(&mut general, prompt, backend, config, |raw| {
                let text = raw.trim().to_string();
                Ok((text.clone(), StageOutput::Text { text }))
            })
            .await;
            self.push(general)?;
            return Ok((text.unwrap_or_default(), Vec::new()));
        }

        let category = match intent.category.as_deref() {
            None => Err("no building category identified".to_string()),
            Some(c) => store.resolve_category(c).map(str::to_string).ok_or_else(|| format!("unknown category '{c}'")),
        };
        let category = match category {
            Ok(c) => c,
            Err(e) => return self.fail(stage, e),
        };
        self.push(stage)?;

        let mut stage = parameter_stage(store, backend, config, &category, query).await;
        let Some(params) = stage.parameters().cloned() else {
            return self.fail(stage, String::new());
        };
        let (filter_parameter, projection) = match resolve_parameters(store, &category, intent.intent, &params) {
            Ok((f, p, notes)) => {
                stage.notes.extend(notes);
                (f, p)
            }
            Err(e) => return self.fail(stage, e),
        };
        self.push(stage)?;

        let mut stage = value_stage(store, backend, config, &category, &filter_parameter, query).await;
        let Some(value) = stage.value().cloned() else {
            return self.fail(stage, String::new());
        };
        let filter_value = choose_filter_value(store, &category, &filter_parameter, &value, &mut stage);
        self.push(stage)?;

        let structured = StructuredQuery {
            intent: if projection == Some(Projection::Quantity) { QueryIntent::Count } else { QueryIntent::Search },
            category: category.clone(),
            filter_parameter,
            filter_value,
            projection,
        };
        let mut stage = PipelineStage::new(StageName::DbExecute);
        let start = Instant::now();
        stage.db_calls.push(DbCall::new(
            "execute",
            &[&structured.category, &structured.filter_parameter, &structured.filter_value],
        ));
        let result = match store.execute(&structured) {
            Ok(r) => r,
            Err(e) => {
                stage.duration = start.elapsed();
                return self.fail(stage, e.to_string());
            }
        };
        let retrieved_ids = result.matched_ids.clone();
        let mut summary = PipelineStage::new(StageName::Summary);
        let prompt = Ok(config.library.build_summary_prompt(store, query, &structured, &result, &config.composition));
        stage.parsed = Some(StageOutput::Execute { query: structured, result });
        stage.duration = start.elapsed();
        self.push(stage)?;

        if let Some(ids) = retrieved_ids.get(..retrieved_ids.len().min(crate::prompt::SUMMARY_ROW_CAP)) {
            for id in ids {
                summary.db_calls.push(DbCall::new("record_by_id", &[&category, id]));
            }
        }
        let text = generation_stage(&mut summary, prompt, backend, config, |raw| {
            let text = raw.trim().to_string();
            Ok((text.clone(), StageOutput::Text { text }))
        })
        .await;
        self.push(summary)?;
        Ok((text.unwrap_or_default(), retrieved_ids))
    }
}

/// Map parsed parameter names onto the schema and reconcile the projection
/// with the classified intent.
fn resolve_parameters(
    store: &Store,
    category: &str,
    intent: Intent,
    params: &ParameterOutput,
) -> Result<(String, Option<Projection>, Vec<String>), String> {
    let schema = store.schema(category).map_err(|e| e.to_string())?;
    let filter = schema
        .resolve_parameter(&params.filter_parameter)
        .ok_or_else(|| format!("unknown filter parameter '{}'", params.filter_parameter))?
        .to_string();
    let mut notes = Vec::new();
    let asked_quantity = normalize_text(&params.projection_parameter) == QUANTITY;
    let projection = match intent {
        Intent::CountInBim => {
            if !asked_quantity {
                notes.push(format!(
                    "count intent: projection '{}' replaced by '{QUANTITY}'",
                    params.projection_parameter
                ));
            }
            Some(Projection::Quantity)
        }
        _ if asked_quantity => {
            notes.push(format!("search intent: '{QUANTITY}' projection replaced by full records"));
            None
        }
        _ => Some(Projection::Parameter(
            schema
                .resolve_parameter(&params.projection_parameter)
                .ok_or_else(|| format!("unknown projection parameter '{}'", params.projection_parameter))?
                .to_string(),
        )),
    };
    Ok((filter, projection, notes))
}

/// Prefer the predicted value; fall back to the extracted value when only it
/// matches a record.
fn choose_filter_value(
    store: &Store,
    category: &str,
    parameter: &str,
    value: &ValueOutput,
    stage: &mut PipelineStage,
) -> String {
    let mut probe = |v: &str| {
        stage.db_calls.push(DbCall::new("count_matches", &[category, parameter, v]));
        store.count_matches(category, parameter, v).unwrap_or(0) > 0
    };
    if probe(&value.predicted_value) {
        return value.predicted_value.clone();
    }
    if normalize_text(&value.extracted_value) != normalize_text(&value.predicted_value) && probe(&value.extracted_value)
    {
        stage.notes.push(format!(
            "predicted value '{}' matched no record; fell back to extracted value '{}'",
            value.predicted_value, value.extracted_value
        ));
        return value.extracted_value.clone();
    }
    stage.notes.push(format!(
        "neither predicted value '{}' nor extracted value '{}' matched a record",
        value.predicted_value, value.extracted_value
    ));
    value.predicted_value.clone()
}
