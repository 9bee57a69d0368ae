//! Dynamic five-component prompt template and the prompt library built on it.
//!
//! Every prompt is assembled from up to five sections in a fixed order:
//! system, relevant database information, task instruction, few-shot
//! examples, and the user query. Later sections carry the more specific
//! context. A [`PromptComposition`] switches sections off for ablation runs.

mod budget;
mod catalog;
mod grammar;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datastore::{
    normalize, normalize_text, Projection, QueryResult, Scalar, Store, StoreError, StructuredQuery,
};

pub use budget::enforce_budget;
pub use catalog::{Catalog, CatalogError};
pub use grammar::{
    parse_intent_output, parse_parameter_output, parse_value_output, GrammarError, Intent, IntentOutput,
    ParameterOutput, ValueOutput,
};

/// Default prompt budget in characters.
pub const DEFAULT_BUDGET: usize = 24_000;
/// Maximum number of full rows placed into a summary prompt.
pub const SUMMARY_ROW_CAP: usize = 20;
/// Number of example values sampled per parameter.
pub const DEFAULT_SAMPLE_K: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("prompt needs at least {required} characters but the budget is {budget}")]
    BudgetInfeasible { required: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptComponentKind {
    System,
    RelevantDbInfo,
    TaskInstruction,
    FewShotExamples,
    User,
}

impl PromptComponentKind {
    pub const ALL: [PromptComponentKind; 5] = [
        PromptComponentKind::System,
        PromptComponentKind::RelevantDbInfo,
        PromptComponentKind::TaskInstruction,
        PromptComponentKind::FewShotExamples,
        PromptComponentKind::User,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            PromptComponentKind::System => "SYS",
            PromptComponentKind::RelevantDbInfo => "DB",
            PromptComponentKind::TaskInstruction => "TASK",
            PromptComponentKind::FewShotExamples => "FEW",
            PromptComponentKind::User => "USER",
        }
    }
}

/// The set of enabled components. The user component is always enabled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<PromptComponentKind>", into = "Vec<PromptComponentKind>")]
pub struct PromptComposition {
    enabled: BTreeSet<PromptComponentKind>,
}

impl PromptComposition {
    pub fn new(kinds: impl IntoIterator<Item = PromptComponentKind>) -> Self {
        let mut enabled: BTreeSet<_> = kinds.into_iter().collect();
        enabled.insert(PromptComponentKind::User);
        PromptComposition { enabled }
    }

    pub fn full() -> Self {
        PromptComposition::new(PromptComponentKind::ALL)
    }

    /// The four ablation rows in table order: SYS+DB+TASK+FEW, DB+TASK+FEW,
    /// TASK+FEW, FEW.
    pub fn ablation_rows() -> [PromptComposition; 4] {
        use PromptComponentKind::*;
        [
            PromptComposition::full(),
            PromptComposition::new([RelevantDbInfo, TaskInstruction, FewShotExamples]),
            PromptComposition::new([TaskInstruction, FewShotExamples]),
            PromptComposition::new([FewShotExamples]),
        ]
    }

    pub fn is_enabled(&self, kind: PromptComponentKind) -> bool {
        self.enabled.contains(&kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = PromptComponentKind> + '_ {
        self.enabled.iter().copied()
    }

    /// Row label such as `SYS + DB + TASK + FEW`.
    pub fn label(&self) -> String {
        self.enabled
            .iter()
            .filter(|k| **k != PromptComponentKind::User)
            .map(|k| k.short_name())
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl Default for PromptComposition {
    fn default() -> Self {
        PromptComposition::full()
    }
}

impl fmt::Display for PromptComposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = self.label();
        f.write_str(if label.is_empty() { "USER" } else { &label })
    }
}

impl From<PromptComposition> for Vec<PromptComponentKind> {
    fn from(c: PromptComposition) -> Self {
        c.enabled.into_iter().collect()
    }
}

impl TryFrom<Vec<PromptComponentKind>> for PromptComposition {
    type Error = String;
    fn try_from(v: Vec<PromptComponentKind>) -> Result<Self, Self::Error> {
        Ok(PromptComposition::new(v))
    }
}

/// Parses a comma list of `SYS`, `DB`, `TASK`, `FEW` (and optionally `USER`).
impl FromStr for PromptComposition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut kinds = Vec::new();
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            let kind = PromptComponentKind::ALL
                .into_iter()
                .find(|k| k.short_name().eq_ignore_ascii_case(part))
                .ok_or_else(|| format!("unknown prompt component '{part}' (expected SYS, DB, TASK, FEW)"))?;
            kinds.push(kind);
        }
        Ok(PromptComposition::new(kinds))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Intent,
    Parameter,
    Value,
    Summary,
    General,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] =
        [PromptKind::Intent, PromptKind::Parameter, PromptKind::Value, PromptKind::Summary, PromptKind::General];

    pub(crate) fn table(self) -> &'static str {
        match self {
            PromptKind::Intent => "intent",
            PromptKind::Parameter => "parameter",
            PromptKind::Value => "value",
            PromptKind::Summary => "summary",
            PromptKind::General => "general",
        }
    }
}

/// One rendered component. List-shaped components keep their items so the
/// budget enforcer can drop them individually.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub kind: PromptComponentKind,
    pub text: String,
    #[serde(skip)]
    lead: String,
    #[serde(skip)]
    pub(crate) items: Vec<String>,
    #[serde(skip)]
    tail: String,
}

impl Section {
    pub fn new(kind: PromptComponentKind, text: String) -> Self {
        Section { kind, lead: text.clone(), text, items: Vec::new(), tail: String::new() }
    }

    pub fn with_items(kind: PromptComponentKind, lead: String, items: Vec<String>, tail: String) -> Self {
        let mut s = Section { kind, text: String::new(), lead, items, tail };
        s.rerender();
        s
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    fn rerender(&mut self) {
        let mut text = self.lead.clone();
        for item in &self.items {
            text.push('\n');
            text.push_str(item);
        }
        if !self.tail.is_empty() {
            text.push('\n');
            text.push_str(&self.tail);
        }
        self.text = text;
    }

    fn fixed_chars(&self) -> usize {
        let tail = if self.tail.is_empty() { 0 } else { self.tail.chars().count() + 1 };
        self.lead.chars().count() + tail
    }
}

const SECTION_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub sections: Vec<Section>,
    pub flat_text: String,
    pub char_count: usize,
    pub truncated: bool,
}

impl RenderedPrompt {
    /// Assemble sections, ordering them by component kind.
    pub fn new(kind: PromptKind, mut sections: Vec<Section>) -> Self {
        sections.sort_by_key(|s| s.kind);
        let mut p = RenderedPrompt { kind, sections, flat_text: String::new(), char_count: 0, truncated: false };
        p.refresh();
        p
    }

    fn refresh(&mut self) {
        self.flat_text = self.sections.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(SECTION_SEPARATOR);
        self.char_count = self.flat_text.chars().count();
    }

    pub fn section(&self, kind: PromptComponentKind) -> Option<&Section> {
        self.sections.iter().find(|s| s.kind == kind)
    }

    /// Length once every droppable item is removed.
    pub fn min_char_count(&self) -> usize {
        let sep = SECTION_SEPARATOR.len() * self.sections.len().saturating_sub(1);
        sep + self
            .sections
            .iter()
            .map(|s| match s.kind {
                PromptComponentKind::RelevantDbInfo | PromptComponentKind::FewShotExamples => s.fixed_chars(),
                _ => s.text.chars().count(),
            })
            .sum::<usize>()
    }

    /// System section text, if present.
    pub fn system_text(&self) -> Option<&str> {
        self.section(PromptComponentKind::System).map(|s| s.text.as_str())
    }

    /// Every section after the system section, joined in order.
    pub fn non_system_text(&self) -> String {
        self.sections
            .iter()
            .filter(|s| s.kind != PromptComponentKind::System)
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(SECTION_SEPARATOR)
    }
}

/// A demonstration pair for the few-shot component.
///
/// `category` and `filter_parameter` scope an example to the prompts that
/// concern them; untagged examples only demonstrate the output pattern and
/// are shown everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub answer_line: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_parameter: Option<String>,
    /// Dataset row the example was drawn from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_row: Option<usize>,
}

impl FewShotExample {
    pub fn new(query: impl Into<String>, answer_line: impl Into<String>) -> Self {
        FewShotExample {
            query: query.into(),
            answer_line: answer_line.into(),
            category: None,
            filter_parameter: None,
            source_row: None,
        }
    }

    pub fn for_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn for_parameter(mut self, parameter: impl Into<String>) -> Self {
        self.filter_parameter = Some(parameter.into());
        self
    }

    fn matches_category(&self, category: &str) -> bool {
        self.category.as_deref().is_none_or(|c| normalize_text(c) == normalize_text(category))
    }

    fn matches_parameter(&self, parameter: &str) -> bool {
        self.filter_parameter.as_deref().is_none_or(|p| normalize_text(p) == normalize_text(parameter))
    }
}

/// Render values as a bracketed list of quoted strings: `['a', 'b']`.
pub fn render_list<I, S>(items: I) -> String
where
    I: IntoIterator<Item = S>,
    S: fmt::Display,
{
    let parts: Vec<String> = items.into_iter().map(|s| format!("'{s}'")).collect();
    format!("[{}]", parts.join(", "))
}

/// Builds the five prompt kinds from a [`Catalog`].
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    pub catalog: Catalog,
    /// Values sampled per parameter for the parameter prompt.
    pub sample_k: usize,
    pub sample_seed: u64,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        PromptLibrary { catalog: Catalog::default(), sample_k: DEFAULT_SAMPLE_K, sample_seed: 0 }
    }
}

impl PromptLibrary {
    pub fn new(catalog: Catalog) -> Self {
        PromptLibrary { catalog, ..PromptLibrary::default() }
    }

    fn headed(&self, key: &str, body: &str) -> String {
        format!("{}\n{}", self.catalog.heading(key), body)
    }

    fn system_section(&self, kind: PromptKind) -> Section {
        Section::new(
            PromptComponentKind::System,
            format!("{} {}", self.catalog.heading("system"), self.catalog.system(kind)),
        )
    }

    fn user_section(&self, query: &str) -> Section {
        Section::new(
            PromptComponentKind::User,
            self.headed("user", &self.catalog.fill("fewshot", "user", &[("query", query)])),
        )
    }

    fn fewshot_section<'a>(&self, examples: impl Iterator<Item = &'a FewShotExample>) -> Option<Section> {
        let items: Vec<String> = examples
            .map(|e| self.catalog.fill("fewshot", "example", &[("query", &e.query), ("answer", &e.answer_line)]))
            .collect();
        (!items.is_empty()).then(|| {
            Section::with_items(
                PromptComponentKind::FewShotExamples,
                self.catalog.heading("fewshot").to_string(),
                items,
                String::new(),
            )
        })
    }

    fn assemble(
        &self,
        kind: PromptKind,
        composition: &PromptComposition,
        candidates: Vec<Option<Section>>,
    ) -> RenderedPrompt {
        let sections = candidates.into_iter().flatten().filter(|s| composition.is_enabled(s.kind)).collect();
        RenderedPrompt::new(kind, sections)
    }

    /// Classify intent and category. The task lists every intent and category;
    /// the database section lists each category's types and parameters.
    pub fn build_intent_prompt(
        &self,
        store: &Store,
        composition: &PromptComposition,
        fewshot: &[FewShotExample],
        query: &str,
    ) -> RenderedPrompt {
        let categories = store.list_categories();
        let db_items = store
            .categories()
            .map(|c| {
                self.catalog.fill(
                    "intent",
                    "db_item",
                    &[
                        ("category", &c.schema.name),
                        ("types", &render_list(&c.schema.object_types)),
                        ("parameters", &render_list(&c.schema.parameters)),
                    ],
                )
            })
            .collect();
        let db = Section::with_items(
            PromptComponentKind::RelevantDbInfo,
            self.headed("db", &self.catalog.fill("intent", "db", &[])),
            db_items,
            String::new(),
        );
        let task = Section::new(
            PromptComponentKind::TaskInstruction,
            self.headed("task", &self.catalog.fill("intent", "task", &[("categories", &render_list(&categories))])),
        );
        self.assemble(
            PromptKind::Intent,
            composition,
            vec![
                Some(self.system_section(PromptKind::Intent)),
                Some(db),
                Some(task),
                self.fewshot_section(fewshot.iter()),
                Some(self.user_section(query)),
            ],
        )
    }

    /// Identify filter and projection parameters within one category.
    pub fn build_parameter_prompt(
        &self,
        store: &Store,
        category: &str,
        composition: &PromptComposition,
        fewshot: &[FewShotExample],
        query: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        let schema = store.schema(category)?;
        let mut db_items = Vec::with_capacity(schema.parameters.len());
        for p in &schema.parameters {
            let values = store.sample_parameter_values(category, p, self.sample_k, self.sample_seed)?;
            db_items.push(self.catalog.fill(
                "parameter",
                "db_item",
                &[("parameter", p), ("values", &render_list(&values))],
            ));
        }
        let db = Section::with_items(
            PromptComponentKind::RelevantDbInfo,
            self.headed("db", &self.catalog.fill("parameter", "db", &[("category", category)])),
            db_items,
            String::new(),
        );
        let mut choices: Vec<&str> = schema.parameters.iter().map(String::as_str).collect();
        choices.push(crate::datastore::QUANTITY);
        let task = Section::new(
            PromptComponentKind::TaskInstruction,
            self.headed(
                "task",
                &self.catalog.fill(
                    "parameter",
                    "task",
                    &[("category", category), ("parameters", &render_list(choices))],
                ),
            ),
        );
        Ok(self.assemble(
            PromptKind::Parameter,
            composition,
            vec![
                Some(self.system_section(PromptKind::Parameter)),
                Some(db),
                Some(task),
                self.fewshot_section(fewshot.iter().filter(|e| e.matches_category(category))),
                Some(self.user_section(query)),
            ],
        ))
    }

    /// Extract and predict the filter value. The task embeds every distinct
    /// value of the parameter; the database section shows values the same
    /// parameter takes in other categories, minus any that also occur here.
    pub fn build_value_prompt(
        &self,
        store: &Store,
        category: &str,
        filter_parameter: &str,
        composition: &PromptComposition,
        fewshot: &[FewShotExample],
        query: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        let values = store.distinct_values(category, filter_parameter)?;
        let own: HashSet<String> = values.iter().map(normalize).collect();
        let value_list =
            if values.is_empty() { self.catalog.fill("value", "empty_list", &[]) } else { render_list(&values) };
        let mut db_items = Vec::new();
        for other in store.categories().filter(|c| c.schema.name != category) {
            if !other.schema.has_parameter(filter_parameter) {
                continue;
            }
            let sample: Vec<Scalar> = store
                .sample_parameter_values(&other.schema.name, filter_parameter, self.sample_k, self.sample_seed)?
                .into_iter()
                .filter(|v| !own.contains(&normalize(v)))
                .collect();
            if sample.is_empty() {
                continue;
            }
            db_items.push(self.catalog.fill(
                "value",
                "db_item",
                &[("category", &other.schema.name), ("values", &render_list(&sample))],
            ));
        }
        let db = Section::with_items(
            PromptComponentKind::RelevantDbInfo,
            self.headed(
                "db",
                &self.catalog.fill("value", "db", &[("category", category), ("parameter", filter_parameter)]),
            ),
            db_items,
            String::new(),
        );
        let task = Section::new(
            PromptComponentKind::TaskInstruction,
            self.headed(
                "task",
                &self.catalog.fill(
                    "value",
                    "task",
                    &[("category", category), ("parameter", filter_parameter), ("values", &value_list)],
                ),
            ),
        );
        Ok(self.assemble(
            PromptKind::Value,
            composition,
            vec![
                Some(self.system_section(PromptKind::Value)),
                Some(db),
                Some(task),
                self.fewshot_section(
                    fewshot.iter().filter(|e| e.matches_category(category) && e.matches_parameter(filter_parameter)),
                ),
                Some(self.user_section(query)),
            ],
        ))
    }

    /// Summarize retrieved results. Up to [`SUMMARY_ROW_CAP`] full records are
    /// listed, followed by a total-count line.
    pub fn build_summary_prompt(
        &self,
        store: &Store,
        query: &str,
        structured: &StructuredQuery,
        result: &QueryResult,
        composition: &PromptComposition,
    ) -> RenderedPrompt {
        let projection = match &structured.projection {
            Some(p) => p.to_string(),
            None => "the full records".to_string(),
        };
        let intent = match structured.projection {
            Some(Projection::Quantity) => Intent::CountInBim,
            _ => Intent::SearchInBim,
        };
        let vars = [
            ("intent", intent.label()),
            ("category", structured.category.as_str()),
            ("filter_parameter", structured.filter_parameter.as_str()),
            ("filter_value", structured.filter_value.as_str()),
            ("projection", projection.as_str()),
        ];
        let db = if result.count == 0 {
            Section::new(
                PromptComponentKind::RelevantDbInfo,
                self.headed("db", &self.catalog.fill("summary", "db_empty", &vars)),
            )
        } else {
            let items = result
                .matched_ids
                .iter()
                .take(SUMMARY_ROW_CAP)
                .map(|id| {
                    let row = match store.record_by_id(&structured.category, id) {
                        Some(fields) => fields.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("; "),
                        None => id.clone(),
                    };
                    self.catalog.fill("summary", "db_item", &[("row", &row)])
                })
                .collect();
            Section::with_items(
                PromptComponentKind::RelevantDbInfo,
                self.headed("db", &self.catalog.fill("summary", "db", &vars)),
                items,
                self.catalog.fill("summary", "db_total", &[("count", &result.count.to_string())]),
            )
        };
        let task = Section::new(
            PromptComponentKind::TaskInstruction,
            self.headed("task", &self.catalog.fill("summary", "task", &[])),
        );
        self.assemble(
            PromptKind::Summary,
            composition,
            vec![Some(self.system_section(PromptKind::Summary)), Some(db), Some(task), Some(self.user_section(query))],
        )
    }

    /// Answer a general question, or refuse when it is out of scope.
    pub fn build_general_prompt(&self, query: &str, composition: &PromptComposition) -> RenderedPrompt {
        let task = Section::new(
            PromptComponentKind::TaskInstruction,
            self.headed("task", &self.catalog.fill("general", "task", &[])),
        );
        self.assemble(
            PromptKind::General,
            composition,
            vec![Some(self.system_section(PromptKind::General)), Some(task), Some(self.user_section(query))],
        )
    }
}
