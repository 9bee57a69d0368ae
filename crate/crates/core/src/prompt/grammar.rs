//! Answer-line grammars for the intent, parameter, and value tasks.
//!
//! ```text
//! intent:    ["A:"] "[" intent "]" ("of" | "for") "'" category "'"
//! parameter: ["A:"] "filter_para:" name ";" "proj_para:" name      (any order)
//! value:     ["A:"] "extr_value:" quoted ";" "pred_value:" quoted  (any order)
//! ```
//!
//! Parsers scan the output line by line and use the first line that carries
//! the grammar's keywords, ignoring anything the model generated afterwards.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::datastore::normalize_text;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("unparseable model output: {0:?}")]
    UnparseableOutput(String),
    #[error("unknown intent '{0}'")]
    UnknownIntent(String),
    #[error("model output is missing field '{0}'")]
    MissingField(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intent {
    #[serde(rename = "ask in GPT")]
    AskInGpt,
    #[serde(rename = "search in BIM")]
    SearchInBim,
    #[serde(rename = "count in BIM")]
    CountInBim,
}

impl Intent {
    pub const ALL: [Intent; 3] = [Intent::AskInGpt, Intent::SearchInBim, Intent::CountInBim];

    pub fn label(self) -> &'static str {
        match self {
            Intent::AskInGpt => "ask in GPT",
            Intent::SearchInBim => "search in BIM",
            Intent::CountInBim => "count in BIM",
        }
    }

    pub fn from_label(text: &str) -> Option<Intent> {
        let key = normalize_text(text);
        Intent::ALL.into_iter().find(|i| normalize_text(i.label()) == key)
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentOutput {
    pub intent: Intent,
    /// `None` stands for the model's 'NA'.
    pub category: Option<String>,
}

impl IntentOutput {
    pub fn answer_line(&self) -> String {
        format!("A: [{}] for '{}'", self.intent.label(), self.category.as_deref().unwrap_or("NA"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterOutput {
    pub filter_parameter: String,
    pub projection_parameter: String,
}

impl ParameterOutput {
    pub fn answer_line(&self) -> String {
        format!("A: filter_para: {}; proj_para: {}", self.filter_parameter, self.projection_parameter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueOutput {
    pub extracted_value: String,
    pub predicted_value: String,
}

impl ValueOutput {
    pub fn answer_line(&self) -> String {
        format!("A: extr_value: '{}'; pred_value: '{}'", self.extracted_value, self.predicted_value)
    }
}

fn strip_answer_prefix(line: &str) -> &str {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)^\s*a\s*:").unwrap());
    match re.find(line) {
        Some(m) => &line[m.end()..],
        None => line,
    }
}

fn intent_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)^\s*\[([^\]]*)\]\s*(?:of|for)\s*(['"])(.*)$"#).unwrap())
}

pub fn parse_intent_output(text: &str) -> Result<IntentOutput, GrammarError> {
    let mut first_error = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match parse_intent_line(strip_answer_prefix(line)) {
            Ok(out) => return Ok(out),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.unwrap_or_else(|| GrammarError::UnparseableOutput(text.to_string())))
}

fn parse_intent_line(line: &str) -> Result<IntentOutput, GrammarError> {
    let caps = intent_re().captures(line).ok_or_else(|| GrammarError::UnparseableOutput(line.trim().to_string()))?;
    let quote = &caps[2];
    let rest = &caps[3];
    let close = rest.rfind(quote).ok_or_else(|| GrammarError::UnparseableOutput(line.trim().to_string()))?;
    let intent_text = caps[1].trim();
    let intent = Intent::from_label(intent_text).ok_or_else(|| GrammarError::UnknownIntent(intent_text.to_string()))?;
    let category = rest[..close].trim();
    if category.is_empty() {
        return Err(GrammarError::MissingField("category"));
    }
    let category = if category.eq_ignore_ascii_case("na") { None } else { Some(category.to_string()) };
    Ok(IntentOutput { intent, category })
}

/// Locate `key:` fields on a line and return the text segment following each.
fn keyed_segments<'a>(line: &'a str, re: &Regex) -> Vec<(String, &'a str)> {
    let found: Vec<(String, usize, usize)> = re
        .captures_iter(line)
        .map(|c| {
            let m = c.get(0).unwrap();
            (c[1].to_ascii_lowercase(), m.start(), m.end())
        })
        .collect();
    found
        .iter()
        .enumerate()
        .map(|(i, (key, _, end))| {
            let stop = found.get(i + 1).map(|n| n.1).unwrap_or(line.len());
            (key.clone(), &line[*end..stop])
        })
        .collect()
}

fn clean_segment(seg: &str) -> &str {
    let seg = seg.trim();
    let seg = seg.strip_suffix(';').unwrap_or(seg).trim_end();
    seg
}

pub fn parse_parameter_output(text: &str) -> Result<ParameterOutput, GrammarError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(filter_para|proj_para)\s*:").unwrap());
    let line = text
        .lines()
        .find(|l| re.is_match(l))
        .ok_or_else(|| GrammarError::UnparseableOutput(text.trim().to_string()))?;
    let mut filter = None;
    let mut proj = None;
    for (key, seg) in keyed_segments(strip_answer_prefix(line), re) {
        let name = clean_segment(seg).trim_end_matches([',', '.']).trim();
        let name = unquote(name).unwrap_or(name).trim();
        let slot = if key == "filter_para" { &mut filter } else { &mut proj };
        if slot.is_none() && !name.is_empty() {
            *slot = Some(name.to_string());
        }
    }
    Ok(ParameterOutput {
        filter_parameter: filter.ok_or(GrammarError::MissingField("filter_para"))?,
        projection_parameter: proj.ok_or(GrammarError::MissingField("proj_para"))?,
    })
}

/// Strip a matching pair of quotes; anything after the closing quote is ignored.
fn unquote(seg: &str) -> Option<&str> {
    let quote = seg.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let close = seg.rfind(quote)?;
    (close > 0).then(|| &seg[1..close])
}

pub fn parse_value_output(text: &str) -> Result<ValueOutput, GrammarError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(extr_value|pred_value)\s*:").unwrap());
    let line = text
        .lines()
        .find(|l| re.is_match(l))
        .ok_or_else(|| GrammarError::UnparseableOutput(text.trim().to_string()))?;
    let mut extr = None;
    let mut pred = None;
    for (key, seg) in keyed_segments(strip_answer_prefix(line), re) {
        let seg = clean_segment(seg);
        let value = unquote(seg).ok_or_else(|| GrammarError::UnparseableOutput(line.trim().to_string()))?;
        let slot = if key == "extr_value" { &mut extr } else { &mut pred };
        if slot.is_none() && !value.is_empty() {
            *slot = Some(value.to_string());
        }
    }
    Ok(ValueOutput {
        extracted_value: extr.ok_or(GrammarError::MissingField("extr_value"))?,
        predicted_value: pred.ok_or(GrammarError::MissingField("pred_value"))?,
    })
}
