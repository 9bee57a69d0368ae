//! Editable text catalog holding every prompt boilerplate string.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::PromptKind;

const DEFAULT_CATALOG: &str = include_str!("../../catalog/default_prompts.toml");

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("failed to read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog: {0}")]
    Parse(String),
    #[error("catalog is missing [{table}].{key}")]
    MissingEntry { table: String, key: String },
    #[error("catalog entry [{table}].{key} uses unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { table: String, key: String, name: String },
}

/// (table, key, allowed placeholders)
const ENTRIES: &[(&str, &str, &[&str])] = &[
    ("headings", "system", &[]),
    ("headings", "db", &[]),
    ("headings", "task", &[]),
    ("headings", "fewshot", &[]),
    ("headings", "user", &[]),
    ("default", "system", &[]),
    ("fewshot", "example", &["query", "answer"]),
    ("fewshot", "user", &["query"]),
    ("intent", "db", &[]),
    ("intent", "db_item", &["category", "types", "parameters"]),
    ("intent", "task", &["categories"]),
    ("parameter", "db", &["category"]),
    ("parameter", "db_item", &["parameter", "values"]),
    ("parameter", "task", &["category", "parameters"]),
    ("value", "db", &["category", "parameter"]),
    ("value", "db_item", &["category", "values"]),
    ("value", "empty_list", &[]),
    ("value", "task", &["category", "parameter", "values"]),
    ("summary", "db", SUMMARY_VARS),
    ("summary", "db_empty", SUMMARY_VARS),
    ("summary", "db_item", &["row"]),
    ("summary", "db_total", &["count"]),
    ("summary", "task", &[]),
    ("general", "task", &[]),
];

const SUMMARY_VARS: &[&str] = &["intent", "category", "filter_parameter", "filter_value", "projection"];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

#[derive(Debug, Clone)]
pub struct Catalog {
    tables: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::from_toml(DEFAULT_CATALOG).expect("built-in catalog is valid")
    }
}

impl Catalog {
    pub fn load(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
        Catalog::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Parse and validate a catalog. All required entries must be present and
    /// may only use the placeholders their builder supplies.
    pub fn from_toml(text: &str) -> Result<Catalog, CatalogError> {
        let tables: BTreeMap<String, BTreeMap<String, String>> =
            toml::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        let catalog = Catalog { tables };
        for (table, key, allowed) in ENTRIES {
            let text = catalog
                .raw(table, key)
                .ok_or_else(|| CatalogError::MissingEntry { table: table.to_string(), key: key.to_string() })?;
            check_placeholders(table, key, text, allowed)?;
        }
        for kind in PromptKind::ALL {
            if let Some(text) = catalog.raw(kind.table(), "system") {
                check_placeholders(kind.table(), "system", text, &[])?;
            }
        }
        Ok(catalog)
    }

    fn raw(&self, table: &str, key: &str) -> Option<&str> {
        self.tables.get(table)?.get(key).map(String::as_str)
    }

    pub fn heading(&self, key: &str) -> &str {
        self.raw("headings", key).unwrap_or_default()
    }

    pub fn system(&self, kind: PromptKind) -> &str {
        self.raw(kind.table(), "system").or_else(|| self.raw("default", "system")).unwrap_or_default()
    }

    /// Fill `{{name}}` placeholders of a validated entry.
    pub fn fill(&self, table: &str, key: &str, vars: &[(&str, &str)]) -> String {
        let text = self.raw(table, key).unwrap_or_default();
        placeholder_re()
            .replace_all(text, |caps: &regex::Captures<'_>| {
                let name = &caps[1];
                vars.iter().find(|(k, _)| *k == name).map(|(_, v)| v.to_string()).unwrap_or_default()
            })
            .into_owned()
    }
}

fn check_placeholders(table: &str, key: &str, text: &str, allowed: &[&str]) -> Result<(), CatalogError> {
    for caps in placeholder_re().captures_iter(text) {
        let name = &caps[1];
        if !allowed.contains(&name) {
            return Err(CatalogError::UnknownPlaceholder {
                table: table.to_string(),
                key: key.to_string(),
                name: name.to_string(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_is_valid() {
        let c = Catalog::default();
        assert!(c.system(PromptKind::Intent).starts_with("You are a virtual assistant"));
        assert_eq!(c.fill("fewshot", "user", &[("query", "What is BIM?")]), " Q: What is BIM?");
    }

    #[test]
    fn rejects_unknown_placeholder() {
        let bad = DEFAULT_CATALOG.replace("{{categories}}", "{{category_list}}");
        assert!(matches!(Catalog::from_toml(&bad), Err(CatalogError::UnknownPlaceholder { .. })));
    }

    #[test]
    fn rejects_missing_entry() {
        let bad = DEFAULT_CATALOG.replace("empty_list =", "empty_listing =");
        assert!(matches!(Catalog::from_toml(&bad), Err(CatalogError::MissingEntry { .. })));
    }

    #[test]
    fn per_kind_system_override() {
        let text = format!("{DEFAULT_CATALOG}\n");
        let text = text.replace("[general]\n", "[general]\nsystem = \"You answer general questions.\"\n");
        let c = Catalog::from_toml(&text).unwrap();
        assert_eq!(c.system(PromptKind::General), "You answer general questions.");
        assert!(c.system(PromptKind::Summary).starts_with("You are a virtual assistant"));
    }
}
