//! File-backed store of building objects grouped into categories.
//!
//! A store is loaded once from a JSON document and is immutable afterwards,
//! so it can be shared across threads without synchronization.

mod fixture;
mod value;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fixture::{generate_fixture, FixtureSpec, GOLDEN_PUMP_ID};
pub use value::{compare_values, normalize, normalize_text, Scalar};

/// Reserved projection token for count queries.
pub const QUANTITY: &str = "quantity";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("failed to read store: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed store document: {0}")]
    Parse(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown category '{0}'")]
    UnknownCategory(String),
    #[error("unknown parameter '{parameter}' in category '{category}'")]
    UnknownParameter { category: String, parameter: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySchema {
    pub name: String,
    pub object_types: Vec<String>,
    pub parameters: Vec<String>,
    pub id_parameter: String,
}

impl CategorySchema {
    pub fn has_parameter(&self, name: &str) -> bool {
        self.parameters.iter().any(|p| p == name)
    }

    /// Case- and whitespace-insensitive parameter lookup returning the canonical name.
    pub fn resolve_parameter(&self, name: &str) -> Option<&str> {
        if let Some(p) = self.parameters.iter().find(|p| *p == name) {
            return Some(p);
        }
        let key = normalize_text(name);
        self.parameters.iter().find(|p| normalize_text(p) == key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub category: String,
    pub values: BTreeMap<String, Scalar>,
}

impl ComponentRecord {
    pub fn get(&self, parameter: &str) -> &Scalar {
        static NULL: Scalar = Scalar::Null;
        self.values.get(parameter).unwrap_or(&NULL)
    }
}

#[derive(Debug, Clone)]
pub struct Category {
    pub schema: CategorySchema,
    pub records: Vec<ComponentRecord>,
}

impl Category {
    pub fn record_id(&self, record: &ComponentRecord) -> String {
        record.get(&self.schema.id_parameter).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryIntent {
    Search,
    Count,
}

impl fmt::Display for QueryIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryIntent::Search => "search",
            QueryIntent::Count => "count",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Parameter(String),
    Quantity,
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Projection::Parameter(p) => f.write_str(p),
            Projection::Quantity => f.write_str(QUANTITY),
        }
    }
}

/// Structured form of a user request: one category, one equality filter, and
/// an optional projection (`None` returns full records).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub intent: QueryIntent,
    pub category: String,
    pub filter_parameter: String,
    pub filter_value: String,
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RowValue {
    IdOnly,
    Projected(Scalar),
    Record(Vec<(String, Scalar)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub id: String,
    pub value: RowValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub matched_ids: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StoreDocument {
    pub categories: Vec<CategoryDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CategoryDocument {
    pub name: String,
    pub object_types: Vec<String>,
    pub id_parameter: String,
    pub parameters: Vec<String>,
    pub records: Vec<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    categories: BTreeMap<String, Category>,
}

impl Store {
    pub fn load_path(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let bytes = std::fs::read(path)?;
        Store::load_slice(&bytes)
    }

    pub fn load_reader(mut reader: impl std::io::Read) -> Result<Store, StoreError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Store::load_slice(&bytes)
    }

    pub fn load_slice(bytes: &[u8]) -> Result<Store, StoreError> {
        let root: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| StoreError::Parse(e.to_string()))?;
        let obj = root.as_object().ok_or_else(|| StoreError::Parse("top level must be an object".into()))?;
        for key in obj.keys().filter(|k| k.as_str() != "categories") {
            log::warn!("ignoring unknown top-level key '{key}' in store document");
        }
        let categories = match obj.get("categories") {
            Some(v) => v.clone(),
            None => return Err(StoreError::Parse("missing 'categories'".into())),
        };
        let categories: Vec<CategoryDocument> =
            serde_json::from_value(categories).map_err(|e| StoreError::Parse(e.to_string()))?;
        Store::from_document(StoreDocument { categories })
    }

    pub fn from_document(doc: StoreDocument) -> Result<Store, StoreError> {
        let mut store = Store::default();
        for cat in doc.categories {
            if store.categories.contains_key(&cat.name) {
                return Err(StoreError::SchemaViolation(format!("duplicate category '{}'", cat.name)));
            }
            let mut seen = HashSet::new();
            for p in &cat.parameters {
                if !seen.insert(p.as_str()) {
                    return Err(StoreError::SchemaViolation(format!(
                        "duplicate parameter '{p}' in category '{}'",
                        cat.name
                    )));
                }
            }
            if !seen.contains(cat.id_parameter.as_str()) {
                return Err(StoreError::SchemaViolation(format!(
                    "id parameter '{}' is not a parameter of '{}'",
                    cat.id_parameter, cat.name
                )));
            }
            let schema = CategorySchema {
                name: cat.name.clone(),
                object_types: cat.object_types,
                parameters: cat.parameters,
                id_parameter: cat.id_parameter,
            };
            let mut ids = HashSet::new();
            let mut records = Vec::with_capacity(cat.records.len());
            for (i, raw) in cat.records.into_iter().enumerate() {
                let mut values = BTreeMap::new();
                for (key, v) in raw {
                    if !schema.has_parameter(&key) {
                        return Err(StoreError::SchemaViolation(format!(
                            "record {i} of '{}' has key '{key}' not in schema",
                            schema.name
                        )));
                    }
                    let scalar = Scalar::from_json(&v).ok_or_else(|| {
                        StoreError::SchemaViolation(format!(
                            "record {i} of '{}': value of '{key}' is not a scalar",
                            schema.name
                        ))
                    })?;
                    values.insert(key, scalar);
                }
                let id = values.get(&schema.id_parameter).unwrap_or(&Scalar::Null);
                if id.is_null() {
                    return Err(StoreError::SchemaViolation(format!(
                        "record {i} of '{}' is missing '{}'",
                        schema.name, schema.id_parameter
                    )));
                }
                if !ids.insert(normalize(id)) {
                    return Err(StoreError::SchemaViolation(format!(
                        "duplicate id '{id}' in category '{}'",
                        schema.name
                    )));
                }
                records.push(ComponentRecord { category: schema.name.clone(), values });
            }
            store.categories.insert(schema.name.clone(), Category { schema, records });
        }
        Ok(store)
    }

    /// Category names in sorted order.
    pub fn list_categories(&self) -> Vec<String> {
        self.categories.keys().cloned().collect()
    }

    pub fn categories(&self) -> impl Iterator<Item = &Category> {
        self.categories.values()
    }

    pub fn category(&self, name: &str) -> Result<&Category, StoreError> {
        self.categories.get(name).ok_or_else(|| StoreError::UnknownCategory(name.to_string()))
    }

    /// Case-insensitive category lookup returning the canonical name.
    pub fn resolve_category(&self, name: &str) -> Option<&str> {
        if let Some((k, _)) = self.categories.get_key_value(name) {
            return Some(k);
        }
        let key = normalize_text(name);
        self.categories.keys().find(|k| normalize_text(k) == key).map(String::as_str)
    }

    pub fn schema(&self, name: &str) -> Result<&CategorySchema, StoreError> {
        self.category(name).map(|c| &c.schema)
    }

    fn category_and_parameter(&self, category: &str, parameter: &str) -> Result<&Category, StoreError> {
        let cat = self.category(category)?;
        if !cat.schema.has_parameter(parameter) {
            return Err(StoreError::UnknownParameter {
                category: category.to_string(),
                parameter: parameter.to_string(),
            });
        }
        Ok(cat)
    }

    /// All distinct non-null values of a parameter, deduplicated on their
    /// normalized form and sorted numeric-aware.
    pub fn distinct_values(&self, category: &str, parameter: &str) -> Result<Vec<Scalar>, StoreError> {
        let cat = self.category_and_parameter(category, parameter)?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for rec in &cat.records {
            let v = rec.get(parameter);
            if v.is_null() {
                continue;
            }
            if seen.insert(normalize(v)) {
                out.push(v.clone());
            }
        }
        out.sort_by(compare_values);
        Ok(out)
    }

    /// Up to `k` distinct values chosen deterministically from `seed`,
    /// returned in the same order as [`Store::distinct_values`].
    pub fn sample_parameter_values(
        &self,
        category: &str,
        parameter: &str,
        k: usize,
        seed: u64,
    ) -> Result<Vec<Scalar>, StoreError> {
        let all = self.distinct_values(category, parameter)?;
        if all.len() <= k {
            return Ok(all);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, all.len(), k).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| all[i].clone()).collect())
    }

    /// A few records of the category, chosen deterministically.
    pub fn sample_records(&self, category: &str, k: usize, seed: u64) -> Result<Vec<&ComponentRecord>, StoreError> {
        let cat = self.category(category)?;
        let mut refs: Vec<&ComponentRecord> = cat.records.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        refs.shuffle(&mut rng);
        refs.truncate(k);
        Ok(refs)
    }

    pub fn validate(&self, query: &StructuredQuery) -> Result<&Category, StoreError> {
        let cat = self
            .categories
            .get(&query.category)
            .ok_or_else(|| StoreError::InvalidQuery(format!("unknown category '{}'", query.category)))?;
        if !cat.schema.has_parameter(&query.filter_parameter) {
            return Err(StoreError::InvalidQuery(format!("unknown filter parameter '{}'", query.filter_parameter)));
        }
        match (&query.intent, &query.projection) {
            (QueryIntent::Count, Some(Projection::Quantity)) => {}
            (QueryIntent::Count, _) => {
                return Err(StoreError::InvalidQuery("count queries must project 'quantity'".into()))
            }
            (QueryIntent::Search, Some(Projection::Quantity)) => {
                return Err(StoreError::InvalidQuery("'quantity' projection requires a count intent".into()))
            }
            (QueryIntent::Search, Some(Projection::Parameter(p))) if !cat.schema.has_parameter(p) => {
                return Err(StoreError::InvalidQuery(format!("unknown projection parameter '{p}'")))
            }
            (QueryIntent::Search, _) => {}
        }
        Ok(cat)
    }

    /// Number of records whose filter parameter matches `value` after normalization.
    pub fn count_matches(&self, category: &str, parameter: &str, value: &str) -> Result<usize, StoreError> {
        let cat = self.category_and_parameter(category, parameter)?;
        let key = normalize_text(value);
        Ok(cat.records.iter().filter(|r| matches(r.get(parameter), &key)).count())
    }

    pub fn execute(&self, query: &StructuredQuery) -> Result<QueryResult, StoreError> {
        let cat = self.validate(query)?;
        let key = normalize_text(&query.filter_value);
        let mut matched_ids = Vec::new();
        let mut rows = Vec::new();
        for rec in cat.records.iter().filter(|r| matches(r.get(&query.filter_parameter), &key)) {
            let id = cat.record_id(rec);
            let value = match &query.projection {
                Some(Projection::Quantity) => RowValue::IdOnly,
                Some(Projection::Parameter(p)) => RowValue::Projected(rec.get(p).clone()),
                None => {
                    RowValue::Record(cat.schema.parameters.iter().map(|p| (p.clone(), rec.get(p).clone())).collect())
                }
            };
            matched_ids.push(id.clone());
            rows.push(ResultRow { id, value });
        }
        Ok(QueryResult { count: matched_ids.len(), matched_ids, rows })
    }

    /// Full record of a category by id, in schema parameter order.
    pub fn record_by_id(&self, category: &str, id: &str) -> Option<Vec<(String, Scalar)>> {
        let cat = self.categories.get(category)?;
        let key = normalize_text(id);
        let rec = cat.records.iter().find(|r| normalize(r.get(&cat.schema.id_parameter)) == key)?;
        Some(cat.schema.parameters.iter().map(|p| (p.clone(), rec.get(p).clone())).collect())
    }
}

fn matches(value: &Scalar, key: &str) -> bool {
    !value.is_null() && normalize(value) == key
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(json: &str) -> Result<Store, StoreError> {
        Store::load_slice(json.as_bytes())
    }

    const STOREYS: &str = r#"{"categories":[{"name":"storey","object_types":["Level"],
        "id_parameter":"storey_id","parameters":["storey_id","elevation","note"],
        "records":[{"storey_id":"3","elevation":8.0},{"storey_id":"1","elevation":0},
                   {"storey_id":"2","elevation":4.0,"note":null}]}]}"#;

    #[test]
    fn empty_document() {
        let store = doc(r#"{"categories":[]}"#).unwrap();
        assert!(store.list_categories().is_empty());
    }

    #[test]
    fn unknown_top_level_keys_are_ignored() {
        let store = doc(r#"{"categories":[],"generator":"x"}"#).unwrap();
        assert!(store.list_categories().is_empty());
    }

    #[test]
    fn rejects_key_outside_schema() {
        let err = doc(r#"{"categories":[{"name":"door","object_types":[],"id_parameter":"id",
            "parameters":["id"],"records":[{"id":1,"colour":"red"}]}]}"#)
        .unwrap_err();
        assert!(matches!(err, StoreError::SchemaViolation(_)), "{err}");
    }

    #[test]
    fn rejects_duplicate_and_missing_ids() {
        let dup = doc(r#"{"categories":[{"name":"door","object_types":[],"id_parameter":"id",
            "parameters":["id"],"records":[{"id":1},{"id":"1"}]}]}"#);
        assert!(matches!(dup, Err(StoreError::SchemaViolation(_))));
        let missing = doc(r#"{"categories":[{"name":"door","object_types":[],"id_parameter":"id",
            "parameters":["id","w"],"records":[{"w":1}]}]}"#);
        assert!(matches!(missing, Err(StoreError::SchemaViolation(_))));
        let bad_id_param = doc(r#"{"categories":[{"name":"door","object_types":[],"id_parameter":"id",
            "parameters":["w"],"records":[]}]}"#);
        assert!(matches!(bad_id_param, Err(StoreError::SchemaViolation(_))));
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(matches!(doc("{\"categories\": ["), Err(StoreError::Parse(_))));
        assert!(matches!(doc("[]"), Err(StoreError::Parse(_))));
    }

    #[test]
    fn distinct_values_sorted_and_null_free() {
        let store = doc(STOREYS).unwrap();
        let ids: Vec<String> =
            store.distinct_values("storey", "storey_id").unwrap().iter().map(ToString::to_string).collect();
        assert_eq!(ids, ["1", "2", "3"]);
        assert!(store.distinct_values("storey", "note").unwrap().is_empty());
        assert!(matches!(store.distinct_values("storey", "height"), Err(StoreError::UnknownParameter { .. })));
        assert!(matches!(store.distinct_values("door", "x"), Err(StoreError::UnknownCategory(_))));
    }

    #[test]
    fn execute_search_and_count() {
        let store = doc(STOREYS).unwrap();
        let q = StructuredQuery {
            intent: QueryIntent::Search,
            category: "storey".into(),
            filter_parameter: "storey_id".into(),
            filter_value: " 2 ".into(),
            projection: Some(Projection::Parameter("elevation".into())),
        };
        let r = store.execute(&q).unwrap();
        assert_eq!(r.matched_ids, ["2"]);
        assert_eq!(r.rows[0].value, RowValue::Projected(Scalar::Number(4.0)));

        let q = StructuredQuery {
            intent: QueryIntent::Count,
            projection: Some(Projection::Quantity),
            filter_parameter: "elevation".into(),
            filter_value: "0".into(),
            ..q
        };
        let r = store.execute(&q).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.rows[0].value, RowValue::IdOnly);
    }

    #[test]
    fn null_never_matches() {
        let store = doc(STOREYS).unwrap();
        assert_eq!(store.count_matches("storey", "note", "").unwrap(), 0);
        assert_eq!(store.count_matches("storey", "note", "null").unwrap(), 0);
    }

    #[test]
    fn invalid_queries_rejected() {
        let store = doc(STOREYS).unwrap();
        let base = StructuredQuery {
            intent: QueryIntent::Count,
            category: "storey".into(),
            filter_parameter: "storey_id".into(),
            filter_value: "1".into(),
            projection: Some(Projection::Parameter("elevation".into())),
        };
        assert!(matches!(store.execute(&base), Err(StoreError::InvalidQuery(_))));
        let q = StructuredQuery { intent: QueryIntent::Search, projection: Some(Projection::Quantity), ..base.clone() };
        assert!(matches!(store.execute(&q), Err(StoreError::InvalidQuery(_))));
        let q = StructuredQuery { category: "door".into(), ..base };
        assert!(matches!(store.execute(&q), Err(StoreError::InvalidQuery(_))));
    }

    #[test]
    fn resolves_names_case_insensitively() {
        let store = doc(STOREYS).unwrap();
        assert_eq!(store.resolve_category("  Storey"), Some("storey"));
        assert_eq!(store.schema("storey").unwrap().resolve_parameter("Storey_ID"), Some("storey_id"));
        assert_eq!(store.resolve_category("door"), None);
    }
}
