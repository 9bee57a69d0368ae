use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::datastore::normalize_text;
use crate::prompt::Intent;

pub const COLUMNS: [&str; 7] =
    ["query", "tc_label", "category", "proj_para", "filter_para", "extr_value", "pred_value"];

/// One annotated query. Out-of-domain rows carry "NA" (or nothing) in the
/// category, parameter and value columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    pub tc_label: String,
    pub category: String,
    pub proj_para: String,
    pub filter_para: String,
    pub extr_value: String,
    pub pred_value: String,
}

/// True for an empty or "NA" annotation.
pub fn is_na(text: &str) -> bool {
    let t = normalize_text(text);
    t.is_empty() || t == "na"
}

impl LabeledQuery {
    fn from_fields(get: impl Fn(&str) -> Option<String>, line: usize) -> Result<Self, EvalError> {
        let mut f = COLUMNS.iter().map(|c| get(c).ok_or_else(|| EvalError::MissingColumn(c.to_string())));
        let mut next = || f.next().unwrap();
        let q = LabeledQuery {
            query: next()?,
            tc_label: next()?,
            category: next()?,
            proj_para: next()?,
            filter_para: next()?,
            extr_value: next()?,
            pred_value: next()?,
        };
        if q.tc_label.trim().is_empty() {
            return Err(EvalError::Parse(format!("line {line}: empty tc_label")));
        }
        Ok(q)
    }

    /// The intent implied by the annotations.
    pub fn annotated_intent(&self) -> Intent {
        if is_na(&self.category) {
            Intent::AskInGpt
        } else if normalize_text(&self.proj_para) == crate::datastore::QUANTITY {
            Intent::CountInBim
        } else {
            Intent::SearchInBim
        }
    }

    pub fn has_parameters(&self) -> bool {
        !is_na(&self.category) && !is_na(&self.filter_para)
    }

    pub fn has_values(&self) -> bool {
        self.has_parameters() && !(is_na(&self.pred_value) && is_na(&self.extr_value))
    }
}

/// Load a CSV file, or JSON lines when the extension is `.jsonl` or `.json`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledQuery>, EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json") => read_jsonl(std::io::BufReader::new(file)),
        _ => read_csv(file),
    }
}

pub fn read_csv(reader: impl std::io::Read) -> Result<Vec<LabeledQuery>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| EvalError::Parse(e.to_string()))?.clone();
    let index: BTreeMap<String, usize> =
        headers.iter().enumerate().map(|(i, h)| (h.trim().to_ascii_lowercase(), i)).collect();
    if let Some(missing) = COLUMNS.iter().find(|c| !index.contains_key(**c)) {
        return Err(EvalError::MissingColumn(missing.to_string()));
    }
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| EvalError::Parse(e.to_string()))?;
        let get = |c: &str| index.get(c).map(|&i| record.get(i).unwrap_or("").to_string());
        out.push(LabeledQuery::from_fields(get, i + 2)?);
    }
    Ok(out)
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<LabeledQuery>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| EvalError::Parse(format!("line {}: {e}", i + 1)))?;
        let get = |c: &str| {
            obj.get(c).map(|v| match v {
                serde_json::Value::String(s) => s.trim().to_string(),
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            })
        };
        out.push(LabeledQuery::from_fields(get, i + 1)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTarget {
    pub intent: Intent,
    pub category: String,
}

/// Maps each text-classification label to the (intent, category) pair a
/// model answer must produce for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub ood_label: String,
    pub labels: BTreeMap<String, LabelTarget>,
}

impl LabelMap {
    pub fn new(ood_label: impl Into<String>, labels: BTreeMap<String, LabelTarget>) -> Result<Self, EvalError> {
        let map = LabelMap { ood_label: ood_label.into(), labels };
        map.check()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        let map: LabelMap = serde_json::from_str(&text).map_err(|e| EvalError::Parse(e.to_string()))?;
        map.check()?;
        Ok(map)
    }

    fn key(intent: Intent, category: Option<&str>) -> (Intent, String) {
        let c = category.filter(|c| !is_na(c)).map(normalize_text).unwrap_or_default();
        (intent, c)
    }

    fn check(&self) -> Result<(), EvalError> {
        if !self.labels.contains_key(&self.ood_label) {
            return Err(EvalError::LabelMap(format!("ood label '{}' has no entry", self.ood_label)));
        }
        let mut seen = HashSet::new();
        for (label, t) in &self.labels {
            if !seen.insert(Self::key(t.intent, Some(&t.category))) {
                return Err(EvalError::LabelMap(format!(
                    "label '{label}' repeats ({}, {})",
                    t.intent.label(),
                    t.category
                )));
            }
        }
        Ok(())
    }

    /// Fail unless every label in the dataset has an entry.
    pub fn check_covers(&self, dataset: &[LabeledQuery]) -> Result<(), EvalError> {
        match dataset.iter().find(|r| !self.labels.contains_key(&r.tc_label)) {
            Some(r) => Err(EvalError::LabelMap(format!("no entry for label '{}'", r.tc_label))),
            None => Ok(()),
        }
    }

    pub fn target(&self, label: &str) -> Option<&LabelTarget> {
        self.labels.get(label)
    }

    /// The label for a parsed intent answer, if any. General questions map to
    /// the out-of-domain label whatever category accompanies them.
    pub fn label_for(&self, intent: Intent, category: Option<&str>) -> Option<&str> {
        if intent == Intent::AskInGpt {
            return Some(&self.ood_label);
        }
        let key = Self::key(intent, category);
        self.labels.iter().find(|(_, t)| Self::key(t.intent, Some(&t.category)) == key).map(|(l, _)| l.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "query,tc_label,category,proj_para,filter_para,extr_value,pred_value
How wide is the door in the faculty office 0331?,ATT-DOOR,door,width,room,faculty office 0331,faculty office 0331
What is the elevation of level 2?,ATT-STOREY,storey,elevation,storey_id,level 2,2
Tell me the windows' object type in faculty office 0332.,ATT-WINDOW,window,object_type,room,faculty office 0332,faculty office 0332
What is room 0201's long name?,ATT-ROOM,room,long_name,room_id,0201,0201
What is the length unit's name?,ATT-UNIT,unit,name,unit_type,length,length
How many windows are in medium classroom 0106?,QTY-WINDOW,window,quantity,room,medium classroom 0106,medium classroom 0106
What is the number of doors is in the medium classroom 0306?,QTY-DOOR,door,quantity,room,medium classroom 0306,medium classroom 0306
What are the quantities of building storeys in the Rinker model?,QTY-STOREY,storey,quantity,bim_file,Rinker,rinker model
What are the quantities of medium classrooms in the model?,QTY-ROOM,room,quantity,room_type,medium classrooms,medium classroom
";

    #[test]
    fn reads_annotated_rows() {
        let rows = read_csv(TABLE.as_bytes()).unwrap();
        assert_eq!(rows.len(), 9);
        assert_eq!(
            rows[1],
            LabeledQuery {
                query: "What is the elevation of level 2?".into(),
                tc_label: "ATT-STOREY".into(),
                category: "storey".into(),
                proj_para: "elevation".into(),
                filter_para: "storey_id".into(),
                extr_value: "level 2".into(),
                pred_value: "2".into(),
            }
        );
        assert_eq!(rows[5].annotated_intent(), Intent::CountInBim);
        assert_eq!(rows[0].annotated_intent(), Intent::SearchInBim);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_csv(COLUMNS.join(",").as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_reported() {
        let text = "query,tc_label,category,proj_para,extr_value,pred_value\n";
        match read_csv(text.as_bytes()) {
            Err(EvalError::MissingColumn(c)) => assert_eq!(c, "filter_para"),
            other => panic!("{other:?}"),
        }
        let line = r#"{"query":"q","tc_label":"OOD","category":"NA","proj_para":"NA","extr_value":"","pred_value":""}"#;
        assert!(matches!(read_jsonl(line.as_bytes()), Err(EvalError::MissingColumn(c)) if c == "filter_para"));
    }

    #[test]
    fn jsonl_matches_csv() {
        let rows = read_csv(TABLE.as_bytes()).unwrap();
        let jsonl: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        assert_eq!(read_jsonl(jsonl.as_bytes()).unwrap(), rows);
    }

    fn target(intent: Intent, category: &str) -> LabelTarget {
        LabelTarget { intent, category: category.into() }
    }

    #[test]
    fn label_map_lookup_and_checks() {
        let mut labels = BTreeMap::new();
        labels.insert("ATT-DOOR".to_string(), target(Intent::SearchInBim, "door"));
        labels.insert("QTY-DOOR".to_string(), target(Intent::CountInBim, "door"));
        labels.insert("OOD".to_string(), target(Intent::AskInGpt, "NA"));
        let map = LabelMap::new("OOD", labels.clone()).unwrap();
        assert_eq!(map.label_for(Intent::SearchInBim, Some("Door")), Some("ATT-DOOR"));
        assert_eq!(map.label_for(Intent::CountInBim, Some("door")), Some("QTY-DOOR"));
        assert_eq!(map.label_for(Intent::AskInGpt, Some("door")), Some("OOD"));
        assert_eq!(map.label_for(Intent::SearchInBim, Some("window")), None);

        labels.insert("DUP".to_string(), target(Intent::SearchInBim, "DOOR"));
        assert!(matches!(LabelMap::new("OOD", labels), Err(EvalError::LabelMap(_))));
        assert!(matches!(LabelMap::new("X", BTreeMap::new()), Err(EvalError::LabelMap(_))));
    }
}
