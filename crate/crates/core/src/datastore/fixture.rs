//! Deterministic synthetic hospital store.
//!
//! Every record carries five attribute groups: basic information, location,
//! building system, equipment, and OmniClass classification.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use super::{CategoryDocument, StoreDocument};

pub const GOLDEN_PUMP_ID: i64 = 14569;

const PARAMETERS: &[&str] = &[
    "component_id",
    "component_type",
    "is_asset",
    "level_number",
    "room_type",
    "room_name",
    "system_type",
    "system_name",
    "manufacturer",
    "model_name",
    "specification",
    "omniclass_title",
    "omniclass_number",
];

struct CategoryTemplate {
    name: &'static str,
    types: &'static [&'static str],
    systems: &'static [&'static str],
    manufacturers: &'static [&'static str],
    model_prefix: &'static str,
    spec_unit: &'static str,
    omniclass: (&'static str, &'static str),
}

const TEMPLATES: &[CategoryTemplate] = &[
    CategoryTemplate {
        name: "Pumps",
        types: &["Base Mounted Pump", "Inline Pump", "Condensate Pump"],
        systems: &["Hydronic Supply", "Hydronic Return", "Domestic Cold Water"],
        manufacturers: &["PACO", "Bell & Gossett", "Armstrong"],
        model_prefix: "KP",
        spec_unit: "GPM",
        omniclass: ("Pumps", "23-27 17 00"),
    },
    CategoryTemplate {
        name: "Air Handling Units",
        types: &["Rooftop AHU", "Indoor AHU"],
        systems: &["Supply Air", "Return Air", "Outside Air"],
        manufacturers: &["Trane", "Carrier", "Daikin"],
        model_prefix: "AH",
        spec_unit: "CFM",
        omniclass: ("Air Handling Units", "23-33 25 00"),
    },
    CategoryTemplate {
        name: "Chillers",
        types: &["Water Cooled Chiller", "Air Cooled Chiller"],
        systems: &["Chilled Water Supply", "Chilled Water Return"],
        manufacturers: &["York", "Trane", "Carrier"],
        model_prefix: "CH",
        spec_unit: "tons",
        omniclass: ("Chillers", "23-33 21 11"),
    },
    CategoryTemplate {
        name: "Transformers",
        types: &["Dry Type Transformer", "Pad Mounted Transformer"],
        systems: &["Power", "Emergency Power"],
        manufacturers: &["Eaton", "Square D", "Siemens"],
        model_prefix: "TX",
        spec_unit: "kVA",
        omniclass: ("Transformers", "23-35 21 13"),
    },
    CategoryTemplate {
        name: "Smoke Detectors",
        types: &["Photoelectric Smoke Detector", "Duct Smoke Detector"],
        systems: &["Fire Alarm", "Exhaust Air"],
        manufacturers: &["Notifier", "Simplex", "Edwards"],
        model_prefix: "SD",
        spec_unit: "sq ft",
        omniclass: ("Smoke Detectors", "23-37 13 15"),
    },
    CategoryTemplate {
        name: "Air Terminals",
        types: &["Supply Diffuser", "Return Grille", "Exhaust Grille"],
        systems: &["Supply Air", "Return Air", "Exhaust Air"],
        manufacturers: &["Titus", "Price", "Krueger"],
        model_prefix: "AT",
        spec_unit: "CFM",
        omniclass: ("Air Terminals", "23-33 41 00"),
    },
    CategoryTemplate {
        name: "Fans",
        types: &["Exhaust Fan", "Inline Fan"],
        systems: &["Exhaust Air", "Relief Air"],
        manufacturers: &["Greenheck", "Loren Cook", "Twin City"],
        model_prefix: "EF",
        spec_unit: "CFM",
        omniclass: ("Fans", "23-33 23 00"),
    },
    CategoryTemplate {
        name: "Boilers",
        types: &["Condensing Boiler", "Steam Boiler"],
        systems: &["Heating Hot Water Supply", "Steam"],
        manufacturers: &["Cleaver-Brooks", "Lochinvar", "Aerco"],
        model_prefix: "BL",
        spec_unit: "MBH",
        omniclass: ("Boilers", "23-27 11 00"),
    },
    CategoryTemplate {
        name: "Valves",
        types: &["Balancing Valve", "Control Valve", "Check Valve"],
        systems: &["Hydronic Supply", "Hydronic Return", "Domestic Hot Water"],
        manufacturers: &["Belimo", "Victaulic", "Nibco"],
        model_prefix: "VL",
        spec_unit: "in",
        omniclass: ("Valves", "23-27 31 00"),
    },
    CategoryTemplate {
        name: "Electrical Panels",
        types: &["Panelboard", "Switchboard"],
        systems: &["Power", "Emergency Power", "Lighting"],
        manufacturers: &["Eaton", "Square D", "Siemens"],
        model_prefix: "EP",
        spec_unit: "A",
        omniclass: ("Panelboards", "23-35 25 00"),
    },
];

const ROOM_TYPES: &[&str] =
    &["Mechanical Room", "Electrical Room", "Patient Room", "Corridor", "Operating Room", "Storage", "Office"];

const LEVELS: u32 = 6;

/// Size parameters for [`generate_fixture`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSpec {
    pub categories: usize,
    pub records: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec { categories: 6, records: 600, seed: 1 }
    }
}

impl FixtureSpec {
    pub fn max_categories() -> usize {
        TEMPLATES.len()
    }
}

fn golden_pump() -> Map<String, Value> {
    let v = json!({
        "component_id": GOLDEN_PUMP_ID,
        "component_type": "Base Mounted Pump",
        "is_asset": true,
        "level_number": 6,
        "room_type": "Mechanical Room",
        "room_name": "06-470",
        "system_type": "Hydronic Return, Power",
        "system_name": "Hydronic Return 1",
        "manufacturer": "PACO",
        "model_name": "KP-4012",
        "specification": "500 GPM",
        "omniclass_title": "Pumps",
        "omniclass_number": "23-27 17 00",
    });
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

/// Generate a store document. Categories are capped at the number of built-in
/// templates; records are spread round-robin over the categories. When at
/// least one record is requested, the first pump is the golden record
/// (component_id 14569, manufacturer PACO, room 06-470, level 6).
pub fn generate_fixture(spec: FixtureSpec) -> StoreDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_cat = spec.categories.min(TEMPLATES.len());
    if n_cat == 0 {
        return StoreDocument { categories: Vec::new() };
    }
    let mut next_id: i64 = 10_001;
    let mut categories = Vec::with_capacity(n_cat);

    for (ci, tpl) in TEMPLATES.iter().take(n_cat).enumerate() {
        let quota = spec.records / n_cat + usize::from(ci < spec.records % n_cat);
        let mut records = Vec::with_capacity(quota);
        if tpl.name == "Pumps" && quota > 0 {
            records.push(golden_pump());
        }
        while records.len() < quota {
            next_id += rng.gen_range(1..=7);
            if next_id == GOLDEN_PUMP_ID {
                next_id += 1;
            }
            let level = rng.gen_range(1..=LEVELS);
            let room_type = *ROOM_TYPES.choose(&mut rng).unwrap();
            let system = *tpl.systems.choose(&mut rng).unwrap();
            let mut rec = Map::new();
            rec.insert("component_id".into(), json!(next_id));
            rec.insert("component_type".into(), json!(tpl.types.choose(&mut rng).unwrap()));
            rec.insert("is_asset".into(), json!(rng.gen_bool(0.8)));
            rec.insert("level_number".into(), json!(level));
            rec.insert("room_type".into(), json!(room_type));
            rec.insert("room_name".into(), json!(format!("{:02}-{:03}", level, rng.gen_range(100..500))));
            rec.insert("system_type".into(), json!(system));
            rec.insert("system_name".into(), json!(format!("{system} {}", rng.gen_range(1..=4))));
            rec.insert("manufacturer".into(), json!(tpl.manufacturers.choose(&mut rng).unwrap()));
            rec.insert("model_name".into(), json!(format!("{}-{}", tpl.model_prefix, rng.gen_range(1000..9999))));
            rec.insert("specification".into(), json!(format!("{} {}", rng.gen_range(1..=40) * 25, tpl.spec_unit)));
            rec.insert("omniclass_title".into(), json!(tpl.omniclass.0));
            rec.insert("omniclass_number".into(), json!(tpl.omniclass.1));
            records.push(rec);
        }
        categories.push(CategoryDocument {
            name: tpl.name.to_string(),
            object_types: tpl.types.iter().map(|s| s.to_string()).collect(),
            id_parameter: "component_id".to_string(),
            parameters: PARAMETERS.iter().map(|s| s.to_string()).collect(),
            records,
        });
    }
    StoreDocument { categories }
}
