//! Nutrition data aggregation: source adapters, per-100 g normalization and
//! the priority merge that builds the consolidated food composition table.
//!
//! Sources merge in the order IFCT, INDB, external API, model. The
//! highest-priority record wins; nutrients it does not know are backfilled one
//! at a time from the next source down, and each nutrient keeps the
//! provenance of the record it came from.
//!
//! Adapter column layouts:
//!
//! * IFCT-style CSV: `code,name,form,process,size,scientific_name,food_group,local_names`
//!   followed by one column per nutrient label. Values are per 100 g.
//! * INDB-style CSV: `food_code,food_name,form,process,size,basis,basis_g`
//!   (optionally `local_names`) followed by nutrient columns. `basis` is one of
//!   `per_100g`, `per_serving`, `per_unit`.
//! * External API capture: JSON `{"foods": [...]}` with `food_name`,
//!   `serving_weight_grams` and `nf_*` nutrient fields.
//!
//! `local_names` holds `lang:label` pairs separated by `|`. Empty nutrient
//! cells are unknown, never zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::nutrient::{NutrientId, NutrientMap, NutrientVector, Provenance, Source};
use crate::vocab::{normalize_name, Axis, Vocabulary};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Identity of one ingredient variant in the table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariantKey {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
}

fn norm_descriptor(axis: Axis, token: Option<&str>) -> Option<String> {
    let t = token?.trim().to_lowercase();
    if t.is_empty() {
        return None;
    }
    Some(
        Vocabulary::builtin()
            .canonical_descriptor(axis, &t)
            .map(str::to_string)
            .unwrap_or(t),
    )
}

impl VariantKey {
    /// Normalizes tokens: lowercase, singular name, canonical descriptors.
    /// Descriptor tokens outside the vocabulary are kept verbatim.
    pub fn new(name: &str, form: Option<&str>, process: Option<&str>, size: Option<&str>) -> Self {
        VariantKey {
            name: normalize_name(name),
            form: norm_descriptor(Axis::Form, form),
            process: norm_descriptor(Axis::Process, process),
            size: norm_descriptor(Axis::Size, size),
        }
    }

    pub fn plain(name: &str) -> Self {
        VariantKey::new(name, None, None, None)
    }

    /// Stable single-string form, `name|form|process|size`.
    pub fn as_key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.name,
            self.form.as_deref().unwrap_or(""),
            self.process.as_deref().unwrap_or(""),
            self.size.as_deref().unwrap_or("")
        )
    }

    /// Descriptor tokens not found in the controlled vocabularies; these go
    /// to the review queue.
    pub fn unknown_descriptors(&self) -> Vec<(Axis, String)> {
        let v = Vocabulary::builtin();
        [
            (Axis::Form, &self.form),
            (Axis::Process, &self.process),
            (Axis::Size, &self.size),
        ]
        .into_iter()
        .filter_map(|(axis, tok)| {
            let tok = tok.as_ref()?;
            (v.canonical_descriptor(axis, tok).is_none()).then(|| (axis, tok.clone()))
        })
        .collect()
    }

    /// Search query text, descriptors first: `boiled potato`.
    pub fn query_text(&self) -> String {
        [&self.process, &self.form, &self.size]
            .into_iter()
            .flatten()
            .map(String::as_str)
            .chain(std::iter::once(self.name.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn descriptor_count(&self) -> usize {
        [&self.form, &self.process, &self.size]
            .iter()
            .filter(|d| d.is_some())
            .count()
    }
}

impl fmt::Display for VariantKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        let parts: Vec<String> = [("form", &self.form), ("process", &self.process), ("size", &self.size)]
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}")))
            .collect();
        if !parts.is_empty() {
            write!(f, " [{}]", parts.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Alias {
    pub label: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoodRecord {
    pub key: VariantKey,
    /// Per 100 g edible portion.
    pub nutrients: NutrientVector,
    #[serde(default)]
    pub nutrient_sources: BTreeMap<NutrientId, Provenance>,
    #[serde(default)]
    pub aliases: BTreeSet<Alias>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scientific_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub food_group: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub dietary_flags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_path: Option<Vec<String>>,
    /// Stored for reference; never applied to compositions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub retention_factors: BTreeMap<String, Amount>,
    pub provenance: Provenance,
}

impl FoodRecord {
    pub fn new(key: VariantKey, nutrients: NutrientVector, provenance: Provenance) -> Self {
        let nutrient_sources = nutrients.iter().map(|(k, _)| (k.clone(), provenance.clone())).collect();
        FoodRecord {
            key,
            nutrients,
            nutrient_sources,
            aliases: BTreeSet::new(),
            scientific_name: None,
            food_group: None,
            dietary_flags: BTreeSet::new(),
            category_path: None,
            retention_factors: BTreeMap::new(),
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServingBasis {
    Per100g,
    PerServing { grams: Amount },
    PerUnit { grams: Amount },
}

impl ServingBasis {
    pub fn grams(&self) -> Amount {
        match self {
            ServingBasis::Per100g => Amount::from_int(100),
            ServingBasis::PerServing { grams } | ServingBasis::PerUnit { grams } => grams.clone(),
        }
    }
}

/// One raw row from a source adapter, before canonicalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRecord {
    pub source: Source,
    pub source_key: String,
    /// 1-based data row number (header excluded) or array index + 1.
    pub row: usize,
    pub name: String,
    pub form: Option<String>,
    pub process: Option<String>,
    pub size: Option<String>,
    pub basis: ServingBasis,
    pub nutrients: Vec<(String, Amount)>,
    pub aliases: Vec<Alias>,
    pub scientific_name: Option<String>,
    pub food_group: Option<String>,
    pub dietary_flags: Vec<String>,
}

impl SourceRecord {
    pub fn key(&self) -> VariantKey {
        VariantKey::new(
            &self.name,
            self.form.as_deref(),
            self.process.as_deref(),
            self.size.as_deref(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    Ifct,
    Indb,
    ExternalApi,
}

impl Adapter {
    pub fn source(self) -> Source {
        match self {
            Adapter::Ifct => Source::Ifct,
            Adapter::Indb => Source::Indb,
            Adapter::ExternalApi => Source::ExternalApi,
        }
    }

    pub fn parse(s: &str) -> Result<Adapter> {
        match s.to_ascii_lowercase().as_str() {
            "ifct" => Ok(Adapter::Ifct),
            "indb" => Ok(Adapter::Indb),
            "external_api" | "external-api" | "api" | "nutritionix" => Ok(Adapter::ExternalApi),
            other => Err(Error::InvalidArgument(format!("unknown adapter {other:?}"))),
        }
    }

    /// Guesses the adapter from a file name (`*ifct*`, `*indb*`, `*.json`).
    pub fn infer(path: &Path) -> Option<Adapter> {
        let name = path.file_name()?.to_string_lossy().to_lowercase();
        if name.contains("ifct") {
            Some(Adapter::Ifct)
        } else if name.contains("indb") {
            Some(Adapter::Indb)
        } else if name.ends_with(".json") {
            Some(Adapter::ExternalApi)
        } else {
            None
        }
    }

    fn required_columns(self) -> &'static [&'static str] {
        match self {
            Adapter::Ifct => &[
                "code",
                "name",
                "form",
                "process",
                "size",
                "scientific_name",
                "food_group",
                "local_names",
            ],
            Adapter::Indb => &["food_code", "food_name", "form", "process", "size", "basis", "basis_g"],
            Adapter::ExternalApi => &["food_name", "serving_weight_grams"],
        }
    }
}

/// Rows loaded from one source file.
#[derive(Debug, Clone)]
pub struct LoadedSource {
    pub source: Source,
    pub path: PathBuf,
    pub records: Vec<SourceRecord>,
    /// Rows rejected for malformed numerics: (row number, reason).
    pub rejected: Vec<(usize, String)>,
}

pub fn load_source(path: &Path, adapter: Adapter) -> Result<LoadedSource> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut loaded = parse_source(&text, adapter)?;
    loaded.path = path.to_path_buf();
    Ok(loaded)
}

pub fn parse_source(text: &str, adapter: Adapter) -> Result<LoadedSource> {
    let (records, rejected) = match adapter {
        Adapter::Ifct | Adapter::Indb => parse_table(text, adapter)?,
        Adapter::ExternalApi => parse_api_capture(text)?,
    };
    Ok(LoadedSource {
        source: adapter.source(),
        path: PathBuf::new(),
        records,
        rejected,
    })
}

fn opt(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

fn parse_local_names(s: &str) -> Vec<Alias> {
    s.split('|')
        .filter_map(|p| {
            let p = p.trim();
            if p.is_empty() {
                return None;
            }
            let (lang, label) = p.split_once(':').unwrap_or(("und", p));
            Some(Alias {
                label: label.trim().to_string(),
                language: lang.trim().to_string(),
            })
        })
        .collect()
}

fn parse_amount_cell(cell: &str) -> std::result::Result<Option<Amount>, String> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t == "-" {
        return Ok(None);
    }
    let a = Amount::parse(t).map_err(|e| format!("bad number {t:?} ({e})"))?;
    if a.is_negative() {
        return Err(format!("negative amount {t:?}"));
    }
    Ok(Some(a))
}

type Parsed = (Vec<SourceRecord>, Vec<(usize, String)>);

fn parse_table(text: &str, adapter: Adapter) -> Result<Parsed> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(String::from).collect(),
        Err(_) => Vec::new(),
    };
    let required = adapter.required_columns();
    let missing: Vec<String> = required
        .iter()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch {
            adapter: format!("{:?}", adapter.source()),
            missing,
        });
    }
    let idx = |c: &str| headers.iter().position(|h| h == c);
    let meta: BTreeSet<&str> = required
        .iter()
        .copied()
        .chain(["local_names", "scientific_name", "food_group", "dietary_flags"])
        .collect();
    let nutrient_cols: Vec<(usize, &String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !meta.contains(h.as_str()))
        .collect();

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let get = |c: &str| idx(c).and_then(|j| row.get(j)).unwrap_or("");
        let mut problems = Vec::new();
        let mut nutrients = Vec::new();
        for (j, label) in &nutrient_cols {
            match parse_amount_cell(row.get(*j).unwrap_or("")) {
                Ok(Some(a)) => nutrients.push((label.to_string(), a)),
                Ok(None) => {}
                Err(e) => problems.push(format!("{label}: {e}")),
            }
        }
        let (key_col, name_col) = match adapter {
            Adapter::Ifct => ("code", "name"),
            _ => ("food_code", "food_name"),
        };
        let basis = match adapter {
            Adapter::Ifct => Ok(ServingBasis::Per100g),
            _ => parse_basis(get("basis"), get("basis_g")),
        };
        let basis = match basis {
            Ok(b) => Some(b),
            Err(e) => {
                problems.push(e);
                None
            }
        };
        if get(name_col).is_empty() {
            problems.push("empty name".into());
        }
        if !problems.is_empty() {
            rejected.push((row_no, problems.join("; ")));
            continue;
        }
        records.push(SourceRecord {
            source: adapter.source(),
            source_key: get(key_col).to_string(),
            row: row_no,
            name: get(name_col).to_string(),
            form: opt(get("form")),
            process: opt(get("process")),
            size: opt(get("size")),
            basis: basis.expect("checked above"),
            nutrients,
            aliases: parse_local_names(get("local_names")),
            scientific_name: opt(get("scientific_name")),
            food_group: opt(get("food_group")),
            dietary_flags: get("dietary_flags").split('|').filter_map(opt).collect(),
        });
    }
    Ok((records, rejected))
}

fn parse_basis(kind: &str, grams: &str) -> std::result::Result<ServingBasis, String> {
    let grams = || parse_amount_cell(grams)?.ok_or_else(|| "missing basis_g".to_string());
    match kind.trim() {
        "per_100g" | "" => Ok(ServingBasis::Per100g),
        "per_serving" => Ok(ServingBasis::PerServing { grams: grams()? }),
        "per_unit" => Ok(ServingBasis::PerUnit { grams: grams()? }),
        other => Err(format!("unknown basis {other:?}")),
    }
}

/// Splits an external food name such as `boiled potato` into a name and
/// variant descriptors using the controlled vocabulary.
pub fn split_food_name(food_name: &str) -> (String, Option<String>, Option<String>, Option<String>) {
    let v = Vocabulary::builtin();
    let (mut form, mut process, mut size) = (None, None, None);
    let mut rest = Vec::new();
    for tok in food_name.split(|c: char| c.is_whitespace() || c == ',') {
        if tok.is_empty() {
            continue;
        }
        match v.descriptor(tok) {
            Some((Axis::Form, c)) if form.is_none() => form = Some(c.to_string()),
            Some((Axis::Process, c)) if process.is_none() => process = Some(c.to_string()),
            Some((Axis::Size, c)) if size.is_none() => size = Some(c.to_string()),
            _ => rest.push(tok),
        }
    }
    (rest.join(" "), form, process, size)
}

/// One food item as returned by the external nutrition API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiFood {
    pub food_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serving_qty: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serving_unit: Option<String>,
    pub serving_weight_grams: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_id: Option<Value>,
    #[serde(flatten)]
    pub fields: BTreeMap<String, Value>,
}

fn value_amount(v: &Value) -> std::result::Result<Option<Amount>, String> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => {
            let a = Amount::parse(&n.to_string()).map_err(|e| e.to_string())?;
            if a.is_negative() {
                Err(format!("negative amount {n}"))
            } else {
                Ok(Some(a))
            }
        }
        Value::String(s) => parse_amount_cell(s),
        other => Err(format!("not a number: {other}")),
    }
}

impl ApiFood {
    fn to_source_record(&self, row: usize) -> std::result::Result<SourceRecord, String> {
        let grams = self
            .serving_weight_grams
            .as_ref()
            .map(value_amount)
            .transpose()?
            .flatten()
            .ok_or_else(|| "missing serving_weight_grams".to_string())?;
        let mut nutrients = Vec::new();
        let mut problems = Vec::new();
        for (k, v) in &self.fields {
            if !k.starts_with("nf_") {
                continue;
            }
            match value_amount(v) {
                Ok(Some(a)) => nutrients.push((k.clone(), a)),
                Ok(None) => {}
                Err(e) => problems.push(format!("{k}: {e}")),
            }
        }
        if !problems.is_empty() {
            return Err(problems.join("; "));
        }
        let (name, form, process, size) = split_food_name(&self.food_name);
        if name.is_empty() {
            return Err("empty food_name".into());
        }
        let source_key = self
            .tag_id
            .as_ref()
            .map(|t| match t {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| self.food_name.clone());
        Ok(SourceRecord {
            source: Source::ExternalApi,
            source_key,
            row,
            name,
            form,
            process,
            size,
            basis: ServingBasis::PerServing { grams },
            nutrients,
            aliases: Vec::new(),
            scientific_name: None,
            food_group: None,
            dietary_flags: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiCapture {
    pub foods: Vec<ApiFood>,
}

fn parse_api_capture(text: &str) -> Result<Parsed> {
    if text.trim().is_empty() {
        return Err(Error::SchemaMismatch {
            adapter: "EXTERNAL_API".into(),
            missing: vec!["foods".into()],
        });
    }
    let value: Value = serde_json::from_str(text)?;
    let foods = value
        .get("foods")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::SchemaMismatch {
            adapter: "EXTERNAL_API".into(),
            missing: vec!["foods".into()],
        })?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, f) in foods.iter().enumerate() {
        let row = i + 1;
        let missing: Vec<String> = Adapter::ExternalApi
            .required_columns()
            .iter()
            .filter(|c| f.get(**c).is_none())
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            rejected.push((row, format!("missing fields: {}", missing.join(", "))));
            continue;
        }
        let food: ApiFood = serde_json::from_value(f.clone())?;
        match food.to_source_record(row) {
            Ok(r) => records.push(r),
            Err(e) => rejected.push((row, e)),
        }
    }
    Ok((records, rejected))
}

/// A canonical record plus the nutrient labels the mapping table did not know.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub record: FoodRecord,
    pub unmapped: Vec<String>,
}

/// Rescales a source row to per 100 g and canonicalizes nutrient labels.
pub fn normalize_basis(rec: &SourceRecord) -> Result<Normalized> {
    normalize_basis_with(rec, NutrientMap::builtin())
}

pub fn normalize_basis_with(rec: &SourceRecord, map: &NutrientMap) -> Result<Normalized> {
    let basis_g = rec.basis.grams();
    if !basis_g.is_positive() {
        return Err(Error::InvalidRecord {
            key: rec.source_key.clone(),
            reason: format!("serving basis of {basis_g} g"),
        });
    }
    let to_100g = &Amount::from_int(100) / &basis_g;
    let mut nutrients = NutrientVector::new();
    let mut unmapped = Vec::new();
    for (label, amount) in &rec.nutrients {
        match map.lookup(rec.source, label) {
            Ok((id, factor)) => {
                let value = amount * &factor * &to_100g;
                if nutrients.is_known(&id) {
                    return Err(Error::InvalidRecord {
                        key: rec.source_key.clone(),
                        reason: format!("two labels map to {id}"),
                    });
                }
                nutrients.insert(id, value)?;
            }
            Err(Error::UnknownNutrient { .. }) => unmapped.push(label.clone()),
            Err(e) => return Err(e),
        }
    }
    let provenance = Provenance::new(rec.source, rec.source_key.clone());
    let mut record = FoodRecord::new(rec.key(), nutrients, provenance);
    record.aliases = rec.aliases.iter().cloned().collect();
    record.scientific_name = rec.scientific_name.clone();
    record.food_group = rec.food_group.clone();
    record.dietary_flags = rec.dietary_flags.iter().cloned().collect();
    Ok(Normalized { record, unmapped })
}

/// Priority merge of records sharing one key. Order of `candidates` does not
/// matter. Panics on an empty list.
pub fn merge_priority(candidates: &[FoodRecord]) -> FoodRecord {
    assert!(!candidates.is_empty(), "merge_priority needs at least one record");
    let mut sorted: Vec<&FoodRecord> = candidates.iter().collect();
    sorted.sort_by(|a, b| {
        (a.provenance.source.priority(), &a.provenance.source_key)
            .cmp(&(b.provenance.source.priority(), &b.provenance.source_key))
    });
    let mut merged = sorted[0].clone();
    for other in &sorted[1..] {
        for (id, amount) in other.nutrients.iter() {
            if !merged.nutrients.is_known(id) {
                merged
                    .nutrients
                    .insert(id.clone(), amount.clone())
                    .expect("amounts already validated");
                let prov = other
                    .nutrient_sources
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| other.provenance.clone());
                merged.nutrient_sources.insert(id.clone(), prov);
            }
        }
        merged.aliases.extend(other.aliases.iter().cloned());
        merged.dietary_flags.extend(other.dietary_flags.iter().cloned());
        if merged.scientific_name.is_none() {
            merged.scientific_name = other.scientific_name.clone();
        }
        if merged.food_group.is_none() {
            merged.food_group = other.food_group.clone();
        }
        if merged.category_path.is_none() {
            merged.category_path = other.category_path.clone();
        }
        for (k, v) in &other.retention_factors {
            merged.retention_factors.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeResolution {
    pub key: String,
    pub sources: Vec<Source>,
    pub winner: Source,
    pub backfilled: BTreeMap<NutrientId, Source>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub records_per_source: BTreeMap<Source, usize>,
    pub merged: Vec<MergeResolution>,
    pub unmapped_labels: BTreeMap<Source, BTreeSet<String>>,
    pub rejected_rows: BTreeMap<String, Vec<(usize, String)>>,
    /// Descriptor tokens outside the controlled vocabulary, for review.
    pub flagged_descriptors: Vec<(String, String)>,
    pub total_records: usize,
}

/// The consolidated, per-100 g food composition table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FctStore {
    records: BTreeMap<String, FoodRecord>,
}

#[derive(Serialize, Deserialize)]
struct FctSnapshot {
    schema_version: u32,
    nutrient_map_version: String,
    records: Vec<FoodRecord>,
}

impl FctStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &VariantKey) -> Option<&FoodRecord> {
        self.records.get(&key.as_key())
    }

    pub fn contains(&self, key: &VariantKey) -> bool {
        self.records.contains_key(&key.as_key())
    }

    pub fn records(&self) -> impl Iterator<Item = &FoodRecord> {
        self.records.values()
    }

    /// Inserts or replaces the record for its key.
    pub fn upsert(&mut self, record: FoodRecord) {
        self.records.insert(record.key.as_key(), record);
    }

    /// Merges `record` into any existing record for the same key under the
    /// usual source priority.
    pub fn merge_in(&mut self, record: FoodRecord) {
        let merged = match self.records.get(&record.key.as_key()) {
            Some(existing) => merge_priority(&[existing.clone(), record]),
            None => record,
        };
        self.upsert(merged);
    }

    /// Records whose name matches exactly, in key order.
    pub fn by_name<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a FoodRecord> + 'a {
        let prefix = format!("{name}|");
        self.records
            .range(prefix.clone()..)
            .take_while(move |(k, _)| k.starts_with(&prefix))
            .map(|(_, r)| r)
    }

    /// Records carrying `label` as an alias (case-insensitive).
    pub fn by_alias(&self, label: &str) -> Vec<&FoodRecord> {
        let l = label.trim().to_lowercase();
        self.records
            .values()
            .filter(|r| r.aliases.iter().any(|a| a.label.to_lowercase() == l))
            .collect()
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.records.values().map(|r| r.key.name.as_str()).collect()
    }

    pub fn to_snapshot_json(&self) -> String {
        let snap = FctSnapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            nutrient_map_version: NutrientMap::builtin().version.clone(),
            records: self.records.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&snap).expect("snapshot serializes");
        s.push('\n');
        s
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        let snap: FctSnapshot = serde_json::from_str(text)?;
        if snap.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported FCT snapshot schema {}",
                snap.schema_version
            )));
        }
        let mut store = FctStore::new();
        for r in snap.records {
            store.upsert(r);
        }
        Ok(store)
    }

    /// Content hash identifying this table version.
    pub fn version(&self) -> String {
        let digest = Sha256::digest(self.to_snapshot_json().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Builds the consolidated table. The result does not depend on the order of
/// `sources` or of rows within them.
pub fn build_fct(sources: &[LoadedSource]) -> Result<(FctStore, BuildReport)> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("build_fct needs at least one source".into()));
    }
    let mut report = BuildReport::default();
    let mut by_key: BTreeMap<String, Vec<FoodRecord>> = BTreeMap::new();
    let mut sorted: Vec<&LoadedSource> = sources.iter().collect();
    sorted.sort_by_key(|s| s.source.priority());

    for src in sorted {
        let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for rec in &src.records {
            let key = rec.key();
            if let Some((row, code)) = seen.get(&key.as_key()) {
                return Err(Error::Conflict(format!(
                    "duplicate key {key} in {}: row {row} ({code}) and row {} ({})",
                    src.source, rec.row, rec.source_key
                )));
            }
            seen.insert(key.as_key(), (rec.row, rec.source_key.clone()));
            let n = normalize_basis(rec)?;
            for label in n.unmapped {
                report.unmapped_labels.entry(src.source).or_default().insert(label);
            }
            for (axis, tok) in key.unknown_descriptors() {
                report
                    .flagged_descriptors
                    .push((key.as_key(), format!("{axis:?}:{tok}").to_lowercase()));
            }
            *report.records_per_source.entry(src.source).or_insert(0) += 1;
            by_key.entry(key.as_key()).or_default().push(n.record);
        }
        if !src.rejected.is_empty() {
            report
                .rejected_rows
                .entry(src.path.display().to_string())
                .or_default()
                .extend(src.rejected.iter().cloned());
        }
    }

    let mut store = FctStore::new();
    for (key, recs) in by_key {
        let merged = merge_priority(&recs);
        if recs.len() > 1 {
            let mut srcs: Vec<Source> = recs.iter().map(|r| r.provenance.source).collect();
            srcs.sort_by_key(|s| s.priority());
            let backfilled = merged
                .nutrient_sources
                .iter()
                .filter(|(_, p)| p.source != merged.provenance.source)
                .map(|(k, p)| (k.clone(), p.source))
                .collect();
            report.merged.push(MergeResolution {
                key,
                sources: srcs,
                winner: merged.provenance.source,
                backfilled,
            });
        }
        store.upsert(merged);
    }
    report.flagged_descriptors.sort();
    report.flagged_descriptors.dedup();
    report.total_records = store.len();
    Ok((store, report))
}

/// Client for an external nutrition database.
pub trait NutritionApi {
    /// `Ok(None)` when the item does not exist remotely.
    fn fetch(&self, query: &str) -> Result<Option<ApiFood>>;
}

/// Replays captured API responses; never touches the network.
#[derive(Debug, Clone, Default)]
pub struct ReplayApi {
    foods: BTreeMap<String, ApiFood>,
}

impl ReplayApi {
    pub fn from_capture(capture: ApiCapture) -> Self {
        let foods = capture
            .foods
            .into_iter()
            .map(|f| (normalize_query(&f.food_name), f))
            .collect();
        ReplayApi { foods }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_capture(serde_json::from_str(&text)?))
    }
}

impl NutritionApi for ReplayApi {
    fn fetch(&self, query: &str) -> Result<Option<ApiFood>> {
        Ok(self.foods.get(&normalize_query(query)).cloned())
    }
}

/// HTTP client for a Nutritionix-style natural-language nutrients endpoint.
/// Credentials come from `THALI_NUTRITION_APP_ID` and `THALI_NUTRITION_APP_KEY`,
/// the endpoint from `THALI_NUTRITION_URL`.
#[derive(Debug, Clone)]
pub struct HttpNutritionApi {
    pub url: String,
    pub app_id: String,
    pub app_key: String,
}

pub const DEFAULT_NUTRITION_URL: &str = "https://trackapi.nutritionix.com/v2/natural/nutrients";

impl HttpNutritionApi {
    pub fn from_env() -> Result<Self> {
        let get = |k: &str| std::env::var(k).map_err(|_| Error::Fetch(format!("environment variable {k} is not set")));
        Ok(HttpNutritionApi {
            url: std::env::var("THALI_NUTRITION_URL").unwrap_or_else(|_| DEFAULT_NUTRITION_URL.to_string()),
            app_id: get("THALI_NUTRITION_APP_ID")?,
            app_key: get("THALI_NUTRITION_APP_KEY")?,
        })
    }
}

impl NutritionApi for HttpNutritionApi {
    fn fetch(&self, query: &str) -> Result<Option<ApiFood>> {
        let resp = ureq::post(&self.url)
            .set("x-app-id", &self.app_id)
            .set("x-app-key", &self.app_key)
            .send_json(serde_json::json!({ "query": query }));
        match resp {
            Ok(r) => {
                let capture: ApiCapture = r
                    .into_json()
                    .map_err(|e| Error::Fetch(format!("bad response body: {e}")))?;
                Ok(capture.foods.into_iter().next())
            }
            Err(ureq::Error::Status(404, _)) => Ok(None),
            Err(e) => Err(Error::Fetch(e.to_string())),
        }
    }
}

pub fn normalize_query(q: &str) -> String {
    normalize_name(q)
}

/// Disk cache in front of any [`NutritionApi`], one JSON file per normalized
/// query. Misses are cached too.
pub struct CachedApi<A> {
    inner: A,
    dir: PathBuf,
}

impl<A: NutritionApi> CachedApi<A> {
    pub fn new(inner: A, dir: impl Into<PathBuf>) -> Self {
        CachedApi { inner, dir: dir.into() }
    }

    fn path_for(&self, query: &str) -> PathBuf {
        let digest = Sha256::digest(normalize_query(query).as_bytes());
        self.dir.join(format!("{}.json", hex::encode(&digest[..12])))
    }
}

impl<A: NutritionApi> NutritionApi for CachedApi<A> {
    fn fetch(&self, query: &str) -> Result<Option<ApiFood>> {
        let path = self.path_for(query);
        if let Ok(text) = fs::read_to_string(&path) {
            return Ok(serde_json::from_str(&text)?);
        }
        let got = self.inner.fetch(query)?;
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        fs::write(&path, serde_json::to_string_pretty(&got)?).map_err(|e| Error::io(&path, e))?;
        Ok(got)
    }
}

/// Returns the local record, or fetches, normalizes and inserts it with
/// external-API provenance.
pub fn lookup_or_fetch(store: &mut FctStore, key: &VariantKey, client: &dyn NutritionApi) -> Result<FoodRecord> {
    if let Some(r) = store.get(key) {
        return Ok(r.clone());
    }
    let rec = fetch_record(key, client)?;
    store.upsert(rec.clone());
    Ok(rec)
}

/// Fetches and normalizes one record from the external API without touching
/// any store. The record is keyed by `key` and stamped with the fetch time.
pub fn fetch_record(key: &VariantKey, client: &dyn NutritionApi) -> Result<FoodRecord> {
    let query = key.query_text();
    let food = client
        .fetch(&query)?
        .ok_or_else(|| Error::NotFound(format!("{query:?} in external nutrition API")))?;
    let mut src = food
        .to_source_record(1)
        .map_err(|e| Error::Fetch(format!("unusable API row for {query:?}: {e}")))?;
    // store under the requested key even when the API names it differently
    src.name = key.name.clone();
    src.form = key.form.clone();
    src.process = key.process.clone();
    src.size = key.size.clone();
    let mut rec = normalize_basis(&src)?.record;
    let stamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    rec.provenance = rec.provenance.clone().at(stamp);
    for p in rec.nutrient_sources.values_mut() {
        *p = rec.provenance.clone();
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nutrient::nid;
    use std::cell::Cell;

    fn a(s: &str) -> Amount {
        Amount::parse(s).unwrap()
    }

    fn rec(source: Source, basis: ServingBasis, nutrients: &[(&str, &str)]) -> SourceRecord {
        SourceRecord {
            source,
            source_key: "k1".into(),
            row: 1,
            name: "potato".into(),
            form: None,
            process: None,
            size: None,
            basis,
            nutrients: nutrients.iter().map(|(l, v)| (l.to_string(), a(v))).collect(),
            aliases: vec![],
            scientific_name: None,
            food_group: None,
            dietary_flags: vec![],
        }
    }

    #[test]
    fn variant_key_normalizes_tokens() {
        let k = VariantKey::new("Potatoes", Some("Chopped"), Some("boiling"), Some("medium-sized"));
        assert_eq!(k.name, "potato");
        assert_eq!(k.form.as_deref(), Some("chopped"));
        assert_eq!(k.process.as_deref(), Some("boiled"));
        assert_eq!(k.size.as_deref(), Some("medium"));
        assert!(k.unknown_descriptors().is_empty());
        let odd = VariantKey::new("potato", Some("spiralized"), None, None);
        assert_eq!(odd.unknown_descriptors(), vec![(Axis::Form, "spiralized".into())]);
    }

    #[test]
    fn normalize_basis_examples() {
        let r = rec(
            Source::Indb,
            ServingBasis::PerServing { grams: a("50") },
            &[("protein_g", "1.0")],
        );
        let n = normalize_basis(&r).unwrap();
        assert_eq!(n.record.nutrients.get_str("protein_g"), Some(&a("2")));

        let r = rec(Source::Ifct, ServingBasis::Per100g, &[("Protein", "1.6")]);
        assert_eq!(
            normalize_basis(&r).unwrap().record.nutrients.get_str("protein_g"),
            Some(&a("1.6"))
        );

        let r = rec(
            Source::Indb,
            ServingBasis::PerUnit { grams: a("30") },
            &[("energy_kcal", "90"), ("mystery", "1")],
        );
        let n = normalize_basis(&r).unwrap();
        assert_eq!(n.record.nutrients.get_str("energy_kcal"), Some(&a("300")));
        assert_eq!(n.unmapped, vec!["mystery".to_string()]);

        let r = rec(Source::Indb, ServingBasis::PerServing { grams: a("0") }, &[]);
        assert!(matches!(normalize_basis(&r), Err(Error::InvalidRecord { .. })));
    }

    #[test]
    fn unit_scale_factor_applies() {
        let r = rec(Source::Indb, ServingBasis::Per100g, &[("sfa_mg", "1500")]);
        let n = normalize_basis(&r).unwrap();
        assert_eq!(n.record.nutrients.get_str("saturated_fat_g"), Some(&a("1.5")));
    }

    fn food(source: Source, pairs: &[(&str, &str)]) -> FoodRecord {
        let v = NutrientVector::from_pairs(pairs.iter().map(|(k, x)| (*k, a(x)))).unwrap();
        FoodRecord::new(VariantKey::plain("ghee"), v, Provenance::new(source, source.as_str()))
    }

    #[test]
    fn merge_prefers_higher_priority_and_backfills() {
        let ifct = food(Source::Ifct, &[("total_fat_g", "99.5")]);
        let indb = food(Source::Indb, &[("total_fat_g", "99"), ("energy_kcal", "898")]);
        let m = merge_priority(&[indb.clone(), ifct.clone()]);
        assert_eq!(m.provenance.source, Source::Ifct);
        assert_eq!(m.nutrients.get_str("total_fat_g"), Some(&a("99.5")));
        assert_eq!(m.nutrients.get_str("energy_kcal"), Some(&a("898")));
        assert_eq!(m.nutrient_sources[&nid("energy_kcal")].source, Source::Indb);
        assert_eq!(m, merge_priority(&[ifct.clone(), indb]));
        assert_eq!(merge_priority(std::slice::from_ref(&ifct)), ifct);

        let api = food(Source::ExternalApi, &[("protein_g", "0")]);
        let m = merge_priority(&[api, ifct]);
        assert_eq!(m.provenance.source, Source::Ifct);
    }

    #[test]
    fn empty_table_is_schema_error() {
        match parse_source("", Adapter::Ifct) {
            Err(Error::SchemaMismatch { missing, .. }) => assert!(missing.contains(&"name".into())),
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(matches!(
            parse_source("code,name\n1,x\n", Adapter::Ifct),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn malformed_numbers_are_rejected_with_row_numbers() {
        let text = "code,name,form,process,size,scientific_name,food_group,local_names,Protein\n\
                    A1,potato,,,,,,,1.6\n\
                    A2,onion,,,,,,,abc\n\
                    A3,garlic,,,,,,,-2\n";
        let loaded = parse_source(text, Adapter::Ifct).unwrap();
        assert_eq!(loaded.records.len(), 1);
        let rows: Vec<usize> = loaded.rejected.iter().map(|(r, _)| *r).collect();
        assert_eq!(rows, vec![2, 3]);
    }

    #[test]
    fn duplicate_key_within_source_conflicts() {
        let text = "code,name,form,process,size,scientific_name,food_group,local_names,Protein\n\
                    A1,potato,,,,,,,1.6\n\
                    A2,Potatoes,,,,,,,1.7\n";
        let loaded = parse_source(text, Adapter::Ifct).unwrap();
        match build_fct(&[loaded]) {
            Err(Error::Conflict(msg)) => {
                assert!(msg.contains("A1") && msg.contains("A2"), "{msg}")
            }
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    struct CountingApi {
        calls: Cell<usize>,
        inner: ReplayApi,
    }

    impl NutritionApi for CountingApi {
        fn fetch(&self, query: &str) -> Result<Option<ApiFood>> {
            self.calls.set(self.calls.get() + 1);
            self.inner.fetch(query)
        }
    }

    fn boiled_potato_api() -> CountingApi {
        let capture: ApiCapture = serde_json::from_value(serde_json::json!({
            "foods": [{
                "food_name": "boiled potato",
                "serving_qty": 1,
                "serving_unit": "cup",
                "serving_weight_grams": 156,
                "nf_calories": 136.5,
                "nf_protein": 2.93,
            }]
        }))
        .unwrap();
        CountingApi {
            calls: Cell::new(0),
            inner: ReplayApi::from_capture(capture),
        }
    }

    #[test]
    fn lookup_or_fetch_paths() {
        let api = boiled_potato_api();
        let mut store = FctStore::new();
        let local = food(Source::Ifct, &[("total_fat_g", "99.5")]);
        store.upsert(local.clone());

        let got = lookup_or_fetch(&mut store, &VariantKey::plain("ghee"), &api).unwrap();
        assert_eq!(got, local);
        assert_eq!(api.calls.get(), 0);

        let key = VariantKey::new("potato", None, Some("boiled"), None);
        let got = lookup_or_fetch(&mut store, &key, &api).unwrap();
        assert_eq!(got.provenance.source, Source::ExternalApi);
        assert_eq!(got.nutrients.get_str("energy_kcal"), Some(&a("87.5")));
        assert!(store.contains(&key));
        assert_eq!(api.calls.get(), 1);

        let missing = VariantKey::plain("zzz");
        assert!(matches!(
            lookup_or_fetch(&mut store, &missing, &api),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn cached_api_hits_disk_once() {
        let dir = tempfile::tempdir().unwrap();
        let api = CachedApi::new(boiled_potato_api(), dir.path());
        assert!(api.fetch("boiled potato").unwrap().is_some());
        assert!(api.fetch("Boiled  Potatoes").unwrap().is_some());
        assert!(api.fetch("zzz").unwrap().is_none());
        assert!(api.fetch("zzz").unwrap().is_none());
        assert_eq!(api.inner.calls.get(), 2);
    }
}
