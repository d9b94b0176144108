//! Nutrient identifiers, per-100 g nutrient vectors and provenance.
//!
//! A [`NutrientVector`] only holds values that some source actually asserted.
//! A missing nutrient is unknown, not zero; sums over several vectors keep a
//! per-nutrient count of contributors in a [`NutrientTally`] so callers can
//! report how complete each total is.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::error::{Error, Result};

const NUTRIENTS_CSV: &str = include_str!("../data/nutrients.csv");
const NUTRIENT_MAP_CSV: &str = include_str!("../data/nutrient_map.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Core,
    Extended,
}

#[derive(Debug, Clone, Deserialize)]
pub struct NutrientInfo {
    pub id: String,
    pub name: String,
    pub unit: String,
    pub tier: Tier,
}

/// The registered canonical nutrient list.
pub static REGISTRY: Lazy<Vec<NutrientInfo>> = Lazy::new(|| {
    csv::Reader::from_reader(NUTRIENTS_CSV.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<NutrientInfo>, _>>()
        .expect("nutrients.csv is well formed")
});

static REGISTRY_INDEX: Lazy<HashMap<&'static str, &'static NutrientInfo>> =
    Lazy::new(|| REGISTRY.iter().map(|n| (n.id.as_str(), n)).collect());

pub fn core_nutrients() -> impl Iterator<Item = &'static NutrientInfo> {
    REGISTRY.iter().filter(|n| n.tier == Tier::Core)
}

/// Canonical nutrient token such as `protein_g`. The unit is the suffix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct NutrientId(String);

impl NutrientId {
    pub fn new(id: &str) -> Result<Self> {
        if REGISTRY_INDEX.contains_key(id) {
            Ok(NutrientId(id.to_string()))
        } else {
            Err(Error::UnknownNutrient {
                origin: "canonical".into(),
                label: id.to_string(),
            })
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn info(&self) -> &'static NutrientInfo {
        REGISTRY_INDEX[self.0.as_str()]
    }
}

/// Shorthand for registered ids known at compile time. Panics on an
/// unregistered id.
pub fn nid(id: &str) -> NutrientId {
    NutrientId::new(id).unwrap_or_else(|_| panic!("unregistered nutrient id {id}"))
}

impl fmt::Display for NutrientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NutrientId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        NutrientId::new(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Ifct,
    Indb,
    ExternalApi,
    Llm,
    User,
}

impl Source {
    /// Merge priority; lower wins.
    pub fn priority(self) -> u8 {
        match self {
            Source::Ifct => 0,
            Source::Indb => 1,
            Source::ExternalApi => 2,
            Source::Llm => 3,
            Source::User => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Ifct => "IFCT",
            Source::Indb => "INDB",
            Source::ExternalApi => "EXTERNAL_API",
            Source::Llm => "LLM",
            Source::User => "USER",
        }
    }

    pub fn parse(s: &str) -> Result<Source> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IFCT" => Ok(Source::Ifct),
            "INDB" => Ok(Source::Indb),
            "EXTERNAL_API" | "EXTERNAL-API" | "API" => Ok(Source::ExternalApi),
            "LLM" => Ok(Source::Llm),
            "USER" => Ok(Source::User),
            other => Err(Error::InvalidArgument(format!("unknown source {other:?}"))),
        }
    }

    pub fn is_model(self) -> bool {
        self == Source::Llm
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub source_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_at: Option<String>,
}

impl Provenance {
    pub fn new(source: Source, source_key: impl Into<String>) -> Self {
        Provenance {
            source,
            source_key: source_key.into(),
            retrieved_at: None,
        }
    }

    pub fn at(mut self, timestamp: impl Into<String>) -> Self {
        self.retrieved_at = Some(timestamp.into());
        self
    }

    pub fn is_model(&self) -> bool {
        self.source.is_model()
    }
}

/// Nutrient amounts per 100 g of edible portion, or absolute amounts once
/// scaled with [`nv_scale`]; the caller tracks which.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NutrientVector {
    values: BTreeMap<NutrientId, Amount>,
}

impl NutrientVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects negative amounts.
    pub fn insert(&mut self, id: NutrientId, amount: Amount) -> Result<()> {
        if amount.is_negative() {
            return Err(Error::InvalidArgument(format!("negative amount {amount} for {id}")));
        }
        self.values.insert(id, amount);
        Ok(())
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Amount)>) -> Result<Self> {
        let mut v = NutrientVector::new();
        for (id, a) in pairs {
            v.insert(NutrientId::new(id)?, a)?;
        }
        Ok(v)
    }

    pub fn get(&self, id: &NutrientId) -> Option<&Amount> {
        self.values.get(id)
    }

    pub fn get_str(&self, id: &str) -> Option<&Amount> {
        NutrientId::new(id).ok().and_then(|n| self.values.get(&n))
    }

    pub fn is_known(&self, id: &NutrientId) -> bool {
        self.values.contains_key(id)
    }

    pub fn known(&self) -> BTreeSet<NutrientId> {
        self.values.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NutrientId, &Amount)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Divides every amount by `divisor`, e.g. a whole-recipe total into
    /// per-serving amounts.
    pub fn divide(&self, divisor: &Amount) -> Result<NutrientVector> {
        if !divisor.is_positive() {
            return Err(Error::InvalidArgument(format!(
                "divisor must be positive, got {divisor}"
            )));
        }
        Ok(NutrientVector {
            values: self.values.iter().map(|(k, v)| (k.clone(), v / divisor)).collect(),
        })
    }

    /// Presentation form: each amount rounded half-even to two decimals.
    pub fn rendered(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), v.round_dp(2)))
            .collect()
    }
}

/// Scales a per-100 g vector to the absolute amounts in `grams` of food.
pub fn nv_scale(v: &NutrientVector, grams: &Amount) -> Result<NutrientVector> {
    if grams.is_negative() {
        return Err(Error::InvalidArgument(format!(
            "grams must be non-negative, got {grams}"
        )));
    }
    let factor = grams / &Amount::from_int(100);
    Ok(NutrientVector {
        values: v.values.iter().map(|(k, a)| (k.clone(), a * &factor)).collect(),
    })
}

/// Per-nutrient sum over the union of known sets. Completeness is tracked by
/// [`NutrientTally`], not here.
pub fn nv_add(a: &NutrientVector, b: &NutrientVector) -> NutrientVector {
    let mut out = a.clone();
    for (k, v) in &b.values {
        out.values
            .entry(k.clone())
            .and_modify(|x| *x += v)
            .or_insert_with(|| v.clone());
    }
    out
}

/// A running sum of contributions with per-nutrient contributor counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NutrientTally {
    pub total: NutrientVector,
    pub known_counts: BTreeMap<NutrientId, u32>,
    pub contributors: u32,
}

impl NutrientTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn of(v: &NutrientVector) -> Self {
        let mut t = NutrientTally::new();
        t.push(v);
        t
    }

    pub fn push(&mut self, v: &NutrientVector) {
        self.total = nv_add(&self.total, v);
        for k in v.values.keys() {
            *self.known_counts.entry(k.clone()).or_insert(0) += 1;
        }
        self.contributors += 1;
    }

    pub fn merge(&self, other: &NutrientTally) -> NutrientTally {
        let mut known_counts = self.known_counts.clone();
        for (k, c) in &other.known_counts {
            *known_counts.entry(k.clone()).or_insert(0) += c;
        }
        NutrientTally {
            total: nv_add(&self.total, &other.total),
            known_counts,
            contributors: self.contributors + other.contributors,
        }
    }

    /// Share of contributors with a known value for `id`, in [0, 1].
    pub fn completeness(&self, id: &NutrientId) -> Amount {
        if self.contributors == 0 {
            return Amount::zero();
        }
        let known = self.known_counts.get(id).copied().unwrap_or(0);
        Amount::ratio(known as i64, self.contributors as i64)
    }

    pub fn is_partial(&self, id: &NutrientId) -> bool {
        let c = self.completeness(id);
        c.is_positive() && c < Amount::one()
    }

    pub fn completeness_map(&self) -> BTreeMap<NutrientId, Amount> {
        self.known_counts
            .keys()
            .map(|k| (k.clone(), self.completeness(k)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct NutrientMapping {
    pub source: String,
    pub source_label: String,
    pub canonical_id: String,
    pub scale_factor: Amount,
}

/// Versioned source-label to canonical-id table.
#[derive(Debug, Clone)]
pub struct NutrientMap {
    pub version: String,
    entries: HashMap<(Source, String), (NutrientId, Amount)>,
}

fn label_key(label: &str) -> String {
    label.trim().to_lowercase()
}

impl NutrientMap {
    pub fn parse(text: &str) -> Result<Self> {
        let version = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("#version="))
            .unwrap_or("0")
            .trim()
            .to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut entries = HashMap::new();
        for row in rdr.deserialize::<NutrientMapping>() {
            let row = row?;
            let source = Source::parse(&row.source)?;
            let id = NutrientId::new(&row.canonical_id)?;
            if !row.scale_factor.is_positive() {
                return Err(Error::InvalidArgument(format!(
                    "non-positive scale factor for {}",
                    row.source_label
                )));
            }
            let key = (source, label_key(&row.source_label));
            if entries.insert(key, (id, row.scale_factor)).is_some() {
                return Err(Error::Conflict(format!(
                    "duplicate mapping for {} {:?}",
                    source, row.source_label
                )));
            }
        }
        Ok(NutrientMap { version, entries })
    }

    pub fn builtin() -> &'static NutrientMap {
        &BUILTIN_MAP
    }

    /// Canonical id and the factor converting the source's unit to the
    /// canonical unit. Model and user sources may use canonical ids directly.
    pub fn lookup(&self, source: Source, label: &str) -> Result<(NutrientId, Amount)> {
        if label.trim().is_empty() {
            return Err(Error::InvalidArgument("empty nutrient label".into()));
        }
        if let Some((id, f)) = self.entries.get(&(source, label_key(label))) {
            return Ok((id.clone(), f.clone()));
        }
        if matches!(source, Source::Llm | Source::User) {
            if let Ok(id) = NutrientId::new(label.trim()) {
                return Ok((id, Amount::one()));
            }
        }
        Err(Error::UnknownNutrient {
            origin: source.to_string(),
            label: label.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

static BUILTIN_MAP: Lazy<NutrientMap> =
    Lazy::new(|| NutrientMap::parse(NUTRIENT_MAP_CSV).expect("nutrient_map.csv is well formed"));

pub fn canonical_nutrient_id(source: Source, source_label: &str) -> Result<NutrientId> {
    NutrientMap::builtin().lookup(source, source_label).map(|(id, _)| id)
}
