//! Dietary measurement ontology.
//!
//! Units, their aliases, and a rulebook of conversions. A rule either gives a
//! unit's weight in grams (possibly as a range, e.g. a garlic clove is 3-7 g)
//! or makes it equivalent to some multiple of another unit (1 cup = 48
//! teaspoon). Rules are global or scoped to an ingredient variant pattern; the
//! most specific matching rule shadows the others. Every unit chain ends at
//! one of two base units, `gram` or `milliliter`; volume converts to mass
//! through the density table, which defaults to 1 g/ml.
//!
//! Ranges resolve to their midpoint, or to the low/high endpoint when the
//! ingredient's size is small/large.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::fct::VariantKey;
use crate::nutrient::{Provenance, Source};
use crate::parser::ParsedIngredient;
use crate::resolver::Resolver;
use crate::vocab::singularize;

const UNITS_CSV: &str = include_str!("../data/units.csv");
const RULES_CSV: &str = include_str!("../data/unit_rules.csv");
const DENSITIES_CSV: &str = include_str!("../data/densities.csv");
const DEFAULTS_CSV: &str = include_str!("../data/default_amounts.csv");

pub const MAX_HOPS: usize = 5;
pub const GRAM: &str = "gram";
pub const MILLILITER: &str = "milliliter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Mass,
    Volume,
    Count,
}

/// Canonical unit token: lowercase, singular, full name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(String);

impl UnitId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Looks up a canonical unit name in the builtin registry.
    pub fn new(id: &str) -> Result<UnitId> {
        match UNIT_REGISTRY.kinds.get(id) {
            Some(_) => Ok(UnitId(id.to_string())),
            None => Err(Error::InvalidArgument(format!("unregistered unit {id:?}"))),
        }
    }

    pub fn kind(&self) -> UnitKind {
        UNIT_REGISTRY.kinds[self.0.as_str()]
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Result of unit normalization. Unknown tokens are a value, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnitToken {
    Known(UnitId),
    Unknown(String),
}

impl UnitToken {
    pub fn as_str(&self) -> &str {
        match self {
            UnitToken::Known(u) => u.as_str(),
            UnitToken::Unknown(s) => s,
        }
    }

    pub fn known(&self) -> Option<&UnitId> {
        match self {
            UnitToken::Known(u) => Some(u),
            UnitToken::Unknown(_) => None,
        }
    }
}

struct UnitRegistry {
    kinds: HashMap<String, UnitKind>,
    aliases: HashMap<String, String>,
}

static UNIT_REGISTRY: Lazy<UnitRegistry> = Lazy::new(|| {
    let mut kinds = HashMap::new();
    let mut aliases = HashMap::new();
    for row in csv::Reader::from_reader(UNITS_CSV.as_bytes()).records() {
        let row = row.expect("units.csv is well formed");
        let unit = row[0].to_string();
        let kind = match &row[1] {
            "mass" => UnitKind::Mass,
            "volume" => UnitKind::Volume,
            _ => UnitKind::Count,
        };
        for a in row[2].split('|').map(str::trim).filter(|a| !a.is_empty()) {
            let prev = aliases.insert(a.to_lowercase(), unit.clone());
            assert!(prev.is_none(), "duplicate unit alias {a}");
        }
        kinds.insert(unit, kind);
    }
    UnitRegistry { kinds, aliases }
});

/// Maps a unit token to its canonical unit: case-folded, trailing dots
/// dropped, de-pluralized and alias-mapped. The single letters `T` and `t`
/// are case-sensitive (tablespoon and teaspoon).
pub fn normalize_unit_token(text: &str) -> UnitToken {
    let trimmed = text.trim();
    match trimmed {
        "T" | "T." | "Tb" | "Tb." => return UnitToken::Known(UnitId("tablespoon".into())),
        "t" | "t." => return UnitToken::Known(UnitId("teaspoon".into())),
        _ => {}
    }
    let reg = &*UNIT_REGISTRY;
    let lowered: String = trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let cleaned = lowered.trim_end_matches('.').trim().to_string();
    let lookup = |s: &str| -> Option<UnitId> {
        if reg.kinds.contains_key(s) {
            return Some(UnitId(s.to_string()));
        }
        reg.aliases.get(s).map(|u| UnitId(u.clone()))
    };
    if cleaned.is_empty() {
        return UnitToken::Unknown(text.to_string());
    }
    if let Some(u) = lookup(&cleaned) {
        return UnitToken::Known(u);
    }
    // plural forms: "tablespoons", "large spoons", "tbsps."
    let mut words: Vec<String> = cleaned.split(' ').map(String::from).collect();
    if let Some(last) = words.last_mut() {
        *last = singularize(last);
    }
    let singular = words.join(" ");
    if let Some(u) = lookup(&singular) {
        return UnitToken::Known(u);
    }
    UnitToken::Unknown(text.to_string())
}

/// Pattern over variant keys. Unset descriptor fields match anything.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyPattern {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
}

impl KeyPattern {
    pub fn matches(&self, key: &VariantKey) -> bool {
        let field = |p: &Option<String>, k: &Option<String>| p.is_none() || p == k;
        self.name == key.name
            && field(&self.form, &key.form)
            && field(&self.process, &key.process)
            && field(&self.size, &key.size)
    }

    fn specificity(&self) -> usize {
        1 + [&self.form, &self.process, &self.size]
            .iter()
            .filter(|f| f.is_some())
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Ingredient(KeyPattern),
}

impl Scope {
    pub fn matches(&self, ctx: Option<&VariantKey>) -> bool {
        match (self, ctx) {
            (Scope::Global, _) => true,
            (Scope::Ingredient(p), Some(k)) => p.matches(k),
            (Scope::Ingredient(_), None) => false,
        }
    }

    fn specificity(&self) -> usize {
        match self {
            Scope::Global => 0,
            Scope::Ingredient(p) => p.specificity(),
        }
    }

    fn name(&self) -> Option<&str> {
        match self {
            Scope::Global => None,
            Scope::Ingredient(p) => Some(&p.name),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Global => f.write_str("global"),
            Scope::Ingredient(p) => {
                f.write_str(&p.name)?;
                for (k, v) in [("form", &p.form), ("process", &p.process), ("size", &p.size)] {
                    if let Some(v) = v {
                        write!(f, ";{k}={v}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    /// `global`, `garlic`, or `garlic;form=minced;size=large`.
    fn from_str(s: &str) -> Result<Scope> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("global") || s == "*" {
            return Ok(Scope::Global);
        }
        let mut parts = s.split(';');
        let name = parts.next().unwrap_or("").trim().to_lowercase();
        let mut p = KeyPattern {
            name,
            form: None,
            process: None,
            size: None,
        };
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("bad scope part {part:?}")))?;
            let v = Some(v.trim().to_lowercase());
            match k.trim() {
                "form" => p.form = v,
                "process" => p.process = v,
                "size" => p.size = v,
                other => return Err(Error::InvalidArgument(format!("unknown scope field {other:?}"))),
            }
        }
        Ok(Scope::Ingredient(p))
    }
}

/// A gram weight that may be a range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramRange {
    pub low: Amount,
    pub high: Amount,
}

impl GramRange {
    pub fn point(g: Amount) -> Self {
        GramRange {
            low: g.clone(),
            high: g,
        }
    }

    /// Midpoint, or an endpoint selected by the size descriptor.
    pub fn pick(&self, size: Option<&str>) -> (Amount, &'static str) {
        if self.low == self.high {
            return (self.low.clone(), "point");
        }
        match size {
            Some("small") => (self.low.clone(), "low"),
            Some("large") => (self.high.clone(), "high"),
            _ => (Amount::midpoint(&self.low, &self.high), "midpoint"),
        }
    }
}

impl fmt::Display for GramRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.low == self.high {
            write!(f, "{}", self.low)
        } else {
            write!(f, "{}-{}", self.low, self.high)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleValue {
    Grams(GramRange),
    Equivalent { factor: Amount, unit: UnitId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleStatus {
    Active,
    Staged,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRule {
    pub unit: UnitId,
    pub scope: Scope,
    pub value: RuleValue,
    pub status: RuleStatus,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl UnitRule {
    pub fn id(&self) -> String {
        format!("{}@{}", self.unit, self.scope)
    }

    pub fn grams(unit: &str, scope: Scope, low: Amount, high: Amount) -> Result<Self> {
        Ok(UnitRule {
            unit: UnitId::new(unit)?,
            scope,
            value: RuleValue::Grams(GramRange { low, high }),
            status: RuleStatus::Active,
            provenance: Provenance::new(Source::User, "rulebook"),
            note: String::new(),
        })
    }

    pub fn equivalent(unit: &str, scope: Scope, factor: Amount, other: &str) -> Result<Self> {
        Ok(UnitRule {
            unit: UnitId::new(unit)?,
            scope,
            value: RuleValue::Equivalent {
                factor,
                unit: UnitId::new(other)?,
            },
            status: RuleStatus::Active,
            provenance: Provenance::new(Source::User, "rulebook"),
            note: String::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub key: KeyPattern,
    pub grams_per_ml: Amount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WeightMethod {
    Explicit,
    UnitRule,
    VolumeDensity,
    ResolverEstimate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightResolution {
    pub grams: Amount,
    pub method: WeightMethod,
    pub rule_trace: Vec<String>,
    /// A model estimate kept next to a rule-derived weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_grams: Option<Amount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl WeightResolution {
    pub fn is_model_derived(&self) -> bool {
        self.method == WeightMethod::ResolverEstimate || self.provenance.as_ref().is_some_and(Provenance::is_model)
    }
}

/// Chain from a unit down to a base unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitChain {
    pub factor: Amount,
    pub base: UnitId,
    pub trace: Vec<String>,
    pub ingredient_specific: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WeightOptions {
    /// Also ask the model for an estimate when a rule already resolved the
    /// weight; the estimate is stored alongside.
    pub estimate_alongside: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintIssue {
    pub rule: String,
    pub problem: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultAmount {
    pub quantity: Amount,
    pub unit: UnitId,
}

/// The ontology's rule store. Cheap to clone; callers that share one across
/// threads wrap it in an `Arc` and clone-on-write to register rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rulebook {
    rules: BTreeMap<String, UnitRule>,
    densities: Vec<DensityEntry>,
    defaults: BTreeMap<String, DefaultAmount>,
    /// Staged (unreviewed) rules are used only in permissive mode.
    pub permissive: bool,
}

#[derive(Deserialize)]
struct RuleRow {
    unit: String,
    scope: String,
    grams_per_unit: String,
    equivalent: String,
    status: String,
    #[serde(default)]
    note: String,
}

fn parse_range(s: &str) -> Result<GramRange> {
    let s = s.trim();
    // a range like "3-7"; "1/2" and plain decimals are points
    if let Some((lo, hi)) = s.split_once('-').filter(|(lo, _)| !lo.is_empty()) {
        let low = Amount::parse(lo).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let high = Amount::parse(hi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if low > high {
            return Err(Error::InvalidArgument(format!("inverted range {s}")));
        }
        return Ok(GramRange { low, high });
    }
    Ok(GramRange::point(
        Amount::parse(s).map_err(|e| Error::InvalidArgument(e.to_string()))?,
    ))
}

fn parse_equivalent(s: &str) -> Result<(Amount, UnitId)> {
    let (num, unit) = s
        .trim()
        .split_once(' ')
        .ok_or_else(|| Error::InvalidArgument(format!("bad equivalence {s:?}")))?;
    let factor = Amount::parse(num).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let unit = normalize_unit_token(unit)
        .known()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("unknown unit in {s:?}")))?;
    Ok((factor, unit))
}

static BUILTIN_RULEBOOK: Lazy<Rulebook> =
    Lazy::new(|| Rulebook::builtin_uncached().expect("shipped rulebook is valid"));

impl Rulebook {
    pub fn empty() -> Self {
        Rulebook {
            rules: BTreeMap::new(),
            densities: Vec::new(),
            defaults: BTreeMap::new(),
            permissive: false,
        }
    }

    pub fn builtin() -> Rulebook {
        BUILTIN_RULEBOOK.clone()
    }

    fn builtin_uncached() -> Result<Rulebook> {
        let mut rb = Rulebook::parse_rules(RULES_CSV)?;
        for row in csv::Reader::from_reader(DENSITIES_CSV.as_bytes()).records() {
            let row = row?;
            let scope: Scope = row[0].parse()?;
            let Scope::Ingredient(key) = scope else {
                return Err(Error::InvalidArgument("global density entry".into()));
            };
            let g = Amount::parse(&row[1]).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            rb.add_density(DensityEntry { key, grams_per_ml: g })?;
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(DEFAULTS_CSV.as_bytes());
        for row in rdr.records() {
            let row = row?;
            let quantity = Amount::parse(&row[1]).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let unit = UnitId::new(&row[2])?;
            rb.defaults.insert(row[0].to_string(), DefaultAmount { quantity, unit });
        }
        Ok(rb)
    }

    /// Parses a rulebook file (`unit,scope,grams_per_unit,equivalent,status,note`).
    /// Rules are registered in file order, so the file must already satisfy
    /// the duplicate and cycle checks.
    pub fn parse_rules(text: &str) -> Result<Rulebook> {
        let mut rb = Rulebook::empty();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        for (i, row) in rdr.deserialize::<RuleRow>().enumerate() {
            let row = row?;
            let unit = normalize_unit_token(&row.unit)
                .known()
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("row {}: unknown unit {:?}", i + 1, row.unit)))?;
            let value = match (row.grams_per_unit.is_empty(), row.equivalent.is_empty()) {
                (false, true) => RuleValue::Grams(parse_range(&row.grams_per_unit)?),
                (true, false) => {
                    let (factor, unit) = parse_equivalent(&row.equivalent)?;
                    RuleValue::Equivalent { factor, unit }
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "row {}: exactly one of grams_per_unit and equivalent must be set",
                        i + 1
                    )))
                }
            };
            let status = match row.status.as_str() {
                "active" | "" => RuleStatus::Active,
                "staged" => RuleStatus::Staged,
                "disabled" => RuleStatus::Disabled,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "row {}: unknown status {other:?}",
                        i + 1
                    )))
                }
            };
            let rule = UnitRule {
                unit,
                scope: row.scope.parse()?,
                value,
                status,
                provenance: Provenance::new(Source::User, "rulebook"),
                note: row.note,
            };
            rb.insert_checked(rule)?;
        }
        Ok(rb)
    }

    pub fn load(path: &Path) -> Result<Rulebook> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rb = Rulebook::parse_rules(&text)?;
        let base = Rulebook::builtin();
        rb.densities = base.densities;
        rb.defaults = base.defaults;
        Ok(rb)
    }

    /// Serializes the rules back to the tabular file format.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["unit", "scope", "grams_per_unit", "equivalent", "status", "note"])
            .expect("in-memory write");
        for r in self.rules.values() {
            let (g, e) = match &r.value {
                RuleValue::Grams(range) => (range.to_string(), String::new()),
                RuleValue::Equivalent { factor, unit } => (String::new(), format!("{factor} {unit}")),
            };
            let status = match r.status {
                RuleStatus::Active => "active",
                RuleStatus::Staged => "staged",
                RuleStatus::Disabled => "disabled",
            };
            w.write_record([r.unit.as_str(), &r.scope.to_string(), &g, &e, status, &r.note])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn rules(&self) -> impl Iterator<Item = &UnitRule> {
        self.rules.values()
    }

    pub fn rule(&self, id: &str) -> Option<&UnitRule> {
        self.rules.get(id)
    }

    pub fn add_density(&mut self, entry: DensityEntry) -> Result<()> {
        if !entry.grams_per_ml.is_positive() {
            return Err(Error::InvalidArgument("density must be positive".into()));
        }
        self.densities.retain(|d| d.key != entry.key);
        self.densities.push(entry);
        Ok(())
    }

    pub fn set_default(&mut self, ingredient: &str, quantity: Amount, unit: UnitId) {
        self.defaults
            .insert(ingredient.to_string(), DefaultAmount { quantity, unit });
    }

    pub fn default_for(&self, ingredient: &str) -> Option<&DefaultAmount> {
        self.defaults.get(ingredient)
    }

    fn usable(&self, r: &UnitRule) -> bool {
        match r.status {
            RuleStatus::Active => true,
            RuleStatus::Staged => self.permissive,
            RuleStatus::Disabled => false,
        }
    }

    /// Most specific usable rule for `unit` in `ctx`.
    pub fn applicable_rule(&self, unit: &UnitId, ctx: Option<&VariantKey>) -> Option<&UnitRule> {
        self.rules
            .values()
            .filter(|r| &r.unit == unit && self.usable(r) && r.scope.matches(ctx))
            .max_by(|a, b| {
                a.scope
                    .specificity()
                    .cmp(&b.scope.specificity())
                    // deterministic tie-break: lexically smaller id wins
                    .then_with(|| b.id().cmp(&a.id()))
            })
    }

    /// Follows rules from `unit` to a base unit.
    pub fn chain(&self, unit: &UnitId, ctx: Option<&VariantKey>) -> Option<UnitChain> {
        let size = ctx.and_then(|k| k.size.as_deref());
        let mut factor = Amount::one();
        let mut trace = Vec::new();
        let mut current = unit.clone();
        let mut specific = false;
        for _ in 0..=MAX_HOPS {
            if current.as_str() == GRAM || current.as_str() == MILLILITER {
                return Some(UnitChain {
                    factor,
                    base: current,
                    trace,
                    ingredient_specific: specific,
                });
            }
            let rule = self.applicable_rule(&current, ctx)?;
            specific |= rule.scope != Scope::Global;
            match &rule.value {
                RuleValue::Grams(range) => {
                    let (g, how) = range.pick(size);
                    trace.push(if how == "point" {
                        rule.id()
                    } else {
                        format!("{} ({how} of {range} g)", rule.id())
                    });
                    factor = factor * g;
                    current = UnitId(GRAM.into());
                }
                RuleValue::Equivalent { factor: f, unit } => {
                    trace.push(rule.id());
                    factor = factor * f;
                    current = unit.clone();
                }
            }
        }
        None
    }

    /// `quantity` of `from` expressed in `to`. Both must reduce to the same
    /// base unit in this context.
    pub fn convert_unit(
        &self,
        quantity: &Amount,
        from: &UnitId,
        to: &UnitId,
        ctx: Option<&VariantKey>,
    ) -> Result<Amount> {
        let no_path = || Error::NoConversion {
            from: from.to_string(),
            to: to.to_string(),
            context: ctx.map(|k| k.to_string()),
        };
        if from == to {
            return Ok(quantity.clone());
        }
        let a = self.chain(from, ctx).ok_or_else(no_path)?;
        let b = self.chain(to, ctx).ok_or_else(no_path)?;
        if a.base != b.base {
            return Err(no_path());
        }
        Ok(quantity * &a.factor / &b.factor)
    }

    pub fn density_for(&self, ctx: Option<&VariantKey>) -> (Amount, String) {
        let best = ctx.and_then(|k| {
            self.densities
                .iter()
                .filter(|d| d.key.matches(k))
                .max_by_key(|d| d.key.specificity())
        });
        match best {
            Some(d) => (
                d.grams_per_ml.clone(),
                format!("density {} g/ml ({})", d.grams_per_ml, d.key.name),
            ),
            None => (Amount::one(), "density 1 g/ml (default)".to_string()),
        }
    }

    /// Weight of `quantity` `unit` of the ingredient, from rules only.
    pub fn grams_for(
        &self,
        quantity: &Amount,
        unit: &UnitId,
        ctx: &VariantKey,
    ) -> Option<(Amount, WeightMethod, Vec<String>)> {
        let chain = self.chain(unit, Some(ctx))?;
        let mut trace = chain.trace;
        if chain.base.as_str() == GRAM {
            return Some((quantity * &chain.factor, WeightMethod::UnitRule, trace));
        }
        let (density, note) = self.density_for(Some(ctx));
        trace.push(note);
        let method = if chain.ingredient_specific {
            WeightMethod::UnitRule
        } else {
            WeightMethod::VolumeDensity
        };
        Some((quantity * &chain.factor * &density, method, trace))
    }

    /// Validates and adds a rule. Reviewed rules become active; others are
    /// staged until approved. Returns the rule id.
    pub fn register_unit_rule(&mut self, mut rule: UnitRule, reviewed: bool) -> Result<String> {
        rule.status = if reviewed {
            RuleStatus::Active
        } else {
            RuleStatus::Staged
        };
        self.insert_checked(rule)
    }

    pub fn approve_rule(&mut self, id: &str) -> Result<()> {
        let rule = self
            .rules
            .get_mut(id)
            .ok_or_else(|| Error::NotFound(format!("unit rule {id}")))?;
        rule.status = RuleStatus::Active;
        Ok(())
    }

    fn insert_checked(&mut self, rule: UnitRule) -> Result<String> {
        let id = rule.id();
        if let Some(existing) = self.rules.get(&id) {
            if existing.status != RuleStatus::Disabled {
                return Err(Error::RuleRejected(format!("duplicate rule {id}")));
            }
        }
        match &rule.value {
            RuleValue::Grams(r) => {
                if !r.low.is_positive() {
                    return Err(Error::RuleRejected(format!("{id}: grams must be positive")));
                }
            }
            RuleValue::Equivalent { factor, unit } => {
                if !factor.is_positive() {
                    return Err(Error::RuleRejected(format!("{id}: factor must be positive")));
                }
                if unit == &rule.unit {
                    return Err(Error::RuleRejected(format!("{id}: cycle {id} -> {id}")));
                }
                if let Some(path) = self.find_cycle(&rule) {
                    return Err(Error::RuleRejected(format!("cycle: {}", path.join(" -> "))));
                }
            }
        }
        self.rules.insert(id.clone(), rule);
        if let Some(issue) = self.hop_issue(&id) {
            self.rules.remove(&id);
            return Err(Error::RuleRejected(issue));
        }
        Ok(id)
    }

    /// Equivalence edges that could apply together with `scope`.
    fn edges_compatible_with<'a>(
        &'a self,
        scope: &'a Scope,
    ) -> impl Iterator<Item = (&'a UnitId, &'a UnitId, String)> + 'a {
        self.rules.values().filter_map(move |r| {
            if r.status == RuleStatus::Disabled {
                return None;
            }
            let compatible = match (scope.name(), r.scope.name()) {
                (_, None) => true,
                (None, Some(_)) => true,
                (Some(a), Some(b)) => a == b,
            };
            match (&r.value, compatible) {
                (RuleValue::Equivalent { unit, .. }, true) => Some((&r.unit, unit, r.id())),
                _ => None,
            }
        })
    }

    fn find_cycle(&self, rule: &UnitRule) -> Option<Vec<String>> {
        let RuleValue::Equivalent { unit: target, .. } = &rule.value else {
            return None;
        };
        let edges: Vec<(&UnitId, &UnitId, String)> = self.edges_compatible_with(&rule.scope).collect();
        // depth-first search from the target back to the new rule's unit
        let mut stack: Vec<(UnitId, Vec<String>)> = vec![(target.clone(), vec![rule.id()])];
        let mut seen = std::collections::HashSet::new();
        while let Some((u, path)) = stack.pop() {
            if u == rule.unit {
                return Some(path);
            }
            if !seen.insert(u.clone()) {
                continue;
            }
            for (from, to, id) in &edges {
                if *from == &u {
                    let mut p = path.clone();
                    p.push(id.clone());
                    stack.push(((*to).clone(), p));
                }
            }
        }
        None
    }

    fn hop_issue(&self, id: &str) -> Option<String> {
        let rule = self.rules.get(id)?;
        let mut hops = 0;
        let mut current = rule.unit.clone();
        let ctx = match &rule.scope {
            Scope::Global => None,
            Scope::Ingredient(p) => Some(VariantKey {
                name: p.name.clone(),
                form: p.form.clone(),
                process: p.process.clone(),
                size: p.size.clone(),
            }),
        };
        let saved_perm = true;
        loop {
            if current.as_str() == GRAM || current.as_str() == MILLILITER {
                return None;
            }
            if hops >= MAX_HOPS {
                return Some(format!("{id}: more than {MAX_HOPS} hops to a base unit"));
            }
            let next = self
                .rules
                .values()
                .filter(|r| {
                    r.unit == current
                        && r.status != RuleStatus::Disabled
                        && (saved_perm || r.status == RuleStatus::Active)
                        && r.scope.matches(ctx.as_ref())
                })
                .max_by_key(|r| r.scope.specificity());
            {
                let r = next?;
                match &r.value {
                    RuleValue::Grams(_) => return None,
                    RuleValue::Equivalent { unit, .. } => current = unit.clone(),
                }
            }
            hops += 1;
        }
    }

    /// Duplicate, cycle and hop-limit check over the whole rulebook.
    pub fn lint(&self) -> Vec<LintIssue> {
        let mut issues = Vec::new();
        for (id, r) in &self.rules {
            if let RuleValue::Equivalent { unit, .. } = &r.value {
                if !UNIT_REGISTRY.kinds.contains_key(unit.as_str()) {
                    issues.push(LintIssue {
                        rule: id.clone(),
                        problem: format!("unknown target unit {unit}"),
                    });
                }
                let mut rest = self.clone();
                let own = rest.rules.remove(id).expect("present");
                if let Some(path) = rest.find_cycle(&own) {
                    issues.push(LintIssue {
                        rule: id.clone(),
                        problem: format!("cycle: {}", path.join(" -> ")),
                    });
                }
            }
            if let Some(p) = self.hop_issue(id) {
                issues.push(LintIssue {
                    rule: id.clone(),
                    problem: p,
                });
            }
        }
        issues
    }

    /// Resolves a parsed line's weight in grams: explicit weight, then unit
    /// rules (ingredient-specific shadowing global, volume through density),
    /// then configured defaults for measureless staples, then the resolver's
    /// estimate.
    pub fn resolve_weight_grams(
        &self,
        pi: &ParsedIngredient,
        resolver: &Resolver,
        opts: WeightOptions,
    ) -> Result<WeightResolution> {
        let ctx = pi.variant_key();
        if let Some(w) = &pi.weight_in_grams {
            return Ok(self.with_alongside(
                WeightResolution {
                    grams: w.clone(),
                    method: WeightMethod::Explicit,
                    rule_trace: vec!["explicit weight".into()],
                    estimated_grams: None,
                    provenance: None,
                },
                pi,
                resolver,
                opts,
            ));
        }

        let mut measure: Option<(Amount, UnitId, Vec<String>, bool)> = match (&pi.quantity, &pi.unit) {
            (Some(q), Some(u)) => Some((q.value.clone(), u.clone(), vec![], false)),
            (Some(q), None) => Some((
                q.value.clone(),
                UnitId("piece".into()),
                vec!["implicit unit piece".into()],
                false,
            )),
            (None, Some(u)) => Some((Amount::one(), u.clone(), vec!["implicit quantity 1".into()], false)),
            (None, None) => None,
        };
        if measure.is_none() {
            if let Some(d) = self.default_for(&ctx.name) {
                measure = Some((
                    d.quantity.clone(),
                    d.unit.clone(),
                    vec![format!("defaulted: {} {} of {}", d.quantity, d.unit, ctx.name)],
                    true,
                ));
            }
        }
        if let Some((q, unit, mut trace, defaulted)) = measure {
            if let Some((grams, method, rule_trace)) = self.grams_for(&q, &unit, &ctx) {
                trace.extend(rule_trace);
                let method = if defaulted { WeightMethod::UnitRule } else { method };
                return Ok(self.with_alongside(
                    WeightResolution {
                        grams,
                        method,
                        rule_trace: trace,
                        estimated_grams: None,
                        provenance: None,
                    },
                    pi,
                    resolver,
                    opts,
                ));
            }
        }

        match resolver.estimate_weight(pi)? {
            Some((grams, provenance)) => Ok(WeightResolution {
                estimated_grams: Some(grams.clone()),
                grams,
                method: WeightMethod::ResolverEstimate,
                rule_trace: vec!["resolver estimate".into()],
                provenance: Some(provenance),
            }),
            None => Err(Error::UnresolvedWeight(pi.source_text.clone())),
        }
    }

    fn with_alongside(
        &self,
        mut w: WeightResolution,
        pi: &ParsedIngredient,
        resolver: &Resolver,
        opts: WeightOptions,
    ) -> WeightResolution {
        if opts.estimate_alongside {
            if let Ok(Some((g, _))) = resolver.estimate_weight(pi) {
                w.estimated_grams = Some(g);
            }
        }
        w
    }
}

/// `convert_unit` against the shipped rulebook.
pub fn convert_unit(quantity: &Amount, from: &UnitId, to: &UnitId, ctx: Option<&VariantKey>) -> Result<Amount> {
    BUILTIN_RULEBOOK.convert_unit(quantity, from, to, ctx)
}
