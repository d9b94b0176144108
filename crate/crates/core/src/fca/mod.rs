//! Recipe composition from the FCT, dietary tags, variant comparison and
//! profile-based recommendations.

mod profile;
mod tags;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::fct::{fetch_record, FctStore, FoodRecord, NutritionApi, VariantKey};
use crate::nutrient::{core_nutrients, nv_scale, NutrientId, NutrientTally, NutrientVector, Provenance, Source};
use crate::resolver::Resolver;
use crate::store::{HitKind, KnowledgeStore, LineStatus, Recipe, RecipeLine};
use crate::units::{WeightOptions, WeightResolution};

pub use profile::{
    compute_targets, recommend, Activity, Band, Goal, Intensity, NutrientTargets, RecallEntry, Recommendation,
    Recommendations, Sex, Stage, UserProfile, MACRO_NUTRIENTS,
};
pub use tags::{assign_dietary_tags, Clause, DietaryTag, TagAxis, TagCatalog, TagResult};

/// Serving size assumed when a recipe does not state its servings.
pub const ASSUMED_SERVING_GRAMS: i64 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Exact,
    Relaxed,
    Alias,
    Fuzzy,
    Fetched,
    Resolver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineContribution {
    pub line: usize,
    pub text: String,
    pub ingredient: String,
    pub matched_key: VariantKey,
    pub match_method: MatchMethod,
    pub weight: WeightResolution,
    /// Absolute amounts contributed by this line.
    pub nutrients: NutrientVector,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_path: Option<Vec<String>>,
    /// What on this line came from the model: `weight`, `name`, `nutrients`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub llm_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedLine {
    pub line: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingredient: Option<String>,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub recipe_id: String,
    pub title: String,
    pub fct_version: String,
    pub total: NutrientVector,
    pub per_serving: NutrientVector,
    pub per_100g: NutrientVector,
    pub total_weight_g: Amount,
    pub servings: Amount,
    pub servings_assumed: bool,
    pub completeness: BTreeMap<NutrientId, Amount>,
    pub line_breakdown: Vec<LineContribution>,
    pub unresolved: Vec<UnresolvedLine>,
    /// Resolved lines per nutrient source, plus `LLM` for lines with any
    /// model-derived part.
    pub provenance_summary: BTreeMap<String, u32>,
    pub llm_flagged: bool,
    pub dietary_tags: Vec<TagResult>,
    pub display: ReportDisplay,
}

/// Two-decimal renderings of the report's amounts for display.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDisplay {
    pub total: BTreeMap<String, String>,
    pub per_serving: BTreeMap<String, String>,
    pub per_100g: BTreeMap<String, String>,
    pub total_weight_g: String,
    pub servings: String,
}

impl CompositionReport {
    pub fn per_serving_value(&self, id: &NutrientId) -> Option<&Amount> {
        self.per_serving.get(id)
    }
}

/// Where compose looks things up.
pub struct ComposeContext<'a> {
    pub store: &'a KnowledgeStore,
    pub resolver: &'a Resolver,
    pub api: Option<&'a dyn NutritionApi>,
    pub tags: &'a TagCatalog,
}

impl<'a> ComposeContext<'a> {
    pub fn new(store: &'a KnowledgeStore, resolver: &'a Resolver) -> Self {
        ComposeContext {
            store,
            resolver,
            api: None,
            tags: TagCatalog::builtin(),
        }
    }

    pub fn with_api(mut self, api: &'a dyn NutritionApi) -> Self {
        self.api = Some(api);
        self
    }

    fn fct(&self) -> &FctStore {
        self.store.fct()
    }
}

fn descriptors_compatible(record: &VariantKey, key: &VariantKey) -> bool {
    let ok = |r: &Option<String>, k: &Option<String>| r.is_none() || r == k;
    ok(&record.form, &key.form) && ok(&record.process, &key.process) && ok(&record.size, &key.size)
}

/// Best record for a name: the most specific one whose descriptors agree
/// with `key`, else the least specific one.
fn relaxed<'f>(fct: &'f FctStore, name: &'f str, key: &VariantKey) -> Option<&'f FoodRecord> {
    let by_name: Vec<&FoodRecord> = fct.by_name(name).collect();
    let compatible = by_name
        .iter()
        .filter(|r| descriptors_compatible(&r.key, key))
        .max_by(|a, b| {
            a.key
                .descriptor_count()
                .cmp(&b.key.descriptor_count())
                .then_with(|| b.key.cmp(&a.key))
        });
    compatible.copied().or_else(|| {
        by_name.into_iter().min_by(|a, b| {
            a.key
                .descriptor_count()
                .cmp(&b.key.descriptor_count())
                .then_with(|| a.key.cmp(&b.key))
        })
    })
}

struct Found {
    record: FoodRecord,
    method: MatchMethod,
    model_name: bool,
}

fn find_record(ctx: &ComposeContext<'_>, key: &VariantKey) -> Result<Option<Found>> {
    let fct = ctx.fct();
    let found = |r: &FoodRecord, method| Found {
        record: r.clone(),
        method,
        model_name: false,
    };
    if let Some(r) = fct.get(key) {
        return Ok(Some(found(r, MatchMethod::Exact)));
    }
    if let Some(r) = relaxed(fct, &key.name, key) {
        return Ok(Some(found(r, MatchMethod::Relaxed)));
    }
    // aliases: on FCT records, then approved store aliases
    if let Some(r) = fct.by_alias(&key.name).into_iter().next() {
        let k = r.key.clone();
        return Ok(relaxed(fct, &k.name, key).map(|r| found(r, MatchMethod::Alias)));
    }
    let store_alias = ctx.store.aliases().find_map(|a| match &a.target {
        crate::store::AliasTarget::Ingredient { key: k } if a.label.eq_ignore_ascii_case(&key.name) => {
            Some(k.name.clone())
        }
        _ => None,
    });
    if let Some(name) = store_alias {
        if let Some(r) = relaxed(fct, &name, key) {
            return Ok(Some(found(r, MatchMethod::Alias)));
        }
    }
    for hit in ctx.store.search_fuzzy(&key.name, 10) {
        if hit.kind != HitKind::Ingredient {
            continue;
        }
        if let Some(r) = relaxed(fct, &hit.id, key) {
            return Ok(Some(found(r, MatchMethod::Fuzzy)));
        }
    }
    if let Some(api) = ctx.api {
        match fetch_record(key, api) {
            Ok(mut r) => {
                r.provenance.retrieved_at = None;
                return Ok(Some(Found {
                    record: r,
                    method: MatchMethod::Fetched,
                    model_name: false,
                }));
            }
            Err(Error::NotFound(_)) => {}
            Err(e) => return Err(e),
        }
    }
    // last resort: ask the resolver what the ingredient is called
    if let Some(res) = ctx.resolver.resolve_name(&key.name)? {
        if let Some(name) = res.name() {
            if name != key.name {
                if let Some(r) = relaxed(fct, name, key) {
                    return Ok(Some(Found {
                        record: r.clone(),
                        method: MatchMethod::Resolver,
                        model_name: res.is_model(),
                    }));
                }
            }
        }
    }
    Ok(None)
}

fn unresolved(idx: usize, line: &RecipeLine, code: &str, message: String) -> UnresolvedLine {
    UnresolvedLine {
        line: idx,
        text: line.text.clone(),
        ingredient: line.parsed.as_ref().map(|p| p.ingredient.clone()),
        code: code.to_string(),
        message,
    }
}

fn line_weight(ctx: &ComposeContext<'_>, line: &RecipeLine) -> Result<WeightResolution> {
    let parsed = line.parsed.as_ref().expect("caller checked");
    match ctx
        .store
        .rules()
        .resolve_weight_grams(parsed, ctx.resolver, WeightOptions::default())
    {
        Ok(w) => Ok(w),
        // an approved estimate stored on the line
        Err(e) => line.weight.clone().ok_or(e),
    }
}

/// Composition of one recipe: per line, weight then FoodRecord lookup, then
/// scale and sum. Unresolved lines are listed, not summed.
pub fn compose_recipe(recipe: &Recipe, ctx: &ComposeContext<'_>) -> Result<CompositionReport> {
    let mut tally = NutrientTally::new();
    let mut contributions = Vec::new();
    let mut unresolved_lines = Vec::new();
    let mut total_weight = Amount::zero();

    for (idx, line) in recipe.lines.iter().enumerate() {
        if line.status == LineStatus::PendingReview || line.parsed.is_none() {
            let (code, msg) = match (&line.error, line.status) {
                (_, LineStatus::PendingReview) => ("pending-review", "awaiting review of a model reading".to_string()),
                (Some(e), _) => (e.code.as_str(), e.message.clone()),
                (None, _) => ("unparsed", "line was not parsed".to_string()),
            };
            unresolved_lines.push(unresolved(idx, line, code, msg));
            continue;
        }
        let parsed = line.parsed.as_ref().expect("checked above");
        let weight = match line_weight(ctx, line) {
            Ok(w) => w,
            Err(e) => {
                unresolved_lines.push(unresolved(idx, line, e.code(), e.to_string()));
                continue;
            }
        };
        let key = parsed.variant_key();
        let found = match find_record(ctx, &key) {
            Ok(Some(f)) => f,
            Ok(None) => {
                unresolved_lines.push(unresolved(
                    idx,
                    line,
                    "no-food-record",
                    format!("no food record for {key}"),
                ));
                continue;
            }
            Err(e) => {
                unresolved_lines.push(unresolved(idx, line, e.code(), e.to_string()));
                continue;
            }
        };
        let nutrients = nv_scale(&found.record.nutrients, &weight.grams)?;
        tally.push(&nutrients);
        total_weight += &weight.grams;

        let mut llm_flags = Vec::new();
        if weight.is_model_derived() {
            llm_flags.push("weight".to_string());
        }
        if found.model_name {
            llm_flags.push("name".to_string());
        }
        if found.record.provenance.is_model() || found.record.nutrient_sources.values().any(Provenance::is_model) {
            llm_flags.push("nutrients".to_string());
        }
        let mut weight = weight;
        if let Some(p) = &mut weight.provenance {
            p.retrieved_at = None;
        }
        contributions.push(LineContribution {
            line: idx,
            text: line.text.clone(),
            ingredient: parsed.ingredient.clone(),
            matched_key: found.record.key.clone(),
            match_method: found.method,
            weight,
            nutrients,
            provenance: Provenance::new(
                found.record.provenance.source,
                found.record.provenance.source_key.clone(),
            ),
            category_path: found
                .record
                .category_path
                .clone()
                .or_else(|| ctx.store.category_path(&parsed.ingredient)),
            llm_flags,
        });
    }

    if contributions.is_empty() {
        return Err(Error::EmptyComposition(recipe.id.clone()));
    }

    let (servings, assumed) = match &recipe.servings {
        Some(s) if s.is_positive() => (s.clone(), false),
        _ => {
            let s = &total_weight / &Amount::from_int(ASSUMED_SERVING_GRAMS);
            if s.is_positive() {
                (s, true)
            } else {
                (Amount::one(), true)
            }
        }
    };
    let total = tally.total.clone();
    let per_serving = total.divide(&servings)?;
    let per_100g = if total_weight.is_positive() {
        total.divide(&(&total_weight / &Amount::from_int(100)))?
    } else {
        NutrientVector::new()
    };
    let mut completeness = BTreeMap::new();
    for info in core_nutrients() {
        let id = NutrientId::new(&info.id).expect("registered");
        completeness.insert(id.clone(), tally.completeness(&id));
    }
    for (id, c) in tally.completeness_map() {
        completeness.insert(id, c);
    }

    let mut provenance_summary: BTreeMap<String, u32> = BTreeMap::new();
    for c in &contributions {
        *provenance_summary
            .entry(c.provenance.source.as_str().to_string())
            .or_insert(0) += 1;
        if !c.llm_flags.is_empty() && c.provenance.source != Source::Llm {
            *provenance_summary.entry(Source::Llm.as_str().to_string()).or_insert(0) += 1;
        }
    }
    let llm_flagged = contributions.iter().any(|c| !c.llm_flags.is_empty());

    let display = ReportDisplay {
        total: total.rendered(),
        per_serving: per_serving.rendered(),
        per_100g: per_100g.rendered(),
        total_weight_g: total_weight.round_dp(2),
        servings: servings.round_dp(2),
    };
    let mut report = CompositionReport {
        recipe_id: recipe.id.clone(),
        title: recipe.title.clone(),
        fct_version: ctx.fct().version(),
        total,
        per_serving,
        per_100g,
        total_weight_g: total_weight,
        servings,
        servings_assumed: assumed,
        completeness,
        line_breakdown: contributions,
        unresolved: unresolved_lines,
        provenance_summary,
        llm_flagged,
        dietary_tags: Vec::new(),
        display,
    };
    report.dietary_tags = assign_dietary_tags(&report, ctx.tags);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    Asc,
    Desc,
}

impl SortOrder {
    pub fn parse(s: &str) -> Result<SortOrder> {
        match s.trim().to_lowercase().as_str() {
            "asc" | "ascending" => Ok(SortOrder::Asc),
            "desc" | "descending" => Ok(SortOrder::Desc),
            other => Err(Error::InvalidArgument(format!("unknown sort order {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub recipe_id: String,
    pub title: String,
    /// Per-serving values; `None` where unknown.
    pub values: BTreeMap<NutrientId, Option<Amount>>,
    /// `values` rounded to two decimals.
    pub display: BTreeMap<NutrientId, Option<String>>,
    pub servings_assumed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dish: String,
    pub sort_by: NutrientId,
    pub order: SortOrder,
    pub columns: Vec<NutrientId>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Aligned plain-text rendering, values rounded to two decimals.
    pub fn to_text(&self) -> String {
        let mut header = vec!["recipe".to_string()];
        header.extend(self.columns.iter().map(|c| c.to_string()));
        let mut rows = vec![header];
        for r in &self.rows {
            let mut row = vec![r.title.clone()];
            row.extend(self.columns.iter().map(|c| {
                r.values
                    .get(c)
                    .cloned()
                    .flatten()
                    .map(|v| v.round_dp(2))
                    .unwrap_or_else(|| "-".into())
            }));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in rows {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Columns shown next to the sort nutrient.
pub const COMPARE_COLUMNS: [&str; 4] = ["energy_kcal", "protein_g", "total_fat_g", "carbohydrate_g"];

/// Sorts rows by one nutrient. Unknown values go last; equal values keep
/// recipe-id order.
pub fn sort_rows(rows: &mut [ComparisonRow], nutrient: &NutrientId, order: SortOrder) {
    rows.sort_by(|a, b| a.recipe_id.cmp(&b.recipe_id));
    rows.sort_by(|a, b| {
        let va = a.values.get(nutrient).cloned().flatten();
        let vb = b.values.get(nutrient).cloned().flatten();
        match (va, vb) {
            (Some(x), Some(y)) => match order {
                SortOrder::Asc => x.cmp(&y),
                SortOrder::Desc => y.cmp(&x),
            },
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
    });
}

/// Per-serving comparison of the recipes matching `dish`.
pub fn compare_variants(
    dish: &str,
    nutrient: &NutrientId,
    order: SortOrder,
    limit: usize,
    ctx: &ComposeContext<'_>,
) -> ComparisonTable {
    let mut columns: Vec<NutrientId> = COMPARE_COLUMNS
        .iter()
        .map(|c| NutrientId::new(c).expect("registered"))
        .collect();
    if !columns.contains(nutrient) {
        columns.push(nutrient.clone());
    }
    let mut rows: Vec<ComparisonRow> = ctx
        .store
        .find_recipes(dish)
        .into_iter()
        .map(|r| match compose_recipe(r, ctx) {
            Ok(rep) => ComparisonRow {
                recipe_id: r.id.clone(),
                title: r.title.clone(),
                values: columns
                    .iter()
                    .map(|c| (c.clone(), rep.per_serving.get(c).cloned()))
                    .collect(),
                display: columns
                    .iter()
                    .map(|c| (c.clone(), rep.per_serving.get(c).map(|v| v.round_dp(2))))
                    .collect(),
                servings_assumed: rep.servings_assumed,
                error: None,
            },
            Err(e) => ComparisonRow {
                recipe_id: r.id.clone(),
                title: r.title.clone(),
                values: columns.iter().map(|c| (c.clone(), None)).collect(),
                display: columns.iter().map(|c| (c.clone(), None)).collect(),
                servings_assumed: false,
                error: Some(e.code().to_string()),
            },
        })
        .collect();
    sort_rows(&mut rows, nutrient, order);
    rows.truncate(limit);
    ComparisonTable {
        dish: dish.to_string(),
        sort_by: nutrient.clone(),
        order,
        columns,
        rows,
    }
}
