//! Operations shared by the command line and the HTTP service.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thali_core::fca::{
    compare_variants, compose_recipe, recommend, ComparisonTable, ComposeContext, CompositionReport, Recommendations,
    SortOrder, UserProfile,
};
use thali_core::fct::{
    build_fct, load_source, Adapter, BuildReport, CachedApi, HttpNutritionApi, NutritionApi, ReplayApi,
};
use thali_core::nutrient::{core_nutrients, NutrientId};
use thali_core::resolver::{RecipeDoc, Resolver};
use thali_core::store::{IngestOutcome, KnowledgeStore};
use thali_core::{Amount, Error};

use crate::error::ApiError;

pub type SharedApi = Arc<dyn NutritionApi + Send + Sync>;

pub const DEFAULT_COMPARE_LIMIT: usize = 20;
pub const DEFAULT_RECOMMEND_K: usize = 5;

/// The resolver and the optional external nutrition client.
pub struct Engine {
    pub resolver: Resolver,
    pub api: Option<SharedApi>,
}

impl Engine {
    pub fn new(resolver: Resolver, api: Option<SharedApi>) -> Self {
        Engine { resolver, api }
    }

    /// Rules only, no external lookups.
    pub fn offline() -> Self {
        Engine::new(Resolver::rules_only(), None)
    }

    /// Model backend from `THALI_MODEL_*`; nutrition client from
    /// `THALI_NUTRITION_REPLAY` (a capture file) or `THALI_NUTRITION_APP_ID`
    /// and `THALI_NUTRITION_APP_KEY`, cached under `THALI_NUTRITION_CACHE`.
    pub fn from_env() -> Result<Self, ApiError> {
        let resolver = Resolver::from_env()?;
        let api: Option<SharedApi> = if let Ok(p) = std::env::var("THALI_NUTRITION_REPLAY") {
            Some(Arc::new(ReplayApi::load(Path::new(&p))?))
        } else if std::env::var("THALI_NUTRITION_APP_ID").is_ok() {
            let dir = std::env::var("THALI_NUTRITION_CACHE").unwrap_or_else(|_| ".thali-cache/nutrition".into());
            Some(Arc::new(CachedApi::new(HttpNutritionApi::from_env()?, dir)))
        } else {
            None
        };
        Ok(Engine::new(resolver, api))
    }

    pub fn context<'a>(&'a self, store: &'a KnowledgeStore) -> ComposeContext<'a> {
        let ctx = ComposeContext::new(store, &self.resolver);
        match &self.api {
            Some(api) => ctx.with_api(api.as_ref()),
            None => ctx,
        }
    }
}

/// Body of an ad-hoc analysis: a recipe document, or bare ingredient lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnalyzeRequest {
    Text {
        text: String,
    },
    Lines {
        #[serde(default)]
        title: Option<String>,
        lines: Vec<String>,
        #[serde(default)]
        servings: Option<Amount>,
    },
}

pub fn analyze(engine: &Engine, store: &KnowledgeStore, req: &AnalyzeRequest) -> Result<CompositionReport, ApiError> {
    let recipe = match req {
        AnalyzeRequest::Text { text } => store.draft_recipe(text, &engine.resolver)?,
        AnalyzeRequest::Lines { title, lines, servings } => {
            let doc = RecipeDoc {
                title: title.clone().unwrap_or_else(|| "Ad-hoc recipe".into()),
                aliases: Vec::new(),
                tags: Vec::new(),
                ingredients: lines.clone(),
                instructions: String::new(),
                servings: servings.clone(),
                prep_time_min: None,
                cook_time_min: None,
                notes: String::new(),
                source_url: None,
            };
            store.draft_doc(doc, &lines.join("\n"), &engine.resolver)?
        }
    };
    Ok(compose_recipe(&recipe, &engine.context(store))?)
}

pub fn composition(engine: &Engine, store: &KnowledgeStore, id: &str) -> Result<CompositionReport, ApiError> {
    let recipe = store.recipe(id)?;
    Ok(compose_recipe(recipe, &engine.context(store))?)
}

/// Accepts a nutrient id (`protein_g`) or its bare name (`protein`,
/// `total_fat`).
pub fn resolve_nutrient(s: &str) -> Result<NutrientId, ApiError> {
    let s = s.trim().to_lowercase().replace([' ', '-'], "_");
    if let Ok(id) = NutrientId::new(&s) {
        return Ok(id);
    }
    let alias = match s.as_str() {
        "fat" => "total_fat_g",
        "carbs" | "carbohydrates" => "carbohydrate_g",
        "energy" | "calories" | "kcal" => "energy_kcal",
        "fiber" => "fibre_g",
        _ => "",
    };
    if !alias.is_empty() {
        return Ok(NutrientId::new(alias)?);
    }
    let prefix = format!("{s}_");
    core_nutrients()
        .find(|n| n.id.starts_with(&prefix))
        .map(|n| NutrientId::new(&n.id))
        .transpose()?
        .ok_or_else(|| ApiError::new("invalid-argument", format!("unknown nutrient {s:?}")))
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct CompareQuery {
    pub dish: Option<String>,
    pub nutrient: Option<String>,
    pub order: Option<String>,
    pub limit: Option<usize>,
}

pub fn compare(engine: &Engine, store: &KnowledgeStore, q: &CompareQuery) -> Result<ComparisonTable, ApiError> {
    let dish = q
        .dish
        .as_deref()
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .ok_or_else(|| ApiError::new("invalid-argument", "dish is required"))?;
    let nutrient = resolve_nutrient(q.nutrient.as_deref().unwrap_or("protein_g"))?;
    let order = match q.order.as_deref() {
        Some(o) => SortOrder::parse(o)?,
        None => SortOrder::Desc,
    };
    let limit = q.limit.unwrap_or(DEFAULT_COMPARE_LIMIT);
    Ok(compare_variants(dish, &nutrient, order, limit, &engine.context(store)))
}

pub fn recommendations(
    engine: &Engine,
    store: &KnowledgeStore,
    profile: &UserProfile,
    k: Option<usize>,
) -> Result<Recommendations, ApiError> {
    Ok(recommend(
        profile,
        &engine.context(store),
        k.unwrap_or(DEFAULT_RECOMMEND_K),
    )?)
}

/// Loads each source (adapter given or inferred from the file name), builds
/// the table and installs it in the store.
pub fn build_into(
    store: &mut KnowledgeStore,
    sources: &[PathBuf],
    adapter: Option<Adapter>,
) -> Result<BuildReport, ApiError> {
    let mut loaded = Vec::new();
    for p in sources {
        let a = match adapter {
            Some(a) => a,
            None => Adapter::infer(p).ok_or_else(|| {
                ApiError::new(
                    "invalid-argument",
                    format!("cannot tell the adapter for {}; pass --adapter", p.display()),
                )
            })?,
        };
        loaded.push(load_source(p, a)?);
    }
    let (fct, report) = build_fct(&loaded)?;
    store.set_fct(fct);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub source: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<IngestOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

/// Ingests documents in order. A failing document is reported and the rest
/// continue.
pub fn ingest_documents(
    engine: &Engine,
    store: &mut KnowledgeStore,
    docs: &[(String, String)],
    mut progress: impl FnMut(&IngestRecord),
) -> Vec<IngestRecord> {
    let mut out = Vec::new();
    for (source, text) in docs {
        let rec = match store.ingest_recipe(text, &engine.resolver) {
            Ok(o) => IngestRecord {
                source: source.clone(),
                outcome: Some(o),
                error: None,
            },
            Err(e) => IngestRecord {
                source: source.clone(),
                outcome: None,
                error: Some(e.into()),
            },
        };
        progress(&rec);
        out.push(rec);
    }
    out
}

/// Reads files, expanding directories to their files in name order.
pub fn read_documents(paths: &[PathBuf]) -> Result<Vec<(String, String)>, ApiError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    files
        .into_iter()
        .map(|f| {
            let text = fs::read_to_string(&f).map_err(|e| Error::Io {
                path: f.clone(),
                source: e,
            })?;
            Ok((f.display().to_string(), text))
        })
        .collect()
}
