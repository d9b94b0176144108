//! Information resolver: answers translation, normalization, naming,
//! categorization, weight-estimation and latent-link questions.
//!
//! The rule backend (alias tables, vocabularies, templates, text patterns)
//! always answers first. Only on a miss is the optional model backend asked;
//! its outputs are validated against the kind's output type, cached on
//! `(kind, payload, prompt)` and marked for review.

mod backend;
mod latent;
mod recipe_doc;
mod review;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::amount::Amount;
use crate::category::CategoryTree;
use crate::error::{Error, Result};
use crate::fct::VariantKey;
use crate::nutrient::{Provenance, Source};
use crate::parser::ParsedIngredient;
use crate::vocab::{normalize_name, Vocabulary};

pub(crate) use backend::canonical_json;
pub use backend::{HttpModelBackend, ModelBackend, ModelCall, ReplayBackend, ReplayEntry, UnavailableBackend};
pub use latent::{LatentAssertion, LatentQuestion};
pub use recipe_doc::RecipeDoc;
pub use review::{ReviewItem, ReviewQueue, ReviewStatus, ReviewSubject, ReviewTarget, Transition};

/// Model estimates above this many grams for one line are rejected.
pub const MAX_ESTIMATE_GRAMS: i64 = 5000;
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequestKind {
    Translate,
    NormalizeRecipe,
    NormalizeIngredient,
    ResolveName,
    AssignCategory,
    EstimateWeight,
    InferLatent,
}

impl RequestKind {
    pub const ALL: [RequestKind; 7] = [
        RequestKind::Translate,
        RequestKind::NormalizeRecipe,
        RequestKind::NormalizeIngredient,
        RequestKind::ResolveName,
        RequestKind::AssignCategory,
        RequestKind::EstimateWeight,
        RequestKind::InferLatent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Translate => "TRANSLATE",
            RequestKind::NormalizeRecipe => "NORMALIZE_RECIPE",
            RequestKind::NormalizeIngredient => "NORMALIZE_INGREDIENT",
            RequestKind::ResolveName => "RESOLVE_NAME",
            RequestKind::AssignCategory => "ASSIGN_CATEGORY",
            RequestKind::EstimateWeight => "ESTIMATE_WEIGHT",
            RequestKind::InferLatent => "INFER_LATENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionRequest {
    pub kind: RequestKind,
    pub payload: Value,
    /// Source text excerpt the answer must come from.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub context: String,
}

impl ResolutionRequest {
    pub fn new(kind: RequestKind, payload: Value) -> Self {
        ResolutionRequest {
            kind,
            payload,
            context: String::new(),
        }
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = context.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Confidence {
    Rule,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub kind: RequestKind,
    pub payload: Value,
    pub confidence: Confidence,
    pub provenance: Provenance,
    pub needs_review: bool,
}

impl ResolutionResult {
    pub fn is_model(&self) -> bool {
        self.confidence == Confidence::Model
    }

    /// The `name` field of a RESOLVE_NAME answer.
    pub fn name(&self) -> Option<&str> {
        self.payload.get("name").and_then(Value::as_str)
    }
}

/// A model answer together with the question that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub request: ResolutionRequest,
    pub result: ResolutionResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedIngredient {
    pub ingredient: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextOut {
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NameOut {
    name: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryOut {
    category: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightOut {
    grams: Amount,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentOut {
    assertions: Vec<LatentAssertion>,
}

fn text_field<'a>(payload: &'a Value, field: &str) -> &'a str {
    payload.get(field).and_then(Value::as_str).unwrap_or("")
}

/// Checks a model output against the kind's output type. `Ok(None)` means
/// the model declined to answer.
fn validate_output(
    kind: RequestKind,
    input: &Value,
    out: &Value,
    tree: &CategoryTree,
) -> std::result::Result<Option<Value>, String> {
    if out.is_null() {
        return Ok(None);
    }
    let de = |e: serde_json::Error| e.to_string();
    match kind {
        RequestKind::Translate => {
            let o: TextOut = serde_json::from_value(out.clone()).map_err(de)?;
            Ok(Some(json!({ "text": o.text })))
        }
        RequestKind::NormalizeRecipe => {
            let doc: RecipeDoc = serde_json::from_value(out.clone()).map_err(de)?;
            doc.check().map_err(|e| e.to_string())?;
            Ok(Some(serde_json::to_value(doc).map_err(de)?))
        }
        RequestKind::NormalizeIngredient => {
            let ni: NormalizedIngredient = serde_json::from_value(out.clone()).map_err(de)?;
            if ni.ingredient.trim().is_empty() {
                return Err("empty ingredient".into());
            }
            Ok(Some(serde_json::to_value(ni).map_err(de)?))
        }
        RequestKind::ResolveName => {
            let o: NameOut = serde_json::from_value(out.clone()).map_err(de)?;
            match o.name.map(|n| normalize_name(&n)) {
                Some(n) if n.is_empty() => Err("empty name".into()),
                Some(n) => Ok(Some(json!({ "name": n }))),
                None => Ok(None),
            }
        }
        RequestKind::AssignCategory => {
            let o: CategoryOut = serde_json::from_value(out.clone()).map_err(de)?;
            match o.category {
                None => Ok(None),
                Some(c) if tree.is_leaf(&c) => Ok(Some(json!({
                    "category": c,
                    "path": tree.path_to(&c).expect("leaf has a path"),
                }))),
                Some(c) => Err(format!("{c:?} is not an existing leaf category")),
            }
        }
        RequestKind::EstimateWeight => {
            let o: WeightOut = serde_json::from_value(out.clone()).map_err(de)?;
            if !o.grams.is_positive() || o.grams > Amount::from_int(MAX_ESTIMATE_GRAMS) {
                return Err(format!("estimate {} g outside (0, {MAX_ESTIMATE_GRAMS}]", o.grams));
            }
            Ok(Some(json!({ "grams": o.grams })))
        }
        RequestKind::InferLatent => {
            let o: LatentOut = serde_json::from_value(out.clone()).map_err(de)?;
            let text = text_field(input, "text");
            let kept: Vec<LatentAssertion> = o.assertions.into_iter().filter(|a| a.is_supported_by(text)).collect();
            Ok(Some(json!({ "assertions": kept })))
        }
    }
}

/// In-memory cache of validated model outputs, optionally mirrored to a
/// directory with one JSON file per key.
#[derive(Debug, Default)]
pub struct ModelCache {
    mem: Mutex<HashMap<String, Value>>,
    dir: Option<PathBuf>,
}

impl ModelCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        ModelCache {
            mem: Mutex::new(HashMap::new()),
            dir,
        }
    }

    pub fn key(kind: RequestKind, payload: &Value, prompt_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(kind.as_str());
        h.update(b"\n");
        h.update(prompt_id);
        h.update(b"\n");
        h.update(backend::canonical_json(payload));
        hex::encode(h.finalize())
    }

    fn get(&self, key: &str) -> Option<Value> {
        if let Some(v) = self.mem.lock().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{key}.json"));
        let text = fs::read_to_string(path).ok()?;
        let entry: Value = serde_json::from_str(&text).ok()?;
        let out = entry.get("output")?.clone();
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), out.clone());
        Some(out)
    }

    fn put(&self, key: &str, kind: RequestKind, payload: &Value, out: &Value) -> Result<()> {
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), out.clone());
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{key}.json"));
            let entry = json!({ "kind": kind, "payload": payload, "output": out });
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_string_pretty(&entry)?).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mem.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Resolver {
    backend: Option<Arc<dyn ModelBackend>>,
    cache: ModelCache,
    call_lock: Mutex<()>,
    tree: CategoryTree,
    learned_aliases: RwLock<BTreeMap<String, String>>,
    learned_categories: RwLock<BTreeMap<String, String>>,
}

impl std::fmt::Debug for Resolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolver")
            .field("backend", &self.backend.as_ref().map(|b| b.id()))
            .field("cached", &self.cache.len())
            .finish()
    }
}

impl Default for Resolver {
    fn default() -> Self {
        Resolver::rules_only()
    }
}

fn rule_provenance(table: &str) -> Provenance {
    Provenance::new(Source::User, format!("rules/{table}"))
}

impl Resolver {
    pub fn rules_only() -> Self {
        Resolver {
            backend: None,
            cache: ModelCache::default(),
            call_lock: Mutex::new(()),
            tree: CategoryTree::builtin().clone(),
            learned_aliases: RwLock::new(BTreeMap::new()),
            learned_categories: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn with_backend(backend: Arc<dyn ModelBackend>) -> Self {
        Resolver {
            backend: Some(backend),
            ..Resolver::rules_only()
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache = ModelCache::new(Some(dir.into()));
        self
    }

    /// Backend from the environment: `THALI_MODEL_REPLAY` (a replay file)
    /// or `THALI_MODEL_URL` (+ `THALI_MODEL_KEY`, `THALI_MODEL_NAME`).
    /// Neither set gives a rules-only resolver. `THALI_MODEL_CACHE` sets the
    /// cache directory.
    pub fn from_env() -> Result<Self> {
        let mut r = if let Ok(path) = std::env::var("THALI_MODEL_REPLAY") {
            Resolver::with_backend(Arc::new(ReplayBackend::load(Path::new(&path))?))
        } else if std::env::var("THALI_MODEL_URL").is_ok() {
            Resolver::with_backend(Arc::new(HttpModelBackend::from_env()?))
        } else {
            Resolver::rules_only()
        };
        if let Ok(dir) = std::env::var("THALI_MODEL_CACHE") {
            r = r.with_cache_dir(dir);
        }
        Ok(r)
    }

    pub fn has_backend(&self) -> bool {
        self.backend.is_some()
    }

    pub fn category_tree(&self) -> &CategoryTree {
        &self.tree
    }

    /// Makes an approved alias available to rule-based name resolution.
    pub fn learn_alias(&self, label: &str, canonical: &str) {
        self.learned_aliases
            .write()
            .expect("alias lock")
            .insert(normalize_name(label), canonical.to_string());
    }

    pub fn learn_category(&self, name: &str, leaf: &str) {
        self.learned_categories
            .write()
            .expect("category lock")
            .insert(name.to_string(), leaf.to_string());
    }

    /// Rule-only name lookup: alias table, known ingredients, learned aliases.
    pub fn rule_name(&self, text: &str) -> Option<String> {
        if let Some(n) = Vocabulary::builtin().resolve_name(text) {
            return Some(n);
        }
        let key = normalize_name(text);
        self.learned_aliases
            .read()
            .expect("alias lock")
            .get(&key)
            .cloned()
            .or_else(|| {
                let cats = self.learned_categories.read().expect("category lock");
                cats.contains_key(&key).then_some(key)
            })
    }

    fn rule_answer(&self, req: &ResolutionRequest) -> Option<(Value, &'static str)> {
        let p = &req.payload;
        match req.kind {
            RequestKind::Translate => {
                let text = text_field(p, "text");
                if text.trim().is_empty() {
                    return Some((json!({ "text": "" }), "identity"));
                }
                self.rule_name(text).map(|n| (json!({ "text": n }), "alias-table"))
            }
            RequestKind::NormalizeRecipe => recipe_doc::rule_extract(text_field(p, "text"))
                .map(|doc| (serde_json::to_value(doc).expect("serializable"), "recipe-templates")),
            RequestKind::NormalizeIngredient => None,
            RequestKind::ResolveName => self
                .rule_name(text_field(p, "text"))
                .map(|n| (json!({ "name": n }), "alias-table")),
            RequestKind::AssignCategory => {
                let name = p
                    .get("key")
                    .and_then(|k| k.get("name"))
                    .and_then(Value::as_str)
                    .unwrap_or("");
                let leaf = Vocabulary::builtin()
                    .category_of(name)
                    .map(str::to_string)
                    .or_else(|| {
                        self.learned_categories
                            .read()
                            .expect("category lock")
                            .get(name)
                            .cloned()
                    })?;
                let path = self.tree.path_to(&leaf)?;
                Some((json!({ "category": leaf, "path": path }), "category-table"))
            }
            RequestKind::EstimateWeight => None,
            RequestKind::InferLatent => {
                let q: LatentQuestion =
                    serde_json::from_value(p.get("question").cloned().unwrap_or(Value::Null)).ok()?;
                let found = latent::rule_extract(text_field(p, "text"), q, self);
                (!found.is_empty()).then(|| (json!({ "assertions": found }), "text-patterns"))
            }
        }
    }

    /// Rule backend first, then the model backend if one is configured.
    /// `Ok(None)` when nobody could answer.
    pub fn resolve(&self, req: &ResolutionRequest) -> Result<Option<ResolutionResult>> {
        if let Some((payload, table)) = self.rule_answer(req) {
            return Ok(Some(ResolutionResult {
                kind: req.kind,
                payload,
                confidence: Confidence::Rule,
                provenance: rule_provenance(table),
                needs_review: false,
            }));
        }
        let Some(backend) = &self.backend else {
            return Ok(None);
        };
        let prompt = backend::prompt_for(req.kind);
        let key = ModelCache::key(req.kind, &req.payload, prompt.id);
        let provenance = Provenance::new(Source::Llm, format!("{}/{}", backend.id(), prompt.id));
        let wrap = |out: Value| ResolutionResult {
            kind: req.kind,
            payload: out,
            confidence: Confidence::Model,
            provenance: provenance.clone(),
            needs_review: true,
        };
        if let Some(out) = self.cache.get(&key) {
            return Ok((!out.is_null()).then(|| wrap(out)));
        }
        let _guard = self.call_lock.lock().expect("call lock");
        if let Some(out) = self.cache.get(&key) {
            return Ok((!out.is_null()).then(|| wrap(out)));
        }
        let (system, user) = prompt.render(&req.payload, &req.context);
        let mut last_problem = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            let raw = backend.complete(&ModelCall {
                kind: req.kind,
                prompt_id: prompt.id,
                system: &system,
                user: &user,
                payload: &req.payload,
                attempt,
            })?;
            match validate_output(req.kind, &req.payload, &raw, &self.tree) {
                Ok(out) => {
                    let out = out.unwrap_or(Value::Null);
                    self.cache.put(&key, req.kind, &req.payload, &out)?;
                    return Ok((!out.is_null()).then(|| wrap(out)));
                }
                Err(problem) => last_problem = problem,
            }
        }
        Err(Error::InvalidModelOutput(format!(
            "{} after {MAX_ATTEMPTS} attempts: {last_problem}",
            req.kind.as_str()
        )))
    }

    pub fn resolve_name_request(text: &str) -> ResolutionRequest {
        ResolutionRequest::new(RequestKind::ResolveName, json!({ "text": normalize_name(text) }))
    }

    pub fn resolve_name(&self, text: &str) -> Result<Option<ResolutionResult>> {
        if text.trim().is_empty() {
            return Ok(None);
        }
        self.resolve(&Self::resolve_name_request(text))
    }

    pub fn normalize_ingredient_request(text: &str) -> ResolutionRequest {
        ResolutionRequest::new(RequestKind::NormalizeIngredient, json!({ "text": text })).with_context(text)
    }

    pub fn normalize_ingredient(&self, text: &str) -> Result<Option<(NormalizedIngredient, ResolutionResult)>> {
        let req = Self::normalize_ingredient_request(text);
        match self.resolve(&req)? {
            Some(res) => {
                let ni = serde_json::from_value(res.payload.clone())
                    .map_err(|e| Error::InvalidModelOutput(e.to_string()))?;
                Ok(Some((ni, res)))
            }
            None => Ok(None),
        }
    }

    pub fn estimate_weight_request(pi: &ParsedIngredient) -> ResolutionRequest {
        let mut p = serde_json::Map::new();
        p.insert("ingredient".into(), json!(pi.ingredient));
        for (k, v) in [("form", &pi.form), ("process", &pi.process), ("size", &pi.size)] {
            if let Some(v) = v {
                p.insert(k.into(), json!(v));
            }
        }
        if let Some(q) = &pi.quantity {
            p.insert("quantity".into(), json!(q.value));
        }
        if let Some(u) = &pi.unit {
            p.insert("unit".into(), json!(u.as_str()));
        }
        ResolutionRequest::new(RequestKind::EstimateWeight, Value::Object(p)).with_context(pi.source_text.clone())
    }

    pub fn estimate_weight_result(&self, pi: &ParsedIngredient) -> Result<Option<ResolutionResult>> {
        self.resolve(&Self::estimate_weight_request(pi))
    }

    /// Model weight estimate in grams, with its provenance.
    pub fn estimate_weight(&self, pi: &ParsedIngredient) -> Result<Option<(Amount, Provenance)>> {
        Ok(self.estimate_weight_result(pi)?.and_then(|r| {
            let g: Amount = serde_json::from_value(r.payload.get("grams")?.clone()).ok()?;
            Some((g, r.provenance))
        }))
    }

    pub fn assign_category_request(&self, key: &VariantKey) -> ResolutionRequest {
        let leaves: Vec<&str> = self.tree.leaves().collect();
        ResolutionRequest::new(RequestKind::AssignCategory, json!({ "key": key, "leaves": leaves }))
    }

    /// Root-to-leaf category path. `None` path means uncategorized; a model
    /// answer comes back with the result so the caller can queue it.
    pub fn assign_category(&self, key: &VariantKey) -> Result<(Option<Vec<String>>, Option<ResolutionResult>)> {
        let res = self.resolve(&self.assign_category_request(key))?;
        let path = res
            .as_ref()
            .and_then(|r| serde_json::from_value::<Vec<String>>(r.payload.get("path")?.clone()).ok());
        Ok((path, res))
    }

    /// Translation or transliteration. Without a backend, only alias-table
    /// hits can be answered.
    pub fn translate_text(&self, text: &str, source_script: &str, target: &str) -> Result<ResolutionResult> {
        let req = ResolutionRequest::new(
            RequestKind::Translate,
            json!({ "text": text, "source_script": source_script, "target": target }),
        )
        .with_context(text);
        match self.resolve(&req)? {
            Some(r) => Ok(r),
            None if self.backend.is_none() => Err(Error::BackendUnavailable(
                "no model backend configured for translation".into(),
            )),
            None => Err(Error::InvalidModelOutput(format!(
                "model declined to translate {text:?}"
            ))),
        }
    }

    pub fn normalize_recipe_request(raw: &str) -> ResolutionRequest {
        ResolutionRequest::new(RequestKind::NormalizeRecipe, json!({ "text": raw })).with_context(raw)
    }

    /// Structured recipe from a raw document: canonical JSON and the known
    /// card/HTML templates by rule, free text through the model.
    pub fn normalize_recipe(&self, raw: &str) -> Result<(RecipeDoc, ResolutionResult)> {
        if raw.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        match self.resolve(&Self::normalize_recipe_request(raw))? {
            Some(r) => {
                let doc: RecipeDoc =
                    serde_json::from_value(r.payload.clone()).map_err(|e| Error::InvalidModelOutput(e.to_string()))?;
                doc.check()?;
                Ok((doc, r))
            }
            None => Err(Error::UnparseableRecipe(
                "no template matched and no model backend answered".into(),
            )),
        }
    }

    /// Assertions supported by spans of `source_text`.
    pub fn infer_latent_request(source_text: &str, question: LatentQuestion) -> ResolutionRequest {
        ResolutionRequest::new(
            RequestKind::InferLatent,
            json!({ "question": question, "text": source_text }),
        )
        .with_context(source_text)
    }

    pub fn infer_latent(
        &self,
        source_text: &str,
        question: LatentQuestion,
    ) -> Result<(Vec<LatentAssertion>, Option<ResolutionResult>)> {
        match self.resolve(&Self::infer_latent_request(source_text, question))? {
            Some(r) => {
                let list: Vec<LatentAssertion> = r
                    .payload
                    .get("assertions")
                    .cloned()
                    .map(serde_json::from_value)
                    .transpose()?
                    .unwrap_or_default();
                Ok((list, Some(r)))
            }
            None => Ok((Vec::new(), None)),
        }
    }
}
