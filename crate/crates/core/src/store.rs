//! The knowledge store: recipes with their verbatim sources, aliases,
//! approved category assignments, the FCT snapshot, the unit rulebook and
//! the review queue, persisted together as one JSON file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::amount::Amount;
use crate::category::CategoryTree;
use crate::error::{Error, Result};
use crate::fct::{Alias, FctStore, VariantKey};
use crate::nutrient::{Provenance, Source};
use crate::parser::{from_normalized, parse_ingredient_line_detailed, NameSource, ParsedIngredient};
use crate::resolver::{
    canonical_json, LatentAssertion, LatentQuestion, NormalizedIngredient, RecipeDoc, RequestKind, Resolver,
    ReviewItem, ReviewQueue, ReviewStatus, ReviewSubject, ReviewTarget,
};
use crate::units::{RuleStatus, Rulebook, WeightOptions, WeightResolution};
use crate::vocab::{normalize_name, Vocabulary};

pub const STORE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEARCH_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LineStatus {
    Resolved,
    Unresolved,
    PendingReview,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub code: String,
    pub message: String,
}

impl From<&Error> for LineError {
    fn from(e: &Error) -> Self {
        LineError {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeLine {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<ParsedIngredient>,
    /// Weight found at ingest. Compositions recompute it from `parsed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightResolution>,
    pub status: LineStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pending_reviews: Vec<String>,
    /// Review item that approved a model-derived fact on this line.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub approved_by: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<LineError>,
}

impl RecipeLine {
    /// A rule-parsed line with no weight yet.
    pub fn from_parsed(parsed: ParsedIngredient) -> Self {
        RecipeLine {
            text: parsed.source_text.clone(),
            parsed: Some(parsed),
            weight: None,
            status: LineStatus::Resolved,
            pending_reviews: Vec::new(),
            approved_by: Vec::new(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub aliases: Vec<Alias>,
    /// Cuisine and region tags.
    #[serde(default)]
    pub tags: Vec<String>,
    pub lines: Vec<RecipeLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servings: Option<Amount>,
    #[serde(default)]
    pub instructions: String,
    #[serde(default)]
    pub notes: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep_time_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cook_time_min: Option<u32>,
    pub source: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approved_by: Option<String>,
    /// The document exactly as ingested.
    pub source_text: String,
    pub content_hash: String,
    #[serde(default)]
    pub dietary_tags: BTreeSet<String>,
    #[serde(default)]
    pub latent_links: Vec<StoredAssertion>,
}

impl Recipe {
    /// Builds an in-memory recipe from already parsed lines. Used for ad-hoc
    /// analysis and tests; nothing is stored.
    pub fn from_lines(title: &str, lines: Vec<RecipeLine>, servings: Option<Amount>) -> Self {
        let doc = RecipeDoc {
            title: title.to_string(),
            aliases: Vec::new(),
            tags: Vec::new(),
            ingredients: lines.iter().map(|l| l.text.clone()).collect(),
            instructions: String::new(),
            servings: servings.clone(),
            prep_time_min: None,
            cook_time_min: None,
            notes: String::new(),
            source_url: None,
        };
        let hash = content_hash(&doc);
        Recipe {
            id: recipe_id(&doc.title, &hash),
            title: title.to_string(),
            aliases: Vec::new(),
            tags: Vec::new(),
            lines,
            servings,
            instructions: String::new(),
            notes: String::new(),
            prep_time_min: None,
            cook_time_min: None,
            source: Provenance::new(Source::User, "adhoc"),
            approved_by: None,
            source_text: String::new(),
            content_hash: hash,
            dietary_tags: BTreeSet::new(),
            latent_links: Vec::new(),
        }
    }

    /// Notes then instructions; latent-link spans index into this text.
    pub fn narrative(&self) -> String {
        [self.notes.as_str(), self.instructions.as_str()]
            .iter()
            .filter(|s| !s.is_empty())
            .cloned()
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn has_unresolved_lines(&self) -> bool {
        self.lines.iter().any(|l| l.status != LineStatus::Resolved)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoredAssertion {
    #[serde(flatten)]
    pub assertion: LatentAssertion,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approved_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AliasTarget {
    Ingredient { key: VariantKey },
    Recipe { id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoredAlias {
    pub target: AliasTarget,
    pub label: String,
    pub language: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approved_by: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestStatus {
    Stored,
    Duplicate,
    /// Only the model could structure the document; it waits for review.
    Parked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub id: String,
    pub status: IngestStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reviews: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AliasOutcome {
    Added,
    Exists,
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Recipe,
    Ingredient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub kind: HitKind,
    pub id: String,
    pub name: String,
    pub matched: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
struct IndexEntry {
    kind: Option<HitKind>,
    id: String,
    name: String,
    label: String,
    norm: String,
}

#[derive(Debug, Clone, Default)]
struct SearchIndex {
    entries: Vec<IndexEntry>,
}

/// Lowercase alphanumeric words separated by single spaces.
pub fn normalize_search_text(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// max(normalized Levenshtein similarity, token overlap coefficient) over
/// normalized texts, in [0, 1].
pub fn similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_search_text(a), normalize_search_text(b));
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let edit = strsim::normalized_levenshtein(&a, &b);
    let ta: BTreeSet<&str> = a.split(' ').collect();
    let tb: BTreeSet<&str> = b.split(' ').collect();
    let overlap = ta.intersection(&tb).count() as f64 / ta.len().min(tb.len()) as f64;
    edit.max(overlap)
}

fn slug(title: &str) -> String {
    let s = normalize_search_text(title).replace(' ', "-");
    if s.is_empty() {
        "recipe".into()
    } else {
        s
    }
}

fn recipe_id(title: &str, hash: &str) -> String {
    format!("{}-{}", slug(title), &hash[..8])
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hash of the structured recipe after whitespace and case normalization.
pub fn content_hash(doc: &RecipeDoc) -> String {
    let norm = serde_json::json!({
        "title": collapse(&doc.title).to_lowercase(),
        "ingredients": doc.ingredients.iter()
            .map(|l| collapse(l).to_lowercase())
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>(),
        "instructions": collapse(&doc.instructions).to_lowercase(),
        "servings": doc.servings,
    });
    hex::encode(Sha256::digest(canonical_json(&norm).as_bytes()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StoreData {
    schema_version: u32,
    recipes: BTreeMap<String, Recipe>,
    aliases: BTreeSet<StoredAlias>,
    /// Approved category leaves for ingredients the shipped table lacks.
    categories: BTreeMap<String, String>,
    fct: FctStore,
    rules: Rulebook,
    reviews: ReviewQueue,
}

impl Default for Rulebook {
    fn default() -> Self {
        Rulebook::builtin()
    }
}

pub struct KnowledgeStore {
    data: StoreData,
    index: SearchIndex,
    path: Option<PathBuf>,
    pub search_threshold: f64,
}

impl Clone for KnowledgeStore {
    fn clone(&self) -> Self {
        KnowledgeStore {
            data: self.data.clone(),
            index: self.index.clone(),
            path: self.path.clone(),
            search_threshold: self.search_threshold,
        }
    }
}

impl std::fmt::Debug for KnowledgeStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeStore")
            .field("recipes", &self.data.recipes.len())
            .field("fct", &self.data.fct.len())
            .field("reviews", &self.data.reviews.len())
            .field("path", &self.path)
            .finish()
    }
}

impl PartialEq for KnowledgeStore {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl Default for KnowledgeStore {
    fn default() -> Self {
        KnowledgeStore::new()
    }
}

impl KnowledgeStore {
    /// Empty in-memory store with the shipped rulebook.
    pub fn new() -> Self {
        let mut s = KnowledgeStore {
            data: StoreData {
                schema_version: STORE_SCHEMA_VERSION,
                ..StoreData::default()
            },
            index: SearchIndex::default(),
            path: None,
            search_threshold: DEFAULT_SEARCH_THRESHOLD,
        };
        s.reindex();
        s
    }

    /// Opens the store file, or starts an empty store bound to `path`.
    pub fn open(path: &Path) -> Result<Self> {
        let mut s = if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_json(&text)?
        } else {
            KnowledgeStore::new()
        };
        s.path = Some(path.to_path_buf());
        Ok(s)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn save(&self) -> Result<()> {
        match &self.path {
            Some(p) => self.export_snapshot(p),
            None => Err(Error::InvalidArgument("store has no file path".into())),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.data).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: StoreData = serde_json::from_str(text)?;
        if data.schema_version != STORE_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported store schema {}",
                data.schema_version
            )));
        }
        let mut s = KnowledgeStore {
            data,
            index: SearchIndex::default(),
            path: None,
            search_threshold: DEFAULT_SEARCH_THRESHOLD,
        };
        s.reindex();
        Ok(s)
    }

    /// Writes the whole store as versioned JSON, atomically.
    pub fn export_snapshot(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json())
    }

    pub fn import_snapshot(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn export_triples(&self, path: &Path) -> Result<usize> {
        let lines = self.triples();
        let mut out = String::new();
        for l in &lines {
            out.push_str(l);
            out.push('\n');
        }
        write_atomic(path, &out)?;
        Ok(lines.len())
    }

    // ---- accessors

    pub fn recipes(&self) -> impl Iterator<Item = &Recipe> {
        self.data.recipes.values()
    }

    pub fn recipe(&self, id: &str) -> Result<&Recipe> {
        self.data
            .recipes
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("recipe {id}")))
    }

    pub fn recipe_mut(&mut self, id: &str) -> Result<&mut Recipe> {
        self.data
            .recipes
            .get_mut(id)
            .ok_or_else(|| Error::NotFound(format!("recipe {id}")))
    }

    pub fn recipe_count(&self) -> usize {
        self.data.recipes.len()
    }

    pub fn fct(&self) -> &FctStore {
        &self.data.fct
    }

    /// Replaces the FCT snapshot, keeping approved category assignments.
    pub fn set_fct(&mut self, mut fct: FctStore) {
        let tree = CategoryTree::builtin();
        let updates: Vec<_> = fct
            .records()
            .filter(|r| r.category_path.is_none())
            .filter_map(|r| {
                let leaf = self.category_leaf(&r.key.name)?;
                Some((r.clone(), tree.path_to(&leaf)?))
            })
            .collect();
        for (mut r, path) in updates {
            r.category_path = Some(path);
            fct.upsert(r);
        }
        self.data.fct = fct;
        self.reindex();
    }

    pub fn rules(&self) -> &Rulebook {
        &self.data.rules
    }

    pub fn rules_mut(&mut self) -> &mut Rulebook {
        &mut self.data.rules
    }

    pub fn reviews(&self) -> &ReviewQueue {
        &self.data.reviews
    }

    pub fn aliases(&self) -> impl Iterator<Item = &StoredAlias> {
        self.data.aliases.iter()
    }

    /// Category leaf for an ingredient name: shipped table, then approved
    /// assignments.
    pub fn category_leaf(&self, name: &str) -> Option<String> {
        Vocabulary::builtin()
            .category_of(name)
            .map(str::to_string)
            .or_else(|| self.data.categories.get(name).cloned())
    }

    pub fn category_path(&self, name: &str) -> Option<Vec<String>> {
        if let Some(p) = self.data.fct.by_name(name).find_map(|r| r.category_path.clone()) {
            return Some(p);
        }
        CategoryTree::builtin().path_to(&self.category_leaf(name)?)
    }

    /// Hands approved aliases and categories to the resolver's rule backend.
    pub fn teach(&self, resolver: &Resolver) {
        for a in &self.data.aliases {
            if let AliasTarget::Ingredient { key } = &a.target {
                resolver.learn_alias(&a.label, &key.name);
            }
        }
        for (name, leaf) in &self.data.categories {
            resolver.learn_category(name, leaf);
        }
    }

    // ---- ingestion

    /// Structures a raw recipe document and stores it with its verbatim
    /// text. Compositions are not computed here.
    pub fn ingest_recipe(&mut self, raw: &str, resolver: &Resolver) -> Result<IngestOutcome> {
        if raw.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let (doc, result) = resolver.normalize_recipe(raw)?;
        if result.is_model() {
            let id = recipe_id(&doc.title, &content_hash(&doc));
            if self.data.recipes.contains_key(&id) {
                return Ok(IngestOutcome {
                    id,
                    status: IngestStatus::Duplicate,
                    reviews: Vec::new(),
                });
            }
            let rid = self.data.reviews.enqueue(
                ReviewSubject::Resolution {
                    request: Resolver::normalize_recipe_request(raw),
                    result,
                },
                ReviewTarget::NewRecipe {
                    source_text: raw.to_string(),
                },
            );
            return Ok(IngestOutcome {
                id,
                status: IngestStatus::Parked,
                reviews: vec![rid],
            });
        }
        let source = Provenance::new(Source::User, doc.source_url.clone().unwrap_or_else(|| "ingest".into()));
        let out = self.store_doc(doc, raw, source, None, resolver);
        self.reindex();
        Ok(out)
    }

    /// Parses a recipe against this store without storing it. Documents no
    /// rule template recognizes are read as one ingredient per line.
    pub fn draft_recipe(&self, raw: &str, resolver: &Resolver) -> Result<Recipe> {
        if raw.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let doc = match RecipeDoc::extract(raw) {
            Some(doc) => doc,
            None => RecipeDoc {
                title: "Ad-hoc recipe".into(),
                aliases: Vec::new(),
                tags: Vec::new(),
                ingredients: raw
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                instructions: String::new(),
                servings: None,
                prep_time_min: None,
                cook_time_min: None,
                notes: String::new(),
                source_url: None,
            },
        };
        self.draft_doc(doc, raw, resolver)
    }

    pub fn draft_doc(&self, doc: RecipeDoc, raw: &str, resolver: &Resolver) -> Result<Recipe> {
        doc.check()?;
        let mut scratch = KnowledgeStore::new();
        scratch.data.rules = self.data.rules.clone();
        scratch.data.categories = self.data.categories.clone();
        scratch.data.reviews = self.data.reviews.clone();
        let out = scratch.store_doc(doc, raw, Provenance::new(Source::User, "adhoc"), None, resolver);
        scratch.data.recipes.remove(&out.id).ok_or(Error::NotFound(out.id))
    }

    fn store_doc(
        &mut self,
        doc: RecipeDoc,
        raw: &str,
        source: Provenance,
        approved_by: Option<String>,
        resolver: &Resolver,
    ) -> IngestOutcome {
        let hash = content_hash(&doc);
        let id = recipe_id(&doc.title, &hash);
        if self.data.recipes.contains_key(&id) {
            return IngestOutcome {
                id,
                status: IngestStatus::Duplicate,
                reviews: Vec::new(),
            };
        }
        let before: BTreeSet<String> = self
            .data
            .reviews
            .list(Some(ReviewStatus::Pending))
            .iter()
            .map(|i| i.id.clone())
            .collect();

        let lines: Vec<RecipeLine> = doc
            .ingredients
            .iter()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, text)| self.build_line(&id, i, text, resolver))
            .collect();
        for l in &lines {
            if let Some(p) = &l.parsed {
                self.check_category(&p.variant_key(), resolver);
            }
        }
        let mut recipe = Recipe {
            id: id.clone(),
            title: doc.title.trim().to_string(),
            aliases: doc.aliases,
            tags: doc.tags,
            lines,
            servings: doc.servings,
            instructions: doc.instructions,
            notes: doc.notes,
            prep_time_min: doc.prep_time_min,
            cook_time_min: doc.cook_time_min,
            source,
            approved_by,
            source_text: raw.to_string(),
            content_hash: hash,
            dietary_tags: BTreeSet::new(),
            latent_links: Vec::new(),
        };
        recipe.latent_links = self.latent_links(&recipe, resolver);
        self.data.recipes.insert(id.clone(), recipe);

        let reviews = self
            .data
            .reviews
            .list(Some(ReviewStatus::Pending))
            .iter()
            .map(|i| i.id.clone())
            .filter(|i| !before.contains(i))
            .collect();
        IngestOutcome {
            id,
            status: IngestStatus::Stored,
            reviews,
        }
    }

    fn enqueue_unless_rejected(&mut self, subject: ReviewSubject, target: ReviewTarget) -> Option<String> {
        if self.data.reviews.is_rejected(&subject, &target) {
            return None;
        }
        Some(self.data.reviews.enqueue(subject, target))
    }

    fn build_line(&mut self, recipe_id: &str, idx: usize, text: &str, resolver: &Resolver) -> RecipeLine {
        let mut line = RecipeLine {
            text: text.to_string(),
            parsed: None,
            weight: None,
            status: LineStatus::Unresolved,
            pending_reviews: Vec::new(),
            approved_by: Vec::new(),
            error: None,
        };
        let target = ReviewTarget::RecipeLine {
            recipe_id: recipe_id.to_string(),
            line: idx,
        };
        let pl = match parse_ingredient_line_detailed(text, resolver) {
            Ok(pl) => pl,
            Err(e) => {
                line.error = Some(LineError::from(&e));
                return line;
            }
        };
        if let Some(tok) = &pl.unknown_unit {
            self.enqueue_unless_rejected(
                ReviewSubject::UnknownUnit {
                    token: tok.clone(),
                    line: text.to_string(),
                },
                ReviewTarget::None,
            );
        }
        match pl.name_source {
            NameSource::Model(ans) => {
                if let Some(rid) = self.enqueue_unless_rejected(
                    ReviewSubject::Resolution {
                        request: ans.request,
                        result: ans.result,
                    },
                    target,
                ) {
                    line.pending_reviews.push(rid);
                    line.status = LineStatus::PendingReview;
                } else {
                    line.error = Some(LineError {
                        code: "rejected".into(),
                        message: "model reading of this line was rejected".into(),
                    });
                }
                line
            }
            NameSource::Unresolved => {
                line.error = Some(LineError {
                    code: "unresolved-name".into(),
                    message: format!("no known ingredient in {text:?}"),
                });
                line.parsed = Some(pl.parsed);
                line
            }
            NameSource::Rule => {
                let mut parsed = pl.parsed;
                parsed.estimated_weight_in_grams = None;
                self.resolve_line_weight(&mut line, parsed, &target, resolver);
                line
            }
        }
    }

    fn resolve_line_weight(
        &mut self,
        line: &mut RecipeLine,
        parsed: ParsedIngredient,
        target: &ReviewTarget,
        resolver: &Resolver,
    ) {
        match self
            .data
            .rules
            .resolve_weight_grams(&parsed, resolver, WeightOptions::default())
        {
            Ok(w) if w.is_model_derived() => {
                // the estimate is used at compose time but not stored
                if let Ok(Some(result)) = resolver.estimate_weight_result(&parsed) {
                    if let Some(rid) = self.enqueue_unless_rejected(
                        ReviewSubject::Resolution {
                            request: Resolver::estimate_weight_request(&parsed),
                            result,
                        },
                        target.clone(),
                    ) {
                        line.pending_reviews.push(rid);
                    }
                }
                line.status = LineStatus::Resolved;
            }
            Ok(w) => {
                line.weight = Some(w);
                line.status = LineStatus::Resolved;
            }
            Err(e) => {
                line.error = Some(LineError::from(&e));
                line.status = LineStatus::Unresolved;
            }
        }
        line.parsed = Some(parsed);
    }

    fn check_category(&mut self, key: &VariantKey, resolver: &Resolver) {
        if self.category_leaf(&key.name).is_some() {
            return;
        }
        let target = ReviewTarget::Ingredient {
            key: VariantKey::plain(&key.name),
        };
        match resolver.assign_category(&VariantKey::plain(&key.name)) {
            Ok((_, Some(result))) if result.is_model() => {
                self.enqueue_unless_rejected(
                    ReviewSubject::Resolution {
                        request: resolver.assign_category_request(&VariantKey::plain(&key.name)),
                        result,
                    },
                    target,
                );
            }
            Ok((Some(_), _)) => {}
            _ => {
                self.enqueue_unless_rejected(
                    ReviewSubject::Uncategorized {
                        key: VariantKey::plain(&key.name),
                    },
                    target,
                );
            }
        }
    }

    fn latent_links(&mut self, recipe: &Recipe, resolver: &Resolver) -> Vec<StoredAssertion> {
        let text = recipe.narrative();
        let mut out = Vec::new();
        if text.trim().is_empty() {
            return out;
        }
        for q in [
            LatentQuestion::RelatedRecipes,
            LatentQuestion::RelatedIngredients,
            LatentQuestion::Substitutions,
        ] {
            let Ok((found, Some(result))) = resolver.infer_latent(&text, q) else {
                continue;
            };
            let found: Vec<_> = found.into_iter().filter(|a| a.is_supported_by(&text)).collect();
            if found.is_empty() {
                continue;
            }
            if result.is_model() {
                self.enqueue_unless_rejected(
                    ReviewSubject::Resolution {
                        request: Resolver::infer_latent_request(&text, q),
                        result,
                    },
                    ReviewTarget::Recipe {
                        recipe_id: recipe.id.clone(),
                    },
                );
            } else {
                out.extend(found.into_iter().map(|a| StoredAssertion {
                    assertion: a,
                    provenance: result.provenance.clone(),
                    approved_by: None,
                }));
            }
        }
        out.sort();
        out.dedup();
        out
    }

    // ---- aliases

    fn target_exists(&self, target: &AliasTarget) -> bool {
        match target {
            AliasTarget::Recipe { id } => self.data.recipes.contains_key(id),
            AliasTarget::Ingredient { key } => {
                self.data.fct.contains(key)
                    || self.data.fct.by_name(&key.name).next().is_some()
                    || Vocabulary::builtin().is_known_ingredient(&key.name)
                    || self.data.categories.contains_key(&key.name)
            }
        }
    }

    /// Indexes an alias for search and name resolution. Model-sourced
    /// aliases are queued for review instead.
    pub fn add_alias(
        &mut self,
        target: AliasTarget,
        label: &str,
        language: &str,
        provenance: Provenance,
        resolver: &Resolver,
    ) -> Result<AliasOutcome> {
        if label.trim().is_empty() {
            return Err(Error::InvalidArgument("alias label is empty".into()));
        }
        if !self.target_exists(&target) {
            return Err(Error::NotFound(format!("alias target {target:?}")));
        }
        let label = label.trim().to_string();
        let language = language.trim().to_lowercase();
        let exists =
            self.data.aliases.iter().any(|a| {
                a.target == target && a.label.to_lowercase() == label.to_lowercase() && a.language == language
            });
        if exists {
            return Ok(AliasOutcome::Exists);
        }
        if provenance.is_model() {
            let rt = match &target {
                AliasTarget::Ingredient { key } => ReviewTarget::Ingredient { key: key.clone() },
                AliasTarget::Recipe { id } => ReviewTarget::Recipe { recipe_id: id.clone() },
            };
            self.data.reviews.enqueue(
                ReviewSubject::Alias {
                    label,
                    language,
                    provenance,
                },
                rt,
            );
            return Ok(AliasOutcome::Pending);
        }
        self.insert_alias(target, label, language, provenance, None, resolver);
        Ok(AliasOutcome::Added)
    }

    fn insert_alias(
        &mut self,
        target: AliasTarget,
        label: String,
        language: String,
        provenance: Provenance,
        approved_by: Option<String>,
        resolver: &Resolver,
    ) {
        if let AliasTarget::Ingredient { key } = &target {
            resolver.learn_alias(&label, &key.name);
        }
        self.data.aliases.insert(StoredAlias {
            target,
            label,
            language,
            provenance,
            approved_by,
        });
        self.reindex();
    }

    // ---- review

    /// Approves a review item and ingests what it vouches for. The store is
    /// unchanged if ingestion fails.
    pub fn approve_review(&mut self, id: &str, note: Option<String>, resolver: &Resolver) -> Result<bool> {
        let item = self.data.reviews.get(id)?.clone();
        if item.status != ReviewStatus::Pending {
            return self.data.reviews.approve(id, note, |_| Ok(()));
        }
        let mut next = self.clone();
        next.apply_approval(&item, note.as_deref(), resolver)?;
        next.data.reviews.approve(id, note, |_| Ok(()))?;
        next.reindex();
        *self = next;
        self.teach(resolver);
        Ok(true)
    }

    pub fn reject_review(&mut self, id: &str, note: Option<String>) -> Result<bool> {
        let changed = self.data.reviews.reject(id, note)?;
        if changed {
            let item = self.data.reviews.get(id)?.clone();
            if let ReviewTarget::RecipeLine { recipe_id, line } = &item.target {
                if let Some(l) = self
                    .data
                    .recipes
                    .get_mut(recipe_id)
                    .and_then(|r| r.lines.get_mut(*line))
                {
                    l.pending_reviews.retain(|r| r != id);
                    if l.status == LineStatus::PendingReview && l.pending_reviews.is_empty() {
                        l.status = LineStatus::Unresolved;
                        l.error = Some(LineError {
                            code: "rejected".into(),
                            message: "model reading of this line was rejected".into(),
                        });
                    }
                }
            }
        }
        Ok(changed)
    }

    fn line_mut(&mut self, recipe_id: &str, idx: usize) -> Result<&mut RecipeLine> {
        self.recipe_mut(recipe_id)?
            .lines
            .get_mut(idx)
            .ok_or_else(|| Error::NotFound(format!("line {idx} of recipe {recipe_id}")))
    }

    fn apply_approval(&mut self, item: &ReviewItem, note: Option<&str>, resolver: &Resolver) -> Result<()> {
        let rid = item.id.clone();
        match (&item.subject, &item.target) {
            (ReviewSubject::Resolution { request, result }, target) => match request.kind {
                RequestKind::ResolveName => {
                    let label = request.payload.get("text").and_then(Value::as_str).unwrap_or("");
                    let name = result
                        .name()
                        .ok_or_else(|| Error::InvalidModelOutput("answer has no name".into()))?;
                    let key = VariantKey::plain(name);
                    self.insert_alias(
                        AliasTarget::Ingredient { key: key.clone() },
                        label.to_string(),
                        "und".into(),
                        result.provenance.clone(),
                        Some(rid.clone()),
                        resolver,
                    );
                    if let ReviewTarget::RecipeLine { recipe_id, line } = target {
                        self.reparse_line(recipe_id, *line, &rid, None, resolver)?;
                    }
                    Ok(())
                }
                RequestKind::NormalizeIngredient => {
                    let ReviewTarget::RecipeLine { recipe_id, line } = target else {
                        return Ok(());
                    };
                    let ni: NormalizedIngredient = serde_json::from_value(result.payload.clone())
                        .map_err(|e| Error::InvalidModelOutput(e.to_string()))?;
                    let text = self.line_mut(recipe_id, *line)?.text.clone();
                    let parsed = from_normalized(ni, &text)?;
                    self.reparse_line(recipe_id, *line, &rid, Some(parsed), resolver)
                }
                RequestKind::EstimateWeight => {
                    let ReviewTarget::RecipeLine { recipe_id, line } = target else {
                        return Ok(());
                    };
                    let grams: Amount = result
                        .payload
                        .get("grams")
                        .cloned()
                        .map(serde_json::from_value)
                        .transpose()?
                        .ok_or_else(|| Error::InvalidModelOutput("answer has no grams".into()))?;
                    let l = self.line_mut(recipe_id, *line)?;
                    l.weight = Some(WeightResolution {
                        estimated_grams: Some(grams.clone()),
                        grams,
                        method: crate::units::WeightMethod::ResolverEstimate,
                        rule_trace: vec!["resolver estimate (approved)".into()],
                        provenance: Some(result.provenance.clone()),
                    });
                    l.pending_reviews.retain(|r| r != &rid);
                    l.approved_by.push(rid);
                    Ok(())
                }
                RequestKind::AssignCategory => {
                    let leaf = result
                        .payload
                        .get("category")
                        .and_then(Value::as_str)
                        .ok_or_else(|| Error::InvalidModelOutput("answer has no category".into()))?;
                    let name = match target {
                        ReviewTarget::Ingredient { key } => key.name.clone(),
                        _ => request
                            .payload
                            .pointer("/key/name")
                            .and_then(Value::as_str)
                            .unwrap_or("")
                            .to_string(),
                    };
                    self.set_category(&name, leaf)
                }
                RequestKind::Translate => {
                    let label = request.payload.get("text").and_then(Value::as_str).unwrap_or("");
                    let lang = request
                        .payload
                        .get("source_script")
                        .and_then(Value::as_str)
                        .unwrap_or("und");
                    let text = result.payload.get("text").and_then(Value::as_str).unwrap_or("");
                    let name = normalize_name(text);
                    let key = match target {
                        ReviewTarget::Ingredient { key } => key.clone(),
                        _ => VariantKey::plain(&name),
                    };
                    if !self.target_exists(&AliasTarget::Ingredient { key: key.clone() }) {
                        return Err(Error::NotFound(format!("ingredient {name:?}")));
                    }
                    self.insert_alias(
                        AliasTarget::Ingredient { key },
                        label.to_string(),
                        lang.to_string(),
                        result.provenance.clone(),
                        Some(rid),
                        resolver,
                    );
                    Ok(())
                }
                RequestKind::NormalizeRecipe => {
                    let ReviewTarget::NewRecipe { source_text } = target else {
                        return Ok(());
                    };
                    let doc: RecipeDoc = serde_json::from_value(result.payload.clone())
                        .map_err(|e| Error::InvalidModelOutput(e.to_string()))?;
                    doc.check()?;
                    self.store_doc(doc, source_text, result.provenance.clone(), Some(rid), resolver);
                    Ok(())
                }
                RequestKind::InferLatent => {
                    let ReviewTarget::Recipe { recipe_id } = target else {
                        return Ok(());
                    };
                    let found: Vec<LatentAssertion> = result
                        .payload
                        .get("assertions")
                        .cloned()
                        .map(serde_json::from_value)
                        .transpose()?
                        .unwrap_or_default();
                    let recipe = self.recipe_mut(recipe_id)?;
                    let text = recipe.narrative();
                    for a in found.into_iter().filter(|a| a.is_supported_by(&text)) {
                        recipe.latent_links.push(StoredAssertion {
                            assertion: a,
                            provenance: result.provenance.clone(),
                            approved_by: Some(rid.clone()),
                        });
                    }
                    recipe.latent_links.sort();
                    recipe.latent_links.dedup();
                    Ok(())
                }
            },
            (ReviewSubject::UnitRule { rule_id, rule }, _) => match self.data.rules.rule(rule_id) {
                Some(r) if r.status == RuleStatus::Staged => self.data.rules.approve_rule(rule_id),
                Some(_) => Ok(()),
                None => self.data.rules.register_unit_rule(rule.clone(), true).map(|_| ()),
            },
            (ReviewSubject::UnknownUnit { .. }, _) => Ok(()),
            (ReviewSubject::Uncategorized { key }, _) => {
                let leaf = note
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| Error::InvalidArgument("approve with the category leaf as the note".into()))?;
                self.set_category(&key.name, leaf)
            }
            (
                ReviewSubject::Alias {
                    label,
                    language,
                    provenance,
                },
                target,
            ) => {
                let t = match target {
                    ReviewTarget::Ingredient { key } => AliasTarget::Ingredient { key: key.clone() },
                    ReviewTarget::Recipe { recipe_id } => AliasTarget::Recipe { id: recipe_id.clone() },
                    other => return Err(Error::InvalidArgument(format!("alias review with target {other:?}"))),
                };
                if !self.target_exists(&t) {
                    return Err(Error::NotFound(format!("alias target {t:?}")));
                }
                self.insert_alias(
                    t,
                    label.clone(),
                    language.clone(),
                    provenance.clone(),
                    Some(rid),
                    resolver,
                );
                Ok(())
            }
        }
    }

    fn set_category(&mut self, name: &str, leaf: &str) -> Result<()> {
        let tree = CategoryTree::builtin();
        if !tree.is_leaf(leaf) {
            return Err(Error::InvalidArgument(format!("{leaf:?} is not a category leaf")));
        }
        if name.is_empty() {
            return Err(Error::InvalidArgument("category for an empty name".into()));
        }
        self.data.categories.insert(name.to_string(), leaf.to_string());
        let path = tree.path_to(leaf);
        let mut fct = self.data.fct.clone();
        for r in self.data.fct.by_name(name) {
            let mut r = r.clone();
            r.category_path = path.clone();
            fct.upsert(r);
        }
        self.data.fct = fct;
        Ok(())
    }

    /// Re-reads a line after an approval. `parsed` is the approved reading
    /// when the model structured the whole line.
    fn reparse_line(
        &mut self,
        recipe_id: &str,
        idx: usize,
        review_id: &str,
        parsed: Option<ParsedIngredient>,
        resolver: &Resolver,
    ) -> Result<()> {
        let text = self.line_mut(recipe_id, idx)?.text.clone();
        let parsed = match parsed {
            Some(p) => p,
            None => {
                let pl = parse_ingredient_line_detailed(&text, resolver)?;
                if !matches!(pl.name_source, NameSource::Rule) {
                    return Err(Error::Conflict(format!(
                        "line {text:?} still needs a model reading after approval"
                    )));
                }
                pl.parsed
            }
        };
        let target = ReviewTarget::RecipeLine {
            recipe_id: recipe_id.to_string(),
            line: idx,
        };
        let mut line = self.line_mut(recipe_id, idx)?.clone();
        line.pending_reviews.retain(|r| r != review_id);
        line.approved_by.push(review_id.to_string());
        line.error = None;
        line.weight = None;
        let key = parsed.variant_key();
        self.resolve_line_weight(&mut line, parsed, &target, resolver);
        *self.line_mut(recipe_id, idx)? = line;
        self.check_category(&key, resolver);
        Ok(())
    }

    /// Model-sourced facts in the store that lack an approved review item.
    /// Empty in a sound store.
    pub fn unapproved_model_facts(&self) -> Vec<String> {
        let approved = |id: &Option<String>| {
            id.as_deref()
                .and_then(|i| self.data.reviews.get(i).ok())
                .is_some_and(|i| i.status == ReviewStatus::Approved)
        };
        let any_approved = |ids: &[String]| {
            ids.iter().any(|i| {
                self.data
                    .reviews
                    .get(i)
                    .is_ok_and(|it| it.status == ReviewStatus::Approved)
            })
        };
        let mut out = Vec::new();
        for a in &self.data.aliases {
            if a.provenance.is_model() && !approved(&a.approved_by) {
                out.push(format!("alias {:?}", a.label));
            }
        }
        for r in self.data.fct.records() {
            if r.provenance.is_model() || r.nutrient_sources.values().any(Provenance::is_model) {
                out.push(format!("food record {}", r.key));
            }
        }
        for r in self.data.recipes.values() {
            if r.source.is_model() && !approved(&r.approved_by) {
                out.push(format!("recipe {}", r.id));
            }
            for (i, l) in r.lines.iter().enumerate() {
                let model_weight = l.weight.as_ref().is_some_and(WeightResolution::is_model_derived);
                if model_weight && !any_approved(&l.approved_by) {
                    out.push(format!("weight of {} line {i}", r.id));
                }
                if l.parsed.as_ref().is_some_and(|p| p.estimated_weight_in_grams.is_some())
                    && !any_approved(&l.approved_by)
                {
                    out.push(format!("estimate on {} line {i}", r.id));
                }
                if l.status == LineStatus::PendingReview && l.parsed.is_some() {
                    out.push(format!("pending parse of {} line {i}", r.id));
                }
            }
            for a in &r.latent_links {
                if a.provenance.is_model() && !approved(&a.approved_by) {
                    out.push(format!("latent link in {}", r.id));
                }
            }
        }
        out
    }

    // ---- search

    fn reindex(&mut self) {
        let mut entries = Vec::new();
        let mut push = |kind: HitKind, id: &str, name: &str, label: &str| {
            let norm = normalize_search_text(label);
            if !norm.is_empty() {
                entries.push(IndexEntry {
                    kind: Some(kind),
                    id: id.to_string(),
                    name: name.to_string(),
                    label: label.to_string(),
                    norm,
                });
            }
        };
        for r in self.data.recipes.values() {
            push(HitKind::Recipe, &r.id, &r.title, &r.title);
            for a in &r.aliases {
                push(HitKind::Recipe, &r.id, &r.title, &a.label);
            }
        }
        let mut names: BTreeSet<String> = self.data.fct.names().into_iter().map(String::from).collect();
        for r in self.data.recipes.values() {
            for l in &r.lines {
                if let Some(p) = &l.parsed {
                    names.insert(p.ingredient.clone());
                }
            }
        }
        for n in &names {
            push(HitKind::Ingredient, n, n, n);
        }
        for rec in self.data.fct.records() {
            for a in &rec.aliases {
                push(HitKind::Ingredient, &rec.key.name, &rec.key.name, &a.label);
            }
        }
        for a in &self.data.aliases {
            match &a.target {
                AliasTarget::Ingredient { key } => push(HitKind::Ingredient, &key.name, &key.name, &a.label),
                AliasTarget::Recipe { id } => {
                    let title = self.data.recipes.get(id).map(|r| r.title.as_str()).unwrap_or(id);
                    push(HitKind::Recipe, id, title, &a.label)
                }
            }
        }
        self.index = SearchIndex { entries };
    }

    /// Ranked matches over recipe titles, ingredient names and aliases.
    /// Scores below the threshold are never returned.
    pub fn search_fuzzy(&self, query: &str, limit: usize) -> Vec<SearchHit> {
        let q = normalize_search_text(query);
        if q.is_empty() || limit == 0 {
            return Vec::new();
        }
        let mut best: BTreeMap<(HitKind, String), SearchHit> = BTreeMap::new();
        for e in &self.index.entries {
            let score = similarity(&q, &e.norm);
            if score < self.search_threshold {
                continue;
            }
            let kind = e.kind.expect("indexed entries have a kind");
            let slot = best.entry((kind, e.id.clone())).or_insert_with(|| SearchHit {
                kind,
                id: e.id.clone(),
                name: e.name.clone(),
                matched: e.label.clone(),
                score,
            });
            if score > slot.score {
                slot.score = score;
                slot.matched = e.label.clone();
            }
        }
        let mut hits: Vec<SearchHit> = best.into_values().collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then_with(|| a.id.cmp(&b.id))
                .then_with(|| a.kind.cmp(&b.kind))
        });
        hits.truncate(limit);
        hits
    }

    /// Recipes whose title or alias matches `dish`.
    pub fn find_recipes(&self, dish: &str) -> Vec<&Recipe> {
        self.search_fuzzy(dish, usize::MAX)
            .into_iter()
            .filter(|h| h.kind == HitKind::Recipe)
            .filter_map(|h| self.data.recipes.get(&h.id))
            .collect()
    }

    // ---- triples

    /// One N-Triples line per assertion, sorted.
    pub fn triples(&self) -> Vec<String> {
        fn iri(kind: &str, id: &str) -> String {
            let enc: String = id
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                        c.to_string()
                    } else {
                        format!("%{:02X}", c as u32)
                    }
                })
                .collect();
            format!("<urn:thali:{kind}:{enc}>")
        }
        fn pred(p: &str) -> String {
            format!("<urn:thali:p:{p}>")
        }
        fn lit(s: &str) -> String {
            let mut out = String::from("\"");
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    c => out.push(c),
                }
            }
            out.push('"');
            out
        }
        let mut t = Vec::new();
        let mut add = |s: String, p: &str, o: String| {
            let mut line = String::new();
            write!(line, "{s} {} {o} .", pred(p)).expect("string write");
            t.push(line);
        };
        for r in self.data.recipes.values() {
            let s = iri("recipe", &r.id);
            add(s.clone(), "type", pred("Recipe"));
            add(s.clone(), "title", lit(&r.title));
            for a in &r.aliases {
                add(s.clone(), "alias", format!("{}@{}", lit(&a.label), a.language));
            }
            for tag in &r.tags {
                add(s.clone(), "tag", lit(tag));
            }
            if let Some(sv) = &r.servings {
                add(s.clone(), "servings", lit(&sv.to_string()));
            }
            for l in &r.lines {
                if let (Some(p), LineStatus::Resolved) = (&l.parsed, l.status) {
                    add(s.clone(), "hasIngredient", iri("ingredient", &p.ingredient));
                }
            }
            for a in &r.latent_links {
                let rel = match a.assertion.relation {
                    LatentQuestion::RelatedRecipes => "relatedRecipe",
                    LatentQuestion::RelatedIngredients => "relatedIngredient",
                    LatentQuestion::Substitutions => "substitution",
                };
                add(
                    s.clone(),
                    rel,
                    lit(&format!("{} -> {}", a.assertion.subject, a.assertion.object)),
                );
            }
        }
        for rec in self.data.fct.records() {
            let s = iri("food", &rec.key.as_key());
            add(s.clone(), "type", pred("Food"));
            add(s.clone(), "name", lit(&rec.key.name));
            add(s.clone(), "source", lit(rec.provenance.source.as_str()));
            if let Some(path) = &rec.category_path {
                if let Some(leaf) = path.last() {
                    add(s.clone(), "category", iri("category", leaf));
                }
            }
            for (n, v) in rec.nutrients.iter() {
                add(s.clone(), n.as_str(), lit(&v.to_string()));
            }
        }
        for a in &self.data.aliases {
            let s = match &a.target {
                AliasTarget::Ingredient { key } => iri("ingredient", &key.name),
                AliasTarget::Recipe { id } => iri("recipe", id),
            };
            add(s, "alias", format!("{}@{}", lit(&a.label), a.language));
        }
        t.sort();
        t
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
