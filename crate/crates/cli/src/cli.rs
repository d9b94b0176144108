use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thali_core::fca::UserProfile;
use thali_core::fct::{Adapter, VariantKey};
use thali_core::parser::parse_ingredient_line;
use thali_core::resolver::{Resolver, ReviewStatus};
use thali_core::store::KnowledgeStore;
use thali_core::units::{normalize_unit_token, UnitId, WeightOptions, GRAM};
use thali_core::Amount;

use crate::app::{self, AnalyzeRequest, CompareQuery, Engine};
use crate::error::ApiError;
use crate::service::{self, Service};

#[derive(Debug, Parser)]
#[command(
    name = "thali",
    version,
    about = "Recipe nutrient analysis over aggregated food composition tables"
)]
pub struct Cli {
    /// Knowledge store file.
    #[arg(long, global = true, env = "THALI_STORE", default_value = "thali-store.json")]
    pub store: PathBuf,

    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest recipe documents (files or directories).
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Build the food composition table from source files.
    BuildFct {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        /// Adapter for every source; inferred from file names otherwise.
        #[arg(long, value_enum)]
        adapter: Option<AdapterArg>,
    },
    /// Composition of a recipe file (`-` for stdin) without storing it.
    Analyze {
        target: String,
        /// Treat TARGET as the id of a stored recipe.
        #[arg(long)]
        recipe: bool,
    },
    /// Compare the variants of a dish by one nutrient.
    Compare {
        dish: String,
        #[arg(long, default_value = "protein_g")]
        by: String,
        #[arg(long, default_value = "desc")]
        order: String,
        #[arg(long, default_value_t = app::DEFAULT_COMPARE_LIMIT)]
        limit: usize,
    },
    /// Fuzzy search over recipes, ingredients and aliases.
    Search {
        query: String,
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
    /// Recommend stored recipes for a user profile (JSON file or `-`).
    Recommend {
        profile: String,
        #[arg(short, default_value_t = app::DEFAULT_RECOMMEND_K)]
        k: usize,
    },
    /// Parse ingredient lines into structured records.
    Parse {
        #[arg(required = true)]
        lines: Vec<String>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "THALI_ADDR", default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Review queue operations.
    Review {
        #[command(subcommand)]
        action: ReviewCommand,
    },
    /// Unit conversions and rulebook checks.
    Units {
        #[command(subcommand)]
        action: UnitsCommand,
    },
    /// Write the store, the FCT snapshot or N-Triples to PATH.
    Export {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Store)]
        format: ExportFormat,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AdapterArg {
    Ifct,
    Indb,
    Api,
}

impl From<AdapterArg> for Adapter {
    fn from(a: AdapterArg) -> Adapter {
        match a {
            AdapterArg::Ifct => Adapter::Ifct,
            AdapterArg::Indb => Adapter::Indb,
            AdapterArg::Api => Adapter::ExternalApi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Store,
    Fct,
    Triples,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    List {
        #[arg(long)]
        status: Option<String>,
    },
    Show {
        id: String,
    },
    Approve(Decision),
    Reject(Decision),
}

#[derive(Debug, Args)]
pub struct Decision {
    id: String,
    #[arg(long)]
    note: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum UnitsCommand {
    /// QTY FROM expressed in TO, e.g. `1 cup teaspoon`.
    Convert {
        quantity: String,
        from: String,
        to: String,
        /// Ingredient context for ingredient-specific rules.
        #[arg(long)]
        ingredient: Option<String>,
        /// Size descriptor (small, medium, large).
        #[arg(long)]
        size: Option<String>,
    },
    /// Check the store's rulebook for cycles, duplicates and long chains.
    Lint,
}

fn emit<T: Serialize>(json_out: bool, value: &T, text: impl FnOnce() -> String) -> Result<(), ApiError> {
    let body = if json_out {
        serde_json::to_string_pretty(value)? + "\n"
    } else {
        text()
    };
    match std::io::stdout().lock().write_all(body.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(ApiError::new("io-error", e.to_string())),
        _ => Ok(()),
    }
}

fn read_input(target: &str) -> Result<String, ApiError> {
    if target == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| ApiError::new("io-error", e.to_string()))?;
        Ok(s)
    } else {
        std::fs::read_to_string(target).map_err(|e| {
            ApiError::from(thali_core::Error::Io {
                path: PathBuf::from(target),
                source: e,
            })
        })
    }
}

fn open_store(path: &Path) -> Result<KnowledgeStore, ApiError> {
    Ok(KnowledgeStore::open(path)?)
}

fn unit(text: &str) -> Result<UnitId, ApiError> {
    normalize_unit_token(text)
        .known()
        .cloned()
        .ok_or_else(|| ApiError::new("invalid-argument", format!("unknown unit {text:?}")))
}

fn report_text(r: &thali_core::fca::CompositionReport) -> String {
    let mut out = format!(
        "{} ({})\ntotal weight {} g, servings {}{}\n",
        r.title,
        r.recipe_id,
        r.display.total_weight_g,
        r.display.servings,
        if r.servings_assumed { " (assumed)" } else { "" }
    );
    out.push_str("per serving:\n");
    for (k, v) in &r.display.per_serving {
        let c = r.completeness.get(&thali_core::nutrient::nid(k));
        let partial = c.is_some_and(|c| *c < Amount::one());
        out.push_str(&format!(
            "  {k:<22} {v:>10}{}\n",
            if partial { "  (partial)" } else { "" }
        ));
    }
    for l in &r.line_breakdown {
        out.push_str(&format!(
            "  line {}: {} -> {} ({} g, {:?}){}\n",
            l.line + 1,
            l.text,
            l.matched_key,
            l.weight.grams.round_dp(2),
            l.match_method,
            if l.llm_flags.is_empty() {
                String::new()
            } else {
                format!(" LLM: {}", l.llm_flags.join(","))
            }
        ));
    }
    for u in &r.unresolved {
        out.push_str(&format!(
            "  line {}: {} UNRESOLVED [{}] {}\n",
            u.line + 1,
            u.text,
            u.code,
            u.message
        ));
    }
    if !r.dietary_tags.is_empty() {
        let tags: Vec<String> = r
            .dietary_tags
            .iter()
            .map(|t| {
                if t.tentative {
                    format!("{}?", t.id)
                } else {
                    t.id.clone()
                }
            })
            .collect();
        out.push_str(&format!("tags: {}\n", tags.join(", ")));
    }
    out
}

pub fn run(cli: Cli) -> Result<(), ApiError> {
    let j = cli.json;
    match cli.command {
        Command::Ingest { paths } => {
            let engine = Engine::from_env()?;
            let mut store = open_store(&cli.store)?;
            store.teach(&engine.resolver);
            let docs = app::read_documents(&paths)?;
            let results = app::ingest_documents(&engine, &mut store, &docs, |_| {});
            store.save()?;
            let failed = results.iter().filter(|r| r.error.is_some()).count();
            emit(j, &results, || {
                results
                    .iter()
                    .map(|r| match (&r.outcome, &r.error) {
                        (Some(o), _) => format!("{}: {:?} {}\n", r.source, o.status, o.id),
                        (_, Some(e)) => format!("{}: error [{}] {}\n", r.source, e.code, e.message),
                        _ => String::new(),
                    })
                    .collect()
            })?;
            if failed > 0 {
                return Err(ApiError::new(
                    "unparseable-recipe",
                    format!("{failed} document(s) failed"),
                ));
            }
        }
        Command::BuildFct { sources, adapter } => {
            let mut store = open_store(&cli.store)?;
            let report = app::build_into(&mut store, &sources, adapter.map(Adapter::from))?;
            store.save()?;
            emit(j, &report, || {
                let mut s = format!("{} records, version {}\n", report.total_records, store.fct().version());
                for (src, n) in &report.records_per_source {
                    s.push_str(&format!("  {src}: {n} rows\n"));
                }
                s.push_str(&format!("  {} keys merged across sources\n", report.merged.len()));
                for (src, labels) in &report.unmapped_labels {
                    s.push_str(&format!(
                        "  unmapped {src} labels: {}\n",
                        labels.iter().cloned().collect::<Vec<_>>().join(", ")
                    ));
                }
                for (path, rows) in &report.rejected_rows {
                    for (r, why) in rows {
                        s.push_str(&format!("  rejected {path} row {r}: {why}\n"));
                    }
                }
                s
            })?;
        }
        Command::Analyze { target, recipe } => {
            let engine = Engine::from_env()?;
            let store = open_store(&cli.store)?;
            store.teach(&engine.resolver);
            let report = if recipe {
                app::composition(&engine, &store, &target)?
            } else {
                app::analyze(
                    &engine,
                    &store,
                    &AnalyzeRequest::Text {
                        text: read_input(&target)?,
                    },
                )?
            };
            emit(j, &report, || report_text(&report))?;
        }
        Command::Compare { dish, by, order, limit } => {
            let engine = Engine::from_env()?;
            let store = open_store(&cli.store)?;
            store.teach(&engine.resolver);
            let table = app::compare(
                &engine,
                &store,
                &CompareQuery {
                    dish: Some(dish),
                    nutrient: Some(by),
                    order: Some(order),
                    limit: Some(limit),
                },
            )?;
            emit(j, &table, || table.to_text())?;
        }
        Command::Search { query, limit } => {
            let store = open_store(&cli.store)?;
            let hits = store.search_fuzzy(&query, limit);
            emit(j, &hits, || {
                hits.iter()
                    .map(|h| format!("{:.3}  {:?}  {}  ({})\n", h.score, h.kind, h.name, h.id))
                    .collect()
            })?;
        }
        Command::Recommend { profile, k } => {
            let engine = Engine::from_env()?;
            let store = open_store(&cli.store)?;
            store.teach(&engine.resolver);
            let profile: UserProfile = serde_json::from_str(&read_input(&profile)?)?;
            let recs = app::recommendations(&engine, &store, &profile, Some(k))?;
            emit(j, &recs, || {
                let mut s = format!("energy target {} kcal/day\n", recs.targets.energy_kcal.round_dp(0));
                for (i, r) in recs.items.iter().enumerate() {
                    s.push_str(&format!(
                        "{}. {} (score {}): {}\n",
                        i + 1,
                        r.title,
                        r.score.round_dp(3),
                        r.rationale
                    ));
                }
                for e in &recs.excluded {
                    s.push_str(&format!("   excluded {}: {}\n", e.recipe_id, e.reason));
                }
                s
            })?;
        }
        Command::Parse { lines } => {
            let engine = Engine::from_env()?;
            let store = open_store(&cli.store)?;
            let mut parsed = lines
                .iter()
                .map(|l| parse_ingredient_line(l, &engine.resolver))
                .collect::<Result<Vec<_>, _>>()?;
            // rule-derived weights only; model estimates need review first
            for p in &mut parsed {
                if p.weight_in_grams.is_none() {
                    if let Ok(w) =
                        store
                            .rules()
                            .resolve_weight_grams(p, &Resolver::rules_only(), WeightOptions::default())
                    {
                        p.weight_in_grams = Some(w.grams);
                    }
                }
            }
            emit(j, &parsed, || {
                parsed
                    .iter()
                    .map(|p| format!("{}\n", serde_json::to_string(p).unwrap_or_default()))
                    .collect()
            })?;
        }
        Command::Serve { addr } => {
            let engine = Engine::from_env()?;
            let store = open_store(&cli.store)?;
            let svc = Service::new(engine, store);
            let rt = tokio::runtime::Runtime::new().map_err(|e| ApiError::internal(e.to_string()))?;
            rt.block_on(service::serve(svc, &addr))?;
        }
        Command::Review { action } => review(&cli.store, j, action)?,
        Command::Units { action } => units(&cli.store, j, action)?,
        Command::Export { path, format } => {
            let store = open_store(&cli.store)?;
            let summary = match format {
                ExportFormat::Store => {
                    store.export_snapshot(&path)?;
                    json!({ "path": path.display().to_string(), "format": "store", "recipes": store.recipe_count() })
                }
                ExportFormat::Fct => {
                    std::fs::write(&path, store.fct().to_snapshot_json()).map_err(|e| thali_core::Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    json!({ "path": path.display().to_string(), "format": "fct", "records": store.fct().len() })
                }
                ExportFormat::Triples => {
                    let n = store.export_triples(&path)?;
                    json!({ "path": path.display().to_string(), "format": "triples", "triples": n })
                }
            };
            emit(j, &summary, || format!("wrote {}\n", path.display()))?;
        }
    }
    Ok(())
}

fn review(store_path: &Path, j: bool, action: ReviewCommand) -> Result<(), ApiError> {
    let mut store = open_store(store_path)?;
    match action {
        ReviewCommand::List { status } => {
            let status = status.map(|s| ReviewStatus::parse(&s)).transpose()?;
            let items = store.reviews().list(status);
            emit(j, &items, || {
                items
                    .iter()
                    .map(|i| {
                        let subject = serde_json::to_value(&i.subject)
                            .ok()
                            .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(String::from))
                            .unwrap_or_default();
                        format!("{}  {:?}  {}\n", i.id, i.status, subject)
                    })
                    .collect()
            })?;
        }
        ReviewCommand::Show { id } => {
            let item = store.reviews().get(&id)?;
            emit(true, item, String::new)?;
        }
        ReviewCommand::Approve(d) => {
            let engine = Engine::from_env()?;
            store.teach(&engine.resolver);
            let changed = store.approve_review(&d.id, d.note, &engine.resolver)?;
            store.save()?;
            emit(j, &json!({ "id": d.id, "changed": changed }), || {
                format!("{} {}\n", d.id, if changed { "approved" } else { "already approved" })
            })?;
        }
        ReviewCommand::Reject(d) => {
            let changed = store.reject_review(&d.id, d.note)?;
            store.save()?;
            emit(j, &json!({ "id": d.id, "changed": changed }), || {
                format!("{} {}\n", d.id, if changed { "rejected" } else { "already rejected" })
            })?;
        }
    }
    Ok(())
}

fn units(store_path: &Path, j: bool, action: UnitsCommand) -> Result<(), ApiError> {
    let store = open_store(store_path)?;
    let rules = store.rules();
    match action {
        UnitsCommand::Convert {
            quantity,
            from,
            to,
            ingredient,
            size,
        } => {
            let q = thali_core::parser::parse_quantity(&quantity)?
                .ok_or_else(|| ApiError::new("invalid-argument", format!("no quantity in {quantity:?}")))?;
            let (from, to) = (unit(&from)?, unit(&to)?);
            let key = ingredient
                .as_deref()
                .map(|i| VariantKey::new(i, None, None, size.as_deref()));
            let value = match rules.convert_unit(&q.value, &from, &to, key.as_ref()) {
                Ok(v) => v,
                // volume to grams goes through the density table
                Err(e) => match (&key, to.as_str()) {
                    (Some(k), GRAM) => rules.grams_for(&q.value, &from, k).map(|(g, _, _)| g).ok_or(e)?,
                    _ => return Err(e.into()),
                },
            };
            let out = json!({
                "quantity": q.value,
                "from": from,
                "to": to,
                "ingredient": ingredient,
                "value": value,
            });
            emit(j, &out, || format!("{}\n", value.to_exact_string()))?;
        }
        UnitsCommand::Lint => {
            let issues = rules.lint();
            emit(j, &issues, || {
                if issues.is_empty() {
                    "no issues\n".to_string()
                } else {
                    issues.iter().map(|i| format!("{}: {}\n", i.rule, i.problem)).collect()
                }
            })?;
            if !issues.is_empty() {
                return Err(ApiError::new(
                    "rule-rejected",
                    format!("{} rulebook issue(s)", issues.len()),
                ));
            }
        }
    }
    Ok(())
}
