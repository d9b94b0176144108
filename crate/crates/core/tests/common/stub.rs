//! A model backend stub that answers every request kind.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use thali_core::fca::{compose_recipe, ComposeContext};
use thali_core::resolver::{ModelBackend, ModelCall, RequestKind, Resolver};
use thali_core::store::{IngestStatus, KnowledgeStore};
use thali_core::units::WeightMethod;
use thali_core::Result;

/// Answers every request kind with a fixed, schema-valid output.
pub struct Stub {
    pub calls: AtomicUsize,
}

impl ModelBackend for Stub {
    fn id(&self) -> String {
        "stub".into()
    }

    fn complete(&self, call: &ModelCall<'_>) -> Result<Value> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = call.payload.get("text").and_then(Value::as_str).unwrap_or("");
        Ok(match call.kind {
            RequestKind::Translate => json!({ "text": text }),
            RequestKind::NormalizeRecipe => json!({
                "title": "Moong Dal Cheela",
                "ingredients": ["1 cup moong dal", "1 green chilli", "salt to taste"],
                "servings": "2"
            }),
            RequestKind::NormalizeIngredient => {
                json!({ "ingredient": "fenugreek leaf", "quantity": "2", "unit": "tablespoon" })
            }
            RequestKind::ResolveName => json!({ "name": "fenugreek leaf" }),
            RequestKind::AssignCategory => json!({ "category": "Herb" }),
            RequestKind::EstimateWeight => json!({ "grams": "150" }),
            RequestKind::InferLatent => json!({ "assertions": [] }),
        })
    }
}

pub fn stub_resolver() -> (Resolver, Arc<Stub>) {
    let stub = Arc::new(Stub {
        calls: AtomicUsize::new(0),
    });
    (Resolver::with_backend(stub.clone()), stub)
}

pub fn card() -> String {
    std::fs::read_to_string(super::fixtures().join("replay/chana_bowl.txt")).unwrap()
}

pub const BLOB: &str = "my nani made this with moong dal soaked overnight and ground with a chilli, then fried thin";

/// Every object in `v` that claims model provenance, with its JSON path.
pub fn model_facts(v: &Value, path: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            if m.get("source").and_then(Value::as_str) == Some("LLM") {
                out.push(path.to_string());
            }
            for (k, x) in m {
                model_facts(x, &format!("{path}/{k}"), out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                model_facts(x, &format!("{path}/{i}"), out);
            }
        }
        _ => {}
    }
}

pub fn outside_reviews(store: &KnowledgeStore) -> Vec<String> {
    let v: Value = serde_json::from_str(&store.to_json()).unwrap();
    let mut out = Vec::new();
    model_facts(&v, "", &mut out);
    out.retain(|p| !p.starts_with("/reviews"));
    out
}

pub fn ingest(resolver: &Resolver) -> (KnowledgeStore, String) {
    let mut store = KnowledgeStore::new();
    store.set_fct(super::fixture_fct());
    let card = store.ingest_recipe(&card(), resolver).unwrap();
    assert_eq!(card.status, IngestStatus::Stored);
    let blob = store.ingest_recipe(BLOB, resolver).unwrap();
    assert_eq!(blob.status, IngestStatus::Parked);
    (store, card.id)
}

/// The stubbed scenario end to end: nothing model-derived is stored before
/// approval, and every estimated weight is flagged in the report.
pub fn check_firewall() {
    let (resolver, stub) = stub_resolver();
    let (store, id) = ingest(&resolver);
    assert!(stub.calls.load(Ordering::SeqCst) > 0, "the stub was never consulted");
    assert!(
        store.unapproved_model_facts().is_empty(),
        "{:?}",
        store.unapproved_model_facts()
    );
    assert_eq!(outside_reviews(&store), Vec::<String>::new());
    assert!(store.recipes().all(|r| r.title != "Moong Dal Cheela"));
    let r = compose_recipe(store.recipe(&id).unwrap(), &ComposeContext::new(&store, &resolver)).unwrap();
    let estimated = r
        .line_breakdown
        .iter()
        .filter(|l| l.weight.method == WeightMethod::ResolverEstimate)
        .count();
    assert!(estimated > 0);
    for l in &r.line_breakdown {
        let flagged = l.llm_flags.iter().any(|f| f == "weight");
        assert_eq!(
            flagged,
            l.weight.method == WeightMethod::ResolverEstimate,
            "line {}",
            l.line
        );
    }
    assert!(r.llm_flagged);
}
