#![allow(dead_code)]

pub mod diet;
pub mod oracle;
pub mod stub;
pub mod tag_cases;

use std::fs;
use std::path::PathBuf;

use thali_core::fct::{build_fct, load_source, Adapter, FctStore, LoadedSource};
use thali_core::resolver::Resolver;
use thali_core::store::KnowledgeStore;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn source_paths() -> Vec<(PathBuf, Adapter)> {
    let dir = fixtures().join("sources");
    vec![
        (dir.join("sample_ifct.csv"), Adapter::Ifct),
        (dir.join("sample_indb.csv"), Adapter::Indb),
        (dir.join("sample_api.json"), Adapter::ExternalApi),
    ]
}

pub fn sources() -> Vec<LoadedSource> {
    source_paths()
        .iter()
        .map(|(p, a)| load_source(p, *a).expect("fixture source loads"))
        .collect()
}

pub fn fixture_fct() -> FctStore {
    build_fct(&sources()).expect("fixture table builds").0
}

pub fn recipe_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(fixtures().join("recipes"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
}

/// Fixture table plus all fixture recipes, ingested with rules only.
pub fn fixture_store(resolver: &Resolver) -> KnowledgeStore {
    let mut store = KnowledgeStore::new();
    store.set_fct(fixture_fct());
    for f in recipe_files() {
        let text = fs::read_to_string(&f).unwrap();
        store.ingest_recipe(&text, resolver).expect("fixture recipe ingests");
    }
    store
}
