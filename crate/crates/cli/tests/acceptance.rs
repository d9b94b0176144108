//! One line per acceptance criterion: PASS or FAIL, elapsed time and the
//! time limit. Exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod core_common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use core_common::{diet, oracle, stub, tag_cases};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use serde_json::{json, Value};
use thali_core::fct::{build_fct, merge_priority, normalize_basis, VariantKey};
use thali_core::nutrient::NutrientId;
use thali_core::parser::parse_ingredient_line;
use thali_core::resolver::Resolver;
use thali_core::units::{convert_unit, normalize_unit_token, Rulebook, UnitId, WeightMethod, WeightOptions};
use thali_core::Amount;

fn a(s: &str) -> Amount {
    Amount::parse(s).unwrap()
}

fn u(s: &str) -> UnitId {
    UnitId::new(s).unwrap()
}

/// Runs `test` over `cases` generated inputs with a fixed seed.
fn property<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    if let Err(e) = runner.run(&strategy, test) {
        panic!("{e}");
    }
}

fn worked_example() {
    let resolver = Resolver::rules_only();
    let line = "2 cups boiled aloo (potatoes) (medium-sized), chopped";
    let mut pi = parse_ingredient_line(line, &resolver).unwrap();
    let w = Rulebook::builtin()
        .resolve_weight_grams(&pi, &resolver, WeightOptions::default())
        .unwrap();
    assert_eq!(w.method, WeightMethod::VolumeDensity);
    assert_eq!(convert_unit(&a("1"), &u("cup"), &u("teaspoon"), None).unwrap(), a("48"));
    assert_eq!(
        Rulebook::builtin()
            .grams_for(&a("1"), &u("teaspoon"), &VariantKey::plain("water"))
            .unwrap()
            .0,
        a("5")
    );
    pi.weight_in_grams = Some(w.grams);
    let v = serde_json::to_value(&pi).unwrap();
    let keys = [
        "ingredient",
        "form",
        "process",
        "size",
        "quantity",
        "unit",
        "weight_in_grams",
    ];
    let got: serde_json::Map<String, Value> = keys
        .iter()
        .filter_map(|k| v.get(*k).map(|x| (k.to_string(), x.clone())))
        .collect();
    assert_eq!(
        Value::Object(got),
        json!({
            "ingredient": "potato", "form": "chopped", "process": "boiled", "size": "medium",
            "quantity": "2", "unit": "cup", "weight_in_grams": "480"
        })
    );
}

const TABLESPOON_ALIASES: [&str; 10] = [
    "tablespoons",
    "TABLESPOON",
    "T.",
    "TB.",
    "tbsp.",
    "Tblsp.",
    "tbs.",
    "tbl.",
    "tbls.",
    "a large spoon",
];

fn unit_aliases() {
    for t in TABLESPOON_ALIASES {
        assert_eq!(normalize_unit_token(t).as_str(), "tablespoon", "{t}");
    }
    let casings = (0..TABLESPOON_ALIASES.len(), proptest::num::u64::ANY);
    property(1000, casings, |(i, mask)| {
        let alias = TABLESPOON_ALIASES[i];
        // `T.` is case-sensitive: lower-case `t.` is a teaspoon.
        let token: String = if alias == "T." {
            alias.to_string()
        } else {
            alias
                .chars()
                .enumerate()
                .map(|(k, c)| {
                    if mask >> (k % 64) & 1 == 1 {
                        c.to_ascii_uppercase()
                    } else {
                        c.to_ascii_lowercase()
                    }
                })
                .collect()
        };
        let once = normalize_unit_token(&token);
        proptest::prop_assert_eq!(once.as_str(), "tablespoon", "{}", token);
        proptest::prop_assert_eq!(normalize_unit_token(once.as_str()), once);
        Ok(())
    });
}

fn aggregation_priority() {
    let sources = core_common::sources();
    assert_eq!(sources.iter().map(|s| s.records.len()).sum::<usize>(), 30);
    let (fct, report) = build_fct(&sources).unwrap();
    let mut by_key = std::collections::BTreeMap::<String, Vec<_>>::new();
    for s in &sources {
        for r in &s.records {
            by_key
                .entry(r.key().as_key())
                .or_default()
                .push(normalize_basis(r).unwrap().record);
        }
    }
    let overlapping = by_key.iter().filter(|(_, v)| v.len() > 1).count();
    assert_eq!(overlapping, 5);
    assert_eq!(report.merged.len(), overlapping);
    for (key, recs) in &by_key {
        let merged = fct.records().find(|r| &r.key.as_key() == key).unwrap();
        let best = recs.iter().map(|r| r.provenance.source.priority()).min().unwrap();
        assert_eq!(merged.provenance.source.priority(), best, "{key}");
        let union: BTreeSet<NutrientId> = recs.iter().flat_map(|r| r.nutrients.known()).collect();
        assert_eq!(merged.nutrients.known(), union, "{key}");
        assert_eq!(&merge_priority(recs), merged, "{key}");
    }
}

fn composition_oracle() {
    let resolver = Resolver::rules_only();
    let table = oracle::oracle_table();
    oracle::check_fixture_recipes(&core_common::fixture_store(&resolver), &resolver, &table);
    let store = oracle::table_store();
    let lines = (oracle::random_lines(), 1i64..8);
    property(200, lines, |(lines, servings)| {
        oracle::check_doubling(&store, &resolver, &table, &lines, servings)
    });
    property(200, oracle::shuffled_lines(), |(lines, shuffled)| {
        oracle::check_order(&store, &resolver, &lines, &shuffled)
    });
}

fn garlic() {
    let rb = Rulebook::builtin();
    let garlic = VariantKey::plain("garlic");
    assert_eq!(
        convert_unit(&a("1"), &u("bulb"), &u("clove"), Some(&garlic)).unwrap(),
        a("10")
    );
    let grams = |q: &str, unit: &str, size: Option<&str>| {
        rb.grams_for(&a(q), &u(unit), &VariantKey::new("garlic", None, None, size))
            .unwrap()
            .0
    };
    assert_eq!(grams("1", "clove", None), a("5"));
    assert_eq!(grams("1", "bulb", None), a("50"));
    assert_eq!(grams("1", "clove", Some("small")), a("3"));
    assert_eq!(grams("1", "clove", Some("large")), a("7"));
}

fn tag_soundness() {
    tag_cases::check_cases(&tag_cases::store(), &Resolver::rules_only());
}

fn provenance_firewall() {
    stub::check_firewall();
}

fn recommendation_filters() {
    diet::check_targets();
    let resolver = Resolver::rules_only();
    let store = core_common::fixture_store(&resolver);
    let ids: Vec<String> = store.recipes().map(|r| r.id.clone()).collect();
    property(100, diet::random_profile(ids), |p| {
        diet::check_recommendations(&store, &resolver, &p)
    });
}

fn thali(store: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_thali"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("THALI_MODEL_REPLAY")
        .env_remove("THALI_MODEL_URL")
        .env_remove("THALI_NUTRITION_REPLAY")
        .env_remove("THALI_NUTRITION_APP_ID")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "thali {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let fixtures = core_common::fixtures();
    let store = dir.join("store.json");
    let recipes = fixtures.join("recipes");
    let mut outputs = vec![thali(&store, &["--json", "ingest", &recipes.display().to_string()])];
    let sources: Vec<String> = core_common::source_paths()
        .iter()
        .map(|(p, _)| p.display().to_string())
        .collect();
    let mut args = vec!["--json", "build-fct"];
    args.extend(sources.iter().map(String::as_str));
    outputs.push(thali(&store, &args));
    for f in core_common::recipe_files() {
        outputs.push(thali(&store, &["--json", "analyze", &f.display().to_string()]));
    }
    outputs
}

fn determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    assert_eq!(first.len(), 12);
    assert!(first == second, "outputs differ between runs");
}

fn message(e: Box<dyn std::any::Any + Send>) -> String {
    let m = e
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into());
    m.lines().take(4).collect::<Vec<_>>().join(" | ")
}

fn main() {
    let criteria: [(&str, u64, fn()); 9] = [
        ("worked-example fidelity", 1, worked_example),
        ("unit alias suite", 1, unit_aliases),
        ("aggregation priority", 1, aggregation_priority),
        ("composition oracle", 10, composition_oracle),
        ("garlic conversions", 1, garlic),
        ("tag soundness", 1, tag_soundness),
        ("provenance firewall", 5, provenance_firewall),
        ("recommendation filters", 5, recommendation_filters),
        ("end-to-end determinism", 30, determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        let limit = Duration::from_secs(limit);
        let verdict = match outcome {
            Ok(()) if took < limit => "PASS".to_string(),
            Ok(()) => "FAIL (over time limit)".to_string(),
            Err(e) => format!("FAIL ({})", message(e)),
        };
        if verdict != "PASS" {
            failed += 1;
        }
        println!(
            "{verdict:<6} {name:<26} {:>8.3} s  limit {} s",
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    let _ = std::panic::take_hook();
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
