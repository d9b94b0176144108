//! Brute-force recipe sums that read the fixture sources on their own.

use std::collections::BTreeMap;
use std::fs;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use serde_json::Value;
use thali_core::fca::{compose_recipe, ComposeContext, CompositionReport};
use thali_core::resolver::{RecipeDoc, Resolver};
use thali_core::store::KnowledgeStore;
use thali_core::Amount;

pub type Q = BigRational;
pub type Table = BTreeMap<String, BTreeMap<&'static str, Q>>;
/// (quantity, index into `LINE_TEMPLATES`)
pub type Lines = Vec<(Q, usize)>;

pub fn dec(s: &str) -> Q {
    let s = s.trim();
    let (neg, s) = s.strip_prefix('-').map_or((false, s), |r| (true, r));
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let digits: BigInt = format!("{int}{frac}").parse().unwrap();
    let q = Q::new(digits, BigInt::from(10u32).pow(frac.len() as u32));
    if neg {
        -q
    } else {
        q
    }
}

const IFCT: &[(&str, &str, &str)] = &[
    ("Energy (kcal)", "energy_kcal", "1"),
    ("Protein", "protein_g", "1"),
    ("Total Fat", "total_fat_g", "1"),
    ("Saturated Fat", "saturated_fat_g", "1"),
    ("Cholesterol", "cholesterol_mg", "1"),
    ("Carbohydrate", "carbohydrate_g", "1"),
    ("Free Sugars", "free_sugar_g", "1"),
    ("Dietary Fibre", "fibre_g", "1"),
    ("Sodium", "sodium_mg", "1"),
    ("Iron", "iron_mg", "1"),
    ("Calcium", "calcium_mg", "1"),
    ("Vitamin C", "vitamin_c_mg", "1"),
];

const INDB: &[(&str, &str, &str)] = &[
    ("energy_kcal", "energy_kcal", "1"),
    ("protein_g", "protein_g", "1"),
    ("fat_g", "total_fat_g", "1"),
    ("sfa_mg", "saturated_fat_g", "0.001"),
    ("cholesterol_mg", "cholesterol_mg", "1"),
    ("carb_g", "carbohydrate_g", "1"),
    ("freesugar_g", "free_sugar_g", "1"),
    ("fibre_g", "fibre_g", "1"),
    ("sodium_mg", "sodium_mg", "1"),
    ("iron_mg", "iron_mg", "1"),
    ("calcium_mg", "calcium_mg", "1"),
    ("vitc_mg", "vitamin_c_mg", "1"),
];

const API: &[(&str, &str, &str)] = &[
    ("nf_calories", "energy_kcal", "1"),
    ("nf_total_fat", "total_fat_g", "1"),
    ("nf_saturated_fat", "saturated_fat_g", "1"),
    ("nf_cholesterol", "cholesterol_mg", "1"),
    ("nf_sodium", "sodium_mg", "1"),
    ("nf_total_carbohydrate", "carbohydrate_g", "1"),
    ("nf_dietary_fiber", "fibre_g", "1"),
    ("nf_sugars", "total_sugar_g", "1"),
    ("nf_protein", "protein_g", "1"),
    ("nf_potassium", "potassium_mg", "1"),
];

pub fn key(name: &str, form: &str) -> String {
    if form.is_empty() {
        name.to_string()
    } else {
        format!("{name}|{form}")
    }
}

/// Fills nutrients the table does not know yet. Sources are read in
/// priority order, so first write wins.
fn absorb(table: &mut Table, k: String, per100: Vec<(&'static str, Q)>) {
    let row = table.entry(k).or_default();
    for (id, v) in per100 {
        row.entry(id).or_insert(v);
    }
}

pub fn oracle_table() -> Table {
    let dir = super::fixtures().join("sources");
    let mut table = Table::new();

    let mut rd = csv::Reader::from_path(dir.join("sample_ifct.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    for row in rd.records() {
        let row = row.unwrap();
        let get = |h: &str| row[headers.iter().position(|x| x == h).unwrap()].trim().to_string();
        let vals = IFCT
            .iter()
            .filter(|(col, _, _)| !get(col).is_empty())
            .map(|(col, id, f)| (*id, dec(&get(col)) * dec(f)))
            .collect();
        absorb(&mut table, key(&get("name"), &get("form")), vals);
    }

    let mut rd = csv::Reader::from_path(dir.join("sample_indb.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    for row in rd.records() {
        let row = row.unwrap();
        let get = |h: &str| row[headers.iter().position(|x| x == h).unwrap()].trim().to_string();
        let basis = if get("basis") == "per_100g" {
            dec("100")
        } else {
            dec(&get("basis_g"))
        };
        let vals = INDB
            .iter()
            .filter(|(col, _, _)| !get(col).is_empty())
            .map(|(col, id, f)| (*id, dec(&get(col)) * dec(f) * dec("100") / basis.clone()))
            .collect();
        absorb(&mut table, key(&get("food_name"), &get("form")), vals);
    }

    let api: Value = serde_json::from_str(&fs::read_to_string(dir.join("sample_api.json")).unwrap()).unwrap();
    for food in api["foods"].as_array().unwrap() {
        let grams = dec(&food["serving_weight_grams"].to_string());
        let vals = API
            .iter()
            .filter(|(f, _, _)| food.get(*f).is_some_and(|v| !v.is_null()))
            .map(|(f, id, s)| (*id, dec(&food[*f].to_string()) * dec(s) * dec("100") / grams.clone()))
            .collect();
        absorb(&mut table, key(food["food_name"].as_str().unwrap(), ""), vals);
    }
    table
}

pub fn q(a: &Amount) -> Q {
    a.as_rational().clone()
}

/// Sums lines from the oracle table using the weights and matches the
/// report chose, then checks every aggregate.
pub fn check_report(table: &Table, r: &CompositionReport) {
    let mut total: BTreeMap<&str, Q> = BTreeMap::new();
    let mut weight = Q::zero();
    for line in &r.line_breakdown {
        let k = key(&line.matched_key.name, line.matched_key.form.as_deref().unwrap_or(""));
        let row = table
            .get(&k)
            .unwrap_or_else(|| panic!("{}: oracle has no row {k}", r.title));
        let g = q(&line.weight.grams);
        weight += g.clone();
        assert_eq!(
            line.nutrients.len(),
            row.len(),
            "{}: line {} known set differs",
            r.title,
            line.line
        );
        for (id, per100) in row {
            let v = per100 * g.clone() / dec("100");
            let got = line.nutrients.get_str(id).unwrap_or_else(|| panic!("{id} missing"));
            assert_eq!(q(got), v, "{}: line {} {id}", r.title, line.line);
            *total.entry(id).or_insert_with(Q::zero) += v;
        }
    }
    assert_eq!(q(&r.total_weight_g), weight, "{}: weight", r.title);
    assert_eq!(r.total.len(), total.len(), "{}: total known set", r.title);
    for (id, v) in &total {
        assert_eq!(q(r.total.get_str(id).unwrap()), *v, "{}: total {id}", r.title);
        assert_eq!(
            q(r.per_serving.get_str(id).unwrap()),
            v / q(&r.servings),
            "{}: per serving {id}",
            r.title
        );
        assert_eq!(
            q(r.per_100g.get_str(id).unwrap()),
            v * dec("100") / weight.clone(),
            "{}: per 100 g {id}",
            r.title
        );
    }
}

pub const LINE_TEMPLATES: &[(&str, &str)] = &[
    ("g", "potato"),
    ("g", "chickpea"),
    ("g", "paneer"),
    ("g", "chicken"),
    ("tbsp", "ghee"),
    ("tbsp", "groundnut oil"),
    ("tsp", "cumin"),
    ("tsp", "turmeric"),
    ("cup", "refined wheat flour"),
    ("cup", "green pea"),
    ("", "onion"),
    ("", "tomato"),
    ("g", "jaggery"),
    ("g", "curd"),
    ("tsp", "garam masala"),
    ("g", "peanut"),
];

pub fn line_text(qty: &Q, template: usize) -> String {
    let (unit, name) = LINE_TEMPLATES[template];
    let qs = if qty.is_integer() {
        qty.to_integer().to_string()
    } else {
        format!("{}/{}", qty.numer(), qty.denom())
    };
    if unit.is_empty() {
        format!("{qs} {name}")
    } else {
        format!("{qs} {unit} {name}")
    }
}

pub fn draft(store: &KnowledgeStore, resolver: &Resolver, lines: Vec<String>, servings: i64) -> CompositionReport {
    let doc = RecipeDoc {
        title: "Random".into(),
        aliases: Vec::new(),
        tags: Vec::new(),
        ingredients: lines.clone(),
        instructions: String::new(),
        servings: Some(Amount::from_int(servings)),
        prep_time_min: None,
        cook_time_min: None,
        notes: String::new(),
        source_url: None,
    };
    let recipe = store.draft_doc(doc, &lines.join("\n"), resolver).unwrap();
    compose_recipe(&recipe, &ComposeContext::new(store, resolver)).unwrap()
}

pub fn random_lines() -> impl Strategy<Value = Lines> {
    prop::collection::vec(
        ((1i64..400, 1i64..5), 0..LINE_TEMPLATES.len()).prop_map(|((n, d), t)| (Q::new(n.into(), d.into()), t)),
        1..8,
    )
}

pub fn all_nutrients(r: &CompositionReport) -> Vec<(String, Q)> {
    r.total.iter().map(|(k, v)| (k.to_string(), q(v))).collect()
}

/// Doubling every quantity doubles weight and totals and keeps per-100 g.
pub fn check_doubling(
    store: &KnowledgeStore,
    resolver: &Resolver,
    table: &Table,
    lines: &[(Q, usize)],
    servings: i64,
) -> Result<(), TestCaseError> {
    let once: Vec<String> = lines.iter().map(|(q, t)| line_text(q, *t)).collect();
    let two = Q::from_integer(2.into());
    let twice: Vec<String> = lines.iter().map(|(q, t)| line_text(&(q * two.clone()), *t)).collect();
    let a = draft(store, resolver, once, servings);
    let b = draft(store, resolver, twice, servings);
    check_report(table, &a);
    prop_assert_eq!(q(&b.total_weight_g), q(&a.total_weight_g) * two.clone());
    let doubled: Vec<(String, Q)> = all_nutrients(&a)
        .into_iter()
        .map(|(k, v)| (k, v * two.clone()))
        .collect();
    prop_assert_eq!(all_nutrients(&b), doubled);
    prop_assert_eq!(&b.per_100g, &a.per_100g);
    Ok(())
}

/// Reordering lines changes nothing in the aggregates.
pub fn check_order(
    store: &KnowledgeStore,
    resolver: &Resolver,
    lines: &[(Q, usize)],
    shuffled: &[(Q, usize)],
) -> Result<(), TestCaseError> {
    let text = |ls: &[(Q, usize)]| ls.iter().map(|(q, t)| line_text(q, *t)).collect::<Vec<_>>();
    let a = draft(store, resolver, text(lines), 4);
    let b = draft(store, resolver, text(shuffled), 4);
    prop_assert_eq!(&a.total, &b.total);
    prop_assert_eq!(&a.per_serving, &b.per_serving);
    prop_assert_eq!(&a.total_weight_g, &b.total_weight_g);
    prop_assert_eq!(&a.completeness, &b.completeness);
    Ok(())
}

pub fn shuffled_lines() -> impl Strategy<Value = (Lines, Lines)> {
    random_lines().prop_flat_map(|l| (Just(l.clone()), Just(l).prop_shuffle()))
}

/// The fixture table alone, no recipes.
pub fn table_store() -> KnowledgeStore {
    let mut store = KnowledgeStore::new();
    store.set_fct(super::fixture_fct());
    store
}

/// Every fixture recipe against the oracle.
pub fn check_fixture_recipes(store: &KnowledgeStore, resolver: &Resolver, table: &Table) {
    assert_eq!(store.recipe_count(), 10);
    let ctx = ComposeContext::new(store, resolver);
    for recipe in store.recipes() {
        let r = compose_recipe(recipe, &ctx).unwrap();
        assert!(r.unresolved.is_empty(), "{}: {:?}", r.title, r.unresolved);
        check_report(table, &r);
    }
}
