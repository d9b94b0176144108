use proptest::prelude::*;
use serde_json::{json, Value};
use thali_core::fct::VariantKey;
use thali_core::parser::parse_ingredient_line;
use thali_core::resolver::Resolver;
use thali_core::units::{convert_unit, normalize_unit_token, Rulebook, UnitId, WeightMethod, WeightOptions};
use thali_core::Amount;

const ALOO: &str = "2 cups boiled aloo (potatoes) (medium-sized), chopped";

fn a(s: &str) -> Amount {
    Amount::parse(s).unwrap()
}

fn u(s: &str) -> UnitId {
    UnitId::new(s).unwrap()
}

fn core_fields(v: &Value) -> Value {
    let keys = [
        "ingredient",
        "form",
        "process",
        "size",
        "quantity",
        "unit",
        "weight_in_grams",
    ];
    Value::Object(
        keys.iter()
            .filter_map(|k| v.get(*k).map(|x| (k.to_string(), x.clone())))
            .collect(),
    )
}

#[test]
fn aloo_line_parses_to_the_reference_fields() {
    let pi = parse_ingredient_line(ALOO, &Resolver::rules_only()).unwrap();
    let v = serde_json::to_value(&pi).unwrap();
    assert_eq!(
        core_fields(&v),
        json!({
            "ingredient": "potato", "form": "chopped", "process": "boiled",
            "size": "medium", "quantity": "2", "unit": "cup"
        })
    );
}

#[test]
fn aloo_line_weighs_480_grams() {
    let resolver = Resolver::rules_only();
    let mut pi = parse_ingredient_line(ALOO, &resolver).unwrap();
    let w = Rulebook::builtin()
        .resolve_weight_grams(&pi, &resolver, WeightOptions::default())
        .unwrap();
    assert_eq!(w.grams, a("480"));
    assert_eq!(w.method, WeightMethod::VolumeDensity);
    assert_eq!(w.rule_trace[0], "cup@global");
    assert_eq!(w.rule_trace[1], "teaspoon@global");
    assert_eq!(convert_unit(&a("1"), &u("cup"), &u("teaspoon"), None).unwrap(), a("48"));
    assert_eq!(
        Rulebook::builtin()
            .grams_for(&a("1"), &u("teaspoon"), &VariantKey::plain("water"))
            .unwrap()
            .0,
        a("5")
    );

    pi.weight_in_grams = Some(w.grams);
    assert_eq!(
        core_fields(&serde_json::to_value(&pi).unwrap()),
        json!({
            "ingredient": "potato", "form": "chopped", "process": "boiled", "size": "medium",
            "quantity": "2", "unit": "cup", "weight_in_grams": "480"
        })
    );
}

pub const TABLESPOON_ALIASES: [&str; 10] = [
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

#[test]
fn every_listed_tablespoon_alias_normalizes() {
    for t in TABLESPOON_ALIASES {
        assert_eq!(normalize_unit_token(t).as_str(), "tablespoon", "{t}");
    }
    // Lower-case single letter is the teaspoon convention.
    assert_eq!(normalize_unit_token("t.").as_str(), "teaspoon");
}

fn recase(s: &str, mask: u64) -> String {
    s.chars()
        .enumerate()
        .map(|(i, c)| {
            if mask >> (i % 64) & 1 == 1 {
                c.to_ascii_uppercase()
            } else {
                c.to_ascii_lowercase()
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn randomized_casings_normalize_idempotently(i in 0..TABLESPOON_ALIASES.len(), mask in any::<u64>()) {
        // `T.` is case-sensitive by convention; every other alias is not.
        let alias = TABLESPOON_ALIASES[i];
        let token = if alias == "T." { alias.to_string() } else { recase(alias, mask) };
        let once = normalize_unit_token(&token);
        prop_assert_eq!(once.as_str(), "tablespoon");
        prop_assert_eq!(normalize_unit_token(once.as_str()), once);
    }
}

#[test]
fn garlic_bulb_is_ten_cloves() {
    let garlic = VariantKey::plain("garlic");
    assert_eq!(
        convert_unit(&a("1"), &u("bulb"), &u("clove"), Some(&garlic)).unwrap(),
        a("10")
    );
    let head = normalize_unit_token("head").known().cloned().unwrap();
    let segment = normalize_unit_token("segments").known().cloned().unwrap();
    assert_eq!(convert_unit(&a("1"), &head, &segment, Some(&garlic)).unwrap(), a("10"));
    // Garlic units mean nothing for other ingredients.
    assert!(convert_unit(&a("1"), &u("bulb"), &u("clove"), Some(&VariantKey::plain("onion"))).is_err());
}

#[test]
fn garlic_weights_follow_clove_range() {
    let rb = Rulebook::builtin();
    let grams = |q: &str, unit: &str, size: Option<&str>| {
        rb.grams_for(&a(q), &u(unit), &VariantKey::new("garlic", None, None, size))
            .unwrap()
            .0
    };
    assert_eq!(grams("1", "clove", None), a("5"));
    assert_eq!(grams("1", "bulb", None), a("50"));
    assert_eq!(grams("1", "clove", Some("small")), a("3"));
    assert_eq!(grams("1", "clove", Some("large")), a("7"));
    assert_eq!(grams("1", "bulb", Some("small")), a("30"));
    assert_eq!(grams("1", "bulb", Some("large")), a("70"));
    assert_eq!(grams("4", "clove", None), a("20"));
}

#[test]
fn minced_clove_is_a_teaspoon() {
    let minced = VariantKey::new("garlic", Some("minced"), None, None);
    assert_eq!(
        convert_unit(&a("1"), &u("clove"), &u("teaspoon"), Some(&minced)).unwrap(),
        a("1")
    );
}

#[test]
fn parsed_garlic_lines_resolve_through_rules() {
    let resolver = Resolver::rules_only();
    let rb = Rulebook::builtin();
    for (line, grams) in [
        ("1 bulb garlic", "50"),
        ("4-6 cloves garlic", "25"),
        ("2 small cloves of garlic", "6"),
        ("1 large head garlic", "70"),
    ] {
        let pi = parse_ingredient_line(line, &resolver).unwrap();
        let w = rb
            .resolve_weight_grams(&pi, &resolver, WeightOptions::default())
            .unwrap();
        assert_eq!(w.grams, a(grams), "{line}");
        assert_eq!(w.method, WeightMethod::UnitRule, "{line}");
    }
}
