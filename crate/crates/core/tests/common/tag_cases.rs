//! Dietary tag cases with an ingredient trait table written by hand.

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use thali_core::fca::{compose_recipe, ComposeContext, CompositionReport, TagCatalog};
use thali_core::fct::{FctStore, FoodRecord, VariantKey};
use thali_core::nutrient::{NutrientVector, Provenance, Source};
use thali_core::resolver::{RecipeDoc, Resolver};
use thali_core::store::KnowledgeStore;
use thali_core::Amount;

/// Hand-written traits per ingredient, kept apart from the category tables.
#[derive(Clone, Copy, Default)]
pub struct Traits {
    pub meat: bool,
    pub beef_pork: bool,
    pub fish: bool,
    pub shellfish: bool,
    pub egg: bool,
    pub dairy: bool,
    pub honey: bool,
    pub root: bool,
    pub bulb: bool,
    pub fungus: bool,
    pub peanut: bool,
    pub wheat: bool,
    pub tree_nut: bool,
    pub soy: bool,
    pub onion_garlic: bool,
}

pub const T: Traits = Traits {
    meat: false,
    beef_pork: false,
    fish: false,
    shellfish: false,
    egg: false,
    dairy: false,
    honey: false,
    root: false,
    bulb: false,
    fungus: false,
    peanut: false,
    wheat: false,
    tree_nut: false,
    soy: false,
    onion_garlic: false,
};

/// Name, traits, and per-100 g energy, protein, fat, saturated fat,
/// carbohydrate, free sugar, fibre, sodium.
pub const FOODS: &[(&str, Traits, [i64; 8])] = &[
    ("rice", T, [0, 0, 0, 0, 0, 0, 0, 0]),
    ("potato", Traits { root: true, ..T }, [97, 2, 0, 0, 22, 0, 2, 7]),
    (
        "onion",
        Traits {
            bulb: true,
            onion_garlic: true,
            ..T
        },
        [50, 1, 0, 0, 11, 0, 2, 4],
    ),
    (
        "garlic",
        Traits {
            bulb: true,
            onion_garlic: true,
            ..T
        },
        [149, 6, 0, 0, 33, 0, 2, 17],
    ),
    (
        "ginger-garlic paste",
        Traits {
            onion_garlic: true,
            ..T
        },
        [90, 4, 1, 0, 18, 0, 3, 500],
    ),
    ("chicken", Traits { meat: true, ..T }, [120, 19, 5, 1, 0, 0, 0, 77]),
    ("mutton", Traits { meat: true, ..T }, [194, 18, 13, 6, 0, 0, 0, 70]),
    (
        "pork",
        Traits {
            meat: true,
            beef_pork: true,
            ..T
        },
        [242, 27, 14, 5, 0, 0, 0, 62],
    ),
    (
        "beef",
        Traits {
            meat: true,
            beef_pork: true,
            ..T
        },
        [250, 26, 15, 6, 0, 0, 0, 72],
    ),
    ("fish", Traits { fish: true, ..T }, [110, 20, 3, 1, 0, 0, 0, 60]),
    ("prawn", Traits { shellfish: true, ..T }, [99, 24, 0, 0, 0, 0, 0, 111]),
    ("egg", Traits { egg: true, ..T }, [155, 13, 11, 3, 1, 0, 0, 124]),
    ("paneer", Traits { dairy: true, ..T }, [258, 19, 15, 9, 12, 0, 0, 22]),
    ("ghee", Traits { dairy: true, ..T }, [900, 0, 100, 62, 0, 0, 0, 0]),
    ("curd", Traits { dairy: true, ..T }, [60, 3, 4, 3, 3, 0, 0, 45]),
    ("honey", Traits { honey: true, ..T }, [304, 0, 0, 0, 82, 82, 0, 4]),
    ("mushroom", Traits { fungus: true, ..T }, [22, 3, 0, 0, 3, 0, 1, 5]),
    ("peanut", Traits { peanut: true, ..T }, [567, 24, 43, 7, 13, 0, 10, 18]),
    (
        "groundnut oil",
        Traits { peanut: true, ..T },
        [900, 0, 100, 19, 0, 0, 0, 0],
    ),
    (
        "refined wheat flour",
        Traits { wheat: true, ..T },
        [351, 11, 1, 0, 74, 0, 3, 2],
    ),
    ("cashew", Traits { tree_nut: true, ..T }, [553, 18, 44, 8, 30, 0, 3, 12]),
    ("tofu", Traits { soy: true, ..T }, [76, 8, 5, 1, 2, 0, 0, 7]),
    ("jaggery", T, [383, 0, 0, 0, 95, 85, 0, 30]),
    ("salt", T, [0, 0, 0, 0, 0, 0, 0, 38758]),
    ("chickpea", T, [335, 19, 5, 1, 47, 0, 17, 24]),
];

pub const IDS: [&str; 8] = [
    "energy_kcal",
    "protein_g",
    "total_fat_g",
    "saturated_fat_g",
    "carbohydrate_g",
    "free_sugar_g",
    "fibre_g",
    "sodium_mg",
];

pub fn store() -> KnowledgeStore {
    let mut fct = FctStore::new();
    for (name, _, vals) in FOODS {
        let nv = NutrientVector::from_pairs(IDS.iter().zip(vals).map(|(id, v)| (*id, Amount::from_int(*v)))).unwrap();
        fct.upsert(FoodRecord::new(
            VariantKey::plain(name),
            nv,
            Provenance::new(Source::User, *name),
        ));
    }
    let mut s = KnowledgeStore::new();
    s.set_fct(fct);
    s
}

pub fn compose(store: &KnowledgeStore, resolver: &Resolver, items: &[(&str, i64)]) -> CompositionReport {
    let lines: Vec<String> = items.iter().map(|(n, g)| format!("{g} g {n}")).collect();
    let doc = RecipeDoc {
        title: "Tag probe".into(),
        aliases: Vec::new(),
        tags: Vec::new(),
        ingredients: lines.clone(),
        instructions: String::new(),
        servings: Some(Amount::one()),
        prep_time_min: None,
        cook_time_min: None,
        notes: String::new(),
        source_url: None,
    };
    let recipe = store.draft_doc(doc, &lines.join("\n"), resolver).unwrap();
    let r = compose_recipe(&recipe, &ComposeContext::new(store, resolver)).unwrap();
    assert!(r.unresolved.is_empty(), "{:?}", r.unresolved);
    r
}

pub fn tags(r: &CompositionReport) -> BTreeSet<String> {
    r.dietary_tags.iter().map(|t| t.id.clone()).collect()
}

/// (tag, satisfying recipe, violating recipe), 100 g lines, one serving.
pub type Case = (
    &'static str,
    &'static [(&'static str, i64)],
    &'static [(&'static str, i64)],
);

pub const CASES: &[Case] = &[
    (
        "vegetarian",
        &[("rice", 100), ("paneer", 50)],
        &[("rice", 100), ("chicken", 50)],
    ),
    (
        "vegan",
        &[("rice", 100), ("potato", 50)],
        &[("rice", 100), ("curd", 50)],
    ),
    (
        "eggetarian",
        &[("rice", 100), ("egg", 50)],
        &[("egg", 50), ("chicken", 50)],
    ),
    (
        "pescatarian",
        &[("rice", 100), ("prawn", 50)],
        &[("fish", 50), ("mutton", 50)],
    ),
    (
        "non-vegetarian",
        &[("rice", 100), ("egg", 50)],
        &[("rice", 100), ("paneer", 50)],
    ),
    (
        "jain",
        &[("rice", 100), ("paneer", 50)],
        &[("rice", 100), ("mushroom", 50)],
    ),
    (
        "no-onion-garlic",
        &[("rice", 100), ("potato", 50)],
        &[("rice", 100), ("ginger-garlic paste", 10)],
    ),
    (
        "no-beef-pork",
        &[("rice", 100), ("chicken", 50)],
        &[("rice", 100), ("pork", 50)],
    ),
    (
        "contains-dairy",
        &[("rice", 100), ("ghee", 10)],
        &[("rice", 100), ("tofu", 50)],
    ),
    (
        "contains-peanuts",
        &[("rice", 100), ("groundnut oil", 10)],
        &[("rice", 100), ("cashew", 20)],
    ),
    ("contains-gluten", &[("refined wheat flour", 100)], &[("rice", 100)]),
    (
        "contains-tree-nuts",
        &[("rice", 100), ("cashew", 20)],
        &[("rice", 100), ("peanut", 20)],
    ),
    (
        "contains-soy",
        &[("rice", 100), ("tofu", 50)],
        &[("rice", 100), ("paneer", 50)],
    ),
    (
        "contains-egg",
        &[("rice", 100), ("egg", 50)],
        &[("rice", 100), ("chicken", 50)],
    ),
    (
        "contains-fish",
        &[("rice", 100), ("fish", 50)],
        &[("rice", 100), ("prawn", 50)],
    ),
    (
        "contains-shellfish",
        &[("rice", 100), ("prawn", 50)],
        &[("rice", 100), ("fish", 50)],
    ),
    (
        "low-sugar",
        &[("rice", 100), ("jaggery", 5)],
        &[("rice", 100), ("jaggery", 10)],
    ),
    (
        "low-fat",
        &[("rice", 100), ("ghee", 10)],
        &[("rice", 100), ("ghee", 11)],
    ),
    (
        "low-saturated-fat",
        &[("rice", 100), ("paneer", 30)],
        &[("rice", 100), ("ghee", 5)],
    ),
    (
        "low-sodium",
        &[("rice", 100), ("salt", 1)],
        &[("rice", 100), ("salt", 2)],
    ),
    (
        "low-calorie",
        &[("rice", 100), ("peanut", 50)],
        &[("rice", 100), ("peanut", 60)],
    ),
    (
        "low-carb",
        &[("rice", 100), ("refined wheat flour", 20)],
        &[("rice", 100), ("jaggery", 22)],
    ),
    (
        "high-protein",
        &[("rice", 100), ("prawn", 63)],
        &[("rice", 100), ("prawn", 62)],
    ),
    (
        "high-fibre",
        &[("rice", 100), ("chickpea", 36)],
        &[("rice", 100), ("chickpea", 35)],
    ),
];

/// Expected tag set from the hand-written traits and exact nutrient sums.
pub fn expected(items: &[(usize, i64)]) -> BTreeSet<String> {
    let any = |f: fn(&Traits) -> bool| items.iter().any(|(i, _)| f(&FOODS[*i].1));
    let per_serving = |n: usize| -> Amount {
        items
            .iter()
            .map(|(i, g)| Amount::ratio(FOODS[*i].2[n] * g, 100))
            .fold(Amount::zero(), |a, b| &a + &b)
    };
    let meat = any(|t| t.meat);
    let seafood = any(|t| t.fish || t.shellfish);
    let egg = any(|t| t.egg);
    let animal = meat || seafood || egg || any(|t| t.dairy || t.honey);
    let mut out = Vec::new();
    let mut tag = |on: bool, id: &str| {
        if on {
            out.push(id.to_string())
        }
    };
    tag(!meat && !seafood && !egg, "vegetarian");
    tag(!animal, "vegan");
    tag(!meat && !seafood && egg, "eggetarian");
    tag(!meat && seafood, "pescatarian");
    tag(meat || seafood || egg, "non-vegetarian");
    tag(
        !meat && !seafood && !egg && !any(|t| t.honey || t.root || t.bulb || t.fungus) && !any(|t| t.onion_garlic),
        "jain",
    );
    tag(!any(|t| t.onion_garlic), "no-onion-garlic");
    tag(!any(|t| t.beef_pork), "no-beef-pork");
    tag(any(|t| t.dairy), "contains-dairy");
    tag(any(|t| t.peanut), "contains-peanuts");
    tag(any(|t| t.wheat), "contains-gluten");
    tag(any(|t| t.tree_nut), "contains-tree-nuts");
    tag(any(|t| t.soy), "contains-soy");
    tag(egg, "contains-egg");
    tag(any(|t| t.fish), "contains-fish");
    tag(any(|t| t.shellfish), "contains-shellfish");
    tag(per_serving(5) <= Amount::from_int(5), "low-sugar");
    tag(per_serving(2) <= Amount::from_int(10), "low-fat");
    tag(per_serving(3) <= Amount::from_int(3), "low-saturated-fat");
    tag(per_serving(7) <= Amount::from_int(400), "low-sodium");
    tag(per_serving(0) <= Amount::from_int(300), "low-calorie");
    tag(per_serving(4) <= Amount::from_int(20), "low-carb");
    tag(per_serving(1) >= Amount::from_int(15), "high-protein");
    tag(per_serving(6) >= Amount::from_int(6), "high-fibre");
    out.into_iter().collect()
}

pub fn random_items() -> impl Strategy<Value = Vec<(usize, i64)>> {
    prop::collection::btree_map(0..FOODS.len(), 1i64..200, 1..6).prop_map(|m| m.into_iter().collect())
}

/// Composes `items` and compares its tags with the hand-written oracle.
pub fn check_random(store: &KnowledgeStore, resolver: &Resolver, items: &[(usize, i64)]) -> Result<(), TestCaseError> {
    let named: Vec<(&str, i64)> = items.iter().map(|(i, g)| (FOODS[*i].0, *g)).collect();
    let r = compose(store, resolver, &named);
    prop_assert_eq!(tags(&r), expected(items));
    prop_assert!(r.dietary_tags.iter().all(|t| !t.tentative));
    Ok(())
}

/// Each shipped tag holds for its satisfying recipe and not for its
/// violating one.
pub fn check_cases(store: &KnowledgeStore, resolver: &Resolver) {
    let ids: BTreeSet<&str> = TagCatalog::builtin().tags().iter().map(|t| t.id.as_str()).collect();
    let cased: BTreeSet<&str> = CASES.iter().map(|c| c.0).collect();
    assert_eq!(ids.len(), 24);
    assert_eq!(ids, cased);
    for (tag, yes, no) in CASES {
        assert!(
            tags(&compose(store, resolver, yes)).contains(*tag),
            "{tag} should hold for {yes:?}"
        );
        assert!(
            !tags(&compose(store, resolver, no)).contains(*tag),
            "{tag} should not hold for {no:?}"
        );
    }
}
