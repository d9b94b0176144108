//! Worked target arithmetic and a line-text oracle for diet filters.

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use thali_core::fca::{
    compute_targets, recommend, Activity, ComposeContext, Goal, Intensity, RecallEntry, Sex, Stage, UserProfile,
};
use thali_core::nutrient::NutrientId;
use thali_core::resolver::Resolver;
use thali_core::store::KnowledgeStore;
use thali_core::Amount;

pub fn activity(minutes: u32, per_week: u32, intensity: Intensity) -> Activity {
    Activity {
        kind: "walk".into(),
        duration_min: minutes,
        frequency_per_week: per_week,
        intensity,
        calories_burned: None,
    }
}

pub fn profile(sex: Sex, age: u32, kg: i64, cm: i64, stage: Stage) -> UserProfile {
    let mut p = UserProfile::adult(sex, age, kg, cm);
    p.stage = stage;
    p
}

/// (profile, expected kcal worked by hand)
pub fn worked_profiles() -> Vec<(UserProfile, f64)> {
    let mut v = Vec::new();

    // 10*70 + 6.25*175 - 5*30 + 5 = 1648.75; sedentary 1.2
    let mut p = profile(Sex::Male, 30, 70, 175, Stage::Adult);
    p.activity_factor = Some(Amount::ratio(6, 5));
    v.push((p, 1978.5));

    // 600 + 1031.25 - 125 - 161 = 1345.25; 150 moderate min/week -> 1.55
    let mut p = profile(Sex::Female, 25, 60, 165, Stage::Adult);
    p.activities = vec![activity(30, 5, Intensity::Moderate)];
    v.push((p, 2085.1375));

    // 650 + 1000 - 150 - 161 = 1339; no activity -> 1.2; +350 pregnancy
    let p = profile(Sex::Female, 30, 65, 160, Stage::Pregnancy);
    v.push((p, 1956.8));

    // 800 + 1062.5 - 325 + 5 = 1542.5; 420 light min count as 210 -> 1.55; -500
    let mut p = profile(Sex::Male, 65, 80, 170, Stage::Elderly);
    p.activities = vec![activity(60, 7, Intensity::Light)];
    p.goal = Goal::Lose;
    v.push((p, 1890.875));

    // 550 + 1062.5 - 80 + 5 = 1537.5; 240 vigorous min count as 480 -> 1.725; +500
    let mut p = profile(Sex::Male, 16, 55, 170, Stage::Adolescent);
    p.activities = vec![activity(60, 4, Intensity::Vigorous)];
    p.goal = Goal::Gain;
    v.push((p, 3152.1875));

    v
}

pub fn id(s: &str) -> NutrientId {
    NutrientId::new(s).unwrap()
}

pub const ALLERGIES: [&str; 8] = [
    "dairy",
    "peanuts",
    "gluten",
    "tree-nuts",
    "soy",
    "egg",
    "fish",
    "shellfish",
];
pub const PRACTICES: [&str; 8] = [
    "vegetarian",
    "vegan",
    "eggetarian",
    "pescatarian",
    "non-vegetarian",
    "jain",
    "no-onion-garlic",
    "no-beef-pork",
];

/// What each allergy means in the words the fixture recipes use.
pub fn allergy_words(allergy: &str) -> &'static [&'static str] {
    match allergy {
        "dairy" => &["ghee", "butter", "dahi", "paneer", "cream", "milk"],
        "peanuts" => &["peanut", "groundnut"],
        "gluten" => &["maida", "atta", "wheat"],
        "egg" => &["egg"],
        "fish" => &["fish"],
        _ => &[],
    }
}

pub fn has_any(lines: &[String], words: &[&str]) -> bool {
    lines.iter().any(|l| words.iter().any(|w| l.contains(w)))
}

/// Whether the raw lines of a recipe are compatible with a practice.
pub fn practice_allows(practice: &str, lines: &[String]) -> bool {
    let meat = has_any(lines, &["chicken", "mutton", "beef", "pork"]);
    let fish = has_any(lines, &["fish", "prawn"]);
    let egg = has_any(lines, &["egg"]);
    let dairy = has_any(lines, allergy_words("dairy"));
    let alliums = has_any(lines, &["onion", "garlic"]);
    let roots = has_any(lines, &["aloo", "potato", "ginger", "carrot"]);
    match practice {
        "vegetarian" => !meat && !fish && !egg,
        "vegan" => !meat && !fish && !egg && !dairy && !has_any(lines, &["honey"]),
        "eggetarian" => !meat && !fish && egg,
        "pescatarian" => !meat && fish,
        "non-vegetarian" => meat || fish || egg,
        "jain" => !meat && !fish && !egg && !alliums && !roots && !has_any(lines, &["honey", "mushroom"]),
        "no-onion-garlic" => !alliums,
        "no-beef-pork" => !has_any(lines, &["beef", "pork"]),
        other => panic!("unknown practice {other}"),
    }
}

/// Adults with random allergies, practices, goals and recall drawn from
/// `ids`.
pub fn random_profile(ids: Vec<String>) -> impl Strategy<Value = UserProfile> {
    (
        prop::bool::ANY,
        18u32..80,
        40i64..110,
        145i64..195,
        prop::collection::btree_set(0..ALLERGIES.len(), 0..3),
        prop::collection::btree_set(0..PRACTICES.len(), 0..3),
        prop::collection::vec((0usize..10, 1i64..4), 0..3),
        0usize..3,
    )
        .prop_map(move |(male, age, kg, cm, allergies, practices, recall, goal)| {
            let sex = if male { Sex::Male } else { Sex::Female };
            let mut p = UserProfile::adult(sex, age, kg, cm);
            p.allergies = allergies.into_iter().map(|i| ALLERGIES[i].to_string()).collect();
            p.dietary_preferences = practices.into_iter().map(|i| PRACTICES[i].to_string()).collect();
            p.recall = recall
                .into_iter()
                .map(|(i, n)| RecallEntry {
                    recipe_id: ids[i % ids.len()].clone(),
                    portions: Amount::from_int(n),
                })
                .collect();
            p.goal = [Goal::Maintain, Goal::Lose, Goal::Gain][goal];
            p
        })
}

/// Energy and macro targets against the worked arithmetic, within 1 kcal.
pub fn check_targets() {
    for (p, kcal) in worked_profiles() {
        let t = compute_targets(&p).unwrap();
        let got = t.energy_kcal.to_f64();
        assert!((got - kcal).abs() <= 1.0, "{p:?}: {got} vs {kcal}");
        // midpoints of 10-15 %, 20-30 %, 55-70 % of energy
        let protein = t.target(&id("protein_g")).unwrap().to_f64();
        assert!((protein - kcal * 0.125 / 4.0).abs() <= 0.25, "protein {protein}");
        let fat = t.target(&id("total_fat_g")).unwrap().to_f64();
        assert!((fat - kcal * 0.25 / 9.0).abs() <= 0.12, "fat {fat}");
        let carb = t.target(&id("carbohydrate_g")).unwrap().to_f64();
        assert!((carb - kcal * 0.625 / 4.0).abs() <= 0.25, "carb {carb}");
    }
}

/// Nothing recommended contains a declared allergen or breaks a followed
/// practice, judged from the raw recipe lines.
pub fn check_recommendations(
    store: &KnowledgeStore,
    resolver: &Resolver,
    p: &UserProfile,
) -> Result<(), TestCaseError> {
    let recs = recommend(p, &ComposeContext::new(store, resolver), 10).unwrap();
    let seen: BTreeSet<&str> = recs
        .items
        .iter()
        .map(|i| i.recipe_id.as_str())
        .chain(recs.excluded.iter().map(|e| e.recipe_id.as_str()))
        .collect();
    prop_assert_eq!(seen.len(), store.recipes().count());
    for item in &recs.items {
        let recipe = store.recipe(&item.recipe_id).unwrap();
        let lines: Vec<String> = recipe.lines.iter().map(|l| l.text.to_lowercase()).collect();
        for a in &p.allergies {
            prop_assert!(
                !has_any(&lines, allergy_words(a)),
                "{} recommended despite {}",
                recipe.title,
                a
            );
        }
        for pr in &p.dietary_preferences {
            prop_assert!(practice_allows(pr, &lines), "{} recommended as {}", recipe.title, pr);
        }
    }
    let scores: Vec<&Amount> = recs.items.iter().map(|i| &i.score).collect();
    prop_assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    Ok(())
}
