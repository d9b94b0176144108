//! User profiles, daily targets and recipe recommendations.
//!
//! Energy: Mifflin-St Jeor resting energy times an activity factor, then
//! +/-500 kcal for gain/lose goals, +350 in pregnancy and +600 in
//! lactation. Macro targets are the midpoints of fixed energy shares:
//! protein 10-15 %, fat 20-30 %, carbohydrate 55-70 %.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{compose_recipe, ComposeContext, TagAxis};
use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::nutrient::{nid, NutrientId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Infant,
    Child,
    Adolescent,
    Adult,
    Elderly,
    Pregnancy,
    Lactation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Goal {
    Gain,
    Lose,
    #[default]
    Maintain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Light,
    #[default]
    Moderate,
    Vigorous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    #[serde(rename = "type")]
    pub kind: String,
    pub duration_min: u32,
    /// Sessions per week.
    pub frequency_per_week: u32,
    #[serde(default)]
    pub intensity: Intensity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calories_burned: Option<Amount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub recipe_id: String,
    /// Servings eaten.
    pub portions: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub age_years: u32,
    pub sex: Sex,
    pub weight_kg: Amount,
    pub height_cm: Amount,
    pub stage: Stage,
    #[serde(default)]
    pub activities: Vec<Activity>,
    /// Overrides the factor derived from `activities`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity_factor: Option<Amount>,
    /// Practice tag ids the user follows, e.g. `vegetarian`.
    #[serde(default)]
    pub dietary_preferences: Vec<String>,
    #[serde(default)]
    pub recall: Vec<RecallEntry>,
    /// Allergen names or tag ids: `peanuts`, `contains-dairy`.
    #[serde(default)]
    pub allergies: Vec<String>,
    #[serde(default)]
    pub goal: Goal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hydration_ml: Option<Amount>,
}

impl UserProfile {
    pub fn adult(sex: Sex, age_years: u32, weight_kg: i64, height_cm: i64) -> Self {
        UserProfile {
            age_years,
            sex,
            weight_kg: Amount::from_int(weight_kg),
            height_cm: Amount::from_int(height_cm),
            stage: if age_years >= 60 { Stage::Elderly } else { Stage::Adult },
            activities: Vec::new(),
            activity_factor: None,
            dietary_preferences: Vec::new(),
            recall: Vec::new(),
            allergies: Vec::new(),
            goal: Goal::Maintain,
            hydration_ml: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProfile(m));
        if !self.weight_kg.is_positive() || self.weight_kg > Amount::from_int(500) {
            return bad(format!("weight {} kg out of range", self.weight_kg));
        }
        if !self.height_cm.is_positive() || self.height_cm > Amount::from_int(280) {
            return bad(format!("height {} cm out of range", self.height_cm));
        }
        if self.age_years > 120 {
            return bad(format!("age {} out of range", self.age_years));
        }
        let a = self.age_years;
        let consistent = match self.stage {
            Stage::Infant => a < 1,
            Stage::Child => (1..=9).contains(&a),
            Stage::Adolescent => (10..=17).contains(&a),
            Stage::Adult => a >= 18,
            Stage::Elderly => a >= 60,
            Stage::Pregnancy | Stage::Lactation => self.sex == Sex::Female && (12..=55).contains(&a),
        };
        if !consistent {
            return bad(format!(
                "stage {:?} does not fit age {a} and sex {:?}",
                self.stage, self.sex
            ));
        }
        if let Some(f) = &self.activity_factor {
            if *f < Amount::ratio(6, 5) || *f > Amount::ratio(19, 10) {
                return bad(format!("activity factor {f} outside 1.2-1.9"));
            }
        }
        for e in &self.recall {
            if !e.portions.is_positive() {
                return bad(format!("recall portions for {} must be positive", e.recipe_id));
            }
        }
        for p in &self.dietary_preferences {
            let known = super::TagCatalog::builtin()
                .get(p)
                .is_some_and(|t| t.axis == TagAxis::Practice);
            if !known {
                return bad(format!("unknown dietary practice {p:?}"));
            }
        }
        for a in &self.allergies {
            allergen_tag(a)?;
        }
        Ok(())
    }
}

/// Maps an allergy as users write it to its allergen tag id.
pub(crate) fn allergen_tag(allergy: &str) -> Result<String> {
    let a = allergy.trim().to_lowercase();
    let a = a.strip_prefix("contains-").unwrap_or(&a);
    let id = match a {
        "dairy" | "milk" | "lactose" => "contains-dairy",
        "peanut" | "peanuts" | "groundnut" | "groundnuts" => "contains-peanuts",
        "gluten" | "wheat" => "contains-gluten",
        "tree-nuts" | "tree nuts" | "tree-nut" | "tree nut" | "nuts" => "contains-tree-nuts",
        "soy" | "soya" => "contains-soy",
        "egg" | "eggs" => "contains-egg",
        "fish" => "contains-fish",
        "shellfish" => "contains-shellfish",
        other => return Err(Error::InvalidProfile(format!("unknown allergy {other:?}"))),
    };
    Ok(id.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub low: Amount,
    pub target: Amount,
    pub high: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NutrientTargets {
    pub resting_energy_kcal: Amount,
    pub activity_factor: Amount,
    pub energy_kcal: Amount,
    /// Daily targets with their acceptable band.
    pub targets: BTreeMap<NutrientId, Band>,
    /// Daily upper limits.
    pub limits: BTreeMap<NutrientId, Amount>,
}

impl NutrientTargets {
    pub fn target(&self, id: &NutrientId) -> Option<&Amount> {
        self.targets.get(id).map(|b| &b.target)
    }
}

/// Factor from weekly activity minutes; vigorous minutes count double and
/// light ones half.
fn activity_factor(activities: &[Activity]) -> Amount {
    let weekly: u64 = activities
        .iter()
        .map(|a| {
            let m = u64::from(a.duration_min) * u64::from(a.frequency_per_week);
            match a.intensity {
                Intensity::Light => m / 2,
                Intensity::Moderate => m,
                Intensity::Vigorous => m * 2,
            }
        })
        .sum();
    match weekly {
        0..=59 => Amount::ratio(6, 5),
        60..=149 => Amount::ratio(11, 8),
        150..=299 => Amount::ratio(31, 20),
        300..=599 => Amount::ratio(69, 40),
        _ => Amount::ratio(19, 10),
    }
}

pub const MACRO_NUTRIENTS: [&str; 4] = ["energy_kcal", "protein_g", "total_fat_g", "carbohydrate_g"];

pub fn compute_targets(profile: &UserProfile) -> Result<NutrientTargets> {
    profile.validate()?;
    if profile.stage == Stage::Infant {
        return Err(Error::InvalidProfile("infant targets are not covered".into()));
    }
    let sex_term = match profile.sex {
        Sex::Male => Amount::from_int(5),
        Sex::Female => Amount::from_int(-161),
    };
    let resting = Amount::from_int(10) * &profile.weight_kg + Amount::ratio(25, 4) * &profile.height_cm
        - Amount::from_int(5 * i64::from(profile.age_years))
        + sex_term;
    let factor = profile
        .activity_factor
        .clone()
        .unwrap_or_else(|| activity_factor(&profile.activities));
    let mut energy = &resting * &factor;
    energy += match profile.goal {
        Goal::Gain => Amount::from_int(500),
        Goal::Lose => Amount::from_int(-500),
        Goal::Maintain => Amount::zero(),
    };
    energy += match profile.stage {
        Stage::Pregnancy => Amount::from_int(350),
        Stage::Lactation => Amount::from_int(600),
        _ => Amount::zero(),
    };
    if !energy.is_positive() {
        return Err(Error::InvalidProfile(format!(
            "energy target {energy} kcal is not positive"
        )));
    }
    let share = |pct_lo: i64, pct_hi: i64, kcal_per_g: i64| {
        let g = |pct: &Amount| &energy * pct / Amount::from_int(kcal_per_g);
        let lo = Amount::ratio(pct_lo, 100);
        let hi = Amount::ratio(pct_hi, 100);
        let mid = Amount::midpoint(&lo, &hi);
        Band {
            low: g(&lo),
            target: g(&mid),
            high: g(&hi),
        }
    };
    let mut targets = BTreeMap::new();
    targets.insert(
        nid("energy_kcal"),
        Band {
            low: energy.clone(),
            target: energy.clone(),
            high: energy.clone(),
        },
    );
    targets.insert(nid("protein_g"), share(10, 15, 4));
    targets.insert(nid("total_fat_g"), share(20, 30, 9));
    targets.insert(nid("carbohydrate_g"), share(55, 70, 4));
    let mut limits = BTreeMap::new();
    limits.insert(nid("sodium_mg"), Amount::from_int(2000));
    limits.insert(
        nid("free_sugar_g"),
        &energy * &Amount::ratio(10, 100) / Amount::from_int(4),
    );
    limits.insert(
        nid("saturated_fat_g"),
        &energy * &Amount::ratio(10, 100) / Amount::from_int(9),
    );
    Ok(NutrientTargets {
        resting_energy_kcal: resting,
        activity_factor: factor,
        energy_kcal: energy,
        targets,
        limits,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub recipe_id: String,
    pub title: String,
    /// Sum of |value - budget| / daily target over energy and macros; lower
    /// is better.
    pub score: Amount,
    pub per_serving: BTreeMap<NutrientId, Option<Amount>>,
    pub drivers: Vec<NutrientId>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub recipe_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendations {
    pub targets: NutrientTargets,
    /// Targets minus the recall intake, floored at zero.
    pub remaining: BTreeMap<NutrientId, Amount>,
    pub items: Vec<Recommendation>,
    pub excluded: Vec<Exclusion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

fn label(id: &NutrientId) -> &'static str {
    match id.as_str() {
        "energy_kcal" => "energy",
        "protein_g" => "protein",
        "total_fat_g" => "fat",
        "carbohydrate_g" => "carbohydrate",
        _ => "nutrient",
    }
}

fn unit(id: &NutrientId) -> &'static str {
    if id.as_str().ends_with("_kcal") {
        "kcal"
    } else {
        "g"
    }
}

/// Ranks stored recipes for the remaining daily budget after hard filters
/// for allergies and dietary practice. Recipes whose tags are tentative
/// fail a filter they cannot be shown to pass.
pub fn recommend(profile: &UserProfile, ctx: &ComposeContext<'_>, k: usize) -> Result<Recommendations> {
    let targets = compute_targets(profile)?;
    let macros: Vec<NutrientId> = MACRO_NUTRIENTS.iter().map(|n| nid(n)).collect();

    let mut intake: BTreeMap<NutrientId, Amount> = BTreeMap::new();
    for e in &profile.recall {
        let recipe = ctx.store.recipe(&e.recipe_id)?;
        let rep = compose_recipe(recipe, ctx)?;
        for n in &macros {
            if let Some(v) = rep.per_serving.get(n) {
                *intake.entry(n.clone()).or_insert_with(Amount::zero) += &(v * &e.portions);
            }
        }
    }
    let remaining: BTreeMap<NutrientId, Amount> = macros
        .iter()
        .map(|n| {
            let t = targets.target(n).expect("macro targets exist").clone();
            let left = t - intake.get(n).cloned().unwrap_or_else(Amount::zero);
            (n.clone(), left.max(Amount::zero()))
        })
        .collect();

    let avoid: BTreeSet<String> = profile
        .allergies
        .iter()
        .map(|a| allergen_tag(a))
        .collect::<Result<_>>()?;
    let follow: BTreeSet<&str> = profile.dietary_preferences.iter().map(String::as_str).collect();

    let mut items = Vec::new();
    let mut excluded = Vec::new();
    for recipe in ctx.store.recipes() {
        let rep = match compose_recipe(recipe, ctx) {
            Ok(r) => r,
            Err(e) => {
                excluded.push(Exclusion {
                    recipe_id: recipe.id.clone(),
                    reason: format!("no composition: {}", e.code()),
                });
                continue;
            }
        };
        let has = |id: &str| rep.dietary_tags.iter().find(|t| t.id == id);
        // Health tags can be tentative from missing nutrients; that says
        // nothing about allergens.
        let tentative = rep.dietary_tags.iter().any(|t| {
            t.tentative
                && super::TagCatalog::builtin()
                    .get(&t.id)
                    .is_some_and(|d| d.axis == TagAxis::Allergen)
        }) || !rep.unresolved.is_empty()
            || rep.line_breakdown.iter().any(|c| c.category_path.is_none());
        if let Some(a) = avoid.iter().find(|a| has(a).is_some()) {
            excluded.push(Exclusion {
                recipe_id: recipe.id.clone(),
                reason: format!("allergy: {a}"),
            });
            continue;
        }
        if !avoid.is_empty() && tentative {
            excluded.push(Exclusion {
                recipe_id: recipe.id.clone(),
                reason: "allergens cannot be ruled out".into(),
            });
            continue;
        }
        if let Some(p) = follow.iter().find(|p| !has(p).is_some_and(|t| !t.tentative)) {
            excluded.push(Exclusion {
                recipe_id: recipe.id.clone(),
                reason: format!("not {p}"),
            });
            continue;
        }

        let mut score = Amount::zero();
        let mut terms = Vec::new();
        for n in &macros {
            let target = targets.target(n).expect("macro targets exist");
            let budget = &remaining[n];
            let term = match rep.per_serving.get(n) {
                Some(v) => (v - budget).abs() / target.clone(),
                // unknown counts as the worst case of a whole day's target
                None => Amount::one(),
            };
            score += &term;
            terms.push((n.clone(), term));
        }
        let mut ranked = terms.clone();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let drivers: Vec<NutrientId> = ranked.iter().take(2).map(|(n, _)| n.clone()).collect();
        let parts: Vec<String> = drivers
            .iter()
            .map(|n| match rep.per_serving.get(n) {
                Some(v) => format!(
                    "{} {} {} vs {} {} left",
                    label(n),
                    v.round_dp(2),
                    unit(n),
                    remaining[n].round_dp(2),
                    unit(n)
                ),
                None => format!("{} unknown", label(n)),
            })
            .collect();
        items.push(Recommendation {
            recipe_id: recipe.id.clone(),
            title: recipe.title.clone(),
            score,
            per_serving: macros
                .iter()
                .map(|n| (n.clone(), rep.per_serving.get(n).cloned()))
                .collect(),
            drivers,
            rationale: format!("largest gaps per serving: {}", parts.join("; ")),
        });
    }
    items.sort_by(|a, b| a.score.cmp(&b.score).then_with(|| a.recipe_id.cmp(&b.recipe_id)));
    items.truncate(k);
    let explanation = items.is_empty().then(|| {
        if excluded.is_empty() {
            "the store has no recipes".to_string()
        } else {
            format!("all {} recipes were filtered out", excluded.len())
        }
    });
    Ok(Recommendations {
        targets,
        remaining,
        items,
        excluded,
        explanation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mifflin_examples() {
        let mut p = UserProfile::adult(Sex::Male, 30, 70, 175);
        p.activity_factor = Some(Amount::ratio(6, 5));
        let t = compute_targets(&p).unwrap();
        assert_eq!(t.resting_energy_kcal, Amount::parse("1648.75").unwrap());
        assert_eq!(t.energy_kcal, Amount::parse("1978.5").unwrap());
        p.goal = Goal::Lose;
        assert_eq!(
            compute_targets(&p).unwrap().energy_kcal,
            Amount::parse("1478.5").unwrap()
        );
        p.weight_kg = Amount::zero();
        assert!(matches!(compute_targets(&p), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn macro_midpoints() {
        let mut p = UserProfile::adult(Sex::Female, 40, 60, 160);
        p.activity_factor = Some(Amount::ratio(6, 5));
        let t = compute_targets(&p).unwrap();
        let e = t.energy_kcal.clone();
        assert_eq!(
            t.target(&nid("protein_g")).unwrap(),
            &(&e * &Amount::ratio(125, 1000) / Amount::from_int(4))
        );
        assert_eq!(
            t.target(&nid("total_fat_g")).unwrap(),
            &(&e * &Amount::ratio(25, 100) / Amount::from_int(9))
        );
    }

    #[test]
    fn stage_must_fit_age() {
        let mut p = UserProfile::adult(Sex::Male, 30, 70, 175);
        p.stage = Stage::Pregnancy;
        assert!(p.validate().is_err());
        p.stage = Stage::Child;
        assert!(p.validate().is_err());
        let mut q = UserProfile::adult(Sex::Male, 30, 70, 175);
        q.allergies = vec!["kryptonite".into()];
        assert!(q.validate().is_err());
        q.allergies = vec!["Peanuts".into()];
        assert!(q.validate().is_ok());
    }
}
