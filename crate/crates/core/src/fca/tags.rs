//! Data-driven dietary tags over ingredient categories and per-serving
//! amounts.

use std::collections::BTreeSet;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use super::CompositionReport;
use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::nutrient::NutrientId;

const BUILTIN_TAGS: &str = include_str!("../../data/tags.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TagAxis {
    Practice,
    Health,
    Allergen,
}

impl TagAxis {
    fn parse(s: &str) -> Result<TagAxis> {
        match s.trim() {
            "PRACTICE" => Ok(TagAxis::Practice),
            "HEALTH" => Ok(TagAxis::Health),
            "ALLERGEN" => Ok(TagAxis::Allergen),
            other => Err(Error::InvalidArgument(format!("unknown tag axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Clause {
    /// Some ingredient is named, or categorized under, one of `terms`.
    Present {
        terms: Vec<String>,
    },
    Absent {
        terms: Vec<String>,
    },
    Max {
        nutrient: NutrientId,
        value: Amount,
    },
    Min {
        nutrient: NutrientId,
        value: Amount,
    },
}

impl Clause {
    fn parse(s: &str) -> Result<Clause> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("bad tag clause {s:?}"));
        let (op, rest) = s.split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        match op.trim() {
            "present" | "absent" => {
                let terms: Vec<String> = inner
                    .split('|')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect();
                if terms.is_empty() {
                    return Err(bad());
                }
                Ok(if op.trim() == "present" {
                    Clause::Present { terms }
                } else {
                    Clause::Absent { terms }
                })
            }
            "max" | "min" => {
                let (n, v) = inner.split_once(',').ok_or_else(bad)?;
                let nutrient = NutrientId::new(n.trim())?;
                let value = Amount::parse(v.trim()).map_err(|_| bad())?;
                Ok(if op.trim() == "max" {
                    Clause::Max { nutrient, value }
                } else {
                    Clause::Min { nutrient, value }
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DietaryTag {
    pub id: String,
    pub axis: TagAxis,
    pub clauses: Vec<Clause>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagResult {
    pub id: String,
    pub axis: TagAxis,
    /// Some lines could not be resolved, so the tag may not hold.
    pub tentative: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCatalog {
    tags: Vec<DietaryTag>,
}

#[derive(Deserialize)]
struct TagRow {
    id: String,
    axis: String,
    rule: String,
    #[serde(default)]
    description: String,
}

static BUILTIN: Lazy<TagCatalog> = Lazy::new(|| TagCatalog::parse(BUILTIN_TAGS).expect("shipped tag catalog is valid"));

impl TagCatalog {
    pub fn builtin() -> &'static TagCatalog {
        &BUILTIN
    }

    pub fn parse(text: &str) -> Result<TagCatalog> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut tags = Vec::new();
        let mut seen = BTreeSet::new();
        for row in rdr.deserialize::<TagRow>() {
            let row = row?;
            if !seen.insert(row.id.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate tag id {}", row.id)));
            }
            let clauses = row.rule.split('&').map(Clause::parse).collect::<Result<Vec<_>>>()?;
            tags.push(DietaryTag {
                id: row.id,
                axis: TagAxis::parse(&row.axis)?,
                clauses,
                description: row.description,
            });
        }
        Ok(TagCatalog { tags })
    }

    pub fn tags(&self) -> &[DietaryTag] {
        &self.tags
    }

    pub fn get(&self, id: &str) -> Option<&DietaryTag> {
        self.tags.iter().find(|t| t.id == id)
    }
}

/// The terms a line answers to: its ingredient name and every category on
/// its path.
fn line_terms(report: &CompositionReport) -> Vec<BTreeSet<String>> {
    report
        .line_breakdown
        .iter()
        .map(|c| {
            let mut t: BTreeSet<String> = c.category_path.iter().flatten().cloned().collect();
            t.insert(c.ingredient.clone());
            t.insert(c.matched_key.name.clone());
            t
        })
        .collect()
}

fn holds(clause: &Clause, terms: &[BTreeSet<String>], report: &CompositionReport) -> bool {
    let present = |ts: &[String]| terms.iter().any(|line| ts.iter().any(|t| line.contains(t)));
    match clause {
        Clause::Present { terms } => present(terms),
        Clause::Absent { terms } => !present(terms),
        Clause::Max { nutrient, value } => report.per_serving.get(nutrient).is_some_and(|v| v <= value),
        Clause::Min { nutrient, value } => report.per_serving.get(nutrient).is_some_and(|v| v >= value),
    }
}

/// Every catalog tag whose clauses all hold. Tags are tentative when lines
/// went unresolved, an ingredient has no category, or a nutrient used by
/// the rule is only partly known.
pub fn assign_dietary_tags(report: &CompositionReport, catalog: &TagCatalog) -> Vec<TagResult> {
    let terms = line_terms(report);
    let uncategorized = report.line_breakdown.iter().any(|c| c.category_path.is_none());
    let gaps = !report.unresolved.is_empty() || uncategorized;
    catalog
        .tags
        .iter()
        .filter(|t| t.clauses.iter().all(|c| holds(c, &terms, report)))
        .map(|t| {
            let partial = t.clauses.iter().any(|c| match c {
                Clause::Max { nutrient, .. } | Clause::Min { nutrient, .. } => {
                    report.completeness.get(nutrient).is_some_and(|f| *f < Amount::one())
                }
                _ => false,
            });
            TagResult {
                id: t.id.clone(),
                axis: t.axis,
                tentative: gaps || partial,
            }
        })
        .collect()
}
