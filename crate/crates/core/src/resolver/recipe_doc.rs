//! Canonical recipe document and the rule-based extractors for known
//! layouts: canonical JSON, "Key: value" recipe cards (plain or markdown
//! headings) and the recipe-site HTML template.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::fct::Alias;
use crate::parser::parse_quantity;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeDoc {
    pub title: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<Alias>,
    /// Cuisine and region tags.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    pub ingredients: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub instructions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servings: Option<Amount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prep_time_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cook_time_min: Option<u32>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

impl RecipeDoc {
    pub fn check(&self) -> Result<()> {
        if self.title.trim().is_empty() {
            return Err(Error::UnparseableRecipe("recipe has no title".into()));
        }
        if self.ingredients.iter().all(|l| l.trim().is_empty()) {
            return Err(Error::UnparseableRecipe(format!(
                "{:?} has no ingredient lines",
                self.title
            )));
        }
        if let Some(s) = &self.servings {
            if !s.is_positive() {
                return Err(Error::UnparseableRecipe("servings must be positive".into()));
            }
        }
        Ok(())
    }

    /// Rule-only extraction from canonical JSON or a known card/HTML layout.
    pub fn extract(raw: &str) -> Option<RecipeDoc> {
        rule_extract(raw)
    }

    /// Text the latent-link extractor reads: notes, then instructions.
    pub fn narrative(&self) -> String {
        [self.notes.as_str(), self.instructions.as_str()]
            .iter()
            .filter(|s| !s.is_empty())
            .cloned()
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub(crate) fn rule_extract(raw: &str) -> Option<RecipeDoc> {
    let t = raw.trim();
    if t.starts_with('{') {
        let doc: RecipeDoc = serde_json::from_str(t).ok()?;
        return doc.check().is_ok().then_some(doc);
    }
    let doc = if t.starts_with('<') || HTML_TAG.is_match(t) {
        extract_html(t)?
    } else {
        extract_card(t)?
    };
    doc.check().is_ok().then_some(doc)
}

fn parse_servings(s: &str) -> Option<Amount> {
    let digits_at = s.find(|c: char| c.is_ascii_digit())?;
    let q = parse_quantity(&s[digits_at..]).ok()??;
    q.value.is_positive().then_some(q.value)
}

static HOURS: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)(\d+)\s*(?:h|hr|hrs|hour|hours)\b").unwrap());
static MINUTES: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)(\d+)\s*(?:m|min|mins|minute|minutes)\b").unwrap());

fn parse_minutes(s: &str) -> Option<u32> {
    let h: u32 = HOURS.captures(s).and_then(|c| c[1].parse().ok()).unwrap_or(0);
    let m: u32 = MINUTES.captures(s).and_then(|c| c[1].parse().ok()).unwrap_or(0);
    if h == 0 && m == 0 {
        return s.trim().parse().ok();
    }
    Some(h * 60 + m)
}

/// `Chole Masala (hi), Chana Masala` → aliases; language defaults to `en`.
fn parse_aliases(s: &str) -> Vec<Alias> {
    s.split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| match a.rsplit_once('(') {
            Some((label, lang)) if lang.ends_with(')') => Alias {
                label: label.trim().to_string(),
                language: lang.trim_end_matches(')').trim().to_string(),
            },
            _ => Alias {
                label: a.to_string(),
                language: "en".into(),
            },
        })
        .collect()
}

fn parse_tags(s: &str) -> Vec<String> {
    s.split(',')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Head,
    Ingredients,
    Instructions,
    Notes,
}

fn section_of(line: &str) -> Option<Section> {
    let l = line
        .trim()
        .trim_start_matches('#')
        .trim()
        .trim_end_matches(':')
        .trim()
        .to_lowercase();
    match l.as_str() {
        "ingredients" | "ingredient list" => Some(Section::Ingredients),
        "instructions" | "method" | "directions" | "steps" | "preparation" => Some(Section::Instructions),
        "notes" | "tips" | "note" | "variations" => Some(Section::Notes),
        _ => None,
    }
}

fn strip_bullet(l: &str) -> &str {
    let t = l.trim();
    for b in ["- ", "* ", "• ", "· "] {
        if let Some(rest) = t.strip_prefix(b) {
            return rest.trim();
        }
    }
    t
}

/// Recipe card: `Title:` (or a leading `# ` heading), optional header keys,
/// then `Ingredients`, `Instructions` and `Notes` sections.
fn extract_card(t: &str) -> Option<RecipeDoc> {
    let mut doc = RecipeDoc {
        title: String::new(),
        aliases: vec![],
        tags: vec![],
        ingredients: vec![],
        instructions: String::new(),
        servings: None,
        prep_time_min: None,
        cook_time_min: None,
        notes: String::new(),
        source_url: None,
    };
    let mut section = Section::Head;
    let mut instructions = Vec::new();
    let mut notes = Vec::new();
    let mut saw_ingredients = false;
    for line in t.lines() {
        if let Some(s) = section_of(line) {
            section = s;
            saw_ingredients |= s == Section::Ingredients;
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match section {
            Section::Head => {
                if let Some(h) = trimmed.strip_prefix("# ") {
                    if doc.title.is_empty() {
                        doc.title = h.trim().to_string();
                    }
                    continue;
                }
                let Some((k, v)) = trimmed.split_once(':') else {
                    continue;
                };
                let v = v.trim();
                match k.trim().to_lowercase().as_str() {
                    "title" | "name" | "recipe" => doc.title = v.to_string(),
                    "servings" | "serves" | "yield" => doc.servings = parse_servings(v),
                    "cuisine" | "region" | "course" | "tags" | "category" => doc.tags.extend(parse_tags(v)),
                    "prep time" | "preparation time" => doc.prep_time_min = parse_minutes(v),
                    "cook time" | "cooking time" => doc.cook_time_min = parse_minutes(v),
                    "also known as" | "aliases" | "aka" => doc.aliases.extend(parse_aliases(v)),
                    "source" | "url" => doc.source_url = Some(v.to_string()),
                    _ => {}
                }
            }
            Section::Ingredients => doc.ingredients.push(strip_bullet(trimmed).to_string()),
            Section::Instructions => instructions.push(trimmed.to_string()),
            Section::Notes => notes.push(strip_bullet(trimmed).to_string()),
        }
    }
    if !saw_ingredients {
        return None;
    }
    doc.instructions = instructions.join("\n");
    doc.notes = notes.join("\n");
    doc.tags.sort();
    doc.tags.dedup();
    Some(doc)
}

static HTML_TAG: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?is)<(html|body|div|h1|ul|li)\b").unwrap());
static H1: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?is)<h1[^>]*>(.*?)</h1>").unwrap());
static CLASS_OPEN: Lazy<Regex> = Lazy::new(|| Regex::new(r#"(?is)<(\w+)[^>]*\bclass="([^"]*)"[^>]*>"#).unwrap());
static LI: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?is)<li[^>]*>(.*?)</li>").unwrap());
static ANY_TAG: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?s)<[^>]+>").unwrap());

fn html_text(s: &str) -> String {
    let t = ANY_TAG.replace_all(s, " ");
    let t = t
        .replace("&nbsp;", " ")
        .replace("&frac12;", "½")
        .replace("&frac14;", "¼")
        .replace("&frac34;", "¾")
        .replace("&#39;", "'")
        .replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&");
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn has_class(classes: &str, name: &str) -> bool {
    classes.split_whitespace().any(|c| c == name)
}

/// Recipe page: `<h1>` title; elements classed `ingredients` (a list),
/// `instructions`, `servings`, `cuisine`, `prep-time`, `cook-time`, `notes`,
/// `aliases`.
fn extract_html(t: &str) -> Option<RecipeDoc> {
    let mut doc = RecipeDoc {
        title: H1.captures(t).map(|c| html_text(&c[1])).unwrap_or_default(),
        aliases: vec![],
        tags: vec![],
        ingredients: vec![],
        instructions: String::new(),
        servings: None,
        prep_time_min: None,
        cook_time_min: None,
        notes: String::new(),
        source_url: None,
    };
    let mut found_list = false;
    for c in CLASS_OPEN.captures_iter(t) {
        let classes = &c[2];
        let body_start = c.get(0).unwrap().end();
        let close = format!("</{}>", &c[1]);
        let rest = &t[body_start..];
        let inner = match rest.find(&close) {
            Some(end) => &rest[..end],
            None => rest,
        };
        if has_class(classes, "ingredients") {
            found_list = true;
            doc.ingredients
                .extend(LI.captures_iter(inner).map(|l| html_text(&l[1])));
        } else if has_class(classes, "instructions") {
            let steps: Vec<String> = LI.captures_iter(inner).map(|l| html_text(&l[1])).collect();
            doc.instructions = if steps.is_empty() {
                html_text(inner)
            } else {
                steps.join("\n")
            };
        } else if has_class(classes, "servings") {
            doc.servings = parse_servings(&html_text(inner));
        } else if has_class(classes, "cuisine") {
            doc.tags.extend(parse_tags(&html_text(inner)));
        } else if has_class(classes, "prep-time") {
            doc.prep_time_min = parse_minutes(&html_text(inner));
        } else if has_class(classes, "cook-time") {
            doc.cook_time_min = parse_minutes(&html_text(inner));
        } else if has_class(classes, "notes") {
            doc.notes = html_text(inner);
        } else if has_class(classes, "aliases") {
            doc.aliases.extend(parse_aliases(&html_text(inner)));
        } else if has_class(classes, "recipe-title") && doc.title.is_empty() {
            doc.title = html_text(inner);
        }
    }
    if !found_list {
        return None;
    }
    doc.ingredients.retain(|l| !l.is_empty());
    doc.tags.sort();
    doc.tags.dedup();
    Some(doc)
}
