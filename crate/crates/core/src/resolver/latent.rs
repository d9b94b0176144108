//! Latent relations stated in a recipe's own text: substitutions, related
//! recipes, related ingredients. Every assertion points at the span of text
//! that supports it.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Resolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LatentQuestion {
    RelatedRecipes,
    RelatedIngredients,
    Substitutions,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatentAssertion {
    pub relation: LatentQuestion,
    pub subject: String,
    pub object: String,
    /// Character offsets into the source text, end exclusive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
}

impl LatentAssertion {
    /// The span exists, lies inside `text`, and mentions the object.
    pub fn is_supported_by(&self, text: &str) -> bool {
        let Some([start, end]) = self.span else {
            return false;
        };
        let chars: Vec<char> = text.chars().collect();
        if start >= end || end > chars.len() {
            return false;
        }
        let quoted: String = chars[start..end].iter().collect::<String>().to_lowercase();
        let object = self.object.to_lowercase();
        !object.trim().is_empty() && quoted.contains(object.trim())
    }

    pub fn quoted<'a>(&self, text: &'a str) -> Option<&'a str> {
        let [start, end] = self.span?;
        let b0 = text.char_indices().nth(start).map(|(i, _)| i)?;
        let b1 = text.char_indices().nth(end).map(|(i, _)| i).unwrap_or(text.len());
        text.get(b0..b1)
    }
}

const TERM: &str = r"([A-Za-z][A-Za-z \-]*?)";
const STOP: &str = r"(?:[.,;!?\n]|$|\s+(?:to|if|for|when|in|or)\s)";

static SUBSTITUTE: Lazy<Vec<(Regex, bool)>> = Lazy::new(|| {
    // (pattern, object comes first)
    vec![
        (
            Regex::new(&format!(
                r"(?i)\b(?:replace|substitute|swap)\s+(?:the\s+)?{TERM}\s+(?:with|by|for)\s+(?:the\s+)?{TERM}{STOP}"
            ))
            .unwrap(),
            false,
        ),
        (
            Regex::new(&format!(
                r"(?i)\buse\s+(?:the\s+)?{TERM}\s+instead\s+of\s+(?:the\s+)?{TERM}{STOP}"
            ))
            .unwrap(),
            true,
        ),
        (
            Regex::new(&format!(
                r"(?i)\b([A-Za-z][A-Za-z\-]*)\s+can\s+be\s+(?:replaced|substituted)\s+(?:with|by)\s+(?:the\s+)?{TERM}{STOP}"
            ))
            .unwrap(),
            false,
        ),
    ]
});

static RELATED_RECIPE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(&format!(
        r"(?i)\b(?:serve[ds]?|goes\s+well|pairs\s+well|pair\s+it|tastes\s+great)\s+(?:hot\s+|warm\s+)?(?:it\s+)?with\s+(?:some\s+)?{TERM}{STOP}"
    ))
    .unwrap()
});

static SIMILAR_RECIPE: Lazy<Regex> = Lazy::new(|| Regex::new(&format!(r"(?i)\bsimilar\s+to\s+{TERM}{STOP}")).unwrap());

static RELATED_INGREDIENTS: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\b([A-Za-z]+)\s+(?:and|&)\s+([A-Za-z]+)\s+(?:go|work|pair)\s+(?:really\s+)?(?:well\s+)?together")
        .unwrap()
});

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

fn canon(term: &str, resolver: &Resolver) -> String {
    let t = term.trim();
    resolver.rule_name(t).unwrap_or_else(|| t.to_lowercase())
}

/// Pattern-based extraction. Spans cover the matched clause.
pub(crate) fn rule_extract(text: &str, question: LatentQuestion, resolver: &Resolver) -> Vec<LatentAssertion> {
    let mut out = Vec::new();
    let span_of = |start: usize, end: usize| Some([char_offset(text, start), char_offset(text, end)]);
    match question {
        LatentQuestion::Substitutions => {
            for (re, reversed) in SUBSTITUTE.iter() {
                for c in re.captures_iter(text) {
                    let (a, b) = (c.get(1).unwrap(), c.get(2).unwrap());
                    let (orig, repl) = if *reversed { (b, a) } else { (a, b) };
                    let start = c.get(0).unwrap().start();
                    let end = a.end().max(b.end());
                    out.push(LatentAssertion {
                        relation: question,
                        subject: canon(orig.as_str(), resolver),
                        object: canon(repl.as_str(), resolver),
                        span: span_of(start, end),
                    });
                }
            }
        }
        LatentQuestion::RelatedRecipes => {
            for re in [&*RELATED_RECIPE, &*SIMILAR_RECIPE] {
                for c in re.captures_iter(text) {
                    let m = c.get(1).unwrap();
                    out.push(LatentAssertion {
                        relation: question,
                        subject: "recipe".into(),
                        object: m.as_str().trim().to_lowercase(),
                        span: span_of(c.get(0).unwrap().start(), m.end()),
                    });
                }
            }
        }
        LatentQuestion::RelatedIngredients => {
            for c in RELATED_INGREDIENTS.captures_iter(text) {
                let (a, b) = (c.get(1).unwrap(), c.get(2).unwrap());
                out.push(LatentAssertion {
                    relation: question,
                    subject: canon(a.as_str(), resolver),
                    object: canon(b.as_str(), resolver),
                    span: span_of(a.start(), c.get(0).unwrap().end()),
                });
            }
        }
    }
    // the object must appear verbatim in its span; canonicalized objects
    // (an alias mapped to its preferred name) keep the literal form instead
    for a in &mut out {
        if !a.is_supported_by(text) {
            if let Some(q) = a.quoted(text) {
                let lower = q.to_lowercase();
                if let Some(word) = lower.split_whitespace().last() {
                    a.object = word.trim_matches(|c: char| !c.is_alphanumeric()).to_string();
                }
            }
        }
    }
    out.retain(|a| a.is_supported_by(text));
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_with_span() {
        let r = Resolver::rules_only();
        let text = "Notes: For a vegan version, replace paneer with tofu. Serve with jeera rice.";
        let got = rule_extract(text, LatentQuestion::Substitutions, &r);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].subject, "paneer");
        assert_eq!(got[0].object, "tofu");
        assert_eq!(got[0].quoted(text), Some("replace paneer with tofu"));
        let rel = rule_extract(text, LatentQuestion::RelatedRecipes, &r);
        assert_eq!(rel[0].object, "jeera rice");
        assert!(rule_extract("", LatentQuestion::Substitutions, &r).is_empty());
    }

    #[test]
    fn spanless_or_out_of_range_claims_are_unsupported() {
        let a = LatentAssertion {
            relation: LatentQuestion::Substitutions,
            subject: "paneer".into(),
            object: "tofu".into(),
            span: None,
        };
        assert!(!a.is_supported_by("replace paneer with tofu"));
        let b = LatentAssertion {
            span: Some([0, 500]),
            ..a.clone()
        };
        assert!(!b.is_supported_by("replace paneer with tofu"));
        let c = LatentAssertion {
            span: Some([0, 24]),
            ..a
        };
        assert!(c.is_supported_by("replace paneer with tofu"));
    }
}
