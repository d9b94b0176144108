//! Ingredient line parser.
//!
//! Grammar: `quantity [unit] descriptors name [(gloss)] [, descriptors]`.
//! Commas and parentheses are soft separators. Anything after a standalone
//! `for` in the main segment is a usage note ("oil for frying") and ignored.
//! The resolver is consulted for the ingredient name only when the alias
//! table misses, and for whole-line normalization when the line does not fit
//! the grammar at all.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::fct::VariantKey;
use crate::resolver::{ModelAnswer, NormalizedIngredient, Resolver};
use crate::units::{normalize_unit_token, Rulebook, UnitId, UnitKind, UnitToken};
use crate::vocab::{normalize_name, Axis, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantity {
    pub value: Amount,
    pub original_text: String,
    pub was_range: bool,
}

impl Quantity {
    pub fn exact(value: Amount) -> Self {
        Quantity {
            original_text: render_quantity(&value),
            value,
            was_range: false,
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.original_text)
    }
}

fn render_quantity(v: &Amount) -> String {
    if v.is_terminating() {
        v.to_exact_string()
    } else {
        v.round_dp(2)
    }
}

fn vulgar_fraction(c: char) -> Option<(i64, i64)> {
    Some(match c {
        '½' => (1, 2),
        '⅓' => (1, 3),
        '⅔' => (2, 3),
        '¼' => (1, 4),
        '¾' => (3, 4),
        '⅕' => (1, 5),
        '⅖' => (2, 5),
        '⅗' => (3, 5),
        '⅘' => (4, 5),
        '⅙' => (1, 6),
        '⅚' => (5, 6),
        '⅛' => (1, 8),
        '⅜' => (3, 8),
        '⅝' => (5, 8),
        '⅞' => (7, 8),
        _ => return None,
    })
}

struct Scanner<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn peek_at(&self, pos: usize) -> Option<char> {
        self.s.get(pos..).and_then(|r| r.chars().next())
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_spaces(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn digits(&mut self) -> &'a str {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        &self.s[start..self.pos]
    }

    fn err(&self, offset: usize) -> Error {
        Error::Parse {
            text: self.s.to_string(),
            offset,
        }
    }

    fn starts_number(&self, pos: usize) -> bool {
        match self.peek_at(pos) {
            Some(c) if c.is_ascii_digit() || vulgar_fraction(c).is_some() => true,
            Some('.') => self.peek_at(pos + 1).is_some_and(|c| c.is_ascii_digit()),
            _ => false,
        }
    }

    /// One number: integer, decimal, `a/b`, vulgar fraction, or mixed number.
    fn number(&mut self) -> Result<Option<Amount>> {
        if !self.starts_number(self.pos) {
            return Ok(None);
        }
        let c = self.peek().expect("checked");
        if let Some((n, d)) = vulgar_fraction(c) {
            self.bump();
            return Ok(Some(Amount::ratio(n, d)));
        }
        let int_part = self.digits();
        let mut value;
        if self.peek() == Some('.') {
            self.bump();
            let frac_at = self.pos;
            let frac = self.digits();
            if frac.is_empty() {
                return Err(self.err(frac_at));
            }
            value = Amount::parse(&format!("{}.{frac}", if int_part.is_empty() { "0" } else { int_part }))
                .map_err(|_| self.err(frac_at))?;
            return Ok(Some(value));
        }
        value = Amount::parse(int_part).map_err(|_| self.err(self.pos))?;
        if self.peek() == Some('/') {
            self.bump();
            let den_at = self.pos;
            let den = self.digits();
            if den.is_empty() || den.trim_start_matches('0').is_empty() {
                return Err(self.err(den_at));
            }
            let d = Amount::parse(den).map_err(|_| self.err(den_at))?;
            return Ok(Some(value / d));
        }
        // mixed numbers: "1½", "1 ½", "1 1/2"
        let save = self.pos;
        self.skip_spaces();
        if let Some((n, d)) = self.peek().and_then(vulgar_fraction) {
            self.bump();
            value += Amount::ratio(n, d);
            return Ok(Some(value));
        }
        if self.pos > save && self.peek().is_some_and(|c| c.is_ascii_digit()) {
            let frac_start = self.pos;
            let num = self.digits();
            if self.peek() == Some('/') && self.peek_at(self.pos + 1).is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
                let den_at = self.pos;
                let den = self.digits();
                if den.trim_start_matches('0').is_empty() {
                    return Err(self.err(den_at));
                }
                let f = Amount::parse(num).map_err(|_| self.err(frac_start))?
                    / Amount::parse(den).map_err(|_| self.err(den_at))?;
                return Ok(Some(value + f));
            }
        }
        self.pos = save;
        Ok(Some(value))
    }
}

/// Scans a leading quantity; returns it and the byte offset where it ends.
fn scan_quantity(text: &str) -> Result<Option<(Quantity, usize)>> {
    let mut sc = Scanner { s: text, pos: 0 };
    sc.skip_spaces();
    let start = sc.pos;
    let Some(first) = sc.number()? else {
        return Ok(None);
    };
    let end_first = sc.pos;
    sc.skip_spaces();
    let sep_at = sc.pos;
    let mut second = None;
    match sc.peek() {
        Some('-' | '–' | '—') => {
            sc.bump();
            let glued = sc.pos;
            sc.skip_spaces();
            match sc.number()? {
                Some(b) => second = Some(b),
                // "2-inch piece": a hyphenated word, not a range
                None if sc.pos == glued && sc.peek().is_some_and(char::is_alphabetic) => {
                    sc.pos = end_first;
                }
                None => return Err(sc.err(sc.pos)),
            }
        }
        Some('t' | 'T') => {
            let rest = &text[sep_at..];
            if rest.get(..2).is_some_and(|t| t.eq_ignore_ascii_case("to")) {
                sc.pos = sep_at + 2;
                let after_to = sc.pos;
                sc.skip_spaces();
                if sc.pos > after_to {
                    if let Some(b) = sc.number()? {
                        second = Some(b);
                    } else {
                        sc.pos = end_first;
                    }
                } else {
                    sc.pos = end_first;
                }
            } else {
                sc.pos = end_first;
            }
        }
        _ => sc.pos = end_first,
    }
    if second.is_some() {
        // "2-4-6" is malformed
        if matches!(sc.peek(), Some('-' | '–' | '—' | '/' | '.')) {
            return Err(sc.err(sc.pos));
        }
    } else if matches!(sc.peek(), Some('/' | '.')) {
        return Err(sc.err(sc.pos));
    }
    let original_text = text[start..sc.pos].trim().to_string();
    let q = match second {
        Some(b) => Quantity {
            value: Amount::midpoint(&first, &b),
            original_text,
            was_range: true,
        },
        None => Quantity {
            value: first,
            original_text,
            was_range: false,
        },
    };
    Ok(Some((q, sc.pos)))
}

/// Parses a leading quantity. Ranges average to their midpoint; fractions
/// become exact rationals. No leading numeral gives `None`.
pub fn parse_quantity(text: &str) -> Result<Option<Quantity>> {
    Ok(scan_quantity(text)?.map(|(q, _)| q))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Descriptors {
    pub form: Option<String>,
    pub process: Option<String>,
    pub size: Option<String>,
    pub residual: Vec<String>,
}

/// Classifies tokens against the descriptor vocabularies. Filler words are
/// dropped. When an axis gets two different values the lexically smaller
/// canonical token is kept, so the result does not depend on token order.
pub fn extract_descriptors<S: AsRef<str>>(tokens: &[S]) -> Descriptors {
    let v = Vocabulary::builtin();
    let mut d = Descriptors::default();
    for tok in tokens {
        let t = clean_token(tok.as_ref()).to_lowercase();
        if t.is_empty() || v.is_stopword(&t) {
            continue;
        }
        match v.descriptor(&t) {
            Some((axis, canon)) => {
                let slot = match axis {
                    Axis::Form => &mut d.form,
                    Axis::Process => &mut d.process,
                    Axis::Size => &mut d.size,
                };
                if slot.as_deref().is_none_or(|cur| canon < cur) {
                    *slot = Some(canon.to_string());
                }
            }
            None => d.residual.push(t),
        }
    }
    d
}

fn clean_token(t: &str) -> &str {
    t.trim_matches(|c: char| matches!(c, ',' | '.' | ';' | ':' | '!' | '?' | '"' | '*' | '\'' | '-'))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedIngredient {
    pub ingredient: String,
    pub form: Option<String>,
    pub process: Option<String>,
    pub size: Option<String>,
    pub quantity: Option<Quantity>,
    pub unit: Option<UnitId>,
    pub weight_in_grams: Option<Amount>,
    pub estimated_weight_in_grams: Option<Amount>,
    /// Parenthetical glosses, e.g. `potatoes` in `aloo (potatoes)`.
    pub glosses: Vec<String>,
    pub source_text: String,
}

impl ParsedIngredient {
    pub fn named(ingredient: &str) -> Self {
        ParsedIngredient {
            ingredient: normalize_name(ingredient),
            form: None,
            process: None,
            size: None,
            quantity: None,
            unit: None,
            weight_in_grams: None,
            estimated_weight_in_grams: None,
            glosses: Vec::new(),
            source_text: ingredient.to_string(),
        }
    }

    pub fn variant_key(&self) -> VariantKey {
        VariantKey::new(
            &self.ingredient,
            self.form.as_deref(),
            self.process.as_deref(),
            self.size.as_deref(),
        )
    }

    /// Multiplies the measured amount by `k` (quantity and explicit weight).
    pub fn scaled(&self, k: &Amount) -> ParsedIngredient {
        let mut p = self.clone();
        if let Some(q) = &mut p.quantity {
            *q = Quantity::exact(&q.value * k);
        }
        if let Some(w) = &mut p.weight_in_grams {
            *w = &*w * k;
        }
        if let Some(w) = &mut p.estimated_weight_in_grams {
            *w = &*w * k;
        }
        p
    }
}

/// Wire layout. Every value is a string, like the reference JSON.
#[derive(Serialize, Deserialize)]
struct ParsedIngredientWire {
    ingredient: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    process: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_in_grams: Option<Amount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    llm_estimated_weight_in_grams: Option<Amount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantity_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    glosses: Vec<String>,
    source_text: String,
}

impl Serialize for ParsedIngredient {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let quantity = self.quantity.as_ref().map(|q| render_quantity(&q.value));
        let quantity_text = match (&self.quantity, &quantity) {
            (Some(q), Some(r)) if &q.original_text != r => Some(q.original_text.clone()),
            _ => None,
        };
        ParsedIngredientWire {
            ingredient: self.ingredient.clone(),
            form: self.form.clone(),
            process: self.process.clone(),
            size: self.size.clone(),
            quantity,
            unit: self.unit.as_ref().map(|u| u.to_string()),
            weight_in_grams: self.weight_in_grams.clone(),
            llm_estimated_weight_in_grams: self.estimated_weight_in_grams.clone(),
            quantity_text,
            glosses: self.glosses.clone(),
            source_text: self.source_text.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParsedIngredient {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = ParsedIngredientWire::deserialize(d)?;
        let quantity = match (&w.quantity_text, &w.quantity) {
            (Some(t), _) | (None, Some(t)) => Some(
                parse_quantity(t)
                    .map_err(D::Error::custom)?
                    .ok_or_else(|| D::Error::custom(format!("bad quantity {t:?}")))?,
            ),
            (None, None) => None,
        };
        let unit = w
            .unit
            .as_deref()
            .map(|u| match normalize_unit_token(u) {
                UnitToken::Known(id) => Ok(id),
                UnitToken::Unknown(t) => Err(D::Error::custom(format!("unknown unit {t:?}"))),
            })
            .transpose()?;
        if w.ingredient.trim().is_empty() {
            return Err(D::Error::custom("empty ingredient"));
        }
        Ok(ParsedIngredient {
            ingredient: w.ingredient,
            form: w.form,
            process: w.process,
            size: w.size,
            quantity,
            unit,
            weight_in_grams: w.weight_in_grams,
            estimated_weight_in_grams: w.llm_estimated_weight_in_grams,
            glosses: w.glosses,
            source_text: w.source_text,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NameSource {
    /// Alias table, vocabulary or an approved alias.
    Rule,
    /// Model answer; needs review before it is stored.
    Model(Box<ModelAnswer>),
    Unresolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    pub parsed: ParsedIngredient,
    pub name_source: NameSource,
    /// Token in unit position that the ontology does not know.
    pub unknown_unit: Option<String>,
}

fn is_explicit_mass(unit: &UnitId) -> bool {
    unit.kind() == UnitKind::Mass && unit.as_str() != "pinch"
}

fn grams_of(q: &Amount, unit: &UnitId) -> Option<Amount> {
    let chain = Rulebook::builtin().chain(unit, None)?;
    (chain.base.as_str() == crate::units::GRAM).then(|| q * &chain.factor)
}

fn strip_bullet(s: &str) -> &str {
    let t = s.trim();
    for b in ["- ", "* ", "• ", "– ", "· "] {
        if let Some(rest) = t.strip_prefix(b) {
            return rest.trim_start();
        }
    }
    t
}

/// Splits parenthetical groups out of the line. An unclosed group runs to
/// the end of the line.
fn split_parens(s: &str) -> (String, Vec<String>) {
    let mut body = String::new();
    let mut groups = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' | '[' => {
                if depth > 0 {
                    cur.push(' ');
                }
                depth += 1;
                body.push(' ');
            }
            ')' | ']' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    groups.push(std::mem::take(&mut cur).trim().to_string());
                }
            }
            _ if depth > 0 => cur.push(c),
            _ => body.push(c),
        }
    }
    if depth > 0 && !cur.trim().is_empty() {
        groups.push(cur.trim().to_string());
    }
    (body, groups)
}

/// Longest unit phrase (up to three words) at the start of `tokens`.
fn match_unit(tokens: &[&str]) -> Option<(UnitId, usize)> {
    for n in (1..=tokens.len().min(3)).rev() {
        let phrase = tokens[..n]
            .iter()
            .map(|t| t.trim_end_matches(','))
            .collect::<Vec<_>>()
            .join(" ");
        let phrase = phrase.trim_start_matches('-');
        if let UnitToken::Known(u) = normalize_unit_token(phrase) {
            return Some((u, n));
        }
    }
    None
}

struct Measure {
    quantity: Option<Quantity>,
    unit: Option<UnitId>,
    rest: String,
}

fn scan_measure(text: &str) -> Result<Measure> {
    let (quantity, rest) = match scan_quantity(text)? {
        Some((q, end)) => (Some(q), &text[end..]),
        None => (None, text),
    };
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    let mut skip = 0;
    if quantity.is_none()
        && tokens
            .first()
            .is_some_and(|t| t.eq_ignore_ascii_case("a") || t.eq_ignore_ascii_case("an"))
    {
        // "a pinch of salt"; "a large spoon" is itself an alias
        if match_unit(&tokens).is_none() {
            skip = 1;
        }
    }
    if let Some((unit, n)) = match_unit(&tokens[skip..]) {
        return Ok(Measure {
            quantity,
            unit: Some(unit),
            rest: tokens[skip + n..].join(" "),
        });
    }
    // "2 small cloves garlic": the size word stays with the name
    let sized = tokens.get(skip).is_some_and(|t| {
        matches!(
            Vocabulary::builtin().descriptor(&t.to_lowercase()),
            Some((Axis::Size, _))
        )
    });
    match match_unit(&tokens[(skip + 1).min(tokens.len())..]).filter(|_| sized) {
        Some((unit, n)) => {
            let mut rest = vec![tokens[skip]];
            rest.extend(&tokens[skip + 1 + n..]);
            Ok(Measure {
                quantity,
                unit: Some(unit),
                rest: rest.join(" "),
            })
        }
        None => Ok(Measure {
            quantity,
            unit: None,
            rest: rest.to_string(),
        }),
    }
}

fn tokens_of(s: &str) -> Vec<String> {
    s.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .map(clean_token)
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Longest contiguous run of tokens (up to four) that names a known
/// ingredient; leftmost wins among equally long runs.
fn find_name_span(tokens: &[String], resolver: &Resolver) -> Option<(usize, usize, String)> {
    for len in (1..=tokens.len().min(4)).rev() {
        for start in 0..=tokens.len() - len {
            let cand = tokens[start..start + len].join(" ");
            if let Some(name) = resolver.rule_name(&cand) {
                return Some((start, start + len, name));
            }
        }
    }
    None
}

/// Parses one ingredient line into structured fields.
pub fn parse_ingredient_line(text: &str, resolver: &Resolver) -> Result<ParsedIngredient> {
    parse_ingredient_line_detailed(text, resolver).map(|l| l.parsed)
}

pub fn parse_ingredient_line_detailed(text: &str, resolver: &Resolver) -> Result<ParsedLine> {
    let line = strip_bullet(text);
    if line.is_empty() {
        return Err(Error::EmptyInput);
    }
    match parse_grammar(line, text, resolver) {
        Ok(Some(parsed)) => Ok(parsed),
        Ok(None) => fallback(
            text,
            resolver,
            Error::Parse {
                text: text.to_string(),
                offset: text.len(),
            },
        ),
        Err(e @ Error::Parse { .. }) => fallback(text, resolver, e),
        Err(e) => Err(e),
    }
}

fn fallback(text: &str, resolver: &Resolver, err: Error) -> Result<ParsedLine> {
    match resolver.normalize_ingredient(text)? {
        Some((ni, result)) => {
            let parsed = from_normalized(ni, text)?;
            Ok(ParsedLine {
                parsed,
                name_source: NameSource::Model(Box::new(ModelAnswer {
                    request: Resolver::normalize_ingredient_request(text),
                    result,
                })),
                unknown_unit: None,
            })
        }
        None => Err(err),
    }
}

/// Structured line from a NORMALIZE_INGREDIENT answer.
pub fn from_normalized(ni: NormalizedIngredient, text: &str) -> Result<ParsedIngredient> {
    let quantity = match &ni.quantity {
        Some(q) => parse_quantity(q)?,
        None => None,
    };
    let unit = ni
        .unit
        .as_deref()
        .and_then(|u| normalize_unit_token(u).known().cloned());
    let weight = match (&quantity, &unit) {
        (Some(q), Some(u)) if is_explicit_mass(u) => grams_of(&q.value, u),
        _ => None,
    };
    let key = VariantKey::new(
        &ni.ingredient,
        ni.form.as_deref(),
        ni.process.as_deref(),
        ni.size.as_deref(),
    );
    Ok(ParsedIngredient {
        ingredient: key.name,
        form: key.form,
        process: key.process,
        size: key.size,
        quantity,
        unit,
        weight_in_grams: weight,
        estimated_weight_in_grams: None,
        glosses: Vec::new(),
        source_text: text.to_string(),
    })
}

fn parse_grammar(line: &str, source_text: &str, resolver: &Resolver) -> Result<Option<ParsedLine>> {
    let v = Vocabulary::builtin();
    let (body, groups) = split_parens(line);
    let (head, tail) = match body.split_once(',') {
        Some((h, t)) => (h.to_string(), t.to_string()),
        None => (body.clone(), String::new()),
    };

    let measure = scan_measure(&head)?;
    let mut quantity = measure.quantity;
    let mut unit = measure.unit;
    let mut weight: Option<Amount> = None;

    let mut head_tokens = tokens_of(&measure.rest);
    if let Some(i) = head_tokens.iter().position(|t| t == "for") {
        head_tokens.truncate(i);
    }

    let mut descriptor_tokens: Vec<String> = tokens_of(&tail);
    let mut glosses = Vec::new();
    for g in &groups {
        let g_tokens = tokens_of(g);
        if g_tokens.is_empty() {
            continue;
        }
        // "(200 g)", "(about 2 cups)"
        let lead = g
            .split_whitespace()
            .skip_while(|t| v.is_stopword(clean_token(t)) && parse_quantity(t).ok().flatten().is_none())
            .collect::<Vec<_>>()
            .join(" ");
        if let Ok(m) = scan_measure(&lead) {
            if let (Some(q), Some(u)) = (&m.quantity, &m.unit) {
                if is_explicit_mass(u) {
                    if weight.is_none() {
                        weight = grams_of(&q.value, u);
                    }
                } else if quantity.is_none() {
                    quantity = m.quantity.clone();
                    unit = m.unit.clone();
                }
                descriptor_tokens.extend(tokens_of(&m.rest));
                continue;
            }
        }
        let d = extract_descriptors(&g_tokens);
        if d.residual.is_empty() {
            descriptor_tokens.extend(g_tokens);
        } else {
            glosses.push(g.clone());
        }
    }

    let content: Vec<String> = head_tokens.iter().filter(|t| !v.is_stopword(t)).cloned().collect();

    let mut unknown_unit = None;
    let mut name_source = NameSource::Rule;
    let ingredient: String;
    match find_name_span(&content, resolver) {
        Some((s, e, name)) => {
            if quantity.is_some() && unit.is_none() && s > 0 {
                let first = &content[0];
                if v.descriptor(first).is_none() {
                    unknown_unit = Some(first.clone());
                }
            }
            let mut after = e;
            // "6 garlic cloves"
            if unit.is_none() && quantity.is_some() {
                if let Some((u, n)) = content.get(e..).and_then(|rest| {
                    let refs: Vec<&str> = rest.iter().map(String::as_str).collect();
                    match_unit(&refs)
                }) {
                    unit = Some(u);
                    after = e + n;
                }
            }
            descriptor_tokens.extend(content[..s].iter().cloned());
            descriptor_tokens.extend(content[after..].iter().cloned());
            ingredient = name;
        }
        None => {
            let gloss_hit = glosses.iter().find_map(|g| {
                let gt: Vec<String> = tokens_of(g).into_iter().filter(|t| !v.is_stopword(t)).collect();
                find_name_span(&gt, resolver).map(|(_, _, n)| n)
            });
            let d = extract_descriptors(&content);
            descriptor_tokens.extend(content.iter().cloned());
            match gloss_hit {
                Some(name) => ingredient = name,
                None if d.residual.is_empty() => {
                    // "4 cloves": the unit word was the ingredient
                    if let (Some(u), true) = (&unit, quantity.is_some() || !content.is_empty()) {
                        let word = u.to_string();
                        match resolver.rule_name(&word) {
                            Some(n) => {
                                unit = None;
                                ingredient = n;
                            }
                            None => return Ok(None),
                        }
                    } else {
                        return Ok(None);
                    }
                }
                None => {
                    let residual = d.residual.join(" ");
                    match resolver.resolve_name(&residual)? {
                        Some(res) if res.is_model() => {
                            ingredient = normalize_name(res.name().unwrap_or(&residual));
                            name_source = NameSource::Model(Box::new(ModelAnswer {
                                request: Resolver::resolve_name_request(&residual),
                                result: res,
                            }));
                        }
                        Some(res) => ingredient = normalize_name(res.name().unwrap_or(&residual)),
                        None => {
                            ingredient = normalize_name(&residual);
                            name_source = NameSource::Unresolved;
                        }
                    }
                }
            }
        }
    }

    if let (Some(q), Some(u)) = (&quantity, &unit) {
        if is_explicit_mass(u) && weight.is_none() {
            weight = grams_of(&q.value, u);
        }
    }

    let d = extract_descriptors(&descriptor_tokens);
    let parsed = ParsedIngredient {
        ingredient,
        form: d.form,
        process: d.process,
        size: d.size,
        quantity,
        unit,
        weight_in_grams: weight,
        estimated_weight_in_grams: None,
        glosses,
        source_text: source_text.to_string(),
    };
    Ok(Some(ParsedLine {
        parsed,
        name_source,
        unknown_unit,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Amount {
        parse_quantity(s).unwrap().unwrap().value
    }

    #[test]
    fn quantities() {
        assert_eq!(q("2-4"), Amount::from_int(3));
        assert_eq!(q("2 - 4 cups"), Amount::from_int(3));
        assert_eq!(q("2 to 4"), Amount::from_int(3));
        assert_eq!(q("½"), Amount::ratio(1, 2));
        assert_eq!(q("1 1/2"), Amount::ratio(3, 2));
        assert_eq!(q("1½"), Amount::ratio(3, 2));
        assert_eq!(q("1/4"), Amount::ratio(1, 4));
        assert_eq!(q(".5"), Amount::ratio(1, 2));
        assert_eq!(q("500g"), Amount::from_int(500));
        assert_eq!(q("2-inch piece"), Amount::from_int(2));
        assert!(parse_quantity("4-6 cloves").unwrap().unwrap().was_range);
        assert_eq!(parse_quantity("salt").unwrap(), None);
        assert_eq!(parse_quantity("").unwrap(), None);
    }

    #[test]
    fn malformed_quantities_report_offset() {
        for (text, offset) in [("2--", 2), ("2-", 2), ("1/0", 2), ("2.", 2), ("1/", 2), ("2-4-6", 3)] {
            match parse_quantity(text) {
                Err(Error::Parse { offset: o, .. }) => assert_eq!(o, offset, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn descriptors() {
        let d = extract_descriptors(&["roasted", "jeera", "powder"]);
        assert_eq!(d.process.as_deref(), Some("roasted"));
        assert_eq!(d.form.as_deref(), Some("powder"));
        assert_eq!(d.residual, vec!["jeera"]);
        let d = extract_descriptors(&["potato"]);
        assert_eq!((d.form, d.process, d.size), (None, None, None));
        let a = extract_descriptors(&["chopped", "mashed"]);
        let b = extract_descriptors(&["mashed", "chopped"]);
        assert_eq!(a, b);
    }

    #[test]
    fn worked_examples() {
        let r = Resolver::rules_only();
        let p = parse_ingredient_line("2 cups boiled aloo (potatoes) (medium-sized), chopped", &r).unwrap();
        assert_eq!(p.ingredient, "potato");
        assert_eq!(p.form.as_deref(), Some("chopped"));
        assert_eq!(p.process.as_deref(), Some("boiled"));
        assert_eq!(p.size.as_deref(), Some("medium"));
        assert_eq!(p.quantity.as_ref().unwrap().value, Amount::from_int(2));
        assert_eq!(p.unit.as_ref().unwrap().as_str(), "cup");
        assert_eq!(p.weight_in_grams, None);

        let p = parse_ingredient_line("½ kg chopped medium potatoes to be taken after boiling them", &r).unwrap();
        assert_eq!(p.ingredient, "potato");
        assert_eq!(p.form.as_deref(), Some("chopped"));
        assert_eq!(p.process.as_deref(), Some("boiled"));
        assert_eq!(p.size.as_deref(), Some("medium"));
        assert_eq!(p.weight_in_grams, Some(Amount::from_int(500)));

        let p = parse_ingredient_line("salt", &r).unwrap();
        assert_eq!(p.ingredient, "salt");
        assert_eq!((p.quantity, p.unit), (None, None));
    }

    #[test]
    fn odd_shapes() {
        let r = Resolver::rules_only();
        let p = parse_ingredient_line("a pinch of salt", &r).unwrap();
        assert_eq!(p.unit.unwrap().as_str(), "pinch");
        assert_eq!(p.quantity, None);
        let p = parse_ingredient_line("4 cloves", &r).unwrap();
        assert_eq!(p.ingredient, "clove");
        assert_eq!(p.unit, None);
        let p = parse_ingredient_line("6 garlic cloves, minced", &r).unwrap();
        assert_eq!(p.ingredient, "garlic");
        assert_eq!(p.unit.unwrap().as_str(), "clove");
        assert_eq!(p.form.as_deref(), Some("minced"));
        let p = parse_ingredient_line("1 inch piece ginger, grated", &r).unwrap();
        assert_eq!(p.unit.unwrap().as_str(), "inch");
        assert_eq!(p.ingredient, "ginger");
        assert_eq!(p.form.as_deref(), Some("grated"));
        let p = parse_ingredient_line("2 tbsp groundnut oil for frying", &r).unwrap();
        assert_eq!(p.ingredient, "groundnut oil");
        assert_eq!(p.process, None);
        let p = parse_ingredient_line("paneer (200 g), cubed", &r).unwrap();
        assert_eq!(p.weight_in_grams, Some(Amount::from_int(200)));
        assert_eq!(p.form.as_deref(), Some("cubed"));
        assert!(matches!(parse_ingredient_line("   ", &r), Err(Error::EmptyInput)));
    }

    #[test]
    fn json_round_trip() {
        let r = Resolver::rules_only();
        for line in [
            "2 cups boiled aloo (potatoes) (medium-sized), chopped",
            "⅓ cup cashews",
            "2-3 green chillies, slit",
            "½ kg chopped medium potatoes",
        ] {
            let p = parse_ingredient_line(line, &r).unwrap();
            let json = serde_json::to_string(&p).unwrap();
            let back: ParsedIngredient = serde_json::from_str(&json).unwrap();
            assert_eq!(back, p, "{json}");
        }
    }
}
