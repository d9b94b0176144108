//! Controlled vocabularies shared by the parser, the aggregator and the
//! rule-based resolver: descriptor tokens, filler words, multilingual
//! ingredient aliases and English singularization.
//!
//! Ambiguous descriptor tokens resolve with priority process > form, so
//! `ground` is a process. The shipped descriptor table lists each token once.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

const DESCRIPTORS_CSV: &str = include_str!("../data/descriptors.csv");
const STOPWORDS_TXT: &str = include_str!("../data/stopwords.txt");
const ALIASES_CSV: &str = include_str!("../data/ingredient_aliases.csv");
const CATEGORIES_CSV: &str = include_str!("../data/ingredient_categories.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Process,
    Form,
    Size,
}

impl Axis {
    fn parse(s: &str) -> Option<Axis> {
        match s {
            "process" => Some(Axis::Process),
            "form" => Some(Axis::Form),
            "size" => Some(Axis::Size),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct DescriptorRow {
    token: String,
    axis: String,
    canonical: String,
}

#[derive(Debug, Clone, Deserialize)]
struct AliasRow {
    alias: String,
    language: String,
    canonical: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasEntry {
    pub canonical: String,
    pub language: String,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    descriptors: HashMap<String, (Axis, String)>,
    stopwords: HashSet<String>,
    aliases: HashMap<String, AliasEntry>,
    ingredients: BTreeSet<String>,
    /// ingredient name -> category leaf
    categories: BTreeMap<String, String>,
}

static BUILTIN: Lazy<Vocabulary> = Lazy::new(Vocabulary::load_builtin);

impl Vocabulary {
    pub fn builtin() -> &'static Vocabulary {
        &BUILTIN
    }

    fn load_builtin() -> Vocabulary {
        let mut descriptors = HashMap::new();
        for row in csv::Reader::from_reader(DESCRIPTORS_CSV.as_bytes()).deserialize() {
            let row: DescriptorRow = row.expect("descriptors.csv is well formed");
            let axis = Axis::parse(&row.axis).expect("known descriptor axis");
            let prev = descriptors.insert(row.token.clone(), (axis, row.canonical));
            assert!(prev.is_none(), "duplicate descriptor token {}", row.token);
        }
        let stopwords = STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        let mut categories = BTreeMap::new();
        for row in csv::Reader::from_reader(CATEGORIES_CSV.as_bytes()).records() {
            let row = row.expect("ingredient_categories.csv is well formed");
            categories.insert(row[0].to_string(), row[1].to_string());
        }
        let mut ingredients: BTreeSet<String> = categories.keys().cloned().collect();
        let mut aliases = HashMap::new();
        for row in csv::Reader::from_reader(ALIASES_CSV.as_bytes()).deserialize() {
            let row: AliasRow = row.expect("ingredient_aliases.csv is well formed");
            ingredients.insert(row.canonical.clone());
            aliases.insert(
                alias_key(&row.alias),
                AliasEntry {
                    canonical: row.canonical,
                    language: row.language,
                },
            );
        }
        Vocabulary {
            descriptors,
            stopwords,
            aliases,
            ingredients,
            categories,
        }
    }

    /// Classifies a single token as a variant descriptor.
    pub fn descriptor(&self, token: &str) -> Option<(Axis, &str)> {
        let t = token.trim().to_lowercase();
        self.descriptors
            .get(t.as_str())
            .map(|(axis, canon)| (*axis, canon.as_str()))
    }

    /// Canonical descriptor token for `axis`, or `None` if the token is not in
    /// the controlled vocabulary for that axis.
    pub fn canonical_descriptor(&self, axis: Axis, token: &str) -> Option<&str> {
        match self.descriptor(token) {
            Some((a, canon)) if a == axis => Some(canon),
            _ => None,
        }
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(&token.to_lowercase())
    }

    pub fn alias(&self, label: &str) -> Option<&AliasEntry> {
        let key = alias_key(label);
        self.aliases
            .get(&key)
            .or_else(|| self.aliases.get(&normalize_name(&key)))
    }

    pub fn is_known_ingredient(&self, name: &str) -> bool {
        self.ingredients.contains(name)
    }

    pub fn known_ingredients(&self) -> impl Iterator<Item = &str> {
        self.ingredients.iter().map(String::as_str)
    }

    pub fn category_of(&self, name: &str) -> Option<&str> {
        self.categories.get(name).map(String::as_str)
    }

    /// Resolves a free-text name to a canonical ingredient via the alias table
    /// or the known-ingredient list. `None` on a miss.
    pub fn resolve_name(&self, text: &str) -> Option<String> {
        let name = normalize_name(text);
        if name.is_empty() {
            return None;
        }
        if let Some(e) = self.alias(&name) {
            return Some(e.canonical.clone());
        }
        if self.is_known_ingredient(&name) {
            return Some(name);
        }
        None
    }
}

fn alias_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("leaves", "leaf"),
    ("chillies", "chilli"),
    ("chilies", "chilli"),
    ("chiles", "chilli"),
    ("potatoes", "potato"),
    ("tomatoes", "tomato"),
    ("mangoes", "mango"),
    ("knives", "knife"),
    ("halves", "half"),
    ("loaves", "loaf"),
    ("pinches", "pinch"),
    ("dashes", "dash"),
    ("bunches", "bunch"),
    ("inches", "inch"),
    ("sprigs", "sprig"),
    ("anchovies", "anchovy"),
];

const INVARIANT_WORDS: &[&str] = &[
    "molasses",
    "asparagus",
    "hummus",
    "couscous",
    "citrus",
    "hibiscus",
    "octopus",
    "glass",
    "grass",
    "mass",
    "bass",
    "swiss",
    "gas",
    "dal",
    "masala",
    "ghee",
    "jeera",
    "rasam",
    "chhole",
    "chole",
    "aloo",
];

/// Singular form of one English word. Unknown shapes are returned unchanged.
pub fn singularize(word: &str) -> String {
    let w = word.to_lowercase();
    if let Some((_, s)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == w) {
        return s.to_string();
    }
    if w == "peas" {
        return "pea".into();
    }
    if INVARIANT_WORDS.contains(&w.as_str()) || w.len() <= 3 {
        return w;
    }
    if let Some(stem) = w.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suf in ["ches", "shes", "sses", "xes", "zes"] {
        if let Some(stem) = w.strip_suffix(suf) {
            return format!("{stem}{}", &suf[..suf.len() - 2]);
        }
    }
    if let Some(stem) = w.strip_suffix("oes") {
        return format!("{stem}o");
    }
    if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
        return w;
    }
    if let Some(stem) = w.strip_suffix('s') {
        return stem.to_string();
    }
    w
}

/// Lowercase, whitespace-collapsed, last word singularized.
pub fn normalize_name(text: &str) -> String {
    let mut words: Vec<String> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c == ',' || c == '.' || c == ';'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    if let Some(last) = words.last_mut() {
        *last = singularize(last);
    }
    words.join(" ")
}
