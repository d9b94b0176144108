//! Ingredient category hierarchy, rooted at `Ingredient`.

use std::collections::{BTreeMap, BTreeSet};

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROOT: &str = "Ingredient";

const TREE_CSV: &str = include_str!("../data/category_tree.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTree {
    /// child -> parent; the root has no entry
    parents: BTreeMap<String, String>,
    children: BTreeMap<String, BTreeSet<String>>,
}

static BUILTIN: Lazy<CategoryTree> =
    Lazy::new(|| CategoryTree::parse(TREE_CSV).expect("shipped category tree is valid"));

impl CategoryTree {
    pub fn builtin() -> &'static CategoryTree {
        &BUILTIN
    }

    /// Reads `parent,child` edges. The single row with an empty parent names
    /// the root, which must be `Ingredient`.
    pub fn parse(text: &str) -> Result<CategoryTree> {
        let mut parents = BTreeMap::new();
        let mut children: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut roots = Vec::new();
        for row in csv::Reader::from_reader(text.as_bytes()).records() {
            let row = row?;
            let (parent, child) = (row[0].trim(), row[1].trim());
            if parent.is_empty() {
                roots.push(child.to_string());
                children.entry(child.to_string()).or_default();
                continue;
            }
            if parents.insert(child.to_string(), parent.to_string()).is_some() {
                return Err(Error::InvalidArgument(format!("category {child} has two parents")));
            }
            children
                .entry(parent.to_string())
                .or_default()
                .insert(child.to_string());
            children.entry(child.to_string()).or_default();
        }
        if roots != [ROOT] {
            return Err(Error::InvalidArgument(format!(
                "category tree must have the single root {ROOT}, found {roots:?}"
            )));
        }
        let tree = CategoryTree { parents, children };
        for node in tree.children.keys() {
            if tree.path_to(node).is_none() {
                return Err(Error::InvalidArgument(format!("category {node} does not reach {ROOT}")));
            }
        }
        Ok(tree)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.children.contains_key(name)
    }

    pub fn is_leaf(&self, name: &str) -> bool {
        self.children.get(name).is_some_and(BTreeSet::is_empty)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &str> {
        self.children
            .iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(k, _)| k.as_str())
    }

    /// Root-to-node path; `None` for unknown nodes or a broken chain.
    pub fn path_to(&self, node: &str) -> Option<Vec<String>> {
        if !self.children.contains_key(node) {
            return None;
        }
        let mut path = vec![node.to_string()];
        let mut cur = node;
        while cur != ROOT {
            cur = self.parents.get(cur)?;
            if path.len() > self.children.len() {
                return None;
            }
            path.push(cur.to_string());
        }
        path.reverse();
        Some(path)
    }

    /// True when `path` is a valid root-to-leaf path.
    pub fn is_valid_path(&self, path: &[String]) -> bool {
        match path.last() {
            Some(leaf) if self.is_leaf(leaf) => self.path_to(leaf).as_deref() == Some(path),
            _ => false,
        }
    }

    /// True when `node` lies in the subtree rooted at `ancestor`.
    pub fn is_under(&self, node: &str, ancestor: &str) -> bool {
        self.path_to(node).is_some_and(|p| p.iter().any(|c| c == ancestor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths() {
        let t = CategoryTree::builtin();
        assert_eq!(
            t.path_to("RootOrTuberousVegetable").unwrap().join("→"),
            "Ingredient→PlantOriginFood→PrimaryFoodCommodityOfPlantOrigin→Vegetable→RootOrTuberousVegetable"
        );
        assert_eq!(
            t.path_to("ProcessedMushroom").unwrap().join("→"),
            "Ingredient→FungusOrigin→SecondaryFoodCommodityOfFungusOrigin→ProcessedMushroom"
        );
        assert!(t.is_under("Cheese", "Dairy"));
        assert!(!t.is_under("Cheese", "Meat"));
        assert!(t.is_leaf("Salt"));
        assert!(!t.is_leaf("Dairy"));
        assert_eq!(t.path_to("zzz"), None);
    }

    #[test]
    fn rejects_second_root_and_cycles() {
        assert!(CategoryTree::parse("parent,child\n,Ingredient\n,Other\n").is_err());
        assert!(CategoryTree::parse("parent,child\n,Ingredient\nA,B\nB,A\n").is_err());
    }
}
