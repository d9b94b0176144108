//! Human review queue for model answers, staged unit rules and unknown
//! vocabulary. Item ids are content hashes, so queueing the same question
//! twice yields one item.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ResolutionRequest, ResolutionResult};
use crate::error::{Error, Result};
use crate::fct::VariantKey;
use crate::nutrient::Provenance;
use crate::units::UnitRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Approved,
    Rejected,
}

impl ReviewStatus {
    pub fn parse(s: &str) -> Result<ReviewStatus> {
        match s {
            "pending" => Ok(ReviewStatus::Pending),
            "approved" => Ok(ReviewStatus::Approved),
            "rejected" => Ok(ReviewStatus::Rejected),
            other => Err(Error::InvalidArgument(format!("unknown review status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReviewSubject {
    Resolution {
        request: ResolutionRequest,
        result: ResolutionResult,
    },
    UnitRule {
        rule_id: String,
        rule: UnitRule,
    },
    UnknownUnit {
        token: String,
        line: String,
    },
    /// No rule or model could place the ingredient; approving takes the
    /// reviewer's note as the category leaf.
    Uncategorized {
        key: VariantKey,
    },
    Alias {
        label: String,
        language: String,
        provenance: Provenance,
    },
}

/// What an approval applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReviewTarget {
    None,
    RecipeLine {
        recipe_id: String,
        line: usize,
    },
    Recipe {
        recipe_id: String,
    },
    Ingredient {
        key: VariantKey,
    },
    /// A document that only the model could structure; ingested on approval.
    NewRecipe {
        source_text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub status: ReviewStatus,
    pub at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub subject: ReviewSubject,
    pub target: ReviewTarget,
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub history: Vec<Transition>,
}

impl ReviewItem {
    pub fn created_at(&self) -> &str {
        &self.history[0].at
    }

    pub fn updated_at(&self) -> &str {
        &self.history.last().expect("non-empty history").at
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewQueue {
    items: BTreeMap<String, ReviewItem>,
}

impl ReviewQueue {
    pub fn new() -> Self {
        ReviewQueue::default()
    }

    pub fn item_id(subject: &ReviewSubject, target: &ReviewTarget) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(subject).expect("serializable"));
        h.update(b"\n");
        h.update(serde_json::to_string(target).expect("serializable"));
        format!("rv-{}", &hex::encode(h.finalize())[..12])
    }

    /// Adds a pending item, or returns the id of the identical existing one.
    pub fn enqueue(&mut self, subject: ReviewSubject, target: ReviewTarget) -> String {
        let id = Self::item_id(&subject, &target);
        self.items.entry(id.clone()).or_insert_with(|| ReviewItem {
            id: id.clone(),
            subject,
            target,
            status: ReviewStatus::Pending,
            note: None,
            history: vec![Transition {
                status: ReviewStatus::Pending,
                at: now(),
                note: None,
            }],
        });
        id
    }

    pub fn get(&self, id: &str) -> Result<&ReviewItem> {
        self.items
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("review item {id}")))
    }

    pub fn list(&self, status: Option<ReviewStatus>) -> Vec<&ReviewItem> {
        self.items
            .values()
            .filter(|i| status.is_none_or(|s| i.status == s))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Approves a pending item and runs `ingest` on it; if ingestion fails
    /// the item stays pending. Approving an approved item is a no-op and
    /// returns `false`. Rejected items cannot be approved.
    pub fn approve(
        &mut self,
        id: &str,
        note: Option<String>,
        ingest: impl FnOnce(&ReviewItem) -> Result<()>,
    ) -> Result<bool> {
        let item = self
            .items
            .get_mut(id)
            .ok_or_else(|| Error::NotFound(format!("review item {id}")))?;
        match item.status {
            ReviewStatus::Approved => Ok(false),
            ReviewStatus::Rejected => Err(Error::Conflict(format!(
                "review item {id} was rejected and stays excluded"
            ))),
            ReviewStatus::Pending => {
                ingest(item)?;
                item.status = ReviewStatus::Approved;
                item.note = note.clone().or(item.note.take());
                item.history.push(Transition {
                    status: ReviewStatus::Approved,
                    at: now(),
                    note,
                });
                Ok(true)
            }
        }
    }

    /// Rejects a pending item permanently. Rejecting twice is a no-op.
    pub fn reject(&mut self, id: &str, note: Option<String>) -> Result<bool> {
        let item = self
            .items
            .get_mut(id)
            .ok_or_else(|| Error::NotFound(format!("review item {id}")))?;
        match item.status {
            ReviewStatus::Rejected => Ok(false),
            ReviewStatus::Approved => Err(Error::Conflict(format!("review item {id} is already approved"))),
            ReviewStatus::Pending => {
                item.status = ReviewStatus::Rejected;
                item.note = note.clone().or(item.note.take());
                item.history.push(Transition {
                    status: ReviewStatus::Rejected,
                    at: now(),
                    note,
                });
                Ok(true)
            }
        }
    }

    pub fn is_rejected(&self, subject: &ReviewSubject, target: &ReviewTarget) -> bool {
        self.items
            .get(&Self::item_id(subject, target))
            .is_some_and(|i| i.status == ReviewStatus::Rejected)
    }

    pub fn load(path: &Path) -> Result<ReviewQueue> {
        if !path.exists() {
            return Ok(ReviewQueue::new());
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}
