//! Condition catalog: conditions, their subcategories, and the statement
//! variants that phrase each subcategory.
//!
//! The catalog is the single source of ground truth. The corpus generator
//! composes reports from it, categorization looks statements up in it, and
//! every relevance judgment is derived from the subcategory labels it defines.
//!
//! On disk the catalog is a header line `echo-corpus v1` followed by a TOML
//! body:
//!
//! ```text
//! echo-corpus v1
//! version = "lv-catalog-1.0"
//!
//! [[distractors]]
//! topic = "left atrium"
//! sentences = ["The left atrium is normal in size."]
//!
//! [[conditions]]
//! name = "hypokinesis"
//! ood = false
//!
//! [[conditions.subcategories]]
//! id = "hypokinesis-mild"
//! label = "mild hypokinesis"
//! variants = ["There is mild global left ventricular hypokinesis on this study."]
//! ```
//!
//! Subcategories may carry an `lvef_template = { values = ["55", "55-60", ">55"] }`;
//! their variants then contain a `{lvef}` placeholder that is filled with one
//! of the values followed by `%`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::parser::normalize_statement;
use crate::quantity;

pub const FILE_HEADER: &str = "echo-corpus v1";
pub const LVEF_PLACEHOLDER: &str = "{lvef}";

const DEFAULT_CATALOG: &str = include_str!("../data/catalog.echo");

/// Identifier of a subcategory, the unit of relevance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubcategoryId(pub String);

impl SubcategoryId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubcategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for SubcategoryId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvefTemplate {
    /// Surface forms of the value without the trailing `%`, e.g. `55`,
    /// `55-60`, `55 to 60`, `>55`.
    pub values: Vec<String>,
}

impl LvefTemplate {
    pub fn render(variant: &str, value: &str) -> String {
        variant.replace(LVEF_PLACEHOLDER, &format!("{value}%"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcategoryDef {
    pub id: SubcategoryId,
    pub condition: String,
    pub label: String,
    pub variants: Vec<String>,
    pub lvef_template: Option<LvefTemplate>,
    /// Relative frequency of this subcategory within its condition.
    pub weight: f64,
}

impl SubcategoryDef {
    pub fn is_quantity(&self) -> bool {
        self.lvef_template.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDef {
    pub name: String,
    pub subcategories: Vec<SubcategoryDef>,
    pub is_ood: bool,
    /// Relative frequency of the condition among report findings.
    pub weight: f64,
}

/// Unlabeled filler sentences, grouped by topic so a passage uses at most
/// one sentence per topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorGroup {
    pub topic: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCatalog {
    pub version: String,
    pub conditions: Vec<ConditionDef>,
    pub distractors: Vec<DistractorGroup>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    version: String,
    #[serde(default)]
    distractors: Vec<RawDistractors>,
    conditions: Vec<RawCondition>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistractors {
    topic: String,
    sentences: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCondition {
    name: String,
    #[serde(default)]
    ood: bool,
    #[serde(default = "one")]
    weight: f64,
    subcategories: Vec<RawSubcategory>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubcategory {
    id: String,
    #[serde(default)]
    condition: Option<String>,
    label: String,
    #[serde(default = "one")]
    weight: f64,
    variants: Vec<String>,
    #[serde(default)]
    lvef_template: Option<LvefTemplate>,
}

fn one() -> f64 {
    1.0
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<ConditionCatalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConditionCatalog::parse(&text)
}

impl ConditionCatalog {
    /// The catalog bundled with the crate.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }

    pub fn bundled_text() -> &'static str {
        DEFAULT_CATALOG
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        if header.trim_end() != FILE_HEADER {
            return Err(Error::Header {
                expected: FILE_HEADER.into(),
                found: header.trim_end().into(),
            });
        }
        let raw: RawCatalog = toml::from_str(body)
            .map_err(|e| Error::validation("catalog", e.to_string().trim().to_string()))?;

        let conditions = raw
            .conditions
            .into_iter()
            .map(|c| {
                let name = c.name;
                let subcategories = c
                    .subcategories
                    .into_iter()
                    .map(|s| SubcategoryDef {
                        id: SubcategoryId(s.id),
                        condition: s.condition.unwrap_or_else(|| name.clone()),
                        label: s.label,
                        variants: s.variants,
                        lvef_template: s.lvef_template,
                        weight: s.weight,
                    })
                    .collect();
                ConditionDef {
                    name,
                    subcategories,
                    is_ood: c.ood,
                    weight: c.weight,
                }
            })
            .collect();
        let catalog = ConditionCatalog {
            version: raw.version,
            conditions,
            distractors: raw
                .distractors
                .into_iter()
                .map(|d| DistractorGroup {
                    topic: d.topic,
                    sentences: d.sentences,
                })
                .collect(),
        };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version.trim().is_empty() {
            return Err(Error::validation("version", "must not be empty"));
        }
        if self.conditions.is_empty() {
            return Err(Error::validation("conditions", "catalog has no conditions"));
        }
        let mut names = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for (ci, cond) in self.conditions.iter().enumerate() {
            let field = format!("conditions[{ci}]");
            if cond.name.trim().is_empty() {
                return Err(Error::validation(format!("{field}.name"), "must not be empty"));
            }
            if !names.insert(cond.name.as_str()) {
                return Err(Error::DuplicateId(cond.name.clone()));
            }
            if !(cond.weight.is_finite() && cond.weight >= 0.0) {
                return Err(Error::validation(format!("{field}.weight"), "must be finite and >= 0"));
            }
            if cond.subcategories.is_empty() {
                return Err(Error::validation(
                    format!("{field}.subcategories"),
                    "condition has no subcategories",
                ));
            }
            for (si, sub) in cond.subcategories.iter().enumerate() {
                let field = format!("{field}.subcategories[{si}]");
                if sub.id.0.trim().is_empty() {
                    return Err(Error::validation(format!("{field}.id"), "must not be empty"));
                }
                if !ids.insert(sub.id.0.as_str()) {
                    return Err(Error::DuplicateId(sub.id.0.clone()));
                }
                if sub.condition != cond.name {
                    return Err(Error::validation(
                        format!("{field}.condition"),
                        format!("`{}` does not match enclosing condition `{}`", sub.condition, cond.name),
                    ));
                }
                if !(sub.weight.is_finite() && sub.weight >= 0.0) {
                    return Err(Error::validation(format!("{field}.weight"), "must be finite and >= 0"));
                }
                if sub.variants.is_empty() {
                    return Err(Error::validation(format!("{field}.variants"), "needs at least one variant"));
                }
                let mut seen = BTreeSet::new();
                for (vi, v) in sub.variants.iter().enumerate() {
                    let vfield = format!("{field}.variants[{vi}]");
                    if normalize_statement(v).is_empty() {
                        return Err(Error::validation(vfield, "empty statement"));
                    }
                    if !seen.insert(v.as_str()) {
                        return Err(Error::validation(vfield, format!("duplicate variant `{v}`")));
                    }
                    let has_placeholder = v.contains(LVEF_PLACEHOLDER);
                    if has_placeholder != sub.lvef_template.is_some() {
                        return Err(Error::validation(
                            vfield,
                            "`{lvef}` placeholder must appear exactly in subcategories with an lvef_template",
                        ));
                    }
                }
                if let Some(t) = &sub.lvef_template {
                    let tfield = format!("{field}.lvef_template.values");
                    if t.values.is_empty() {
                        return Err(Error::validation(tfield, "needs at least one value"));
                    }
                    for v in &sub.variants {
                        for value in &t.values {
                            let rendered = LvefTemplate::render(v, value);
                            if quantity::extract_lvef(&rendered).len() != 1 {
                                return Err(Error::validation(
                                    tfield,
                                    format!("`{rendered}` does not contain exactly one parseable LVEF mention"),
                                ));
                            }
                        }
                    }
                }
            }
        }
        for (gi, g) in self.distractors.iter().enumerate() {
            if g.sentences.is_empty() {
                return Err(Error::validation(format!("distractors[{gi}].sentences"), "empty group"));
            }
        }
        Ok(())
    }

    pub fn subcategories(&self) -> impl Iterator<Item = &SubcategoryDef> {
        self.conditions.iter().flat_map(|c| c.subcategories.iter())
    }

    pub fn subcategory(&self, id: &str) -> Option<&SubcategoryDef> {
        self.subcategories().find(|s| s.id.0 == id)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionDef> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn condition_of(&self, id: &str) -> Option<&ConditionDef> {
        self.conditions
            .iter()
            .find(|c| c.subcategories.iter().any(|s| s.id.0 == id))
    }

    pub fn ood_conditions(&self) -> impl Iterator<Item = &ConditionDef> {
        self.conditions.iter().filter(|c| c.is_ood)
    }

    pub fn is_ood_subcategory(&self, id: &str) -> bool {
        self.condition_of(id).is_some_and(|c| c.is_ood)
    }

    pub fn variant_count(&self) -> usize {
        self.subcategories().map(|s| s.variants.len()).sum()
    }

    /// Every concrete statement the catalog can produce, normalized, with
    /// the subcategories it expresses. Template variants are expanded over
    /// their value lists. A statement listed under several subcategories
    /// (e.g. "wall thickness, cavity size, and systolic function are
    /// normal") maps to all of them.
    pub fn statement_map(&self) -> BTreeMap<String, Vec<SubcategoryId>> {
        let mut map: BTreeMap<String, Vec<SubcategoryId>> = BTreeMap::new();
        for sub in self.subcategories() {
            for v in &sub.variants {
                match &sub.lvef_template {
                    None => push_unique(map.entry(normalize_statement(v)).or_default(), &sub.id),
                    Some(t) => {
                        for value in &t.values {
                            let s = normalize_statement(&LvefTemplate::render(v, value));
                            push_unique(map.entry(s).or_default(), &sub.id);
                        }
                    }
                }
            }
        }
        for ids in map.values_mut() {
            ids.sort();
        }
        map
    }

    /// Stable content hash, used to tie index files to the catalog they
    /// were built from.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("catalog serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

fn push_unique(ids: &mut Vec<SubcategoryId>, id: &SubcategoryId) {
    if !ids.contains(id) {
        ids.push(id.clone());
    }
}
