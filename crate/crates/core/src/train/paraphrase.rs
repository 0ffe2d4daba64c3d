//! Rule-table query paraphrasing.
//!
//! Two tables ship with the crate: one builds the paraphrased evaluation
//! suite, the other feeds training-time augmentation. A rule rewrites a
//! phrase (or regex match) and is only applied when it leaves every numeric
//! and comparator token of the query untouched.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tokenize::tokenize;

const EVAL_TABLE: &str = include_str!("../../data/paraphrase_eval.toml");
const TRAIN_TABLE: &str = include_str!("../../data/paraphrase_train.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Synonym,
    Simplification,
    DoubleNegation,
    AntonymNegation,
    Reorder,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    kind: RuleKind,
    phrase: Option<String>,
    regex: Option<String>,
    replacement: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    version: String,
    #[serde(default = "one")]
    max_rules: usize,
    rules: Vec<RawRule>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct ParaphraseRule {
    pub kind: RuleKind,
    /// The phrase or regex as written in the table.
    pub source: String,
    pub replacement: String,
    pattern: Regex,
}

impl ParaphraseRule {
    pub fn applies(&self, text: &str) -> bool {
        self.pattern.is_match(text)
    }

    fn apply(&self, text: &str) -> String {
        let Some(m) = self.pattern.find(text) else {
            return text.to_string();
        };
        let caps = self.pattern.captures(text).expect("matched above");
        let mut rep = String::new();
        caps.expand(&self.replacement, &mut rep);
        let out = format!("{}{}{}", &text[..m.start()], rep, &text[m.end()..]);
        let out = out.split_whitespace().collect::<Vec<_>>().join(" ");
        // a rewrite at the start keeps the sentence capitalized
        if m.start() == 0 {
            capitalize_if(&out, text)
        } else {
            out
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn capitalize_if(out: &str, original: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        capitalize(out)
    } else {
        out.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ParaphraseTable {
    pub version: String,
    /// Upper bound on rules applied to one query.
    pub max_rules: usize,
    pub rules: Vec<ParaphraseRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paraphrase {
    pub text: String,
    /// `source` of each applied rule, in order.
    pub applied: Vec<String>,
}

impl Paraphrase {
    /// False when no rule applied and the text is the input unchanged.
    pub fn changed(&self) -> bool {
        !self.applied.is_empty()
    }
}

/// Number and comparator tokens, which a paraphrase must keep verbatim.
fn protected_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().next().is_some_and(|c| c.is_ascii_digit()) || matches!(t.as_str(), "%" | ">" | "<" | ">=" | "<=" | "=" | "-"))
        .collect()
}

impl ParaphraseTable {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawTable = toml::from_str(text).map_err(|e| Error::validation("paraphrase table", e.to_string()))?;
        let mut rules = Vec::with_capacity(raw.rules.len());
        for (i, r) in raw.rules.into_iter().enumerate() {
            let field = format!("rules[{i}]");
            let (source, pattern) = match (r.phrase, r.regex) {
                (Some(p), None) => {
                    let esc = regex::escape(&p);
                    let lead = if p.starts_with(|c: char| c.is_alphanumeric()) { r"\b" } else { "" };
                    let tail = if p.ends_with(|c: char| c.is_alphanumeric()) { r"\b" } else { "" };
                    (p.clone(), format!("(?i){lead}{esc}{tail}"))
                }
                (None, Some(re)) => (re.clone(), format!("(?i){re}")),
                _ => return Err(Error::validation(field, "exactly one of `phrase` or `regex` is required")),
            };
            let pattern = Regex::new(&pattern).map_err(|e| Error::validation(format!("{field}.regex"), e.to_string()))?;
            rules.push(ParaphraseRule {
                kind: r.kind,
                source,
                replacement: r.replacement,
                pattern,
            });
        }
        if raw.max_rules == 0 {
            return Err(Error::validation("max_rules", "must be >= 1"));
        }
        Ok(Self {
            version: raw.version,
            max_rules: raw.max_rules,
            rules,
        })
    }

    pub fn bundled_eval() -> Self {
        Self::parse(EVAL_TABLE).expect("bundled eval table parses")
    }

    pub fn bundled_train() -> Self {
        Self::parse(TRAIN_TABLE).expect("bundled train table parses")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Rules whose pattern matches `text` and whose rewrite keeps the
    /// numeric tokens.
    pub fn applicable(&self, text: &str) -> Vec<usize> {
        let protected = protected_tokens(text);
        (0..self.rules.len())
            .filter(|&i| {
                let r = &self.rules[i];
                if !r.applies(text) {
                    return false;
                }
                let out = r.apply(text);
                out != text && protected_tokens(&out) == protected
            })
            .collect()
    }

    /// `(source, replacement)` pairs, for checking that two tables share no rule.
    pub fn rule_pairs(&self) -> BTreeSet<(String, String)> {
        self.rules
            .iter()
            .map(|r| (r.source.to_lowercase(), r.replacement.to_lowercase()))
            .collect()
    }
}

/// Rewrites `query` with up to `table.max_rules` randomly chosen applicable
/// rules. Without an applicable rule the query comes back unchanged.
pub fn augment_paraphrase<R: Rng>(query: &str, table: &ParaphraseTable, rng: &mut R) -> Paraphrase {
    let mut text = query.to_string();
    let mut applied = Vec::new();
    let mut used = BTreeSet::new();
    while applied.len() < table.max_rules {
        let options: Vec<usize> = table
            .applicable(&text)
            .into_iter()
            .filter(|i| !used.contains(i))
            .collect();
        let Some(&pick) = options.choose(rng) else {
            break;
        };
        used.insert(pick);
        text = table.rules[pick].apply(&text);
        applied.push(table.rules[pick].source.clone());
    }
    Paraphrase { text, applied }
}
