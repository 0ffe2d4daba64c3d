//! LVEF quantities: extraction from passages, relational queries, matching,
//! and templated query generation.
//!
//! The grammar is a closed pattern list shipped as `data/lvef_grammar.toml`.
//! A passage mention is a cue (`LVEF`, `EF`, `ejection fraction`, ...), up to
//! a few gap words (`is estimated at`), and a value: a point (`55%`), a range
//! (`40-45%`, `40 to 45%`, `between 40 and 45%`) or a bound (`>55%`).
//! Bounds become half-open intervals clipped to `[0, 100]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cohort::{JudgedQuery, Judgments, QueryTarget};
use crate::corpus::PassageId;
use crate::error::{Error, Result};

const GRAMMAR_TEXT: &str = include_str!("../data/lvef_grammar.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Relation {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Range,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::Lt,
        Relation::Gt,
        Relation::Le,
        Relation::Ge,
        Relation::Eq,
        Relation::Range,
    ];

    fn from_code(code: &str) -> Option<Self> {
        Some(match code {
            "LT" => Relation::Lt,
            "GT" => Relation::Gt,
            "LE" => Relation::Le,
            "GE" => Relation::Ge,
            "EQ" => Relation::Eq,
            "RANGE" => Relation::Range,
            _ => return None,
        })
    }

    fn sign(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Gt => ">",
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
            Relation::Range => "-",
        }
    }

    fn words(self) -> &'static [&'static str] {
        match self {
            Relation::Lt => &["less than", "below"],
            Relation::Gt => &["greater than", "above"],
            Relation::Le => &["at most"],
            Relation::Ge => &["at least"],
            Relation::Eq => &["equal to"],
            Relation::Range => &[],
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Relation::Lt => "LT",
            Relation::Gt => "GT",
            Relation::Le => "LE",
            Relation::Ge => "GE",
            Relation::Eq => "EQ",
            Relation::Range => "RANGE",
        };
        f.write_str(s)
    }
}

/// A closed interval of LVEF percent found in a passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityMention {
    pub passage_id: Option<PassageId>,
    pub lo: f64,
    pub hi: f64,
    pub raw_span: String,
}

impl QuantityMention {
    pub fn interval(&self) -> [f64; 2] {
        [self.lo, self.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityQuery {
    pub relation: Relation,
    pub a: f64,
    /// Upper end, present only for [`Relation::Range`].
    pub b: Option<f64>,
    pub surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchSemantics {
    /// The whole mention interval must satisfy the predicate.
    #[default]
    Strict,
    /// Some point of the mention interval satisfies the predicate.
    Overlap,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarFile {
    #[allow(dead_code)]
    version: String,
    cues: Vec<String>,
    gap_words: Vec<String>,
    comparators: Vec<(String, String)>,
    range_connectors: Vec<String>,
}

struct Grammar {
    mention: Regex,
    query: Regex,
    comparators: Vec<(String, Relation)>,
}

fn alternation(items: &[String]) -> String {
    items
        .iter()
        .map(|s| {
            let escaped = regex::escape(s);
            if s.chars().next().is_some_and(char::is_alphanumeric) {
                format!(r"\b{escaped}\b")
            } else {
                escaped
            }
        })
        .collect::<Vec<_>>()
        .join("|")
}

fn grammar() -> &'static Grammar {
    static GRAMMAR: OnceLock<Grammar> = OnceLock::new();
    GRAMMAR.get_or_init(|| {
        let file: GrammarFile = toml::from_str(GRAMMAR_TEXT).expect("bundled grammar parses");
        let comparators: Vec<(String, Relation)> = file
            .comparators
            .iter()
            .map(|(s, code)| (s.clone(), Relation::from_code(code).expect("relation code")))
            .collect();
        let cues = alternation(&file.cues);
        let gaps = alternation(&file.gap_words);
        let cmps = alternation(&comparators.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());
        let conn = alternation(&file.range_connectors);
        let num = r"\d{1,3}(?:\.\d+)?";
        let mention = format!(
            r"(?i)(?:{cues})(?:\s*(?:{gaps}|:))*\s*(?:\bbetween\s+(?P<ba>{num})\s*%?\s*(?:\band\b|{conn})\s*(?P<bb>{num})\s*%|(?P<cmp>{cmps})\s*(?P<cv>{num})\s*%|(?P<ra>{num})\s*%?\s*(?:{conn})\s*(?P<rb>{num})\s*%|(?P<pv>{num})\s*%)"
        );
        let query = format!(
            r"(?i)^\s*(?:expected\s+)?(?:{cues})\s*(?:(?P<cmp>{cmps})\s*(?P<v>{num})\s*%|(?:between|measured at|in range of)\s+(?P<a>{num})\s*%?\s*(?:\band\b|{conn})\s*(?P<b>{num})\s*%)\s*\.?\s*$"
        );
        Grammar {
            mention: Regex::new(&mention).expect("mention regex"),
            query: Regex::new(&query).expect("query regex"),
            comparators,
        }
    })
}

/// Source of the mention pattern, for clients that highlight spans.
pub fn mention_pattern() -> &'static str {
    grammar().mention.as_str()
}

/// The bundled grammar file.
pub fn grammar_source() -> &'static str {
    GRAMMAR_TEXT
}

fn comparator_relation(surface: &str) -> Option<Relation> {
    let s = surface.to_lowercase();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    grammar()
        .comparators
        .iter()
        .find(|(c, _)| *c == s)
        .map(|(_, r)| *r)
}

fn in_percent_range(v: f64) -> bool {
    (0.0..=100.0).contains(&v)
}

/// Finds every LVEF mention in `passage`, in text order.
pub fn extract_lvef(passage: &str) -> Vec<QuantityMention> {
    let g = grammar();
    let mut out = Vec::new();
    for caps in g.mention.captures_iter(passage) {
        let num = |name: &str| caps.name(name).and_then(|m| m.as_str().parse::<f64>().ok());
        let interval = if let (Some(a), Some(b)) = (num("ba"), num("bb")) {
            Some((a.min(b), a.max(b)))
        } else if let (Some(a), Some(b)) = (num("ra"), num("rb")) {
            Some((a.min(b), a.max(b)))
        } else if let Some(v) = num("cv") {
            let rel = caps.name("cmp").and_then(|m| comparator_relation(m.as_str()));
            match rel {
                Some(Relation::Gt | Relation::Ge) => Some((v, 100.0)),
                Some(Relation::Lt | Relation::Le) => Some((0.0, v)),
                Some(Relation::Eq) => Some((v, v)),
                _ => None,
            }
        } else {
            num("pv").map(|v| (v, v))
        };
        if let Some((lo, hi)) = interval {
            if in_percent_range(lo) && in_percent_range(hi) {
                out.push(QuantityMention {
                    passage_id: None,
                    lo,
                    hi,
                    raw_span: caps[0].to_string(),
                });
            }
        }
    }
    out
}

/// Parses a relational LVEF query. `None` means the text is not a quantity
/// query and the caller should fall back to catalog lookup.
pub fn parse_quantity_query(text: &str) -> Option<QuantityQuery> {
    let caps = grammar().query.captures(text)?;
    let num = |name: &str| caps.name(name).and_then(|m| m.as_str().parse::<f64>().ok());
    let (relation, a, b) = if let (Some(a), Some(b)) = (num("a"), num("b")) {
        if a > b {
            return None;
        }
        (Relation::Range, a, Some(b))
    } else {
        let rel = comparator_relation(caps.name("cmp")?.as_str())?;
        (rel, num("v")?, None)
    };
    if !in_percent_range(a) || !b.map_or(true, in_percent_range) {
        return None;
    }
    Some(QuantityQuery {
        relation,
        a,
        b,
        surface: text.trim().to_string(),
    })
}

pub fn matches(m: &QuantityMention, q: &QuantityQuery) -> bool {
    matches_with(m, q, MatchSemantics::Strict)
}

pub fn matches_with(m: &QuantityMention, q: &QuantityQuery, semantics: MatchSemantics) -> bool {
    let (lo, hi, a) = (m.lo, m.hi, q.a);
    match semantics {
        MatchSemantics::Strict => match q.relation {
            Relation::Lt => hi < a,
            Relation::Gt => lo > a,
            Relation::Le => hi <= a,
            Relation::Ge => lo >= a,
            Relation::Eq => lo <= a && a <= hi,
            Relation::Range => {
                let b = q.b.unwrap_or(a);
                a <= lo && hi <= b
            }
        },
        MatchSemantics::Overlap => match q.relation {
            Relation::Lt => lo < a,
            Relation::Gt => hi > a,
            Relation::Le => lo <= a,
            Relation::Ge => hi >= a,
            Relation::Eq => lo <= a && a <= hi,
            Relation::Range => {
                let b = q.b.unwrap_or(a);
                lo <= b && hi >= a
            }
        },
    }
}

const POINT_TEMPLATES: [&str; 5] = [
    "LVEF {sign} {v}%",
    "EF {sign} {v}%",
    "ejection fraction {sign}{v}%",
    "LVEF {word} {v}%",
    "ejection fraction {word} {v}%",
];

const RANGE_TEMPLATES: [&str; 4] = [
    "LVEF between {a}-{b}%",
    "LVEF measured at {a}% to {b}%",
    "Expected LVEF in range of {a}% to {b}%",
    "EF between {a} and {b}%",
];

pub fn fmt_percent(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Number of registered templates usable for a relation.
pub fn template_count(relation: Relation) -> usize {
    match relation {
        Relation::Range => RANGE_TEMPLATES.len(),
        _ => POINT_TEMPLATES.len(),
    }
}

/// Renders a query with template `template` (modulo the template count).
/// `word` picks among the verbal forms of the comparator.
pub fn render_query(relation: Relation, a: f64, b: Option<f64>, template: usize, word: usize) -> QuantityQuery {
    let surface = match relation {
        Relation::Range => {
            let t = RANGE_TEMPLATES[template % RANGE_TEMPLATES.len()];
            t.replace("{a}", &fmt_percent(a))
                .replace("{b}", &fmt_percent(b.unwrap_or(a)))
        }
        _ => {
            let t = POINT_TEMPLATES[template % POINT_TEMPLATES.len()];
            let words = relation.words();
            t.replace("{sign}", relation.sign())
                .replace("{word}", words[word % words.len()])
                .replace("{v}", &fmt_percent(a))
        }
    };
    QuantityQuery {
        relation,
        a,
        b: if relation == Relation::Range { b.or(Some(a)) } else { None },
        surface,
    }
}

/// Samples relation, operands and template for generated LVEF queries.
#[derive(Debug, Clone)]
pub struct QuerySampler {
    pub point_values: Vec<f64>,
    pub range_starts: Vec<f64>,
    pub range_widths: Vec<f64>,
}

impl Default for QuerySampler {
    fn default() -> Self {
        Self {
            point_values: (3..=15).map(|i| f64::from(i * 5)).collect(),
            range_starts: (3..=13).map(|i| f64::from(i * 5)).collect(),
            range_widths: vec![5.0, 10.0, 15.0],
        }
    }
}

impl QuerySampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> QuantityQuery {
        let relation = *Relation::ALL.choose(rng).expect("non-empty");
        let template = rng.gen_range(0..template_count(relation));
        let word = rng.gen_range(0..4);
        match relation {
            Relation::Range => {
                let a = *self.range_starts.choose(rng).expect("range starts");
                let w = *self.range_widths.choose(rng).expect("range widths");
                render_query(relation, a, Some((a + w).min(100.0)), template, word)
            }
            _ => {
                let a = *self.point_values.choose(rng).expect("point values");
                render_query(relation, a, None, template, word)
            }
        }
    }
}

/// Passage id to LVEF mentions, built once and read-only afterwards.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LvefDatabase {
    pub mentions: BTreeMap<PassageId, Vec<QuantityMention>>,
}

impl LvefDatabase {
    pub fn build<'a>(passages: impl IntoIterator<Item = (PassageId, &'a str)>) -> Self {
        let mut mentions = BTreeMap::new();
        for (id, text) in passages {
            let found: Vec<_> = extract_lvef(text)
                .into_iter()
                .map(|mut m| {
                    m.passage_id = Some(id);
                    m
                })
                .collect();
            if !found.is_empty() {
                mentions.insert(id, found);
            }
        }
        Self { mentions }
    }

    pub fn restrict(&self, universe: &BTreeSet<PassageId>) -> Self {
        Self {
            mentions: self
                .mentions
                .iter()
                .filter(|(id, _)| universe.contains(id))
                .map(|(id, m)| (*id, m.clone()))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn passages(&self) -> impl Iterator<Item = PassageId> + '_ {
        self.mentions.keys().copied()
    }

    pub fn passage_matches(&self, id: PassageId, q: &QuantityQuery, semantics: MatchSemantics) -> bool {
        self.mentions
            .get(&id)
            .is_some_and(|ms| ms.iter().any(|m| matches_with(m, q, semantics)))
    }

    /// Passages with at least one mention matching `q`.
    pub fn matching(&self, q: &QuantityQuery, semantics: MatchSemantics) -> BTreeSet<PassageId> {
        self.mentions
            .iter()
            .filter(|(_, ms)| ms.iter().any(|m| matches_with(m, q, semantics)))
            .map(|(id, _)| *id)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LvefEvalSet {
    pub queries: Vec<QuantityQuery>,
    pub judgments: Judgments,
}

/// Generates `n_queries` distinct LVEF queries over `universe`, each with at
/// least one relevant passage.
pub fn gen_lvef_eval_set(
    db: &LvefDatabase,
    universe: &BTreeSet<PassageId>,
    n_queries: usize,
    seed: u64,
    semantics: MatchSemantics,
) -> Result<LvefEvalSet> {
    let db = db.restrict(universe);
    if db.is_empty() {
        return Err(Error::CannotGenerate {
            what: "LVEF evaluation set",
            reason: "universe has no LVEF mentions".into(),
        });
    }
    let sampler = QuerySampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut queries = Vec::with_capacity(n_queries);
    let mut judged = Vec::with_capacity(n_queries);
    let max_attempts = 200 * n_queries.max(1);
    let mut attempts = 0;
    while queries.len() < n_queries {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::CannotGenerate {
                what: "LVEF evaluation set",
                reason: format!("only {} of {n_queries} distinct queries with R >= 1", queries.len()),
            });
        }
        let q = sampler.sample(&mut rng);
        if seen.contains(&q.surface) {
            continue;
        }
        let relevant = db.matching(&q, semantics);
        if relevant.is_empty() {
            continue;
        }
        seen.insert(q.surface.clone());
        judged.push(JudgedQuery {
            query: q.surface.clone(),
            target: QueryTarget::Quantity(q.clone()),
            relevant,
        });
        queries.push(q);
    }
    Ok(LvefEvalSet {
        queries,
        judgments: Judgments {
            universe: universe.clone(),
            queries: judged,
        },
    })
}
