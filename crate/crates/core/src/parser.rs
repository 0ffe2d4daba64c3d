//! Report text parsing: section detection, statement splitting and the
//! inverse rendering used for the synthetic corpus.
//!
//! A section starts at a line of the form `HEADER:` where the header is
//! uppercase. Text after the colon on the same line belongs to the section.
//! Known headers are folded to canonical names through an alias table;
//! unknown uppercase headers still open their own section.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::SyntheticReport;

pub const SECTION_REPORT_ID: &str = "report id";
pub const SECTION_LV: &str = "left ventricle";
pub const SECTION_SUMMARY: &str = "summary";

/// Header spellings folded to a canonical section name.
pub const DEFAULT_ALIASES: &[(&str, &str)] = &[
    ("REPORT ID", SECTION_REPORT_ID),
    ("ID", SECTION_REPORT_ID),
    ("LEFT VENTRICLE", SECTION_LV),
    ("LEFT VENTRICULAR", SECTION_LV),
    ("LV", SECTION_LV),
    ("LEFT VENTRICLE FINDINGS", SECTION_LV),
    ("SUMMARY", SECTION_SUMMARY),
    ("IMPRESSION", SECTION_SUMMARY),
    ("CONCLUSION", SECTION_SUMMARY),
    ("CONCLUSIONS", SECTION_SUMMARY),
    ("INTERPRETATION", SECTION_SUMMARY),
    ("FINDINGS", "findings"),
    ("RIGHT VENTRICLE", "right ventricle"),
    ("LEFT ATRIUM", "left atrium"),
    ("RIGHT ATRIUM", "right atrium"),
    ("AORTA", "aorta"),
    ("AORTIC VALVE", "aortic valve"),
    ("MITRAL VALVE", "mitral valve"),
    ("TRICUSPID VALVE", "tricuspid valve"),
    ("PERICARDIUM", "pericardium"),
];

/// Words ending in a period that never end a sentence.
const ABBREVIATIONS: &[&str] = &["e.g.", "i.e.", "approx.", "vs.", "dr.", "no.", "est.", "incl."];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReport {
    pub report_id: String,
    /// Sections in document order, keyed by canonical name.
    pub sections: Vec<(String, String)>,
    pub lv_statements: Vec<String>,
    pub summary_sentences: Vec<String>,
}

impl ParsedReport {
    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }
}

/// Why a report was not admitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Excluded {
    MissingLvSection,
    EmptyLvSection,
    MissingSummary,
}

impl fmt::Display for Excluded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Excluded::MissingLvSection => "no left ventricle section",
            Excluded::EmptyLvSection => "left ventricle section has no statements",
            Excluded::MissingSummary => "no summary section",
        })
    }
}

impl std::error::Error for Excluded {}

#[derive(Debug, Clone)]
pub struct ReportParser {
    aliases: BTreeMap<String, String>,
}

impl Default for ReportParser {
    fn default() -> Self {
        Self::with_aliases(DEFAULT_ALIASES.iter().map(|(a, c)| (a.to_string(), c.to_string())))
    }
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Z][A-Z0-9 /&'()-]*?)\s*:\s*(.*)$").expect("header regex"))
}

impl ReportParser {
    pub fn with_aliases(aliases: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            aliases: aliases.into_iter().map(|(a, c)| (a.to_uppercase(), c)).collect(),
        }
    }

    fn canonical(&self, header: &str) -> String {
        let key = header.split_whitespace().collect::<Vec<_>>().join(" ");
        self.aliases
            .get(&key)
            .cloned()
            .unwrap_or_else(|| key.to_lowercase())
    }

    pub fn parse(&self, raw: &str) -> Result<ParsedReport, Excluded> {
        let mut sections: Vec<(String, String)> = Vec::new();
        for line in raw.lines() {
            if let Some(c) = header_regex().captures(line) {
                let header = c.get(1).map_or("", |m| m.as_str());
                // Mixed-case text such as "Note: ..." is content, not a header.
                if header.chars().any(char::is_lowercase) {
                    append_line(&mut sections, line);
                    continue;
                }
                let name = self.canonical(header);
                let rest = c.get(2).map_or("", |m| m.as_str()).trim();
                sections.push((name, rest.to_string()));
            } else {
                append_line(&mut sections, line);
            }
        }

        let report_id = sections
            .iter()
            .find(|(n, _)| n == SECTION_REPORT_ID)
            .map(|(_, t)| t.trim().to_string())
            .unwrap_or_default();

        let lv_text = join_sections(&sections, SECTION_LV).ok_or(Excluded::MissingLvSection)?;
        let lv_statements = split_statements(&lv_text);
        if lv_statements.is_empty() {
            return Err(Excluded::EmptyLvSection);
        }
        let summary_text = join_sections(&sections, SECTION_SUMMARY).ok_or(Excluded::MissingSummary)?;
        let summary_sentences = split_statements(&summary_text);
        if summary_sentences.is_empty() {
            return Err(Excluded::MissingSummary);
        }
        Ok(ParsedReport {
            report_id,
            sections,
            lv_statements,
            summary_sentences,
        })
    }
}

fn append_line(sections: &mut [(String, String)], line: &str) {
    if let Some((_, text)) = sections.last_mut() {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(line);
    }
}

fn join_sections(sections: &[(String, String)], name: &str) -> Option<String> {
    let parts: Vec<&str> = sections
        .iter()
        .filter(|(n, _)| n == name)
        .map(|(_, t)| t.as_str())
        .collect();
    (!parts.is_empty()).then(|| parts.join("\n"))
}

/// Parses with the default header aliases.
pub fn parse_report(raw: &str) -> Result<ParsedReport, Excluded> {
    ReportParser::default().parse(raw)
}

/// Splits section text into statements at line breaks and at sentence
/// punctuation followed by whitespace. Decimals never split because the
/// period is followed by a digit; listed abbreviations are protected.
pub fn split_statements(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let chars: Vec<char> = line.chars().collect();
        let mut start = 0;
        for i in 0..chars.len() {
            let c = chars[i];
            if !matches!(c, '.' | '!' | '?' | ';') {
                continue;
            }
            let next_is_space = chars.get(i + 1).is_some_and(|n| n.is_whitespace());
            if !next_is_space {
                continue;
            }
            if c == '.' && ends_with_abbreviation(&chars[start..=i]) {
                continue;
            }
            push_statement(&mut out, &chars[start..=i]);
            start = i + 1;
        }
        push_statement(&mut out, &chars[start..]);
    }
    out
}

fn ends_with_abbreviation(chars: &[char]) -> bool {
    let s: String = chars.iter().collect::<String>().to_lowercase();
    let last = s.split_whitespace().last().unwrap_or("");
    ABBREVIATIONS.contains(&last)
}

fn push_statement(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Lowercases, collapses whitespace and strips trailing punctuation.
pub fn normalize_statement(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?'))
        .to_string()
}

/// Renders a report in the sectioned text layout accepted by [`parse_report`].
pub fn render_report(r: &SyntheticReport) -> String {
    let mut out = String::new();
    out.push_str("REPORT ID: ");
    out.push_str(&r.report_id);
    out.push_str("\nLEFT VENTRICLE:\n");
    for f in &r.findings_lv {
        out.push_str(f);
        out.push('\n');
    }
    out.push_str("IMPRESSION:\n");
    out.push_str(&r.summary);
    out.push('\n');
    out
}

/// Writes reports as a length-prefixed stream: `@report <bytes>` then the
/// rendered text of exactly that many bytes.
pub fn render_stream<'a>(reports: impl IntoIterator<Item = &'a SyntheticReport>) -> String {
    let mut out = String::new();
    for r in reports {
        let body = render_report(r);
        out.push_str(&format!("@report {}\n", body.len()));
        out.push_str(&body);
    }
    out
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("malformed report stream at byte {offset}: {message}")]
pub struct StreamError {
    pub offset: usize,
    pub message: String,
}

/// Splits a length-prefixed stream into raw report texts.
pub fn split_stream(stream: &str) -> Result<Vec<&str>, StreamError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < stream.len() {
        let rest = &stream[pos..];
        if rest.trim().is_empty() {
            break;
        }
        let nl = rest.find('\n').ok_or_else(|| StreamError {
            offset: pos,
            message: "unterminated length line".into(),
        })?;
        let line = &rest[..nl];
        let n: usize = line
            .strip_prefix("@report ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| StreamError {
                offset: pos,
                message: format!("expected `@report <bytes>`, found `{line}`"),
            })?;
        let start = pos + nl + 1;
        let end = start + n;
        if end > stream.len() || !stream.is_char_boundary(end) {
            return Err(StreamError {
                offset: start,
                message: format!("declared length {n} overruns the stream"),
            });
        }
        out.push(&stream[start..end]);
        pos = end;
    }
    Ok(out)
}
