//! Parses a free-text report into sections and statements, then maps each
//! statement onto catalog subcategories.

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::cohort::{labels_of_parsed, Categorizer};
use echo_cohort::parser::parse_report;
use echo_cohort::quantity::extract_lvef;

const REPORT: &str = "\
REPORT: demo-1
LEFT VENTRICLE: Left ventricular wall thickness, cavity size, and systolic function are normal.
Hyperdynamic LV systolic function.
MITRAL VALVE: Mild (1+) mitral regurgitation is seen.
CONCLUSIONS: The left ventricular ejection fraction is 60 to 65%. No pericardial effusion.
";

fn main() -> anyhow::Result<()> {
    let parsed = parse_report(REPORT)?;
    for (name, text) in &parsed.sections {
        println!("[{name}] {text}");
    }
    let catalog = ConditionCatalog::bundled();
    let categorizer = Categorizer::new(&catalog);
    println!();
    for s in parsed.lv_statements.iter().chain(&parsed.summary_sentences) {
        let ids = categorizer.categorize(s);
        println!("{s:<90} -> {:?}", ids.iter().map(|i| i.as_str()).collect::<Vec<_>>());
    }
    println!("\nlabels: {:?}", labels_of_parsed(&parsed, &categorizer));
    for m in parsed.summary_sentences.iter().flat_map(|s| extract_lvef(s)) {
        println!("LVEF mention `{}` -> [{}, {}]", m.raw_span, m.lo, m.hi);
    }
    Ok(())
}
