//! Filters a small corpus through the length, regex and POS stages and
//! prints why each rejected document was dropped.

use qaforge::filter::{filter_corpus, Document, FilterConfig};
use qaforge::gateway::stub::LexiconTagger;

pub fn run() -> Result<usize, Box<dyn std::error::Error>> {
    let corpus = vec![
        Document::new("news", "Acme Holdings reported strong sales of frozen food in Berlin during the first quarter."),
        Document::new("acronym", "CPE Lite is Huawei's latest mini customer premises equipment (CPE) for small offices in Europe."),
        Document::new("contract", "B 1: Financial Instruments according to Regulation 17(1)(a) of the Regulations apply here."),
        Document::new("list", "1. Reassure customers and employees about the future of the business this year."),
        Document::new("short", "content"),
    ];
    let outcome = filter_corpus(&corpus, &FilterConfig::default(), Some(&LexiconTagger))?;
    for report in &outcome.reports {
        let saves: Vec<&str> = report.whitelist_saves.iter().map(|s| s.matched.as_str()).collect();
        println!(
            "{:<9} {:<5} failed={:?} whitelisted={:?}",
            report.doc_id,
            if report.passed { "keep" } else { "drop" },
            report.failed_rules,
            saves
        );
    }
    println!("rejections by rule: {:?}", outcome.rejections_by_rule());
    Ok(outcome.kept.len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
