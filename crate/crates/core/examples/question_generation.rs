//! Generates extractive QA pairs from a corpus with the deterministic stub
//! models and prints the stage funnel.

use qaforge::filter::Document;
use qaforge::gateway::Gateway;
use qaforge::pipeline::{run_pipeline, PipelineConfig};

pub fn run() -> Result<usize, Box<dyn std::error::Error>> {
    let corpus = vec![
        Document::new(
            "acme",
            "Acme Holdings opened a new plant in Berlin last spring. The company sells frozen food to Bel and other partners.",
        ),
        Document::new("too-short", "Contact us today."),
    ];
    let (dataset, pairs, report) = run_pipeline(&corpus, &Gateway::stubbed(), &PipelineConfig::default())?;
    for pair in &pairs {
        println!("{:<24} Q: {}  A: {}", pair.pair_id, pair.question, pair.answer_text);
    }
    println!("documents kept {}/{}, pairs {}", report.docs_kept, report.docs_in, report.pairs_out);
    println!("{}", dataset.to_canonical_json());
    Ok(report.pairs_out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
