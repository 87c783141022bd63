//! Scores generated QA pairs by answering each question against its own
//! context and comparing the answer with the generated one.

use qaforge::dataset::{Answer, Article, Paragraph, QaItem, SquadDataset};
use qaforge::gateway::stub::{CorruptingQa, OracleQa};
use qaforge::metrics::roundtrip_evaluate;

/// Severity, exact match and similarity, in percent.
pub type Curve = Vec<(usize, f64, f64)>;

pub fn run() -> Result<Curve, Box<dyn std::error::Error>> {
    let context = "Shares of Acme Holdings rose sharply on Monday.";
    let dataset = SquadDataset::new(vec![Article::new(
        "demo",
        vec![Paragraph::new(
            context,
            vec![QaItem::answerable("q1", "What rose sharply on Monday?", Answer::new("Shares of Acme Holdings", 0))],
        )],
    )]);

    let (oracle, _) = roundtrip_evaluate(&dataset, &OracleQa::from_dataset(&dataset));
    println!("oracle: EM {:.1} similarity {:.1}", oracle.exact_match_pct, oracle.similarity_pct);

    let mut curve = Vec::new();
    for dropped in 0..=4 {
        let (score, items) = roundtrip_evaluate(&dataset, &CorruptingQa::from_dataset(&dataset, dropped));
        println!(
            "drop {dropped} token(s): EM {:>5.1} similarity {:>5.1}  answer {:?}",
            score.exact_match_pct, score.similarity_pct, items[0].predicted_answer
        );
        curve.push((dropped, score.exact_match_pct, score.similarity_pct));
    }
    Ok(curve)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
