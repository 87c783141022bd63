//! SQuAD 2.0 scoring of model predictions, with and without a no-answer
//! threshold, and tuning of that threshold.

use std::collections::BTreeMap;

use qaforge::dataset::{Answer, Article, Paragraph, QaItem, SquadDataset};
use qaforge::metrics::{evaluate_qa, Prediction};
use qaforge::train::{tune_null_threshold, write_sweep_csv};

pub fn run() -> Result<f64, Box<dyn std::error::Error>> {
    let context = "Acme is a major food sector player based in Berlin.";
    let dataset = SquadDataset::new(vec![Article::new(
        "demo",
        vec![Paragraph::new(
            context,
            vec![
                QaItem::answerable("where", "Where is Acme based?", Answer::new("Berlin", 44)),
                QaItem::answerable("sector", "Which sector is Acme in?", Answer::new("food sector", 16)),
                QaItem::impossible("ceo", "Who runs Acme?"),
            ],
        )],
    )]);
    let predictions: BTreeMap<String, Prediction> = [
        ("where", Prediction::new("Berlin.", 0.1)),
        ("sector", Prediction::new("the food sector", 0.3)),
        ("ceo", Prediction::new("Berlin", 0.8)),
    ]
    .into_iter()
    .map(|(id, p)| (id.to_string(), p))
    .collect();

    let raw = evaluate_qa(&dataset, &predictions, None)?;
    println!("no threshold: EM {:.2} F1 {:.2}", raw.em, raw.f1);
    let tuned = tune_null_threshold(&dataset, &predictions)?;
    let best = evaluate_qa(&dataset, &predictions, Some(tuned.best_threshold))?;
    println!("threshold {:.3}: EM {:.2} F1 {:.2}", tuned.best_threshold, best.em, best.f1);
    write_sweep_csv(&tuned, std::io::stdout())?;
    Ok(tuned.best_overall_f1)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
