//! Merges a human-labelled and a synthetic dataset with source markers,
//! splits by document and reports class balance.

use qaforge::dataset::{
    class_stats, mark_dataset, merge_datasets, split_by_document, Answer, Article, DatasetSource, Paragraph,
    QaItem, SquadDataset,
};

fn dataset(prefix: &str, docs: usize) -> SquadDataset {
    let paragraphs = (0..docs)
        .map(|d| {
            let context = format!("Report {prefix}{d} says Acme grew in Berlin.");
            let start = context.find("Berlin").unwrap();
            let mut qas = vec![QaItem::answerable(format!("{prefix}{d}a"), "Where did Acme grow?", Answer::new("Berlin", start))];
            if d % 3 == 0 {
                qas.push(QaItem::impossible(format!("{prefix}{d}u"), "Who is the CEO?"));
            }
            Paragraph::new(context, qas)
        })
        .collect();
    SquadDataset::new(vec![Article::new(prefix, paragraphs)])
}

pub fn run() -> Result<(usize, usize), Box<dyn std::error::Error>> {
    let human = mark_dataset(&dataset("h", 6), DatasetSource::Squad);
    let synthetic = mark_dataset(&dataset("s", 14), DatasetSource::Syfter);
    let (merged, report) = merge_datasets(&human, &synthetic);
    println!("merged: {report:?}");
    let stats = class_stats(&merged);
    println!(
        "answerable {} unanswerable {} ({:.1}%)",
        stats.answerable,
        stats.unanswerable,
        100.0 * stats.unanswerable_share
    );
    let (train, test, split) = split_by_document(&merged, 0.2, 42)?;
    println!(
        "train {} questions / test {} questions (target {:.1})",
        split.train_questions, split.test_questions, split.target_test_questions
    );
    Ok((train.qa_count(), test.qa_count()))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
