//! The annotation workflow without the server: group assignment, form
//! validation, majority voting and the two exports.

use qaforge::annotation::{
    annotation_stats, assign_groups, export_grammaticality_dataset, export_qa_dataset, resolve_golds,
    validate_record, write_grammaticality_tsv, AnnotationRecord, AnnotationTask, AnswerQuality, UnsuitableReason,
};

pub fn run() -> Result<usize, Box<dyn std::error::Error>> {
    let context = "Acme is a major food sector player based in Berlin.";
    let tasks: Vec<AnnotationTask> = [("t0", "Who founded the moon?", "Berlin", 44), ("t1", "What sector is Acme in?", "food", 16)]
        .into_iter()
        .map(|(id, q, a, s)| AnnotationTask {
            pair_id: id.into(),
            context: context.into(),
            question: q.into(),
            answer_text: a.into(),
            answer_start: s,
        })
        .collect();

    let annotators: Vec<String> = ["ann-a", "ann-b", "ann-c"].map(String::from).to_vec();
    let assignment = assign_groups(tasks.len(), &annotators, 3, 1.0, 1)?;
    println!("groups {:?}, slices {:?}", assignment.groups, assignment.slices);

    let bad = AnnotationRecord::suitable("t1", "ann-a", AnswerQuality::Adequate, Some("Munich"));
    let problems: Vec<String> = validate_record(&bad, &tasks[1]).iter().map(|v| v.to_string()).collect();
    println!("rejected submission: {problems:?}");

    let mut records = Vec::new();
    for a in &annotators {
        records.push(AnnotationRecord::unsuitable("t0", a, UnsuitableReason::NotAnswerable));
        let quality = if a == "ann-c" { AnswerQuality::Adequate } else { AnswerQuality::PreciseCorrect };
        let correction = (quality == AnswerQuality::Adequate).then_some("food sector");
        records.push(AnnotationRecord::suitable("t1", a, quality, correction));
    }
    let golds = resolve_golds(&records)?;
    println!("stats: {:?}", annotation_stats(&golds));

    let (dataset, report) = export_qa_dataset(&golds, &tasks)?;
    println!("QA export: {report:?}");
    println!("{}", dataset.to_canonical_json());
    let rows = export_grammaticality_dataset(&golds, &tasks)?;
    write_grammaticality_tsv(&rows, std::io::stdout())?;
    Ok(dataset.qa_count())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
