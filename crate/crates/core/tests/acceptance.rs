//! Acceptance checks. Prints one PASS/FAIL line per criterion with its
//! tolerance and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qaforge::annotation::{
    AnnotationRecord, AnnotationTask, AnswerJudgement, AnswerQuality, QuestionJudgement,
    UnsuitableReason,
};

const TOY_CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy_corpus.jsonl");
const TOY_EXPECTED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy_expected_squad.json");

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Harness {
    failures: usize,
}

impl Harness {
    fn run(&mut self, name: &str, tolerance: &str, budget: Option<Duration>, check: impl FnOnce() -> Check) {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let elapsed = started.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name} [{tolerance}] {detail} ({} ms)", elapsed.as_millis());
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn main() {
    let mut h = Harness { failures: 0 };
    h.run("filter-table-examples", "exact, 9/9, <1s", Some(Duration::from_secs(1)), filter_examples);
    h.run("metric-parity", "1e-9, <5s", Some(Duration::from_secs(5)), metric_parity);
    h.run("roundtrip-methodology", "exact", None, roundtrip);
    h.run("focal-loss", "CE 1e-12, grad rel 1e-6", None, focal_loss);
    h.run("smote", "counts exact, collinear 1e-9", None, smote);
    h.run("threshold-tuner", "grid 1e-4, F1 1e-9", None, threshold_tuner);
    h.run("split-soundness", "one document", None, split);
    h.run("annotation-state-machine", "exact", None, annotation);
    h.run("e2e-determinism", "byte-identical", None, determinism);
    h.run("service-durability", "0 inconsistencies, <60s", Some(Duration::from_secs(60)), durability);
    if h.failures > 0 {
        println!("{} criteria failed", h.failures);
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- filtering

fn filter_examples() -> Check {
    use qaforge::filter::{apply_regex_filters, filter_corpus, Document, FilterConfig, RuleSet, WhitelistSave};
    use qaforge::gateway::stub::LexiconTagger;

    let rules = RuleSet::default_set();
    let rows: [(&str, &str, &str); 7] = [
        (
            "contract-like",
            "B 1: Financial Instruments according to Regulation 17(1)(a) of the Regulations",
            "(1)(a)",
        ),
        ("numeric-list", "1. Reassure customers and employees", "1. Reassure customers and employees"),
        (
            "roman-numeric-list",
            "xi If the financial instrument has such a period",
            "xi If the financial instrument has such a period",
        ),
        ("empty-square-brackets", "[ ] An acquisition or disposal of financial instruments", "[ ]"),
        (
            "regulations",
            "B 2: Financial Instruments with similar economic effect according to Regulation 17 of the Regulations",
            "Regulation 17",
        ),
        ("very-short", "content", "content"),
        (
            "mostly-in-brackets",
            "(please tick the appropriate box or boxes):",
            "(please tick the appropriate box or boxes):",
        ),
    ];
    let mut passed = 0;
    let mut docs = Vec::new();
    for (i, (rule, text, expected)) in rows.iter().enumerate() {
        let found = rules.offending_matches(rule, text);
        ensure(found == [*expected], || format!("{rule}: matched {found:?}, expected [{expected:?}]"))?;
        let report = apply_regex_filters(&Document::new(format!("r{i}"), *text), &rules);
        ensure(report.failed_rules.iter().any(|r| r == rule), || {
            format!("{rule}: report failed {:?}", report.failed_rules)
        })?;
        docs.push(Document::new(format!("r{i}"), *text));
        passed += 1;
    }
    let outcome = filter_corpus(&docs, &FilterConfig::default(), Some(&LexiconTagger)).map_err(|e| e.to_string())?;
    ensure(outcome.kept.is_empty(), || format!("kept {:?}", outcome.kept))?;

    let saves = [
        ("CPE Lite is Huawei's latest mini customer premises equipment (CPE).", " (CPE)"),
        (
            "Bel reported strong sales momentum in the first two months of the year in global(mature) markets",
            "(mature)",
        ),
    ];
    for (text, saved) in saves {
        let report = apply_regex_filters(&Document::new("w", text), &rules);
        let expected = vec![WhitelistSave {
            rule: "contract-like".into(),
            matched: saved.into(),
        }];
        ensure(report.passed && report.whitelist_saves == expected, || {
            format!("{text:?}: passed {} saves {:?}", report.passed, report.whitelist_saves)
        })?;
        passed += 1;
    }
    Ok(format!("{passed}/9 fixtures"))
}

// ------------------------------------------------------- reference metrics

/// An independent port of the official SQuAD 2.0 evaluation procedure.
mod reference {
    use std::collections::HashMap;

    const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

    fn python_space(c: char) -> bool {
        matches!(
            c,
            ' ' | '\t' | '\n' | '\x0b' | '\x0c' | '\r' | '\x1c'..='\x1f' | '\u{85}' | '\u{a0}' | '\u{1680}'
                | '\u{2000}'..='\u{200a}' | '\u{2028}' | '\u{2029}' | '\u{202f}' | '\u{205f}' | '\u{3000}'
        )
    }

    fn word_char(c: char) -> bool {
        c.is_alphanumeric() || c == '_'
    }

    /// `\b(a|an|the)\b` replaced by a space: an article must be a whole run
    /// of word characters.
    fn remove_articles(text: &str) -> String {
        let mut out = String::new();
        let mut run = String::new();
        let flush = |run: &mut String, out: &mut String| {
            if matches!(run.as_str(), "a" | "an" | "the") {
                out.push(' ');
            } else {
                out.push_str(run);
            }
            run.clear();
        };
        for c in text.chars() {
            if word_char(c) {
                run.push(c);
            } else {
                flush(&mut run, &mut out);
                out.push(c);
            }
        }
        flush(&mut run, &mut out);
        out
    }

    pub fn normalize(s: &str) -> String {
        let lower = s.to_lowercase();
        let no_punc: String = lower.chars().filter(|c| !PUNCTUATION.contains(*c)).collect();
        let no_art = remove_articles(&no_punc);
        no_art.split(python_space).filter(|t| !t.is_empty()).collect::<Vec<_>>().join(" ")
    }

    fn tokens(s: &str) -> Vec<String> {
        if s.is_empty() {
            return Vec::new();
        }
        normalize(s).split(python_space).filter(|t| !t.is_empty()).map(String::from).collect()
    }

    fn exact(gold: &str, pred: &str) -> f64 {
        (normalize(gold) == normalize(pred)) as u8 as f64
    }

    fn f1(gold: &str, pred: &str) -> f64 {
        let g = tokens(gold);
        let p = tokens(pred);
        if g.is_empty() || p.is_empty() {
            return (g == p) as u8 as f64;
        }
        let mut counts: HashMap<&str, i64> = HashMap::new();
        for t in &g {
            *counts.entry(t).or_default() += 1;
        }
        let mut same = 0;
        for t in &p {
            if let Some(c) = counts.get_mut(t.as_str()) {
                if *c > 0 {
                    *c -= 1;
                    same += 1;
                }
            }
        }
        if same == 0 {
            return 0.0;
        }
        let precision = same as f64 / p.len() as f64;
        let recall = same as f64 / g.len() as f64;
        2.0 * precision * recall / (precision + recall)
    }

    /// Raw exact and F1 for one question.
    pub fn raw(golds: &[String], pred: &str) -> (f64, f64) {
        let mut kept: Vec<&str> = golds.iter().map(String::as_str).filter(|g| !normalize(g).is_empty()).collect();
        if kept.is_empty() {
            kept.push("");
        }
        let em = kept.iter().map(|g| exact(g, pred)).fold(f64::MIN, f64::max);
        let f = kept.iter().map(|g| f1(g, pred)).fold(f64::MIN, f64::max);
        (em, f)
    }

    pub struct Item {
        pub has_answer: bool,
        pub em: f64,
        pub f1: f64,
        pub na_prob: f64,
    }

    pub struct Eval {
        pub exact: f64,
        pub f1: f64,
        pub has_ans_exact: Option<f64>,
        pub has_ans_f1: Option<f64>,
        pub no_ans_exact: Option<f64>,
    }

    /// Overall F1 after the no-answer threshold, without the breakdown.
    pub fn overall_f1(items: &[Item], thresh: f64) -> f64 {
        let sum: f64 = items
            .iter()
            .map(|it| if it.na_prob > thresh { (!it.has_answer) as u8 as f64 } else { it.f1 })
            .sum();
        100.0 * sum / items.len() as f64
    }

    pub fn evaluate(items: &[Item], thresh: Option<f64>) -> Eval {
        let scored: Vec<(bool, f64, f64)> = items
            .iter()
            .map(|it| match thresh {
                Some(t) if it.na_prob > t => {
                    let v = (!it.has_answer) as u8 as f64;
                    (it.has_answer, v, v)
                }
                _ => (it.has_answer, it.em, it.f1),
            })
            .collect();
        let mean = |filter: &dyn Fn(bool) -> bool, pick: &dyn Fn(&(bool, f64, f64)) -> f64| {
            let sel: Vec<f64> = scored.iter().filter(|s| filter(s.0)).map(pick).collect();
            (!sel.is_empty()).then(|| 100.0 * sel.iter().sum::<f64>() / sel.len() as f64)
        };
        Eval {
            exact: mean(&|_| true, &|s| s.1).unwrap_or(0.0),
            f1: mean(&|_| true, &|s| s.2).unwrap_or(0.0),
            has_ans_exact: mean(&|h| h, &|s| s.1),
            has_ans_f1: mean(&|h| h, &|s| s.2),
            no_ans_exact: mean(&|h| !h, &|s| s.1),
        }
    }
}

const VOCAB: &[&str] = &[
    "The", "the", "a", "An", "an", "THE", "cat", "Café", "naïve", "U.S.", "state-of-the-art", "42", "3.14", "co-op",
    "Berlin", "sector", "food", "(beta)", "don't", "“quoted”", "—dash", "x_y", "ANd", "theatre", "A.", "...",
];
const SEPARATORS: &[&str] = &[" ", " ", " ", "  ", "\t", "\n", "\u{a0}", "\u{1f}", "\u{3000}"];

fn random_phrase(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(SEPARATORS.choose(rng).unwrap());
        }
        s.push_str(VOCAB.choose(rng).unwrap());
    }
    s
}

fn perturb(rng: &mut ChaCha8Rng, gold: &str) -> String {
    match rng.random_range(0..7) {
        0 => gold.to_string(),
        1 => gold.to_uppercase(),
        2 => format!("the {gold}."),
        3 => {
            let words: Vec<&str> = gold.split_whitespace().collect();
            words[..words.len().saturating_sub(1)].join(" ")
        }
        4 => format!("{gold} {}", random_phrase(rng, 2)),
        5 => String::new(),
        _ => random_phrase(rng, 4),
    }
}

struct MetricFixture {
    dataset: qaforge::dataset::SquadDataset,
    predictions: qaforge::metrics::Predictions,
    golds: Vec<(String, bool, Vec<String>)>,
}

/// `n` questions over a handful of paragraphs with null scores `k / 1000`.
fn metric_fixture(rng: &mut ChaCha8Rng, n: usize) -> MetricFixture {
    use qaforge::dataset::{Answer, Article, Paragraph, QaItem, SquadDataset};
    use qaforge::metrics::Prediction;

    let mut paragraphs: Vec<Paragraph> = Vec::new();
    let mut predictions = BTreeMap::new();
    let mut golds = Vec::new();
    for i in 0..n {
        let id = format!("q{i}");
        let impossible = rng.random_bool(0.3);
        let answers: Vec<String> = if impossible {
            Vec::new()
        } else {
            (0..rng.random_range(1..=3)).map(|_| random_phrase(rng, 5)).collect()
        };
        let context = answers.join(" ");
        let mut item = QaItem::impossible(id.clone(), "Q?");
        if !impossible {
            let mut start = 0;
            item = QaItem::answerable(id.clone(), "Q?", Answer::new(answers[0].clone(), 0));
            item.answers.clear();
            for a in &answers {
                item.answers.push(Answer::new(a.clone(), start));
                start += a.chars().count() + 1;
            }
        }
        let pred = if impossible {
            if rng.random_bool(0.5) {
                String::new()
            } else {
                random_phrase(rng, 3)
            }
        } else {
            let base = answers.choose(rng).unwrap().clone();
            perturb(rng, &base)
        };
        predictions.insert(id.clone(), Prediction::new(pred, rng.random_range(0..=1000) as f64 / 1000.0));
        golds.push((id, !impossible, answers));
        if paragraphs.is_empty() || rng.random_bool(0.5) {
            paragraphs.push(Paragraph::new(context, vec![item]));
        } else {
            paragraphs.last_mut().unwrap().qas.push(item);
        }
    }
    MetricFixture {
        dataset: SquadDataset::new(vec![Article::new("fixture", paragraphs)]),
        predictions,
        golds,
    }
}

fn reference_items(f: &MetricFixture) -> Vec<reference::Item> {
    f.golds
        .iter()
        .map(|(id, has_answer, answers)| {
            let pred = &f.predictions[id];
            let (em, f1) = reference::raw(answers, &pred.text);
            reference::Item {
                has_answer: *has_answer,
                em,
                f1,
                na_prob: pred.null_score,
            }
        })
        .collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => close(x, y, tol),
        (None, None) => true,
        _ => false,
    }
}

fn metric_parity() -> Check {
    use qaforge::metrics::{evaluate_qa, normalize_answer, score_items};

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let f = metric_fixture(&mut rng, 50);
    let mut strings = 0;
    for (id, _, answers) in &f.golds {
        for s in answers.iter().chain(std::iter::once(&f.predictions[id].text)) {
            let (ours, theirs) = (normalize_answer(s), reference::normalize(s));
            ensure(ours == theirs, || format!("normalize({s:?}): {ours:?} vs {theirs:?}"))?;
            strings += 1;
        }
    }
    let items = score_items(&f.dataset, &f.predictions).map_err(|e| e.to_string())?;
    let refs = reference_items(&f);
    for (ours, theirs) in items.iter().zip(&refs) {
        ensure(close(ours.exact_match, theirs.em, 1e-9) && close(ours.f1, theirs.f1, 1e-9), || {
            format!("{}: ({}, {}) vs ({}, {})", ours.id, ours.exact_match, ours.f1, theirs.em, theirs.f1)
        })?;
        if !ours.answerable {
            ensure(ours.exact_match == ours.f1, || format!("{}: EM != F1 on unanswerable", ours.id))?;
        }
    }
    let unanswerable = items.iter().filter(|i| !i.answerable).count();
    for thresh in [None, Some(0.0), Some(0.25), Some(0.5), Some(1.0)] {
        let ours = evaluate_qa(&f.dataset, &f.predictions, thresh).map_err(|e| e.to_string())?;
        let theirs = reference::evaluate(&refs, thresh);
        let ok = close(ours.em, theirs.exact, 1e-9)
            && close(ours.f1, theirs.f1, 1e-9)
            && close_opt(ours.answerable_em, theirs.has_ans_exact, 1e-9)
            && close_opt(ours.answerable_f1, theirs.has_ans_f1, 1e-9)
            && close_opt(ours.unanswerable_em, theirs.no_ans_exact, 1e-9);
        ensure(ok, || format!("threshold {thresh:?}: {ours:?} vs exact {} f1 {}", theirs.exact, theirs.f1))?;
    }
    Ok(format!(
        "50 items ({unanswerable} unanswerable), {strings} strings normalized, 5 thresholds"
    ))
}

// --------------------------------------------------------------- round trip

fn four_token_dataset() -> qaforge::dataset::SquadDataset {
    use qaforge::dataset::{Answer, Article, Paragraph, QaItem, SquadDataset};
    let rows = [
        ("Berlin food sector companies grew quickly last year.", "Berlin food sector companies"),
        ("Shares of Acme Holdings rose sharply on Monday.", "Shares of Acme Holdings"),
        ("Analysts expected strong quarterly dairy results again.", "strong quarterly dairy results"),
    ];
    let paragraphs = rows
        .iter()
        .enumerate()
        .map(|(i, (ctx, ans))| {
            let start = ctx.find(ans).unwrap();
            Paragraph::new(*ctx, vec![QaItem::answerable(format!("q{i}"), "What?", Answer::new(*ans, start))])
        })
        .collect();
    SquadDataset::new(vec![Article::new("four", paragraphs)])
}

fn toy_corpus() -> Vec<qaforge::filter::Document> {
    qaforge::io::read_jsonl(Path::new(TOY_CORPUS)).expect("toy corpus")
}

fn roundtrip() -> Check {
    use qaforge::gateway::stub::{CorruptingQa, OracleQa};
    use qaforge::gateway::Gateway;
    use qaforge::metrics::roundtrip_evaluate;
    use qaforge::pipeline::{run_pipeline, PipelineConfig};

    let (generated, _, _) =
        run_pipeline(&toy_corpus(), &Gateway::stubbed(), &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let (oracle, _) = roundtrip_evaluate(&generated, &OracleQa::from_dataset(&generated));
    ensure(oracle.n > 0 && oracle.exact_match_pct == 100.0 && oracle.similarity_pct == 100.0, || {
        format!("oracle on pipeline output: {oracle:?}")
    })?;

    let ds = four_token_dataset();
    let mut curve = Vec::new();
    for k in 0..=4 {
        let (s, _) = roundtrip_evaluate(&ds, &CorruptingQa::from_dataset(&ds, k));
        ensure(s.errors == 0 && s.n == 3, || format!("severity {k}: {s:?}"))?;
        curve.push((s.exact_match_pct, s.similarity_pct));
    }
    ensure(curve[1] == (0.0, 75.0), || format!("one-token corruption gave {:?}", curve[1]))?;
    ensure(curve.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 <= w[0].1), || {
        format!("not monotone: {curve:?}")
    })?;
    Ok(format!("oracle 100/100 on {} pairs; severities {curve:?}", oracle.n))
}

// --------------------------------------------------------------- focal loss

fn focal_loss() -> Check {
    use qaforge::train::{cross_entropy, focal_loss, focal_loss_gradient, FocalParams};

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ce = 0.0f64;
    let mut worst_grad = 0.0f64;
    for draw in 0..100 {
        let classes = rng.random_range(2..=5);
        let t = rng.random_range(0..classes);
        let pt: f64 = rng.random_range(0.01..=0.99);
        let weights: Vec<f64> = (0..classes - 1).map(|_| rng.random_range(0.1..1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        let mut probs = Vec::with_capacity(classes);
        let mut others = weights.iter().map(|w| (1.0 - pt) * w / wsum);
        for c in 0..classes {
            probs.push(if c == t { pt } else { others.next().unwrap() });
        }
        let gamma: f64 = 5.0 - rng.random_range(0.0..5.0);
        let alpha: Vec<f64> = (0..classes).map(|_| 1.0 - rng.random_range(0.0..1.0)).collect();
        let ones = vec![1.0; classes];
        let err = |e: qaforge::train::TrainError| format!("draw {draw}: {e}");

        let ce = cross_entropy(&probs, t, None).map_err(err)?.value;
        let at_zero = focal_loss(&probs, t, &FocalParams::new(0.0, ones.clone()).map_err(err)?).map_err(err)?.value;
        worst_ce = worst_ce.max((ce - at_zero).abs());
        ensure((ce - at_zero).abs() <= 1e-12, || format!("draw {draw}: CE {ce} vs focal(0) {at_zero}"))?;
        let unit = focal_loss(&probs, t, &FocalParams::new(gamma, ones).map_err(err)?).map_err(err)?.value;
        ensure(unit <= ce, || format!("draw {draw}: focal {unit} > CE {ce} at gamma {gamma}"))?;

        let params = FocalParams::new(gamma, alpha).map_err(err)?;
        let grad = focal_loss_gradient(&probs, t, &params).map_err(err)?;
        // Move mass between the true class and its largest rival so the
        // vector stays on the simplex.
        let j = (0..classes).filter(|&c| c != t).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
        let h = 1e-5 * pt.min(1.0 - pt).min(probs[j]);
        let shifted = |d: f64| {
            let mut p = probs.clone();
            p[t] += d;
            p[j] -= d;
            p
        };
        let (up, down) = (shifted(h), shifted(-h));
        let fd = (focal_loss(&up, t, &params).map_err(err)?.value - focal_loss(&down, t, &params).map_err(err)?.value)
            / (up[t] - down[t]);
        let rel = (fd - grad[t]).abs() / grad[t].abs().max(1e-300);
        worst_grad = worst_grad.max(rel);
        ensure(rel < 1e-6, || format!("draw {draw}: analytic {} vs numeric {fd} (rel {rel:e})", grad[t]))?;
        ensure(grad.iter().enumerate().all(|(c, g)| c == t || *g == 0.0), || {
            format!("draw {draw}: non-true-class gradient {grad:?}")
        })?;
    }
    Ok(format!("100 draws; max |CE - focal(0)| {worst_ce:e}, max grad rel err {worst_grad:e}"))
}

// -------------------------------------------------------------------- SMOTE

fn smote() -> Check {
    use qaforge::train::{balance_classes, smote_oversample, SmoteParams};

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut synthetic = 0;
    for trial in 0..50 {
        let dim = rng.random_range(1..=6);
        let n_min = rng.random_range(2..=20);
        let n_maj = n_min + rng.random_range(0..=40);
        let point = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let minority: Vec<Vec<f64>> = (0..n_min).map(|_| point(&mut rng)).collect();
        let majority: Vec<Vec<f64>> = (0..n_maj).map(|_| point(&mut rng)).collect();
        let k = rng.random_range(1..n_min.min(6));
        let params = SmoteParams {
            k,
            seed: rng.random(),
            ..Default::default()
        };

        let mut features = majority.clone();
        features.extend(minority.iter().cloned());
        let mut labels = vec![false; n_maj];
        labels.extend(vec![true; n_min]);
        let mut order: Vec<usize> = (0..features.len()).collect();
        order.shuffle(&mut rng);
        let features: Vec<Vec<f64>> = order.iter().map(|&i| features[i].clone()).collect();
        let labels: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
        let balanced = balance_classes(&features, &labels, &params).map_err(|e| e.to_string())?;
        let pos = balanced.labels.iter().filter(|&&l| l).count();
        ensure(pos * 2 == balanced.labels.len(), || {
            format!("trial {trial}: {pos} of {} after balancing", balanced.labels.len())
        })?;
        ensure(balance_classes(&features, &labels, &params).map_err(|e| e.to_string())? == balanced, || {
            format!("trial {trial}: balancing is not deterministic")
        })?;

        let samples = smote_oversample(&minority, n_maj, &params).map_err(|e| e.to_string())?;
        ensure(samples.len() == n_maj - n_min, || format!("trial {trial}: {} samples", samples.len()))?;
        ensure(samples == smote_oversample(&minority, n_maj, &params).map_err(|e| e.to_string())?, || {
            format!("trial {trial}: same seed, different samples")
        })?;
        for s in &samples {
            let (b, n) = (&minority[s.base], &minority[s.neighbor]);
            ensure((0.0..=1.0).contains(&s.lambda), || format!("trial {trial}: lambda {}", s.lambda))?;
            let off = s.vector.iter().zip(b.iter().zip(n)).map(|(v, (x, y))| (v - (x + s.lambda * (y - x))).abs());
            let off = off.fold(0.0, f64::max);
            ensure(off <= 1e-9, || format!("trial {trial}: off the segment by {off:e}"))?;
            // The neighbor must be among the k nearest by an independent scan.
            let dist = |p: &[f64]| p.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            let mut others: Vec<f64> =
                (0..n_min).filter(|&i| i != s.base).map(|i| dist(&minority[i])).collect();
            others.sort_by(f64::total_cmp);
            ensure(s.neighbor != s.base && dist(n) <= others[k - 1], || {
                format!("trial {trial}: neighbor {} not among {k} nearest of {}", s.neighbor, s.base)
            })?;
        }
        synthetic += samples.len();
    }
    Ok(format!("50 trials, {synthetic} synthetic points"))
}

// ---------------------------------------------------------- threshold tuner

fn threshold_tuner() -> Check {
    use qaforge::train::tune_null_threshold;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for instance in 0..50 {
        let n = rng.random_range(1..=200);
        let f = metric_fixture(&mut rng, n);
        let refs = reference_items(&f);
        // Grid at 1e-4 offset by half a step, so no point sits on a score.
        let grid_best = (0..=10_001)
            .map(|i| (i as f64 - 0.5) / 10_000.0)
            .map(|t| reference::overall_f1(&refs, t))
            .fold(f64::MIN, f64::max);
        let tuned = tune_null_threshold(&f.dataset, &f.predictions).map_err(|e| e.to_string())?;
        let gap = (tuned.best_overall_f1 - grid_best).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-9, || format!("instance {instance}: tuner {} vs grid {grid_best}", tuned.best_overall_f1))?;
        let at_best = reference::evaluate(&refs, Some(tuned.best_threshold)).f1;
        ensure(close(at_best, tuned.best_overall_f1, 1e-9), || {
            format!("instance {instance}: F1 at returned threshold is {at_best}")
        })?;
        ensure(tuned.sweep.iter().all(|p| p.f1 <= tuned.best_overall_f1 + 1e-9), || {
            format!("instance {instance}: a swept threshold beats the returned F1")
        })?;
    }
    Ok(format!("50 instances, max |tuner - grid| {worst:e}"))
}

// -------------------------------------------------------------------- split

fn split_dataset(sizes: &[usize], rng: &mut ChaCha8Rng) -> qaforge::dataset::SquadDataset {
    use qaforge::dataset::{Answer, Article, Paragraph, QaItem, SquadDataset};
    let mut articles: Vec<Article> = Vec::new();
    for (d, &size) in sizes.iter().enumerate() {
        let context = format!("Document {d} mentions Acme.");
        let qas = (0..size)
            .map(|q| QaItem::answerable(format!("d{d}q{q}"), "Who?", Answer::new("Acme", context.len() - 5)))
            .collect();
        let para = Paragraph::new(context, qas);
        if articles.is_empty() || rng.random_bool(0.3) {
            articles.push(Article::new(format!("a{d}"), vec![para]));
        } else {
            articles.last_mut().unwrap().paragraphs.push(para);
        }
    }
    SquadDataset::new(articles)
}

fn contexts(ds: &qaforge::dataset::SquadDataset) -> BTreeSet<String> {
    ds.articles.iter().flat_map(|a| &a.paragraphs).map(|p| p.context.clone()).collect()
}

fn split() -> Check {
    use qaforge::dataset::split_by_document;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let docs = rng.random_range(2..=40);
        let sizes: Vec<usize> = (0..docs).map(|_| rng.random_range(1..=12)).collect();
        let ds = split_dataset(&sizes, &mut rng);
        let fraction = rng.random_range(0.02..0.98);
        let seed: u64 = rng.random();
        let (train, test, report) = split_by_document(&ds, fraction, seed).map_err(|e| e.to_string())?;
        let (a, b) = (contexts(&train), contexts(&test));
        ensure(a.is_disjoint(&b) && a.len() + b.len() == docs, || format!("trial {trial}: contexts overlap"))?;
        let total: usize = sizes.iter().sum();
        let largest = *sizes.iter().max().unwrap() as f64;
        ensure(test.qa_count() == report.test_questions && train.qa_count() + test.qa_count() == total, || {
            format!("trial {trial}: question counts do not add up")
        })?;
        let off = (report.test_questions as f64 - fraction * total as f64).abs();
        ensure(off <= largest, || format!("trial {trial}: off target by {off}, largest doc {largest}"))?;
    }

    let mut sizes: Vec<usize> = (0..28).flat_map(|_| 1..=8).collect();
    sizes.push(1);
    let ds = split_dataset(&sizes, &mut ChaCha8Rng::seed_from_u64(0));
    ensure(ds.qa_count() == 1009, || format!("fixture has {} questions", ds.qa_count()))?;
    let (_, _, report) = split_by_document(&ds, 0.116, 42).map_err(|e| e.to_string())?;
    let off = report.test_questions.abs_diff(117);
    ensure(off <= 8, || format!("1009-question fixture gave {} test questions", report.test_questions))?;
    Ok(format!("100 random splits; fixture gives {} test questions (117 +/- 8)", report.test_questions))
}

// --------------------------------------------------------------- annotation

const CONTEXT: &str = "Acme is a major food sector player based in Berlin.";

fn annotation_task(id: &str) -> AnnotationTask {
    AnnotationTask {
        pair_id: id.into(),
        context: CONTEXT.into(),
        question: "What sector is Acme in?".into(),
        answer_text: "food".into(),
        answer_start: 16,
    }
}

/// Expected violation codes, written from the form rules.
fn oracle_codes(id_matches: bool, q: &QuestionJudgement, a: Option<&AnswerJudgement>) -> Vec<String> {
    let filled = |s: &Option<String>| s.as_deref().is_some_and(|t| !t.trim().is_empty());
    let mut codes: Vec<String> = Vec::new();
    let mut add = |c: &str| codes.push(c.to_string());
    if !id_matches {
        add("TASK_MISMATCH");
    }
    if !q.suitable {
        if q.unsuitable_reason.is_none() {
            add("REASON_REQUIRED");
        }
        if q.reads_naturally.is_some() || filled(&q.rewritten_question) || a.is_some() {
            add("UNSUITABLE_HAS_LABELS");
        }
        return codes;
    }
    if q.unsuitable_reason.is_some() {
        add("REASON_ON_SUITABLE");
    }
    match (q.reads_naturally, filled(&q.rewritten_question)) {
        (None, _) => add("NATURALNESS_REQUIRED"),
        (Some(false), false) => add("REWRITE_REQUIRED"),
        (Some(true), true) => add("UNEXPECTED_REWRITE"),
        _ => {}
    }
    let Some(a) = a else {
        add("ANSWER_JUDGEMENT_REQUIRED");
        return codes;
    };
    match (a.reads_naturally, filled(&a.rewritten_answer)) {
        (false, false) => add("ANSWER_REWRITE_REQUIRED"),
        (true, true) => add("UNEXPECTED_ANSWER_REWRITE"),
        _ => {}
    }
    match (a.quality == AnswerQuality::PreciseCorrect, filled(&a.corrected_answer)) {
        (false, false) => add("CORRECTION_REQUIRED"),
        (true, true) => add("UNEXPECTED_CORRECTION"),
        _ => {}
    }
    for (field, text) in [("rewritten_answer", &a.rewritten_answer), ("corrected_answer", &a.corrected_answer)] {
        if filled(text) && !CONTEXT.contains(text.as_deref().unwrap().trim()) {
            add(&format!("ANSWER_NOT_IN_DOCUMENT:{field}"));
        }
    }
    codes
}

fn violation_code(v: &qaforge::annotation::Violation) -> String {
    let json = serde_json::to_value(v).unwrap();
    match json.get("field") {
        Some(f) => format!("{}:{}", json["code"].as_str().unwrap(), f.as_str().unwrap()),
        None => json["code"].as_str().unwrap().to_string(),
    }
}

fn exhaustive_form() -> Result<usize, String> {
    use qaforge::annotation::validate_submission;

    let task = annotation_task("t1");
    let texts = |xs: &[&str]| -> Vec<Option<String>> {
        std::iter::once(None).chain(xs.iter().map(|s| Some(s.to_string()))).collect()
    };
    let rewrites = texts(&["", "  ", "Which sector is Acme in?"]);
    let answer_texts = texts(&["", "food", "food sector", "Munich"]);
    let corrections = texts(&[" ", "food sector", "Paris"]);
    let mut answers: Vec<Option<AnswerJudgement>> = vec![None];
    for reads_naturally in [true, false] {
        for rewritten_answer in &answer_texts {
            for quality in [AnswerQuality::PreciseCorrect, AnswerQuality::Adequate, AnswerQuality::Incorrect] {
                for corrected_answer in &corrections {
                    answers.push(Some(AnswerJudgement {
                        reads_naturally,
                        rewritten_answer: rewritten_answer.clone(),
                        quality,
                        corrected_answer: corrected_answer.clone(),
                    }));
                }
            }
        }
    }
    let mut cases = 0;
    let mut valid = 0;
    for id in ["t1", "t2"] {
        for suitable in [true, false] {
            for reason in [None, Some(UnsuitableReason::NotAnswerable), Some(UnsuitableReason::NotRelevant)] {
                for reads_naturally in [None, Some(true), Some(false)] {
                    for rewritten_question in &rewrites {
                        let q = QuestionJudgement {
                            suitable,
                            unsuitable_reason: reason,
                            reads_naturally,
                            rewritten_question: rewritten_question.clone(),
                        };
                        for a in &answers {
                            let got: Vec<String> =
                                validate_submission(id, &q, a.as_ref(), &task).iter().map(violation_code).collect();
                            let want = oracle_codes(id == "t1", &q, a.as_ref());
                            ensure(got == want, || format!("{id} {q:?} {a:?}: got {got:?}, expected {want:?}"))?;
                            let unique: BTreeSet<&String> = got.iter().collect();
                            ensure(unique.len() == got.len(), || format!("duplicate codes {got:?}"))?;
                            valid += got.is_empty() as usize;
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    ensure(valid > 0, || "no valid combination found".into())?;
    Ok(cases)
}

fn archetype(kind: usize, task: &str, annotator: &str) -> AnnotationRecord {
    match kind {
        0 => AnnotationRecord::unsuitable(task, annotator, UnsuitableReason::NotAnswerable),
        1 => AnnotationRecord::unsuitable(task, annotator, UnsuitableReason::NotRelevant),
        2 => AnnotationRecord::suitable(task, annotator, AnswerQuality::PreciseCorrect, None),
        3 => AnnotationRecord::suitable(task, annotator, AnswerQuality::Adequate, Some("food sector")),
        _ => {
            let mut r = AnnotationRecord::suitable(task, annotator, AnswerQuality::PreciseCorrect, None);
            r.question.reads_naturally = Some(false);
            r.question.rewritten_question = Some("Which sector is Acme in?".into());
            r
        }
    }
}

fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

fn annotation() -> Check {
    use qaforge::annotation::{export_qa_dataset, majority_vote, resolve_golds};
    use qaforge::dataset::class_stats;

    let cases = exhaustive_form()?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut orderings = 0;
    for trial in 0..200 {
        let voters = [3, 4, 5].choose(&mut rng).copied().unwrap();
        let records: Vec<AnnotationRecord> =
            (0..voters).map(|v| archetype(rng.random_range(0..5), "t1", &format!("ann-{v}"))).collect();
        let reference = majority_vote(&records).map_err(|e| e.to_string())?;
        for perm in permutations(&records) {
            let gold = majority_vote(&perm).map_err(|e| e.to_string())?;
            ensure(gold == reference, || format!("trial {trial}: vote depends on record order"))?;
            orderings += 1;
        }
    }

    let tasks: Vec<AnnotationTask> = (0..100).map(|i| annotation_task(&format!("t{i}"))).collect();
    let records: Vec<AnnotationRecord> = tasks
        .iter()
        .flat_map(|t| {
            let kinds: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
            kinds.into_iter().enumerate().map(|(v, k)| archetype(k, &t.pair_id, &format!("ann-{v}"))).collect::<Vec<_>>()
        })
        .collect();
    let golds = resolve_golds(&records).map_err(|e| e.to_string())?;
    let unsuitable = golds.iter().filter(|g| g.is_unsuitable()).count();
    let (ds, report) = export_qa_dataset(&golds, &tasks).map_err(|e| e.to_string())?;
    ensure(report.unanswerable == unsuitable && class_stats(&ds).unanswerable == unsuitable, || {
        format!("{unsuitable} unsuitable golds, export {report:?}")
    })?;

    let fixed: Vec<AnnotationRecord> = tasks
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..3).map(move |v| archetype(if i < 21 { 0 } else { 2 }, &t.pair_id, &format!("ann-{v}"))))
        .collect();
    let golds = resolve_golds(&fixed).map_err(|e| e.to_string())?;
    let (ds, _) = export_qa_dataset(&golds, &tasks).map_err(|e| e.to_string())?;
    let share = class_stats(&ds).unanswerable_share;
    ensure(share == 0.21, || format!("unanswerable share {share}"))?;
    Ok(format!(
        "{cases} form combinations, {orderings} vote orderings, {unsuitable}/100 unsuitable exported, share 0.21"
    ))
}

// -------------------------------------------------------------- determinism

fn determinism() -> Check {
    use qaforge::dataset::write_squad;
    use qaforge::gateway::Gateway;
    use qaforge::pipeline::{run_pipeline, PipelineConfig};

    let expected = std::fs::read(TOY_EXPECTED).map_err(|e| e.to_string())?;
    let corpus = toy_corpus();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = 0;
    for jobs in [1, 1, 1, 2, 4, 8] {
        let cfg = PipelineConfig {
            jobs,
            ..Default::default()
        };
        let (ds, _, _) = run_pipeline(&corpus, &Gateway::stubbed(), &cfg).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("run{runs}.json"));
        write_squad(&ds, &path).map_err(|e| e.to_string())?;
        let produced = std::fs::read(&path).map_err(|e| e.to_string())?;
        ensure(produced == expected, || format!("run {runs} (jobs {jobs}) differs from the committed file"))?;
        runs += 1;
    }
    Ok(format!("{runs} runs byte-identical to the committed file ({} bytes)", expected.len()))
}

// --------------------------------------------------------------- durability

fn precise(task_id: &str) -> qaforge::annotation::Submission {
    let r = AnnotationRecord::suitable(task_id, "", AnswerQuality::PreciseCorrect, None);
    qaforge::annotation::Submission {
        task_id: r.task_id,
        question: r.question,
        answer: r.answer,
    }
}

fn durability() -> Check {
    use qaforge::service::{replay, AssignRequest, FaultPoint, LoadRequest, Service, State};

    const ADMIN: &str = "durability-admin-token";
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log_path = dir.path().join(qaforge::service::EVENT_LOG_FILE);
    let svc = Service::open(dir.path(), ADMIN).map_err(|e| e.to_string())?;
    let tasks: Vec<AnnotationTask> = (0..120).map(|i| annotation_task(&format!("t{i:03}"))).collect();
    svc.load(Some(ADMIN), LoadRequest::Tasks { tasks }).map_err(|e| e.to_string())?;
    let sessions = svc
        .assign(
            Some(ADMIN),
            AssignRequest {
                annotators: vec!["a".into(), "b".into(), "c".into()],
                group_size: 3,
                slice_fraction: 1.0,
                seed: 9,
            },
        )
        .map_err(|e| e.to_string())?
        .sessions;
    drop(svc);

    let faults = [Some(FaultPoint::BeforeWrite), Some(FaultPoint::MidWrite), Some(FaultPoint::AfterWriteBeforeAck), None];
    let mut acked: Vec<(String, String)> = Vec::new();
    let mut outcomes: HashMap<&'static str, (usize, usize)> = HashMap::new();
    let mut inconsistencies: Vec<String> = Vec::new();
    for crash in 0..100 {
        let svc = Service::open(dir.path(), ADMIN).map_err(|e| e.to_string())?;
        let before: std::sync::Arc<State> = svc.snapshot();
        let ok_session = &sessions[crash % 3];
        if let Some(next) = svc.next_task(Some(&ok_session.token)).map_err(|e| e.to_string())? {
            svc.submit(Some(&ok_session.token), precise(&next.task.pair_id)).map_err(|e| e.to_string())?;
            acked.push((next.task.pair_id.clone(), ok_session.annotator_id.clone()));
        }
        let victim = &sessions[(crash + 1) % 3];
        let fault = faults[crash % faults.len()];
        let target = svc.next_task(Some(&victim.token)).map_err(|e| e.to_string())?.map(|n| n.task.pair_id);
        let Some(target) = target else {
            return Err(format!("crash {crash}: ran out of tasks"));
        };
        match fault {
            Some(point) => {
                svc.inject_fault(point);
                if svc.submit(Some(&victim.token), precise(&target)).is_ok() {
                    inconsistencies.push(format!("crash {crash}: faulted submission was acknowledged"));
                }
            }
            None => {
                svc.submit(Some(&victim.token), precise(&target)).map_err(|e| e.to_string())?;
                acked.push((target.clone(), victim.annotator_id.clone()));
            }
        }
        drop(svc);
        drop(before);

        let svc = Service::open(dir.path(), ADMIN).map_err(|e| e.to_string())?;
        let state = svc.snapshot();
        for (task, annotator) in &acked {
            if !state.has_submitted(task, annotator) {
                inconsistencies.push(format!("crash {crash}: acknowledged {task}/{annotator} lost"));
            }
        }
        let present = state.has_submitted(&target, &victim.annotator_id);
        let label = match fault {
            Some(FaultPoint::BeforeWrite) => "before-write",
            Some(FaultPoint::MidWrite) => "mid-write",
            Some(FaultPoint::AfterWriteBeforeAck) => "after-write",
            None => "after-ack",
        };
        let tally = outcomes.entry(label).or_default();
        if present {
            tally.0 += 1;
        } else {
            tally.1 += 1;
        }
        if fault == Some(FaultPoint::BeforeWrite) && present {
            inconsistencies.push(format!("crash {crash}: unwritten submission applied"));
        }
        for (task, records) in &state.records {
            let quorum = records.len() >= 3;
            if quorum != state.golds.contains_key(task) || quorum != state.golds_logged.contains(task) {
                inconsistencies.push(format!("crash {crash}: {task} has {} votes, gold half-applied", records.len()));
            }
        }
        let bytes = std::fs::read(&log_path).map_err(|e| e.to_string())?;
        match replay(&bytes) {
            Ok(replayed) if replayed == *state => {}
            Ok(_) => inconsistencies.push(format!("crash {crash}: state differs from a pure replay")),
            Err(e) => inconsistencies.push(format!("crash {crash}: log does not replay: {e}")),
        }
    }
    ensure(inconsistencies.is_empty(), || format!("{} inconsistencies: {:?}", inconsistencies.len(), inconsistencies))?;
    let mut summary: Vec<String> =
        outcomes.iter().map(|(k, (p, a))| format!("{k} {p} applied/{a} absent")).collect();
    summary.sort();
    Ok(format!("100 crashes, {} acknowledged, 0 inconsistencies; {}", acked.len(), summary.join(", ")))
}
