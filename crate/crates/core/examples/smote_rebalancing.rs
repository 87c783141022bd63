//! Balances an imbalanced binary feature set with SMOTE.

use qaforge::train::{balance_classes, SmoteParams};

pub fn run() -> Result<(usize, usize), Box<dyn std::error::Error>> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..12 {
        features.push(vec![i as f64, (i % 4) as f64]);
        labels.push(false);
    }
    for i in 0..4 {
        features.push(vec![20.0 + i as f64, 10.0 - i as f64]);
        labels.push(true);
    }
    let params = SmoteParams {
        k: 2,
        seed: 7,
        ..Default::default()
    };
    let balanced = balance_classes(&features, &labels, &params)?;
    let positives = balanced.labels.iter().filter(|&&l| l).count();
    let negatives = balanced.labels.len() - positives;
    println!("added {} synthetic points: {positives} positive, {negatives} negative", balanced.synthetic);
    for v in &balanced.features[features.len()..] {
        println!("  synthetic {v:.3?}");
    }
    Ok((positives, negatives))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
