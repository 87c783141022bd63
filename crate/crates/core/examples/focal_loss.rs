//! Focal loss against cross entropy for confident and unsure predictions,
//! with inverse-frequency class weights.

use qaforge::train::{combine_multitask, cross_entropy, focal_loss, focal_loss_gradient, FocalParams};

pub fn run() -> Result<Vec<(f64, f64)>, Box<dyn std::error::Error>> {
    // Two classes, answerable (0) and unanswerable (1), with a 2:1 imbalance.
    let params = FocalParams::inverse_frequency(&[2000, 1000], 2.0)?;
    println!("alpha = {:?}", params.alpha);
    let mut rows = Vec::new();
    for p_true in [0.95, 0.7, 0.4, 0.1] {
        let probs = [1.0 - p_true, p_true];
        let ce = cross_entropy(&probs, 1, None)?.value;
        let focal = focal_loss(&probs, 1, &params)?.value;
        let grad = focal_loss_gradient(&probs, 1, &params)?[1];
        println!("p_t {p_true:.2}: CE {ce:.4} focal {focal:.4} dL/dp_t {grad:.4}");
        rows.push((ce, focal));
    }
    let total = combine_multitask(1.2, rows[1].1, 0.5)?;
    println!("span loss 1.2 + 0.5 x classifier loss = {total:.4}");
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
