// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train a TopK SAE on the synthetic superposition stream and check how well
//! its decoder recovers the planted dictionary.
//!
//! ```text
//! cargo run --release --example train_topk_synthetic -- [tokens] [batch] [lr]
//! ```

use saekit::activations::{SyntheticDictionary, SyntheticSource};
use saekit::geometry::{max_similarity, unit_rows, DEFAULT_BLOCK};
use saekit::optimizer::{train, TrainOptions, TrainSchedule};
use saekit::sae::SaeConfig;

fn main() -> saekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let tokens: usize = args.next().map_or(2_000_000, |s| s.parse().expect("tokens"));
    let batch: usize = args.next().map_or(1024, |s| s.parse().expect("batch"));
    let lr: Option<f64> = args.next().map(|s| s.parse().expect("lr"));

    let dict = SyntheticDictionary::default_with_seed(0);
    let truth = dict.ground_truth.clone();
    let mut source = SyntheticSource::new(dict, 1);
    let config = SaeConfig::topk(64, 8, 5)?;
    let mut schedule = TrainSchedule::new(tokens / batch, batch);
    if let Some(lr) = lr {
        schedule.base_lr = lr;
    }
    let t0 = std::time::Instant::now();
    let run = train(&config, &schedule, &mut source, 7, &TrainOptions::default())?;
    let last = run.history.records.last().expect("at least one step");
    println!(
        "steps {}  final mse {:.5}  l0 {:.2}  never fired {:.3}  ({:.1?})",
        last.step, last.mse, last.l0_mean, last.fraction_never_fired, t0.elapsed()
    );

    // best cosine of every planted direction against the learned decoder
    let learned = unit_rows(&run.params)?;
    let best = max_similarity(truth.view(), learned.view(), false, DEFAULT_BLOCK);
    let mean = best.iter().map(|&c| f64::from(c)).sum::<f64>() / best.len() as f64;
    let matched = best.iter().filter(|&&c| c > 0.8).count() as f64 / best.len() as f64;
    println!("mean max cosine {mean:.4}  matched above 0.8 {:.1}%", 100.0 * matched);
    Ok(())
}
