// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train a small SAE, then score it on held-out rows: L0, explained variance,
//! MSE, the loss increase of a toy downstream readout, and firing health.

use saekit::activations::{SyntheticDictionary, SyntheticSource};
use saekit::metrics::{evaluate, firing_stats, LinearSoftmaxReadout};
use saekit::optimizer::{train, TrainOptions, TrainSchedule};
use saekit::sae::{Sae, SaeConfig, Site};

fn main() -> saekit::Result<()> {
    let dict = SyntheticDictionary::default_with_seed(0);
    let config = SaeConfig::topk(64, 8, 5)?;
    let schedule = TrainSchedule::new(400, 1024);
    let run = train(&config, &schedule, &mut SyntheticSource::new(dict.clone(), 1), 7, &TrainOptions::default())?;
    let label = config.label(0, Site::Residual);
    let sae = Sae::new(config, run.params)?.with_pending_norm(run.norm_factors);

    // a fixed random softmax readout stands in for the rest of the network
    let readout = LinearSoftmaxReadout::random(64, 16, 4.0, 5);
    let report = evaluate(&sae, &mut SyntheticSource::new(dict.clone(), 3), 50_000, Some(&readout))?;
    let firing = firing_stats(&sae, &mut SyntheticSource::new(dict, 3), 50_000)?;

    for r in report.records(&label).iter().chain(&firing.records(&label)) {
        println!("{r}");
    }
    let hist = firing.histogram(4);
    println!("never fired: {}", hist.never_fired);
    for (i, c) in hist.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        let (lo, hi) = hist.edges(i);
        println!("  freq 10^[{lo:.2}, {hi:.2}): {c}");
    }
    Ok(())
}
