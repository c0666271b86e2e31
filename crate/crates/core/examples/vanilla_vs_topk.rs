// SPDX-License-Identifier: MIT OR Apache-2.0

//! Same data, same budget: a ReLU SAE with an L1 penalty against a TopK SAE.
//! The L1 coefficient trades sparsity for reconstruction; TopK fixes L0.

use saekit::activations::{SyntheticDictionary, SyntheticSource};
use saekit::metrics::evaluate;
use saekit::optimizer::{train, TrainOptions, TrainSchedule};
use saekit::sae::{PositionKind, Sae, SaeConfig, Variant};

fn main() -> saekit::Result<()> {
    let dict = SyntheticDictionary::default_with_seed(0);
    let runs = [
        ("vanilla l1=0.003", SaeConfig::new(64, 512, 5, Variant::Vanilla, PositionKind::Autoencoder, 3e-3)?),
        ("vanilla l1=0.03", SaeConfig::new(64, 512, 5, Variant::Vanilla, PositionKind::Autoencoder, 3e-2)?),
        ("topk k=5", SaeConfig::topk(64, 8, 5)?),
    ];
    for (name, config) in runs {
        let schedule = TrainSchedule::new(800, 1024);
        let run = train(&config, &schedule, &mut SyntheticSource::new(dict.clone(), 1), 7, &TrainOptions::default())?;
        let sae = Sae::new(config, run.params)?.with_pending_norm(run.norm_factors);
        let r = evaluate(&sae, &mut SyntheticSource::new(dict.clone(), 3), 50_000, None)?;
        println!("{name:<18} L0 {:>7.2}  EV {:.4}  MSE {:.5}", r.l0_mean, r.explained_variance, r.mse);
    }
    Ok(())
}
