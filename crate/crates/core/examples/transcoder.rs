// SPDX-License-Identifier: MIT OR Apache-2.0

//! A transcoder reads one activation and reconstructs a different one. The
//! synthetic stream supplies both from the same sparse code.

use saekit::activations::{SyntheticDictionary, SyntheticSource};
use saekit::metrics::evaluate;
use saekit::normalize::{fold_norm_into_params, unitize_decoder};
use saekit::optimizer::{train, TrainOptions, TrainSchedule};
use saekit::sae::{PositionKind, Sae, SaeConfig, Site, Variant};

fn main() -> saekit::Result<()> {
    let dict = SyntheticDictionary::default_with_seed(0).with_transcoder_targets();
    let config = SaeConfig::new(64, 512, 5, Variant::TopK, PositionKind::Transcoder, 0.0)?;
    let run = train(&config, &TrainSchedule::new(800, 1024), &mut SyntheticSource::new(dict.clone(), 1), 7, &TrainOptions::default())?;
    println!(
        "{}: input scale {:.4}, output scale {:.4}",
        config.label(8, Site::Transcoder),
        run.norm_factors.s_in,
        run.norm_factors.s_out
    );

    // the two factors differ, so folding rescales the decoder as well as the biases
    let params = unitize_decoder(&fold_norm_into_params(&run.params, &run.norm_factors))?;
    let sae = Sae::new(config, params)?;
    let r = evaluate(&sae, &mut SyntheticSource::new(dict, 3), 50_000, None)?;
    println!("held-out L0 {:.2}  EV {:.4}  MSE {:.5}", r.l0_mean, r.explained_variance, r.mse);
    Ok(())
}
