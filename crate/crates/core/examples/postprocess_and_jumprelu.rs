// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train, fold the normalization into the weights, unitize the decoder, then
//! swap TopK for a calibrated JumpReLU threshold and compare the two.
//!
//! ```text
//! cargo run --release --example postprocess_and_jumprelu -- [tokens] [k] [active per row]
//! ```

use saekit::activations::{MagnitudeDist, SyntheticDictionary, SyntheticSource};
use saekit::metrics::evaluate;
use saekit::normalize::{calibrate_jumprelu, fold_norm_into_params, unitize_decoder};
use saekit::optimizer::{train, TrainOptions, TrainSchedule};
use saekit::sae::{Sae, SaeConfig};

fn main() -> saekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let tokens: usize = args.next().map_or(1_000_000, |s| s.parse().expect("tokens"));
    let k: usize = args.next().map_or(20, |s| s.parse().expect("k"));
    let dict = match args.next() {
        None => SyntheticDictionary::default_with_seed(0),
        Some(a) => SyntheticDictionary::new(
            64,
            256,
            a.parse::<f64>().expect("active per row") / 256.0,
            MagnitudeDist::UniformOnInterval { lo: 0.5, hi: 2.0 },
            0.01,
            0,
        )?,
    };
    let stream = |seed| SyntheticSource::new(dict.clone(), seed);

    let config = SaeConfig::topk(64, 8, k)?;
    let schedule = TrainSchedule::new(tokens / 1024, 1024);
    let run = train(&config, &schedule, &mut stream(1), 7, &TrainOptions::default())?;
    let trained = Sae::new(config, run.params.clone())?.with_pending_norm(run.norm_factors);

    let folded = fold_norm_into_params(&run.params, &run.norm_factors);
    let mut params = unitize_decoder(&folded)?;
    let topk = Sae::new(config, params.clone())?;

    let before = evaluate(&trained, &mut stream(3), 10_000, None)?;
    let after = evaluate(&topk, &mut stream(3), 10_000, None)?;
    println!("mse before {:.6}  after fold+unitize {:.6}", before.mse, after.mse);

    let mut jr_config = config;
    let theta = calibrate_jumprelu(&mut jr_config, &mut params, &mut stream(2), k, 100_000)?;
    let jumprelu = Sae::new(jr_config, params)?;
    let held_topk = evaluate(&topk, &mut stream(3), 100_000, None)?;
    let held_jr = evaluate(&jumprelu, &mut stream(3), 100_000, None)?;
    println!("theta {theta:.5}");
    println!("topk     l0 {:.3}  mse {:.6}", held_topk.l0_mean, held_topk.mse);
    println!("jumprelu l0 {:.3}  mse {:.6}  ({:+.2}%)", held_jr.l0_mean, held_jr.mse,
        100.0 * (held_jr.mse / held_topk.mse - 1.0));
    Ok(())
}
