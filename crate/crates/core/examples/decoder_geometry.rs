// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-space analysis: the JL significance threshold, an empirical
//! random baseline, nearest neighbors of one feature and how well two
//! independently trained SAEs line up.

use saekit::activations::{SyntheticDictionary, SyntheticSource};
use saekit::geometry::{cross_sae_matching_cdf, jl_epsilon, nearest_features, pca_2d, random_max_cosine};
use saekit::optimizer::{train, TrainOptions, TrainSchedule};
use saekit::sae::{SaeConfig, SaeParams};

fn trained(seed: u64) -> saekit::Result<SaeParams> {
    let dict = SyntheticDictionary::default_with_seed(0);
    let config = SaeConfig::topk(64, 8, 5)?;
    let schedule = TrainSchedule::new(600, 1024);
    Ok(train(&config, &schedule, &mut SyntheticSource::new(dict, seed), seed, &TrainOptions::default())?.params)
}

fn main() -> saekit::Result<()> {
    // at D=64 the JL bound exceeds 1 and says nothing; it only bites at width
    println!("JL threshold for F=32768, D=4096: {:.4}", jl_epsilon(32768.0, 4096.0));
    println!("max cosine among 512 random 64-d directions: {:.3}", random_max_cosine(512, 64, 0));

    let a = trained(1)?;
    let b = trained(2)?;
    let near = nearest_features(&a, 0, &a, 5, "run-1")?;
    println!("neighbors of feature 0 (threshold {:.3}):", near.jl_epsilon);
    for (j, c) in &near.neighbors {
        println!("  {j:>4}  {c:.3}");
    }

    let cdf = cross_sae_matching_cdf(&a, &b, 0)?;
    let median = |v: &[f64]| v[v.len() / 2];
    println!(
        "best-match cosine, run 1 vs run 2: median {:.3} (random baseline {:.3}), KS {:.3}",
        median(&cdf.matched),
        median(&cdf.baseline),
        cdf.ks_statistic()
    );

    let xy = pca_2d(&a, 0);
    println!("first feature in the top-2 PCA plane: ({:.3}, {:.3})", xy[[0, 0]], xy[[0, 1]]);
    Ok(())
}
