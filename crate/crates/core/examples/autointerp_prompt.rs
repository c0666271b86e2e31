// SPDX-License-Identifier: MIT OR Apache-2.0

//! Collect the top-activating contexts of a few features and print the
//! scoring prompt for one of them. Pass an endpoint URL (with
//! `SAE_INTERP_API_KEY` set) to also score every prompt.

use saekit::activations::{MemorySource, SyntheticDictionary, SyntheticSource};
use saekit::autointerp::{build_prompt, score_all, score_histogram, track_top_contexts, ScoringClient, TrackOptions};
use saekit::optimizer::{train, TrainOptions, TrainSchedule};
use saekit::sae::{Sae, SaeConfig};

fn main() -> saekit::Result<()> {
    let dict = SyntheticDictionary::default_with_seed(0);
    let config = SaeConfig::topk(64, 8, 5)?;
    let run = train(&config, &TrainSchedule::new(400, 1024), &mut SyntheticSource::new(dict.clone(), 1), 7, &TrainOptions::default())?;
    let sae = Sae::new(config, run.params)?.with_pending_norm(run.norm_factors);

    // token text: each row is named after its strongest planted feature
    let (batch, codes) = SyntheticSource::new(dict, 3).synth_sample(20_000);
    let tokens: Vec<String> = codes
        .iter()
        .map(|c| c.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map_or(" -".into(), |(i, _)| format!(" g{i}")))
        .collect();
    let opts = TrackOptions { features: Some(vec![0, 1, 2, 3]), capacity: 5, window: 3, ..TrackOptions::default() };
    let top = track_top_contexts(&sae, &mut MemorySource::new(batch), Some(&tokens), &opts)?;

    let prompts: Vec<(usize, String)> = top
        .features
        .iter()
        .filter(|f| !f.contexts.is_empty())
        .map(|f| build_prompt(&f.contexts).map(|p| (f.feature, p)))
        .collect::<saekit::Result<_>>()?;
    if let Some((feature, prompt)) = prompts.first() {
        println!("--- feature {feature} ---\n{prompt}");
    }

    if let Some(url) = std::env::args().nth(1) {
        let client = ScoringClient::from_env(url, "gpt-4o")?;
        let scores: Vec<_> = score_all(&client, &prompts, 4).into_iter().filter_map(Result::ok).collect();
        let h = score_histogram(&scores);
        println!("scores 1..5: {:?}  fraction at 1: {:.2}", h.counts, h.fraction_score_1);
    }
    Ok(())
}
