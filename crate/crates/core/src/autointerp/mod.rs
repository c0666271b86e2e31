// SPDX-License-Identifier: MIT OR Apache-2.0

//! Automated interpretability: top-activating contexts per feature, the
//! monosemanticity scoring prompt, a chat-completion client and score
//! aggregation.
//!
//! Nothing here touches the network unless a [`ScoringClient`] is asked to
//! score.

mod client;
mod contexts;
mod prompt;

pub use client::{
    parse_score, score_all, score_histogram, MonoScore, ScoreHistogram, ScoringClient, API_KEY_ENV,
    DEFAULT_MAX_IN_FLIGHT,
};
pub use contexts::{track_top_contexts, Context, FeatureContexts, TopContexts, TrackOptions};
pub use prompt::{build_prompt, render_activation, PROMPT_HEADER};
