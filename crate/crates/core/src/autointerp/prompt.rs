// SPDX-License-Identifier: MIT OR Apache-2.0

use super::Context;
use crate::error::{Result, SaeError};

/// Instructions and rubric placed before the contexts. Line breaks and the
/// double space are part of the format.
pub const PROMPT_HEADER: &str = "\
We are analyzing the activation levels of features in a neural network,
where each feature activates certain tokens in a text. Each token's
activation value indicates its relevance to the feature, with higher
values showing stronger association. Your task is to give this feature
a  monosemanticity score based on the following scoring rubric:

Activation Consistency

5: Clear pattern with no deviating examples

4: Clear pattern with one or two deviating examples

3: Clear overall pattern but quite a few examples not fitting that
pattern

2: Broad consistent theme but lacking structure

1: No discernible pattern

Consider the following activations for a feature in the neural
network. Activation values are non-negative, with higher values
indicating a stronger connection between the token and the
feature. You only need to return a number. It
represents your score for feature monosemanticity.

";

/// One decimal place; negatives and negative zero print as `0.0`.
pub fn render_activation(v: f32) -> String {
    let v = if v > 0.0 { v } else { 0.0 };
    format!("{v:.1}")
}

/// Header, then `[Context]` and one `<START>`/`<END>` block per context with
/// a `token<TAB>activation` line per token. Blocks are separated by a blank
/// line.
pub fn build_prompt(contexts: &[Context]) -> Result<String> {
    if contexts.is_empty() {
        return Err(SaeError::Contract("cannot build a prompt from zero contexts".into()));
    }
    let mut out = String::from(PROMPT_HEADER);
    out.push_str("[Context]\n");
    for (n, ctx) in contexts.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Sentence {}: \n<START>\n", n + 1));
        for (tok, act) in &ctx.tokens {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&render_activation(*act));
            out.push('\n');
        }
        out.push_str("<END>\n");
    }
    Ok(out)
}
