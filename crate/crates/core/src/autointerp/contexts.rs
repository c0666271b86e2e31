// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activations::ActivationSource;
use crate::error::{check_dim, Result, SaeError};
use crate::sae::Sae;

const CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct TrackOptions {
    /// Number of features drawn at random when `features` is `None`.
    pub n_features_sampled: usize,
    /// Explicit feature list; overrides sampling.
    pub features: Option<Vec<usize>>,
    pub capacity: usize,
    /// Tokens kept on each side of the peak.
    pub window: usize,
    pub seed: u64,
    /// Stop after this many rows (all rows, valid or not).
    pub max_tokens: Option<u64>,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            n_features_sampled: 128,
            features: None,
            capacity: 20,
            window: 25,
            seed: 0,
            max_tokens: None,
        }
    }
}

/// A peak activation and the tokens around it.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    /// Stream position of the peak token.
    pub position: u64,
    pub peak: f32,
    /// Index of the peak inside `tokens`.
    pub peak_offset: usize,
    pub tokens: Vec<(String, f32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureContexts {
    pub feature: usize,
    /// Peak descending, earlier position first on ties.
    pub contexts: Vec<Context>,
    pub never_fired: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopContexts {
    pub capacity: usize,
    pub window: usize,
    pub tokens_seen: u64,
    pub features: Vec<FeatureContexts>,
}

impl TopContexts {
    pub fn never_fired(&self) -> Vec<usize> {
        self.features.iter().filter(|f| f.never_fired).map(|f| f.feature).collect()
    }
}

// ordering key: higher peak first, then earlier position
fn beats(a: (f32, u64), b: (f32, u64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

struct Tracker {
    feature: usize,
    kept: Vec<Context>,
    // candidates waiting for their right-hand window: (position, peak)
    pending: VecDeque<(u64, f32)>,
    fired: bool,
}

impl Tracker {
    fn admits(&self, key: (f32, u64), capacity: usize) -> bool {
        if self.kept.len() + self.pending.len() < capacity {
            return true;
        }
        // the entry it would displace is the worst of kept and pending
        let worst_kept = self.kept.last().map(|c| (c.peak, c.position));
        let worst_pending = self
            .pending
            .iter()
            .map(|&(p, v)| (v, p))
            .reduce(|a, b| if beats(a, b) { b } else { a });
        let worst = match (worst_kept, worst_pending) {
            (Some(a), Some(b)) => Some(if beats(a, b) { b } else { a }),
            (a, b) => a.or(b),
        };
        worst.is_none_or(|w| beats(key, w))
    }

    fn insert(&mut self, ctx: Context, capacity: usize) {
        let key = (ctx.peak, ctx.position);
        let at = self
            .kept
            .iter()
            .position(|c| beats(key, (c.peak, c.position)))
            .unwrap_or(self.kept.len());
        if at < capacity {
            self.kept.insert(at, ctx);
            self.kept.truncate(capacity);
        }
    }
}

struct Ring {
    cap: usize,
    start: u64,
    rows: VecDeque<(String, Vec<f32>)>,
}

impl Ring {
    fn push(&mut self, tok: String, acts: Vec<f32>) {
        if self.rows.len() == self.cap {
            self.rows.pop_front();
            self.start += 1;
        }
        self.rows.push_back((tok, acts));
    }

    fn end(&self) -> u64 {
        self.start + self.rows.len() as u64
    }

    fn context(&self, pos: u64, window: usize, slot: usize, peak: f32) -> Context {
        let lo = pos.saturating_sub(window as u64).max(self.start);
        let hi = (pos + window as u64 + 1).min(self.end());
        let tokens = (lo..hi)
            .map(|p| {
                let (t, a) = &self.rows[(p - self.start) as usize];
                (t.clone(), a[slot])
            })
            .collect();
        Context {
            position: pos,
            peak,
            peak_offset: (pos - lo) as usize,
            tokens,
        }
    }
}

/// Stream `source` through `sae` and keep, for each tracked feature, the
/// `capacity` strongest activations together with `window` tokens on either
/// side.
///
/// `tokens` holds one string per source row, valid or not. Rows with a false
/// valid flag appear in windows with activation 0 and are never peaks.
pub fn track_top_contexts(
    sae: &Sae,
    source: &mut dyn ActivationSource,
    tokens: Option<&[String]>,
    opts: &TrackOptions,
) -> Result<TopContexts> {
    let tokens = tokens.ok_or_else(|| {
        SaeError::Contract("context tracking needs a token text sidecar aligned with the activation rows".into())
    })?;
    check_dim("source D", sae.config.d_model, source.d_model())?;
    if opts.capacity == 0 {
        return Err(SaeError::Config("context capacity must be at least 1".into()));
    }
    let n_features = sae.config.n_features;
    let features = match &opts.features {
        Some(list) => {
            if let Some(&bad) = list.iter().find(|&&f| f >= n_features) {
                return Err(SaeError::DimensionMismatch {
                    what: "tracked feature index",
                    expected: n_features,
                    got: bad,
                });
            }
            list.clone()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut v = rand::seq::index::sample(&mut rng, n_features, opts.n_features_sampled.min(n_features)).into_vec();
            v.sort_unstable();
            v
        }
    };
    let mut trackers: Vec<Tracker> = features
        .iter()
        .map(|&feature| Tracker {
            feature,
            kept: Vec::new(),
            pending: VecDeque::new(),
            fired: false,
        })
        .collect();
    let mut ring = Ring {
        cap: 2 * opts.window + 1,
        start: 0,
        rows: VecDeque::new(),
    };
    let limit = opts.max_tokens.unwrap_or(u64::MAX);
    let mut pos = 0u64;
    let flush_ready = |trackers: &mut Vec<Tracker>, ring: &Ring, upto: u64, force: bool| {
        for (slot, t) in trackers.iter_mut().enumerate() {
            while let Some(&(p, v)) = t.pending.front() {
                if !force && p + opts.window as u64 >= upto {
                    break;
                }
                t.pending.pop_front();
                let ctx = ring.context(p, opts.window, slot, v);
                t.insert(ctx, opts.capacity);
            }
        }
    };
    while pos < limit {
        let want = CHUNK.min((limit - pos).min(usize::MAX as u64) as usize);
        let Some(batch) = source.next_batch(want)? else {
            break;
        };
        if pos + batch.len() as u64 > tokens.len() as u64 {
            return Err(SaeError::DimensionMismatch {
                what: "token sidecar length",
                expected: (pos + batch.len() as u64) as usize,
                got: tokens.len(),
            });
        }
        let codes = sae.encode(&batch.x_in)?;
        for r in 0..batch.len() {
            let valid = batch.valid_mask[r];
            let acts: Vec<f32> = features
                .iter()
                .map(|&f| if valid { codes[[r, f]] } else { 0.0 })
                .collect();
            for (t, &a) in trackers.iter_mut().zip(&acts) {
                if a > 0.0 {
                    t.fired = true;
                    if t.admits((a, pos), opts.capacity) {
                        t.pending.push_back((pos, a));
                    }
                }
            }
            ring.push(tokens[pos as usize].clone(), acts);
            pos += 1;
            // a pending peak at p is complete once p + window has arrived
            flush_ready(&mut trackers, &ring, pos, false);
        }
    }
    flush_ready(&mut trackers, &ring, pos, true);
    Ok(TopContexts {
        capacity: opts.capacity,
        window: opts.window,
        tokens_seen: pos,
        features: trackers
            .into_iter()
            .map(|t| FeatureContexts {
                feature: t.feature,
                never_fired: !t.fired,
                contexts: t.kept,
            })
            .collect(),
    })
}
