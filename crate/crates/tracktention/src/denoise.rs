//! Synthetic denoising demonstration: a video whose true features are
//! constant along static tracks, corrupted by i.i.d. per-frame noise,
//! run through the sampling stage in an oracle configuration that makes
//! the temporal update an exact mean over frames.
//!
//! Averaging T independent noise draws divides their variance by T, so
//! the reported reduction factor should sit near the frame count — a
//! measurable stand-in for "temporally consistent features".

use serde::Serialize;

use crate::baselines::{temporal_attention, BaselineAttnParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trackatt::{attentional_sampling, embed_track_points, TracktentionParams};
use crate::tracks::{constant_tracks, sample_queries, QuerySpec, QueryStrategy, TrackSet};
use crate::video::{FeatureMap, TrackTokens};

/// Channel width of the synthetic features.
const DEMO_CHANNELS: usize = 8;

/// Variances below this are treated as exactly clean.
const VARIANCE_FLOOR: f64 = 1e-18;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DenoiseReport {
    /// Mean squared deviation of the sampled track features from their
    /// noise-free reference, before temporal averaging.
    pub input_var: f64,
    /// The same deviation after temporal averaging.
    pub output_var: f64,
    /// `input_var / output_var`, or 1 when both sit at the floor.
    pub reduction_factor: f64,
}

/// Sampling weights frozen to the Gaussian locality kernel: zero query
/// projection, raw feature values, single head.
fn oracle_params(d: usize) -> TracktentionParams<f64> {
    TracktentionParams {
        d_f: d,
        d_k: d,
        heads: 1,
        w_q: Tensor::zeros(&[d, d]),
        w_k: Tensor::zeros(&[d, d]),
        w_out: Tensor::zeros(&[d, d]),
        embed_proj: Tensor::zeros(&[d, d]),
        q_norm_gain: Tensor::filled(&[d], 1.0),
        k_norm_gain: Tensor::filled(&[d], 1.0),
        sigma: 0.5,
        rope_base: 100.0,
        rope_on_values: false,
    }
}

fn sample_tokens(
    features: &FeatureMap<f64>,
    tracks: &TrackSet<f64>,
    params: &TracktentionParams<f64>,
) -> Result<TrackTokens<f64>> {
    let tokens = embed_track_points(tracks, params)?;
    Ok(attentional_sampling(features, &tokens, tracks, params)?.0)
}

/// Replaces every track's token sequence by its mean over frames, built
/// from a uniform-attention pass (zero query/key projections, identity
/// value and output projections) over the time axis.
fn temporal_mean(tokens: &TrackTokens<f64>) -> Result<TrackTokens<f64>> {
    let (t_len, m_len, d) = (tokens.frames(), tokens.track_count(), tokens.channels());
    let uniform = BaselineAttnParams {
        d_f: d,
        d_k: d,
        heads: 1,
        w_q: Tensor::zeros(&[d, d]),
        w_k: Tensor::zeros(&[d, d]),
        w_v: Tensor::eye(d),
        w_o: Tensor::eye(d),
    };
    let as_map = FeatureMap::new(
        tokens
            .tensor()
            .clone()
            .reshape(vec![t_len, m_len, 1, d])?,
    )?;
    let averaged = temporal_attention(&as_map, &uniform)?;
    TrackTokens::new(averaged.into_tensor().reshape(vec![t_len, m_len, d])?)
}

fn mean_sq_deviation(a: &TrackTokens<f64>, b: &TrackTokens<f64>) -> f64 {
    let (x, y) = (a.tensor().data(), b.tensor().data());
    let sum: f64 = x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum();
    sum / x.len() as f64
}

/// Runs the demonstration: static scene, grid-seeded static tracks,
/// per-frame noise of the given standard deviation.
pub fn denoise_demo(
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    track_count: usize,
    noise_std: f64,
) -> Result<DenoiseReport> {
    if frames < 4 {
        return Err(Error::Config(format!(
            "denoising needs at least 4 frames to average over, got {frames}"
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Config(format!(
            "noise standard deviation must be finite and non-negative, got {noise_std}"
        )));
    }
    let root = Rng::new(seed);
    let d = DEMO_CHANNELS;

    // static scene: one random frame repeated, plus fresh noise per frame
    let base: Tensor<f64> = root.substream(1).normal(&[height, width, d], 1.0);
    let noise: Tensor<f64> = root.substream(2).normal(&[frames, height, width, d], noise_std);
    let clean = FeatureMap::new(Tensor::from_fn(&[frames, height, width, d], |idx| {
        base.at(&idx[1..])
    }))?;
    let noisy = FeatureMap::new(Tensor::from_fn(&[frames, height, width, d], |idx| {
        clean.tensor().at(idx) + noise.at(idx)
    }))?;

    let queries = sample_queries(
        frames,
        height,
        width,
        &QuerySpec {
            strategy: QueryStrategy::GridT0,
            count: track_count,
            seed: root.substream(3).next_u64(),
        },
    )?;
    let tracks = constant_tracks(frames, &queries)?;

    let params = oracle_params(d);
    let reference = sample_tokens(&clean, &tracks, &params)?;
    let sampled = sample_tokens(&noisy, &tracks, &params)?;
    let averaged = temporal_mean(&sampled)?;

    let input_var = mean_sq_deviation(&sampled, &reference);
    let output_var = mean_sq_deviation(&averaged, &reference);
    let reduction_factor = if input_var <= VARIANCE_FLOOR && output_var <= VARIANCE_FLOOR {
        1.0
    } else {
        input_var / output_var.max(VARIANCE_FLOOR)
    };
    Ok(DenoiseReport {
        input_var,
        output_var,
        reduction_factor,
    })
}
