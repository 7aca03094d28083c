//! The attention core: cross-attention between image feature grids and
//! point tracks, in both directions.
//!
//! *Sampling* (image → track) reads, for every frame, one feature vector
//! per track from the frame's grid. *Splatting* (track → image) writes
//! per-track vectors back onto the grid. Both use the same machinery:
//!
//! - logits `Q Kᵀ / sqrt(d_h) + B` per head, where `B` is a Gaussian
//!   locality bias `-dist² / (2 sigma²)` between track points and grid
//!   cell centers, shared across heads;
//! - rotary position encoding (RoPE) on queries and keys — and optionally
//!   on values — so logits depend on relative positions only;
//! - per-head layer normalization of queries and keys ("QK-norm") with a
//!   learnable gain, which keeps logit scales bounded;
//! - values are *unprojected*: sampling moves raw features, splatting
//!   moves raw track tokens, with only a final output projection.
//!
//! A closed-form directional-derivative check for the bias-only path
//! (`W_Q = 0`) lives at the bottom; it is the differentiability witness
//! for moving track points.

use crate::error::{Error, Result};
use crate::tensor::{matmul, softmax_rows, Scalar, Tensor};
use crate::tracks::TrackSet;
use crate::video::{FeatureMap, TrackTokens};

const QK_NORM_EPS: f64 = 1e-6;

/// Weights and hyperparameters of the two cross-attention stages.
///
/// `q_norm_gain` / `k_norm_gain` hold the per-head QK-norm gains
/// concatenated into one `[d_k]` vector; head `h` reads the slice
/// `h*d_h .. (h+1)*d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TracktentionParams<S: Scalar> {
    pub d_f: usize,
    pub d_k: usize,
    pub heads: usize,
    pub w_q: Tensor<S>,        // [d_f, d_k]
    pub w_k: Tensor<S>,        // [d_f, d_k]
    pub w_out: Tensor<S>,      // [d_f, d_f]
    pub embed_proj: Tensor<S>, // [d_f, d_f]
    pub q_norm_gain: Tensor<S>, // [d_k]
    pub k_norm_gain: Tensor<S>, // [d_k]
    pub sigma: S,
    pub rope_base: f64,
    pub rope_on_values: bool,
}

impl<S: Scalar> TracktentionParams<S> {
    /// Key width per head.
    pub fn head_dim(&self) -> usize {
        self.d_k / self.heads
    }

    /// Value (feature) width per head.
    pub fn value_dim(&self) -> usize {
        self.d_f / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let (d_f, d_k, heads) = (self.d_f, self.d_k, self.heads);
        if d_f == 0 || d_k == 0 || heads == 0 {
            return Err(Error::Config(format!(
                "widths and head count must be positive (d_f={d_f}, d_k={d_k}, heads={heads})"
            )));
        }
        if d_k % heads != 0 {
            return Err(Error::Config(format!("d_k {d_k} not divisible by {heads} heads")));
        }
        if (d_k / heads) % 4 != 0 {
            return Err(Error::Config(format!(
                "per-head key width {} must be divisible by 4 (x/y rotation pairs)",
                d_k / heads
            )));
        }
        if d_f % 4 != 0 {
            return Err(Error::Config(format!(
                "d_f {d_f} must be divisible by 4 for point embedding"
            )));
        }
        if d_f % heads != 0 {
            return Err(Error::Config(format!("d_f {d_f} not divisible by {heads} heads")));
        }
        if self.rope_on_values && (d_f / heads) % 4 != 0 {
            return Err(Error::Config(format!(
                "rotating values needs per-head feature width {} divisible by 4",
                d_f / heads
            )));
        }
        if !(self.sigma > S::zero()) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {:?}", self.sigma)));
        }
        if !(self.rope_base > 0.0) || !self.rope_base.is_finite() {
            return Err(Error::Config(format!("rope_base must be positive, got {}", self.rope_base)));
        }
        let shapes: [(&str, &Tensor<S>, Vec<usize>); 6] = [
            ("w_q", &self.w_q, vec![d_f, d_k]),
            ("w_k", &self.w_k, vec![d_f, d_k]),
            ("w_out", &self.w_out, vec![d_f, d_f]),
            ("embed_proj", &self.embed_proj, vec![d_f, d_f]),
            ("q_norm_gain", &self.q_norm_gain, vec![d_k]),
            ("k_norm_gain", &self.k_norm_gain, vec![d_k]),
        ];
        for (name, t, want) in shapes {
            if t.shape() != want.as_slice() {
                return Err(Error::Dim(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    want
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("{name} contains non-finite values")));
            }
        }
        Ok(())
    }

    pub fn cast<T2: Scalar>(&self) -> TracktentionParams<T2> {
        TracktentionParams {
            d_f: self.d_f,
            d_k: self.d_k,
            heads: self.heads,
            w_q: self.w_q.cast(),
            w_k: self.w_k.cast(),
            w_out: self.w_out.cast(),
            embed_proj: self.embed_proj.cast(),
            q_norm_gain: self.q_norm_gain.cast(),
            k_norm_gain: self.k_norm_gain.cast(),
            sigma: T2::of(self.sigma.to_f64()),
            rope_base: self.rope_base,
            rope_on_values: self.rope_on_values,
        }
    }
}

/// Per-frame, per-head attention weights, row-stochastic along the last
/// axis. Shape `[T, heads, M, HW]` for sampling, `[T, heads, HW, M]` for
/// splatting.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps<S: Scalar> {
    pub data: Tensor<S>,
}

impl<S: Scalar> AttentionMaps<S> {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.data.shape()[1]
    }

    /// One attention row: weights over the last axis for (frame, head,
    /// row).
    pub fn row(&self, t: usize, h: usize, i: usize) -> &[S] {
        let cols = self.data.shape()[3];
        let rows = self.data.shape()[2];
        let off = ((t * self.heads() + h) * rows + i) * cols;
        &self.data.data()[off..off + cols]
    }

    /// Worst row-sum deviation from 1 across all rows.
    pub fn max_row_sum_error(&self) -> f64 {
        let cols = self.data.shape()[3];
        self.data
            .data()
            .chunks(cols)
            .map(|row| {
                let s: f64 = row.iter().map(|&v| v.to_f64()).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.data.data().iter().map(|&v| v.to_f64()).fold(f64::INFINITY, f64::min)
    }
}

// ── position machinery ──────────────────────────────────────────────────

/// Rotation frequencies for a `d`-channel split (`d/4` of them):
/// `base^(-2(i-1)/(d/2))` for `i = 1..d/4`.
fn rope_freqs(d: usize, base: f64) -> Vec<f64> {
    (0..d / 4).map(|k| base.powf(-2.0 * k as f64 / (d / 2) as f64)).collect()
}

fn check_rope_width(d: usize) -> Result<()> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::Config(format!(
            "channel width {d} must be a positive multiple of 4 (x/y sin-cos pairs)"
        )));
    }
    Ok(())
}

/// Rotates one `d`-wide vector in place: channel pairs `(2k, 2k+1)` of the
/// first half turn by `freq_k * x`, of the second half by `freq_k * y`.
fn rope_rotate_row<S: Scalar>(row: &mut [S], freqs: &[f64], pos: (S, S)) {
    let half = row.len() / 2;
    for (offset, coord) in [(0usize, pos.0.to_f64()), (half, pos.1.to_f64())] {
        for (k, &f) in freqs.iter().enumerate() {
            let angle = f * coord;
            let (sin, cos) = (S::of(angle.sin()), S::of(angle.cos()));
            let a = row[offset + 2 * k];
            let b = row[offset + 2 * k + 1];
            row[offset + 2 * k] = a * cos - b * sin;
            row[offset + 2 * k + 1] = a * sin + b * cos;
        }
    }
}

/// Rotary position encoding over the rows of `f` (last axis `d`), one
/// 2-D position per row.
pub fn rope_apply<S: Scalar>(f: &Tensor<S>, positions: &[(S, S)], base: f64) -> Result<Tensor<S>> {
    let d = *f.shape().last().ok_or_else(|| Error::Dim("rope needs rank >= 1".into()))?;
    check_rope_width(d)?;
    let rows = f.numel() / d;
    if positions.len() != rows {
        return Err(Error::Dim(format!(
            "{} positions for {} rows",
            positions.len(),
            rows
        )));
    }
    let freqs = rope_freqs(d, base);
    let mut out = f.clone();
    for (row, &pos) in out.data_mut().chunks_mut(d).zip(positions) {
        rope_rotate_row(row, &freqs, pos);
    }
    Ok(out)
}

/// Sinusoidal 2-D position features, `dim` channels: interleaved
/// `sin/cos` of `x` at the rotation frequencies in the first half, of `y`
/// in the second half. Zero position gives the `[0, 1, 0, 1, ...]`
/// pattern.
pub fn sincos_embed<S: Scalar>(positions: &[(S, S)], dim: usize, base: f64) -> Result<Tensor<S>> {
    check_rope_width(dim)?;
    let freqs = rope_freqs(dim, base);
    let half = dim / 2;
    let mut out = Tensor::zeros(&[positions.len(), dim]);
    for (row, &(x, y)) in out.data_mut().chunks_mut(dim).zip(positions) {
        for (offset, coord) in [(0usize, x.to_f64()), (half, y.to_f64())] {
            for (k, &f) in freqs.iter().enumerate() {
                let angle = f * coord;
                row[offset + 2 * k] = S::of(angle.sin());
                row[offset + 2 * k + 1] = S::of(angle.cos());
            }
        }
    }
    Ok(out)
}

/// Embeds every track point as a `d_f`-channel token: sinusoidal
/// position features followed by the learnable `embed_proj` map.
pub fn embed_track_points<S: Scalar>(
    tracks: &TrackSet<S>,
    params: &TracktentionParams<S>,
) -> Result<TrackTokens<S>> {
    params.validate()?;
    let (t_len, m_len) = (tracks.frames(), tracks.track_count());
    let mut positions = Vec::with_capacity(t_len * m_len);
    for t in 0..t_len {
        positions.extend(tracks.frame_points(t));
    }
    let raw = sincos_embed(&positions, params.d_f, params.rope_base)?;
    let projected = matmul(&raw, &params.embed_proj)?;
    TrackTokens::new(projected.reshape(vec![t_len, m_len, params.d_f])?)
}

/// Locality bias `B[i][j] = -‖p_i - pos(j)‖² / (2 sigma²)` between track
/// points and the cell centers of an `(H, W)` grid whose top-left center
/// sits at `origin`.
pub fn gaussian_bias<S: Scalar>(
    points: &[(S, S)],
    grid: (usize, usize),
    origin: (S, S),
    sigma: S,
) -> Result<Tensor<S>> {
    if !(sigma > S::zero()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma:?}")));
    }
    let (h, w) = grid;
    let hw = h * w;
    let inv_two_sigma2 = (S::of(2.0) * sigma * sigma).recip();
    let mut out = Tensor::zeros(&[points.len(), hw]);
    for (i, &(px, py)) in points.iter().enumerate() {
        let row = &mut out.data_mut()[i * hw..(i + 1) * hw];
        for (j, v) in row.iter_mut().enumerate() {
            let gx = origin.0 + S::of((j % w) as f64);
            let gy = origin.1 + S::of((j / w) as f64);
            let dx = px - gx;
            let dy = py - gy;
            *v = -(dx * dx + dy * dy) * inv_two_sigma2;
        }
    }
    Ok(out)
}

/// Per-head layer normalization of the last axis viewed as `heads`
/// slices: each slice is shifted to zero mean and scaled to unit
/// variance (`eps = 1e-6`), then multiplied by its gain slice. No bias,
/// so zero input stays zero.
pub fn qk_norm<S: Scalar>(x: &Tensor<S>, heads: usize, gain: &Tensor<S>) -> Result<Tensor<S>> {
    let d = *x.shape().last().ok_or_else(|| Error::Dim("qk_norm needs rank >= 1".into()))?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
    }
    if gain.shape() != [d] {
        return Err(Error::Dim(format!("gain shape {:?}, expected [{d}]", gain.shape())));
    }
    let d_h = d / heads;
    let eps = S::of(QK_NORM_EPS);
    let inv_dh = S::of(1.0 / d_h as f64);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        for h in 0..heads {
            let slice = &mut row[h * d_h..(h + 1) * d_h];
            let mut mean = S::zero();
            for &v in slice.iter() {
                mean = mean + v;
            }
            mean = mean * inv_dh;
            let mut var = S::zero();
            for &v in slice.iter() {
                let c = v - mean;
                var = var + c * c;
            }
            var = var * inv_dh;
            let inv_std = (var + eps).sqrt().recip();
            for (k, v) in slice.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gain.data()[h * d_h + k];
            }
        }
    }
    Ok(out)
}

// ── the two attention stages ────────────────────────────────────────────

/// Columns `h*width .. (h+1)*width` of a `[n, heads*width]` matrix.
fn head_slice<S: Scalar>(x: &Tensor<S>, heads: usize, h: usize) -> Tensor<S> {
    let n = x.shape()[0];
    let d = x.shape()[1];
    let width = d / heads;
    let mut out = Tensor::zeros(&[n, width]);
    for i in 0..n {
        let src = &x.data()[i * d + h * width..i * d + (h + 1) * width];
        out.data_mut()[i * width..(i + 1) * width].copy_from_slice(src);
    }
    out
}

/// Queries or keys ready for attention: project with `w`, normalize per
/// head, rotate per head at `positions`.
fn project_norm_rotate<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    gain: &Tensor<S>,
    positions: &[(S, S)],
    params: &TracktentionParams<S>,
) -> Result<Vec<Tensor<S>>> {
    let projected = qk_norm(&matmul(x, w)?, params.heads, gain)?;
    let freqs = rope_freqs(params.head_dim(), params.rope_base);
    (0..params.heads)
        .map(|h| {
            let mut slice = head_slice(&projected, params.heads, h);
            for (row, &pos) in slice.data_mut().chunks_mut(params.head_dim()).zip(positions) {
                rope_rotate_row(row, &freqs, pos);
            }
            Ok(slice)
        })
        .collect()
}

/// Per-head value slices of raw `[n, d_f]` rows, rotated at `positions`
/// when `rope_on_values` is set.
fn value_slices<S: Scalar>(
    x: &Tensor<S>,
    positions: &[(S, S)],
    params: &TracktentionParams<S>,
) -> Vec<Tensor<S>> {
    let d_v = params.value_dim();
    let freqs = rope_freqs(d_v, params.rope_base);
    (0..params.heads)
        .map(|h| {
            let mut slice = head_slice(x, params.heads, h);
            if params.rope_on_values {
                for (row, &pos) in slice.data_mut().chunks_mut(d_v).zip(positions) {
                    rope_rotate_row(row, &freqs, pos);
                }
            }
            slice
        })
        .collect()
}

fn check_sampling_shapes<S: Scalar>(
    features: &FeatureMap<S>,
    tokens: &TrackTokens<S>,
    tracks: &TrackSet<S>,
    params: &TracktentionParams<S>,
) -> Result<()> {
    params.validate()?;
    if features.frames() != tracks.frames() {
        return Err(Error::Dim(format!(
            "feature frames ({}) != track frames ({})",
            features.frames(),
            tracks.frames()
        )));
    }
    if tokens.frames() != tracks.frames() || tokens.track_count() != tracks.track_count() {
        return Err(Error::Dim(format!(
            "token stack [{}x{}] does not match track set [{}x{}]",
            tokens.frames(),
            tokens.track_count(),
            tracks.frames(),
            tracks.track_count()
        )));
    }
    if features.channels() != params.d_f || tokens.channels() != params.d_f {
        return Err(Error::Dim(format!(
            "channel widths (features {}, tokens {}) must equal d_f {}",
            features.channels(),
            tokens.channels(),
            params.d_f
        )));
    }
    if !features.tensor().is_finite() || !tokens.tensor().is_finite() {
        return Err(Error::Numeric("attention inputs contain non-finite values".into()));
    }
    Ok(())
}

fn grid_positions<S: Scalar>(features: &FeatureMap<S>) -> Vec<(S, S)> {
    (0..features.tokens_per_frame()).map(|j| features.token_pos(j)).collect()
}

/// Attention logits of the sampling stage, `[T, heads, M, HW]`:
/// `Q Kᵀ / sqrt(d_h) + B` before the softmax. Exposed so position
/// properties (translation invariance) can be checked on the raw scores.
pub fn sampling_logits<S: Scalar>(
    features: &FeatureMap<S>,
    tokens: &TrackTokens<S>,
    tracks: &TrackSet<S>,
    params: &TracktentionParams<S>,
) -> Result<Tensor<S>> {
    check_sampling_shapes(features, tokens, tracks, params)?;
    let (t_len, m_len) = (tracks.frames(), tracks.track_count());
    let hw = features.tokens_per_frame();
    let mut out = Tensor::zeros(&[t_len, params.heads, m_len, hw]);
    for t in 0..t_len {
        let per_head = frame_sampling_logits(features, tokens, tracks, params, t)?;
        for (h, logits) in per_head.iter().enumerate() {
            let dst = ((t * params.heads) + h) * m_len * hw;
            out.data_mut()[dst..dst + m_len * hw].copy_from_slice(logits.data());
        }
    }
    Ok(out)
}

/// One frame of sampling logits, one `[M, HW]` matrix per head.
fn frame_sampling_logits<S: Scalar>(
    features: &FeatureMap<S>,
    tokens: &TrackTokens<S>,
    tracks: &TrackSet<S>,
    params: &TracktentionParams<S>,
    t: usize,
) -> Result<Vec<Tensor<S>>> {
    let m_len = tracks.track_count();
    let hw = features.tokens_per_frame();
    let track_pos = tracks.frame_points(t);
    let grid_pos = grid_positions(features);

    let tok = Tensor::new(vec![m_len, params.d_f], tokens.frame(t).to_vec())?;
    let feat = Tensor::new(vec![hw, params.d_f], features.frame(t).to_vec())?;
    let q = project_norm_rotate(&tok, &params.w_q, &params.q_norm_gain, &track_pos, params)?;
    let k = project_norm_rotate(&feat, &params.w_k, &params.k_norm_gain, &grid_pos, params)?;
    let bias = gaussian_bias(&track_pos, (features.height(), features.width()), features.origin(), params.sigma)?;

    let scale = S::of(1.0 / (params.head_dim() as f64).sqrt());
    (0..params.heads)
        .map(|h| {
            let mut logits = matmul(&q[h], &k[h].transpose2d())?;
            for (l, &b) in logits.data_mut().iter_mut().zip(bias.data()) {
                *l = *l * scale + b;
            }
            Ok(logits)
        })
        .collect()
}

/// Image → track attention. For each frame, every track token queries the
/// frame's feature grid; the result stacks the per-head readouts of the
/// raw (unprojected) features into new `[T, M, d_f]` track tokens.
///
/// Also returns the attention maps `[T, heads, M, HW]`.
pub fn attentional_sampling<S: Scalar>(
    features: &FeatureMap<S>,
    tokens: &TrackTokens<S>,
    tracks: &TrackSet<S>,
    params: &TracktentionParams<S>,
) -> Result<(TrackTokens<S>, AttentionMaps<S>)> {
    check_sampling_shapes(features, tokens, tracks, params)?;
    let (t_len, m_len) = (tracks.frames(), tracks.track_count());
    let hw = features.tokens_per_frame();
    let d_v = params.value_dim();

    let mut sampled = Tensor::zeros(&[t_len, m_len, params.d_f]);
    let mut maps = Tensor::zeros(&[t_len, params.heads, m_len, hw]);
    for t in 0..t_len {
        let grid_pos = grid_positions(features);
        let feat = Tensor::new(vec![hw, params.d_f], features.frame(t).to_vec())?;
        let values = value_slices(&feat, &grid_pos, params);
        let logits = frame_sampling_logits(features, tokens, tracks, params, t)?;
        for (h, head_logits) in logits.into_iter().enumerate() {
            let attn = softmax_rows(&head_logits)?;
            let head_out = matmul(&attn, &values[h])?;
            for i in 0..m_len {
                let dst = (t * m_len + i) * params.d_f + h * d_v;
                sampled.data_mut()[dst..dst + d_v]
                    .copy_from_slice(&head_out.data()[i * d_v..(i + 1) * d_v]);
            }
            let dst = ((t * params.heads) + h) * m_len * hw;
            maps.data_mut()[dst..dst + m_len * hw].copy_from_slice(attn.data());
        }
    }
    Ok((TrackTokens::new(sampled)?, AttentionMaps { data: maps }))
}

/// Track → image attention. Every grid cell queries the frame's updated
/// track tokens (bias transposed relative to sampling), the raw tokens
/// are mixed per head, and the result goes through `w_out` — so zero
/// `w_out` means a zero delta. Returns the per-frame delta as a feature
/// map on the given grid plus the `[T, heads, HW, M]` attention maps.
pub fn attentional_splatting<S: Scalar>(
    updated: &TrackTokens<S>,
    tracks: &TrackSet<S>,
    grid: (usize, usize),
    origin: (S, S),
    params: &TracktentionParams<S>,
) -> Result<(FeatureMap<S>, AttentionMaps<S>)> {
    params.validate()?;
    let (h_len, w_len) = grid;
    if h_len == 0 || w_len == 0 {
        return Err(Error::Config(format!("splat grid {h_len}x{w_len} has a zero extent")));
    }
    if updated.frames() != tracks.frames() || updated.track_count() != tracks.track_count() {
        return Err(Error::Dim(format!(
            "token stack [{}x{}] does not match track set [{}x{}]",
            updated.frames(),
            updated.track_count(),
            tracks.frames(),
            tracks.track_count()
        )));
    }
    if updated.channels() != params.d_f {
        return Err(Error::Dim(format!(
            "token width {} must equal d_f {}",
            updated.channels(),
            params.d_f
        )));
    }
    if !updated.tensor().is_finite() {
        return Err(Error::Numeric("attention inputs contain non-finite values".into()));
    }

    let (t_len, m_len) = (tracks.frames(), tracks.track_count());
    let hw = h_len * w_len;
    let d_v = params.value_dim();
    let grid_pos: Vec<(S, S)> = (0..hw)
        .map(|j| (origin.0 + S::of((j % w_len) as f64), origin.1 + S::of((j / w_len) as f64)))
        .collect();

    // grid queries do not depend on the frame: embed cell centers like
    // track points, then project/normalize/rotate once
    let grid_embed = matmul(&sincos_embed(&grid_pos, params.d_f, params.rope_base)?, &params.embed_proj)?;
    let q = project_norm_rotate(&grid_embed, &params.w_q, &params.q_norm_gain, &grid_pos, params)?;

    let scale = S::of(1.0 / (params.head_dim() as f64).sqrt());
    let mut delta = Tensor::zeros(&[t_len, hw, params.d_f]);
    let mut maps = Tensor::zeros(&[t_len, params.heads, hw, m_len]);
    for t in 0..t_len {
        let track_pos = tracks.frame_points(t);
        let tok = Tensor::new(vec![m_len, params.d_f], updated.frame(t).to_vec())?;
        let k = project_norm_rotate(&tok, &params.w_k, &params.k_norm_gain, &track_pos, params)?;
        let values = value_slices(&tok, &track_pos, params);
        let bias = gaussian_bias(&track_pos, grid, origin, params.sigma)?.transpose2d();

        let mut mixed = Tensor::zeros(&[hw, params.d_f]);
        for h in 0..params.heads {
            let mut logits = matmul(&q[h], &k[h].transpose2d())?;
            for (l, &b) in logits.data_mut().iter_mut().zip(bias.data()) {
                *l = *l * scale + b;
            }
            let attn = softmax_rows(&logits)?;
            let head_out = matmul(&attn, &values[h])?;
            for j in 0..hw {
                let dst = j * params.d_f + h * d_v;
                mixed.data_mut()[dst..dst + d_v]
                    .copy_from_slice(&head_out.data()[j * d_v..(j + 1) * d_v]);
            }
            let dst = ((t * params.heads) + h) * hw * m_len;
            maps.data_mut()[dst..dst + hw * m_len].copy_from_slice(attn.data());
        }
        let projected = matmul(&mixed, &params.w_out)?;
        delta.data_mut()[t * hw * params.d_f..(t + 1) * hw * params.d_f]
            .copy_from_slice(projected.data());
    }
    let delta = FeatureMap::with_origin(delta.reshape(vec![t_len, h_len, w_len, params.d_f])?, origin)?;
    Ok((delta, AttentionMaps { data: maps }))
}

// ── gradient verification for the bias-only path ────────────────────────

/// Outcome of one directional-derivative comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub analytic: f64,
    pub finite_diff: f64,
    pub rel_err: f64,
}

/// Verifies that moving a track point changes the sampled features the
/// way the closed-form softmax Jacobian says it should.
///
/// Requires `w_q = 0`, which reduces the logits to the Gaussian bias
/// alone. The scalar functional is the sum of all entries of the sampled
/// tokens; its directional derivative w.r.t. point `(t, i)` along
/// `direction` follows from `dA = A ∘ (dB - <A, dB>)`. The reference
/// value is a central finite difference (step 1e-4) through the full
/// sampling stage. Double precision throughout.
pub fn bias_grad_check(
    features: &FeatureMap<f64>,
    tracks: &TrackSet<f64>,
    params: &TracktentionParams<f64>,
    track: usize,
    frame: usize,
    direction: (f64, f64),
) -> Result<GradCheck> {
    params.validate()?;
    if params.w_q.data().iter().any(|&v| v != 0.0) {
        return Err(Error::Config(
            "bias-only gradient check requires a zero query projection".into(),
        ));
    }
    if track >= tracks.track_count() || frame >= tracks.frames() {
        return Err(Error::Dim(format!(
            "point ({frame}, {track}) outside track set [{}x{}]",
            tracks.frames(),
            tracks.track_count()
        )));
    }
    let norm = (direction.0 * direction.0 + direction.1 * direction.1).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Config("direction must be a nonzero finite vector".into()));
    }
    let dir = (direction.0 / norm, direction.1 / norm);

    let phi = |tr: &TrackSet<f64>| -> Result<f64> {
        let tokens = embed_track_points(tr, params)?;
        let (sampled, _) = attentional_sampling(features, &tokens, tr, params)?;
        Ok(sampled.tensor().data().iter().sum())
    };

    // analytic side: only attention row (frame, track) depends on the point
    let hw = features.tokens_per_frame();
    let track_pos = tracks.frame_points(frame);
    let grid_pos = grid_positions(features);
    let bias = gaussian_bias(
        &[track_pos[track]],
        (features.height(), features.width()),
        features.origin(),
        params.sigma,
    )?;
    let attn_row = softmax_rows(&bias)?;

    // per-column readout weight: sum of the (possibly rotated) feature row
    let feat = Tensor::new(vec![hw, params.d_f], features.frame(frame).to_vec())?;
    let values = value_slices(&feat, &grid_pos, params);
    let mut w = vec![0.0f64; hw];
    for v in &values {
        let d_v = params.value_dim();
        for (j, wj) in w.iter_mut().enumerate() {
            *wj += v.data()[j * d_v..(j + 1) * d_v].iter().sum::<f64>();
        }
    }

    let (px, py) = track_pos[track];
    let inv_sigma2 = 1.0 / (params.sigma * params.sigma);
    let mut a_db = 0.0;
    let mut a_w = 0.0;
    let mut a_db_w = 0.0;
    for j in 0..hw {
        let (gx, gy) = grid_pos[j];
        let db = -((px - gx) * dir.0 + (py - gy) * dir.1) * inv_sigma2;
        let a = attn_row.data()[j];
        a_db += a * db;
        a_w += a * w[j];
        a_db_w += a * db * w[j];
    }
    // every head attends with the same row, and the head output chunks
    // partition d_f, so the row readout sums once over the full width
    let analytic = a_db_w - a_db * a_w;

    let step = 1e-4;
    let plus = perturbed(tracks, frame, track, (dir.0 * step, dir.1 * step));
    let minus = perturbed(tracks, frame, track, (-dir.0 * step, -dir.1 * step));
    let finite_diff = (phi(&plus)? - phi(&minus)?) / (2.0 * step);

    let denom = analytic.abs().max(finite_diff.abs());
    let rel_err = if denom < 1e-12 { 0.0 } else { (analytic - finite_diff).abs() / denom };
    Ok(GradCheck { analytic, finite_diff, rel_err })
}

fn perturbed(tracks: &TrackSet<f64>, frame: usize, track: usize, delta: (f64, f64)) -> TrackSet<f64> {
    let mut points = tracks.points().clone();
    let off = (frame * tracks.track_count() + track) * 2;
    points.data_mut()[off] += delta.0;
    points.data_mut()[off + 1] += delta.1;
    TrackSet::new(points, tracks.visible().map(|v| v.to_vec())).expect("perturbation keeps shape")
}
