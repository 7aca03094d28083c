//! Temporal transformer over track tokens.
//!
//! Each track's `T` tokens form an independent sequence; the track axis is
//! a pure batch axis, so no information crosses tracks. Blocks are
//! standard pre-norm residual encoder layers — self-attention over time,
//! then a GELU feed-forward of width `4 d_f` — with a sinusoidal time
//! encoding added once to the input.

use crate::error::{Error, Result};
use crate::tensor::{add, layer_norm, matmul, softmax_rows, Scalar, Tensor};
use crate::video::TrackTokens;

const LN_EPS: f64 = 1e-6;

/// Weights of one pre-norm encoder layer over width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<S: Scalar> {
    pub w_q: Tensor<S>, // [d, d]
    pub w_k: Tensor<S>, // [d, d]
    pub w_v: Tensor<S>, // [d, d]
    pub w_o: Tensor<S>, // [d, d]
    pub ffn_w1: Tensor<S>, // [d, 4d]
    pub ffn_w2: Tensor<S>, // [4d, d]
    pub ln1_gain: Tensor<S>,
    pub ln1_bias: Tensor<S>,
    pub ln2_gain: Tensor<S>,
    pub ln2_bias: Tensor<S>,
}

impl<S: Scalar> EncoderLayerParams<S> {
    pub fn validate(&self, d: usize) -> Result<()> {
        let mats: [(&str, &Tensor<S>, Vec<usize>); 6] = [
            ("w_q", &self.w_q, vec![d, d]),
            ("w_k", &self.w_k, vec![d, d]),
            ("w_v", &self.w_v, vec![d, d]),
            ("w_o", &self.w_o, vec![d, d]),
            ("ffn_w1", &self.ffn_w1, vec![d, 4 * d]),
            ("ffn_w2", &self.ffn_w2, vec![4 * d, d]),
        ];
        for (name, t, want) in mats {
            if t.shape() != want.as_slice() {
                return Err(Error::Dim(format!(
                    "encoder {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        for (name, t) in [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ] {
            if t.shape() != [d] {
                return Err(Error::Dim(format!(
                    "encoder {name} has shape {:?}, expected [{d}]",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<T2: Scalar>(&self) -> EncoderLayerParams<T2> {
        EncoderLayerParams {
            w_q: self.w_q.cast(),
            w_k: self.w_k.cast(),
            w_v: self.w_v.cast(),
            w_o: self.w_o.cast(),
            ffn_w1: self.ffn_w1.cast(),
            ffn_w2: self.ffn_w2.cast(),
            ln1_gain: self.ln1_gain.cast(),
            ln1_bias: self.ln1_bias.cast(),
            ln2_gain: self.ln2_gain.cast(),
            ln2_bias: self.ln2_bias.cast(),
        }
    }
}

/// The temporal encoder stack: usually two layers, one to three for
/// ablations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTransformerParams<S: Scalar> {
    pub d_f: usize,
    pub heads: usize,
    pub layers: Vec<EncoderLayerParams<S>>,
    /// Precomputed sinusoidal table `[t_max, d_f]`, added to the input.
    pub time_pe: Tensor<S>,
}

impl<S: Scalar> TrackTransformerParams<S> {
    pub fn t_max(&self) -> usize {
        self.time_pe.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_f == 0 || self.heads == 0 {
            return Err(Error::Config("width and head count must be positive".into()));
        }
        if self.d_f % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_f {} not divisible by {} heads",
                self.d_f, self.heads
            )));
        }
        if self.layers.is_empty() || self.layers.len() > 3 {
            return Err(Error::Config(format!(
                "encoder depth must be 1..=3, got {}",
                self.layers.len()
            )));
        }
        for layer in &self.layers {
            layer.validate(self.d_f)?;
        }
        if self.time_pe.rank() != 2 || self.time_pe.shape()[1] != self.d_f {
            return Err(Error::Dim(format!(
                "time encoding table {:?} must be [t_max, {}]",
                self.time_pe.shape(),
                self.d_f
            )));
        }
        Ok(())
    }

    pub fn cast<T2: Scalar>(&self) -> TrackTransformerParams<T2> {
        TrackTransformerParams {
            d_f: self.d_f,
            heads: self.heads,
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            time_pe: self.time_pe.cast(),
        }
    }
}

/// Sinusoidal time table: `PE[t][2i] = sin(t / 10000^(2i/d))`,
/// `PE[t][2i+1]` the cosine of the same angle.
pub fn time_pos_encoding<S: Scalar>(frames: usize, d: usize) -> Result<Tensor<S>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("time encoding width must be even, got {d}")));
    }
    if frames == 0 {
        return Err(Error::Config("time encoding needs at least one frame".into()));
    }
    let mut out = Tensor::zeros(&[frames, d]);
    for t in 0..frames {
        let row = &mut out.data_mut()[t * d..(t + 1) * d];
        for i in 0..d / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] = S::of(angle.sin());
            row[2 * i + 1] = S::of(angle.cos());
        }
    }
    Ok(out)
}

fn gelu<S: Scalar>(x: S) -> S {
    // tanh form of the Gaussian error linear unit
    let x = x.to_f64();
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
    S::of(0.5 * x * (1.0 + inner.tanh()))
}

/// Multi-head self-attention over a `[n, d]` sequence, returning the
/// output and — only when asked, since they are `heads * n * n` floats —
/// the per-head attention maps.
fn self_attention<S: Scalar>(
    x: &Tensor<S>,
    layer: &EncoderLayerParams<S>,
    heads: usize,
    want_maps: bool,
) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
    let n = x.shape()[0];
    let d = x.shape()[1];
    let d_h = d / heads;
    let q = matmul(x, &layer.w_q)?;
    let k = matmul(x, &layer.w_k)?;
    let v = matmul(x, &layer.w_v)?;
    let scale = S::of(1.0 / (d_h as f64).sqrt());

    let slice = |m: &Tensor<S>, h: usize| -> Tensor<S> {
        Tensor::from_fn(&[n, d_h], |idx| m.at(&[idx[0], h * d_h + idx[1]]))
    };

    let mut mixed = Tensor::zeros(&[n, d]);
    let mut maps = want_maps.then(|| Tensor::zeros(&[heads, n, n]));
    for h in 0..heads {
        let mut logits = matmul(&slice(&q, h), &slice(&k, h).transpose2d())?;
        for l in logits.data_mut() {
            *l = *l * scale;
        }
        let attn = softmax_rows(&logits)?;
        let head_out = matmul(&attn, &slice(&v, h))?;
        for i in 0..n {
            let dst = i * d + h * d_h;
            mixed.data_mut()[dst..dst + d_h]
                .copy_from_slice(&head_out.data()[i * d_h..(i + 1) * d_h]);
        }
        if let Some(maps) = maps.as_mut() {
            maps.data_mut()[h * n * n..(h + 1) * n * n].copy_from_slice(attn.data());
        }
    }
    Ok((matmul(&mixed, &layer.w_o)?, maps))
}

/// One pre-norm encoder layer: `x + attn(ln1(x))`, then `h + ffn(ln2(h))`.
pub fn encoder_layer_forward<S: Scalar>(
    x: &Tensor<S>,
    layer: &EncoderLayerParams<S>,
    heads: usize,
) -> Result<Tensor<S>> {
    let eps = S::of(LN_EPS);
    let normed = layer_norm(x, &layer.ln1_gain, &layer.ln1_bias, eps)?;
    let (attn_out, _) = self_attention(&normed, layer, heads, false)?;
    let h = add(x, &attn_out)?;

    let normed2 = layer_norm(&h, &layer.ln2_gain, &layer.ln2_bias, eps)?;
    let hidden = matmul(&normed2, &layer.ffn_w1)?.map(gelu);
    let ffn_out = matmul(&hidden, &layer.ffn_w2)?;
    add(&h, &ffn_out)
}

/// Attention maps of layer `layer_index` for one track's sequence, after
/// the time encoding and all earlier layers have been applied. Shape
/// `[heads, T, T]`; rows are stochastic.
pub fn temporal_attention_maps<S: Scalar>(
    tokens: &TrackTokens<S>,
    params: &TrackTransformerParams<S>,
    track: usize,
    layer_index: usize,
) -> Result<Tensor<S>> {
    params.validate()?;
    if layer_index >= params.layers.len() {
        return Err(Error::Config(format!(
            "layer {layer_index} out of range for a {}-layer encoder",
            params.layers.len()
        )));
    }
    if track >= tokens.track_count() {
        return Err(Error::Dim(format!(
            "track {track} out of range for {} tracks",
            tokens.track_count()
        )));
    }
    let mut x = track_sequence(tokens, params, track)?;
    for layer in &params.layers[..layer_index] {
        x = encoder_layer_forward(&x, layer, params.heads)?;
    }
    let layer = &params.layers[layer_index];
    let eps = S::of(LN_EPS);
    let normed = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias, eps)?;
    let (_, maps) = self_attention(&normed, layer, params.heads, true)?;
    Ok(maps.expect("maps were requested"))
}

/// Track `m`'s sequence `[T, d_f]` with the time encoding added.
fn track_sequence<S: Scalar>(
    tokens: &TrackTokens<S>,
    params: &TrackTransformerParams<S>,
    m: usize,
) -> Result<Tensor<S>> {
    let t_len = tokens.frames();
    let d = params.d_f;
    let mut x = Tensor::zeros(&[t_len, d]);
    for t in 0..t_len {
        let src = tokens.token(t, m);
        let pe = &params.time_pe.data()[t * d..(t + 1) * d];
        let dst = &mut x.data_mut()[t * d..(t + 1) * d];
        for c in 0..d {
            dst[c] = src[c] + pe[c];
        }
    }
    Ok(x)
}

/// Runs the temporal encoder independently over every track.
pub fn track_transformer_forward<S: Scalar>(
    tokens: &TrackTokens<S>,
    params: &TrackTransformerParams<S>,
) -> Result<TrackTokens<S>> {
    params.validate()?;
    let (t_len, m_len, d) = (tokens.frames(), tokens.track_count(), tokens.channels());
    if d != params.d_f {
        return Err(Error::Dim(format!("token width {} must equal d_f {}", d, params.d_f)));
    }
    if t_len > params.t_max() {
        return Err(Error::Config(format!(
            "sequence of {} frames exceeds the {}-entry time table",
            t_len,
            params.t_max()
        )));
    }
    if !tokens.tensor().is_finite() {
        return Err(Error::Numeric("track tokens contain non-finite values".into()));
    }
    let mut out = Tensor::zeros(&[t_len, m_len, d]);
    for m in 0..m_len {
        let mut x = track_sequence(tokens, params, m)?;
        for layer in &params.layers {
            x = encoder_layer_forward(&x, layer, params.heads)?;
        }
        for t in 0..t_len {
            let dst = (t * m_len + m) * d;
            out.data_mut()[dst..dst + d].copy_from_slice(&x.data()[t * d..(t + 1) * d]);
        }
    }
    TrackTokens::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    pub(crate) fn random_layer(d: usize, rng: &mut Rng) -> EncoderLayerParams<f64> {
        EncoderLayerParams {
            w_q: rng.normal(&[d, d], 0.2),
            w_k: rng.normal(&[d, d], 0.2),
            w_v: rng.normal(&[d, d], 0.2),
            w_o: rng.normal(&[d, d], 0.2),
            ffn_w1: rng.normal(&[d, 4 * d], 0.2),
            ffn_w2: rng.normal(&[4 * d, d], 0.2),
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        }
    }

    fn random_params(d: usize, depth: usize, t_max: usize, rng: &mut Rng) -> TrackTransformerParams<f64> {
        TrackTransformerParams {
            d_f: d,
            heads: 4,
            layers: (0..depth).map(|_| random_layer(d, rng)).collect(),
            time_pe: time_pos_encoding(t_max, d).unwrap(),
        }
    }

    #[test]
    fn time_encoding_zero_frame_alternates() {
        let pe: Tensor<f64> = time_pos_encoding(3, 8).unwrap();
        assert_eq!(&pe.data()[0..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn time_encoding_rows_distinct_and_bounded() {
        let pe: Tensor<f64> = time_pos_encoding(128, 16).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for a in 0..128 {
            for b in a + 1..128 {
                let same = (0..16).all(|c| (pe.at(&[a, c]) - pe.at(&[b, c])).abs() < 1e-9);
                assert!(!same, "rows {a} and {b} coincide");
            }
        }
    }

    #[test]
    fn single_frame_has_no_temporal_mixing() {
        let mut rng = Rng::new(1);
        let params = random_params(8, 2, 4, &mut rng);
        let tokens = TrackTokens::new(rng.normal(&[1, 3, 8], 1.0)).unwrap();
        let out = track_transformer_forward(&tokens, &params).unwrap();
        // attention over one step is the weight-1 self-loop: result equals
        // running each token alone through the layers
        for m in 0..3 {
            let solo = TrackTokens::new(
                Tensor::new(vec![1, 1, 8], tokens.token(0, m).to_vec()).unwrap(),
            )
            .unwrap();
            let solo_out = track_transformer_forward(&solo, &params).unwrap();
            assert_eq!(out.token(0, m), solo_out.token(0, 0));
        }
        let maps = temporal_attention_maps(&tokens, &params, 0, 0).unwrap();
        assert!(maps.data().iter().all(|&a| (a - 1.0).abs() < 1e-12));
    }

    #[test]
    fn tracks_are_isolated_bitwise() {
        let mut rng = Rng::new(2);
        let params = random_params(8, 2, 8, &mut rng);
        let tokens = TrackTokens::new(rng.normal(&[5, 4, 8], 1.0)).unwrap();
        let base = track_transformer_forward(&tokens, &params).unwrap();

        let mut changed = tokens.tensor().clone();
        for t in 0..5 {
            let off = (t * 4 + 2) * 8; // rewrite track 2 entirely
            for c in 0..8 {
                changed.data_mut()[off + c] = rng.next_normal() * 3.0;
            }
        }
        let out = track_transformer_forward(&TrackTokens::new(changed).unwrap(), &params).unwrap();
        for t in 0..5 {
            for m in [0usize, 1, 3] {
                assert_eq!(base.token(t, m), out.token(t, m), "track {m} leaked");
            }
            assert_ne!(base.token(t, 2), out.token(t, 2));
        }
    }

    #[test]
    fn temporal_attention_rows_sum_to_one() {
        let mut rng = Rng::new(3);
        let params = random_params(8, 2, 8, &mut rng);
        let tokens = TrackTokens::new(rng.normal(&[6, 2, 8], 1.0)).unwrap();
        for layer in 0..2 {
            let maps = temporal_attention_maps(&tokens, &params, 1, layer).unwrap();
            for row in maps.data().chunks(6) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn time_encoding_breaks_step_swap_equivariance() {
        let mut rng = Rng::new(4);
        let params = random_params(8, 2, 8, &mut rng);
        let tokens = TrackTokens::new(rng.normal(&[4, 1, 8], 1.0)).unwrap();
        let out = track_transformer_forward(&tokens, &params).unwrap();

        // rebuild with frames 1 and 2 exchanged
        let swapped = Tensor::from_fn(&[4, 1, 8], |idx| {
            let t = match idx[0] {
                1 => 2,
                2 => 1,
                other => other,
            };
            tokens.tensor().at(&[t, idx[1], idx[2]])
        });
        let out_sw =
            track_transformer_forward(&TrackTokens::new(swapped).unwrap(), &params).unwrap();
        // if the encoder were time-equivariant these would be swaps of each
        // other; the time encoding must prevent that
        let mut merely_swapped = true;
        for c in 0..8 {
            if (out.token(1, 0)[c] - out_sw.token(2, 0)[c]).abs() > 1e-9 {
                merely_swapped = false;
            }
        }
        assert!(!merely_swapped);
    }

    #[test]
    fn zeroed_mixing_weights_reduce_to_identity_plus_pe_path() {
        let mut rng = Rng::new(5);
        let mut params = random_params(8, 2, 8, &mut rng);
        for layer in &mut params.layers {
            layer.w_o = Tensor::zeros(&[8, 8]);
            layer.ffn_w2 = Tensor::zeros(&[32, 8]);
        }
        let tokens = TrackTokens::new(rng.normal(&[5, 3, 8], 1.0)).unwrap();
        let out = track_transformer_forward(&tokens, &params).unwrap();
        for t in 0..5 {
            for m in 0..3 {
                for c in 0..8 {
                    let want = tokens.token(t, m)[c] + params.time_pe.at(&[t, c]);
                    assert_eq!(out.token(t, m)[c], want);
                }
            }
        }
    }

    #[test]
    fn depth_and_width_validation() {
        let mut rng = Rng::new(6);
        let mut params = random_params(8, 2, 8, &mut rng);
        params.layers.clear();
        assert!(params.validate().is_err());
        let mut params = random_params(8, 2, 8, &mut rng);
        params.layers.push(random_layer(8, &mut rng));
        params.layers.push(random_layer(8, &mut rng));
        assert!(params.validate().is_err(), "4 layers should be rejected");
        let params = random_params(8, 2, 4, &mut rng);
        let tokens = TrackTokens::new(Tensor::zeros(&[6, 1, 8])).unwrap();
        assert!(matches!(track_transformer_forward(&tokens, &params), Err(Error::Config(_))));
    }

    #[test]
    fn gelu_reference_values() {
        // tanh-form values at a few probe points
        assert!((gelu(0.0f64)).abs() < 1e-15);
        assert!((gelu(1.0f64) - 0.8411919906082768).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.15880800939172324).abs() < 1e-12);
        assert!((gelu(3.0f64) - 2.996362607918227).abs() < 1e-12);
    }
}
