//! Dense temporal-modeling baselines: attention over time at fixed pixels,
//! attention over space per frame, joint attention over every space-time
//! token, and direct 3-D convolution.
//!
//! These exist for behavioral comparison and for the scaling benchmark,
//! so they are deliberately plain: shared multi-head attention core, no
//! position encodings, no residual wrapper, values projected through
//! `w_v` and an output projection `w_o`. Joint attention is quadratic in
//! the token count and sits behind an explicit guard.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul, softmax_rows, Scalar, Tensor};
use crate::video::FeatureMap;

/// Token budget above which joint space-time attention refuses to run.
pub const DEFAULT_JOINT_TOKEN_GUARD: usize = 16384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lowercase")]
pub enum BaselineKind {
    Temporal,
    Spatial,
    Joint,
    Conv3d,
}

/// Plain attention weights: `w_q`/`w_k`/`w_v` map `d_f -> d_k`, `w_o`
/// maps the concatenated heads back to `d_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineAttnParams<S: Scalar> {
    pub d_f: usize,
    pub d_k: usize,
    pub heads: usize,
    pub w_q: Tensor<S>, // [d_f, d_k]
    pub w_k: Tensor<S>, // [d_f, d_k]
    pub w_v: Tensor<S>, // [d_f, d_k]
    pub w_o: Tensor<S>, // [d_k, d_f]
}

impl<S: Scalar> BaselineAttnParams<S> {
    pub fn init(seed: u64, d_f: usize, d_k: usize, heads: usize) -> Result<BaselineAttnParams<S>> {
        let rng = Rng::new(seed);
        let p = BaselineAttnParams {
            d_f,
            d_k,
            heads,
            w_q: rng.substream(0).normal(&[d_f, d_k], 0.02),
            w_k: rng.substream(1).normal(&[d_f, d_k], 0.02),
            w_v: rng.substream(2).normal(&[d_f, d_k], 0.02),
            w_o: rng.substream(3).normal(&[d_k, d_f], 0.02),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_f == 0 || self.d_k == 0 || self.heads == 0 {
            return Err(Error::Config("widths and head count must be positive".into()));
        }
        if self.d_k % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_k {} not divisible by {} heads",
                self.d_k, self.heads
            )));
        }
        for (name, t, want) in [
            ("w_q", &self.w_q, [self.d_f, self.d_k]),
            ("w_k", &self.w_k, [self.d_f, self.d_k]),
            ("w_v", &self.w_v, [self.d_f, self.d_k]),
            ("w_o", &self.w_o, [self.d_k, self.d_f]),
        ] {
            if t.shape() != want {
                return Err(Error::Dim(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        Ok(())
    }
}

/// Multi-head self-attention over one `[n, d_f]` token matrix. Returns
/// the `[n, d_f]` output; the `[heads, n, n]` attention maps are
/// materialized only on request since they dwarf everything else at
/// large token counts.
fn mha<S: Scalar>(
    x: &Tensor<S>,
    p: &BaselineAttnParams<S>,
    want_maps: bool,
) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
    let n = x.shape()[0];
    let d_h = p.d_k / p.heads;
    let q = matmul(x, &p.w_q)?;
    let k = matmul(x, &p.w_k)?;
    let v = matmul(x, &p.w_v)?;
    let scale = S::of(1.0 / (d_h as f64).sqrt());

    let slice = |m: &Tensor<S>, h: usize| {
        Tensor::from_fn(&[n, d_h], |idx| m.at(&[idx[0], h * d_h + idx[1]]))
    };

    let mut mixed = Tensor::zeros(&[n, p.d_k]);
    let mut maps = want_maps.then(|| Tensor::zeros(&[p.heads, n, n]));
    for h in 0..p.heads {
        let mut logits = matmul(&slice(&q, h), &slice(&k, h).transpose2d())?;
        for l in logits.data_mut() {
            *l = *l * scale;
        }
        let attn = softmax_rows(&logits)?;
        let head_out = matmul(&attn, &slice(&v, h))?;
        for i in 0..n {
            mixed.data_mut()[i * p.d_k + h * d_h..i * p.d_k + (h + 1) * d_h]
                .copy_from_slice(&head_out.data()[i * d_h..(i + 1) * d_h]);
        }
        if let Some(maps) = maps.as_mut() {
            maps.data_mut()[h * n * n..(h + 1) * n * n].copy_from_slice(attn.data());
        }
    }
    Ok((matmul(&mixed, &p.w_o)?, maps))
}

fn check_features<S: Scalar>(f: &FeatureMap<S>, p: &BaselineAttnParams<S>) -> Result<()> {
    p.validate()?;
    if f.channels() != p.d_f {
        return Err(Error::Dim(format!(
            "feature channels {} must equal d_f {}",
            f.channels(),
            p.d_f
        )));
    }
    Ok(())
}

fn temporal_core<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
    want_maps: bool,
) -> Result<(FeatureMap<S>, Option<Tensor<S>>)> {
    check_features(f, p)?;
    let (t_len, hw, d) = (f.frames(), f.tokens_per_frame(), f.channels());
    let mut out = f.tensor().clone();
    let mut maps = want_maps.then(|| Tensor::zeros(&[hw, p.heads, t_len, t_len]));
    for j in 0..hw {
        let seq = Tensor::from_fn(&[t_len, d], |idx| f.frame(idx[0])[j * d + idx[1]]);
        let (y, m) = mha(&seq, p, want_maps)?;
        for t in 0..t_len {
            let dst = (t * hw + j) * d;
            out.data_mut()[dst..dst + d].copy_from_slice(&y.data()[t * d..(t + 1) * d]);
        }
        if let (Some(maps), Some(m)) = (maps.as_mut(), m) {
            maps.data_mut()[j * p.heads * t_len * t_len..(j + 1) * p.heads * t_len * t_len]
                .copy_from_slice(m.data());
        }
    }
    Ok((f.like(out)?, maps))
}

/// Self-attention along time, independently at every grid position.
/// Returns maps `[HW, heads, T, T]`.
pub fn temporal_attention_with_maps<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
) -> Result<(FeatureMap<S>, Tensor<S>)> {
    temporal_core(f, p, true).map(|(out, m)| (out, m.expect("maps were requested")))
}

pub fn temporal_attention<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
) -> Result<FeatureMap<S>> {
    temporal_core(f, p, false).map(|(out, _)| out)
}

fn spatial_core<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
    want_maps: bool,
) -> Result<(FeatureMap<S>, Option<Tensor<S>>)> {
    check_features(f, p)?;
    let (t_len, hw, d) = (f.frames(), f.tokens_per_frame(), f.channels());
    let mut out = f.tensor().clone();
    let mut maps = want_maps.then(|| Tensor::zeros(&[t_len, p.heads, hw, hw]));
    for t in 0..t_len {
        let x = Tensor::new(vec![hw, d], f.frame(t).to_vec())?;
        let (y, m) = mha(&x, p, want_maps)?;
        out.data_mut()[t * hw * d..(t + 1) * hw * d].copy_from_slice(y.data());
        if let (Some(maps), Some(m)) = (maps.as_mut(), m) {
            maps.data_mut()[t * p.heads * hw * hw..(t + 1) * p.heads * hw * hw]
                .copy_from_slice(m.data());
        }
    }
    Ok((f.like(out)?, maps))
}

/// Self-attention over the grid, independently per frame. Returns maps
/// `[T, heads, HW, HW]`.
pub fn spatial_attention_with_maps<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
) -> Result<(FeatureMap<S>, Tensor<S>)> {
    spatial_core(f, p, true).map(|(out, m)| (out, m.expect("maps were requested")))
}

pub fn spatial_attention<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
) -> Result<FeatureMap<S>> {
    spatial_core(f, p, false).map(|(out, _)| out)
}

fn joint_core<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
    max_tokens: usize,
    want_maps: bool,
) -> Result<(FeatureMap<S>, Option<Tensor<S>>)> {
    check_features(f, p)?;
    let n = f.frames() * f.tokens_per_frame();
    if n > max_tokens {
        return Err(Error::Resource(format!(
            "joint attention over {n} tokens exceeds the budget of {max_tokens}"
        )));
    }
    let d = f.channels();
    let x = Tensor::new(vec![n, d], f.tensor().data().to_vec())?;
    let (y, m) = mha(&x, p, want_maps)?;
    let out = f.like(Tensor::new(f.tensor().shape().to_vec(), y.into_data())?)?;
    let maps = match m {
        Some(m) => Some(m.reshape(vec![1, p.heads, n, n])?),
        None => None,
    };
    Ok((out, maps))
}

/// Full self-attention over all `T*H*W` tokens, with an explicit token
/// budget since cost grows with the square of the count. Returns maps
/// `[1, heads, N, N]`.
pub fn joint_st_attention_with_maps<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
    max_tokens: usize,
) -> Result<(FeatureMap<S>, Tensor<S>)> {
    joint_core(f, p, max_tokens, true).map(|(out, m)| (out, m.expect("maps were requested")))
}

pub fn joint_st_attention<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
) -> Result<FeatureMap<S>> {
    joint_core(f, p, DEFAULT_JOINT_TOKEN_GUARD, false).map(|(out, _)| out)
}

/// `joint_st_attention` with a caller-chosen token budget.
pub fn joint_st_attention_guarded<S: Scalar>(
    f: &FeatureMap<S>,
    p: &BaselineAttnParams<S>,
    max_tokens: usize,
) -> Result<FeatureMap<S>> {
    joint_core(f, p, max_tokens, false).map(|(out, _)| out)
}

/// Direct 3-D convolution with zero padding and unchanged output shape.
/// Kernel layout `[k_t, k_h, k_w, d_in, d_out]` with all spatial extents
/// odd and `d_in == d_out == d_f`.
pub fn conv3d<S: Scalar>(f: &FeatureMap<S>, kernel: &Tensor<S>) -> Result<FeatureMap<S>> {
    if kernel.rank() != 5 {
        return Err(Error::Dim(format!(
            "kernel must be [k_t, k_h, k_w, d_in, d_out], got {:?}",
            kernel.shape()
        )));
    }
    let ks = kernel.shape();
    let (kt, kh, kw) = (ks[0], ks[1], ks[2]);
    for (axis, &e) in [kt, kh, kw].iter().enumerate() {
        if e % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel extent {e} on axis {axis} must be odd for same-padding"
            )));
        }
    }
    let d = f.channels();
    if ks[3] != d || ks[4] != d {
        return Err(Error::Dim(format!(
            "kernel channels [{} -> {}] must both equal feature width {d}",
            ks[3], ks[4]
        )));
    }
    let (t_len, h_len, w_len) = (f.frames(), f.height(), f.width());
    let (ct, ch, cw) = (kt / 2, kh / 2, kw / 2);
    let mut out = Tensor::zeros(f.tensor().shape());
    let src = f.tensor();
    for t in 0..t_len {
        for y in 0..h_len {
            for x in 0..w_len {
                for dt in 0..kt {
                    let st = t + dt;
                    if st < ct || st - ct >= t_len {
                        continue;
                    }
                    for dy in 0..kh {
                        let sy = y + dy;
                        if sy < ch || sy - ch >= h_len {
                            continue;
                        }
                        for dx in 0..kw {
                            let sx = x + dx;
                            if sx < cw || sx - cw >= w_len {
                                continue;
                            }
                            let src_off = src.offset(&[st - ct, sy - ch, sx - cw, 0]);
                            let k_off = kernel.offset(&[dt, dy, dx, 0, 0]);
                            let dst_off = out.offset(&[t, y, x, 0]);
                            for ci in 0..d {
                                let fv = src.data()[src_off + ci];
                                let krow = &kernel.data()[k_off + ci * d..k_off + (ci + 1) * d];
                                let orow = &mut out.data_mut()[dst_off..dst_off + d];
                                for co in 0..d {
                                    orow[co] = orow[co] + fv * krow[co];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    f.like(out)
}
