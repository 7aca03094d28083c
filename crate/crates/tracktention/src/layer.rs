//! The full layer — sample onto tracks, transform along time, splat back,
//! add residually — plus initialization, parameter accounting, bundle
//! serialization, and a toy per-frame backbone that shows how the layer
//! drops into an existing image model.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::ten1;
use crate::tensor::{add, Scalar, Tensor};
use crate::trackatt::{
    attentional_sampling, attentional_splatting, embed_track_points, TracktentionParams,
};
use crate::tracks::TrackSet;
use crate::tracktransformer::{
    encoder_layer_forward, time_pos_encoding, track_transformer_forward, EncoderLayerParams,
    TrackTransformerParams,
};
use crate::video::{FeatureMap, TrackTokens};
use serde::{Deserialize, Serialize};
use std::path::Path;

const INIT_STD: f64 = 0.02;

/// Layer hyperparameters, loadable from a JSON config file. Every field
/// has a desk-scale default, so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    pub d_f: usize,
    pub d_k: usize,
    pub heads: usize,
    pub sigma: f64,
    pub rope_base: f64,
    pub rope_on_values: bool,
    /// Temporal-encoder depth (1–3).
    pub tt_layers: usize,
    /// Temporal-encoder head count.
    pub tt_heads: usize,
    /// Longest supported sequence (size of the time-encoding table).
    pub t_max: usize,
    /// Backbone block indices after which the layer is inserted.
    pub insert_after: Vec<usize>,
    /// Reuse one parameter bundle at every insertion point.
    pub share_tracktention: bool,
    pub seed: u64,
}

impl Default for LayerConfig {
    fn default() -> LayerConfig {
        LayerConfig {
            d_f: 64,
            d_k: 64,
            heads: 4,
            sigma: 0.5,
            rope_base: 100.0,
            rope_on_values: true,
            tt_layers: 2,
            tt_heads: 4,
            t_max: 256,
            insert_after: vec![0, 1],
            share_tracktention: true,
            seed: 0,
        }
    }
}

impl LayerConfig {
    pub fn from_json(src: &str) -> Result<LayerConfig> {
        let cfg: LayerConfig = serde_json::from_str(src)
            .map_err(|e| Error::parse(0, format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<LayerConfig> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&src)
    }
}

/// The composed layer: cross-attention stage plus temporal encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TracktentionLayer<S: Scalar> {
    pub att: TracktentionParams<S>,
    pub tt: TrackTransformerParams<S>,
}

impl<S: Scalar> TracktentionLayer<S> {
    pub fn validate(&self) -> Result<()> {
        self.att.validate()?;
        self.tt.validate()?;
        if self.att.d_f != self.tt.d_f {
            return Err(Error::Dim(format!(
                "attention width {} and temporal-encoder width {} disagree",
                self.att.d_f, self.tt.d_f
            )));
        }
        Ok(())
    }

    pub fn cast<T2: Scalar>(&self) -> TracktentionLayer<T2> {
        TracktentionLayer { att: self.att.cast(), tt: self.tt.cast() }
    }
}

fn init_encoder_layer<S: Scalar>(d: usize, rng: &Rng) -> EncoderLayerParams<S> {
    let sub = |tag: u64, shape: &[usize]| rng.substream(tag).normal(shape, INIT_STD);
    EncoderLayerParams {
        w_q: sub(0, &[d, d]),
        w_k: sub(1, &[d, d]),
        w_v: sub(2, &[d, d]),
        w_o: sub(3, &[d, d]),
        ffn_w1: sub(4, &[d, 4 * d]),
        ffn_w2: sub(5, &[4 * d, d]),
        ln1_gain: Tensor::filled(&[d], S::one()),
        ln1_bias: Tensor::zeros(&[d]),
        ln2_gain: Tensor::filled(&[d], S::one()),
        ln2_bias: Tensor::zeros(&[d]),
    }
}

/// Builds a layer from the config: weights are normal with std 0.02 from
/// the config seed, norms start at gain 1, and the output projection
/// starts at zero — so a fresh layer is the identity.
pub fn init_layer<S: Scalar>(config: &LayerConfig) -> Result<TracktentionLayer<S>> {
    let rng = Rng::new(config.seed);
    let (d_f, d_k) = (config.d_f, config.d_k);
    let att = TracktentionParams {
        d_f,
        d_k,
        heads: config.heads,
        w_q: rng.substream(1).normal(&[d_f, d_k], INIT_STD),
        w_k: rng.substream(2).normal(&[d_f, d_k], INIT_STD),
        w_out: Tensor::zeros(&[d_f, d_f]),
        embed_proj: rng.substream(3).normal(&[d_f, d_f], INIT_STD),
        q_norm_gain: Tensor::filled(&[d_k], S::one()),
        k_norm_gain: Tensor::filled(&[d_k], S::one()),
        sigma: S::of(config.sigma),
        rope_base: config.rope_base,
        rope_on_values: config.rope_on_values,
    };
    let layers = (0..config.tt_layers)
        .map(|i| init_encoder_layer(d_f, &rng.substream(16 + i as u64)))
        .collect();
    let tt = TrackTransformerParams {
        d_f,
        heads: config.tt_heads,
        layers,
        time_pe: time_pos_encoding(config.t_max, d_f)?,
    };
    let layer = TracktentionLayer { att, tt };
    layer.validate()?;
    Ok(layer)
}

/// `F + splat(transform(sample(F)))`: the residual track-guided update.
pub fn tracktention_forward<S: Scalar>(
    features: &FeatureMap<S>,
    tracks: &TrackSet<S>,
    layer: &TracktentionLayer<S>,
) -> Result<FeatureMap<S>> {
    layer.validate()?;
    let tokens = embed_track_points(tracks, &layer.att)?;
    let (sampled, _) = attentional_sampling(features, &tokens, tracks, &layer.att)?;
    let updated = track_transformer_forward(&sampled, &layer.tt)?;
    let (delta, _) = attentional_splatting(
        &updated,
        tracks,
        (features.height(), features.width()),
        features.origin(),
        &layer.att,
    )?;
    features.like(add(features.tensor(), delta.tensor())?)
}

/// Sampled-then-transformed track tokens, before splatting — the probe
/// point for temporal behavior of the middle stage.
pub fn sample_and_transform<S: Scalar>(
    features: &FeatureMap<S>,
    tracks: &TrackSet<S>,
    layer: &TracktentionLayer<S>,
) -> Result<(TrackTokens<S>, TrackTokens<S>)> {
    layer.validate()?;
    let tokens = embed_track_points(tracks, &layer.att)?;
    let (sampled, _) = attentional_sampling(features, &tokens, tracks, &layer.att)?;
    let updated = track_transformer_forward(&sampled, &layer.tt)?;
    Ok((sampled, updated))
}

// ── toy backbone ────────────────────────────────────────────────────────

/// A stack of per-frame spatial self-attention blocks with the layer
/// inserted after chosen blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackboneConfig {
    pub num_blocks: usize,
    pub layer: LayerConfig,
}

impl ToyBackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::Config("backbone needs at least one block".into()));
        }
        for &i in &self.layer.insert_after {
            if i >= self.num_blocks {
                return Err(Error::Config(format!(
                    "insertion index {i} outside 0..{}",
                    self.num_blocks
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackboneParams<S: Scalar> {
    pub blocks: Vec<EncoderLayerParams<S>>,
    pub heads: usize,
    /// One bundle when shared, else one per insertion point (in
    /// ascending insertion order).
    pub tracktention: Vec<TracktentionLayer<S>>,
}

pub fn init_backbone<S: Scalar>(config: &ToyBackboneConfig) -> Result<ToyBackboneParams<S>> {
    config.validate()?;
    let rng = Rng::new(config.layer.seed ^ 0xb10c);
    let blocks = (0..config.num_blocks)
        .map(|i| init_encoder_layer(config.layer.d_f, &rng.substream(i as u64)))
        .collect();
    let copies = if config.layer.share_tracktention {
        1
    } else {
        config.layer.insert_after.len()
    };
    let tracktention = (0..copies)
        .map(|i| {
            let mut cfg = config.layer.clone();
            cfg.seed = config.layer.seed.wrapping_add(i as u64);
            init_layer(&cfg)
        })
        .collect::<Result<_>>()?;
    Ok(ToyBackboneParams { blocks, heads: config.layer.tt_heads, tracktention })
}

/// Runs the backbone: each block applies per-frame spatial self-attention
/// (frames are independent), then the layer is applied at every insertion
/// index.
pub fn toy_backbone_forward<S: Scalar>(
    features: &FeatureMap<S>,
    tracks: &TrackSet<S>,
    config: &ToyBackboneConfig,
    params: &ToyBackboneParams<S>,
) -> Result<FeatureMap<S>> {
    config.validate()?;
    if params.blocks.len() != config.num_blocks {
        return Err(Error::Dim(format!(
            "{} block parameter sets for {} blocks",
            params.blocks.len(),
            config.num_blocks
        )));
    }
    let mut sorted_insertions = config.layer.insert_after.clone();
    sorted_insertions.sort_unstable();
    sorted_insertions.dedup();

    let (t_len, hw, d) = (features.frames(), features.tokens_per_frame(), features.channels());
    let mut current = features.clone();
    for (b, block) in params.blocks.iter().enumerate() {
        let mut out = current.tensor().clone();
        for t in 0..t_len {
            let x = Tensor::new(vec![hw, d], current.frame(t).to_vec())?;
            let y = encoder_layer_forward(&x, block, params.heads)?;
            out.data_mut()[t * hw * d..(t + 1) * hw * d].copy_from_slice(y.data());
        }
        current = current.like(out)?;
        if let Some(pos) = sorted_insertions.iter().position(|&i| i == b) {
            let bundle = if config.layer.share_tracktention {
                &params.tracktention[0]
            } else {
                &params.tracktention[pos]
            };
            current = tracktention_forward(&current, tracks, bundle)?;
        }
    }
    Ok(current)
}

// ── parameter accounting ────────────────────────────────────────────────

/// Learnable-scalar counts, per named sub-module and in total. The time
/// encoding table is fixed, not learned, and is not counted.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCount {
    pub entries: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCount {
    fn from_entries(entries: Vec<(String, usize)>) -> ParamCount {
        let total = entries.iter().map(|(_, n)| n).sum();
        ParamCount { entries, total }
    }
}

fn encoder_layer_count<S: Scalar>(layer: &EncoderLayerParams<S>) -> usize {
    [
        &layer.w_q,
        &layer.w_k,
        &layer.w_v,
        &layer.w_o,
        &layer.ffn_w1,
        &layer.ffn_w2,
        &layer.ln1_gain,
        &layer.ln1_bias,
        &layer.ln2_gain,
        &layer.ln2_bias,
    ]
    .iter()
    .map(|t| t.numel())
    .sum()
}

pub fn layer_param_count<S: Scalar>(layer: &TracktentionLayer<S>) -> ParamCount {
    let att = [
        &layer.att.w_q,
        &layer.att.w_k,
        &layer.att.w_out,
        &layer.att.embed_proj,
        &layer.att.q_norm_gain,
        &layer.att.k_norm_gain,
    ]
    .iter()
    .map(|t| t.numel())
    .sum();
    let tt = layer.tt.layers.iter().map(encoder_layer_count).sum();
    ParamCount::from_entries(vec![
        ("attention".to_string(), att),
        ("temporal_encoder".to_string(), tt),
    ])
}

pub fn backbone_param_count<S: Scalar>(params: &ToyBackboneParams<S>) -> ParamCount {
    let blocks = params.blocks.iter().map(encoder_layer_count).sum();
    let trackt = params.tracktention.iter().map(|l| layer_param_count(l).total).sum();
    ParamCount::from_entries(vec![
        ("backbone_blocks".to_string(), blocks),
        ("tracktention".to_string(), trackt),
    ])
}

// ── parameter bundles on disk ───────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct BundleTensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    d_f: usize,
    d_k: usize,
    heads: usize,
    sigma: f64,
    rope_base: f64,
    rope_on_values: bool,
    tt_heads: usize,
    tensors: Vec<BundleTensorEntry>,
}

fn bundle_tensors<'a, S: Scalar>(
    layer: &'a TracktentionLayer<S>,
) -> Vec<(String, &'a Tensor<S>)> {
    let mut out: Vec<(String, &Tensor<S>)> = vec![
        ("att.w_q".into(), &layer.att.w_q),
        ("att.w_k".into(), &layer.att.w_k),
        ("att.w_out".into(), &layer.att.w_out),
        ("att.embed_proj".into(), &layer.att.embed_proj),
        ("att.q_norm_gain".into(), &layer.att.q_norm_gain),
        ("att.k_norm_gain".into(), &layer.att.k_norm_gain),
        ("tt.time_pe".into(), &layer.tt.time_pe),
    ];
    for (i, l) in layer.tt.layers.iter().enumerate() {
        out.push((format!("tt.{i}.w_q"), &l.w_q));
        out.push((format!("tt.{i}.w_k"), &l.w_k));
        out.push((format!("tt.{i}.w_v"), &l.w_v));
        out.push((format!("tt.{i}.w_o"), &l.w_o));
        out.push((format!("tt.{i}.ffn_w1"), &l.ffn_w1));
        out.push((format!("tt.{i}.ffn_w2"), &l.ffn_w2));
        out.push((format!("tt.{i}.ln1_gain"), &l.ln1_gain));
        out.push((format!("tt.{i}.ln1_bias"), &l.ln1_bias));
        out.push((format!("tt.{i}.ln2_gain"), &l.ln2_gain));
        out.push((format!("tt.{i}.ln2_bias"), &l.ln2_bias));
    }
    out
}

/// Writes the layer as a directory: one TEN1 file per tensor plus a
/// `manifest.json` with names, shapes, and hyperparameters.
pub fn save_layer<S: Scalar>(dir: &Path, layer: &TracktentionLayer<S>) -> Result<()> {
    layer.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = bundle_tensors(layer);
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, tensor) in &tensors {
        let file = format!("{name}.ten1");
        ten1::write_file(&dir.join(&file), *tensor)?;
        entries.push(BundleTensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            file,
        });
    }
    let manifest = BundleManifest {
        d_f: layer.att.d_f,
        d_k: layer.att.d_k,
        heads: layer.att.heads,
        sigma: layer.att.sigma.to_f64(),
        rope_base: layer.att.rope_base,
        rope_on_values: layer.att.rope_on_values,
        tt_heads: layer.tt.heads,
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    std::fs::write(dir.join("manifest.json"), text).map_err(|e| Error::io(dir, e))
}

/// Reads a bundle directory back into a layer of scalar type `S`
/// (converting element types if the files were written differently).
pub fn load_layer<S: Scalar>(dir: &Path) -> Result<TracktentionLayer<S>> {
    let manifest_path = dir.join("manifest.json");
    let src = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: BundleManifest =
        serde_json::from_str(&src).map_err(|e| Error::parse(0, format!("manifest: {e}")))?;

    let mut by_name = std::collections::BTreeMap::new();
    for entry in &manifest.tensors {
        let t = ten1::read_file(&dir.join(&entry.file))?.into_tensor::<S>();
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Dim(format!(
                "bundle tensor {} has shape {:?} on disk but {:?} in the manifest",
                entry.name,
                t.shape(),
                entry.shape
            )));
        }
        by_name.insert(entry.name.clone(), t);
    }
    fn take<S: Scalar>(
        map: &mut std::collections::BTreeMap<String, Tensor<S>>,
        name: &str,
    ) -> Result<Tensor<S>> {
        map.remove(name)
            .ok_or_else(|| Error::Config(format!("bundle is missing tensor {name}")))
    }

    let att = TracktentionParams {
        d_f: manifest.d_f,
        d_k: manifest.d_k,
        heads: manifest.heads,
        w_q: take(&mut by_name, "att.w_q")?,
        w_k: take(&mut by_name, "att.w_k")?,
        w_out: take(&mut by_name, "att.w_out")?,
        embed_proj: take(&mut by_name, "att.embed_proj")?,
        q_norm_gain: take(&mut by_name, "att.q_norm_gain")?,
        k_norm_gain: take(&mut by_name, "att.k_norm_gain")?,
        sigma: S::of(manifest.sigma),
        rope_base: manifest.rope_base,
        rope_on_values: manifest.rope_on_values,
    };
    let time_pe = take(&mut by_name, "tt.time_pe")?;
    let mut layers = Vec::new();
    for i in 0.. {
        if !by_name.contains_key(&format!("tt.{i}.w_q")) {
            break;
        }
        layers.push(EncoderLayerParams {
            w_q: take(&mut by_name, &format!("tt.{i}.w_q"))?,
            w_k: take(&mut by_name, &format!("tt.{i}.w_k"))?,
            w_v: take(&mut by_name, &format!("tt.{i}.w_v"))?,
            w_o: take(&mut by_name, &format!("tt.{i}.w_o"))?,
            ffn_w1: take(&mut by_name, &format!("tt.{i}.ffn_w1"))?,
            ffn_w2: take(&mut by_name, &format!("tt.{i}.ffn_w2"))?,
            ln1_gain: take(&mut by_name, &format!("tt.{i}.ln1_gain"))?,
            ln1_bias: take(&mut by_name, &format!("tt.{i}.ln1_bias"))?,
            ln2_gain: take(&mut by_name, &format!("tt.{i}.ln2_gain"))?,
            ln2_bias: take(&mut by_name, &format!("tt.{i}.ln2_bias"))?,
        });
    }
    let tt = TrackTransformerParams { d_f: manifest.d_f, heads: manifest.tt_heads, layers, time_pe };
    let layer = TracktentionLayer { att, tt };
    layer.validate()?;
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tracks::{generate_tracks, MotionField, QuerySpec, QueryStrategy};

    fn small_config() -> LayerConfig {
        LayerConfig {
            d_f: 8,
            d_k: 8,
            heads: 2,
            tt_layers: 2,
            tt_heads: 2,
            t_max: 16,
            seed: 5,
            ..LayerConfig::default()
        }
    }

    fn scene(t_len: usize, h: usize, w: usize, m: usize, d: usize, seed: u64) -> (FeatureMap<f32>, TrackSet<f32>) {
        let mut rng = Rng::new(seed);
        let features = FeatureMap::new(rng.normal(&[t_len, h, w, d], 1.0)).unwrap();
        let field = MotionField::identity(t_len, h, w);
        let tracks = generate_tracks(
            &field,
            &QuerySpec { strategy: QueryStrategy::RandomT0, count: m, seed },
        )
        .unwrap()
        .cast::<f32>();
        (features, tracks)
    }

    #[test]
    fn fresh_layer_is_the_identity_bitwise() {
        let layer: TracktentionLayer<f32> = init_layer(&small_config()).unwrap();
        let (features, tracks) = scene(4, 5, 5, 6, 8, 11);
        let out = tracktention_forward(&features, &tracks, &layer).unwrap();
        assert_eq!(out.tensor().data(), features.tensor().data());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a: TracktentionLayer<f32> = init_layer(&small_config()).unwrap();
        let b: TracktentionLayer<f32> = init_layer(&small_config()).unwrap();
        assert_eq!(a, b);
        let mut other = small_config();
        other.seed = 6;
        let c: TracktentionLayer<f32> = init_layer(&other).unwrap();
        assert_ne!(a.att.w_q, c.att.w_q);
    }

    #[test]
    fn forward_is_reproducible() {
        let mut cfg = small_config();
        cfg.seed = 21;
        let mut layer: TracktentionLayer<f32> = init_layer(&cfg).unwrap();
        let mut rng = Rng::new(9);
        layer.att.w_out = rng.normal(&[8, 8], 0.1);
        let (features, tracks) = scene(3, 4, 4, 5, 8, 12);
        let a = tracktention_forward(&features, &tracks, &layer).unwrap();
        let b = tracktention_forward(&features, &tracks, &layer).unwrap();
        assert_eq!(a.tensor().data(), b.tensor().data());
        assert_ne!(a.tensor().data(), features.tensor().data());
    }

    #[test]
    fn constant_input_gives_time_constant_sampled_tokens() {
        // frame-local sampling: identical frames + identical track rows
        // produce identical sampled rows at every t
        let mut cfg = small_config();
        cfg.seed = 31;
        let layer: TracktentionLayer<f32> = init_layer(&cfg).unwrap();
        let mut rng = Rng::new(14);
        let one_frame: Tensor<f32> = rng.normal(&[1, 4, 4, 8], 1.0);
        let stacked = Tensor::from_fn(&[5, 4, 4, 8], |idx| {
            one_frame.at(&[0, idx[1], idx[2], idx[3]])
        });
        let features = FeatureMap::new(stacked).unwrap();
        let field = MotionField::identity(5, 4, 4);
        let tracks = generate_tracks(
            &field,
            &QuerySpec { strategy: QueryStrategy::Constant, count: 4, seed: 3 },
        )
        .unwrap()
        .cast::<f32>();
        let (sampled, _) = sample_and_transform(&features, &tracks, &layer).unwrap();
        for t in 1..5 {
            for m in 0..4 {
                assert_eq!(sampled.token(t, m), sampled.token(0, m));
            }
        }
    }

    #[test]
    fn frame_permutation_permutes_sampled_tokens() {
        let mut cfg = small_config();
        cfg.seed = 41;
        let layer: TracktentionLayer<f32> = init_layer(&cfg).unwrap();
        let (features, tracks) = scene(5, 4, 4, 3, 8, 15);
        let (sampled, _) = sample_and_transform(&features, &tracks, &layer).unwrap();

        let rot = |t: usize| (t + 2) % 5; // cyclic shift
        let permuted_feat = Tensor::from_fn(&[5, 4, 4, 8], |idx| {
            features.tensor().at(&[rot(idx[0]), idx[1], idx[2], idx[3]])
        });
        let permuted_pts = Tensor::from_fn(&[5, 3, 2], |idx| {
            tracks.points().at(&[rot(idx[0]), idx[1], idx[2]])
        });
        let pfeatures = FeatureMap::new(permuted_feat).unwrap();
        let ptracks = TrackSet::new(permuted_pts, None).unwrap();
        let (psampled, _) = sample_and_transform(&pfeatures, &ptracks, &layer).unwrap();
        for t in 0..5 {
            for m in 0..3 {
                assert_eq!(psampled.token(t, m), sampled.token(rot(t), m));
            }
        }
    }

    #[test]
    fn backbone_without_insertions_matches_zero_init_insertions() {
        for (h, w) in [(3usize, 3usize), (4, 5), (6, 4)] {
            let mut cfg = ToyBackboneConfig { num_blocks: 2, layer: small_config() };
            cfg.layer.insert_after = vec![];
            let params: ToyBackboneParams<f32> = init_backbone(&cfg).unwrap();
            let (features, tracks) = scene(3, h, w, 4, 8, 99);
            let plain = toy_backbone_forward(&features, &tracks, &cfg, &params).unwrap();

            let mut with = cfg.clone();
            with.layer.insert_after = vec![0, 1];
            let wparams: ToyBackboneParams<f32> = init_backbone(&with).unwrap();
            let inserted = toy_backbone_forward(&features, &tracks, &with, &wparams).unwrap();
            assert_eq!(plain.tensor().data(), inserted.tensor().data());
        }
    }

    #[test]
    fn sharing_keeps_parameter_count_flat() {
        let mut cfg = ToyBackboneConfig { num_blocks: 6, layer: small_config() };
        cfg.layer.insert_after = vec![0, 1, 2, 3, 4, 5];
        cfg.layer.share_tracktention = true;
        let shared: ToyBackboneParams<f32> = init_backbone(&cfg).unwrap();
        cfg.layer.share_tracktention = false;
        let unshared: ToyBackboneParams<f32> = init_backbone(&cfg).unwrap();

        let shared_tr = backbone_param_count(&shared).entries[1].1;
        let unshared_tr = backbone_param_count(&unshared).entries[1].1;
        assert_eq!(unshared_tr, 6 * shared_tr);

        // sharing also means insertion count does not change the total
        let mut one = ToyBackboneConfig { num_blocks: 6, layer: small_config() };
        one.layer.insert_after = vec![2];
        one.layer.share_tracktention = true;
        let one_params: ToyBackboneParams<f32> = init_backbone(&one).unwrap();
        assert_eq!(backbone_param_count(&one_params).entries[1].1, shared_tr);
    }

    #[test]
    fn param_count_matches_hand_formula() {
        let mut cfg = small_config();
        cfg.heads = 1;
        cfg.tt_layers = 1;
        cfg.tt_heads = 1;
        let layer: TracktentionLayer<f32> = init_layer(&cfg).unwrap();
        let count = layer_param_count(&layer);
        // attention: w_q 64 + w_k 64 + w_out 64 + embed_proj 64 + gains 8+8
        assert_eq!(count.entries[0], ("attention".to_string(), 272));
        // encoder layer: 4 mats of 64 + ffn 8*32 + 32*8 + 4 norm vectors of 8
        assert_eq!(count.entries[1], ("temporal_encoder".to_string(), 4 * 64 + 512 + 32));
        assert_eq!(count.total, 272 + 800);

        let mut wider = cfg.clone();
        wider.d_f = 16;
        wider.d_k = 16;
        let big: TracktentionLayer<f32> = init_layer(&wider).unwrap();
        assert!(layer_param_count(&big).total > count.total);
    }

    #[test]
    fn bundle_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.seed = 77;
        let mut layer: TracktentionLayer<f32> = init_layer(&cfg).unwrap();
        let mut rng = Rng::new(8);
        layer.att.w_out = rng.normal(&[8, 8], 0.1);
        save_layer(dir.path(), &layer).unwrap();
        let back: TracktentionLayer<f32> = load_layer(dir.path()).unwrap();
        assert_eq!(back, layer);
    }

    #[test]
    fn bundle_missing_tensor_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let layer: TracktentionLayer<f32> = init_layer(&small_config()).unwrap();
        save_layer(dir.path(), &layer).unwrap();
        std::fs::remove_file(dir.path().join("att.w_k.ten1")).unwrap();
        assert!(load_layer::<f32>(dir.path()).is_err());
    }

    #[test]
    fn config_json_defaults_and_unknown_keys() {
        let cfg = LayerConfig::from_json("{}").unwrap();
        assert_eq!(cfg, LayerConfig::default());
        let cfg = LayerConfig::from_json("{\"d_f\": 32, \"seed\": 9}").unwrap();
        assert_eq!(cfg.d_f, 32);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.heads, 4);
        assert!(LayerConfig::from_json("{\"d_ff\": 32}").is_err());
    }

    #[test]
    fn insert_after_bounds_checked() {
        let mut cfg = ToyBackboneConfig { num_blocks: 2, layer: small_config() };
        cfg.layer.insert_after = vec![5];
        assert!(matches!(init_backbone::<f32>(&cfg), Err(Error::Config(_))));
    }
}
