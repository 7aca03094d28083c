//! Scaling benchmark: times operator forward passes over a sweep of one
//! size axis, fits the log-log slope, and renders CSV.
//!
//! The point is the exponent, not the constant — a linear-cost operator
//! should show slope ≈ 1 against token count, a quadratic one ≈ 2.
//! Timing uses the median of several warm runs on the monotonic clock;
//! everything runs single-threaded so slopes are not confounded by
//! parallel speedups.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use crate::baselines::{
    conv3d, joint_st_attention_guarded, spatial_attention, temporal_attention,
    BaselineAttnParams, BaselineKind, DEFAULT_JOINT_TOKEN_GUARD,
};
use crate::error::{Error, Result};
use crate::layer::{init_layer, tracktention_forward, LayerConfig};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};
use crate::tracks::{generate_tracks, MotionField, QuerySpec, QueryStrategy};
use crate::tracktransformer::track_transformer_forward;
use crate::video::{FeatureMap, TrackTokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Grid token count per frame.
    Hw,
    /// Frame count.
    T,
    /// Track count.
    M,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Hw => "hw",
            SweepAxis::T => "t",
            SweepAxis::M => "m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "kebab-case")]
pub enum BenchTarget {
    /// Full track-attention layer forward.
    Tracktention,
    /// Per-track temporal encoder alone.
    TrackTransformer,
    /// Square matrix multiply (host calibration).
    Matmul,
    Temporal,
    Spatial,
    Joint,
    Conv3d,
}

impl BenchTarget {
    pub fn name(self) -> &'static str {
        match self {
            BenchTarget::Tracktention => "tracktention",
            BenchTarget::TrackTransformer => "track_transformer",
            BenchTarget::Matmul => "matmul",
            BenchTarget::Temporal => "temporal_attn",
            BenchTarget::Spatial => "spatial_attn",
            BenchTarget::Joint => "joint_st_attn",
            BenchTarget::Conv3d => "conv3d",
        }
    }

    pub fn from_baseline(kind: BaselineKind) -> BenchTarget {
        match kind {
            BaselineKind::Temporal => BenchTarget::Temporal,
            BaselineKind::Spatial => BenchTarget::Spatial,
            BaselineKind::Joint => BenchTarget::Joint,
            BaselineKind::Conv3d => BenchTarget::Conv3d,
        }
    }
}

/// Fixed dimensions for the axes that are not swept.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub frames: usize,
    pub tracks: usize,
    pub d_f: usize,
    pub heads: usize,
    pub seed: u64,
    /// Timed repetitions per point (after one warm-up run).
    pub runs: usize,
    /// Emit zero timings and no slope; output becomes byte-stable.
    pub no_timing: bool,
    pub joint_token_guard: usize,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            frames: 4,
            tracks: 16,
            d_f: 32,
            heads: 4,
            seed: 0,
            runs: 5,
            no_timing: false,
            joint_token_guard: DEFAULT_JOINT_TOKEN_GUARD,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub op: &'static str,
    pub axis: &'static str,
    pub size: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub m: usize,
    pub d_f: usize,
    /// `None` when the point was skipped (e.g. token guard tripped).
    pub median_s: Option<f64>,
    pub flops_est: u64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Fitted log-log slope of time vs size; `None` without timings.
    pub slope: Option<f64>,
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config(format!(
            "slope fit needs two matched series of at least 2 points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Numeric(
            "slope fit requires positive finite sizes and times".into(),
        ));
    }
    let n = xs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-12 {
        return Err(Error::Numeric("slope fit sizes are all equal".into()));
    }
    Ok((n * sxy - sx * sy) / det)
}

struct Dims {
    t: usize,
    h: usize,
    w: usize,
    m: usize,
    d_f: usize,
}

fn dims_for(axis: SweepAxis, size: usize, cfg: &BenchConfig) -> Dims {
    let mut d = Dims {
        t: cfg.frames,
        h: 1,
        w: 64,
        m: cfg.tracks,
        d_f: cfg.d_f,
    };
    match axis {
        // a 1 x size grid hits the requested token count exactly
        SweepAxis::Hw => d.w = size,
        SweepAxis::T => d.t = size,
        SweepAxis::M => d.m = size,
    }
    d
}

fn flops_estimate(target: BenchTarget, d: &Dims, layers: usize) -> u64 {
    let (t, hw, m, df) = (d.t as u64, (d.h * d.w) as u64, d.m as u64, d.d_f as u64);
    match target {
        BenchTarget::Matmul => {
            // size rides on the grid-width slot
            let n = (d.w) as u64;
            2 * n * n * n
        }
        BenchTarget::Tracktention => {
            let l = layers as u64;
            4 * t * m * hw * df + l * (2 * t * t * m * df + 12 * t * m * df * df)
                + 6 * t * (hw + m) * df * df
        }
        BenchTarget::TrackTransformer => {
            let l = layers as u64;
            l * m * (2 * t * t * df + 12 * t * df * df)
        }
        BenchTarget::Temporal => hw * (2 * t * t * df + 8 * t * df * df),
        BenchTarget::Spatial => t * (2 * hw * hw * df + 8 * hw * df * df),
        BenchTarget::Joint => {
            let n = t * hw;
            2 * n * n * df + 8 * n * df * df
        }
        BenchTarget::Conv3d => 2 * 27 * t * hw * df * df,
    }
}

fn layer_config(d: &Dims, cfg: &BenchConfig) -> LayerConfig {
    LayerConfig {
        d_f: d.d_f,
        d_k: d.d_f,
        heads: cfg.heads,
        t_max: d.t.max(256),
        seed: cfg.seed,
        ..LayerConfig::default()
    }
}

fn bench_features(d: &Dims, seed: u64) -> Result<FeatureMap<f64>> {
    FeatureMap::new(Rng::new(seed).substream(10).uniform(&[d.t, d.h, d.w, d.d_f], -1.0, 1.0))
}

fn bench_tracks(d: &Dims, seed: u64) -> Result<crate::tracks::TrackSet<f64>> {
    generate_tracks(
        &MotionField::identity(d.t, d.h, d.w),
        &QuerySpec {
            strategy: QueryStrategy::Constant,
            count: d.m,
            seed,
        },
    )
}

/// Builds the forward closure for one sweep point. `None` means the
/// point cannot run (guard tripped) and must be marked skipped.
#[allow(clippy::type_complexity)]
fn make_case(
    target: BenchTarget,
    d: &Dims,
    cfg: &BenchConfig,
) -> Result<Option<Box<dyn FnMut() -> Result<()>>>> {
    match target {
        BenchTarget::Matmul => {
            let n = d.w;
            let rng = Rng::new(cfg.seed);
            let a: Tensor<f64> = rng.substream(1).uniform(&[n, n], -1.0, 1.0);
            let b: Tensor<f64> = rng.substream(2).uniform(&[n, n], -1.0, 1.0);
            Ok(Some(Box::new(move || {
                black_box(matmul(black_box(&a), black_box(&b))?);
                Ok(())
            })))
        }
        BenchTarget::Tracktention => {
            let layer = init_layer::<f64>(&layer_config(d, cfg))?;
            let features = bench_features(d, cfg.seed)?;
            let tracks = bench_tracks(d, cfg.seed)?;
            Ok(Some(Box::new(move || {
                black_box(tracktention_forward(
                    black_box(&features),
                    black_box(&tracks),
                    &layer,
                )?);
                Ok(())
            })))
        }
        BenchTarget::TrackTransformer => {
            let layer = init_layer::<f64>(&layer_config(d, cfg))?;
            let tt = layer.tt;
            let tokens = TrackTokens::new(
                Rng::new(cfg.seed)
                    .substream(11)
                    .uniform(&[d.t, d.m, d.d_f], -1.0, 1.0),
            )?;
            Ok(Some(Box::new(move || {
                black_box(track_transformer_forward(black_box(&tokens), &tt)?);
                Ok(())
            })))
        }
        BenchTarget::Temporal | BenchTarget::Spatial | BenchTarget::Joint => {
            if target == BenchTarget::Joint && d.t * d.h * d.w > cfg.joint_token_guard {
                return Ok(None);
            }
            let params = BaselineAttnParams::<f64>::init(cfg.seed, d.d_f, d.d_f, cfg.heads)?;
            let features = bench_features(d, cfg.seed)?;
            let guard = cfg.joint_token_guard;
            Ok(Some(Box::new(move || {
                match target {
                    BenchTarget::Temporal => {
                        black_box(temporal_attention(black_box(&features), &params)?);
                    }
                    BenchTarget::Spatial => {
                        black_box(spatial_attention(black_box(&features), &params)?);
                    }
                    BenchTarget::Joint => {
                        black_box(joint_st_attention_guarded(
                            black_box(&features),
                            &params,
                            guard,
                        )?);
                    }
                    _ => unreachable!(),
                }
                Ok(())
            })))
        }
        BenchTarget::Conv3d => {
            let features = bench_features(d, cfg.seed)?;
            let kernel: Tensor<f64> = Rng::new(cfg.seed)
                .substream(12)
                .uniform(&[3, 3, 3, d.d_f, d.d_f], -0.1, 0.1);
            Ok(Some(Box::new(move || {
                black_box(conv3d(black_box(&features), black_box(&kernel))?);
                Ok(())
            })))
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times `target` at each sweep size and fits the log-log slope over
/// the points that actually ran.
pub fn bench_scaling(
    axis: SweepAxis,
    target: BenchTarget,
    sizes: &[usize],
    cfg: &BenchConfig,
) -> Result<BenchResult> {
    if sizes.len() < 4 {
        return Err(Error::Config(format!(
            "sweep needs at least 4 sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep sizes must be strictly ascending".into()));
    }
    if sizes[0] == 0 {
        return Err(Error::Config("sweep sizes must be positive".into()));
    }
    if cfg.runs < 5 {
        return Err(Error::Config(format!(
            "timing needs at least 5 runs per point, got {}",
            cfg.runs
        )));
    }

    let tt_layers = LayerConfig::default().tt_layers;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let d = dims_for(axis, size, cfg);
        let flops = flops_estimate(target, &d, tt_layers);
        let case = make_case(target, &d, cfg)?;
        let median_s = match case {
            None => None,
            Some(_) if cfg.no_timing => Some(0.0),
            Some(mut run) => {
                run()?; // warm-up: faults surface here, caches fill
                let mut times = Vec::with_capacity(cfg.runs);
                for _ in 0..cfg.runs {
                    let start = Instant::now();
                    run()?;
                    times.push(start.elapsed().as_secs_f64());
                }
                Some(median(times))
            }
        };
        rows.push(BenchRow {
            op: target.name(),
            axis: axis.name(),
            size,
            t: d.t,
            h: d.h,
            w: d.w,
            m: d.m,
            d_f: d.d_f,
            median_s,
            flops_est: flops,
        });
    }

    let slope = if cfg.no_timing {
        None
    } else {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.median_s.map(|s| (r.size as f64, s.max(1e-9))))
            .collect();
        if pts.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            Some(fit_loglog_slope(&xs, &ys)?)
        } else {
            None
        }
    };
    Ok(BenchResult { rows, slope })
}

/// Renders the result as CSV: fixed header, one row per point, and a
/// trailing `# slope=` comment.
pub fn result_to_csv(result: &BenchResult) -> String {
    let mut out = String::from("op,axis,size,T,H,W,M,d_f,median_s,flops_est\n");
    for r in &result.rows {
        let time = match r.median_s {
            None => "skipped".to_string(),
            Some(s) => format!("{s:.6}"),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.op, r.axis, r.size, r.t, r.h, r.w, r.m, r.d_f, time, r.flops_est
        )
        .unwrap();
    }
    match result.slope {
        Some(s) => writeln!(out, "# slope={s:.4}").unwrap(),
        None => out.push_str("# slope=na\n"),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit_recovers_exact_power_laws() {
        let xs = [64.0, 128.0, 256.0, 512.0];
        for k in [1.0, 2.0, 3.0] {
            let ys: Vec<f64> = xs.iter().map(|&x: &f64| 0.37 * x.powf(k)).collect();
            let slope = fit_loglog_slope(&xs, &ys).unwrap();
            assert!((slope - k).abs() < 1e-9, "k={k} got {slope}");
        }
    }

    #[test]
    fn slope_fit_ignores_time_units() {
        let xs = [10.0, 20.0, 40.0, 80.0];
        let ys = [0.3, 1.1, 4.6, 17.9];
        let s1 = fit_loglog_slope(&xs, &ys).unwrap();
        let scaled: Vec<f64> = ys.iter().map(|y| y * 1000.0).collect();
        let s2 = fit_loglog_slope(&xs, &scaled).unwrap();
        assert!((s1 - s2).abs() < 1e-9);
    }

    #[test]
    fn slope_fit_rejects_bad_series() {
        assert!(fit_loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(fit_loglog_slope(&[2.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sweep_validates_sizes() {
        let cfg = BenchConfig::default();
        let err = bench_scaling(SweepAxis::Hw, BenchTarget::Matmul, &[8, 16, 32], &cfg);
        assert!(matches!(err, Err(Error::Config(_))));
        let err = bench_scaling(SweepAxis::Hw, BenchTarget::Matmul, &[8, 16, 16, 32], &cfg);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn no_timing_output_is_byte_stable() {
        let cfg = BenchConfig {
            no_timing: true,
            ..BenchConfig::default()
        };
        let sizes = [16, 32, 64, 128];
        let a = result_to_csv(&bench_scaling(SweepAxis::Hw, BenchTarget::Temporal, &sizes, &cfg).unwrap());
        let b = result_to_csv(&bench_scaling(SweepAxis::Hw, BenchTarget::Temporal, &sizes, &cfg).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("op,axis,size,T,H,W,M,d_f,median_s,flops_est\n"));
        assert!(a.ends_with("# slope=na\n"));
        assert!(a.contains("temporal_attn,hw,16,4,1,16,16,32,0.000000,"));
    }

    #[test]
    fn joint_guard_marks_rows_skipped() {
        let cfg = BenchConfig {
            no_timing: true,
            joint_token_guard: 256,
            ..BenchConfig::default()
        };
        // T=4, so HW=128 -> 512 tokens exceeds the 256-token guard
        let r = bench_scaling(SweepAxis::Hw, BenchTarget::Joint, &[16, 32, 64, 128], &cfg).unwrap();
        assert!(r.rows[0].median_s.is_some());
        assert!(r.rows[3].median_s.is_none());
        let csv = result_to_csv(&r);
        assert!(csv.contains("joint_st_attn,hw,128,4,1,128,16,32,skipped,"));
    }

    #[test]
    fn matmul_slope_is_cubic_on_this_host() {
        let cfg = BenchConfig::default();
        let r = bench_scaling(SweepAxis::Hw, BenchTarget::Matmul, &[64, 96, 128, 192], &cfg).unwrap();
        let slope = r.slope.unwrap();
        assert!((2.5..=3.3).contains(&slope), "matmul slope {slope}");
    }
}
