//! Point tracks and everything needed to make them without a real tracker:
//! query sampling strategies, synthetic ground-truth motion fields, spatial
//! coverage measurement, and a JSON interchange format.
//!
//! Coordinates are in feature-grid units: cell centers sit at integer
//! coordinates with the origin at the top-left, `x` along width and `y`
//! along height. Points may leave the grid; downstream attention handles
//! off-grid points by distance decay, so nothing is clamped here.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// `M` point trajectories over `T` frames, with an optional per-point
/// visibility mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet<S: Scalar> {
    points: Tensor<S>,          // [T, M, 2]
    visible: Option<Vec<bool>>, // [T * M], row-major
}

impl<S: Scalar> TrackSet<S> {
    pub fn new(points: Tensor<S>, visible: Option<Vec<bool>>) -> Result<TrackSet<S>> {
        if points.rank() != 3 || points.shape()[2] != 2 {
            return Err(Error::Dim(format!(
                "track points must be [frames, tracks, 2], got shape {:?}",
                points.shape()
            )));
        }
        if !points.is_finite() {
            return Err(Error::Numeric("track points contain non-finite coordinates".into()));
        }
        let (t, m) = (points.shape()[0], points.shape()[1]);
        if let Some(v) = &visible {
            if v.len() != t * m {
                return Err(Error::Dim(format!(
                    "visibility mask has {} entries, expected {} ({} frames x {} tracks)",
                    v.len(),
                    t * m,
                    t,
                    m
                )));
            }
        }
        Ok(TrackSet { points, visible })
    }

    pub fn frames(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn track_count(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn points(&self) -> &Tensor<S> {
        &self.points
    }

    pub fn visible(&self) -> Option<&[bool]> {
        self.visible.as_deref()
    }

    pub fn point(&self, t: usize, m: usize) -> (S, S) {
        let off = (t * self.track_count() + m) * 2;
        (self.points.data()[off], self.points.data()[off + 1])
    }

    /// Absent mask means every point is visible.
    pub fn is_visible(&self, t: usize, m: usize) -> bool {
        match &self.visible {
            Some(v) => v[t * self.track_count() + m],
            None => true,
        }
    }

    /// Track positions at frame `t` as `M` (x, y) pairs.
    pub fn frame_points(&self, t: usize) -> Vec<(S, S)> {
        (0..self.track_count()).map(|m| self.point(t, m)).collect()
    }

    pub fn cast<T2: Scalar>(&self) -> TrackSet<T2> {
        TrackSet { points: self.points.cast::<T2>(), visible: self.visible.clone() }
    }

    /// Same trajectories with every coordinate shifted by `(dx, dy)`.
    pub fn translate(&self, dx: S, dy: S) -> TrackSet<S> {
        let mut points = self.points.clone();
        for pair in points.data_mut().chunks_mut(2) {
            pair[0] = pair[0] + dx;
            pair[1] = pair[1] + dy;
        }
        TrackSet { points, visible: self.visible.clone() }
    }
}

// ── query sampling ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum QueryStrategy {
    /// Random positions that are pinned in place: tracks will not move.
    Constant,
    /// Regular grid on frame 0, inset half a cell from the frame border.
    GridT0,
    /// Uniform random positions on frame 0.
    RandomT0,
    /// Uniform random (frame, x, y) over the whole video volume.
    RandomVolume,
}

#[derive(Debug, Clone, Copy)]
pub struct QuerySpec {
    pub strategy: QueryStrategy,
    pub count: usize,
    pub seed: u64,
}

impl QuerySpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("query count must be at least 1".into()));
        }
        if self.strategy == QueryStrategy::GridT0 {
            let g = (self.count as f64).sqrt().round() as usize;
            if g * g != self.count {
                return Err(Error::Config(format!(
                    "grid_t0 needs a perfect-square count, got {}",
                    self.count
                )));
            }
        }
        Ok(())
    }
}

/// A tracking query: start the trajectory at `(x, y)` on frame `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
}

/// Evenly spaced positions along one axis of `extent` cells, endpoints
/// half a cell in from the frame border.
fn grid_axis(extent: usize, g: usize) -> Vec<f64> {
    let lo = 0.5;
    let hi = extent as f64 - 0.5;
    if g == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..g).map(|k| lo + k as f64 * (hi - lo) / (g - 1) as f64).collect()
}

/// Draws tracking queries for a `frames x height x width` video.
///
/// Random draws are normalized first and scaled to the box afterwards, so
/// the same seed on a scaled grid yields scaled copies of the same
/// queries. Each query uses its own RNG sub-stream.
pub fn sample_queries(
    frames: usize,
    height: usize,
    width: usize,
    spec: &QuerySpec,
) -> Result<Vec<Query>> {
    spec.validate()?;
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::Config(format!(
            "video volume {frames}x{height}x{width} has a zero extent"
        )));
    }
    let root = Rng::new(spec.seed);
    let mut queries = Vec::with_capacity(spec.count);
    match spec.strategy {
        QueryStrategy::GridT0 => {
            let g = (spec.count as f64).sqrt().round() as usize;
            for &y in &grid_axis(height, g) {
                for &x in &grid_axis(width, g) {
                    queries.push(Query { frame: 0, x, y });
                }
            }
        }
        QueryStrategy::Constant | QueryStrategy::RandomT0 => {
            for i in 0..spec.count {
                let mut s = root.substream(i as u64);
                let x = s.next_f64() * (width - 1) as f64;
                let y = s.next_f64() * (height - 1) as f64;
                queries.push(Query { frame: 0, x, y });
            }
        }
        QueryStrategy::RandomVolume => {
            for i in 0..spec.count {
                let mut s = root.substream(i as u64);
                let t = ((s.next_f64() * frames as f64) as usize).min(frames - 1);
                let x = s.next_f64() * (width - 1) as f64;
                let y = s.next_f64() * (height - 1) as f64;
                queries.push(Query { frame: t, x, y });
            }
        }
    }
    Ok(queries)
}

// ── synthetic motion ────────────────────────────────────────────────────

/// A 2-D affine transform `p -> linear * p + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub linear: [[f64; 2]; 2],
    pub shift: [f64; 2],
}

impl AffineMap {
    pub fn identity() -> AffineMap {
        AffineMap { linear: [[1.0, 0.0], [0.0, 1.0]], shift: [0.0, 0.0] }
    }

    pub fn translation(dx: f64, dy: f64) -> AffineMap {
        AffineMap { linear: [[1.0, 0.0], [0.0, 1.0]], shift: [dx, dy] }
    }

    /// Rotation by `radians` about `center`.
    pub fn rotation_about(center: [f64; 2], radians: f64) -> AffineMap {
        let (s, c) = radians.sin_cos();
        let linear = [[c, -s], [s, c]];
        let shift = [
            center[0] - c * center[0] + s * center[1],
            center[1] - s * center[0] - c * center[1],
        ];
        AffineMap { linear, shift }
    }

    pub fn det(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.linear[0][0] * p[0] + self.linear[0][1] * p[1] + self.shift[0],
            self.linear[1][0] * p[0] + self.linear[1][1] * p[1] + self.shift[1],
        ]
    }

    /// Exact inverse; fails when the map is (nearly) singular.
    pub fn invert(&self) -> Result<AffineMap> {
        let det = self.det();
        if det.abs() <= 1e-6 {
            return Err(Error::Generation(format!(
                "affine map is not invertible (|det| = {:.3e} <= 1e-6)",
                det.abs()
            )));
        }
        let inv = [
            [self.linear[1][1] / det, -self.linear[0][1] / det],
            [-self.linear[1][0] / det, self.linear[0][0] / det],
        ];
        let shift = [
            -(inv[0][0] * self.shift[0] + inv[0][1] * self.shift[1]),
            -(inv[1][0] * self.shift[0] + inv[1][1] * self.shift[1]),
        ];
        Ok(AffineMap { linear: inv, shift })
    }
}

/// A disk that translates with constant velocity; points inside it at the
/// query frame move with it, points outside stay still.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    /// Disk center at frame 0.
    pub center: [f64; 2],
    pub radius: f64,
    /// Displacement per frame step.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotionKind {
    /// One map per frame step (`frames - 1` of them); map `t` sends frame
    /// `t` positions to frame `t + 1`.
    Affine(Vec<AffineMap>),
    Sprites(Vec<Sprite>),
}

/// Known scene motion over a `frames`-long video on an `height x width`
/// grid — the ground-truth substitute for a learned point tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub kind: MotionKind,
}

impl MotionField {
    pub fn identity(frames: usize, height: usize, width: usize) -> MotionField {
        MotionField {
            frames,
            height,
            width,
            kind: MotionKind::Affine(vec![AffineMap::identity(); frames.saturating_sub(1)]),
        }
    }

    /// The same affine step applied between every consecutive frame pair.
    pub fn uniform_affine(frames: usize, height: usize, width: usize, map: AffineMap) -> MotionField {
        MotionField {
            frames,
            height,
            width,
            kind: MotionKind::Affine(vec![map; frames.saturating_sub(1)]),
        }
    }

    pub fn sprites(frames: usize, height: usize, width: usize, sprites: Vec<Sprite>) -> MotionField {
        MotionField { frames, height, width, kind: MotionKind::Sprites(sprites) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "motion field volume {}x{}x{} has a zero extent",
                self.frames, self.height, self.width
            )));
        }
        match &self.kind {
            MotionKind::Affine(maps) => {
                if maps.len() != self.frames.saturating_sub(1) {
                    return Err(Error::Config(format!(
                        "{} affine steps cannot cover {} frames (need {})",
                        maps.len(),
                        self.frames,
                        self.frames.saturating_sub(1)
                    )));
                }
                for (i, m) in maps.iter().enumerate() {
                    if m.det().abs() <= 1e-6 {
                        return Err(Error::Generation(format!(
                            "affine step {i} is not invertible (|det| = {:.3e} <= 1e-6)",
                            m.det().abs()
                        )));
                    }
                }
            }
            MotionKind::Sprites(sprites) => {
                for (i, s) in sprites.iter().enumerate() {
                    if !(s.radius > 0.0) {
                        return Err(Error::Config(format!(
                            "sprite {i} has non-positive radius {}",
                            s.radius
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn in_frame_bounds(p: [f64; 2], height: usize, width: usize) -> bool {
    // the frame spans cell boundaries, half a cell beyond the outer centers
    p[0] >= -0.5 && p[0] <= width as f64 - 0.5 && p[1] >= -0.5 && p[1] <= height as f64 - 0.5
}

/// Propagates each query through the motion field, forward to the last
/// frame and backward (by exact inverse) to the first, stitching both
/// directions into one full-length trajectory.
///
/// Affine motion leaves every point visible. Sprite motion records
/// visibility per frame: a point is invisible once it lies outside the
/// frame bounds.
pub fn synth_tracks(field: &MotionField, queries: &[Query]) -> Result<TrackSet<f64>> {
    field.validate()?;
    if queries.is_empty() {
        return Err(Error::Generation("no queries to track".into()));
    }
    let t_len = field.frames;
    for q in queries {
        if q.frame >= t_len {
            return Err(Error::Generation(format!(
                "query frame {} is outside the {}-frame video",
                q.frame, t_len
            )));
        }
    }
    let m_len = queries.len();
    let mut points = Tensor::<f64>::zeros(&[t_len, m_len, 2]);

    // per-step forward and inverse transforms, resolved per query for sprites
    let step = |t: usize, p: [f64; 2], vel: Option<[f64; 2]>| -> Result<[f64; 2]> {
        Ok(match (&field.kind, vel) {
            (MotionKind::Affine(maps), _) => maps[t].apply(p),
            (MotionKind::Sprites(_), Some(v)) => [p[0] + v[0], p[1] + v[1]],
            (MotionKind::Sprites(_), None) => p,
        })
    };
    let step_back = |t: usize, p: [f64; 2], vel: Option<[f64; 2]>| -> Result<[f64; 2]> {
        Ok(match (&field.kind, vel) {
            (MotionKind::Affine(maps), _) => maps[t].invert()?.apply(p),
            (MotionKind::Sprites(_), Some(v)) => [p[0] - v[0], p[1] - v[1]],
            (MotionKind::Sprites(_), None) => p,
        })
    };

    for (m, q) in queries.iter().enumerate() {
        // sprite attachment is decided once, at the query frame
        let vel = match &field.kind {
            MotionKind::Affine(_) => None,
            MotionKind::Sprites(sprites) => sprites
                .iter()
                .find(|s| {
                    let c = [
                        s.center[0] + q.frame as f64 * s.velocity[0],
                        s.center[1] + q.frame as f64 * s.velocity[1],
                    ];
                    let d2 = (q.x - c[0]).powi(2) + (q.y - c[1]).powi(2);
                    d2 <= s.radius * s.radius
                })
                .map(|s| s.velocity),
        };
        let mut p = [q.x, q.y];
        points.set(&[q.frame, m, 0], p[0]);
        points.set(&[q.frame, m, 1], p[1]);
        for t in q.frame..t_len - 1 {
            p = step(t, p, vel)?;
            points.set(&[t + 1, m, 0], p[0]);
            points.set(&[t + 1, m, 1], p[1]);
        }
        p = [q.x, q.y];
        for t in (0..q.frame).rev() {
            p = step_back(t, p, vel)?;
            points.set(&[t, m, 0], p[0]);
            points.set(&[t, m, 1], p[1]);
        }
    }

    let visible = match &field.kind {
        MotionKind::Affine(_) => None,
        MotionKind::Sprites(_) => {
            let mut v = Vec::with_capacity(t_len * m_len);
            for t in 0..t_len {
                for m in 0..m_len {
                    let p = [points.at(&[t, m, 0]), points.at(&[t, m, 1])];
                    v.push(in_frame_bounds(p, field.height, field.width));
                }
            }
            Some(v)
        }
    };
    TrackSet::new(points, visible)
}

/// Trajectories that stay exactly where their queries are, regardless of
/// scene motion.
pub fn constant_tracks(frames: usize, queries: &[Query]) -> Result<TrackSet<f64>> {
    if queries.is_empty() {
        return Err(Error::Generation("no queries to track".into()));
    }
    let m_len = queries.len();
    let points = Tensor::from_fn(&[frames, m_len, 2], |idx| {
        let q = &queries[idx[1]];
        if idx[2] == 0 {
            q.x
        } else {
            q.y
        }
    });
    TrackSet::new(points, None)
}

/// Samples queries per `spec` and tracks them through `field`.
pub fn generate_tracks(field: &MotionField, spec: &QuerySpec) -> Result<TrackSet<f64>> {
    let queries = sample_queries(field.frames, field.height, field.width, spec)?;
    match spec.strategy {
        QueryStrategy::Constant => constant_tracks(field.frames, &queries),
        _ => synth_tracks(field, &queries),
    }
}

// ── coverage ────────────────────────────────────────────────────────────

/// Fraction of grid cells whose center lies within `radius` of at least
/// one visible track point at frame `t`.
pub fn coverage<S: Scalar>(
    tracks: &TrackSet<S>,
    t: usize,
    radius: f64,
    height: usize,
    width: usize,
) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("coverage radius must be positive, got {radius}")));
    }
    if t >= tracks.frames() {
        return Err(Error::Dim(format!(
            "frame {t} is outside the {}-frame track set",
            tracks.frames()
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::Config("coverage grid has a zero extent".into()));
    }
    let pts: Vec<[f64; 2]> = (0..tracks.track_count())
        .filter(|&m| tracks.is_visible(t, m))
        .map(|m| {
            let (x, y) = tracks.point(t, m);
            [x.to_f64(), y.to_f64()]
        })
        .collect();
    let r2 = radius * radius;
    let mut covered = 0usize;
    for cy in 0..height {
        for cx in 0..width {
            let hit = pts.iter().any(|p| {
                let dx = p[0] - cx as f64;
                let dy = p[1] - cy as f64;
                dx * dx + dy * dy <= r2
            });
            if hit {
                covered += 1;
            }
        }
    }
    Ok(covered as f64 / (height * width) as f64)
}

// ── file formats ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct TracksFile {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "M")]
    m: usize,
    points: Vec<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    visible: Option<Vec<Vec<bool>>>,
}

/// Byte offset of a 1-based (line, column) position in `src`.
fn byte_offset(src: &str, line: usize, column: usize) -> u64 {
    let mut off = 0usize;
    for (i, l) in src.split('\n').enumerate() {
        if i + 1 == line {
            return (off + column.saturating_sub(1).min(l.len())) as u64;
        }
        off += l.len() + 1;
    }
    off as u64
}

fn json_error(src: &str, err: &serde_json::Error) -> Error {
    Error::parse(byte_offset(src, err.line(), err.column()), err.to_string())
}

pub fn tracks_to_json<S: Scalar>(tracks: &TrackSet<S>) -> String {
    let (t_len, m_len) = (tracks.frames(), tracks.track_count());
    let points = (0..t_len)
        .map(|t| {
            (0..m_len)
                .map(|m| {
                    let (x, y) = tracks.point(t, m);
                    [x.to_f64(), y.to_f64()]
                })
                .collect()
        })
        .collect();
    let visible = tracks.visible().map(|v| {
        (0..t_len).map(|t| (0..m_len).map(|m| v[t * m_len + m]).collect()).collect()
    });
    let file = TracksFile { t: t_len, m: m_len, points, visible };
    serde_json::to_string_pretty(&file).expect("track serialization cannot fail")
}

pub fn tracks_from_json<S: Scalar>(src: &str) -> Result<TrackSet<S>> {
    let file: TracksFile = serde_json::from_str(src).map_err(|e| json_error(src, &e))?;
    if file.t == 0 || file.m == 0 {
        return Err(Error::parse(0, format!("track set must be non-empty, got T={} M={}", file.t, file.m)));
    }
    if file.points.len() != file.t {
        return Err(Error::parse(
            0,
            format!("points lists {} frames but T = {}", file.points.len(), file.t),
        ));
    }
    let mut data = Vec::with_capacity(file.t * file.m * 2);
    for (t, frame) in file.points.iter().enumerate() {
        if frame.len() != file.m {
            return Err(Error::parse(
                0,
                format!("frame {t} lists {} points but M = {}", frame.len(), file.m),
            ));
        }
        for p in frame {
            data.push(S::of(p[0]));
            data.push(S::of(p[1]));
        }
    }
    let visible = match file.visible {
        None => None,
        Some(rows) => {
            if rows.len() != file.t || rows.iter().any(|r| r.len() != file.m) {
                return Err(Error::parse(0, "visible mask shape disagrees with T x M".to_string()));
            }
            Some(rows.into_iter().flatten().collect())
        }
    };
    let points = Tensor::new(vec![file.t, file.m, 2], data)?;
    TrackSet::new(points, visible)
}

pub fn write_tracks<S: Scalar>(path: &Path, tracks: &TrackSet<S>) -> Result<()> {
    std::fs::write(path, tracks_to_json(tracks)).map_err(|e| Error::io(path, e))
}

pub fn read_tracks<S: Scalar>(path: &Path) -> Result<TrackSet<S>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    tracks_from_json(&src)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum MotionFile {
    Affine {
        frames: usize,
        height: usize,
        width: usize,
        /// Either one map (applied between every frame pair) or
        /// `frames - 1` maps.
        maps: Vec<AffineMap>,
    },
    Sprites {
        frames: usize,
        height: usize,
        width: usize,
        sprites: Vec<Sprite>,
    },
}

pub fn motion_from_json(src: &str) -> Result<MotionField> {
    let file: MotionFile = serde_json::from_str(src).map_err(|e| json_error(src, &e))?;
    let field = match file {
        MotionFile::Affine { frames, height, width, maps } => {
            let steps = frames.saturating_sub(1);
            let maps = if maps.len() == 1 && steps != 1 {
                vec![maps[0]; steps]
            } else {
                maps
            };
            MotionField { frames, height, width, kind: MotionKind::Affine(maps) }
        }
        MotionFile::Sprites { frames, height, width, sprites } => {
            MotionField { frames, height, width, kind: MotionKind::Sprites(sprites) }
        }
    };
    field.validate()?;
    Ok(field)
}

pub fn motion_to_json(field: &MotionField) -> String {
    let file = match &field.kind {
        MotionKind::Affine(maps) => MotionFile::Affine {
            frames: field.frames,
            height: field.height,
            width: field.width,
            maps: maps.clone(),
        },
        MotionKind::Sprites(sprites) => MotionFile::Sprites {
            frames: field.frames,
            height: field.height,
            width: field.width,
            sprites: sprites.clone(),
        },
    };
    serde_json::to_string_pretty(&file).expect("motion serialization cannot fail")
}

pub fn read_motion(path: &Path) -> Result<MotionField> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    motion_from_json(&src)
}

pub fn write_motion(path: &Path, field: &MotionField) -> Result<()> {
    std::fs::write(path, motion_to_json(field)).map_err(|e| Error::io(path, e))
}
