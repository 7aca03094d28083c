//! Carrier types for values moving through the layer: per-frame feature
//! grids and per-track token stacks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A video feature volume `[T, H, W, d]` with an explicit spatial origin.
///
/// Token `j` of a frame (row-major, `j = y*W + x`) sits at continuous
/// coordinates `origin + (x, y)`, i.e. cell centers on the integer grid.
/// The origin is almost always `(0, 0)`; carrying it explicitly lets
/// translation behavior be exercised directly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S: Scalar> {
    data: Tensor<S>,
    origin: (S, S),
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(data: Tensor<S>) -> Result<FeatureMap<S>> {
        Self::with_origin(data, (S::zero(), S::zero()))
    }

    pub fn with_origin(data: Tensor<S>, origin: (S, S)) -> Result<FeatureMap<S>> {
        if data.rank() != 4 {
            return Err(Error::Dim(format!(
                "feature map must be [frames, height, width, channels], got shape {:?}",
                data.shape()
            )));
        }
        if !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(Error::Numeric("feature-map origin must be finite".into()));
        }
        Ok(FeatureMap { data, origin })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.height() * self.width()
    }

    pub fn origin(&self) -> (S, S) {
        self.origin
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.data
    }

    /// Frame `t` as a flat `[H*W, d]` slice.
    pub fn frame(&self, t: usize) -> &[S] {
        let n = self.tokens_per_frame() * self.channels();
        &self.data.data()[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [S] {
        let n = self.tokens_per_frame() * self.channels();
        &mut self.data.data_mut()[t * n..(t + 1) * n]
    }

    /// Continuous position of token `j` within a frame.
    pub fn token_pos(&self, j: usize) -> (S, S) {
        let w = self.width();
        let x = S::of((j % w) as f64);
        let y = S::of((j / w) as f64);
        (self.origin.0 + x, self.origin.1 + y)
    }

    /// Same grid and origin, different contents.
    pub fn like(&self, data: Tensor<S>) -> Result<FeatureMap<S>> {
        if data.shape() != self.data.shape() {
            return Err(Error::Dim(format!(
                "replacement contents {:?} do not match grid {:?}",
                data.shape(),
                self.data.shape()
            )));
        }
        FeatureMap::with_origin(data, self.origin)
    }

    pub fn cast<T: Scalar>(&self) -> FeatureMap<T> {
        FeatureMap {
            data: self.data.cast::<T>(),
            origin: (T::of(self.origin.0.to_f64()), T::of(self.origin.1.to_f64())),
        }
    }
}

/// Per-track token stack `[T, M, d]`: one feature vector per track per
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTokens<S: Scalar> {
    data: Tensor<S>,
}

impl<S: Scalar> TrackTokens<S> {
    pub fn new(data: Tensor<S>) -> Result<TrackTokens<S>> {
        if data.rank() != 3 {
            return Err(Error::Dim(format!(
                "track tokens must be [frames, tracks, channels], got shape {:?}",
                data.shape()
            )));
        }
        Ok(TrackTokens { data })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn track_count(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.data
    }

    /// Frame `t` as a flat `[M, d]` slice.
    pub fn frame(&self, t: usize) -> &[S] {
        let n = self.track_count() * self.channels();
        &self.data.data()[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [S] {
        let n = self.track_count() * self.channels();
        &mut self.data.data_mut()[t * n..(t + 1) * n]
    }

    /// Token for track `m` at frame `t`.
    pub fn token(&self, t: usize, m: usize) -> &[S] {
        let d = self.channels();
        let off = (t * self.track_count() + m) * d;
        &self.data.data()[off..off + d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_positions_follow_row_major_order() {
        let f = FeatureMap::new(Tensor::<f64>::zeros(&[1, 2, 3, 4])).unwrap();
        assert_eq!(f.token_pos(0), (0.0, 0.0));
        assert_eq!(f.token_pos(2), (2.0, 0.0));
        assert_eq!(f.token_pos(3), (0.0, 1.0));
        assert_eq!(f.token_pos(5), (2.0, 1.0));
    }

    #[test]
    fn origin_shifts_token_positions() {
        let f = FeatureMap::with_origin(Tensor::<f64>::zeros(&[1, 2, 2, 1]), (1.5, -0.5)).unwrap();
        assert_eq!(f.token_pos(0), (1.5, -0.5));
        assert_eq!(f.token_pos(3), (2.5, 0.5));
    }

    #[test]
    fn rank_checks() {
        assert!(FeatureMap::new(Tensor::<f32>::zeros(&[2, 2, 2])).is_err());
        assert!(TrackTokens::new(Tensor::<f32>::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn frame_slices_partition_the_volume() {
        let t = Tensor::<f32>::from_fn(&[2, 2, 3, 1], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f32);
        let f = FeatureMap::new(t).unwrap();
        assert_eq!(f.frame(0), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(f.frame(1), &[100.0, 101.0, 102.0, 110.0, 111.0, 112.0]);
    }
}
