//! Dense video latents.
//!
//! A [`VideoLatent`] is a clip of `F` frame latents, each `c × h × w`, stored
//! frame-major and row-major in a single `f32` buffer. Every diffusion
//! procedure in the crate consumes and produces this type.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MevgError, Result};

/// Shape of a single frame latent (`c × h × w`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Number of scalar elements in one frame.
    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for FrameShape {
    /// 4×32×32: a 256×256 frame through a ×8 VAE.
    fn default() -> Self {
        Self::new(4, 32, 32)
    }
}

/// Full shape of a clip latent (`F × c × h × w`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentDims {
    pub frames: usize,
    pub frame: FrameShape,
}

impl LatentDims {
    pub const fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            frame: FrameShape::new(channels, height, width),
        }
    }

    pub const fn len(&self) -> usize {
        self.frames * self.frame.len()
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 4] {
        [
            self.frames,
            self.frame.channels,
            self.frame.height,
            self.frame.width,
        ]
    }
}

impl fmt::Display for LatentDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.frame.channels, self.frame.height, self.frame.width
        )
    }
}

/// One frame latent, used for anchors, trace entries and seed images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLatent {
    shape: FrameShape,
    data: Vec<f32>,
}

impl FrameLatent {
    pub fn new(shape: FrameShape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(MevgError::InvalidLatent(format!(
                "frame of shape {}x{}x{} needs {} values, got {}",
                shape.channels,
                shape.height,
                shape.width,
                shape.len(),
                data.len()
            )));
        }
        if shape.is_empty() {
            return Err(MevgError::InvalidLatent("empty frame shape".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MevgError::InvalidLatent("non-finite value in frame".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: FrameShape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn standard_normal<R: Rng + ?Sized>(shape: FrameShape, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn l2_distance(&self, other: &[f32]) -> f64 {
        l2_distance(&self.data, other)
    }

    /// Wraps this frame as a one-frame clip.
    pub fn into_clip(self) -> VideoLatent {
        VideoLatent {
            dims: LatentDims {
                frames: 1,
                frame: self.shape,
            },
            data: self.data,
        }
    }
}

/// A clip of `F` frame latents sharing one frame shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoLatent {
    dims: LatentDims,
    data: Vec<f32>,
}

impl VideoLatent {
    /// Builds a latent from a flat frame-major buffer, rejecting empty shapes,
    /// wrong lengths and non-finite values.
    pub fn new(dims: LatentDims, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(MevgError::InvalidLatent(format!(
                "empty latent shape {dims}"
            )));
        }
        if data.len() != dims.len() {
            return Err(MevgError::InvalidLatent(format!(
                "shape {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MevgError::InvalidLatent(
                "non-finite value in latent".into(),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: LatentDims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: LatentDims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn standard_normal<R: Rng + ?Sized>(dims: LatentDims, rng: &mut R) -> Self {
        let data = (0..dims.len())
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Self { dims, data }
    }

    /// Stacks frames into a clip. All frames must share a shape.
    pub fn from_frames(frames: &[FrameLatent]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| {
            MevgError::InvalidLatent("cannot build a clip from zero frames".into())
        })?;
        let shape = first.shape;
        let mut data = Vec::with_capacity(shape.len() * frames.len());
        for f in frames {
            if f.shape != shape {
                return Err(MevgError::ShapeMismatch {
                    expected: LatentDims {
                        frames: 1,
                        frame: shape,
                    },
                    actual: LatentDims {
                        frames: 1,
                        frame: f.shape,
                    },
                });
            }
            data.extend_from_slice(&f.data);
        }
        Ok(Self {
            dims: LatentDims {
                frames: frames.len(),
                frame: shape,
            },
            data,
        })
    }

    /// `frames` copies of one frame.
    pub fn repeat_frame(frame: &[f32], shape: FrameShape, frames: usize) -> Self {
        debug_assert_eq!(frame.len(), shape.len());
        let mut data = Vec::with_capacity(shape.len() * frames);
        for _ in 0..frames {
            data.extend_from_slice(frame);
        }
        Self {
            dims: LatentDims {
                frames,
                frame: shape,
            },
            data,
        }
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }

    pub fn num_frames(&self) -> usize {
        self.dims.frames
    }

    pub fn frame_shape(&self) -> FrameShape {
        self.dims.frame
    }

    pub fn frame_len(&self) -> usize {
        self.dims.frame.len()
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        let m = self.frame_len();
        &self.data[n * m..(n + 1) * m]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f32] {
        let m = self.frame_len();
        &mut self.data[n * m..(n + 1) * m]
    }

    /// Mutable views of frames `n - 1` and `n`.
    pub fn frame_pair_mut(&mut self, n: usize) -> (&mut [f32], &mut [f32]) {
        assert!(n >= 1 && n < self.dims.frames);
        let m = self.frame_len();
        let (head, tail) = self.data.split_at_mut(n * m);
        (&mut head[(n - 1) * m..], &mut tail[..m])
    }

    pub fn last_frame(&self) -> &[f32] {
        self.frame(self.dims.frames - 1)
    }

    /// Owned copy of frame `n`.
    pub fn frame_latent(&self, n: usize) -> FrameLatent {
        FrameLatent {
            shape: self.dims.frame,
            data: self.frame(n).to_vec(),
        }
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.frame_len())
    }

    pub fn frames_mut(&mut self) -> std::slice::ChunksExactMut<'_, f32> {
        let m = self.frame_len();
        self.data.chunks_exact_mut(m)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_dims(&self, other: &VideoLatent) -> Result<()> {
        if self.dims != other.dims {
            return Err(MevgError::ShapeMismatch {
                expected: self.dims,
                actual: other.dims,
            });
        }
        Ok(())
    }

    /// `a·self + b·other`, elementwise.
    pub fn lin_comb(&self, a: f32, other: &VideoLatent, b: f32) -> Result<VideoLatent> {
        self.ensure_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Ok(VideoLatent {
            dims: self.dims,
            data,
        })
    }

    pub fn scaled(&self, a: f32) -> VideoLatent {
        VideoLatent {
            dims: self.dims,
            data: self.data.iter().map(|&x| a * x).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn l2_distance(&self, other: &VideoLatent) -> f64 {
        l2_distance(&self.data, &other.data)
    }

    /// Mean L2 distance between consecutive frames; zero for one-frame clips.
    pub fn mean_inter_frame_distance(&self) -> f64 {
        let f = self.dims.frames;
        if f < 2 {
            return 0.0;
        }
        let total: f64 = (1..f)
            .map(|n| l2_distance(self.frame(n), self.frame(n - 1)))
            .sum();
        total / (f - 1) as f64
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
