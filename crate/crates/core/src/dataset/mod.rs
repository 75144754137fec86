//! Labelled audio-visual clips: synthetic generation, on-disk storage and
//! actor-disjoint fold construction.

mod folds;
mod storage;
mod synth;

pub use folds::{make_folds, Fold};
pub use storage::{load_clip, load_dataset, save_clip, save_dataset, ClipMeta, Manifest, ManifestEntry};
pub use synth::{carrier_hz, ActorStyle, envelope_hz, generate_synthetic, orientation_rad, SynthConfig};

use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["neutral", "happy", "anger", "disgust", "fear", "sad"];

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    /// `[T, C, H, W]`, values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub audio: Waveform,
    pub label: usize,
    pub actor_id: u32,
    pub fps: f64,
}

impl Clip {
    pub fn new(frames: Tensor<f32>, audio: Waveform, label: usize, actor_id: u32, fps: f64) -> Result<Self> {
        let c = Clip {
            frames,
            audio,
            label,
            actor_id,
            fps,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rank() != 4 {
            return Err(Error::shape(
                "clip",
                format!("frames must be [T, C, H, W], got {:?}", self.frames.shape()),
            ));
        }
        if self.label >= NUM_CLASSES {
            return Err(Error::invalid(format!("label {} is not a class id", self.label)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!("frame rate must be positive, got {}", self.fps)));
        }
        let video = self.num_frames() as f64 / self.fps;
        if (video - self.audio.duration()).abs() > 1.0 / self.fps + 1e-9 {
            return Err(Error::invalid(format!(
                "video lasts {video:.4}s but audio lasts {:.4}s",
                self.audio.duration()
            )));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// `[C, H, W]` extents of a single frame.
    pub fn frame_dims(&self) -> [usize; 3] {
        let s = self.frames.shape();
        [s[1], s[2], s[3]]
    }

    pub fn frame(&self, j: usize) -> &[f32] {
        let [c, h, w] = self.frame_dims();
        let n = c * h * w;
        &self.frames.data()[j * n..(j + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clips: Vec<Clip>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(clips: Vec<Clip>) -> Self {
        Dataset {
            clips,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn actor_ids(&self) -> Vec<u32> {
        self.clips.iter().map(|c| c.actor_id).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        self.clips.iter().for_each(|c| counts[c.label] += 1);
        counts
    }
}
