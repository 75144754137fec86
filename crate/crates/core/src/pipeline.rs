//! Turns clips into per-segment network inputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Clip, Dataset};
use crate::error::{Error, Result};
use crate::model::SegmentBatch;
use crate::sampler::{partition, sample_segment, slice_audio, SamplerConfig, SamplingMode, SegmentSample};
use crate::seed::{self, stream};
use crate::signal::{choose_hop, resize_bilinear, Spectrogram, Stft, DEFAULT_WINDOW};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sampler: SamplerConfig,
    /// Spectrogram rows (frequency) after resizing.
    pub spec_height: usize,
    /// Spectrogram columns (time) after resizing.
    pub spec_width: usize,
    pub stft_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sampler: SamplerConfig::default(),
            spec_height: 48,
            spec_width: 48,
            stft_window: DEFAULT_WINDOW,
        }
    }
}

impl FeatureConfig {
    /// 192x120 spectrograms and 10 segments.
    pub fn paper_dims(mut self) -> Self {
        self.spec_height = 192;
        self.spec_width = 120;
        self.sampler.segments = 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.spec_height == 0 || self.spec_width == 0 {
            return Err(Error::invalid("spectrogram extents must be positive"));
        }
        if self.stft_window < 2 {
            return Err(Error::invalid("STFT window must be at least 2 samples"));
        }
        Ok(())
    }
}

/// Everything drawn for one segment of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentInput {
    pub sample: SegmentSample,
    /// Resized log-power image before unit scaling.
    pub spectrogram: Spectrogram,
}

pub struct FeatureExtractor {
    cfg: FeatureConfig,
    stft: Stft,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(FeatureExtractor {
            stft: Stft::new(cfg.stft_window)?,
            cfg,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Samples every segment of `clip`. The random stream is keyed by
    /// `(seed, clip_id, segment, epoch)`.
    pub fn segments(&self, clip_id: usize, clip: &Clip, mode: SamplingMode, seed: u64, epoch: u64) -> Result<Vec<SegmentInput>> {
        let sampler = self.cfg.sampler.with_mode(mode);
        let ranges = partition(clip.num_frames(), sampler.segments)?;
        ranges
            .into_iter()
            .enumerate()
            .map(|(n, range)| {
                let mut rng = seed::rng(&[seed, stream::SAMPLER, clip_id as u64, n as u64, epoch]);
                let sample = sample_segment(n, range, &sampler, clip.fps, clip.audio.rate, clip.audio.len(), &mut rng)?;
                let window = slice_audio(&clip.audio, &sample, sampler.window_s);
                let hop = choose_hop(window.len(), self.cfg.stft_window);
                let raw = self.stft.log_power(&window, hop)?;
                let spectrogram = resize_bilinear(&raw, self.cfg.spec_height, self.cfg.spec_width)?;
                Ok(SegmentInput { sample, spectrogram })
            })
            .collect()
    }

    /// Per-segment batches for the clips `ids` of `ds`, in `ids` order.
    pub fn batch(&self, ds: &Dataset, ids: &[usize], mode: SamplingMode, seed: u64, epoch: u64) -> Result<Vec<SegmentBatch>> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot assemble an empty batch"));
        }
        let per_clip: Vec<Vec<SegmentInput>> = ids
            .par_iter()
            .map(|&id| self.segments(id, &ds.clips[id], mode, seed, epoch))
            .collect::<Result<_>>()?;
        let dims = ds.clips[ids[0]].frame_dims();
        if let Some(&bad) = ids.iter().find(|&&id| ds.clips[id].frame_dims() != dims) {
            return Err(Error::shape(
                "batch",
                format!("clip {bad} has frame dims {:?}, expected {dims:?}", ds.clips[bad].frame_dims()),
            ));
        }
        let b = ids.len();
        let (sh, sw) = (self.cfg.spec_height, self.cfg.spec_width);
        (0..self.cfg.sampler.segments)
            .map(|n| {
                let mut frames = Vec::with_capacity(b * dims.iter().product::<usize>());
                let mut specs = Vec::with_capacity(b * sh * sw);
                for (&id, segs) in ids.iter().zip(&per_clip) {
                    frames.extend_from_slice(ds.clips[id].frame(segs[n].sample.frame_index));
                    specs.extend(segs[n].spectrogram.unit_scaled());
                }
                Ok(SegmentBatch {
                    frames: Tensor::new(&[b, dims[0], dims[1], dims[2]], frames)?,
                    specs: Tensor::new(&[b, 1, sh, sw], specs)?,
                })
            })
            .collect()
    }
}
