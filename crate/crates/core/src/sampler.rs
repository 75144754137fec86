//! Asynchronous temporal sampling.
//!
//! A clip's frame timeline is cut into `N` contiguous segments. Each
//! segment contributes one video frame `j` and one audio window of `d`
//! seconds whose centre `c` may drift up to `b` seconds away from the
//! frame's timestamp `j / r_v`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Offset bound `b` used for training, in seconds.
pub const DEFAULT_OFFSET_S: f64 = 0.01;
/// Audio window length `d`, in seconds.
pub const DEFAULT_WINDOW_S: f64 = 1.28;

const INTEGER_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Random frame and random audio centre; used during training.
    Stochastic,
    /// Middle frame, audio centred on it; used for evaluation.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub segments: usize,
    pub offset_s: f64,
    pub window_s: f64,
    pub mode: SamplingMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            segments: 4,
            offset_s: DEFAULT_OFFSET_S,
            window_s: DEFAULT_WINDOW_S,
            mode: SamplingMode::Stochastic,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        if !(self.offset_s >= 0.0 && self.offset_s.is_finite()) {
            return Err(Error::invalid(format!(
                "offset bound must be >= 0, got {}",
                self.offset_s
            )));
        }
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(Error::invalid(format!(
                "audio window must be > 0, got {}",
                self.window_s
            )));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }

    /// Fixed window length in samples, `round(r_a * d)`.
    pub fn window_samples(&self, rate: u32) -> usize {
        (rate as f64 * self.window_s).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSample {
    pub segment_index: usize,
    pub frame_index: usize,
    /// Centre drawn around `j / r_v`, before clamping into the clip.
    pub center_unclamped_s: f64,
    /// Centre actually used, in seconds.
    pub center_s: f64,
    /// Inclusive sample bounds of the audio window.
    pub audio_first: usize,
    pub audio_last: usize,
}

impl SegmentSample {
    pub fn raw_len(&self) -> usize {
        self.audio_last - self.audio_first + 1
    }
}

/// Equal-length partition: segment `i` covers `[⌊iT/N⌋, ⌊(i+1)T/N⌋)`.
pub fn partition(frames: usize, segments: usize) -> Result<Vec<Range<usize>>> {
    if segments == 0 {
        return Err(Error::invalid("segment count must be at least 1"));
    }
    if frames < segments {
        return Err(Error::invalid(format!(
            "cannot split {frames} frames into {segments} non-empty segments"
        )));
    }
    Ok((0..segments)
        .map(|i| i * frames / segments..(i + 1) * frames / segments)
        .collect())
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < INTEGER_SNAP {
        r
    } else {
        x
    }
}

/// `⌈r_a(c - d/2)⌉` and `⌊r_a(c + d/2)⌋`, with products within 1e-9 of an
/// integer treated as that integer.
pub fn window_bounds(center_s: f64, window_s: f64, rate: u32) -> (i64, i64) {
    let r = rate as f64;
    let first = snap(r * (center_s - window_s / 2.0)).ceil() as i64;
    let last = snap(r * (center_s + window_s / 2.0)).floor() as i64;
    (first, last)
}

#[allow(clippy::too_many_arguments)]
pub fn sample_segment<R: Rng + ?Sized>(
    segment_index: usize,
    range: Range<usize>,
    cfg: &SamplerConfig,
    fps: f64,
    rate: u32,
    audio_len: usize,
    rng: &mut R,
) -> Result<SegmentSample> {
    if range.is_empty() {
        return Err(Error::invalid(format!("segment {segment_index} has no frames")));
    }
    let needed = snap(rate as f64 * cfg.window_s).ceil() as usize;
    if audio_len < needed {
        return Err(Error::invalid(format!(
            "audio of {audio_len} samples is shorter than the {}s window ({needed} samples)",
            cfg.window_s
        )));
    }
    let (frame_index, center_unclamped_s) = match cfg.mode {
        SamplingMode::Stochastic => {
            let j = rng.gen_range(range.clone());
            let t = j as f64 / fps;
            let c = if cfg.offset_s > 0.0 {
                rng.gen_range(t - cfg.offset_s..=t + cfg.offset_s)
            } else {
                t
            };
            (j, c)
        }
        SamplingMode::Deterministic => {
            let j = range.start + (range.end - range.start) / 2;
            (j, j as f64 / fps)
        }
    };
    let half = cfg.window_s / 2.0;
    let hi = audio_len as f64 / rate as f64 - half;
    let center_s = center_unclamped_s.clamp(half, hi.max(half));
    let (first, last) = window_bounds(center_s, cfg.window_s, rate);
    let audio_first = first.max(0) as usize;
    let audio_last = (last.max(0) as usize).min(audio_len - 1);
    Ok(SegmentSample {
        segment_index,
        frame_index,
        center_unclamped_s,
        center_s,
        audio_first,
        audio_last: audio_last.max(audio_first),
    })
}

/// Exactly `round(r_a * d)` samples starting at `audio_first`: the inclusive
/// slice, truncated or zero-padded at the end.
pub fn slice_audio(w: &Waveform, s: &SegmentSample, window_s: f64) -> Waveform {
    let len = (w.rate as f64 * window_s).round() as usize;
    let end = (s.audio_last + 1).min(w.samples.len());
    let raw = &w.samples[s.audio_first.min(end)..end];
    let mut samples: Vec<f32> = raw.iter().take(len).copied().collect();
    samples.resize(len, 0.0);
    Waveform {
        samples,
        rate: w.rate,
    }
}
