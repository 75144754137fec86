use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Clip, Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::signal::Waveform;
use crate::tensor::Tensor;

/// Parameters of the synthetic audio-visual corpus.
///
/// Class `k` is carried by a tone at `300 + 150k` Hz with an amplitude
/// envelope at `2 + 1.5k` Hz, and by a grating oriented at `30k` degrees.
/// Each actor shifts pitch by up to ±5% and applies its own brightness and
/// contrast; every sample and pixel gets Gaussian noise of std `noise`.
///
/// The signatures are not equally strong over the whole clip. Each clip has
/// an expression apex per modality, drawn independently for audio and
/// video, and the signature amplitude follows
/// `floor + (1 - floor) * exp(-((t - apex) / apex_width_s)^2 / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_actors: usize,
    pub clips_per_actor: usize,
    pub seed: u64,
    pub frames: usize,
    pub fps: f64,
    pub audio_rate: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub noise: f64,
    pub apex_width_s: f64,
    pub video_floor: f64,
    pub audio_floor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_actors: 30,
            clips_per_actor: 12,
            seed: 7,
            frames: 45,
            fps: 15.0,
            audio_rate: 16000,
            height: 64,
            width: 64,
            channels: 1,
            noise: 0.05,
            apex_width_s: 0.4,
            video_floor: 0.05,
            audio_floor: 0.0,
        }
    }
}

impl SynthConfig {
    /// 224x224 RGB frames.
    pub fn paper_dims(mut self) -> Self {
        self.height = 224;
        self.width = 224;
        self.channels = 3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_actors == 0 || self.clips_per_actor == 0 {
            return Err(Error::invalid("need at least one actor and one clip per actor"));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::invalid(format!(
                "invalid clip dims: T={} C={} H={} W={}",
                self.frames, self.channels, self.height, self.width
            )));
        }
        if !(self.fps > 0.0) || self.audio_rate == 0 {
            return Err(Error::invalid("frame rate and audio rate must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise std must be >= 0, got {}", self.noise)));
        }
        if !(self.apex_width_s > 0.0 && self.apex_width_s.is_finite()) {
            return Err(Error::invalid(format!("apex width must be positive, got {}", self.apex_width_s)));
        }
        for (name, v) in [("video", self.video_floor), ("audio", self.audio_floor)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} floor must lie in [0, 1], got {v}")));
            }
        }
        let samples = self.audio_samples();
        if samples == 0 {
            return Err(Error::invalid("clip too short to hold any audio"));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.fps
    }

    pub fn audio_samples(&self) -> usize {
        (self.duration() * self.audio_rate as f64).round() as usize
    }
}

pub fn carrier_hz(class: usize) -> f64 {
    300.0 + 150.0 * class as f64
}

pub fn envelope_hz(class: usize) -> f64 {
    2.0 + 1.5 * class as f64
}

pub fn orientation_rad(class: usize) -> f64 {
    (30.0 * class as f64).to_radians()
}

const GRATING_CYCLES: f64 = 6.0;
const GRATING_DRIFT_HZ: f64 = 0.1;
const GRATING_AMPLITUDE: f64 = 0.35;
const TONE_AMPLITUDE: f64 = 0.5;
const ENVELOPE_DEPTH: f64 = 0.8;

/// Nuisance parameters shared by every clip of one actor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStyle {
    /// Relative carrier shift.
    pub pitch: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl ActorStyle {
    pub fn draw(seed: u64, actor: usize) -> Self {
        let mut rng = seed::rng(&[seed, stream::ACTOR, actor as u64]);
        ActorStyle {
            pitch: rng.gen_range(-0.05..=0.05),
            brightness: rng.gen_range(-0.1..=0.1),
            contrast: rng.gen_range(0.7..=1.3),
        }
    }
}

/// Signature strength over time for one modality.
#[derive(Debug, Clone, Copy)]
struct Intensity {
    apex: f64,
    width: f64,
    floor: f64,
}

impl Intensity {
    fn draw(rng: &mut impl Rng, duration: f64, width: f64, floor: f64) -> Self {
        Intensity {
            apex: rng.gen_range(0.0..=duration),
            width,
            floor,
        }
    }

    fn at(&self, t: f64) -> f64 {
        let z = (t - self.apex) / self.width;
        self.floor + (1.0 - self.floor) * (-0.5 * z * z).exp()
    }
}

fn quantize(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0
}

fn make_clip(cfg: &SynthConfig, index: usize, actor: usize, style: ActorStyle) -> Result<Clip> {
    let label = index % NUM_CLASSES;
    let mut rng = seed::rng(&[cfg.seed, stream::CLIP, index as u64]);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let draw_noise = |rng: &mut rand_chacha::ChaCha8Rng| {
        if cfg.noise > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };

    let theta = orientation_rad(label);
    let (ct, st) = (theta.cos(), theta.sin());
    let phase0 = rng.gen_range(0.0..2.0 * PI);
    let video_level = Intensity::draw(&mut rng, cfg.duration(), cfg.apex_width_s, cfg.video_floor);
    let audio_level = Intensity::draw(&mut rng, cfg.duration(), cfg.apex_width_s, cfg.audio_floor);
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let scale = GRATING_CYCLES * 2.0 * PI / w.max(h) as f64;
    // cos(u + phase) = cos u cos phase - sin u sin phase
    let (cos_u, sin_u): (Vec<f64>, Vec<f64>) = (0..h * w)
        .map(|i| {
            let u = ((i % w) as f64 * ct + (i / w) as f64 * st) * scale;
            (u.cos(), u.sin())
        })
        .unzip();
    let mut frames = Vec::with_capacity(cfg.frames * c * h * w);
    for t in 0..cfg.frames {
        let phase = phase0 + 2.0 * PI * GRATING_DRIFT_HZ * t as f64 / cfg.fps;
        let (cp, sp) = (phase.cos(), phase.sin());
        let amplitude = GRATING_AMPLITUDE * video_level.at(t as f64 / cfg.fps);
        for ch in 0..c {
            let gain = style.contrast * (1.0 - 0.1 * ch as f64) * amplitude;
            for (cu, su) in cos_u.iter().zip(&sin_u) {
                let v = 0.5 + style.brightness + gain * (cu * cp - su * sp) + draw_noise(&mut rng);
                frames.push(quantize(v));
            }
        }
    }

    let rate = cfg.audio_rate as f64;
    let freq = carrier_hz(label) * (1.0 + style.pitch);
    let env_hz = envelope_hz(label);
    let tone_phase = rng.gen_range(0.0..2.0 * PI);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let audio = (0..cfg.audio_samples())
        .map(|n| {
            let t = n as f64 / rate;
            let env = 1.0 - ENVELOPE_DEPTH * (0.5 - 0.5 * (2.0 * PI * env_hz * t + env_phase).cos());
            let s = TONE_AMPLITUDE * audio_level.at(t) * env * (2.0 * PI * freq * t + tone_phase).sin() + draw_noise(&mut rng);
            s.clamp(-1.0, 1.0) as f32
        })
        .collect();

    Clip::new(
        Tensor::new(&[cfg.frames, c, h, w], frames)?,
        Waveform::new(audio, cfg.audio_rate)?,
        label,
        actor as u32,
        cfg.fps,
    )
}

/// Deterministic corpus of `num_actors * clips_per_actor` clips. Clip `i`
/// belongs to actor `i / clips_per_actor` and has label `i mod 6`, so the
/// classes are balanced up to rounding.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let styles: Vec<ActorStyle> = (0..cfg.num_actors)
        .map(|a| ActorStyle::draw(cfg.seed, a))
        .collect();
    let total = cfg.num_actors * cfg.clips_per_actor;
    let clips = (0..total)
        .into_par_iter()
        .map(|i| {
            let actor = i / cfg.clips_per_actor;
            make_clip(cfg, i, actor, styles[actor])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(clips))
}
