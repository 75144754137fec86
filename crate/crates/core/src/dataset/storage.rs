//! One directory per clip:
//!
//! - `audio.f32`  raw little-endian `f32` samples
//! - `frames.u8`  `T*C*H*W` bytes, row-major; pixel value is `byte / 255`
//! - `meta.json`  label, actor, rates and dims
//!
//! plus a top-level `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Clip, Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const AUDIO_FILE: &str = "audio.f32";
const FRAMES_FILE: &str = "frames.u8";
const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub label: usize,
    pub actor_id: u32,
    pub fps: f64,
    pub audio_rate: u32,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: usize,
    pub actor_id: u32,
    pub frames: usize,
    pub fps: f64,
    pub audio_rate: u32,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub clips: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        read_json(&path, "manifest")
    }

    /// Checks that every referenced clip directory exists and class ids are valid.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        if self.class_names.len() != NUM_CLASSES {
            return Err(Error::format(
                dir.join(MANIFEST_FILE),
                "class_names",
                0,
                format!("expected {NUM_CLASSES} names, found {}", self.class_names.len()),
            ));
        }
        let missing: Vec<String> = self
            .clips
            .iter()
            .filter(|e| !dir.join(&e.path).is_dir())
            .map(|e| dir.join(&e.path).display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "manifest references missing clip directories: {}",
                missing.join(", ")
            )));
        }
        if let Some(e) = self.clips.iter().find(|e| e.label >= NUM_CLASSES) {
            return Err(Error::invalid(format!(
                "clip {} has class id {} (must be < {NUM_CLASSES})",
                e.path, e.label
            )));
        }
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, field: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        let offset = text
            .lines()
            .take(e.line().saturating_sub(1))
            .map(|l| l.len() + 1)
            .sum::<usize>()
            + e.column().saturating_sub(1);
        Error::format(path, field, offset as u64, e.to_string())
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn clip_dir_name(index: usize) -> String {
    format!("clip_{index:03}")
}

/// Frames are stored quantized to bytes; clips whose pixels are multiples
/// of 1/255 round-trip bitwise.
pub fn save_clip(clip: &Clip, dir: &Path) -> Result<()> {
    clip.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [channels, height, width] = clip.frame_dims();
    let meta = ClipMeta {
        label: clip.label,
        actor_id: clip.actor_id,
        fps: clip.fps,
        audio_rate: clip.audio.rate,
        frames: clip.num_frames(),
        channels,
        height,
        width,
        samples: clip.audio.len(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write(&dir.join(META_FILE), json.as_bytes())?;
    let audio: Vec<u8> = clip.audio.samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    write(&dir.join(AUDIO_FILE), &audio)?;
    let frames: Vec<u8> = clip
        .frames
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write(&dir.join(FRAMES_FILE), &frames)
}

fn expect_len(path: &Path, field: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::format(
            path,
            field,
            got.min(want) as u64,
            format!("expected {want} bytes, found {got}"),
        ));
    }
    Ok(())
}

pub fn load_clip(dir: &Path) -> Result<Clip> {
    let meta: ClipMeta = read_json(&dir.join(META_FILE), "meta")?;
    let audio_path = dir.join(AUDIO_FILE);
    let raw = fs::read(&audio_path).map_err(|e| Error::io(&audio_path, e))?;
    expect_len(&audio_path, "samples", raw.len(), meta.samples * 4)?;
    let samples = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let frames_path = dir.join(FRAMES_FILE);
    let raw = fs::read(&frames_path).map_err(|e| Error::io(&frames_path, e))?;
    let n = meta.frames * meta.channels * meta.height * meta.width;
    expect_len(&frames_path, "frames", raw.len(), n)?;
    let pixels = raw.iter().map(|&b| b as f32 / 255.0).collect();

    let frames = Tensor::new(&[meta.frames, meta.channels, meta.height, meta.width], pixels)
        .map_err(|e| Error::format(&frames_path, "frames", 0, e.to_string()))?;
    let audio = Waveform::new(samples, meta.audio_rate)
        .map_err(|e| Error::format(&audio_path, "samples", 0, e.to_string()))?;
    Clip::new(frames, audio, meta.label, meta.actor_id, meta.fps)
        .map_err(|e| Error::format(dir.join(META_FILE), "meta", 0, e.to_string()))
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ds.clips
        .par_iter()
        .enumerate()
        .try_for_each(|(i, c)| save_clip(c, &dir.join(clip_dir_name(i))))?;
    let manifest = Manifest {
        class_names: ds.class_names.clone(),
        clips: ds
            .clips
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let [_, height, width] = c.frame_dims();
                ManifestEntry {
                    path: clip_dir_name(i),
                    label: c.label,
                    actor_id: c.actor_id,
                    frames: c.num_frames(),
                    fps: c.fps,
                    audio_rate: c.audio.rate,
                    height,
                    width,
                }
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(dir)?;
    manifest.validate(dir)?;
    let clips = manifest
        .clips
        .par_iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.path);
            let clip = load_clip(&path)?;
            if clip.label != e.label || clip.actor_id != e.actor_id {
                return Err(Error::format(
                    dir.join(MANIFEST_FILE),
                    format!("clips[{}]", e.path),
                    0,
                    "label or actor disagrees with the clip's meta.json",
                ));
            }
            Ok(clip)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        clips,
        class_names: manifest.class_names,
    })
}
