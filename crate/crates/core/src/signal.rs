//! Audio windows to fixed-size log-power spectrogram images.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const FLOOR_DB: f32 = -80.0;
pub const DEFAULT_WINDOW: usize = 512;
/// Minimum STFT frame count targeted by [`choose_hop`].
pub const MIN_FRAMES: usize = 120;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must hold at least one sample"));
        }
        if rate == 0 {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "waveform" });
        }
        Ok(Waveform { samples, rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

/// Log-power grid, `bins` rows (frequency) by `frames` columns (time),
/// row-major. Values are dB relative to the maximum, in `[floor_db, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<f32>,
    pub window: usize,
    pub hop: usize,
    pub floor_db: f32,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f32 {
        self.values[bin * self.frames + frame]
    }

    /// Column of the loudest bin in every frame.
    pub fn peak_bins(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| {
                (0..self.bins)
                    .max_by(|&a, &b| self.get(a, t).total_cmp(&self.get(b, t)).then(b.cmp(&a)))
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Values rescaled from `[floor_db, 0]` to `[0, 1]`.
    pub fn unit_scaled(&self) -> Vec<f32> {
        let span = -self.floor_db;
        self.values.iter().map(|&v| (v - self.floor_db) / span).collect()
    }

    /// Binary PGM (P5), highest frequency on the top row,
    /// `floor_db -> 0` and `0 dB -> 255`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.frames, self.bins).into_bytes();
        for bin in (0..self.bins).rev() {
            for t in 0..self.frames {
                let unit = ((self.get(bin, t) - self.floor_db) / -self.floor_db).clamp(0.0, 1.0);
                out.push((unit * 255.0).round() as u8);
            }
        }
        out
    }
}

pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    1 + (len - window) / hop
}

/// Largest hop giving at least [`MIN_FRAMES`] frames, else `window / 4`.
pub fn choose_hop(len: usize, window: usize) -> usize {
    if len >= window + MIN_FRAMES - 1 {
        ((len - window) / (MIN_FRAMES - 1)).max(1)
    } else {
        (window / 4).max(1)
    }
}

/// Reusable short-time Fourier transform for one window size.
pub struct Stft {
    window: usize,
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(window: usize) -> Result<Self> {
        if window < 2 {
            return Err(Error::invalid("STFT window must be at least 2 samples"));
        }
        // periodic Hann
        let taper = (0..window)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / window as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(window);
        Ok(Stft { window, taper, fft })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Power spectra, one `window/2 + 1` row per frame.
    pub fn power_frames(&self, samples: &[f32], hop: usize) -> Result<Vec<Vec<f64>>> {
        if samples.len() < self.window {
            return Err(Error::invalid(format!(
                "waveform of {} samples is shorter than the {}-sample window",
                samples.len(),
                self.window
            )));
        }
        if hop == 0 {
            return Err(Error::invalid("hop must be at least 1"));
        }
        let frames = frame_count(samples.len(), self.window, hop);
        let bins = self.window / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.window];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let seg = &samples[f * hop..f * hop + self.window];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.taper) {
                *b = Complex::new(s as f64 * w, 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..bins].iter().map(|c| c.norm_sqr()).collect());
        }
        Ok(out)
    }

    pub fn log_power(&self, w: &Waveform, hop: usize) -> Result<Spectrogram> {
        let frames = self.power_frames(&w.samples, hop)?;
        Ok(log_power_from_frames(&frames, self.window, hop))
    }
}

fn log_power_from_frames(power: &[Vec<f64>], window: usize, hop: usize) -> Spectrogram {
    let frames = power.len();
    let bins = window / 2 + 1;
    let peak = power
        .iter()
        .flat_map(|f| f.iter().copied())
        .fold(0.0f64, f64::max);
    let mut values = vec![FLOOR_DB; bins * frames];
    if peak > 0.0 {
        for (t, row) in power.iter().enumerate() {
            for (k, &p) in row.iter().enumerate() {
                let db = if p > 0.0 {
                    10.0 * (p / peak).log10()
                } else {
                    f64::NEG_INFINITY
                };
                values[k * frames + t] = (db as f32).max(FLOOR_DB);
            }
        }
    }
    Spectrogram {
        bins,
        frames,
        values,
        window,
        hop,
        floor_db: FLOOR_DB,
    }
}

/// Hann-windowed STFT, power in dB relative to the global maximum,
/// floored at [`FLOOR_DB`].
pub fn stft_log_power(w: &Waveform, window: usize, hop: usize) -> Result<Spectrogram> {
    Stft::new(window)?.log_power(w, hop)
}

/// Bilinear resize on a corner-aligned grid; a single output row or
/// column samples the centre of the source.
pub fn resize_bilinear(s: &Spectrogram, out_h: usize, out_w: usize) -> Result<Spectrogram> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target extents must be positive"));
    }
    let values = resize_grid(&s.values, s.bins, s.frames, out_h, out_w);
    Ok(Spectrogram {
        bins: out_h,
        frames: out_w,
        values,
        window: s.window,
        hop: s.hop,
        floor_db: s.floor_db,
    })
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub(crate) fn resize_grid(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let rows = sample_positions(h, out_h);
    let cols = sample_positions(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let at = |r: usize, c: usize| src[r * w + c] as f64;
            let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
            let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
            out.push((top * (1.0 - fr) + bottom * fr) as f32);
        }
    }
    out
}
