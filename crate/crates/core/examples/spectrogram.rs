//! Log-power spectrogram of a chirp, resized to the network grid and
//! written as an 8-bit PGM.
//!
//! cargo run --release --example spectrogram -- [out.pgm]

use std::f64::consts::PI;

use tempagg::signal::{choose_hop, resize_bilinear, stft_log_power, Waveform, DEFAULT_WINDOW};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "chirp.pgm".into());
    let rate = 16_000u32;
    let secs = 1.28;
    let n = (rate as f64 * secs).round() as usize;
    // 300 Hz rising to 3 kHz
    let (f0, f1) = (300.0, 3000.0);
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let phase = 2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / secs * t * t);
            phase.sin() as f32
        })
        .collect();
    let wave = Waveform::new(samples, rate)?;

    let hop = choose_hop(wave.len(), DEFAULT_WINDOW);
    let spec = stft_log_power(&wave, DEFAULT_WINDOW, hop)?;
    let peaks = spec.peak_bins();
    let hz = |bin: usize| bin as f64 * rate as f64 / DEFAULT_WINDOW as f64;
    println!("{} bins x {} frames, hop {hop}", spec.bins, spec.frames);
    println!("peak at first frame {:.0} Hz, last frame {:.0} Hz", hz(peaks[0]), hz(peaks[peaks.len() - 1]));

    let small = resize_bilinear(&spec, 48, 48)?;
    std::fs::write(&out, small.to_pgm())?;
    println!("wrote {out} (48x48)");
    Ok(())
}
