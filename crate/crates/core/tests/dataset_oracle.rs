//! The synthetic task is solvable and its labels come from the declared
//! class signatures.

use tempagg::dataset::{generate_synthetic, Clip, SynthConfig, NUM_CLASSES};
use tempagg::signal::{choose_hop, stft_log_power, DEFAULT_WINDOW};

/// Time-averaged log spectrum (unit scaled) followed by the mean frame.
fn features(clip: &Clip) -> Vec<f64> {
    let hop = choose_hop(clip.audio.len(), DEFAULT_WINDOW);
    let spec = stft_log_power(&clip.audio, DEFAULT_WINDOW, hop).unwrap();
    let unit = spec.unit_scaled();
    let mut out: Vec<f64> = (0..spec.bins)
        .map(|b| unit[b * spec.frames..(b + 1) * spec.frames].iter().map(|&v| v as f64).sum::<f64>() / spec.frames as f64)
        .collect();
    let plane = clip.frames.len() / clip.num_frames();
    let mut mean_frame = vec![0.0; plane];
    for j in 0..clip.num_frames() {
        mean_frame.iter_mut().zip(clip.frame(j)).for_each(|(m, &v)| *m += v as f64 / clip.num_frames() as f64);
    }
    out.extend(mean_frame);
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[test]
fn nearest_neighbour_separates_held_out_actors() {
    let cfg = SynthConfig::default();
    let ds = generate_synthetic(&cfg).unwrap();
    let feats: Vec<Vec<f64>> = ds.clips.iter().map(features).collect();
    let held_out = [0u32, 7, 15, 22, 29];
    let (mut hits, mut total) = (0, 0);
    for (i, clip) in ds.clips.iter().enumerate() {
        if !held_out.contains(&clip.actor_id) {
            continue;
        }
        let nearest = ds
            .clips
            .iter()
            .enumerate()
            .filter(|(_, c)| !held_out.contains(&c.actor_id))
            .min_by(|(a, _), (b, _)| dist(&feats[i], &feats[*a]).total_cmp(&dist(&feats[i], &feats[*b])))
            .map(|(j, _)| j)
            .unwrap();
        hits += (ds.clips[nearest].label == clip.label) as usize;
        total += 1;
    }
    let acc = hits as f64 / total as f64;
    assert!(acc >= 0.8, "1-NN accuracy {acc:.3} on {total} held-out clips");
}

#[test]
fn noiseless_spectrum_peaks_at_the_carrier() {
    use tempagg::dataset::{carrier_hz, ActorStyle};
    let cfg = SynthConfig {
        num_actors: 1,
        clips_per_actor: NUM_CLASSES,
        noise: 0.0,
        frames: 30,
        height: 8,
        width: 8,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let bin_hz = cfg.audio_rate as f64 / DEFAULT_WINDOW as f64;
    let style = ActorStyle::draw(cfg.seed, 0);
    for clip in &ds.clips {
        let spec = stft_log_power(&clip.audio, DEFAULT_WINDOW, 128).unwrap();
        // time-averaged power, in linear units
        let mean: Vec<f64> = (0..spec.bins)
            .map(|b| (0..spec.frames).map(|t| 10f64.powf(spec.get(b, t) as f64 / 10.0)).sum())
            .collect();
        let peak = (0..spec.bins).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        let f = carrier_hz(clip.label) * (1.0 + style.pitch);
        let expected = f / bin_hz;
        assert!((peak as f64 - expected).abs() <= 1.0, "class {} peak bin {peak}, carrier at bin {expected:.2}", clip.label);
    }
}
