//! Draws the asynchronous (frame, audio window) pairs of one clip for two
//! training epochs and prints them next to the deterministic evaluation draw.
//!
//! cargo run --release --example segment_sampling -- [segments]

use tempagg::dataset::{generate_synthetic, SynthConfig};
use tempagg::pipeline::{FeatureConfig, FeatureExtractor};
use tempagg::sampler::{partition, SamplerConfig, SamplingMode};

fn main() -> tempagg::Result<()> {
    let segments = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let ds = generate_synthetic(&SynthConfig {
        num_actors: 1,
        clips_per_actor: 1,
        ..SynthConfig::default()
    })?;
    let clip = &ds.clips[0];
    let fx = FeatureExtractor::new(FeatureConfig {
        sampler: SamplerConfig {
            segments,
            ..SamplerConfig::default()
        },
        ..FeatureConfig::default()
    })?;
    let ranges = partition(clip.num_frames(), segments)?;
    println!(
        "{} frames at {} fps, {} audio samples at {} Hz",
        clip.num_frames(),
        clip.fps,
        clip.audio.len(),
        clip.audio.rate
    );
    println!("mode,epoch,segment,frames,frame,offset_s,audio_first,audio_last");
    let draws = [(SamplingMode::Deterministic, 0), (SamplingMode::Stochastic, 0), (SamplingMode::Stochastic, 1)];
    for (mode, epoch) in draws {
        for (input, range) in fx.segments(0, clip, mode, 1, epoch)?.iter().zip(&ranges) {
            let s = &input.sample;
            println!(
                "{mode:?},{epoch},{},{}..{},{},{:+.4},{},{}",
                s.segment_index,
                range.start,
                range.end,
                s.frame_index,
                s.center_s - s.frame_index as f64 / clip.fps,
                s.audio_first,
                s.audio_last
            );
        }
    }
    Ok(())
}
