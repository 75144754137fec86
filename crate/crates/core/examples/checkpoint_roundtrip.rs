//! Saves an untrained ensemble, reloads it and checks that the clip scores
//! are unchanged bit for bit.
//!
//! cargo run --release --example checkpoint_roundtrip

use std::path::Path;

use tempagg::dataset::{generate_synthetic, SynthConfig};
use tempagg::model::{Ensemble, Sharing};
use tempagg::pipeline::{FeatureConfig, FeatureExtractor};
use tempagg::sampler::SamplingMode;
use tempagg::tensor::{decode_checkpoint, encode_checkpoint};

fn main() -> tempagg::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        num_actors: 2,
        clips_per_actor: 3,
        ..SynthConfig::default()
    })?;
    let fx = FeatureExtractor::new(FeatureConfig::default())?;
    let segments = fx.config().sampler.segments;
    let ens = Ensemble::new(segments, Sharing::Independent, 1, 5)?;

    let bytes = encode_checkpoint(&ens.named_tensors());
    let entries = decode_checkpoint(&bytes, Path::new("<memory>"))?;
    let back = Ensemble::from_named(&entries, segments)?;
    for e in entries.iter().take(4) {
        println!("{:<24} {:?}", e.name, e.tensor.shape());
    }
    println!("{} tensors, {} bytes", entries.len(), bytes.len());

    let ids: Vec<usize> = (0..ds.len()).collect();
    let batches = fx.batch(&ds, &ids, SamplingMode::Deterministic, 0, 0)?;
    let (a, b) = (ens.scores(&batches)?, back.scores(&batches)?);
    println!("scores identical after reload: {}", a == b);
    Ok(())
}
