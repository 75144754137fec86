//! Accuracy against segment count on a noisier synthetic corpus.
//!
//! cargo run --release --example segment_sweep -- [noise] [epochs] [repeats] [N...]

use tempagg::dataset::{generate_synthetic, SynthConfig};
use tempagg::eval::sweep_segments;
use tempagg::train::TrainConfig;

fn main() -> tempagg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let noise = args.first().and_then(|a| a.parse().ok()).unwrap_or(0.15);
    let epochs = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let repeats = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(1);
    let mut ns: Vec<usize> = args.iter().skip(3).filter_map(|a| a.parse().ok()).collect();
    if ns.is_empty() {
        ns = vec![1, 2, 4];
    }

    let ds = generate_synthetic(&SynthConfig {
        noise,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let sweep = sweep_segments(&ds, &ns, 5, &cfg, repeats, 1)?;
    print!("{}", sweep.to_csv());
    for p in &sweep.points {
        println!("N={} per repeat {:?}", p.segments, p.repeat_acc);
    }
    Ok(())
}
