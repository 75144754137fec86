//! Trains one user-independent fold of the synthetic corpus and prints the
//! per-epoch history.
//!
//! cargo run --release --example train_fold -- [epochs] [segments] [noise]

use std::time::Instant;

use tempagg::dataset::{generate_synthetic, make_folds, SynthConfig};
use tempagg::train::{history_csv, train_fold, TrainConfig};

fn main() -> tempagg::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let segments = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);

    let noise = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.05);

    let ds = generate_synthetic(&SynthConfig {
        noise,
        ..SynthConfig::default()
    })?;
    let folds = make_folds(&ds.actor_ids(), 5, 1)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default().with_segments(segments)
    };
    let start = Instant::now();
    let run = train_fold(&ds, &folds[0].train, &folds[0].validation, &cfg)?;
    print!("{}", history_csv(&run.history));
    println!(
        "best epoch {:?}, {:.1}s for {} clips",
        run.best_epoch,
        start.elapsed().as_secs_f64(),
        folds[0].train.len()
    );
    Ok(())
}
