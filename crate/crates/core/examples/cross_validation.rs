//! User-independent cross-validation on a reduced synthetic corpus, with
//! the report files written to a directory.
//!
//! cargo run --release --example cross_validation -- [out_dir] [epochs]

use tempagg::dataset::{generate_synthetic, SynthConfig};
use tempagg::eval::{cross_validate, write_cv};
use tempagg::train::TrainConfig;

fn main() -> tempagg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "cv_out".into());
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);

    let ds = generate_synthetic(&SynthConfig {
        num_actors: 12,
        clips_per_actor: 6,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default().with_segments(2)
    };
    let run = cross_validate(&ds, 3, &cfg, 1)?;
    for f in &run.report.folds {
        println!(
            "fold {}: actors {:?} accuracy {:.3} (best epoch {:?})",
            f.fold, f.validation_actors, f.accuracy, f.best_epoch
        );
    }
    println!("mean {:.3} +/- {:.3}", run.report.mean_accuracy, run.report.std_accuracy);
    print!("{}", run.report.confusion.to_csv());
    write_cv(out.as_ref(), &run)?;
    println!("reports in {out}");
    Ok(())
}
