use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, ConfusionMatrix};
use crate::dataset::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::model::Ensemble;
use crate::seed::{self, stream};
use crate::tensor::write_checkpoint;
use crate::train::{history_csv, train_fold, EpochRecord, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub validation_actors: Vec<u32>,
    pub train_clips: usize,
    pub validation_clips: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub best_epoch: Option<usize>,
    pub confusion: ConfusionMatrix,
    pub history: Vec<EpochRecord>,
}

/// Everything that goes into `cv_results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    /// Unweighted mean of the fold accuracies.
    pub mean_accuracy: f64,
    /// Sample standard deviation of the fold accuracies.
    pub std_accuracy: f64,
    /// Cellwise sum of the fold matrices.
    pub confusion: ConfusionMatrix,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct CvRun {
    pub report: CvReport,
    /// Selected model of each fold.
    pub models: Vec<Ensemble>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// User-independent `k`-fold cross-validation. Folds train concurrently on
/// `workers` threads; every fold owns its seed, so the result does not
/// depend on `workers`.
pub fn cross_validate(ds: &Dataset, k: usize, cfg: &TrainConfig, workers: usize) -> Result<CvRun> {
    cfg.validate()?;
    let folds = make_folds(&ds.actor_ids(), k, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<(FoldReport, Ensemble)> = pool.install(|| {
        folds
            .par_iter()
            .map(|fold| {
                let fold_cfg = TrainConfig {
                    seed: seed::derive(&[cfg.seed, stream::FOLD_RUN, fold.index as u64]),
                    ..*cfg
                };
                let run = train_fold(ds, &fold.train, &fold.validation, &fold_cfg)?;
                let eval = evaluate(&run.ensemble, ds, &fold.validation, &cfg.features, cfg.batch_size)?;
                let report = FoldReport {
                    fold: fold.index,
                    seed: fold_cfg.seed,
                    validation_actors: fold.validation_actors.clone(),
                    train_clips: fold.train.len(),
                    validation_clips: fold.validation.len(),
                    accuracy: eval.accuracy,
                    loss: eval.loss,
                    best_epoch: run.best_epoch,
                    confusion: eval.confusion,
                    history: run.history,
                };
                Ok((report, run.ensemble))
            })
            .collect::<Result<_>>()
    })?;

    let (folds, models): (Vec<FoldReport>, Vec<Ensemble>) = results.into_iter().unzip();
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let mut confusion = ConfusionMatrix::default();
    folds.iter().for_each(|f| confusion.merge(&f.confusion));
    Ok(CvRun {
        report: CvReport {
            folds,
            mean_accuracy,
            std_accuracy,
            confusion,
            config: *cfg,
        },
        models,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `cv_results.json`, `confusion.csv`, and per fold
/// `history_fold<k>.csv` and `model_fold<k>.tagg`.
pub fn write_cv(dir: &Path, run: &CvRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&run.report).expect("report serializes");
    write_file(&dir.join("cv_results.json"), json + "\n")?;
    write_file(&dir.join("confusion.csv"), run.report.confusion.to_csv())?;
    for (fold, model) in run.report.folds.iter().zip(&run.models) {
        write_file(&dir.join(format!("history_fold{}.csv", fold.fold)), history_csv(&fold.history))?;
        write_checkpoint(&dir.join(format!("model_fold{}.tagg", fold.fold)), &model.named_tensors())?;
    }
    Ok(())
}
