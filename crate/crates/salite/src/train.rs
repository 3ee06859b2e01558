//! Training driver: data loading, the step loop, logs and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use salite_core::checkpoint::Checkpoint;
use salite_core::data::Sample;
use salite_core::optim::Trainer;

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::io::{load_sample, write_file};
use crate::manifest::Manifest;

/// Final checkpoint name inside the output directory.
pub const FINAL: &str = "final.salt";
pub const LOG: &str = "train.log";

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:06}.salt")
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &ck.encode())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(Checkpoint::decode(&bytes)?)
}

/// Every manifest row as a sample at `size`, in manifest order.
pub fn load_samples(manifest: &Manifest, size: usize) -> Result<Vec<Sample>> {
    manifest
        .rows
        .iter()
        .map(|row| load_sample(&row.image, &row.mask, size).map_err(|e| manifest.row_error(row, e)))
        .collect()
}

/// Where a run starts from.
pub enum Start<'a> {
    Fresh,
    /// Continue a saved run. Its model and training settings are kept; only
    /// `trainer.max_steps` and `trainer.checkpoint_every` come from the
    /// current configuration.
    Resume(&'a Path),
}

/// Train on `manifest`, writing `train.log`, periodic checkpoints and
/// [`FINAL`] to `out_dir`. Log lines (`step, loss, lr_enc, lr_dec`,
/// tab-separated) also go to `echo`.
pub fn train_loop(manifest: &Manifest, cfg: &RunConfig, out_dir: &Path, start: Start<'_>, echo: &mut dyn Write) -> Result<Checkpoint> {
    if manifest.is_empty() {
        return Err(AppError::Invalid(format!("{}: manifest has no rows", manifest.source.display())));
    }
    let mut trainer = match start {
        Start::Fresh => Trainer::new(&cfg.model, &cfg.train)?,
        Start::Resume(path) => {
            let mut t = load_checkpoint(path)?.trainer()?;
            t.cfg.max_steps = cfg.train.max_steps;
            t.cfg.checkpoint_every = cfg.train.checkpoint_every;
            t
        }
    };
    let resumed = matches!(start, Start::Resume(_));
    let data = load_samples(manifest, trainer.model.spec.input_size)?;

    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let log_path = out_dir.join(LOG);
    let mut log = open_log(&log_path, resumed)?;
    let every = trainer.cfg.checkpoint_every;
    while !trainer.done() {
        let step = trainer.step;
        let (lr_enc, lr_dec) = trainer.cfg.lr_schedule(step);
        let stats = trainer.step(&data).map_err(|e| match e {
            salite_core::Error::NonFinite { op, .. } => AppError::Diverged { step, term: op.into() },
            e => e.into(),
        })?;
        let line = format!("{}\t{:.6}\t{}\t{}\n", trainer.step, stats.loss, lr_enc, lr_dec);
        log.write_all(line.as_bytes()).map_err(|e| AppError::io(&log_path, e))?;
        let _ = echo.write_all(line.as_bytes());
        if every > 0 && trainer.step % every == 0 {
            save_checkpoint(&out_dir.join(checkpoint_name(trainer.step)), &Checkpoint::from_trainer(&trainer))?;
        }
    }
    let ck = Checkpoint::from_trainer(&trainer);
    save_checkpoint(&out_dir.join(FINAL), &ck)?;
    Ok(ck)
}

fn open_log(path: &PathBuf, append: bool) -> Result<File> {
    let mut opts = OpenOptions::new();
    if append {
        opts.create(true).append(true);
    } else {
        opts.create(true).write(true).truncate(true);
    }
    opts.open(path).map_err(|e| AppError::io(path, e))
}
