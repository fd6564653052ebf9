//! The deterministic training loop: batch scheduling, augmentation, loss
//! logging and checkpointing. Given identical seed, config and data it
//! produces identical CSV lines and checkpoint bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use jaffnet_core::data::{flip_transform, normalize, salt_pepper, train_transform, Sample};
use jaffnet_core::loss::LossBreakdown;
use jaffnet_core::model::JaffNet;
use jaffnet_core::optim::{Adam, AdamConfig};
use jaffnet_core::train::{stack_samples, train_step};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{Augment, RunConfig};
use crate::dataset::Dataset;
use crate::error::{CliError, Result};

/// Seed salts keeping batch ordering and augmentation draws on separate
/// streams of the run seed.
const ORDER_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const AUGMENT_STREAM: u64 = 0xd1b5_4a32_d192_ed03;

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub first_total: f64,
    pub last_total: f64,
    pub final_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

fn csv_header() -> String {
    let mut header = String::from("step");
    for side in 1..=5 {
        for term in ["bce", "iou", "ssim"] {
            header.push_str(&format!(",side{side}_{term}"));
        }
    }
    header.push_str(",total\n");
    header
}

fn csv_row(step: u64, breakdown: &LossBreakdown) -> String {
    let mut row = step.to_string();
    for terms in &breakdown.per_output {
        row.push_str(&format!(",{:?},{:?},{:?}", terms.bce, terms.iou, terms.ssim));
    }
    row.push_str(&format!(",{:?}\n", breakdown.total));
    row
}

/// Epoch-shuffled sample indices, refilled deterministically.
struct BatchSchedule {
    rng: ChaCha8Rng,
    n: usize,
    queue: Vec<usize>,
}

impl BatchSchedule {
    fn new(seed: u64, n: usize) -> Self {
        BatchSchedule { rng: ChaCha8Rng::seed_from_u64(seed ^ ORDER_STREAM), n, queue: Vec::new() }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.queue.is_empty() {
                let mut perm: Vec<usize> = (0..self.n).collect();
                perm.shuffle(&mut self.rng);
                perm.reverse();
                self.queue = perm;
            }
            batch.push(self.queue.pop().expect("queue was just refilled"));
        }
        batch
    }
}

/// Trains per the run configuration, writing `loss.csv`, periodic
/// checkpoints and a final `model.ckpt` into the output directory.
pub fn cmd_train(run: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    run.validate()?;
    let dataset = Dataset::scan(data_dir)?;
    let mut samples = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        samples.push(dataset.load(i)?);
    }
    if run.augment != Augment::Paper {
        let [_, _, h0, w0] = samples[0].image.shape();
        for (sample, stem) in samples.iter().zip(dataset.stems()) {
            let [_, _, h, w] = sample.image.shape();
            if (h, w) != (h0, w0) {
                return Err(CliError::Data(format!(
                    "image {stem}.png is {h}x{w} but the dataset started at {h0}x{w0}; \
                     mixed sizes need augment = paper"
                )));
            }
        }
        if h0 % 16 != 0 || w0 % 16 != 0 {
            return Err(CliError::Data(format!(
                "image size {h0}x{w0} is not divisible by 16; resize the data or use augment = paper"
            )));
        }
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let loss_csv = out_dir.join("loss.csv");
    let mut csv = BufWriter::new(File::create(&loss_csv).map_err(|e| {
        CliError::Data(format!("output dir not writable: {}: {e}", loss_csv.display()))
    })?);
    csv.write_all(csv_header().as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", loss_csv.display())))?;

    let mut model = JaffNet::<f32>::new(&run.network(), run.seed)?;
    let adam_config = AdamConfig { learning_rate: run.learning_rate, ..AdamConfig::default() };
    let mut adam = Adam::new(adam_config, &model.params)?;
    let loss_config = run.loss();

    let batches_per_epoch = dataset.len().div_ceil(run.batch_size) as u64;
    let steps = match run.epochs {
        Some(epochs) => epochs * batches_per_epoch,
        None => run.steps,
    };

    let mut schedule = BatchSchedule::new(run.seed, dataset.len());
    let mut aug_rng = ChaCha8Rng::seed_from_u64(run.seed ^ AUGMENT_STREAM);
    let mut first_total = 0.0;
    let mut last_total = 0.0;
    for step in 1..=steps {
        let mut batch = Vec::with_capacity(run.batch_size);
        for index in schedule.next_batch(run.batch_size) {
            let aug_seed: u64 = aug_rng.random();
            let noise_seed: u64 = aug_rng.random();
            let augmented = match run.augment {
                Augment::Paper => train_transform(&samples[index], aug_seed),
                Augment::Flip => flip_transform(&samples[index], aug_seed),
                Augment::None => samples[index].clone(),
            };
            let image = if run.noise_rho > 0.0 {
                salt_pepper(&augmented.image, run.noise_rho, noise_seed)?
            } else {
                augmented.image
            };
            batch.push(Sample::new(normalize(&image), augmented.mask)?);
        }
        let (images, targets) = stack_samples(&batch)?;
        let breakdown = train_step(&mut model, &mut adam, &images, &targets, &loss_config)?;
        if step == 1 {
            first_total = breakdown.total;
        }
        last_total = breakdown.total;
        csv.write_all(csv_row(step, &breakdown).as_bytes())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", loss_csv.display())))?;

        if run.checkpoint_every > 0 && step % run.checkpoint_every == 0 && step != steps {
            let path = out_dir.join(format!("ckpt_{step:06}.ckpt"));
            checkpoint::save(&path, run, &model, Some(&adam), step)?;
        }
    }
    csv.flush()
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", loss_csv.display())))?;

    let final_checkpoint = out_dir.join("model.ckpt");
    checkpoint::save(&final_checkpoint, run, &model, Some(&adam), steps)?;
    Ok(TrainOutcome { steps, first_total, last_total, final_checkpoint, loss_csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{write_synth, SynthArgs};

    fn synth_dir(dir: &Path, count: usize, seed: u64) {
        write_synth(
            dir,
            &SynthArgs {
                count,
                image_size: 32,
                kind: None,
                background: None,
                contrast: None,
                noise_rho: 0.0,
                seed,
            },
        )
        .unwrap();
    }

    fn tiny_run(steps: u64) -> RunConfig {
        let mut run = RunConfig::default();
        run.base_width = 4;
        run.batch_size = 2;
        run.steps = steps;
        run.seed = 3;
        run
    }

    #[test]
    fn training_writes_monotone_csv_and_loadable_checkpoint() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        synth_dir(data.path(), 4, 1);

        let outcome = cmd_train(&tiny_run(5), data.path(), out.path()).unwrap();
        assert_eq!(outcome.steps, 5);

        let csv = std::fs::read_to_string(&outcome.loss_csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("step,side1_bce"));
        assert!(lines[0].ends_with(",total"));
        for (i, line) in lines[1..].iter().enumerate() {
            let step: u64 = line.split(',').next().unwrap().parse().unwrap();
            assert_eq!(step, i as u64 + 1, "steps must increase one at a time");
        }

        let loaded = crate::checkpoint::load(&outcome.final_checkpoint).unwrap();
        assert_eq!(loaded.step, 5);
        let mut model = JaffNet::<f32>::new(&loaded.config.network(), 0).unwrap();
        crate::checkpoint::apply(&mut model, &loaded).unwrap();
    }

    #[test]
    fn identical_runs_match_byte_for_byte() {
        let data = tempfile::tempdir().unwrap();
        synth_dir(data.path(), 4, 2);
        let (out_a, out_b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());

        let mut run = tiny_run(4);
        run.noise_rho = 0.05;
        let a = cmd_train(&run, data.path(), out_a.path()).unwrap();
        let b = cmd_train(&run, data.path(), out_b.path()).unwrap();

        assert_eq!(
            std::fs::read(&a.loss_csv).unwrap(),
            std::fs::read(&b.loss_csv).unwrap(),
            "loss logs diverged"
        );
        assert_eq!(
            std::fs::read(&a.final_checkpoint).unwrap(),
            std::fs::read(&b.final_checkpoint).unwrap(),
            "checkpoints diverged"
        );
    }

    #[test]
    fn empty_dataset_fails_before_writing_anything() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(data.path().join("images")).unwrap();
        std::fs::create_dir_all(data.path().join("masks")).unwrap();

        let err = cmd_train(&tiny_run(2), data.path(), out.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(!out.path().join("loss.csv").exists());
    }

    #[test]
    fn epochs_override_the_step_budget() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        synth_dir(data.path(), 4, 5);

        let mut run = tiny_run(99);
        run.epochs = Some(2);
        run.batch_size = 3;
        let outcome = cmd_train(&run, data.path(), out.path()).unwrap();
        assert_eq!(outcome.steps, 4, "2 epochs of ceil(4/3) batches");
    }

    #[test]
    fn disabled_deep_supervision_trains_only_the_final_output() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        synth_dir(data.path(), 2, 6);

        let mut run = tiny_run(1);
        run.deep_supervision = false;
        let outcome = cmd_train(&run, data.path(), out.path()).unwrap();

        let csv = std::fs::read_to_string(&outcome.loss_csv).unwrap();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let side_terms: Vec<f64> = row[1..16].iter().map(|v| v.parse().unwrap()).collect();
        assert!(side_terms[..12].iter().all(|&v| v == 0.0), "sides 1-4 should not contribute");
        assert!(side_terms[12..].iter().all(|&v| v > 0.0), "the final output must contribute");
        let total: f64 = row[16].parse().unwrap();
        let sum: f64 = side_terms[12..].iter().sum();
        assert!((total - sum).abs() < 1e-5, "total {total} vs final-side sum {sum}");
    }

    #[test]
    fn periodic_checkpoints_appear_at_the_configured_cadence() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        synth_dir(data.path(), 2, 7);

        let mut run = tiny_run(5);
        run.checkpoint_every = 2;
        cmd_train(&run, data.path(), out.path()).unwrap();
        assert!(out.path().join("ckpt_000002.ckpt").exists());
        assert!(out.path().join("ckpt_000004.ckpt").exists());
        assert!(!out.path().join("ckpt_000005.ckpt").exists());
        assert!(out.path().join("model.ckpt").exists());
    }
}
