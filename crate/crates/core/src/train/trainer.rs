use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adan::Adan;
use super::checkpoint::{BestRecord, Checkpoint};
use super::config::TrainConfig;
use super::eval::{evaluate, EvalOptions, EvalReport};
use super::schedule::lr_schedule;
use crate::code::ExposureCode;
use crate::data::{
    augment, derive_seed, load_window, make_training_example, window_refs, Augmentation,
    DatasetManifest, SampleMode, WindowRef,
};
use crate::error::{Error, Result};
use crate::frames::FrameStack;
use crate::loss::{total_loss_with, LossOptions, LossReport};
use crate::nn::{Bdinr, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: LossReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub lr: f64,
    pub char: f64,
    pub ssim: f64,
    pub edge: f64,
    pub reblur: f64,
    pub total: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let val = match (self.val_psnr, self.val_ssim) {
            (Some(p), Some(s)) => format!("{p:.3} dB ssim {s:.4}"),
            _ => "-".into(),
        };
        format!(
            "epoch {} lr {:.3e} loss {:.5e} char {:.5e} ssim {:.5e} edge {:.5e} reblur {:.5e} val_psnr {}",
            self.epoch + 1,
            self.lr,
            self.total,
            self.char,
            self.ssim,
            self.edge,
            self.reblur,
            val
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where `best.ckpt`, `last.ckpt` and diagnostics go; nothing is written
    /// when unset (except a non-finite-loss dump, which then goes to the
    /// system temp directory).
    pub out_dir: Option<PathBuf>,
}

pub struct Trainer {
    config: TrainConfig,
    code: ExposureCode,
    net: Bdinr,
    opt: Adan,
    train_set: DatasetManifest,
    val_set: Option<DatasetManifest>,
    windows_per_epoch: usize,
    step: u64,
    best: Option<BestRecord>,
    history: Vec<StepRecord>,
    epochs: Vec<EpochLog>,
    last_eval: Option<EvalReport>,
    epoch_order: Option<(u64, Vec<WindowRef>)>,
    opts: TrainOptions,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        train_set: DatasetManifest,
        val_set: Option<DatasetManifest>,
        opts: TrainOptions,
    ) -> Result<Self> {
        config.validate()?;
        let net = Bdinr::new(config.network_config()?, config.seed, config.precision.dtype())?;
        let opt = Adan::new(config.optimizer.clone())?;
        Self::assemble(config, net, opt, train_set, val_set, opts)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        train_set: DatasetManifest,
        val_set: Option<DatasetManifest>,
        opts: TrainOptions,
    ) -> Result<Self> {
        let config = ckpt
            .train
            .clone()
            .ok_or_else(|| Error::Checkpoint("no training config stored; cannot resume".into()))?;
        config.validate()?;
        let net = ckpt.build_network()?;
        let opt = match ckpt.build_optimizer()? {
            Some(o) => o,
            None => Adan::new(config.optimizer.clone())?,
        };
        let mut t = Self::assemble(config, net, opt, train_set, val_set, opts)?;
        t.step = ckpt.step;
        t.best = ckpt.best;
        Ok(t)
    }

    fn assemble(
        config: TrainConfig,
        net: Bdinr,
        opt: Adan,
        train_set: DatasetManifest,
        val_set: Option<DatasetManifest>,
        opts: TrainOptions,
    ) -> Result<Self> {
        let code = config.effective_code()?;
        let windows_per_epoch = window_refs(&train_set, config.window, SampleMode::Eval)?.len();
        if windows_per_epoch == 0 {
            return Err(Error::Manifest {
                path: train_set.root.clone(),
                reason: "no training windows".into(),
            });
        }
        if let Some(v) = &val_set {
            window_refs(v, config.window, SampleMode::Eval)?;
        }
        Ok(Self {
            config,
            code,
            net,
            opt,
            train_set,
            val_set,
            windows_per_epoch,
            step: 0,
            best: None,
            history: Vec::new(),
            epochs: Vec::new(),
            last_eval: None,
            epoch_order: None,
            opts,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn code(&self) -> &ExposureCode {
        &self.code
    }

    pub fn network(&self) -> &Bdinr {
        &self.net
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn best(&self) -> Option<BestRecord> {
        self.best
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn epoch_logs(&self) -> &[EpochLog] {
        &self.epochs
    }

    pub fn last_eval(&self) -> Option<&EvalReport> {
        self.last_eval.as_ref()
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.windows_per_epoch.div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.config.epochs * self.steps_per_epoch()
    }

    pub fn warmup_steps(&self) -> u64 {
        self.config.warmup_epochs * self.steps_per_epoch()
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn current_lr(&self) -> Result<f64> {
        lr_schedule(
            self.step.min(self.total_steps() - 1),
            self.total_steps(),
            self.warmup_steps(),
            self.config.lr_init,
            self.config.lr_final,
        )
    }

    fn epoch_windows(&mut self, epoch: u64) -> Result<&[WindowRef]> {
        let stale = !matches!(&self.epoch_order, Some((e, _)) if *e == epoch);
        if stale {
            let mut refs = window_refs(
                &self.train_set,
                self.config.window,
                SampleMode::Train {
                    seed: self.config.seed,
                    epoch,
                },
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, 2, epoch));
            refs.shuffle(&mut rng);
            self.epoch_order = Some((epoch, refs));
        }
        Ok(&self.epoch_order.as_ref().expect("just filled").1)
    }

    fn crop_window(&self, stack: FrameStack, sample_seed: u64) -> Result<FrameStack> {
        let crop = self.config.crop;
        if self.config.augment {
            return augment(&stack, crop, sample_seed);
        }
        let (h, w, _) = stack.frame_shape();
        if (h, w) == (crop, crop) {
            return Ok(stack);
        }
        Augmentation::center(h, w, crop)?.apply(&stack)
    }

    /// One optimizer step on the batch determined by the current step index.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        let spe = self.steps_per_epoch();
        let epoch = self.step / spe;
        let in_epoch = (self.step % spe) as usize;
        let bs = self.config.batch_size;
        let refs: Vec<WindowRef> = {
            let all = self.epoch_windows(epoch)?;
            all[in_epoch * bs..((in_epoch + 1) * bs).min(all.len())].to_vec()
        };

        let dtype = self.net.dtype();
        let dev = Device::Cpu;
        let mut snaps = Vec::with_capacity(refs.len());
        let mut gts = Vec::with_capacity(refs.len());
        for (k, r) in refs.iter().enumerate() {
            let sample_seed = derive_seed(self.config.seed, 3, self.step * bs as u64 + k as u64);
            let stack = load_window(&self.train_set, *r, self.config.window)?;
            let stack = self.crop_window(stack, sample_seed)?;
            let (lo, hi) = (self.config.noise_sigma_range[0], self.config.noise_sigma_range[1]);
            let ex = make_training_example(
                &stack,
                &self.code,
                (lo, hi),
                derive_seed(sample_seed, 4, 0),
                self.config.normalization,
            )?;
            snaps.push(ex.snapshot.image.to_tensor(dtype, &dev)?);
            gts.push(ex.gt.to_tensor(dtype, &dev)?);
        }
        let snapshot = Tensor::stack(&snaps, 0)?;
        let gt = Tensor::stack(&gts, 0)?;

        let lr = self.current_lr()?;
        let pred = self.net.forward(&snapshot, Mode::Train)?;
        let terms = total_loss_with(
            &pred,
            &gt,
            &self.code,
            &snapshot,
            &self.config.loss_weights,
            LossOptions {
                charbonnier: self.config.charbonnier,
                normalization: self.config.normalization,
            },
        )?;
        if !terms.report.total.is_finite() {
            return Err(self.dump_nonfinite(&snapshot)?);
        }
        let grads = terms.total.backward()?;
        self.opt.step(self.net.params(), &grads, lr)?;

        let rec = StepRecord {
            step: self.step,
            epoch,
            lr,
            loss: terms.report,
        };
        self.history.push(rec);
        self.step += 1;
        Ok(rec)
    }

    fn dump_nonfinite(&self, snapshot: &Tensor) -> Result<Error> {
        let dir = self
            .opts
            .out_dir
            .clone()
            .unwrap_or_else(std::env::temp_dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let dump = dir.join(format!("nonfinite_step{}.png", self.step));
        let first = snapshot.narrow(0, 0, 1)?;
        crate::frames::Image::from_tensor(&first)?
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .save_png(&dump)?;
        log::error!("non-finite loss at step {}; snapshot saved to {}", self.step, dump.display());
        Ok(Error::NonFiniteLoss {
            step: self.step,
            dump,
        })
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            noise_sigma: self.config.eval_noise_sigma,
            seed: self.config.seed,
            normalization: self.config.normalization,
            crop: None,
        }
    }

    /// Evaluates the current weights on the validation manifest, falling back
    /// to the training manifest.
    pub fn validate(&self) -> Result<EvalReport> {
        let set = self.val_set.as_ref().unwrap_or(&self.train_set);
        evaluate(&self.net, set, self.config.window, &self.eval_options())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::from_network(&self.net)?.with_optimizer(&self.opt)?;
        c.train = Some(self.config.clone());
        c.step = self.step;
        c.best = self.best;
        Ok(c)
    }

    fn save_as(&self, name: &str) -> Result<()> {
        if let Some(dir) = &self.opts.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.checkpoint()?.save(&dir.join(name))?;
        }
        Ok(())
    }

    fn finish_epoch(&mut self, epoch: u64) -> Result<()> {
        let recs: Vec<&StepRecord> = self.history.iter().filter(|r| r.epoch == epoch).collect();
        let avg = |f: fn(&LossReport) -> f64| {
            recs.iter().map(|r| f(&r.loss)).sum::<f64>() / recs.len().max(1) as f64
        };
        let is_last = epoch + 1 == self.config.epochs;
        let mut log_line = EpochLog {
            epoch,
            lr: recs.last().map_or(f64::NAN, |r| r.lr),
            char: avg(|l| l.char),
            ssim: avg(|l| l.ssim),
            edge: avg(|l| l.edge),
            reblur: avg(|l| l.reblur),
            total: avg(|l| l.total),
            val_psnr: None,
            val_ssim: None,
        };
        if (epoch + 1) % self.config.val_every == 0 || is_last {
            let report = self.validate()?;
            log_line.val_psnr = Some(report.psnr);
            log_line.val_ssim = Some(report.ssim);
            let improved = self.best.is_none_or(|b| report.psnr > b.psnr);
            if improved {
                self.best = Some(BestRecord {
                    epoch,
                    step: self.step,
                    psnr: report.psnr,
                });
                self.save_as("best.ckpt")?;
            }
            self.last_eval = Some(report);
        }
        log::info!("{}", log_line.line());
        self.epochs.push(log_line);
        self.save_as("last.ckpt")
    }

    /// Trains until the schedule ends or `max_steps` more steps have run.
    pub fn run(&mut self, max_steps: Option<u64>) -> Result<()> {
        let stop = max_steps.map_or(self.total_steps(), |m| (self.step + m).min(self.total_steps()));
        let spe = self.steps_per_epoch();
        while self.step < stop {
            let rec = self.train_step()?;
            if self.step % spe == 0 {
                self.finish_epoch(rec.epoch)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
    pub epochs: Vec<EpochLog>,
    pub final_eval: Option<EvalReport>,
}

/// Runs a full training session and returns the last checkpoint.
pub fn train(
    config: TrainConfig,
    train_set: DatasetManifest,
    val_set: Option<DatasetManifest>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(
        config,
        train_set,
        val_set,
        TrainOptions {
            out_dir: out_dir.map(Path::to_path_buf),
        },
    )?;
    t.run(None)?;
    Ok(TrainOutcome {
        checkpoint: t.checkpoint()?,
        history: t.history,
        epochs: t.epochs,
        final_eval: t.last_eval,
    })
}
