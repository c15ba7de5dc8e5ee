use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use super::checkpoint::{Checkpoint, ModelKind, SeedLineage};
use super::RunConfig;
use crate::denoiser::{Srcnn, UNet};
use crate::diffusion::{stack_conditions, training_loss, ConditionInput};
use crate::grids::{gen_synthetic_dataset, load_pairs, DatasetManifest, Grid, SamplePair, Split};
use crate::numerics::{Shape, Tensor};
use crate::preprocess::{fit_stats, NormStats};
use crate::rng::{derive_seed, rng_from};
use crate::{Error, Result};

/// Loss log rows averaged for the reported final loss.
pub const FINAL_LOSS_WINDOW: usize = 100;
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 100;

pub const UNET_CHECKPOINT: &str = "unet.rsck";
pub const UNET_LOSS_LOG: &str = "unet_loss.csv";
pub const SRCNN_CHECKPOINT: &str = "srcnn.rsck";
pub const SRCNN_LOSS_LOG: &str = "srcnn_loss.csv";

/// The configured manifest, or a synthetic set generated under
/// `out_dir/data`.
pub fn resolve_dataset(config: &RunConfig) -> Result<DatasetManifest> {
    match &config.manifest {
        Some(path) => DatasetManifest::load(path),
        None => {
            let dir = config.out_dir.join("data");
            gen_synthetic_dataset(config.synthetic_spec(), &dir)?;
            DatasetManifest::load(dir.join("manifest.tsv"))
        }
    }
}

/// Pairs of one split ordered by id, so results do not depend on manifest
/// order.
pub fn sorted_pairs(manifest: &DatasetManifest, split: Split) -> Result<Vec<SamplePair>> {
    let mut pairs = load_pairs(manifest, split)?;
    if pairs.is_empty() {
        return Err(Error::Manifest(format!("{split} split is empty")));
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    let dims = pairs[0].hr.dims();
    if let Some(p) = pairs.iter().find(|p| p.hr.dims() != dims) {
        return Err(Error::Shape {
            op: "dataset",
            detail: format!("`{}` is {:?}, expected {dims:?}", p.id, p.hr.dims()),
        });
    }
    Ok(pairs)
}

/// Mean and standard deviation of elevation pooled over all pairs.
pub fn topo_moments(pairs: &[SamplePair]) -> (f64, f64) {
    let values = || pairs.iter().flat_map(|p| p.topo.values().iter().map(|&v| f64::from(v)));
    let n = values().count() as f64;
    let mean = values().sum::<f64>() / n;
    let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-12))
}

/// Training targets in model range with their conditioning.
pub struct TrainingSet {
    pub targets: Vec<Grid>,
    pub conds: Vec<ConditionInput>,
    pub norm: NormStats,
    pub topo_moments: (f64, f64),
}

impl TrainingSet {
    pub fn new(pairs: &[SamplePair], gamma: f64, use_topo: bool) -> Result<Self> {
        let norm = fit_stats(pairs.iter().map(|p| &p.hr), gamma)?;
        let moments = topo_moments(pairs);
        let targets = pairs
            .iter()
            .map(|p| norm.encode(p.hr.grid()))
            .collect::<Result<_>>()?;
        let conds = pairs
            .iter()
            .map(|p| ConditionInput::from_pair(p, &norm, moments, use_topo))
            .collect::<Result<_>>()?;
        Ok(TrainingSet {
            targets,
            conds,
            norm,
            topo_moments: moments,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Single-channel batch tensor from same-sized grids.
pub(crate) fn stack_grids(grids: &[&Grid]) -> Result<Tensor<f32>> {
    let (h, w) = grids[0].dims();
    let mut data = Vec::with_capacity(grids.len() * h * w);
    for g in grids {
        data.extend_from_slice(g.values());
    }
    Tensor::from_vec(Shape::new(grids.len(), 1, h, w), data)
}

/// Result of a training run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        window_mean(&self.losses, self.losses.len(), FINAL_LOSS_WINDOW)
    }
}

/// Mean of the `window` losses ending at 1-based step `end`.
pub fn window_mean(losses: &[f64], end: usize, window: usize) -> f64 {
    let end = end.min(losses.len());
    let start = end.saturating_sub(window);
    let slice = &losses[start..end];
    slice.iter().sum::<f64>() / slice.len().max(1) as f64
}

fn loss_csv(losses: &[f64], lr: f64) -> String {
    let mut out = String::from("step,loss,lr\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{},{l},{lr}", i + 1).expect("writing to a string");
    }
    out
}

fn write_log(path: &Path, losses: &[f64], lr: f64) -> Result<()> {
    std::fs::write(path, loss_csv(losses, lr))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Divergence {
    initial: Option<f64>,
    run: usize,
}

impl Divergence {
    fn check(&mut self, step: usize, loss: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if loss > DIVERGENCE_FACTOR * initial {
            self.run += 1;
        } else {
            self.run = 0;
        }
        if self.run >= DIVERGENCE_PATIENCE {
            return Err(Error::Divergence(format!(
                "loss stayed above {DIVERGENCE_FACTOR}x the initial {initial:.4} for \
                 {DIVERGENCE_PATIENCE} steps (step {step}, loss {loss:.4})"
            )));
        }
        Ok(())
    }
}

/// Loads the training split; the returned config carries the field size of
/// the data actually used.
fn prepare(config: &RunConfig) -> Result<(TrainingSet, RunConfig)> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(format!("creating {}", config.out_dir.display()), e))?;
    let manifest = resolve_dataset(config)?;
    let pairs = sorted_pairs(&manifest, Split::Train)?;
    let (h, w) = pairs[0].hr.dims();
    if h != w {
        return Err(Error::Shape {
            op: "dataset",
            detail: format!("fields must be square, found {h}x{w}"),
        });
    }
    config.unet_config().check_input(h, w)?;
    let data = TrainingSet::new(&pairs, config.gamma, config.use_topo)?;
    Ok((data, RunConfig { size: h, ..config.clone() }))
}

/// Trains the noise predictor; `on_step` sees every `(step, loss)`.
pub fn train_unet(config: &RunConfig, mut on_step: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    let (data, config) = prepare(config)?;
    let config = &config;
    let schedule = config.schedule()?;
    let seeds = SeedLineage {
        seed: config.seed,
        init: derive_seed(config.seed, "init"),
        batches: derive_seed(config.seed, "train-batches"),
    };
    let mut net = UNet::<f32>::new(config.unet_config(), seeds.init)?;
    let mut opt = net.params().optimizer(config.adamw());
    let mut rng = rng_from(seeds.batches, "stream");
    let (h, w) = data.targets[0].dims();
    let b = config.batch_size;
    let ck_path = config.out_dir.join(UNET_CHECKPOINT);
    let log_path = config.out_dir.join(UNET_LOSS_LOG);
    let mut losses = Vec::with_capacity(config.train_steps);
    let mut guard = Divergence { initial: None, run: 0 };

    let snapshot = |net: &UNet<f32>, opt: &[_], step: usize| Checkpoint {
        model: ModelKind::Unet,
        config: config.portable(),
        norm: data.norm,
        topo_moments: data.topo_moments,
        step: step as u64,
        seeds,
        params: net.params().values_only(),
        optimizer: config.save_optimizer.then(|| opt.to_vec()),
    };

    for step in 1..=config.train_steps {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.len())).collect();
        let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
        let eps_data: Vec<f32> = (0..b * h * w)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        let eps = Tensor::from_vec(Shape::new(b, 1, h, w), eps_data)?;
        let y0 = stack_grids(&idx.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>())?;
        let picked: Vec<ConditionInput> = idx.iter().map(|&i| data.conds[i].clone()).collect();
        let cond = stack_conditions::<f32>(&picked)?;

        net.params_mut().zero_grads();
        let loss = training_loss(&mut net, &y0, &cond, &t, &eps, &schedule)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
                other => other,
            })?;
        net.params_mut().adamw_step(&mut opt)?;
        losses.push(loss);
        on_step(step, loss);
        guard.check(step, loss)?;

        if step % config.checkpoint_every == 0 || step == config.train_steps {
            snapshot(&net, &opt, step).save(&ck_path)?;
            write_log(&log_path, &losses, config.lr)?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&net, &opt, config.train_steps),
        losses,
        checkpoint_path: ck_path,
        log_path,
    })
}

/// Trains the SRCNN baseline to map the upsampled low-resolution field to
/// the high-resolution target, both in model range.
pub fn train_srcnn(config: &RunConfig, mut on_step: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    let (data, config) = prepare(config)?;
    let config = &config;
    let seeds = SeedLineage {
        seed: config.seed,
        init: derive_seed(config.seed, "srcnn-init"),
        batches: derive_seed(config.seed, "srcnn-batches"),
    };
    let mut net = Srcnn::<f32>::new(seeds.init);
    let hyper = crate::numerics::AdamW {
        lr: config.srcnn_lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    };
    let mut opt = net.params().optimizer(hyper);
    let mut rng = rng_from(seeds.batches, "stream");
    let ck_path = config.out_dir.join(SRCNN_CHECKPOINT);
    let log_path = config.out_dir.join(SRCNN_LOSS_LOG);
    let mut losses = Vec::with_capacity(config.srcnn_steps);
    let mut guard = Divergence { initial: None, run: 0 };

    for step in 1..=config.srcnn_steps {
        let idx: Vec<usize> = (0..config.srcnn_batch_size)
            .map(|_| rng.random_range(0..data.len()))
            .collect();
        let input = stack_grids(&idx.iter().map(|&i| &data.conds[i].lr_up).collect::<Vec<_>>())?;
        let target = stack_grids(&idx.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>())?;
        net.params_mut().zero_grads();
        let loss = net.mse_step(&input, &target)?;
        net.params_mut().adamw_step(&mut opt)?;
        losses.push(loss);
        on_step(step, loss);
        guard.check(step, loss)?;
    }
    write_log(&log_path, &losses, config.srcnn_lr)?;
    let checkpoint = Checkpoint {
        model: ModelKind::Srcnn,
        config: config.portable(),
        norm: data.norm,
        topo_moments: data.topo_moments,
        step: config.srcnn_steps as u64,
        seeds,
        params: net.params().values_only(),
        optimizer: config.save_optimizer.then_some(opt),
    };
    checkpoint.save(&ck_path)?;
    Ok(TrainOutcome {
        checkpoint,
        losses,
        checkpoint_path: ck_path,
        log_path,
    })
}
