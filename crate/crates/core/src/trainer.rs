//! Mini-batch training with Adam and per-sample random conditional masks.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Mode, ParamStore, Scalar};
use crate::chain::{build_mask_set, build_paths, MaskSet, PermutationPaths};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{DdnError, Result};
use crate::model::{assemble_input, ConditionalMask, DdnModel, ModelConfig, ModelInput};
use crate::objective::{kl_graph, nll_graph};
use crate::rng::{streams, substream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Record wall-clock seconds in the metrics log. When off the column
    /// holds 0 so logs are reproducible byte for byte.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 256,
            epochs: 1000,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            clip_norm: None,
            record_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DdnError::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(DdnError::config("batch size must be at least 2 for batch normalization"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(DdnError::config("adam moments must lie in [0, 1) with eps > 0"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(DdnError::config("clip norm must be positive"));
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DdnError::config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| DdnError::config(format!("line {}: {key}: {e}", lineno + 1));
            match key {
                "learning_rate" => self.learning_rate = value.parse().map_err(|e| bad(&e))?,
                "batch_size" => self.batch_size = value.parse().map_err(|e| bad(&e))?,
                "epochs" => self.epochs = value.parse().map_err(|e| bad(&e))?,
                "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
                "adam_beta1" => self.adam.beta1 = value.parse().map_err(|e| bad(&e))?,
                "adam_beta2" => self.adam.beta2 = value.parse().map_err(|e| bad(&e))?,
                "adam_eps" => self.adam.eps = value.parse().map_err(|e| bad(&e))?,
                "checkpoint_every" => self.checkpoint_every = value.parse().map_err(|e| bad(&e))?,
                "clip_norm" => {
                    self.clip_norm = match value {
                        "none" | "off" | "" => None,
                        v => Some(v.parse().map_err(|e| bad(&e))?),
                    }
                }
                "record_time" => self.record_time = value.parse().map_err(|e| bad(&e))?,
                _ => return Err(DdnError::config(format!("line {}: unknown key '{key}'", lineno + 1))),
            }
        }
        self.validate()
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "adam_beta1={}", self.adam.beta1);
        let _ = writeln!(s, "adam_beta2={}", self.adam.beta2);
        let _ = writeln!(s, "adam_eps={}", self.adam.eps);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        let _ = writeln!(s, "clip_norm={}", self.clip_norm.map_or("none".to_string(), |c| c.to_string()));
        let _ = writeln!(s, "record_time={}", self.record_time);
        s
    }
}

/// First and second moments for every trainable parameter, in
/// [`ParamStore::trainable_ids`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let sizes: Vec<usize> = store.trainable_ids().into_iter().map(|id| store.get(id).len()).collect();
        Self {
            step: 0,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }
}

/// One bias-corrected Adam update from the gradients held in `store`.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>, adam: &AdamConfig, lr: f64) -> Result<()> {
    let ids = store.trainable_ids();
    if ids.len() != state.first.len() {
        return Err(DdnError::dim("optimizer state does not match the parameter set"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for (k, id) in ids.into_iter().enumerate() {
        let grad: Vec<f64> = match store.get(id).grad() {
            Some(g) => g.iter().map(|v| v.f64()).collect(),
            None => vec![0.0; store.get(id).len()],
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(DdnError::Numeric(format!("non-finite gradient for '{}'", store.name(id))));
        }
        let (m, v) = (&mut state.first[k], &mut state.second[k]);
        let values = store.get_mut(id).data_mut();
        for i in 0..values.len() {
            let mi = adam.beta1 * m[i].f64() + (1.0 - adam.beta1) * grad[i];
            let vi = adam.beta2 * v[i].f64() + (1.0 - adam.beta2) * grad[i] * grad[i];
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + adam.eps);
            values[i] = T::of(values[i].f64() - update);
        }
    }
    Ok(())
}

/// Scales all gradients so that their global L2 norm is at most `limit`.
/// Returns the norm before scaling.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, limit: f64) -> f64 {
    let ids = store.trainable_ids();
    let norm = ids
        .iter()
        .filter_map(|&id| store.get(id).grad())
        .flat_map(|g| g.iter().map(|v| v.f64() * v.f64()))
        .sum::<f64>()
        .sqrt();
    if norm > limit {
        let s = T::of(limit / norm);
        for id in ids {
            let t = store.get_mut(id);
            if let Some(g) = t.grad() {
                let scaled: Vec<T> = g.iter().map(|&v| v * s).collect();
                t.zero_grad();
                t.accumulate_grad(&scaled).expect("same length");
            }
        }
    }
    norm
}

/// Mean losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
    pub seconds: f64,
}

/// Trainable state that survives across epochs.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub model: DdnModel<f32>,
    pub adam: AdamState<f32>,
    pub paths: PermutationPaths,
    pub path_seed: u64,
    pub epochs_done: usize,
}

impl TrainingRun {
    pub fn new(model: DdnModel<f32>, paths: PermutationPaths, path_seed: u64) -> Result<Self> {
        if paths.target_dim() != model.config().target_dim {
            return Err(DdnError::dim("paths and model disagree on the target dimension"));
        }
        let adam = AdamState::new(model.params());
        Ok(Self {
            model,
            adam,
            paths,
            path_seed,
            epochs_done: 0,
        })
    }

    /// Fresh model and frozen paths for master seed `seed`: parameters come
    /// from its INIT stream and paths from its PATHS stream.
    pub fn initialize(config: ModelConfig, max_paths: usize, seed: u64) -> Result<Self> {
        let target_dim = config.target_dim;
        let model = DdnModel::new(config, &mut substream(seed, streams::INIT))?;
        let paths = build_paths(target_dim, max_paths, &mut substream(seed, streams::PATHS))?;
        Self::new(model, paths, seed)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let adam = match ck.adam {
            Some(a) => a,
            None => AdamState::new(ck.model.params()),
        };
        Ok(Self {
            model: ck.model,
            adam,
            paths: ck.paths,
            path_seed: ck.path_seed,
            epochs_done: ck.epochs,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            paths: self.paths.clone(),
            path_seed: self.path_seed,
            adam: Some(self.adam.clone()),
            epochs: self.epochs_done,
        }
    }

    pub fn mask_set(&self) -> MaskSet {
        build_mask_set(&self.paths)
    }
}

/// Generator for epoch `epoch` (1-based): shuffling, mask choice and noise.
fn epoch_rng(seed: u64, epoch: usize) -> crate::rng::DdnRng {
    substream(seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)), streams::SHUFFLE)
}

/// One shuffled pass over `data`. A trailing batch with a single row is
/// skipped. Targets outside a partition train its edge bin.
pub fn train_epoch(run: &mut TrainingRun, data: &Dataset, masks: &MaskSet, cfg: &TrainConfig) -> Result<EpochStats> {
    cfg.validate()?;
    let model_cfg = run.model.config().clone();
    if data.is_empty() {
        return Err(DdnError::Usage("cannot train on an empty dataset".into()));
    }
    if data.input_dim() != model_cfg.input_dim || data.target_dim() != model_cfg.target_dim {
        return Err(DdnError::dim(format!(
            "dataset has {} features and {} targets, model expects {} and {}",
            data.input_dim(),
            data.target_dim(),
            model_cfg.input_dim,
            model_cfg.target_dim
        )));
    }
    let epoch = run.epochs_done + 1;
    let started = cfg.record_time.then(Instant::now);
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);

    let partitions = model_cfg.partitions();
    let variational = model_cfg.variant.has_variational_layer();
    let (mut nll_sum, mut kl_sum, mut seen) = (0.0, 0.0, 0usize);
    let empty = ConditionalMask::empty(model_cfg.target_dim);

    for batch in order.chunks(cfg.batch_size) {
        if batch.len() < 2 {
            continue;
        }
        let mut parts = Vec::with_capacity(batch.len());
        let mut targets = vec![Vec::with_capacity(batch.len()); model_cfg.target_dim];
        for &r in batch {
            let mask = if model_cfg.target_dim == 1 { &empty } else { masks.choose(&mut rng) };
            parts.push(assemble_input(&model_cfg, data.x(r), data.y(r), mask)?);
            for (j, p) in partitions.iter().enumerate() {
                let y = data.y(r)[j].clamp(p.lo(), p.hi());
                targets[j].push(p.bin_index(y)?);
            }
        }
        let input = ModelInput::stack(&parts)?;
        let noise: Option<Vec<f64>> =
            variational.then(|| (0..batch.len() * model_cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect());

        let mut g = Graph::new();
        let mut pending = Vec::new();
        let out = run
            .model
            .forward_graph(&mut g, &input, Mode::Train, noise.as_deref(), Some(&mut pending))?;
        let nll = nll_graph(&mut g, &out.heads, &targets)?;
        let (loss, kl) = match (out.mu, out.sigma) {
            (Some(mu), Some(sigma)) if variational => {
                let kl = kl_graph(&mut g, mu, sigma)?;
                let weighted = g.scale(kl, model_cfg.beta as f32);
                (g.add(nll, weighted)?, Some(kl))
            }
            _ => (nll, None),
        };
        let nll_v = g.value(nll)[0] as f64;
        let kl_v = kl.map_or(0.0, |k| g.value(k)[0] as f64);
        if !nll_v.is_finite() || !kl_v.is_finite() {
            return Err(DdnError::Numeric(format!("non-finite loss in epoch {epoch} (nll {nll_v}, kl {kl_v})")));
        }

        let store = run.model.params_mut();
        store.zero_grad();
        g.backward_into(loss, store)?;
        if let Some(limit) = cfg.clip_norm {
            clip_grad_norm(store, limit);
        }
        adam_step(store, &mut run.adam, &cfg.adam, cfg.learning_rate)
            .map_err(|e| DdnError::Numeric(format!("epoch {epoch}: {e}")))?;
        for p in &pending {
            p.apply(store);
        }
        store.zero_grad();

        nll_sum += nll_v * batch.len() as f64;
        kl_sum += kl_v * batch.len() as f64;
        seen += batch.len();
    }
    run.epochs_done = epoch;
    if seen == 0 {
        return Err(DdnError::Usage("dataset too small for a batch of two".into()));
    }
    let nll = nll_sum / seen as f64;
    let kl = kl_sum / seen as f64;
    Ok(EpochStats {
        epoch,
        nll,
        kl,
        total: nll + model_cfg.beta * kl * variational as u8 as f64,
        seconds: started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
    })
}

/// Header of the metrics log. Variants without a variational layer have no
/// KL column.
pub fn metrics_header(variational: bool) -> &'static str {
    if variational {
        "epoch\tnll\tkl\ttotal\tseconds"
    } else {
        "epoch\tnll\ttotal\tseconds"
    }
}

pub fn metrics_line(s: &EpochStats, variational: bool) -> String {
    if variational {
        format!("{}\t{}\t{}\t{}\t{:.3}", s.epoch, s.nll, s.kl, s.total, s.seconds)
    } else {
        format!("{}\t{}\t{}\t{:.3}", s.epoch, s.nll, s.total, s.seconds)
    }
}

/// Output locations for [`train`].
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs<'a> {
    /// Directory receiving `metrics.tsv`, periodic `checkpoint-<epoch>.ddn`
    /// files and the final `model.ddn`.
    pub dir: Option<&'a Path>,
}

/// Runs `cfg.epochs` epochs, appending one metrics line per epoch and
/// writing checkpoints at the configured cadence.
pub fn train(run: &mut TrainingRun, data: &Dataset, cfg: &TrainConfig, outputs: TrainOutputs<'_>) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let masks = run.mask_set();
    let variational = run.model.config().variant.has_variational_layer();
    let mut log = match outputs.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = File::create(dir.join("metrics.tsv"))?;
            writeln!(f, "{}", metrics_header(variational))?;
            Some(f)
        }
        None => None,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let stats = train_epoch(run, data, &masks, cfg)?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", metrics_line(&stats, variational))?;
        }
        if let Some(dir) = outputs.dir {
            if cfg.checkpoint_every > 0 && stats.epoch % cfg.checkpoint_every == 0 {
                run.checkpoint()
                    .save(&dir.join(format!("checkpoint-{}.ddn", stats.epoch)))
                    .map_err(|e| partial_state(e, stats.epoch))?;
            }
        }
        history.push(stats);
    }
    if let Some(dir) = outputs.dir {
        run.checkpoint()
            .save(&dir.join("model.ddn"))
            .map_err(|e| partial_state(e, run.epochs_done))?;
    }
    Ok(history)
}

fn partial_state(e: DdnError, epoch: usize) -> DdnError {
    match e {
        DdnError::Io(io) => DdnError::Io(std::io::Error::new(
            io.kind(),
            format!("checkpoint write failed after epoch {epoch}; files on disk reflect an earlier state: {io}"),
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::chain::build_paths;
    use crate::model::{ModelConfig, Variant};
    use crate::rng::seeded;

    fn quadratic_store(w: f32) -> (ParamStore<f32>, crate::autodiff::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(&[1], vec![w]).unwrap(), true);
        (s, id)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut s, id) = quadratic_store(0.7);
        let mut st = AdamState::new(&s);
        s.get_mut(id).accumulate_grad(&[0.0]).unwrap();
        adam_step(&mut s, &mut st, &AdamConfig::default(), 3e-4).unwrap();
        assert_eq!(s.get(id).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let mut st = AdamState::new(&s);
        s.get_mut(id).accumulate_grad(&[0.3, -5.0, 2.0]).unwrap();
        adam_step(&mut s, &mut st, &AdamConfig::default(), 1e-2).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for (after, (before, g)) in s.get(id).data().iter().zip([(1.0, 0.3), (-2.0, -5.0), (0.5, 2.0f64)]) {
            let expected = before - 1e-2 * g / (g.abs() + 1e-8);
            assert!((after - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::new(&[1], vec![1.0]).unwrap(), true);
        let mut st = AdamState::new(&s);
        for _ in 0..2000 {
            let w = s.get(id).data()[0];
            s.zero_grad();
            s.get_mut(id).accumulate_grad(&[2.0 * w]).unwrap();
            adam_step(&mut s, &mut st, &AdamConfig::default(), 1e-2).unwrap();
        }
        assert!(s.get(id).data()[0].abs() < 1e-3, "{}", s.get(id).data()[0]);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let (mut s, id) = quadratic_store(1.0);
        let mut st = AdamState::new(&s);
        s.get_mut(id).accumulate_grad(&[f32::NAN]).unwrap();
        assert!(matches!(adam_step(&mut s, &mut st, &AdamConfig::default(), 1e-3), Err(DdnError::Numeric(_))));
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::new(&[2], vec![0.0, 0.0]).unwrap(), true);
        let b = s.add("b", Tensor::new(&[1], vec![0.0]).unwrap(), true);
        s.get_mut(a).accumulate_grad(&[3.0, 0.0]).unwrap();
        s.get_mut(b).accumulate_grad(&[4.0]).unwrap();
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        assert!((s.get(a).grad().unwrap()[0] - 0.6).abs() < 1e-12);
        assert!((s.get(b).grad().unwrap()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn config_file_round_trip() {
        let mut cfg = TrainConfig {
            clip_norm: Some(5.0),
            epochs: 12,
            ..TrainConfig::default()
        };
        let text = cfg.to_kv();
        let mut back = TrainConfig::default();
        back.apply_kv(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.apply_kv("batch_size=1").is_err());
        assert!(cfg.apply_kv("momentum=0.5").is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    }

    fn linear_gaussian(n: usize, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let e: f64 = rng.sample(StandardNormal);
            xs.push(x);
            ys.push(3.0 * x + 0.5 * e);
        }
        Dataset::new(1, 1, xs, ys).unwrap()
    }

    fn small_run(variant: Variant, beta: f64, dims: usize, seed: u64) -> TrainingRun {
        let cfg = ModelConfig::new(1, vec![(-10.0, 10.0); dims], variant, beta)
            .unwrap()
            .with_bins(64)
            .unwrap();
        let model = DdnModel::new(cfg, &mut substream(seed, streams::INIT)).unwrap();
        let paths = build_paths(dims, 5, &mut substream(seed, streams::PATHS)).unwrap();
        TrainingRun::new(model, paths, seed).unwrap()
    }

    #[test]
    fn univariate_loss_decreases() {
        let data = linear_gaussian(256, 1);
        let mut run = small_run(Variant::Ddn, 0.1, 1, 3);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let hist = train(&mut run, &data, &cfg, TrainOutputs::default()).unwrap();
        assert_eq!(hist.len(), 50);
        assert!(hist[49].nll < hist[0].nll, "{} vs {}", hist[49].nll, hist[0].nll);
    }

    #[test]
    fn larger_beta_lowers_kl() {
        let data = linear_gaussian(256, 2);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let late_kl = |beta: f64| {
            let mut run = small_run(Variant::Ddn, beta, 1, 8);
            let hist = train(&mut run, &data, &cfg, TrainOutputs::default()).unwrap();
            hist[50..].iter().map(|s| s.kl).sum::<f64>() / 10.0
        };
        let (free, pressed) = (late_kl(0.0), late_kl(0.5));
        assert!(pressed < free, "kl with beta 0.5: {pressed}, beta 0: {free}");
    }

    #[test]
    fn same_seed_same_trace() {
        let data = crate::data::ToyTask::ElasticRing.generate(100, &mut seeded(4));
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            seed: 11,
            record_time: false,
            ..TrainConfig::default()
        };
        let mut a = small_run(Variant::Ddn, 0.1, 2, 5);
        let mut b = small_run(Variant::Ddn, 0.1, 2, 5);
        let ha = train(&mut a, &data, &cfg, TrainOutputs::default()).unwrap();
        let hb = train(&mut b, &data, &cfg, TrainOutputs::default()).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.model.params().iter().map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>(),
                   b.model.params().iter().map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = crate::data::ToyTask::Squares.generate(20, &mut seeded(4));
        let mut run = small_run(Variant::Ddn, 0.1, 2, 5);
        let before = run.model.params().clone();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(&mut run, &data, &cfg, TrainOutputs::default()).unwrap().is_empty());
        for ((_, a), (_, b)) in before.iter().zip(run.model.params().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn singleton_tail_batch_is_dropped() {
        let data = crate::data::ToyTask::Squares.generate(5, &mut seeded(4));
        let mut run = small_run(Variant::Mlp, 0.0, 2, 5);
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let masks = run.mask_set();
        train_epoch(&mut run, &data, &masks, &cfg).unwrap();
        assert_eq!(run.adam.step, 1);
    }

    #[test]
    fn every_mask_gets_drawn() {
        let paths = build_paths(3, 5, &mut seeded(2)).unwrap();
        let masks = build_mask_set(&paths);
        let mut rng = epoch_rng(1, 1);
        let mut hits = vec![0usize; masks.len()];
        for _ in 0..100 * masks.len() {
            let m = masks.choose(&mut rng);
            hits[masks.masks().iter().position(|x| x == m).unwrap()] += 1;
        }
        assert!(hits.iter().all(|&h| h > 0), "{hits:?}");
    }

    #[test]
    fn metrics_columns_follow_variant() {
        let dir = tempfile::tempdir().unwrap();
        let data = crate::data::ToyTask::Squares.generate(40, &mut seeded(4));
        let cfg = TrainConfig { epochs: 2, batch_size: 16, record_time: false, checkpoint_every: 1, ..TrainConfig::default() };
        let mut mlp = small_run(Variant::Mlp, 0.1, 2, 1);
        train(&mut mlp, &data, &cfg, TrainOutputs { dir: Some(dir.path()) }).unwrap();
        let log = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
        assert!(log.starts_with("epoch\tnll\ttotal\tseconds\n"));
        assert_eq!(log.lines().count(), 3);
        assert!(dir.path().join("checkpoint-2.ddn").exists());
        assert!(dir.path().join("model.ddn").exists());
    }
}
