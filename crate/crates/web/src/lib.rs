//! WebAssembly bindings for the browser demo: oracle densities, task
//! samples and a small model trained in the page.

use ddn::chain::{joint_grid, DensityGrid, MaskSet};
use ddn::data::{Dataset, ToyTask, TOY_RANGE};
use ddn::evaluator::{oracle_grid, sse};
use ddn::model::{ModelConfig, Variant};
use ddn::rng::{streams, substream};
use ddn::trainer::{train_epoch, TrainConfig, TrainingRun};
use wasm_bindgen::prelude::*;

/// Bins per dimension of the in-browser model.
pub const DEMO_BINS: usize = 64;

fn js(e: ddn::DdnError) -> JsError {
    JsError::new(&e.to_string())
}

fn grid_geometry(resolution: usize, x: f64) -> ddn::Result<DensityGrid> {
    DensityGrid::new(
        vec![TOY_RANGE; 2],
        vec![resolution; 2],
        vec![x],
        vec![0.0; resolution * resolution],
    )
}

/// Ground-truth density on a `resolution`² grid, first target slowest.
pub fn oracle_values(task: &str, x: f64, resolution: usize) -> ddn::Result<Vec<f64>> {
    let task: ToyTask = task.parse()?;
    let grid = oracle_grid(&grid_geometry(resolution, x)?, |y| task.density(x, [y[0], y[1]]))?;
    Ok(grid.values().to_vec())
}

/// `n` draws of `y | x` as interleaved `y0, y1` pairs.
pub fn sample_values(task: &str, x: f64, n: usize, seed: u32) -> ddn::Result<Vec<f64>> {
    let task: ToyTask = task.parse()?;
    let mut rng = substream(seed.into(), streams::DATA);
    Ok((0..n).flat_map(|_| task.sample(x, &mut rng)).collect())
}

#[wasm_bindgen(js_name = oracleDensity)]
pub fn oracle_density(task: &str, x: f64, resolution: usize) -> Result<Vec<f64>, JsError> {
    oracle_values(task, x, resolution).map_err(js)
}

#[wasm_bindgen(js_name = sampleTask)]
pub fn sample_task(task: &str, x: f64, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    sample_values(task, x, n, seed).map_err(js)
}

/// A model being trained on one toy task.
pub struct Session {
    task: ToyTask,
    data: Dataset,
    run: TrainingRun,
    masks: MaskSet,
    config: TrainConfig,
}

impl Session {
    pub fn new(task: &str, variant: &str, beta: f64, n: usize, seed: u32) -> ddn::Result<Self> {
        let task: ToyTask = task.parse()?;
        let variant: Variant = variant.parse()?;
        let seed = u64::from(seed);
        let data = task.generate(n, &mut substream(seed, streams::DATA));
        let cfg = ModelConfig::new(1, vec![TOY_RANGE; 2], variant, beta)?.with_bins(DEMO_BINS)?;
        let run = TrainingRun::initialize(cfg, ddn::chain::DEFAULT_MAX_PATHS, seed)?;
        let masks = run.mask_set();
        let config = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 128,
            seed,
            record_time: false,
            ..TrainConfig::default()
        };
        Ok(Self {
            task,
            data,
            run,
            masks,
            config,
        })
    }

    /// Runs `epochs` epochs and returns the last mean total loss.
    pub fn train(&mut self, epochs: usize) -> ddn::Result<f64> {
        let mut last = f64::NAN;
        for _ in 0..epochs {
            last = train_epoch(&mut self.run, &self.data, &self.masks, &self.config)?.total;
        }
        Ok(last)
    }

    pub fn epochs(&self) -> usize {
        self.run.epochs_done
    }

    /// Estimated joint density at `resolution` cells per dimension.
    pub fn density(&self, x: f64, resolution: usize) -> ddn::Result<Vec<f64>> {
        Ok(joint_grid(&self.run.model, &[x], &self.run.paths, Some(resolution))?.values().to_vec())
    }

    /// SSE between the estimate and the oracle on the full bin grid.
    pub fn sse(&self, x: f64) -> ddn::Result<f64> {
        let est = joint_grid(&self.run.model, &[x], &self.run.paths, None)?;
        let task = self.task;
        let truth = oracle_grid(&est, |y| task.density(x, [y[0], y[1]]))?;
        sse(&est, &truth)
    }
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str, variant: &str, beta: f64, n: usize, seed: u32) -> Result<Demo, JsError> {
        Session::new(task, variant, beta, n, seed).map(Demo).map_err(js)
    }

    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        self.0.train(epochs).map_err(js)
    }

    pub fn epochs(&self) -> usize {
        self.0.epochs()
    }

    pub fn density(&self, x: f64, resolution: usize) -> Result<Vec<f64>, JsError> {
        self.0.density(x, resolution).map_err(js)
    }

    pub fn sse(&self, x: f64) -> Result<f64, JsError> {
        self.0.sse(x).map_err(js)
    }
}
