use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ddn::checkpoint::Checkpoint;
use ddn::data::{
    load_tabular, read_dataset, read_sidecar, sidecar_path, write_dataset, Dataset, Sidecar, ToyTask, EVAL_CONDITIONS,
    TOY_RANGE,
};
use ddn::evaluator::{
    head_entropy, oracle_grid, test_log_likelihood, trial_suite, EvalReport, Summary, TrialRecord,
};
use ddn::model::{DdnModel, ModelConfig, Variant};
use ddn::rng::{streams, substream, trial_seed};
use ddn::trainer::{train as run_training, TrainConfig, TrainOutputs, TrainingRun};
use ddn::DdnError;

use crate::manifest::RunManifest;
use crate::{EvalArgs, GenerateArgs, ModelArgs, ReproduceArgs, TrainArgs, TrainingArgs};

const MODEL_FILE: &str = "model.ddn";
const TOY_EPOCHS: usize = 5000;
const TABULAR_EPOCHS: usize = 3000;
const BETA_SWEEP: [f64; 3] = [0.5, 0.1, 0.02];

fn usage(msg: impl Into<String>) -> anyhow::Error {
    DdnError::Usage(msg.into()).into()
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| DdnError::Config(format!("range '{text}' must look like lo:hi")))?;
    let parse = |v: &str| -> Result<f64> {
        v.trim()
            .parse()
            .map_err(|_| DdnError::Config(format!("range bound '{v}' is not a number")).into())
    };
    Ok((parse(lo)?, parse(hi)?))
}

fn model_config(m: &ModelArgs, input_dim: usize, default_ranges: Vec<(f64, f64)>) -> Result<ModelConfig> {
    let ranges = if m.ranges.is_empty() {
        default_ranges
    } else {
        let r: Vec<(f64, f64)> = m.ranges.iter().map(|s| parse_range(s)).collect::<Result<_>>()?;
        if r.len() != default_ranges.len() {
            return Err(DdnError::Config(format!(
                "{} --range flags given for {} target dimensions",
                r.len(),
                default_ranges.len()
            ))
            .into());
        }
        r
    };
    Ok(ModelConfig::new(input_dim, ranges, m.variant, m.beta)?.with_bins(m.bins)?)
}

fn training_config(t: &TrainingArgs, default_epochs: usize) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        epochs: default_epochs,
        ..TrainConfig::default()
    };
    if let Some(path) = &t.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_kv(&text)?;
    }
    if let Some(e) = t.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = t.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = t.batch_size {
        cfg.batch_size = b;
    }
    if let Some(c) = t.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if t.clip_norm.is_some() {
        cfg.clip_norm = t.clip_norm;
    }
    if t.no_time {
        cfg.record_time = false;
    }
    if let Some(s) = t.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run metadata stored next to a checkpoint as `model.ddn.meta`.
fn write_meta(model_path: &Path, meta: &Sidecar) -> ddn::Result<()> {
    let mut text = String::new();
    for (k, v) in meta {
        let _ = writeln!(text, "{k}={v}");
    }
    fs::write(sidecar_path(model_path), text)?;
    Ok(())
}

/// Trains a fresh model seeded by `tc.seed` and writes its artifacts to `dir`.
fn fit(train: &Dataset, cfg: ModelConfig, paths_k: usize, tc: &TrainConfig, dir: &Path) -> Result<TrainingRun> {
    let mut run = TrainingRun::initialize(cfg, paths_k, tc.seed)?;
    run_training(&mut run, train, tc, TrainOutputs { dir: Some(dir) })?;
    Ok(run)
}

fn config_entries(m: &mut RunManifest, cfg: &ModelConfig, tc: &TrainConfig, paths_k: usize) {
    m.set("variant", cfg.variant);
    m.set("beta", cfg.beta);
    m.set("bins", cfg.bins);
    m.set("latent_dim", cfg.latent_dim);
    m.set("paths_k", paths_k);
    let ranges: Vec<String> = cfg.ranges.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
    m.set("ranges", ranges.join(" "));
    for line in tc.to_kv().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.set(&format!("train.{k}"), v);
        }
    }
}

pub fn generate(a: &GenerateArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::start("generate", args);
    let task: ToyTask = a.task.parse()?;
    let data = task.generate(a.n, &mut substream(a.seed, streams::DATA));
    let meta = Sidecar::from([
        ("task".to_string(), task.name().to_string()),
        ("n".into(), a.n.to_string()),
        ("seed".into(), a.seed.to_string()),
    ]);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_dataset(&a.out, &data, &meta).with_context(|| format!("writing {}", a.out.display()))?;
    manifest.set("task", task);
    manifest.set("n", a.n);
    manifest.seeds.push(a.seed);
    manifest.artifacts = vec![a.out.clone(), sidecar_path(&a.out)];
    println!("wrote {} samples of {task} to {}", a.n, a.out.display());
    manifest.write(&manifest_path_for_file(&a.out))
}

fn manifest_path_for_file(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

struct TrainingSet {
    data: Dataset,
    ranges: Vec<(f64, f64)>,
    meta: Sidecar,
}

fn training_set(a: &TrainArgs, seed: u64, trial: u64) -> Result<TrainingSet> {
    let mut meta = Sidecar::new();
    if let Some(path) = &a.data {
        let data = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
        let side = read_sidecar(path).unwrap_or_default();
        meta.insert("source".into(), "data".into());
        meta.insert("path".into(), path.display().to_string());
        let ranges = match side.get("task") {
            Some(t) => {
                meta.insert("task".into(), t.clone());
                vec![TOY_RANGE; data.target_dim()]
            }
            None => data.padded_ranges(),
        };
        Ok(TrainingSet { data, ranges, meta })
    } else {
        let path = a.table.as_ref().expect("clap requires --data or --table");
        let tab = load_tabular(path, &a.targets, seed, trial).with_context(|| format!("loading {}", path.display()))?;
        meta.insert("source".into(), "table".into());
        meta.insert("path".into(), path.display().to_string());
        meta.insert("targets".into(), a.targets.join(","));
        Ok(TrainingSet {
            ranges: tab.ranges(),
            data: tab.train,
            meta,
        })
    }
}

pub fn train(a: &TrainArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::start("train", args);
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let base = training_config(&a.training, TrainConfig::default().epochs)?;
    fs::create_dir_all(&a.out)?;
    manifest.inputs.extend(a.data.iter().chain(&a.table).cloned());
    for trial in 0..a.trials as u64 {
        let seed = trial_seed(base.seed, trial);
        let set = training_set(a, seed, trial)?;
        let cfg = model_config(&a.model, set.data.input_dim(), set.ranges)?;
        let tc = TrainConfig { seed, ..base.clone() };
        let dir = if a.trials == 1 { a.out.clone() } else { a.out.join(format!("trial-{trial}")) };
        if trial == 0 {
            config_entries(&mut manifest, &cfg, &tc, a.model.paths_k);
        }
        let run = fit(&set.data, cfg, a.model.paths_k, &tc, &dir)?;
        let mut meta = set.meta;
        meta.insert("seed".into(), seed.to_string());
        meta.insert("trial".into(), trial.to_string());
        write_meta(&dir.join(MODEL_FILE), &meta)?;
        manifest.seeds.push(seed);
        manifest.artifacts.extend([dir.join(MODEL_FILE), dir.join("metrics.tsv")]);
        println!(
            "trial {trial}: trained {} for {} epochs on {} samples -> {}",
            run.model.config().variant,
            run.epochs_done,
            set.data.len(),
            dir.join(MODEL_FILE).display()
        );
    }
    manifest.write(&a.out.join("manifest.json"))
}

fn find_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(DdnError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no checkpoint at {}", path.display()),
        ))
        .into());
    }
    if path.join(MODEL_FILE).is_file() {
        return Ok(vec![path.join(MODEL_FILE)]);
    }
    let mut trials: Vec<(u64, PathBuf)> = fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let t = name.strip_prefix("trial-")?.parse().ok()?;
            let p = e.path().join(MODEL_FILE);
            p.is_file().then_some((t, p))
        })
        .collect();
    trials.sort();
    if trials.is_empty() {
        return Err(usage(format!("{} holds no {MODEL_FILE} or trial-*/{MODEL_FILE}", path.display())));
    }
    Ok(trials.into_iter().map(|(_, p)| p).collect())
}

fn check_dims(model: &DdnModel, data: &Dataset) -> Result<()> {
    let c = model.config();
    if c.input_dim != data.input_dim() || c.target_dim != data.target_dim() {
        return Err(DdnError::Dimension(format!(
            "checkpoint expects {} features and {} targets, data has {} and {}",
            c.input_dim,
            c.target_dim,
            data.input_dim(),
            data.target_dim()
        ))
        .into());
    }
    Ok(())
}

fn meta_u64(meta: &Sidecar, key: &str) -> Result<Option<u64>> {
    meta.get(key)
        .map(|v| v.parse().map_err(|_| anyhow!(DdnError::Format(format!("bad {key} '{v}' in run metadata")))))
        .transpose()
}

struct ToyEval {
    sse: Vec<f64>,
    ll: f64,
    entropy: f64,
}

fn eval_toy(
    model: &DdnModel,
    paths: &ddn::chain::PermutationPaths,
    task: ToyTask,
    conditions: &[f64],
    test: &Dataset,
) -> Result<ToyEval> {
    check_dims(model, test)?;
    let sse = ddn::evaluator::toy_sse(model, paths, task, conditions)?;
    let ll = test_log_likelihood(model, test, &model.config().partitions(), paths)?.mean;
    let rows: Vec<Vec<f64>> = conditions.iter().map(|&x| vec![x]).collect();
    let entropy = head_entropy(model, &rows)?;
    Ok(ToyEval { sse, ll, entropy })
}

fn write_grids(
    model: &DdnModel,
    paths: &ddn::chain::PermutationPaths,
    task: Option<ToyTask>,
    conditions: &[f64],
    resolution: Option<usize>,
    dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &x in conditions {
        let est = ddn::chain::joint_grid(model, &[x], paths, resolution)?;
        let path = dir.join(format!("{prefix}grid-x{x}.tsv"));
        fs::write(&path, est.to_text())?;
        written.push(path);
        if let Some(task) = task {
            let truth = oracle_grid(&est, |y| task.density(x, [y[0], y[1]]))?;
            let path = dir.join(format!("{prefix}truth-x{x}.tsv"));
            fs::write(&path, truth.to_text())?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn eval(a: &EvalArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::start("eval", args);
    let mut checkpoints = find_checkpoints(&a.checkpoint)?;
    if let Some(n) = a.trials {
        if n == 0 {
            return Err(usage("--trials must be at least 1"));
        }
        checkpoints.truncate(n);
    }
    let conditions: Vec<f64> = if a.conditions.is_empty() { EVAL_CONDITIONS.to_vec() } else { a.conditions.clone() };
    fs::create_dir_all(&a.out)?;
    manifest.inputs = checkpoints.clone();

    let mut report = EvalReport::new(String::new());
    let mut sse_sum = vec![0.0; conditions.len()];
    let mut entropy_sum = 0.0;
    let mut toy_runs = 0usize;
    for (index, path) in checkpoints.iter().enumerate() {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let meta = read_sidecar(path).unwrap_or_default();
        let cfg = ck.model.config().clone();
        if index == 0 {
            report.label = format!("{} (beta={})", cfg.variant, cfg.beta);
            manifest.set("variant", cfg.variant);
            manifest.set("beta", cfg.beta);
            manifest.set("bins", cfg.bins);
        }
        let seed = meta_u64(&meta, "seed")?.unwrap_or(0);
        let trial = meta_u64(&meta, "trial")?.unwrap_or(index as u64);
        manifest.seeds.push(seed);

        let task = match (&a.task, meta.get("task")) {
            (Some(t), _) => Some(t.parse::<ToyTask>()?),
            (None, Some(t)) if a.data.is_none() && a.table.is_none() => Some(t.parse::<ToyTask>()?),
            _ => None,
        };
        let table = a.table.clone().or_else(|| {
            (a.data.is_none() && task.is_none() && meta.get("source").map(String::as_str) == Some("table"))
                .then(|| meta.get("path").map(PathBuf::from))
                .flatten()
        });

        let ll = if let Some(data_path) = &a.data {
            let test = read_dataset(data_path).with_context(|| format!("reading {}", data_path.display()))?;
            check_dims(&ck.model, &test)?;
            test_log_likelihood(&ck.model, &test, &cfg.partitions(), &ck.paths)?.mean
        } else if let Some(table) = table {
            let targets: Vec<String> = if a.targets.is_empty() {
                meta.get("targets")
                    .map(|t| t.split(',').map(str::to_string).collect())
                    .ok_or_else(|| usage("--targets is required for this table"))?
            } else {
                a.targets.clone()
            };
            let tab = load_tabular(&table, &targets, seed, trial).with_context(|| format!("loading {}", table.display()))?;
            check_dims(&ck.model, &tab.test)?;
            test_log_likelihood(&ck.model, &tab.test, &cfg.partitions(), &ck.paths)?.mean
        } else if let Some(task) = task {
            let test = task.generate(a.test_n, &mut substream(seed, streams::TEST_DATA));
            let r = eval_toy(&ck.model, &ck.paths, task, &conditions, &test)?;
            for (acc, v) in sse_sum.iter_mut().zip(&r.sse) {
                *acc += v;
            }
            entropy_sum += r.entropy;
            toy_runs += 1;
            r.ll
        } else {
            return Err(usage("no test data: pass --task, --data or --table"));
        };
        report.trials.push(TrialRecord {
            trial,
            seed,
            outcome: Ok(ll),
        });

        if a.grid {
            let prefix = if checkpoints.len() > 1 { format!("trial-{trial}-") } else { String::new() };
            manifest.artifacts.extend(write_grids(
                &ck.model,
                &ck.paths,
                task,
                &conditions,
                a.grid_resolution,
                &a.out.join("grids"),
                &prefix,
            )?);
        }
    }
    if toy_runs > 0 {
        report.sse = conditions
            .iter()
            .zip(&sse_sum)
            .map(|(&x, &s)| (x, s / toy_runs as f64))
            .collect();
        report.entropy = Some(entropy_sum / toy_runs as f64);
    }
    report.metadata.insert("checkpoints".into(), checkpoints.len().to_string());
    let report_path = a.out.join("report.tsv");
    fs::write(&report_path, report.to_tsv())?;
    fs::write(a.out.join("summary.txt"), report.summary())?;
    print!("{}", report.summary());
    manifest.artifacts.extend([report_path, a.out.join("summary.txt")]);
    manifest.write(&a.out.join("manifest.json"))
}

struct ToyOutcome {
    label: String,
    seed: u64,
    eval: ToyEval,
}

#[allow(clippy::too_many_arguments)]
fn toy_pipeline(
    r: &ReproduceArgs,
    task: ToyTask,
    variant: Variant,
    beta: f64,
    seed: u64,
    epochs: usize,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<ToyOutcome> {
    fs::create_dir_all(dir)?;
    let data = task.generate(r.n, &mut substream(seed, streams::DATA));
    let data_path = dir.join("data.csv");
    let meta = Sidecar::from([
        ("task".to_string(), task.name().to_string()),
        ("n".into(), r.n.to_string()),
        ("seed".into(), seed.to_string()),
    ]);
    write_dataset(&data_path, &data, &meta)?;
    let cfg = ModelConfig::new(1, vec![TOY_RANGE; 2], variant, beta)?.with_bins(r.bins)?;
    let tc = TrainConfig {
        epochs,
        seed,
        record_time: !r.no_time,
        ..TrainConfig::default()
    };
    let run = fit(&data, cfg, ddn::chain::DEFAULT_MAX_PATHS, &tc, dir)?;
    let mut run_meta = Sidecar::from([
        ("source".to_string(), "data".to_string()),
        ("path".into(), data_path.display().to_string()),
        ("task".into(), task.name().to_string()),
        ("seed".into(), seed.to_string()),
    ]);
    run_meta.insert("trial".into(), "0".into());
    write_meta(&dir.join(MODEL_FILE), &run_meta)?;

    let test = task.generate(r.test_n, &mut substream(seed, streams::TEST_DATA));
    let eval = eval_toy(&run.model, &run.paths, task, &EVAL_CONDITIONS, &test)?;
    let mut report = EvalReport::new(format!("{task} {variant} (beta={beta})"));
    report.trials.push(TrialRecord { trial: 0, seed, outcome: Ok(eval.ll) });
    report.sse = EVAL_CONDITIONS.iter().copied().zip(eval.sse.iter().copied()).collect();
    report.entropy = Some(eval.entropy);
    fs::write(dir.join("report.tsv"), report.to_tsv())?;
    manifest.seeds.push(seed);
    manifest
        .artifacts
        .extend([data_path, dir.join(MODEL_FILE), dir.join("metrics.tsv"), dir.join("report.tsv")]);
    let label = format!("{task}\t{variant}\t{beta}");
    println!("{label}\tseed {seed}\tmean SSE {:.6}\ttest LL {:.4}", mean(&eval.sse), eval.ll);
    Ok(ToyOutcome { label, seed, eval })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn toy_tables(outcomes: &[ToyOutcome], out: &Path) -> Result<()> {
    let mut runs = String::from("task\tvariant\tbeta\tseed\tmean_sse\ttest_ll\tentropy\n");
    let mut groups: Vec<(String, Vec<&ToyOutcome>)> = Vec::new();
    for o in outcomes {
        let _ = writeln!(
            runs,
            "{}\t{}\t{}\t{}\t{}",
            o.label,
            o.seed,
            mean(&o.eval.sse),
            o.eval.ll,
            o.eval.entropy
        );
        match groups.iter_mut().find(|(l, _)| *l == o.label) {
            Some((_, g)) => g.push(o),
            None => groups.push((o.label.clone(), vec![o])),
        }
    }
    let mut table = String::from("task\tvariant\tbeta\tseeds\tmedian_mean_sse\tmedian_test_ll\tmedian_entropy\n");
    for (label, g) in &groups {
        let _ = writeln!(
            table,
            "{label}\t{}\t{}\t{}\t{}",
            g.len(),
            median(g.iter().map(|o| mean(&o.eval.sse)).collect()),
            median(g.iter().map(|o| o.eval.ll).collect()),
            median(g.iter().map(|o| o.eval.entropy).collect())
        );
    }
    fs::write(out.join("runs.tsv"), runs)?;
    fs::write(out.join("table.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

/// Known tabular datasets and their number of target columns, which are
/// taken from the end of the table unless `--targets` is given.
const UCI_TARGETS: [(&str, usize); 7] = [
    ("fish", 1),
    ("concrete", 1),
    ("energy", 2),
    ("parkinsons", 2),
    ("temperature", 2),
    ("air", 3),
    ("skillcraft", 4),
];

fn data_dir(r: &ReproduceArgs) -> PathBuf {
    r.data_dir
        .clone()
        .or_else(|| std::env::var_os("DDN_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn column_count(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or_default();
    let delim = [',', ';', '\t'].into_iter().max_by_key(|&d| first.matches(d).count()).unwrap_or(',');
    Ok(first.split(delim).count())
}

fn reproduce_uci(r: &ReproduceArgs, name: &str, manifest: &mut RunManifest) -> Result<()> {
    let path = data_dir(r).join(format!("{name}.csv"));
    if !path.is_file() {
        return Err(DdnError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "expected the {name} dataset at {} (set --data-dir or DDN_DATA_DIR)",
                path.display()
            ),
        ))
        .into());
    }
    let targets: Vec<String> = if r.targets.is_empty() {
        let k = UCI_TARGETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, k)| *k)
            .ok_or_else(|| usage(format!("unknown dataset '{name}'; pass --targets")))?;
        let cols = column_count(&path)?;
        if cols <= k {
            return Err(usage(format!("{} has {cols} columns, need more than {k}", path.display())));
        }
        (cols - k..cols).map(|c| c.to_string()).collect()
    } else {
        r.targets.clone()
    };
    manifest.inputs.push(path.clone());
    manifest.set("targets", targets.join(","));
    let epochs = r.epochs.unwrap_or(TABULAR_EPOCHS);
    manifest.set("epochs", epochs);

    let mut report = EvalReport::new(format!("{name} {} (beta={})", r.variant, r.beta));
    report.trials = trial_suite(r.trials, r.seed, false, |trial, seed| {
        let tab = load_tabular(&path, &targets, seed, trial)?;
        let cfg = ModelConfig::new(tab.train.input_dim(), tab.ranges(), r.variant, r.beta)?.with_bins(r.bins)?;
        let tc = TrainConfig {
            epochs,
            seed,
            record_time: !r.no_time,
            ..TrainConfig::default()
        };
        let dir = r.out.join(format!("trial-{trial}"));
        let mut run = TrainingRun::initialize(cfg, ddn::chain::DEFAULT_MAX_PATHS, seed)?;
        run_training(&mut run, &tab.train, &tc, TrainOutputs { dir: Some(&dir) })?;
        let meta = Sidecar::from([
            ("source".to_string(), "table".to_string()),
            ("path".into(), path.display().to_string()),
            ("targets".into(), targets.join(",")),
            ("seed".into(), seed.to_string()),
            ("trial".into(), trial.to_string()),
        ]);
        write_meta(&dir.join(MODEL_FILE), &meta)?;
        let ll = test_log_likelihood(&run.model, &tab.test, &run.model.config().partitions(), &run.paths)?.mean;
        println!("trial {trial}: test LL {ll:.4}");
        Ok(ll)
    });
    for t in &report.trials {
        manifest.seeds.push(t.seed);
        manifest.artifacts.push(r.out.join(format!("trial-{}", t.trial)).join(MODEL_FILE));
    }
    report.metadata.insert("epochs".into(), epochs.to_string());
    report.metadata.insert("targets".into(), targets.join(","));
    fs::write(r.out.join("report.tsv"), report.to_tsv())?;
    let summary = report.ll_summary().unwrap_or(Summary { n: 0, mean: f64::NAN, std: None });
    let table = format!(
        "dataset\tvariant\tbeta\tll\ttrials_ok\tfailed\n{name}\t{}\t{}\t{}\t{}\t{}\n",
        r.variant,
        r.beta,
        summary.plus_minus(),
        summary.n,
        report.failed_trials().iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    fs::write(r.out.join("table.tsv"), &table)?;
    print!("{}", report.summary());
    if summary.n == 0 {
        bail!(DdnError::Numeric("every trial failed; see report.tsv".into()));
    }
    Ok(())
}

pub fn reproduce(r: &ReproduceArgs, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::start("reproduce", args);
    if r.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    fs::create_dir_all(&r.out)?;
    manifest.set("experiment", &r.experiment);
    manifest.set("bins", r.bins);
    let seeds: Vec<u64> = (0..r.seeds as u64).map(|i| trial_seed(r.seed, i)).collect();
    let epochs = r.epochs.unwrap_or(TOY_EPOCHS);

    let configs: Vec<(ToyTask, Variant, f64)> = match r.experiment.as_str() {
        "toy-2d" => ToyTask::ALL.iter().map(|&t| (t, r.variant, r.beta)).collect(),
        "ablation-ring" => Variant::ALL.iter().map(|&v| (ToyTask::ElasticRing, v, r.beta)).collect(),
        "beta-sweep" => BETA_SWEEP.iter().map(|&b| (ToyTask::GaussianStick, Variant::Ddn, b)).collect(),
        name => {
            if let Some(dataset) = name.strip_prefix("uci-") {
                manifest.set("variant", r.variant);
                manifest.set("beta", r.beta);
                manifest.set("trials", r.trials);
                let result = reproduce_uci(r, dataset, &mut manifest);
                manifest.write(&r.out.join("manifest.json"))?;
                return result;
            }
            return Err(usage(format!(
                "unknown experiment '{name}' (valid: toy-2d, ablation-ring, beta-sweep, uci-<name>)"
            )));
        }
    };
    manifest.set("epochs", epochs);
    manifest.set("n", r.n);
    manifest.set("test_n", r.test_n);
    let mut outcomes = Vec::new();
    for (task, variant, beta) in configs {
        for &seed in &seeds {
            let dir = r.out.join(format!("{task}-{variant}-beta{beta}-seed{seed}"));
            outcomes.push(toy_pipeline(r, task, variant, beta, seed, epochs, &dir, &mut manifest)?);
        }
    }
    toy_tables(&outcomes, &r.out)?;
    manifest.artifacts.extend([r.out.join("table.tsv"), r.out.join("runs.tsv")]);
    manifest.write(&r.out.join("manifest.json"))
}
