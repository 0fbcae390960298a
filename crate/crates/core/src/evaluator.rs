//! SSE against ground-truth grids, test log-likelihood across trials and
//! head entropy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::autodiff::Scalar;
use crate::chain::{batch_log_likelihood, joint_grid, DensityGrid, PermutationPaths, DENSITY_FLOOR};
use crate::data::{Dataset, ToyTask};
use crate::error::{DdnError, Result};
use crate::model::{assemble_input, ConditionalMask, DdnModel, ModelInput};
use crate::objective::BinPartition;
use crate::rng::trial_seed;

/// Σ (estimated − truth)² over the cells of two grids with equal geometry.
pub fn sse(estimated: &DensityGrid, truth: &DensityGrid) -> Result<f64> {
    if !estimated.same_geometry(truth) {
        return Err(DdnError::dim("SSE needs grids with identical ranges and resolution"));
    }
    Ok(estimated
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}

/// `oracle` evaluated at the cell centers of `like`.
pub fn oracle_grid(like: &DensityGrid, mut oracle: impl FnMut(&[f64]) -> f64) -> Result<DensityGrid> {
    DensityGrid::from_fn(
        like.ranges().to_vec(),
        like.resolution().to_vec(),
        like.condition().to_vec(),
        |y| oracle(y),
    )
}

/// SSE of the path-averaged joint grid against the task oracle, one value
/// per condition.
pub fn toy_sse<T: Scalar>(
    model: &DdnModel<T>,
    paths: &PermutationPaths,
    task: ToyTask,
    conditions: &[f64],
) -> Result<Vec<f64>> {
    conditions
        .iter()
        .map(|&x| {
            let est = joint_grid(model, &[x], paths, None)?;
            let truth = oracle_grid(&est, |y| task.density(x, [y[0], y[1]]))?;
            sse(&est, &truth)
        })
        .collect()
}

/// Per-sample test log-likelihoods and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodResult {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

impl LikelihoodResult {
    fn from_samples(per_sample: Vec<f64>) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(DdnError::Usage("test set is empty".into()));
        }
        let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        Ok(Self { per_sample, mean })
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> f64 {
        match Summary::of(&self.per_sample).std {
            Some(s) => s / (self.per_sample.len() as f64).sqrt(),
            None => 0.0,
        }
    }
}

/// Mean log path-averaged density over a test set. Samples outside the
/// partitions get the density floor.
pub fn test_log_likelihood<T: Scalar>(
    model: &DdnModel<T>,
    data: &Dataset,
    partitions: &[BinPartition],
    paths: &PermutationPaths,
) -> Result<LikelihoodResult> {
    if data.is_empty() {
        return Err(DdnError::Usage("test set is empty".into()));
    }
    let lls = batch_log_likelihood(model, data.features(), data.targets(), partitions, paths)?;
    LikelihoodResult::from_samples(lls)
}

/// Midpoints per side when integrating a density over one cell.
const CELL_SAMPLES: usize = 8;

/// Integral of `f` over the rectangle `lo..hi` from `8 × 8` midpoints.
/// Where the samples see both zero and non-zero density the cell is
/// quartered, up to `depth` times, so support edges are resolved finely.
pub fn integrate_cell(f: &mut dyn FnMut([f64; 2]) -> f64, lo: [f64; 2], hi: [f64; 2], depth: usize) -> f64 {
    let n = CELL_SAMPLES;
    let w = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
    let (mut sum, mut zero, mut positive) = (0.0, false, false);
    for a in 0..n {
        for b in 0..n {
            let v = f([lo[0] + (a as f64 + 0.5) * w[0], lo[1] + (b as f64 + 0.5) * w[1]]);
            sum += v;
            zero |= v == 0.0;
            positive |= v > 0.0;
        }
    }
    if zero && positive && depth > 0 {
        let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let mut total = 0.0;
        for (l0, h0) in [(lo[0], mid[0]), (mid[0], hi[0])] {
            for (l1, h1) in [(lo[1], mid[1]), (mid[1], hi[1])] {
                total += integrate_cell(f, [l0, l1], [h0, h1], depth - 1);
            }
        }
        return total;
    }
    sum * w[0] * w[1]
}

/// Refinement depth used for discretized oracles.
pub const ORACLE_REFINE_DEPTH: usize = 6;

/// Log-likelihood of the task oracle after averaging it over the bin cell
/// holding each sample.
pub fn discretized_oracle_log_likelihood(
    task: ToyTask,
    data: &Dataset,
    partitions: &[BinPartition],
) -> Result<LikelihoodResult> {
    if data.target_dim() != 2 || partitions.len() != 2 || data.input_dim() != 1 {
        return Err(DdnError::dim("toy oracles take one feature and two targets"));
    }
    let (w0, w1) = (partitions[0].width(), partitions[1].width());
    let lls = (0..data.len())
        .map(|r| {
            let x = data.x(r)[0];
            let y = data.y(r);
            let (Ok(i), Ok(j)) = (partitions[0].bin_index(y[0]), partitions[1].bin_index(y[1])) else {
                return DENSITY_FLOOR.ln();
            };
            let lo = [partitions[0].lo() + i as f64 * w0, partitions[1].lo() + j as f64 * w1];
            let hi = [lo[0] + w0, lo[1] + w1];
            let mass = integrate_cell(&mut |p| task.density(x, p), lo, hi, ORACLE_REFINE_DEPTH);
            (mass / (w0 * w1)).max(DENSITY_FLOOR).ln()
        })
        .collect();
    LikelihoodResult::from_samples(lls)
}

/// Shannon entropy `−Σ p log p` of one probability vector.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Mean entropy of the unconditioned heads over the given feature rows.
pub fn head_entropy<T: Scalar>(model: &DdnModel<T>, conditions: &[Vec<f64>]) -> Result<f64> {
    let cfg = model.config();
    if conditions.is_empty() {
        return Err(DdnError::Usage("no conditions given".into()));
    }
    let mask = ConditionalMask::empty(cfg.target_dim);
    let zeros = vec![0.0; cfg.target_dim];
    let rows: Vec<ModelInput> = conditions
        .iter()
        .map(|x| assemble_input(cfg, x, &zeros, &mask))
        .collect::<Result<_>>()?;
    let heads = model.predict(&ModelInput::stack(&rows)?)?;
    let n = cfg.bins;
    let mut total = 0.0;
    for head in &heads {
        for row in head.chunks(n) {
            let p: Vec<f64> = row.iter().map(|v| v.f64()).collect();
            total += entropy(&p);
        }
    }
    Ok(total / (heads.len() * conditions.len()) as f64)
}

/// Mean and unbiased standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` with fewer than two values.
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
        let std = (n >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self { n, mean, std }
    }

    /// `mean±std` with two decimals.
    pub fn plus_minus(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2}±{:.2}", self.mean, s),
            None => format!("{:.2}", self.mean),
        }
    }
}

/// Outcome of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub outcome: std::result::Result<f64, String>,
}

/// Runs `n_trials` trials, trial `t` with master seed `trial_seed(seed, t)`
/// (or `seed` itself when `same_seed` is set). Failures are recorded and
/// excluded from the statistics.
pub fn trial_suite(
    n_trials: usize,
    seed: u64,
    same_seed: bool,
    mut run: impl FnMut(u64, u64) -> Result<f64>,
) -> Vec<TrialRecord> {
    (0..n_trials as u64)
        .map(|trial| {
            let s = if same_seed { seed } else { trial_seed(seed, trial) };
            let outcome = run(trial, s).map_err(|e| e.to_string()).and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("non-finite result {v}"))
                }
            });
            TrialRecord { trial, seed: s, outcome }
        })
        .collect()
}

/// Evaluation results of one model configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub label: String,
    /// Free-form run information, written as comment lines.
    pub metadata: BTreeMap<String, String>,
    pub trials: Vec<TrialRecord>,
    /// `(condition, sse)` pairs.
    pub sse: Vec<(f64, f64)>,
    pub entropy: Option<f64>,
}

impl EvalReport {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    /// Statistics over successful trials, `None` when there are none.
    pub fn ll_summary(&self) -> Option<Summary> {
        let ok: Vec<f64> = self.trials.iter().filter_map(|t| t.outcome.as_ref().ok().copied()).collect();
        (!ok.is_empty()).then(|| Summary::of(&ok))
    }

    pub fn failed_trials(&self) -> Vec<u64> {
        self.trials.iter().filter(|t| t.outcome.is_err()).map(|t| t.trial).collect()
    }

    pub fn mean_sse(&self) -> Option<f64> {
        (!self.sse.is_empty()).then(|| self.sse.iter().map(|(_, v)| v).sum::<f64>() / self.sse.len() as f64)
    }

    /// Tab-separated `metric  key  value` rows preceded by `# k=v` metadata.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# label={}", self.label);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("metric\tkey\tvalue\n");
        for t in &self.trials {
            match &t.outcome {
                Ok(v) => {
                    let _ = writeln!(out, "ll_trial\t{}\t{v}", t.trial);
                }
                Err(e) => {
                    let _ = writeln!(out, "ll_trial_failed\t{}\t{}", t.trial, e.replace(['\t', '\n'], " "));
                }
            }
        }
        if let Some(s) = self.ll_summary() {
            let _ = writeln!(out, "ll_mean\t-\t{}", s.mean);
            if let Some(std) = s.std {
                let _ = writeln!(out, "ll_std\t-\t{std}");
            }
        }
        for (x, v) in &self.sse {
            let _ = writeln!(out, "sse\t{x}\t{v}");
        }
        if let Some(m) = self.mean_sse() {
            let _ = writeln!(out, "sse_mean\t-\t{m}");
        }
        if let Some(h) = self.entropy {
            let _ = writeln!(out, "entropy\t-\t{h}");
        }
        out
    }

    /// Short human-readable lines.
    pub fn summary(&self) -> String {
        let mut out = format!("{}\n", self.label);
        if let Some(s) = self.ll_summary() {
            let _ = write!(out, "  test LL {} over {} trial(s)", s.plus_minus(), s.n);
            let failed = self.failed_trials();
            if !failed.is_empty() {
                let ids: Vec<String> = failed.iter().map(u64::to_string).collect();
                let _ = write!(out, "; failed trials: {}", ids.join(", "));
            }
            out.push('\n');
        } else if !self.trials.is_empty() {
            out.push_str("  all trials failed\n");
        }
        if let Some(m) = self.mean_sse() {
            let _ = writeln!(out, "  mean SSE {m:.6} over {} condition(s)", self.sse.len());
        }
        if let Some(h) = self.entropy {
            let _ = writeln!(out, "  head entropy {h:.4}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_paths;
    use crate::model::{ModelConfig, Variant};
    use crate::rng::seeded;
    use proptest::prelude::*;

    /// MLP whose output layer is zero, so every head is uniform.
    fn uniform_model(target_dim: usize) -> DdnModel<f64> {
        let cfg = ModelConfig::new(1, vec![(-10.0, 10.0); target_dim], Variant::Mlp, 0.0).unwrap();
        let mut m: DdnModel<f64> = DdnModel::new(cfg, &mut seeded(0)).unwrap();
        for name in ["est.dense.weight", "est.dense.bias"] {
            let id = m.params().find(name).unwrap();
            let len = m.params().get(id).len();
            m.params_mut().set_values(id, &vec![0.0; len]).unwrap();
        }
        m
    }

    fn grid(values: Vec<f64>) -> DensityGrid {
        DensityGrid::new(vec![(0.0, 1.0); 2], vec![20, 20], vec![0.0], values).unwrap()
    }

    #[test]
    fn sse_arithmetic() {
        let truth = grid(vec![0.0; 400]);
        assert_eq!(sse(&truth, &truth).unwrap(), 0.0);
        let est = grid(vec![1.0 / 400.0; 400]);
        assert!((sse(&est, &truth).unwrap() - 1.0 / 400.0).abs() < 1e-15);
        let other = DensityGrid::new(vec![(0.0, 1.0); 2], vec![10, 40], vec![0.0], vec![0.0; 400]).unwrap();
        assert!(matches!(sse(&est, &other), Err(DdnError::Dimension(_))));
    }

    #[test]
    fn oracle_grid_uses_centers() {
        let like = grid(vec![0.0; 400]);
        let g = oracle_grid(&like, |y| y[0] + 10.0 * y[1]).unwrap();
        assert!((g.values()[0] - (0.025 + 0.25)).abs() < 1e-12);
        assert!((g.values()[21] - (0.075 + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn uniform_heads_give_log_one_twentieth() {
        let m = uniform_model(1);
        let paths = build_paths(1, 5, &mut seeded(0)).unwrap();
        let parts = m.config().partitions();
        let data = Dataset::new(1, 1, vec![0.1, -0.3, 0.9], vec![-9.5, 0.0, 7.25]).unwrap();
        let r = test_log_likelihood(&m, &data, &parts, &paths).unwrap();
        assert!((r.mean - (1.0f64 / 20.0).ln()).abs() < 1e-9, "{}", r.mean);

        let one = data.subset(&[2]);
        let r1 = test_log_likelihood(&m, &one, &parts, &paths).unwrap();
        assert_eq!(r1.per_sample.len(), 1);
        assert_eq!(r1.mean, r1.per_sample[0]);

        let empty = data.subset(&[]);
        assert!(matches!(test_log_likelihood(&m, &empty, &parts, &paths), Err(DdnError::Usage(_))));
    }

    #[test]
    fn entropy_extremes() {
        assert!((entropy(&[1.0 / 256.0; 256]) - 256f64.ln()).abs() < 1e-12);
        assert!((256f64.ln() - 5.5452).abs() < 1e-4);
        let mut one_hot = vec![0.0; 256];
        one_hot[17] = 1.0;
        assert_eq!(entropy(&one_hot), 0.0);
        let m = uniform_model(2);
        let h = head_entropy(&m, &[vec![-0.5], vec![0.5]]).unwrap();
        assert!((h - 256f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn trained_shape_model_entropy_is_bounded() {
        let cfg = ModelConfig::new(1, vec![(-10.0, 10.0); 2], Variant::Ddn, 0.1).unwrap();
        let m: DdnModel = DdnModel::new(cfg, &mut seeded(4)).unwrap();
        let h = head_entropy(&m, &[vec![-0.75], vec![0.25]]).unwrap();
        assert!(h >= 0.0 && h <= 256f64.ln() + 1e-6);
    }

    #[test]
    fn trial_statistics() {
        let same = trial_suite(2, 9, true, |_, s| Ok(s as f64 * 0.001));
        let mut report = EvalReport::new("same");
        report.trials = same;
        assert_eq!(report.ll_summary().unwrap().std, Some(0.0));

        let mut ten = EvalReport::new("ten");
        ten.trials = trial_suite(10, 1, false, |t, _| {
            if t == 3 {
                Err(DdnError::Numeric("diverged".into()))
            } else {
                Ok(-(t as f64))
            }
        });
        assert_eq!(ten.trials.len(), 10);
        let seeds: std::collections::BTreeSet<u64> = ten.trials.iter().map(|t| t.seed).collect();
        assert_eq!(seeds.len(), 10);
        assert_eq!(ten.failed_trials(), vec![3]);
        let s = ten.ll_summary().unwrap();
        assert_eq!(s.n, 9);
        assert!(ten.summary().contains("failed trials: 3"));
        assert!(ten.to_tsv().contains("ll_trial_failed\t3\t"));
    }

    #[test]
    fn plus_minus_format() {
        let s = Summary::of(&[-1.0, -1.2, -1.1]);
        assert_eq!(s.plus_minus(), "-1.10±0.10");
    }

    #[test]
    fn report_bytes_are_reproducible() {
        let build = || {
            let mut r = EvalReport::new("ddn");
            r.metadata.insert("seed".into(), "3".into());
            r.trials = trial_suite(3, 3, false, |t, s| Ok((s % 97) as f64 / 10.0 - t as f64));
            r.sse = vec![(-0.75, 0.01), (0.25, 0.02)];
            r.entropy = Some(4.5);
            r.to_tsv()
        };
        assert_eq!(build(), build());
        assert!(build().contains("sse_mean\t-\t0.015"));
    }

    #[test]
    fn discretized_oracle_inside_a_square() {
        // a sample deep inside a square sees the flat 1/32 level
        let parts = vec![BinPartition::new(-10.0, 10.0, 256).unwrap(); 2];
        let data = Dataset::new(1, 2, vec![0.0], vec![-3.0, -3.0]).unwrap();
        let r = discretized_oracle_log_likelihood(ToyTask::Squares, &data, &parts).unwrap();
        assert!((r.mean - (1.0f64 / 32.0).ln()).abs() < 1e-12);
        let outside = Dataset::new(1, 2, vec![0.0], vec![0.0, 0.0]).unwrap();
        let r = discretized_oracle_log_likelihood(ToyTask::Squares, &outside, &parts).unwrap();
        assert_eq!(r.mean, DENSITY_FLOOR.ln());
    }

    #[test]
    fn refinement_resolves_square_edges() {
        // unit indicator of [0.3, 0.7]^2 on the unit cell: exact mass 0.16
        let mut f = |p: [f64; 2]| if (0.3..0.7).contains(&p[0]) && (0.3..0.7).contains(&p[1]) { 1.0 } else { 0.0 };
        let coarse = integrate_cell(&mut f, [0.0, 0.0], [1.0, 1.0], 0);
        let fine = integrate_cell(&mut f, [0.0, 0.0], [1.0, 1.0], 8);
        assert!((fine - 0.16).abs() < 1e-3, "{fine}");
        assert!((fine - 0.16).abs() < (coarse - 0.16).abs());
        let mut smooth = |p: [f64; 2]| p[0] * p[1];
        assert!((integrate_cell(&mut smooth, [0.0, 0.0], [1.0, 2.0], 6) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sse_nonnegative_and_zero_iff_equal(a in proptest::collection::vec(0.0f64..5.0, 400), b in proptest::collection::vec(0.0f64..5.0, 400)) {
            let (ga, gb) = (grid(a.clone()), grid(b.clone()));
            let v = sse(&ga, &gb).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, a == b);
        }

        #[test]
        fn entropy_bounds(logits in proptest::collection::vec(-20.0f64..20.0, 256)) {
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / z).collect();
            let h = entropy(&p);
            prop_assert!(h >= -1e-12 && h <= 256f64.ln() + 1e-9);
        }

        #[test]
        fn unbiased_std_matches_pairwise_form(v in proptest::collection::vec(-100.0f64..100.0, 2..30)) {
            // var = Σ_{i<j} (v_i − v_j)² / (n (n − 1))
            let n = v.len() as f64;
            let mut pair = 0.0;
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    pair += (v[i] - v[j]).powi(2);
                }
            }
            let oracle = (pair / (n * (n - 1.0))).sqrt();
            let s = Summary::of(&v).std.unwrap();
            prop_assert!((s - oracle).abs() <= 1e-9 * (1.0 + oracle));
        }
    }
}
