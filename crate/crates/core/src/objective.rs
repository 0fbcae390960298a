//! Uniform bin partitions and the training objective: discretized negative
//! log-likelihood averaged over target dimensions, plus a β-weighted KL
//! penalty on the latent Gaussian.

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{DdnError, Result};
use crate::model::{HeadOutputs, LatentGaussian, Variant};

/// Probability floor applied before taking logs of bin probabilities.
pub const PROB_FLOOR: f64 = 1e-12;

/// `[lo, hi)` split into `bins` equal bins; `hi` itself belongs to the last
/// bin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinPartition {
    lo: f64,
    hi: f64,
    bins: usize,
}

impl BinPartition {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DdnError::config(format!("invalid range ({lo}, {hi})")));
        }
        if bins == 0 {
            return Err(DdnError::config("bin count must be positive"));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Bin width ΔB.
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    pub fn bin_index(&self, y: f64) -> Result<usize> {
        if !self.contains(y) {
            return Err(DdnError::OutOfRange {
                value: y,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let i = ((y - self.lo) / self.width()).floor() as usize;
        Ok(i.min(self.bins - 1))
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }

    /// Piecewise-constant density `probs[bin(y)] / ΔB`, zero outside the range.
    pub fn piecewise_density<T: Scalar>(&self, probs: &[T], y: f64) -> f64 {
        match self.bin_index(y) {
            Ok(i) => probs[i].f64() / self.width(),
            Err(_) => 0.0,
        }
    }
}

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(nll: f64, kl: f64, beta: f64) -> Self {
        Self {
            nll,
            kl,
            total: nll + beta * kl,
        }
    }
}

/// `-(1/J) Σ_j log f_{bin(y_j), j}` for one sample.
pub fn nll_loss(heads: &HeadOutputs, y: &[f64], partitions: &[BinPartition]) -> Result<f64> {
    if heads.len() != y.len() || partitions.len() != y.len() {
        return Err(DdnError::dim(format!(
            "{} heads, {} targets, {} partitions",
            heads.len(),
            y.len(),
            partitions.len()
        )));
    }
    let mut total = 0.0;
    for ((probs, &yj), part) in heads.iter().zip(y).zip(partitions) {
        let i = part.bin_index(yj)?;
        total -= (probs[i] as f64).max(PROB_FLOOR).ln();
    }
    Ok(total / y.len() as f64)
}

/// Batched mean of [`nll_loss`].
pub fn batch_nll_loss(
    heads: &[HeadOutputs],
    ys: &[Vec<f64>],
    partitions: &[BinPartition],
) -> Result<f64> {
    if heads.len() != ys.len() || heads.is_empty() {
        return Err(DdnError::dim("batch sizes of heads and targets differ"));
    }
    let mut total = 0.0;
    for (h, y) in heads.iter().zip(ys) {
        total += nll_loss(h, y, partitions)?;
    }
    Ok(total / heads.len() as f64)
}

/// `D_KL[N(μ, σ²) ‖ N(0, I)] = ½ Σ_d (μ_d² + σ_d² − 1 − 2 ln σ_d)`.
pub fn kl_divergence(g: &LatentGaussian) -> f64 {
    g.mu()
        .iter()
        .zip(g.sigma())
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}

/// Combined objective of one sample; the KL term is zero for variants
/// without a variational layer.
pub fn total_loss(
    heads: &HeadOutputs,
    latent: Option<&LatentGaussian>,
    y: &[f64],
    partitions: &[BinPartition],
    beta: f64,
    variant: Variant,
) -> Result<LossBreakdown> {
    let nll = nll_loss(heads, y, partitions)?;
    let kl = match (variant.has_variational_layer(), latent) {
        (true, Some(l)) => kl_divergence(l),
        (true, None) => {
            return Err(DdnError::Usage(
                "variational variant evaluated without a latent distribution".into(),
            ))
        }
        (false, _) => 0.0,
    };
    Ok(LossBreakdown::new(nll, kl, beta))
}

/// Graph form of the batched NLL: `heads[j]` is `[B, N]` and
/// `targets[j][b]` the bin index of sample `b` in dimension `j`.
pub fn nll_graph<T: Scalar>(g: &mut Graph<T>, heads: &[Var], targets: &[Vec<usize>]) -> Result<Var> {
    if heads.len() != targets.len() || heads.is_empty() {
        return Err(DdnError::dim("one target index list per head required"));
    }
    let mut terms = Vec::with_capacity(heads.len());
    for (&h, idx) in heads.iter().zip(targets) {
        let picked = g.gather_rows(h, idx)?;
        let floored = g.clamp_min(picked, T::of(PROB_FLOOR));
        terms.push(g.log(floored)?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    // mean over batch of the J-average, negated
    let m = g.mean(acc);
    Ok(g.scale(m, T::of(-1.0 / heads.len() as f64)))
}

/// Graph form of the KL term averaged over the batch; `mu` and `sigma` are `[B, D]`.
pub fn kl_graph<T: Scalar>(g: &mut Graph<T>, mu: Var, sigma: Var) -> Result<Var> {
    let rows = g.shape(mu)[0] as f64;
    let mu2 = g.square(mu);
    let s2 = g.square(sigma);
    let log_s = g.log(sigma)?;
    let two_log_s = g.scale(log_s, T::of(2.0));
    let a = g.add(mu2, s2)?;
    let b = g.sub(a, two_log_s)?;
    let c = g.offset(b, T::of(-1.0));
    let s = g.sum(c);
    Ok(g.scale(s, T::of(0.5 / rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn toy_range() -> BinPartition {
        BinPartition::new(-10.0, 10.0, 256).unwrap()
    }

    #[test]
    fn bin_index_edges() {
        let p = toy_range();
        assert_eq!(p.bin_index(-10.0).unwrap(), 0);
        assert_eq!(p.bin_index(10.0).unwrap(), 255);
        // floor((0 + 10) / 0.078125) = 128
        assert_eq!(p.bin_index(0.0).unwrap(), 128);
        assert!(matches!(
            p.bin_index(10.5),
            Err(DdnError::OutOfRange { .. })
        ));
        assert!(BinPartition::new(1.0, 1.0, 4).is_err());
    }

    #[test]
    fn piecewise_density_cases() {
        let p = toy_range();
        let uniform = vec![1.0f32 / 256.0; 256];
        assert!((p.piecewise_density(&uniform, 3.3) - 1.0 / 20.0).abs() < 1e-9);
        assert_eq!(p.piecewise_density(&uniform, -11.0), 0.0);
        let integral: f64 = (0..256)
            .map(|i| p.piecewise_density(&uniform, p.center(i)) * p.width())
            .sum();
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nll_reference_values() {
        let p = toy_range();
        let uniform = vec![1.0f32 / 256.0; 256];
        let one = HeadOutputs::new(vec![uniform.clone()]).unwrap();
        assert!((nll_loss(&one, &[1.0], &[p]).unwrap() - 256f64.ln()).abs() < 1e-6);

        let two = HeadOutputs::new(vec![uniform.clone(), uniform]).unwrap();
        assert!((nll_loss(&two, &[1.0, -4.0], &[p, p]).unwrap() - 256f64.ln()).abs() < 1e-6);

        let mut hot = vec![0.0f32; 256];
        hot[p.bin_index(2.0).unwrap()] = 1.0;
        let hot = HeadOutputs::new(vec![hot]).unwrap();
        assert_eq!(nll_loss(&hot, &[2.0], &[p]).unwrap(), 0.0);
        // zero probability is floored, not infinite
        let miss = nll_loss(&hot, &[-2.0], &[p]).unwrap();
        assert!((miss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    /// Brute-force evaluation with explicit indicator functions over every bin.
    fn nll_by_indicators(heads: &[HeadOutputs], ys: &[Vec<f64>], parts: &[BinPartition]) -> f64 {
        let (m, j) = (heads.len() as f64, parts.len() as f64);
        let mut total = 0.0;
        for (h, y) in heads.iter().zip(ys) {
            for (d, part) in parts.iter().enumerate() {
                for i in 0..part.bins() {
                    let lo = part.lo() + i as f64 * part.width();
                    let hi = lo + part.width();
                    let inside = (y[d] >= lo && y[d] < hi) || (i + 1 == part.bins() && y[d] == part.hi());
                    if inside {
                        total += (h.head(d)[i] as f64).max(PROB_FLOOR).ln();
                    }
                }
            }
        }
        -total / (m * j)
    }

    #[test]
    fn nll_matches_indicator_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let parts = [BinPartition::new(-2.0, 3.0, 16).unwrap(), BinPartition::new(0.0, 1.0, 16).unwrap()];
        let mut heads = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..20 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let raw: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| (v / s) as f32).collect::<Vec<f32>>()
            };
            heads.push(HeadOutputs::new(vec![mk(&mut rng), mk(&mut rng)]).unwrap());
            ys.push(vec![rng.random_range(-2.0..3.0), rng.random_range(0.0..1.0)]);
        }
        let fast = batch_nll_loss(&heads, &ys, &parts).unwrap();
        let brute = nll_by_indicators(&heads, &ys, &parts);
        assert!((fast - brute).abs() <= 1e-12 * brute.abs().max(1.0));
    }

    #[test]
    fn kl_reference_values() {
        let zero = LatentGaussian::new(vec![0.0; 16], vec![1.0; 16]).unwrap();
        assert_eq!(kl_divergence(&zero), 0.0);
        let mut mu = vec![0.0; 16];
        mu[0] = 1.0;
        let shifted = LatentGaussian::new(mu, vec![1.0; 16]).unwrap();
        assert!((kl_divergence(&shifted) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma: Vec<f64> = (0..4).map(|_| rng.random_range(0.3..1.5)).collect();
        let g = LatentGaussian::new(mu.clone(), sigma.clone()).unwrap();
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut log_ratio = 0.0;
            for d in 0..4 {
                let e: f64 = rng.sample(StandardNormal);
                let z = mu[d] + sigma[d] * e;
                // log q(z) - log p(z); the 2π terms cancel
                log_ratio += -0.5 * e * e - sigma[d].ln() + 0.5 * z * z;
            }
            acc += log_ratio;
        }
        let mc = acc / n as f64;
        let exact = kl_divergence(&g);
        assert!((mc - exact).abs() / exact < 0.02, "{mc} vs {exact}");
    }

    #[test]
    fn total_loss_combination() {
        let p = toy_range();
        let uniform = HeadOutputs::new(vec![vec![1.0f32 / 256.0; 256]]).unwrap();
        let lat = LatentGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let b0 = total_loss(&uniform, Some(&lat), &[0.0], &[p], 0.0, Variant::Ddn).unwrap();
        assert_eq!(b0.total, b0.nll);
        let b = LossBreakdown::new(2.0, 3.0, 0.1);
        assert!((b.total - 2.3).abs() < 1e-12);
        let no_vl = total_loss(&uniform, Some(&lat), &[0.0], &[p], 0.5, Variant::DdnNoVl).unwrap();
        assert_eq!(no_vl.kl, 0.0);
    }

    #[test]
    fn graph_losses_agree_with_plain_forms() {
        let mut g = Graph::<f64>::new();
        let probs = vec![0.1, 0.2, 0.7, 0.5, 0.25, 0.25];
        let h = g.constant(Tensor::new(&[2, 3], probs).unwrap());
        let nll = nll_graph(&mut g, &[h], &[vec![2, 0]]).unwrap();
        let expected = -(0.7f64.ln() + 0.5f64.ln()) / 2.0;
        assert!((g.value(nll)[0] - expected).abs() < 1e-12);

        let mu = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.5, -0.5]).unwrap());
        let sd = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 0.5, 1.0]).unwrap());
        let kl = kl_graph(&mut g, mu, sd).unwrap();
        let a = kl_divergence(&LatentGaussian::new(vec![1.0, 0.0], vec![1.0, 2.0]).unwrap());
        let b = kl_divergence(&LatentGaussian::new(vec![0.5, -0.5], vec![0.5, 1.0]).unwrap());
        assert!((g.value(kl)[0] - (a + b) / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(mu in proptest::collection::vec(-5.0f64..5.0, 1..20), s in 0.05f64..5.0) {
            let sigma = vec![s; mu.len()];
            let g = LatentGaussian::new(mu, sigma).unwrap();
            prop_assert!(kl_divergence(&g) >= 0.0);
        }

        #[test]
        fn in_range_values_have_a_bin(y in -10.0f64..=10.0) {
            let p = toy_range();
            let i = p.bin_index(y).unwrap();
            prop_assert!(i < 256);
            let lo = p.lo() + i as f64 * p.width();
            prop_assert!(y >= lo - 1e-12 && (y < lo + p.width() + 1e-12));
        }
    }
}
