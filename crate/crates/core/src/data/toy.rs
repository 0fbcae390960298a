//! Two-dimensional synthetic tasks with closed-form conditional densities.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Dataset;
use crate::error::{DdnError, Result};

/// Standard deviation of both half-Gaussian components.
pub const HALF_GAUSSIAN_SCALE: f64 = 2.0;
pub const TOY_RANGE: (f64, f64) = (-10.0, 10.0);
/// Conditions used when evaluating toy models.
pub const EVAL_CONDITIONS: [f64; 4] = [-0.75, -0.25, 0.25, 0.75];

const BISECTION_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ToyTask {
    Squares,
    HalfGaussian,
    GaussianStick,
    ElasticRing,
}

impl ToyTask {
    pub const ALL: [ToyTask; 4] = [
        ToyTask::Squares,
        ToyTask::HalfGaussian,
        ToyTask::GaussianStick,
        ToyTask::ElasticRing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyTask::Squares => "squares",
            ToyTask::HalfGaussian => "half_gaussian",
            ToyTask::GaussianStick => "gaussian_stick",
            ToyTask::ElasticRing => "elastic_ring",
        }
    }

    /// Draws `y ~ p(y | x)`.
    pub fn sample<R: Rng + ?Sized>(self, x: f64, rng: &mut R) -> [f64; 2] {
        match self {
            ToyTask::Squares => {
                let (lo, hi) = if rng.random_bool(0.5) {
                    (-5.0 + x, -1.0 + x)
                } else {
                    (1.0 - x, 5.0 - x)
                };
                let u = Uniform::new(lo, hi).expect("non-empty square");
                [u.sample(rng), u.sample(rng)]
            }
            ToyTask::HalfGaussian => {
                let n = Normal::new(0.0, HALF_GAUSSIAN_SCALE).expect("positive scale");
                let a: f64 = n.sample(rng);
                let b: f64 = n.sample(rng);
                rotate(a.abs(), b, x * PI)
            }
            ToyTask::GaussianStick => {
                let a: f64 = rng.sample(rand_distr::StandardNormal);
                let b = rng.random_range(-6.0..6.0);
                rotate(a, b, stick_angle(x) * PI)
            }
            ToyTask::ElasticRing => {
                let d = rng.random_range(0.0..2.0);
                let theta = rng.random_range(0.0..2.0 * PI);
                [(4.0 + 2.0 * x + d) * theta.cos(), (4.0 - 2.0 * x + d) * theta.sin()]
            }
        }
    }

    /// Ground-truth `p(y | x)`.
    pub fn density(self, x: f64, y: [f64; 2]) -> f64 {
        match self {
            ToyTask::Squares => {
                let inside = |lo: f64, hi: f64| (lo..=hi).contains(&y[0]) && (lo..=hi).contains(&y[1]);
                debug_assert!(-1.0 + x < 1.0 - x);
                if inside(-5.0 + x, -1.0 + x) || inside(1.0 - x, 5.0 - x) {
                    1.0 / 32.0
                } else {
                    0.0
                }
            }
            ToyTask::HalfGaussian => {
                let [u, v] = rotate(y[0], y[1], -x * PI);
                if u < 0.0 {
                    0.0
                } else {
                    2.0 * normal_pdf(u, HALF_GAUSSIAN_SCALE) * normal_pdf(v, HALF_GAUSSIAN_SCALE)
                }
            }
            ToyTask::GaussianStick => {
                let [u, v] = rotate(y[0], y[1], -stick_angle(x) * PI);
                if v.abs() <= 6.0 {
                    normal_pdf(u, 1.0) / 12.0
                } else {
                    0.0
                }
            }
            ToyTask::ElasticRing => ring_density(x, y),
        }
    }

    /// `n` samples with `x ~ U(-1, 1)`.
    pub fn generate<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Dataset {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let x = rng.random_range(-1.0..1.0);
            xs.push(x);
            ys.extend(self.sample(x, rng));
        }
        Dataset::new(1, 2, xs, ys).expect("consistent toy layout")
    }
}

impl fmt::Display for ToyTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyTask {
    type Err = DdnError;

    fn from_str(s: &str) -> Result<Self> {
        ToyTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| DdnError::UnknownTask(s.to_string()))
    }
}

fn stick_angle(x: f64) -> f64 {
    (-0.75 + x) / 2.0
}

/// Counter-clockwise rotation by `angle` radians.
fn rotate(a: f64, b: f64, angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [a * c - b * s, a * s + b * c]
}

fn normal_pdf(v: f64, sd: f64) -> f64 {
    (-0.5 * (v / sd).powi(2)).exp() / (sd * (2.0 * PI).sqrt())
}

fn ring_radii(x: f64, d: f64) -> (f64, f64) {
    (4.0 + 2.0 * x + d, 4.0 - 2.0 * x + d)
}

/// `F(d) = (y1/r1)^2 + (y2/r2)^2`, strictly decreasing in `d` unless `y = 0`.
pub(crate) fn ring_level(x: f64, y: [f64; 2], d: f64) -> f64 {
    let (r1, r2) = ring_radii(x, d);
    (y[0] / r1).powi(2) + (y[1] / r2).powi(2)
}

/// Offset `d ∈ [0, 2]` of the ellipse through `y`, if any.
pub(crate) fn ring_offset(x: f64, y: [f64; 2]) -> Option<f64> {
    let (f0, f2) = (ring_level(x, y, 0.0), ring_level(x, y, 2.0));
    if !(f0 >= 1.0 && f2 <= 1.0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if ring_level(x, y, mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn ring_density(x: f64, y: [f64; 2]) -> f64 {
    let Some(d) = ring_offset(x, y) else {
        return 0.0;
    };
    let (r1, r2) = ring_radii(x, d);
    let theta = (y[1] / r2).atan2(y[0] / r1);
    let (s, c) = theta.sin_cos();
    1.0 / (4.0 * PI * (r2 * c * c + r1 * s * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn sampler_supports() {
        let mut rng = seeded(1);
        for _ in 0..20_000 {
            let y = ToyTask::Squares.sample(0.0, &mut rng);
            let low = (-5.0..=-1.0).contains(&y[0]) && (-5.0..=-1.0).contains(&y[1]);
            let high = (1.0..=5.0).contains(&y[0]) && (1.0..=5.0).contains(&y[1]);
            assert!(low || high, "{y:?}");
            let r = ToyTask::ElasticRing.sample(0.0, &mut rng);
            assert!(r[0].abs() <= 6.0 && r[1].abs() <= 6.0);
            assert!(ToyTask::HalfGaussian.sample(0.0, &mut rng)[0] >= 0.0);
        }
    }

    #[test]
    fn oracle_point_values() {
        assert_eq!(ToyTask::Squares.density(0.0, [-3.0, -3.0]), 0.03125);
        assert_eq!(ToyTask::Squares.density(0.0, [0.0, 0.0]), 0.0);
        let stick = ToyTask::GaussianStick.density(0.75, [0.0, 0.0]);
        assert!((stick - 1.0 / (12.0 * (2.0 * PI).sqrt())).abs() < 1e-15);
        assert!((stick - 0.033_244).abs() < 2e-6, "{stick}");
        assert_eq!(ToyTask::ElasticRing.density(0.0, [0.0, 0.0]), 0.0);
        // on the x = 0 circle of radius 5 at theta = 0: 1 / (4 pi r2)
        let ring = ToyTask::ElasticRing.density(0.0, [5.0, 0.0]);
        assert!((ring - 1.0 / (4.0 * PI * 5.0)).abs() < 1e-12);
        assert_eq!(ToyTask::HalfGaussian.density(0.0, [-0.1, 0.0]), 0.0);
    }

    #[test]
    fn oracles_integrate_to_one() {
        // 512 x 512 cells, each averaged over 4 x 4 midpoints
        let cells = 512;
        let sub = 4;
        let w = 20.0 / (cells * sub) as f64;
        for task in ToyTask::ALL {
            for x in EVAL_CONDITIONS {
                let mut total = 0.0;
                for i in 0..cells * sub {
                    for j in 0..cells * sub {
                        let y = [-10.0 + (i as f64 + 0.5) * w, -10.0 + (j as f64 + 0.5) * w];
                        total += task.density(x, y);
                    }
                }
                total *= w * w;
                assert!((total - 1.0).abs() < 1e-2, "{task} x={x}: {total}");
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = ToyTask::ElasticRing.generate(2000, &mut seeded(7));
        let b = ToyTask::ElasticRing.generate(2000, &mut seeded(7));
        assert_eq!(a.len(), 2000);
        assert_eq!(a, b);
        assert_ne!(a, ToyTask::ElasticRing.generate(2000, &mut seeded(8)));
    }

    #[test]
    fn condition_mean() {
        let d = ToyTask::Squares.generate(1_000_000, &mut seeded(3));
        let mean = d.features().iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() <= 3.0 * (2.0 / 12f64.sqrt()) / 1e3, "{mean}");
    }

    #[test]
    fn unknown_task() {
        let err = "spiral".parse::<ToyTask>().unwrap_err();
        assert!(err.to_string().contains("elastic_ring"));
    }

    proptest! {
        #[test]
        fn ring_level_is_strictly_decreasing(
            x in -0.99f64..0.99,
            y0 in -10.0f64..10.0,
            y1 in -10.0f64..10.0,
            d in 0.0f64..1.99,
        ) {
            prop_assume!(y0.abs() + y1.abs() > 1e-9);
            prop_assert!(ring_level(x, [y0, y1], d) > ring_level(x, [y0, y1], d + 0.01));
        }

        #[test]
        fn ring_offset_solves_the_level_equation(x in -0.99f64..0.99, d in 0.001f64..1.999, theta in 0.0f64..6.28) {
            let (r1, r2) = ring_radii(x, d);
            let y = [r1 * theta.cos(), r2 * theta.sin()];
            let found = ring_offset(x, y).unwrap();
            prop_assert!((found - d).abs() < 1e-9);
        }
    }
}
