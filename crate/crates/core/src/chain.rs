//! Chain-rule composition of univariate heads into joint conditional
//! densities, averaged over a frozen set of factorization orders.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Scalar;
use crate::error::{DdnError, Result};
use crate::model::{assemble_input, ConditionalMask, DdnModel, ModelInput};
use crate::objective::BinPartition;

pub const DEFAULT_MAX_PATHS: usize = 5;
/// Densities below this are clamped before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Largest number of conditioned rows a single path may need for a grid.
pub const GRID_ROW_BUDGET: usize = 1 << 18;

const EVAL_CHUNK: usize = 2048;

/// Factorization orders over `0..J`, fixed once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationPaths {
    target_dim: usize,
    paths: Vec<Vec<usize>>,
}

impl PermutationPaths {
    pub fn new(target_dim: usize, paths: Vec<Vec<usize>>) -> Result<Self> {
        if paths.is_empty() {
            return Err(DdnError::config("at least one path is required"));
        }
        let mut seen = BTreeSet::new();
        for p in &paths {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (0..target_dim).collect::<Vec<_>>() {
                return Err(DdnError::config(format!("{p:?} is not a permutation of 0..{target_dim}")));
            }
            if !seen.insert(p.clone()) {
                return Err(DdnError::config(format!("duplicate path {p:?}")));
            }
        }
        Ok(Self { target_dim, paths })
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    /// Mask for the factor at `position` of `path`: ones at every earlier
    /// target in that path.
    pub fn prefix_mask(&self, path: usize, position: usize) -> ConditionalMask {
        ConditionalMask::with_ones(self.target_dim, &self.paths[path][..position])
    }
}

fn factorial_capped(n: usize, cap: usize) -> usize {
    let mut f = 1usize;
    for i in 2..=n {
        f = f.saturating_mul(i);
        if f > cap {
            return f;
        }
    }
    f
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// `K = min(J!, max_paths)` distinct orders. When every permutation fits
/// they are all used in lexicographic order; otherwise they are drawn
/// without replacement from `rng`.
pub fn build_paths<R: Rng + ?Sized>(target_dim: usize, max_paths: usize, rng: &mut R) -> Result<PermutationPaths> {
    if target_dim == 0 || max_paths == 0 {
        return Err(DdnError::config("paths need J >= 1 and a positive cap"));
    }
    let total = factorial_capped(target_dim, max_paths);
    let paths = if total <= max_paths {
        all_permutations(target_dim)
    } else {
        let mut seen = BTreeSet::new();
        let mut paths = Vec::with_capacity(max_paths);
        let mut order: Vec<usize> = (0..target_dim).collect();
        while paths.len() < max_paths {
            order.shuffle(rng);
            if seen.insert(order.clone()) {
                paths.push(order.clone());
            }
        }
        paths
    };
    PermutationPaths::new(target_dim, paths)
}

/// Deduplicated prefix masks of a path set, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet(Vec<ConditionalMask>);

impl MaskSet {
    pub fn masks(&self) -> &[ConditionalMask] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, mask: &ConditionalMask) -> bool {
        self.0.binary_search(mask).is_ok()
    }

    /// Uniform draw.
    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> &ConditionalMask {
        &self.0[rng.random_range(0..self.0.len())]
    }
}

pub fn build_mask_set(paths: &PermutationPaths) -> MaskSet {
    let mut set = BTreeSet::new();
    for k in 0..paths.len() {
        for j in 0..paths.target_dim() {
            set.insert(paths.prefix_mask(k, j));
        }
    }
    MaskSet(set.into_iter().collect())
}

fn check_model<T: Scalar>(model: &DdnModel<T>, paths: &PermutationPaths) -> Result<()> {
    if model.config().target_dim != paths.target_dim() {
        return Err(DdnError::dim(format!(
            "model has {} targets, paths cover {}",
            model.config().target_dim,
            paths.target_dim()
        )));
    }
    Ok(())
}

/// Head `target` of one eval-mode forward pass conditioned through `mask`.
pub fn conditional_head<T: Scalar>(
    model: &DdnModel<T>,
    x: &[f64],
    y_cond: &[f64],
    mask: &ConditionalMask,
    target: usize,
) -> Result<Vec<f64>> {
    let cfg = model.config();
    if target >= cfg.target_dim {
        return Err(DdnError::dim(format!("target {target} out of 0..{}", cfg.target_dim)));
    }
    if cfg.target_dim > 1 && mask.is_set(target) {
        return Err(DdnError::Usage(format!(
            "target {target} cannot be conditioned on itself (mask {mask})"
        )));
    }
    let input = assemble_input(cfg, x, y_cond, mask)?;
    let heads = model.predict(&input)?;
    Ok(heads[target].iter().map(|v| v.f64()).collect())
}

/// Runs `rows` inputs through the model in chunks and returns head
/// `target` for each, row-major `[rows, N]`.
fn batched_head<T: Scalar>(model: &DdnModel<T>, rows: &[ModelInput], target: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * model.config().bins);
    for chunk in rows.chunks(EVAL_CHUNK) {
        let input = ModelInput::stack(chunk)?;
        let heads = model.predict(&input)?;
        out.extend(heads[target].iter().map(|v| v.f64()));
    }
    Ok(out)
}

/// Estimated density on a regular grid of cells spanning the target ranges.
/// Values are stored with the first target dimension varying slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    ranges: Vec<(f64, f64)>,
    resolution: Vec<usize>,
    condition: Vec<f64>,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(ranges: Vec<(f64, f64)>, resolution: Vec<usize>, condition: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if ranges.len() != resolution.len() || ranges.is_empty() {
            return Err(DdnError::dim("one resolution per range required"));
        }
        let cells: usize = resolution.iter().product();
        if cells != values.len() {
            return Err(DdnError::dim(format!("{cells} cells but {} values", values.len())));
        }
        Ok(Self {
            ranges,
            resolution,
            condition,
            values,
        })
    }

    /// Grid sharing this one's geometry with values from `f(center)`.
    pub fn from_fn(ranges: Vec<(f64, f64)>, resolution: Vec<usize>, condition: Vec<f64>, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let cells: usize = resolution.iter().product();
        let mut grid = Self::new(ranges, resolution, condition, vec![0.0; cells])?;
        let mut center = vec![0.0; grid.dims()];
        for i in 0..cells {
            grid.cell_center_into(i, &mut center);
            grid.values[i] = f(&center);
        }
        Ok(grid)
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn condition(&self) -> &[f64] {
        &self.condition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_width(&self, dim: usize) -> f64 {
        let (lo, hi) = self.ranges[dim];
        (hi - lo) / self.resolution[dim] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dims()).map(|d| self.cell_width(d)).product()
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn same_geometry(&self, other: &DensityGrid) -> bool {
        self.ranges == other.ranges && self.resolution == other.resolution
    }

    pub fn cell_indices(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for d in (0..self.dims()).rev() {
            idx[d] = flat % self.resolution[d];
            flat /= self.resolution[d];
        }
        idx
    }

    fn cell_center_into(&self, flat: usize, out: &mut [f64]) {
        for (d, i) in self.cell_indices(flat).into_iter().enumerate() {
            out[d] = self.ranges[d].0 + (i as f64 + 0.5) * self.cell_width(d);
        }
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dims()];
        self.cell_center_into(flat, &mut c);
        c
    }

    /// Text table: `#`-prefixed header lines, then one row per cell with
    /// indices, center coordinates and density, all floats printed with
    /// nine significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dims\t{}", self.dims());
        for (d, &(lo, hi)) in self.ranges.iter().enumerate() {
            let _ = writeln!(s, "# range{d}\t{}\t{}\t{}", sig9(lo), sig9(hi), self.resolution[d]);
        }
        let cond: Vec<String> = self.condition.iter().map(|&v| sig9(v)).collect();
        let _ = writeln!(s, "# condition\t{}", cond.join("\t"));
        let mut cols: Vec<String> = (0..self.dims()).map(|d| format!("i{d}")).collect();
        cols.extend((0..self.dims()).map(|d| format!("y{d}")));
        cols.push("density".into());
        let _ = writeln!(s, "{}", cols.join("\t"));
        let mut center = vec![0.0; self.dims()];
        for (flat, &v) in self.values.iter().enumerate() {
            self.cell_center_into(flat, &mut center);
            for i in self.cell_indices(flat) {
                let _ = write!(s, "{i}\t");
            }
            for &c in &center {
                let _ = write!(s, "{}\t", sig9(c));
            }
            let _ = writeln!(s, "{}", sig9(v));
        }
        s
    }
}

/// Scientific notation with nine significant digits.
pub fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Per-path joint grids (before averaging).
pub fn joint_grid_paths<T: Scalar>(
    model: &DdnModel<T>,
    x: &[f64],
    paths: &PermutationPaths,
    resolution: Option<usize>,
) -> Result<Vec<DensityGrid>> {
    check_model(model, paths)?;
    let cfg = model.config();
    let n = cfg.bins;
    let res = resolution.unwrap_or(n);
    if res == 0 || n % res != 0 {
        return Err(DdnError::config(format!(
            "grid resolution {res} must divide the bin count {n}"
        )));
    }
    let dims = cfg.target_dim;
    let needed = res.checked_pow(dims as u32 - 1).unwrap_or(usize::MAX);
    if needed > GRID_ROW_BUDGET {
        return Err(DdnError::config(format!(
            "a {dims}-dimensional grid at resolution {res} needs {needed} conditioned forward passes per path (limit {GRID_ROW_BUDGET}); use a coarser grid resolution"
        )));
    }
    let group = n / res;
    let partitions = cfg.partitions();
    let widths: Vec<f64> = partitions.iter().map(|p| p.width() * group as f64).collect();
    let centers: Vec<Vec<f64>> = partitions
        .iter()
        .zip(&widths)
        .map(|(p, &w)| (0..res).map(|i| p.lo() + (i as f64 + 0.5) * w).collect())
        .collect();
    let coarse = |probs: &[f64]| -> Vec<f64> { probs.chunks(group).map(|c| c.iter().sum()).collect() };

    let mut grids = Vec::with_capacity(paths.len());
    for (k, path) in paths.paths().iter().enumerate() {
        // prefix cells in path order, each with its mass so far
        let mut prefixes: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
        for (pos, &target) in path.iter().enumerate() {
            let mask = paths.prefix_mask(k, pos);
            let rows: Vec<ModelInput> = prefixes
                .iter()
                .map(|(cells, _)| {
                    let mut y = vec![0.0; dims];
                    for (&dim, &cell) in path.iter().zip(cells) {
                        y[dim] = centers[dim][cell];
                    }
                    assemble_input(cfg, x, &y, &mask)
                })
                .collect::<Result<_>>()?;
            let probs = batched_head(model, &rows, target)?;
            let mut next = Vec::with_capacity(prefixes.len() * res);
            for (r, (cells, mass)) in prefixes.iter().enumerate() {
                let factor = coarse(&probs[r * n..(r + 1) * n]);
                for (cell, p) in factor.into_iter().enumerate() {
                    let mut c = cells.clone();
                    c.push(cell);
                    next.push((c, mass * p));
                }
            }
            prefixes = next;
        }
        let volume: f64 = widths.iter().product();
        let mut values = vec![0.0; res.pow(dims as u32)];
        for (cells, mass) in prefixes {
            let mut by_dim = vec![0; dims];
            for (&dim, &cell) in path.iter().zip(&cells) {
                by_dim[dim] = cell;
            }
            let flat = by_dim.iter().fold(0, |acc, &i| acc * res + i);
            values[flat] = mass / volume;
        }
        grids.push(DensityGrid::new(cfg.ranges.clone(), vec![res; dims], x.to_vec(), values)?);
    }
    Ok(grids)
}

/// Joint density grid averaged over all paths. `resolution` must divide
/// the bin count; `None` uses one cell per bin.
pub fn joint_grid<T: Scalar>(
    model: &DdnModel<T>,
    x: &[f64],
    paths: &PermutationPaths,
    resolution: Option<usize>,
) -> Result<DensityGrid> {
    let grids = joint_grid_paths(model, x, paths, resolution)?;
    Ok(average_grids(&grids))
}

pub(crate) fn average_grids(grids: &[DensityGrid]) -> DensityGrid {
    let k = grids.len() as f64;
    let mut values = vec![0.0; grids[0].values.len()];
    for g in grids {
        for (acc, &v) in values.iter_mut().zip(&g.values) {
            *acc += v;
        }
    }
    for v in &mut values {
        *v /= k;
    }
    DensityGrid {
        values,
        ..grids[0].clone()
    }
}

/// Log of the path-averaged joint density at `(x, y)`.
pub fn sample_log_likelihood<T: Scalar>(
    model: &DdnModel<T>,
    x: &[f64],
    y: &[f64],
    partitions: &[BinPartition],
    paths: &PermutationPaths,
) -> Result<f64> {
    let input_dim = model.config().input_dim;
    if x.len() != input_dim {
        return Err(DdnError::dim(format!("expected {input_dim} features, got {}", x.len())));
    }
    Ok(batch_log_likelihood(model, x, y, partitions, paths)?[0])
}

/// [`sample_log_likelihood`] for many rows at once; `xs` and `ys` are
/// row-major. Every distinct prefix mask is evaluated once per row.
pub fn batch_log_likelihood<T: Scalar>(
    model: &DdnModel<T>,
    xs: &[f64],
    ys: &[f64],
    partitions: &[BinPartition],
    paths: &PermutationPaths,
) -> Result<Vec<f64>> {
    check_model(model, paths)?;
    let cfg = model.config();
    let (dx, dy) = (cfg.input_dim, cfg.target_dim);
    if partitions.len() != dy {
        return Err(DdnError::dim("one partition per target dimension required"));
    }
    if xs.len() % dx != 0 || ys.len() % dy != 0 || xs.len() / dx != ys.len() / dy {
        return Err(DdnError::dim("feature and target rows disagree"));
    }
    let rows = xs.len() / dx;
    let n = cfg.bins;

    // mask -> heads for every row
    let mut cache: BTreeMap<ConditionalMask, Vec<Vec<f64>>> = BTreeMap::new();
    for k in 0..paths.len() {
        for pos in 0..dy {
            let mask = paths.prefix_mask(k, pos);
            if cache.contains_key(&mask) {
                continue;
            }
            let mut heads = vec![Vec::with_capacity(rows * n); dy];
            for start in (0..rows).step_by(EVAL_CHUNK) {
                let end = (start + EVAL_CHUNK).min(rows);
                let parts: Vec<ModelInput> = (start..end)
                    .map(|r| assemble_input(cfg, &xs[r * dx..(r + 1) * dx], &ys[r * dy..(r + 1) * dy], &mask))
                    .collect::<Result<_>>()?;
                let out = model.predict(&ModelInput::stack(&parts)?)?;
                for (dst, src) in heads.iter_mut().zip(out) {
                    dst.extend(src.iter().map(|v| v.f64()));
                }
            }
            cache.insert(mask, heads);
        }
    }

    let k = paths.len() as f64;
    Ok((0..rows)
        .map(|r| {
            let y = &ys[r * dy..(r + 1) * dy];
            let mut total = 0.0;
            for (pi, path) in paths.paths().iter().enumerate() {
                let mut prod = 1.0;
                for (pos, &target) in path.iter().enumerate() {
                    let heads = &cache[&paths.prefix_mask(pi, pos)][target];
                    prod *= partitions[target].piecewise_density(&heads[r * n..(r + 1) * n], y[target]);
                }
                total += prod;
            }
            (total / k).max(DENSITY_FLOOR).ln()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mode;
    use crate::model::{ModelConfig, Variant};
    use crate::rng::seeded;

    fn model(dims: usize, bins: usize, seed: u64) -> DdnModel<f64> {
        let cfg = ModelConfig::new(1, vec![(-10.0, 10.0); dims], Variant::Ddn, 0.1)
            .unwrap()
            .with_bins(bins)
            .unwrap();
        DdnModel::new(cfg, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn path_counts() {
        let mut rng = seeded(0);
        let p1 = build_paths(1, 5, &mut rng).unwrap();
        assert_eq!(p1.paths(), &[vec![0]]);
        let p2 = build_paths(2, 5, &mut rng).unwrap();
        assert_eq!(p2.paths(), &[vec![0, 1], vec![1, 0]]);
        let p3 = build_paths(3, 5, &mut rng).unwrap();
        assert_eq!(p3.len(), 5);
        let p4 = build_paths(4, 5, &mut rng).unwrap();
        assert_eq!(p4.len(), 5);
        let distinct: BTreeSet<_> = p4.paths().iter().cloned().collect();
        assert_eq!(distinct.len(), 5);
        assert_eq!(build_paths(4, 5, &mut seeded(9)).unwrap(), build_paths(4, 5, &mut seeded(9)).unwrap());
        assert_eq!(build_paths(3, 10, &mut rng).unwrap().len(), 6);
    }

    #[test]
    fn mask_sets() {
        let mut rng = seeded(0);
        let s1 = build_mask_set(&build_paths(1, 5, &mut rng).unwrap());
        assert_eq!(s1.masks(), &[ConditionalMask::empty(1)]);
        let s2 = build_mask_set(&build_paths(2, 5, &mut rng).unwrap());
        let bits: Vec<&[u8]> = s2.masks().iter().map(|m| m.bits()).collect();
        assert_eq!(bits, vec![&[0u8, 0][..], &[0, 1], &[1, 0]]);

        let p = PermutationPaths::new(3, vec![vec![1, 2, 0]]).unwrap();
        let s = build_mask_set(&p);
        for bits in [[0u8, 0, 0], [0, 1, 0], [0, 1, 1]] {
            assert!(s.contains(&ConditionalMask::new(bits.to_vec()).unwrap()));
        }
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn invalid_paths_rejected() {
        assert!(PermutationPaths::new(2, vec![vec![0, 0]]).is_err());
        assert!(PermutationPaths::new(2, vec![vec![0, 1], vec![0, 1]]).is_err());
        assert!(PermutationPaths::new(2, vec![]).is_err());
    }

    #[test]
    fn conditional_head_rules() {
        let m = model(2, 64, 1);
        let mask = ConditionalMask::new(vec![1, 0]).unwrap();
        let a = conditional_head(&m, &[0.3], &[2.0, 7.0], &mask, 1).unwrap();
        let b = conditional_head(&m, &[0.3], &[2.0, -4.0], &mask, 1).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(matches!(
            conditional_head(&m, &[0.3], &[2.0, 7.0], &mask, 0),
            Err(DdnError::Usage(_))
        ));

        let uni = model(1, 64, 2);
        let h = conditional_head(&uni, &[0.1], &[0.0], &ConditionalMask::empty(1), 0).unwrap();
        let (direct, _) = uni
            .forward(&[0.1], &[0.0], &ConditionalMask::empty(1), Mode::Eval, &mut seeded(0))
            .unwrap();
        let h32: Vec<f32> = h.iter().map(|&v| v as f32).collect();
        assert_eq!(h32, direct.head(0));
    }

    #[test]
    fn grid_matches_brute_force_product() {
        let m = model(2, 8, 3);
        let paths = build_paths(2, 5, &mut seeded(0)).unwrap();
        let grid = joint_grid(&m, &[0.25], &paths, Some(4)).unwrap();
        let width = 5.0;
        let centers = [-7.5, -2.5, 2.5, 7.5];
        let coarse = |h: Vec<f64>| -> Vec<f64> { h.chunks(2).map(|c| c[0] + c[1]).collect() };
        let mut expected = vec![0.0; 16];
        for a in 0..4 {
            for b in 0..4 {
                let first = coarse(conditional_head(&m, &[0.25], &[0.0, 0.0], &ConditionalMask::empty(2), 0).unwrap());
                let second = coarse(
                    conditional_head(&m, &[0.25], &[centers[a], 0.0], &ConditionalMask::new(vec![1, 0]).unwrap(), 1).unwrap(),
                );
                let p12 = first[a] * second[b];
                let first = coarse(conditional_head(&m, &[0.25], &[0.0, 0.0], &ConditionalMask::empty(2), 1).unwrap());
                let second = coarse(
                    conditional_head(&m, &[0.25], &[0.0, centers[b]], &ConditionalMask::new(vec![0, 1]).unwrap(), 0).unwrap(),
                );
                let p21 = first[b] * second[a];
                expected[a * 4 + b] = (p12 + p21) / 2.0 / (width * width);
            }
        }
        for (g, e) in grid.values().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
        assert!((grid.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_budget_and_resolution_errors() {
        let m = model(4, 256, 4);
        let paths = build_paths(4, 5, &mut seeded(0)).unwrap();
        assert!(matches!(joint_grid(&m, &[0.0], &paths, None), Err(DdnError::Config(_))));
        assert!(matches!(joint_grid(&m, &[0.0], &paths, Some(100)), Err(DdnError::Config(_))));
        let g = joint_grid(&m, &[0.0], &paths, Some(4)).unwrap();
        assert!((g.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn likelihood_cases() {
        let uni = model(1, 64, 5);
        let paths = build_paths(1, 5, &mut seeded(0)).unwrap();
        let parts = uni.config().partitions();
        let ll = sample_log_likelihood(&uni, &[0.2], &[1.3], &parts, &paths).unwrap();
        let head = conditional_head(&uni, &[0.2], &[1.3], &ConditionalMask::empty(1), 0).unwrap();
        assert_eq!(ll, parts[0].piecewise_density(&head, 1.3).ln());

        let out = sample_log_likelihood(&uni, &[0.2], &[11.0], &parts, &paths).unwrap();
        assert_eq!(out, DENSITY_FLOOR.ln());

        let m = model(2, 64, 6);
        let p2 = build_paths(2, 5, &mut seeded(0)).unwrap();
        let single = PermutationPaths::new(2, vec![vec![0, 1]]).unwrap();
        let parts = m.config().partitions();
        let both = sample_log_likelihood(&m, &[0.1], &[1.0, -2.0], &parts, &p2).unwrap();
        let f = |mask: Vec<u8>, y: [f64; 2], j: usize| {
            let h = conditional_head(&m, &[0.1], &y, &ConditionalMask::new(mask).unwrap(), j).unwrap();
            parts[j].piecewise_density(&h, y[j])
        };
        let y = [1.0, -2.0];
        let p12 = f(vec![0, 0], y, 0) * f(vec![1, 0], y, 1);
        let p21 = f(vec![0, 0], y, 1) * f(vec![0, 1], y, 0);
        assert!((both - ((p12 + p21) / 2.0).ln()).abs() < 1e-12);
        let one = sample_log_likelihood(&m, &[0.1], &[1.0, -2.0], &parts, &single).unwrap();
        assert!((one - p12.ln()).abs() < 1e-12);
    }

    #[test]
    fn grid_text_export() {
        let g = DensityGrid::new(vec![(-1.0, 1.0)], vec![2], vec![0.25], vec![0.5, 0.5]).unwrap();
        let text = g.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# dims\t1");
        assert_eq!(lines[1], "# range0\t-1.00000000e0\t1.00000000e0\t2");
        assert_eq!(lines[2], "# condition\t2.50000000e-1");
        assert_eq!(lines[3], "i0\ty0\tdensity");
        assert_eq!(lines[4], "0\t-5.00000000e-1\t5.00000000e-1");
        assert_eq!(lines.len(), 6);
    }
}
