//! Weighted Hölder norms, the double-integral Sobolev functional, and Monte
//! Carlo moment estimates on lattice data.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flow::FlowPath;
use crate::grid::{self, Lattice, PairSet, SpatialBox};
use crate::inverse::InversePath;
use crate::linalg::Mat;
use crate::math;

/// Pair set for every Hölder estimate in this module.
pub const NORM_PAIRS: PairSet = PairSet::Local(8);

/// `r₁(x)^power = (1 + |x|²)^{power/2}`.
pub fn weight(x: &[f64], power: f64) -> f64 {
    let r2 = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    math::powf(r2, 0.5 * power)
}

/// Values of a `comps`-component function on the lattice anchored at the
/// lower corner of a box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    bbox: SpatialBox,
    lattice: Lattice,
    values: Vec<f64>,
    comps: usize,
}

impl GridFunction {
    pub fn new(bbox: SpatialBox, step: f64, values: Vec<f64>, comps: usize) -> Result<Self> {
        let lattice = Lattice::anchored(&bbox, step)?;
        if comps == 0 || values.len() != lattice.len() * comps {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} nodes of {comps} components",
                values.len(),
                lattice.len()
            )));
        }
        if !math::all_finite(&values) {
            return Err(Error::NonFiniteValue("grid function values"));
        }
        Ok(Self {
            bbox,
            lattice,
            values,
            comps,
        })
    }

    /// Samples `f` at every node.
    pub fn from_fn(bbox: SpatialBox, step: f64, comps: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let lattice = Lattice::anchored(&bbox, step)?;
        let mut values = vec![0.0; lattice.len() * comps];
        for (idx, out) in values.chunks_mut(comps.max(1)).enumerate() {
            f(&lattice.node(idx), out);
        }
        Self::new(bbox, step, values, comps)
    }

    pub fn bbox(&self) -> &SpatialBox {
        &self.bbox
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn step(&self) -> f64 {
        self.lattice.step()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    /// Multiplies node values by `r₁(node)^power`.
    pub fn weighted(&self, power: f64) -> Self {
        let mut out = self.clone();
        for (idx, chunk) in out.values.chunks_mut(self.comps).enumerate() {
            let w = weight(&self.lattice.node(idx), power);
            chunk.iter_mut().for_each(|v| *v *= w);
        }
        out
    }

    fn require_three_per_axis(&self) -> Result<()> {
        match self.lattice.counts().iter().position(|&n| n < 3) {
            Some(axis) => Err(Error::GridTooCoarse(format!(
                "axis {axis} has {} nodes, need at least 3",
                self.lattice.counts()[axis]
            ))),
            None => Ok(()),
        }
    }
}

/// `|f|_β` for `β ∈ (0, 2]`; derivatives by central differences.
pub fn holder_norm(f: &GridFunction, beta: f64) -> Result<f64> {
    f.require_three_per_axis()?;
    grid::holder_norm(&f.lattice, &f.values, f.comps, beta, NORM_PAIRS, None)
}

/// `(∬ |f(x) − f(y)|^p / |x − y|^{2d + δp} dx dy)^{1/p}` over the box.
///
/// Trapezoid weights on both factors; pairs closer than `h/2`, i.e. the
/// diagonal, are dropped.
pub fn sobolev_functional(f: &GridFunction, delta: f64, p: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) || !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("need δ ∈ (0, 1] and p ≥ 1, got δ = {delta}, p = {p}")));
    }
    f.require_three_per_axis()?;
    let lat = &f.lattice;
    let d = lat.dim();
    let h = lat.step();
    let c = f.comps;
    let weights = trapezoid_weights(lat);
    let exponent = 2.0 * d as f64 + delta * p;
    let offsets = half_offsets(lat);
    let mut multi = vec![0; d];
    let mut total = 0.0;
    for off in &offsets {
        let len = h * math::sqrt(off.iter().map(|v| (v * v) as f64).sum());
        let kernel = math::powf(len, -exponent);
        let mut partial = 0.0;
        for a in 0..lat.len() {
            lat.multi_index(a, &mut multi);
            if let Some(b) = lat.shifted(&multi, off) {
                let diff = math::dist(&f.values[a * c..(a + 1) * c], &f.values[b * c..(b + 1) * c]);
                if diff > 0.0 {
                    partial += weights[a] * weights[b] * math::powf(diff, p);
                }
            }
        }
        total += partial * kernel;
    }
    // each unordered pair stands for both orders
    Ok(math::powf(2.0 * total, 1.0 / p))
}

fn trapezoid_weights(lat: &Lattice) -> Vec<f64> {
    let h = lat.step();
    let mut multi = vec![0; lat.dim()];
    (0..lat.len())
        .map(|idx| {
            lat.multi_index(idx, &mut multi);
            multi
                .iter()
                .zip(lat.counts())
                .map(|(&k, &n)| if k == 0 || k == n - 1 { 0.5 * h } else { h })
                .product()
        })
        .collect()
}

/// All nonzero lattice offsets with a positive leading entry.
fn half_offsets(lat: &Lattice) -> Vec<Vec<i64>> {
    let reach: Vec<i64> = lat.counts().iter().map(|&n| n as i64 - 1).collect();
    let d = reach.len();
    let mut out = Vec::new();
    let mut o: Vec<i64> = reach.iter().map(|r| -r).collect();
    loop {
        if matches!(o.iter().find(|v| **v != 0), Some(v) if *v > 0) {
            out.push(o.clone());
        }
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if o[axis] < reach[axis] {
                o[axis] += 1;
                break;
            }
            o[axis] = -reach[axis];
        }
    }
}

/// Per-point, per-time samples of a map on the lattice of its starting
/// points: flows and inverse flows.
pub trait SpatialSamples {
    fn sample_times(&self) -> &[f64];
    fn sample_count(&self) -> usize;
    fn sample_dim(&self) -> usize;
    fn sample_value(&self, p: usize, k: usize) -> &[f64];
    fn sample_gradient(&self, p: usize, k: usize) -> Option<Mat>;
}

impl SpatialSamples for FlowPath<'_> {
    fn sample_times(&self) -> &[f64] {
        self.times()
    }

    fn sample_count(&self) -> usize {
        self.point_count()
    }

    fn sample_dim(&self) -> usize {
        self.dim()
    }

    fn sample_value(&self, p: usize, k: usize) -> &[f64] {
        self.state(p, k)
    }

    fn sample_gradient(&self, p: usize, k: usize) -> Option<Mat> {
        self.jacobian(p, k)
    }
}

impl SpatialSamples for InversePath {
    fn sample_times(&self) -> &[f64] {
        self.times()
    }

    fn sample_count(&self) -> usize {
        self.point_count()
    }

    fn sample_dim(&self) -> usize {
        self.dim()
    }

    fn sample_value(&self, p: usize, k: usize) -> &[f64] {
        self.value(p, k)
    }

    fn sample_gradient(&self, p: usize, k: usize) -> Option<Mat> {
        self.gradient(p, k)
    }
}

/// `sup_t |r₁^{−(1+ε)} X_t|₀` and `sup_t |r₁^{−ε} ∇X_t|_{β′−1}` on one path.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedHolderReport {
    pub epsilon: f64,
    pub beta_prime: f64,
    pub bbox: SpatialBox,
    pub step: f64,
    pub times: Vec<f64>,
    pub value_per_time: Vec<f64>,
    pub grad_per_time: Option<Vec<f64>>,
    pub sup_weighted_value: f64,
    pub grad_holder_weighted: Option<f64>,
}

/// Builds the report for samples whose starting points are the nodes of the
/// lattice anchored in `bbox` with `step`, in lattice order.
pub fn weighted_holder_report(
    samples: &dyn SpatialSamples,
    bbox: &SpatialBox,
    step: f64,
    epsilon: f64,
    beta_prime: f64,
    with_gradient: bool,
) -> Result<WeightedHolderReport> {
    if !(epsilon > 0.0) || !(1.0..=2.0).contains(&beta_prime) {
        return Err(Error::InvalidArgument(format!(
            "need ε > 0 and β′ ∈ [1, 2], got ε = {epsilon}, β′ = {beta_prime}"
        )));
    }
    let lattice = Lattice::anchored(bbox, step)?;
    let d = samples.sample_dim();
    if samples.sample_count() != lattice.len() || lattice.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} samples in dimension {d} for a lattice of {} nodes in dimension {}",
            samples.sample_count(),
            lattice.len(),
            lattice.dim()
        )));
    }
    let nodes = lattice.nodes();
    let value_w: Vec<f64> = nodes.iter().map(|x| weight(x, -(1.0 + epsilon))).collect();
    let grad_w: Vec<f64> = nodes.iter().map(|x| weight(x, -epsilon)).collect();
    let times = samples.sample_times().to_vec();
    let mut value_per_time = Vec::with_capacity(times.len());
    let mut grad_per_time = with_gradient.then(|| Vec::with_capacity(times.len()));
    let mut buf = vec![0.0; lattice.len() * d * d];
    for k in 0..times.len() {
        let v = (0..lattice.len())
            .map(|p| value_w[p] * math::norm(samples.sample_value(p, k)))
            .fold(0.0, f64::max);
        value_per_time.push(v);
        if let Some(per_time) = grad_per_time.as_mut() {
            for p in 0..lattice.len() {
                let g = samples.sample_gradient(p, k).ok_or(Error::MissingGradient)?;
                for (o, gi) in buf[p * d * d..(p + 1) * d * d].iter_mut().zip(g.as_slice()) {
                    *o = grad_w[p] * gi;
                }
            }
            let mut value = grid::sup_norm(&buf, d * d);
            if beta_prime > 1.0 {
                value += grid::holder_seminorm(&lattice, &buf, d * d, beta_prime - 1.0, NORM_PAIRS);
            }
            per_time.push(value);
        }
    }
    let sup_weighted_value = value_per_time.iter().copied().fold(0.0, f64::max);
    let grad_holder_weighted = grad_per_time.as_ref().map(|g| g.iter().copied().fold(0.0, f64::max));
    Ok(WeightedHolderReport {
        epsilon,
        beta_prime,
        bbox: bbox.clone(),
        step,
        times,
        value_per_time,
        grad_per_time,
        sup_weighted_value,
        grad_holder_weighted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    /// Normal-approximation 95% half-width.
    pub ci95: f64,
    pub samples: usize,
}

/// Sample mean of `q^p` with its 95% half-width.
pub fn moment_estimate(quantities: &[f64], p: f64) -> Result<MomentEstimate> {
    let n = quantities.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("moment estimate needs at least 2 samples, got {n}")));
    }
    let powered: Vec<f64> = quantities.iter().map(|q| math::powf(math::abs(*q), p)).collect();
    let mean = powered.iter().sum::<f64>() / n as f64;
    let var = powered.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(MomentEstimate {
        mean,
        ci95: 1.96 * math::sqrt(var / n as f64),
        samples: n,
    })
}
