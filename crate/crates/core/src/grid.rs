//! Spatial boxes, regular lattices on them, and the grid-pair machinery
//! behind sup norms and Hölder seminorm estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Axis-aligned box `Π [lower_i, upper_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SpatialBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("box must satisfy lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^d`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Grows every side by `margin[i]` on both ends.
    pub fn inflate(&self, margin: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(margin).map(|(l, m)| l - m).collect(),
            upper: self.upper.iter().zip(margin).map(|(u, m)| u + m).collect(),
        }
    }
}

/// Regular lattice with spacing `step`. Node `k` on axis `i` sits at
/// `base[i] + (first[i] + k) * step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    base: Vec<f64>,
    first: Vec<i64>,
    counts: Vec<usize>,
    step: f64,
}

const SNAP: f64 = 1e-9;

impl Lattice {
    /// Nodes `lower + k h`, `k = 0..=floor(side / h)`.
    pub fn anchored(bbox: &SpatialBox, step: f64) -> Result<Self> {
        check_step(step)?;
        let counts = bbox
            .lower
            .iter()
            .zip(&bbox.upper)
            .map(|(l, u)| math::floor((u - l) / step + SNAP) as usize + 1)
            .collect();
        Ok(Self {
            base: bbox.lower.clone(),
            first: vec![0; bbox.dim()],
            counts,
            step,
        })
    }

    /// Nodes at integer multiples of `h` inside the box. Enlarging the box
    /// only ever adds nodes.
    pub fn aligned(bbox: &SpatialBox, step: f64) -> Result<Self> {
        check_step(step)?;
        let mut first = Vec::with_capacity(bbox.dim());
        let mut counts = Vec::with_capacity(bbox.dim());
        for (l, u) in bbox.lower.iter().zip(&bbox.upper) {
            let lo = math::ceil(l / step - SNAP) as i64;
            let hi = math::floor(u / step + SNAP) as i64;
            if hi < lo {
                return Err(Error::GridTooCoarse(format!(
                    "no multiple of {step} lies in [{l}, {u}]"
                )));
            }
            first.push(lo);
            counts.push((hi - lo + 1) as usize);
        }
        Ok(Self {
            base: vec![0.0; bbox.dim()],
            first,
            counts,
            step,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of flat node `idx` (last axis varies fastest).
    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for axis in (0..self.dim()).rev() {
            out[axis] = idx % self.counts[axis];
            idx /= self.counts[axis];
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (m, c)| acc * c + m)
    }

    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        self.base[axis] + (self.first[axis] + k as i64) as f64 * self.step
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut multi = vec![0; self.dim()];
        self.multi_index(idx, &mut multi);
        multi
            .iter()
            .enumerate()
            .map(|(axis, &k)| self.coordinate(axis, k))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Flat index of the node displaced by `offset`, if it exists.
    pub fn shifted(&self, multi: &[usize], offset: &[i64]) -> Option<usize> {
        let mut acc = 0usize;
        for axis in 0..self.dim() {
            let k = multi[axis] as i64 + offset[axis];
            if k < 0 || k >= self.counts[axis] as i64 {
                return None;
            }
            acc = acc * self.counts[axis] + k as usize;
        }
        Some(acc)
    }

    /// Locates the cell containing `x`: per axis the lower node index and the
    /// fractional position inside the cell. `None` outside the lattice hull.
    pub fn locate(&self, x: &[f64]) -> Option<(Vec<usize>, Vec<f64>)> {
        let mut cell = Vec::with_capacity(self.dim());
        let mut frac = Vec::with_capacity(self.dim());
        for axis in 0..self.dim() {
            let lo = self.coordinate(axis, 0);
            let pos = (x[axis] - lo) / self.step;
            let n = self.counts[axis];
            if !(pos >= -SNAP) || pos > (n - 1) as f64 + SNAP {
                return None;
            }
            if n == 1 {
                cell.push(0);
                frac.push(0.0);
                continue;
            }
            let k = (math::floor(pos).max(0.0) as usize).min(n - 2);
            cell.push(k);
            frac.push((pos - k as f64).clamp(0.0, 1.0));
        }
        Some((cell, frac))
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("grid step must be positive, got {step}")));
    }
    Ok(())
}

/// Which node pairs enter a Hölder seminorm estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairSet {
    /// Pairs at most this many steps apart per axis and closer than 1.
    Local(usize),
    /// Every pair closer than 1.
    UnitBall,
}

/// Offsets with a positive leading nonzero entry, so each unordered pair is
/// visited once, together with their Euclidean lengths.
fn pair_offsets(lattice: &Lattice, pairs: PairSet) -> Vec<(Vec<i64>, f64)> {
    let h = lattice.step();
    let unit_reach = math::ceil(1.0 / h) as i64;
    let reach = match pairs {
        PairSet::Local(r) => (r as i64).min(unit_reach),
        PairSet::UnitBall => unit_reach,
    };
    let d = lattice.dim();
    let reach: Vec<i64> = lattice
        .counts()
        .iter()
        .map(|&c| reach.min(c as i64 - 1))
        .collect();
    let mut out = Vec::new();
    let mut o = vec![0i64; d];
    // odometer over the box [-reach, reach]^d
    for (i, v) in o.iter_mut().enumerate() {
        *v = -reach[i];
    }
    loop {
        let lead = o.iter().find(|v| **v != 0).copied();
        if matches!(lead, Some(v) if v > 0) {
            let len = h * math::sqrt(o.iter().map(|v| (v * v) as f64).sum());
            if len < 1.0 {
                out.push((o.clone(), len));
            }
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

/// `max_nodes |f|` where each node holds a block of `comps` values.
pub fn sup_norm(values: &[f64], comps: usize) -> f64 {
    values
        .chunks(comps)
        .map(math::norm)
        .fold(0.0, f64::max)
}

/// Grid estimate of `sup |f(x) - f(y)| / |x - y|^alpha` over the pair set.
pub fn holder_seminorm(
    lattice: &Lattice,
    values: &[f64],
    comps: usize,
    alpha: f64,
    pairs: PairSet,
) -> f64 {
    debug_assert_eq!(values.len(), lattice.len() * comps);
    let offsets = pair_offsets(lattice, pairs);
    let denoms: Vec<f64> = offsets.iter().map(|(_, l)| math::powf(*l, alpha)).collect();
    let mut multi = vec![0; lattice.dim()];
    let mut best: f64 = 0.0;
    for a in 0..lattice.len() {
        lattice.multi_index(a, &mut multi);
        let fa = &values[a * comps..(a + 1) * comps];
        for ((off, _), den) in offsets.iter().zip(&denoms) {
            if let Some(b) = lattice.shifted(&multi, off) {
                let fb = &values[b * comps..(b + 1) * comps];
                best = best.max(math::dist(fa, fb) / den);
            }
        }
    }
    best
}

/// Central-difference partial derivative along `axis`, second-order
/// one-sided at the two boundary layers.
pub fn partial_derivative(
    lattice: &Lattice,
    values: &[f64],
    comps: usize,
    axis: usize,
) -> Result<Vec<f64>> {
    let n = lattice.counts()[axis];
    if n < 3 {
        return Err(Error::GridTooCoarse(format!(
            "axis {axis} has {n} nodes, need at least 3"
        )));
    }
    let h = lattice.step();
    let mut out = vec![0.0; values.len()];
    let mut multi = vec![0; lattice.dim()];
    let mut off = vec![0i64; lattice.dim()];
    for idx in 0..lattice.len() {
        lattice.multi_index(idx, &mut multi);
        let k = multi[axis];
        let mut at = |shift: i64| {
            off[axis] = shift;
            let j = lattice.shifted(&multi, &off).expect("stencil inside lattice");
            off[axis] = 0;
            j
        };
        let (stencil, coeffs): ([usize; 3], [f64; 3]) = if k == 0 {
            ([at(0), at(1), at(2)], [-1.5, 2.0, -0.5])
        } else if k == n - 1 {
            ([at(0), at(-1), at(-2)], [1.5, -2.0, 0.5])
        } else {
            ([at(-1), at(0), at(1)], [-0.5, 0.0, 0.5])
        };
        for c in 0..comps {
            out[idx * comps + c] = stencil
                .iter()
                .zip(&coeffs)
                .map(|(j, w)| w * values[j * comps + c])
                .sum::<f64>()
                / h;
        }
    }
    Ok(out)
}

/// Multilinear interpolation of lattice data at `x`.
pub fn interpolate(lattice: &Lattice, values: &[f64], comps: usize, x: &[f64], out: &mut [f64]) -> bool {
    let Some((cell, frac)) = lattice.locate(x) else {
        return false;
    };
    let d = lattice.dim();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut corner = vec![0usize; d];
    for mask in 0..(1usize << d) {
        let mut w = 1.0;
        for axis in 0..d {
            let up = (mask >> axis) & 1 == 1;
            let single = lattice.counts()[axis] == 1;
            if up && single {
                w = 0.0;
                break;
            }
            corner[axis] = cell[axis] + up as usize;
            w *= if up { frac[axis] } else { 1.0 - frac[axis] };
        }
        if w == 0.0 {
            continue;
        }
        let j = lattice.flat_index(&corner);
        for c in 0..comps {
            out[c] += w * values[j * comps + c];
        }
    }
    true
}

/// `|f|_β` for `β ∈ (0, 2]`: sup norm plus either the `β`-Hölder seminorm of
/// `f` or, for `β > 1`, the sup norms and `(β − 1)`-seminorms of the first
/// partials. `partials[k]` supplies `∂_k f`; central differences are used
/// when it is `None`.
pub fn holder_norm(
    lattice: &Lattice,
    values: &[f64],
    comps: usize,
    beta: f64,
    pairs: PairSet,
    partials: Option<&[Vec<f64>]>,
) -> Result<f64> {
    if !(beta > 0.0 && beta <= 2.0) {
        return Err(Error::InvalidArgument(format!("Hölder exponent {beta} outside (0, 2]")));
    }
    let mut total = sup_norm(values, comps);
    if beta <= 1.0 {
        return Ok(total + holder_seminorm(lattice, values, comps, beta, pairs));
    }
    for axis in 0..lattice.dim() {
        let owned;
        let dk: &[f64] = match partials {
            Some(p) => &p[axis],
            None => {
                owned = partial_derivative(lattice, values, comps, axis)?;
                &owned
            }
        };
        total += sup_norm(dk, comps) + holder_seminorm(lattice, dk, comps, beta - 1.0, pairs);
    }
    Ok(total)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchored_counts_match_side_over_step() {
        let b = SpatialBox::new(vec![-1.0, 0.0], vec![1.0, 0.5]).unwrap();
        let l = Lattice::anchored(&b, 0.25).unwrap();
        assert_eq!(l.counts(), &[9, 3]);
        assert_eq!(l.len(), 27);
        assert_eq!(l.node(0), vec![-1.0, 0.0]);
        assert_eq!(l.node(26), vec![1.0, 0.5]);
    }

    #[test]
    fn aligned_lattices_nest() {
        let small = Lattice::aligned(&SpatialBox::cube(1, -1.03, 2.0).unwrap(), 0.1).unwrap();
        let big = Lattice::aligned(&SpatialBox::cube(1, -3.0, 4.0).unwrap(), 0.1).unwrap();
        let bn = big.nodes();
        for n in small.nodes() {
            assert!(bn.contains(&n), "{n:?} missing from enlarged lattice");
        }
    }

    #[test]
    fn pair_offsets_visit_each_pair_once() {
        let l = Lattice::anchored(&SpatialBox::cube(2, 0.0, 1.0).unwrap(), 0.25).unwrap();
        let offs = pair_offsets(&l, PairSet::Local(8));
        for (o, _) in &offs {
            let neg: Vec<i64> = o.iter().map(|v| -v).collect();
            assert!(!offs.iter().any(|(p, _)| *p == neg));
        }
        assert!(offs.iter().all(|(_, len)| *len < 1.0));
    }

    #[test]
    fn interpolation_is_exact_on_affine_data() {
        let l = Lattice::anchored(&SpatialBox::cube(2, -1.0, 1.0).unwrap(), 0.5).unwrap();
        let vals: Vec<f64> = l.nodes().iter().map(|x| 2.0 * x[0] - 3.0 * x[1] + 0.5).collect();
        let mut out = [0.0];
        assert!(interpolate(&l, &vals, 1, &[0.3, -0.7], &mut out));
        assert!((out[0] - (0.6 + 2.1 + 0.5)).abs() < 1e-14);
        assert!(!interpolate(&l, &vals, 1, &[1.5, 0.0], &mut out));
    }
}
