//! Seeded driving noise: Brownian increments on a jump-adapted grid and the
//! jump events of a finite-activity Poisson random measure.
//!
//! Each `(seed, path_index)` owns a ChaCha stream. Draws are consumed in a
//! fixed order: jump count, jump times, jump atoms, then the `m` Brownian
//! increments of each refined interval in time order. Noise therefore
//! depends only on the measure's rates, never on the coefficients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::coeffs::MarkMeasure;
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointKind {
    Base,
    /// A jump happens here; the payload is the atom index.
    Jump(usize),
}

/// Strictly increasing times from `s` to `t` with per-point flags.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    kinds: Vec<PointKind>,
    /// Index `i` of base point `s + (t − s) i / N`, if the point is one.
    base_index: Vec<Option<usize>>,
    base_steps: usize,
}

impl TimeGrid {
    /// `s + (t − s) i / N`, `i = 0..=N`. The ratio `i / N` is rounded once,
    /// so grids that share a rational time agree bitwise.
    pub fn uniform(s: f64, t: f64, steps: usize) -> Result<Self> {
        if !(t > s) || !s.is_finite() || !t.is_finite() {
            return Err(Error::InvalidInterval { s, t });
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("base_steps must be at least 1".into()));
        }
        let points = (0..=steps).map(|i| base_time(s, t, i, steps)).collect();
        Ok(Self {
            points,
            kinds: vec![PointKind::Base; steps + 1],
            base_index: (0..=steps).map(Some).collect(),
            base_steps: steps,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kinds(&self) -> &[PointKind] {
        &self.kinds
    }

    pub fn base_index(&self, k: usize) -> Option<usize> {
        self.base_index[k]
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        *self.points.last().expect("grid is nonempty")
    }

    /// Position of `time` on the grid, by exact comparison.
    pub fn index_of(&self, time: f64) -> Option<usize> {
        self.points.binary_search_by(|p| p.total_cmp(&time)).ok()
    }

    /// Position of base point `i`.
    pub fn index_of_base(&self, i: usize) -> Option<usize> {
        self.base_index.iter().position(|b| *b == Some(i))
    }
}

fn base_time(s: f64, t: f64, i: usize, n: usize) -> f64 {
    if i == n {
        t
    } else {
        s + (t - s) * (i as f64 / n as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub atom: usize,
}

/// Union of the base grid and the jump times; the jump flag wins on ties.
pub fn jump_adapted_grid(base: &TimeGrid, jumps: &[JumpEvent]) -> TimeGrid {
    let mut points = Vec::with_capacity(base.len() + jumps.len());
    let mut kinds = Vec::with_capacity(base.len() + jumps.len());
    let mut base_index = Vec::with_capacity(base.len() + jumps.len());
    let mut j = 0;
    for k in 0..base.len() {
        let p = base.points[k];
        while j < jumps.len() && jumps[j].time < p {
            push_jump(&mut points, &mut kinds, &mut base_index, jumps[j]);
            j += 1;
        }
        if j < jumps.len() && jumps[j].time == p && k > 0 {
            points.push(p);
            kinds.push(PointKind::Jump(jumps[j].atom));
            base_index.push(base.base_index[k]);
            j += 1;
            // coincident events beyond the first collapse onto this point
            while j < jumps.len() && jumps[j].time == p {
                j += 1;
            }
        } else {
            points.push(p);
            kinds.push(base.kinds[k]);
            base_index.push(base.base_index[k]);
        }
    }
    TimeGrid {
        points,
        kinds,
        base_index,
        base_steps: base.base_steps,
    }
}

fn push_jump(points: &mut Vec<f64>, kinds: &mut Vec<PointKind>, base: &mut Vec<Option<usize>>, e: JumpEvent) {
    if points.last() == Some(&e.time) {
        return;
    }
    points.push(e.time);
    kinds.push(PointKind::Jump(e.atom));
    base.push(None);
}

/// One realization of `(w, p)` on `[s, t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord {
    grid: TimeGrid,
    /// Interval-major, `m` entries per interval.
    increments: Vec<f64>,
    jump_events: Vec<JumpEvent>,
    brownian_count: usize,
    seed: u64,
    path_index: u64,
}

/// The ChaCha stream owned by `(seed, path_index)`.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

pub fn generate_noise(
    measure: &MarkMeasure,
    m: usize,
    s: f64,
    t: f64,
    base_steps: usize,
    seed: u64,
    path_index: u64,
) -> Result<NoiseRecord> {
    let base = TimeGrid::uniform(s, t, base_steps)?;
    if m == 0 {
        return Err(Error::InvalidArgument("brownian_count must be at least 1".into()));
    }
    let mut rng = path_rng(seed, path_index);

    let mut jump_events = Vec::new();
    if !measure.is_empty() {
        let mean = measure.total_rate() * (t - s);
        let poisson = Poisson::new(mean)
            .map_err(|e| Error::InvalidArgument(format!("jump intensity {mean}: {e}")))?;
        let count = poisson.sample(&mut rng) as usize;
        // 1 − U lies in (0, 1], so times lie in (s, t]
        let mut times: Vec<f64> = (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                (s + (t - s) * (1.0 - u)).min(t)
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let rates: Vec<f64> = measure.atoms().iter().map(|a| a.rate).collect();
        let picker = WeightedIndex::new(&rates)
            .map_err(|e| Error::InvalidArgument(format!("mark rates: {e}")))?;
        jump_events = times
            .into_iter()
            .map(|time| JumpEvent {
                time,
                atom: picker.sample(&mut rng),
            })
            .collect();
    }

    let grid = jump_adapted_grid(&base, &jump_events);
    let mut increments = Vec::with_capacity(grid.intervals() * m);
    for w in grid.points.windows(2) {
        let sd = math::sqrt(w[1] - w[0]);
        for _ in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            increments.push(sd * z);
        }
    }
    Ok(NoiseRecord {
        grid,
        increments,
        jump_events,
        brownian_count: m,
        seed,
        path_index,
    })
}

impl NoiseRecord {
    /// Deterministic noise: all Brownian increments zero, given jumps.
    pub fn quiet(grid: TimeGrid, m: usize) -> Self {
        let n = grid.intervals() * m;
        Self {
            grid,
            increments: vec![0.0; n],
            jump_events: Vec::new(),
            brownian_count: m,
            seed: 0,
            path_index: 0,
        }
    }

    /// A record with caller-chosen increments and events; the grid must
    /// already contain every event time.
    pub fn from_parts(grid: TimeGrid, increments: Vec<f64>, jump_events: Vec<JumpEvent>, m: usize) -> Result<Self> {
        if m == 0 || increments.len() != grid.intervals() * m {
            return Err(Error::DimensionMismatch(format!(
                "{} increments for {} intervals and m = {m}",
                increments.len(),
                grid.intervals()
            )));
        }
        for e in &jump_events {
            let ok = grid.index_of(e.time).is_some_and(|k| k > 0 && grid.kinds[k] == PointKind::Jump(e.atom));
            if !ok {
                return Err(Error::InvalidArgument(format!("jump at {} is not flagged on the grid", e.time)));
            }
        }
        Ok(Self {
            grid,
            increments,
            jump_events,
            brownian_count: m,
            seed: 0,
            path_index: 0,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn brownian_count(&self) -> usize {
        self.brownian_count
    }

    /// `Δw` over interval `k` (from point `k` to `k + 1`).
    pub fn increment(&self, k: usize) -> &[f64] {
        let m = self.brownian_count;
        &self.increments[k * m..(k + 1) * m]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn jump_events(&self) -> &[JumpEvent] {
        &self.jump_events
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// `w_{t_k} − w_s` at every grid point.
    pub fn brownian_path(&self) -> Vec<f64> {
        let m = self.brownian_count;
        let mut out = vec![0.0; self.grid.len() * m];
        for k in 0..self.grid.intervals() {
            for r in 0..m {
                out[(k + 1) * m + r] = out[k * m + r] + self.increments[k * m + r];
            }
        }
        out
    }

    /// The same realization on a base grid `factor` times coarser: kept
    /// points are every `factor`-th base point plus all jump times, and
    /// increments are summed over the merged intervals.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseRecord> {
        let n = self.grid.base_steps;
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {factor} does not divide {n} base steps"
            )));
        }
        let m = self.brownian_count;
        let keep: Vec<bool> = (0..self.grid.len())
            .map(|k| {
                matches!(self.grid.kinds[k], PointKind::Jump(_))
                    || self.grid.base_index[k].is_some_and(|i| i % factor == 0)
            })
            .collect();
        let mut points = Vec::new();
        let mut kinds = Vec::new();
        let mut base_index = Vec::new();
        let mut increments = Vec::new();
        let mut acc = vec![0.0; m];
        for k in 0..self.grid.len() {
            if k > 0 {
                for r in 0..m {
                    acc[r] += self.increments[(k - 1) * m + r];
                }
            }
            if keep[k] {
                if k > 0 {
                    increments.extend_from_slice(&acc);
                    acc.iter_mut().for_each(|v| *v = 0.0);
                }
                points.push(self.grid.points[k]);
                kinds.push(self.grid.kinds[k]);
                base_index.push(self.grid.base_index[k].filter(|i| i % factor == 0).map(|i| i / factor));
            }
        }
        Ok(NoiseRecord {
            grid: TimeGrid {
                points,
                kinds,
                base_index,
                base_steps: n / factor,
            },
            increments,
            jump_events: self.jump_events.clone(),
            brownian_count: m,
            seed: self.seed,
            path_index: self.path_index,
        })
    }
}
