//! Grid verification of the regularity assumptions on `(b, σ, H)`.
//!
//! Every quantity is a grid supremum over an origin-aligned lattice, so the
//! estimates are lower bounds of the true suprema and grow with the box.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{holder_norm, Lattice, PairSet, SpatialBox};
use crate::linalg::Mat;
use crate::math;

/// Pair set used for every seminorm estimate here.
pub const ASSUMPTION_PAIRS: PairSet = PairSet::Local(8);

/// Where the assumptions are probed.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionGrid {
    pub bbox: SpatialBox,
    pub step: f64,
    pub times: Vec<f64>,
}

impl AssumptionGrid {
    pub fn new(bbox: SpatialBox, step: f64) -> Self {
        Self {
            bbox,
            step,
            times: vec![0.0],
        }
    }

    pub fn with_times(mut self, times: Vec<f64>) -> Self {
        self.times = times;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionRecord {
    pub name: String,
    pub grid_sup: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub records: Vec<AssumptionRecord>,
    pub overall: bool,
    pub grid: AssumptionGrid,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

/// Values of one field component on the lattice, with analytic first
/// partials when available.
struct Sampled {
    values: Vec<f64>,
    partials: Option<Vec<Vec<f64>>>,
    comps: usize,
}

pub fn check_assumptions(field: &CoefficientField, grid: &AssumptionGrid) -> Result<AssumptionReport> {
    if grid.bbox.dim() != field.dim() {
        return Err(Error::DimensionMismatch(format!(
            "box has dimension {}, field {}",
            grid.bbox.dim(),
            field.dim()
        )));
    }
    if grid.times.is_empty() {
        return Err(Error::InvalidArgument("at least one time sample is needed".into()));
    }
    let reg = *field.regularity();
    let gamma = reg.beta - 1.0;
    let lattice = Lattice::aligned(&grid.bbox, grid.step)?;
    let nodes = lattice.nodes();
    let d = field.dim();
    let m = field.brownian_count();
    let atoms = field.measure().atoms().to_vec();

    let mut r1inv_b: f64 = 0.0;
    let mut grad_b: f64 = 0.0;
    let mut r1inv_sigma: f64 = 0.0;
    let mut grad_sigma: f64 = 0.0;
    let mut k_atom = vec![0.0f64; atoms.len()];
    let mut kappa: f64 = 0.0;

    for &t in &grid.times {
        let part = field.continuous();
        let mut bx = vec![0.0; d];
        let mut sig = Mat::zeros(d, m);
        let mut gb = Sampled::new(d * d, gamma > 1.0, d);
        let mut gs = Sampled::new(d * d * m, gamma > 1.0, d);
        let mut g = Mat::zeros(d, d);
        for x in &nodes {
            let r1 = weight1(x);
            part.drift(t, x, &mut bx);
            part.diffusion(t, x, &mut sig);
            r1inv_b = r1inv_b.max(math::norm(&bx) / r1);
            r1inv_sigma = r1inv_sigma.max(sig.frobenius() / r1);
            part.drift_grad(t, x, &mut g)?;
            gb.values.extend_from_slice(g.as_slice());
            for rho in 0..m {
                part.diffusion_grad(t, x, rho, &mut g)?;
                gs.values.extend_from_slice(g.as_slice());
            }
            if let Some(p) = gb.partials.as_mut() {
                for (k, pk) in p.iter_mut().enumerate() {
                    match part.drift_second(t, x, k, &mut g) {
                        Ok(()) => pk.extend_from_slice(g.as_slice()),
                        Err(_) => {
                            gb.partials = None;
                            break;
                        }
                    }
                }
            }
            if let Some(p) = gs.partials.as_mut() {
                'outer: for (k, pk) in p.iter_mut().enumerate() {
                    for rho in 0..m {
                        if part.diffusion_second(t, x, rho, k, &mut g).is_err() {
                            gs.partials = None;
                            break 'outer;
                        }
                        pk.extend_from_slice(g.as_slice());
                    }
                }
            }
        }
        grad_b = grad_b.max(gb.norm(&lattice, gamma)?);
        grad_sigma = grad_sigma.max(gs.norm(&lattice, gamma)?);

        if !field.has_jumps() {
            continue;
        }
        let mut h = vec![0.0; d];
        for (k, atom) in atoms.iter().enumerate() {
            let mut gh = Sampled::new(d * d, false, d);
            let mut r1inv_h: f64 = 0.0;
            for x in &nodes {
                field.jump().jump(t, x, atom.mark, &mut h);
                field.jump().jump_grad(t, x, atom.mark, &mut g)?;
                r1inv_h = r1inv_h.max(math::norm(&h) / weight1(x));
                gh.values.extend_from_slice(g.as_slice());
                if g.op_norm() > reg.eta {
                    let mut ig = g.clone();
                    for i in 0..d {
                        ig[(i, i)] += 1.0;
                    }
                    let det = ig.det();
                    if math::abs(det) < 1e-12 {
                        return Err(Error::SingularJumpJacobian { det: math::abs(det) });
                    }
                    let inv = ig.inverse().ok_or(Error::SingularJumpJacobian { det: 0.0 })?;
                    kappa = kappa.max(inv.op_norm());
                }
            }
            k_atom[k] = k_atom[k].max(r1inv_h + gh.norm(&lattice, gamma)?);
        }
    }

    let mut records = Vec::new();
    let mut push = |name: String, grid_sup: f64, bound: f64| {
        records.push(AssumptionRecord {
            name,
            grid_sup,
            bound,
            satisfied: grid_sup <= bound,
        });
    };
    push("r1inv_b".into(), r1inv_b, reg.n0);
    push("grad_b_holder".into(), grad_b, reg.n0);
    push("r1inv_sigma".into(), r1inv_sigma, reg.n0);
    push("grad_sigma_holder".into(), grad_sigma, reg.n0);
    push(
        "continuous_total".into(),
        r1inv_b + grad_b + r1inv_sigma + grad_sigma,
        reg.n0,
    );
    for (k, atom) in atoms.iter().enumerate() {
        push(format!("jump_K[{}]", atom.mark), k_atom[k], reg.n0);
    }
    let k_max = k_atom.iter().copied().fold(0.0, f64::max);
    let k_sq: f64 = atoms.iter().zip(&k_atom).map(|(a, k)| a.rate * k * k).sum();
    push("jump_K_total".into(), k_max + k_sq, reg.n0);
    push("kappa".into(), kappa, reg.n_kappa);

    let overall = records.iter().all(|r| r.satisfied);
    Ok(AssumptionReport {
        records,
        overall,
        grid: grid.clone(),
    })
}

impl Sampled {
    fn new(comps: usize, with_partials: bool, dim: usize) -> Self {
        Self {
            values: Vec::new(),
            partials: with_partials.then(|| vec![Vec::new(); dim]),
            comps,
        }
    }

    fn norm(&self, lattice: &Lattice, gamma: f64) -> Result<f64> {
        holder_norm(
            lattice,
            &self.values,
            self.comps,
            gamma,
            ASSUMPTION_PAIRS,
            self.partials.as_deref(),
        )
    }
}

/// `r₁(x) = √(1 + |x|²)`.
fn weight1(x: &[f64]) -> f64 {
    math::sqrt(1.0 + x.iter().map(|v| v * v).sum::<f64>())
}
