//! Strong-limit harness: a sequence of fields `(b⁽ⁿ⁾, σ⁽ⁿ⁾, H⁽ⁿ⁾)` and the
//! limit field are driven by one noise record per path, and the weighted
//! distances between their flows and inverse flows are averaged over paths.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::exec::PathExecutor;
use crate::flow::{integrate_flow, integrate_jacobian, Scheme};
use crate::grid::{self, Lattice, PairSet, SpatialBox};
use crate::inverse::{inverse_gradient, invert_flow, InverseOptions};
use crate::linalg::Mat;
use crate::math;
use crate::noise::generate_noise;
use crate::norms::{moment_estimate, weight, MomentEstimate, SpatialSamples, NORM_PAIRS};

const DISTANCE_PAIRS: PairSet = PairSet::Local(8);

/// Grid suprema of the convergence hypotheses between two fields. The `σ`
/// quantities have the same structure as the `b` ones.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientDistance {
    /// `|r₁⁻¹(b⁽ⁿ⁾ − b)|₀`
    pub b_value: f64,
    /// `|∇(b⁽ⁿ⁾ − b)|_{β−1}`
    pub b_grad: f64,
    pub sigma_value: f64,
    pub sigma_grad: f64,
    /// Per atom, `|r₁⁻¹(H⁽ⁿ⁾ − H)|₀ + |∇(H⁽ⁿ⁾ − H)|_{β−1}`.
    pub jump: Vec<f64>,
    /// `Σ_k λ_k K_k²`.
    pub jump_rate_sq: f64,
}

impl CoefficientDistance {
    pub fn total(&self) -> f64 {
        self.b_value + self.b_grad + self.sigma_value + self.sigma_grad + self.jump_rate_sq
    }
}

fn same_shape(a: &CoefficientField, b: &CoefficientField) -> Result<()> {
    if a.dim() != b.dim() || a.brownian_count() != b.brownian_count() || a.measure() != b.measure() {
        return Err(Error::DimensionMismatch(format!(
            "fields differ in (d, m, marks): ({}, {}, {} atoms) vs ({}, {}, {} atoms)",
            a.dim(),
            a.brownian_count(),
            a.measure().atoms().len(),
            b.dim(),
            b.brownian_count(),
            b.measure().atoms().len()
        )));
    }
    Ok(())
}

/// Difference samples of one coefficient on the lattice.
struct Diff {
    values: Vec<f64>,
    comps: usize,
}

impl Diff {
    /// `|·|_γ`, or the sup norm when `γ = 0`.
    fn holder(&self, lattice: &Lattice, gamma: f64) -> Result<f64> {
        if gamma <= 0.0 {
            return Ok(grid::sup_norm(&self.values, self.comps));
        }
        grid::holder_norm(lattice, &self.values, self.comps, gamma, DISTANCE_PAIRS, None)
    }
}

/// Evaluates the hypothesis quantities on the origin-aligned lattice of
/// `bbox`, maximized over `times`. The Hölder exponent is `β − 1` with `β`
/// from the limit field's regularity constants.
pub fn coefficient_distance(
    field_n: &CoefficientField,
    field: &CoefficientField,
    bbox: &SpatialBox,
    step: f64,
    times: &[f64],
) -> Result<CoefficientDistance> {
    same_shape(field_n, field)?;
    if bbox.dim() != field.dim() {
        return Err(Error::DimensionMismatch(format!(
            "box of dimension {}, field dimension {}",
            bbox.dim(),
            field.dim()
        )));
    }
    let gamma = field.regularity().beta - 1.0;
    let lattice = Lattice::aligned(bbox, step)?;
    let nodes = lattice.nodes();
    let d = field.dim();
    let m = field.brownian_count();
    let atoms = field.measure().atoms().to_vec();
    let (pa, pb) = (field_n.continuous(), field.continuous());
    let mut out = CoefficientDistance {
        b_value: 0.0,
        b_grad: 0.0,
        sigma_value: 0.0,
        sigma_grad: 0.0,
        jump: vec![0.0; atoms.len()],
        jump_rate_sq: 0.0,
    };
    let (mut va, mut vb) = (vec![0.0; d], vec![0.0; d]);
    let (mut sa, mut sb) = (Mat::zeros(d, m), Mat::zeros(d, m));
    let (mut ga, mut gb) = (Mat::zeros(d, d), Mat::zeros(d, d));
    for &t in times {
        let mut grad_b = Diff { values: Vec::new(), comps: d * d };
        let mut grad_s = Diff { values: Vec::new(), comps: d * d * m };
        for x in &nodes {
            let w = weight(x, -1.0);
            pa.drift(t, x, &mut va);
            pb.drift(t, x, &mut vb);
            out.b_value = out.b_value.max(w * math::dist(&va, &vb));
            pa.diffusion(t, x, &mut sa);
            pb.diffusion(t, x, &mut sb);
            out.sigma_value = out.sigma_value.max(w * math::dist(sa.as_slice(), sb.as_slice()));
            pa.drift_grad(t, x, &mut ga)?;
            pb.drift_grad(t, x, &mut gb)?;
            grad_b.values.extend(ga.as_slice().iter().zip(gb.as_slice()).map(|(a, b)| a - b));
            for rho in 0..m {
                pa.diffusion_grad(t, x, rho, &mut ga)?;
                pb.diffusion_grad(t, x, rho, &mut gb)?;
                grad_s.values.extend(ga.as_slice().iter().zip(gb.as_slice()).map(|(a, b)| a - b));
            }
        }
        out.b_grad = out.b_grad.max(grad_b.holder(&lattice, gamma)?);
        out.sigma_grad = out.sigma_grad.max(grad_s.holder(&lattice, gamma)?);

        for (k, atom) in atoms.iter().enumerate() {
            let mut grad_h = Diff { values: Vec::new(), comps: d * d };
            let mut value: f64 = 0.0;
            for x in &nodes {
                field_n.jump().jump(t, x, atom.mark, &mut va);
                field.jump().jump(t, x, atom.mark, &mut vb);
                value = value.max(weight(x, -1.0) * math::dist(&va, &vb));
                field_n.jump().jump_grad(t, x, atom.mark, &mut ga)?;
                field.jump().jump_grad(t, x, atom.mark, &mut gb)?;
                grad_h.values.extend(ga.as_slice().iter().zip(gb.as_slice()).map(|(a, b)| a - b));
            }
            out.jump[k] = out.jump[k].max(value + grad_h.holder(&lattice, gamma)?);
        }
    }
    out.jump_rate_sq = atoms.iter().zip(&out.jump).map(|(a, k)| a.rate * k * k).sum();
    Ok(out)
}

/// Settings of [`strong_limit_run`].
#[derive(Clone, Debug, PartialEq)]
pub struct LimitOptions {
    pub epsilon: f64,
    pub beta_prime: f64,
    pub p: f64,
    pub paths: usize,
    pub seed: u64,
    /// Initial and query points are the lattice anchored in this box.
    pub bbox: SpatialBox,
    pub step: f64,
    pub s: f64,
    pub t_end: f64,
    pub base_steps: usize,
    pub scheme: Scheme,
    pub gradients: bool,
    pub inverse: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: u64,
    pub coeff_distance: CoefficientDistance,
    /// `E sup_t |r₁^{−(1+ε)}(X⁽ⁿ⁾_t − X_t)|₀^p`
    pub flow_value: MomentEstimate,
    /// `E sup_t |r₁^{−ε}(∇X⁽ⁿ⁾_t − ∇X_t)|_{β′−1}^p`
    pub flow_grad: Option<MomentEstimate>,
    pub inverse_value: Option<MomentEstimate>,
    pub inverse_grad: Option<MomentEstimate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub options: LimitOptions,
}

/// Per-path `sup_t` distances for every `n`, in `fields_n` order.
#[derive(Clone, Debug, Default)]
struct PathDistances {
    flow_value: Vec<f64>,
    flow_grad: Vec<f64>,
    inverse_value: Vec<f64>,
    inverse_grad: Vec<f64>,
}

/// Runs the coupled simulation. Path `i` uses the noise stream
/// `(seed, i)` for the limit field and every `fields_n[j]`.
pub fn strong_limit_run<E: PathExecutor>(
    fields_n: &[(u64, CoefficientField)],
    field: &CoefficientField,
    opts: &LimitOptions,
    executor: &E,
) -> Result<ConvergenceReport> {
    if !(opts.epsilon > 0.0) || !(1.0..=2.0).contains(&opts.beta_prime) || !(opts.p >= 1.0) || opts.paths < 2 {
        return Err(Error::InvalidArgument(format!(
            "need ε > 0, β′ ∈ [1, 2], p ≥ 1 and ≥ 2 paths; got ε = {}, β′ = {}, p = {}, paths = {}",
            opts.epsilon, opts.beta_prime, opts.p, opts.paths
        )));
    }
    if fields_n.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::InvalidArgument("n must be strictly increasing".into()));
    }
    for (_, f) in fields_n {
        same_shape(f, field)?;
    }
    let lattice = Lattice::anchored(&opts.bbox, opts.step)?;
    if lattice.dim() != field.dim() {
        return Err(Error::DimensionMismatch(format!(
            "box of dimension {}, field dimension {}",
            lattice.dim(),
            field.dim()
        )));
    }
    let nodes = lattice.nodes();
    let per_path = executor.map_paths(opts.paths, |i| path_distances(fields_n, field, opts, &lattice, &nodes, i as u64));
    let per_path: Vec<PathDistances> = per_path.into_iter().collect::<Result<_>>()?;

    let times = [opts.s, 0.5 * (opts.s + opts.t_end), opts.t_end];
    let mut rows = Vec::with_capacity(fields_n.len());
    for (j, (n, f)) in fields_n.iter().enumerate() {
        let column = |pick: fn(&PathDistances) -> &Vec<f64>| -> Result<MomentEstimate> {
            let q: Vec<f64> = per_path.iter().map(|d| pick(d)[j]).collect();
            moment_estimate(&q, opts.p)
        };
        rows.push(ConvergenceRow {
            n: *n,
            coeff_distance: coefficient_distance(f, field, &opts.bbox, opts.step, &times)?,
            flow_value: column(|d| &d.flow_value)?,
            flow_grad: opts.gradients.then(|| column(|d| &d.flow_grad)).transpose()?,
            inverse_value: opts.inverse.then(|| column(|d| &d.inverse_value)).transpose()?,
            inverse_grad: (opts.inverse && opts.gradients)
                .then(|| column(|d| &d.inverse_grad))
                .transpose()?,
        });
    }
    Ok(ConvergenceReport {
        rows,
        options: opts.clone(),
    })
}

fn path_distances(
    fields_n: &[(u64, CoefficientField)],
    field: &CoefficientField,
    opts: &LimitOptions,
    lattice: &Lattice,
    nodes: &[Vec<f64>],
    path: u64,
) -> Result<PathDistances> {
    let noise = generate_noise(
        field.measure(),
        field.brownian_count(),
        opts.s,
        opts.t_end,
        opts.base_steps,
        opts.seed,
        path,
    )?;
    let run = |f: &CoefficientField| -> Result<(Samples, Option<Samples>)> {
        let mut flow = integrate_flow(f, &noise, nodes, opts.scheme)?;
        if opts.gradients {
            flow = integrate_jacobian(f, flow)?;
        }
        let inverse = if opts.inverse {
            let inv = invert_flow(f, &flow, nodes, &InverseOptions::for_scheme(opts.scheme))?;
            let inv = if opts.gradients { inverse_gradient(f, &flow, inv)? } else { inv };
            Some(Samples::collect(&inv, opts.gradients))
        } else {
            None
        };
        Ok((Samples::collect(&flow, opts.gradients), inverse))
    };
    let (flow, inverse) = run(field)?;
    let mut out = PathDistances::default();
    for (_, f) in fields_n {
        let (flow_n, inverse_n) = run(f)?;
        let (v, g) = flow_n.distance(&flow, lattice, nodes, opts);
        out.flow_value.push(v);
        out.flow_grad.push(g);
        if let (Some(a), Some(b)) = (&inverse_n, &inverse) {
            let (v, g) = a.distance(b, lattice, nodes, opts);
            out.inverse_value.push(v);
            out.inverse_grad.push(g);
        }
    }
    Ok(out)
}

/// Values and gradients of a flow or inverse flow, time-major.
struct Samples {
    dim: usize,
    points: usize,
    values: Vec<Vec<f64>>,
    gradients: Option<Vec<Vec<f64>>>,
}

impl Samples {
    fn collect(src: &dyn SpatialSamples, gradients: bool) -> Self {
        let d = src.sample_dim();
        let n = src.sample_count();
        let times = src.sample_times().len();
        let values = (0..times)
            .map(|k| (0..n).flat_map(|p| src.sample_value(p, k).to_vec()).collect())
            .collect();
        let gradients = gradients.then(|| {
            (0..times)
                .map(|k| {
                    (0..n)
                        .flat_map(|p| src.sample_gradient(p, k).map(|g| g.as_slice().to_vec()).unwrap_or_default())
                        .collect()
                })
                .collect()
        });
        Self {
            dim: d,
            points: n,
            values,
            gradients,
        }
    }

    /// `(sup_t |r₁^{−(1+ε)}(a − b)|₀, sup_t |r₁^{−ε}(∇a − ∇b)|_{β′−1})`.
    fn distance(&self, other: &Self, lattice: &Lattice, nodes: &[Vec<f64>], opts: &LimitOptions) -> (f64, f64) {
        let d = self.dim;
        let mut value: f64 = 0.0;
        let mut grad: f64 = 0.0;
        let mut buf = vec![0.0; self.points * d * d];
        for k in 0..self.values.len() {
            for (p, x) in nodes.iter().enumerate() {
                let a = &self.values[k][p * d..(p + 1) * d];
                let b = &other.values[k][p * d..(p + 1) * d];
                value = value.max(weight(x, -(1.0 + opts.epsilon)) * math::dist(a, b));
            }
            if let (Some(ga), Some(gb)) = (&self.gradients, &other.gradients) {
                for (p, x) in nodes.iter().enumerate() {
                    let w = weight(x, -opts.epsilon);
                    for c in 0..d * d {
                        let o = p * d * d + c;
                        buf[o] = w * (ga[k][o] - gb[k][o]);
                    }
                }
                let mut g = grid::sup_norm(&buf, d * d);
                if opts.beta_prime > 1.0 {
                    g += grid::holder_seminorm(lattice, &buf, d * d, opts.beta_prime - 1.0, NORM_PAIRS);
                }
                grad = grad.max(g);
            }
        }
        (value, grad)
    }
}
