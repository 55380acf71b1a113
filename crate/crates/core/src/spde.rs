//! Degenerate linear SPDEs solved by stochastic characteristics: the
//! solution is the inverse flow `u_t(x) = Y_t⁻¹(s, x)` sampled on a lattice.
//!
//! Also hosts the telescoping/Taylor partition expansion of `u_t(x) − x` and
//! the Itô–Wentzell composition check `u_t(Y_t(x)) = x`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::coeffs::{CoefficientField, CorrectedReverse};
use crate::error::{Error, Result};
use crate::flow::{Scheme, Stepper, Workspace};
use crate::grid::{self, Lattice, SpatialBox};
use crate::inverse::{invert_point, invert_with, InverseOptions};
use crate::linalg::Mat;
use crate::math;
use crate::noise::NoiseRecord;
use crate::quadrature::gauss_legendre_unit;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpdeVariant {
    /// Second-order drift with the corrected first-order coefficient `−b̂`.
    InverseFlow,
    /// First-order coefficient `+b`, solved through the flow of `(−b̂, −σ)`.
    Bar,
}

/// `u_t(x)` on the lattice anchored in `bbox`, at every grid time from `s`
/// to `t_end`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdeSolution {
    pub variant: SpdeVariant,
    pub scheme: Scheme,
    pub bbox: SpatialBox,
    pub step: f64,
    pub start: f64,
    /// Noise-grid indices of the stored times.
    pub time_indices: Vec<usize>,
    pub times: Vec<f64>,
    pub dim: usize,
    /// Time-major: `values[(k * nodes + node) * d + i]`.
    pub values: Vec<f64>,
    pub max_residual: f64,
    pub tolerance: f64,
}

impl SpdeSolution {
    pub fn lattice(&self) -> Lattice {
        Lattice::anchored(&self.bbox, self.step).expect("validated on construction")
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / (self.dim * self.times.len())
    }

    /// All node values at the `k`-th stored time.
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.node_count() * self.dim;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn value(&self, k: usize, node: usize) -> &[f64] {
        &self.slice(k)[node * self.dim..(node + 1) * self.dim]
    }

    /// Multilinear interpolation of `u` at the `k`-th stored time.
    pub fn interpolate(&self, k: usize, x: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        grid::interpolate(&self.lattice(), self.slice(k), self.dim, x, &mut out).then_some(out)
    }
}

fn time_range(noise: &NoiseRecord, s: f64, t_end: f64) -> Result<(usize, usize)> {
    let grid = noise.grid();
    let start = grid.index_of(s);
    let end = grid.index_of(t_end);
    match (start, end) {
        (Some(a), Some(b)) if a <= b => Ok((a, b)),
        _ => Err(Error::InvalidInterval { s, t: t_end }),
    }
}

/// `u_t = Y_t⁻¹(s, ·)` on the lattice, where `Y` is the flow of `field`.
#[allow(clippy::too_many_arguments)]
pub fn solve_spde_characteristics(
    field: &CoefficientField,
    noise: &NoiseRecord,
    scheme: Scheme,
    s: f64,
    t_end: f64,
    bbox: &SpatialBox,
    step: f64,
    tol: f64,
) -> Result<SpdeSolution> {
    if field.has_jumps() {
        return Err(Error::JumpFieldRejected);
    }
    solve(field, noise, scheme, s, t_end, bbox, step, tol, SpdeVariant::InverseFlow)
}

/// `ū_t = Ȳ_t⁻¹(s, ·)` where `Ȳ` is the flow of `(−b̂, −σ)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_spde_bar(
    field: &CoefficientField,
    noise: &NoiseRecord,
    scheme: Scheme,
    s: f64,
    t_end: f64,
    bbox: &SpatialBox,
    step: f64,
    tol: f64,
) -> Result<SpdeSolution> {
    if field.has_jumps() {
        return Err(Error::JumpFieldRejected);
    }
    let bar = field.with_continuous(CorrectedReverse::build(field.continuous().clone()))?;
    solve(&bar, noise, scheme, s, t_end, bbox, step, tol, SpdeVariant::Bar)
}

#[allow(clippy::too_many_arguments)]
fn solve(
    field: &CoefficientField,
    noise: &NoiseRecord,
    scheme: Scheme,
    s: f64,
    t_end: f64,
    bbox: &SpatialBox,
    step: f64,
    tol: f64,
    variant: SpdeVariant,
) -> Result<SpdeSolution> {
    if bbox.dim() != field.dim() {
        return Err(Error::DimensionMismatch(format!(
            "box of dimension {}, field dimension {}",
            bbox.dim(),
            field.dim()
        )));
    }
    let (start, end) = time_range(noise, s, t_end)?;
    let lattice = Lattice::anchored(bbox, step)?;
    let nodes = lattice.nodes();
    let stepper = Stepper::new(field, noise, scheme)?;
    let offsets: Vec<usize> = (0..=end - start).collect();
    let inv = invert_with(&stepper, start, &nodes, &InverseOptions { tol, times: Some(offsets) })?;
    let d = field.dim();
    let n_times = inv.time_count();
    let mut values = vec![0.0; nodes.len() * n_times * d];
    for p in 0..nodes.len() {
        for k in 0..n_times {
            let o = (k * nodes.len() + p) * d;
            values[o..o + d].copy_from_slice(inv.value(p, k));
        }
    }
    Ok(SpdeSolution {
        variant,
        scheme,
        bbox: bbox.clone(),
        step,
        start: s,
        time_indices: inv.time_indices().to_vec(),
        times: inv.times().to_vec(),
        dim: d,
        values,
        max_residual: inv.max_residual(),
        tolerance: tol,
    })
}

/// Forward-integrates `Y` from each probe and returns
/// `sup |u_t(Y_t(x)) − x|` over probes and stored times, with `u_t`
/// interpolated on the solution lattice.
pub fn ito_wentzell_check(
    solution: &SpdeSolution,
    field: &CoefficientField,
    noise: &NoiseRecord,
    probes: &[Vec<f64>],
) -> Result<f64> {
    let field = match solution.variant {
        SpdeVariant::InverseFlow => field.clone(),
        SpdeVariant::Bar => field.with_continuous(CorrectedReverse::build(field.continuous().clone()))?,
    };
    let stepper = Stepper::new(&field, noise, solution.scheme)?;
    let mut ws = stepper.workspace();
    let d = solution.dim;
    let mut left = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for x in probes {
        let mut y = x.clone();
        let mut k_grid = solution.time_indices[0];
        for (k, &target) in solution.time_indices.iter().enumerate() {
            while k_grid < target {
                stepper.step(k_grid, &mut y, &mut left, &mut ws)?;
                k_grid += 1;
            }
            let u = solution
                .interpolate(k, &y)
                .ok_or(Error::OutOfGrid { time: solution.times[k] })?;
            worst = worst.max(math::dist(&u, x));
        }
    }
    Ok(worst)
}

/// `probe_box` inflated so that characteristics started in it stay inside:
/// per axis three root-mean-square displacements of a pilot run on the same
/// noise, never less than the largest pilot displacement. The upper corner
/// is rounded out to a whole number of `step`s from the lower one, so the
/// anchored lattice spans the whole box.
pub fn characteristic_box(
    field: &CoefficientField,
    noise: &NoiseRecord,
    scheme: Scheme,
    probe_box: &SpatialBox,
    pilot: &[Vec<f64>],
    step: f64,
) -> Result<SpatialBox> {
    let stepper = Stepper::new(field, noise, scheme)?;
    let mut ws = stepper.workspace();
    let d = field.dim();
    let mut sum_sq = vec![0.0; d];
    let mut max_abs = vec![0.0f64; d];
    let mut count = 0usize;
    let mut left = vec![0.0; d];
    for x in pilot {
        let mut y = x.clone();
        for k in 0..stepper.intervals() {
            stepper.step(k, &mut y, &mut left, &mut ws)?;
            for i in 0..d {
                let disp = y[i] - x[i];
                sum_sq[i] += disp * disp;
                max_abs[i] = max_abs[i].max(math::abs(disp));
            }
            count += 1;
        }
    }
    let margin: Vec<f64> = (0..d)
        .map(|i| {
            let rms = if count == 0 { 0.0 } else { math::sqrt(sum_sq[i] / count as f64) };
            (3.0 * rms).max(max_abs[i])
        })
        .collect();
    let grown = probe_box.inflate(&margin);
    let upper: Vec<f64> = grown
        .lower()
        .iter()
        .zip(grown.upper())
        .map(|(l, u)| l + math::ceil((u - l) / step) * step)
        .collect();
    SpatialBox::new(grown.lower().to_vec(), upper)
}

/// The summed pieces of `u_t(x) − x = Σ_n (A_n + C_n + D_n)` and the limits
/// they approach as the partition is refined.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionReport {
    pub partitions: usize,
    pub sum_a: Vec<f64>,
    pub sum_c: Vec<f64>,
    pub sum_d: Vec<f64>,
    pub lhs: Vec<f64>,
    pub identity_residual: f64,
    /// `C_n = E_n + F_n` split through the one-interval inverse.
    pub split_residual: f64,
    /// Limits of `Σ A_n`, `Σ D_n`, `Σ C_n` as Itô sums on the noise grid.
    pub claim_targets: [Vec<f64>; 3],
    pub claim_residuals: [f64; 3],
}

/// Settings for [`partition_expansion`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionOptions {
    pub partitions: usize,
    pub fd_step: f64,
    pub quad_order: usize,
    pub scheme: Scheme,
    /// Inversion tolerance for point evaluations of `u`.
    pub tol: f64,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            partitions: 16,
            fd_step: 1e-3,
            quad_order: 8,
            scheme: Scheme::Euler,
            tol: 1e-12,
        }
    }
}

/// Point evaluations of `u_{t_k}` by inversion, with central differences.
struct PointInverse<'a> {
    stepper: Stepper<'a>,
    start: usize,
    tol: f64,
    h: f64,
    ws: Workspace,
}

impl PointInverse<'_> {
    fn u(&mut self, k: usize, z: &[f64]) -> Result<Vec<f64>> {
        Ok(invert_point(&self.stepper, self.start, k, z, self.tol, &mut self.ws)?.0)
    }

    fn shifted(&mut self, k: usize, z: &[f64], moves: &[(usize, f64)]) -> Result<Vec<f64>> {
        let mut p = z.to_vec();
        for &(axis, amount) in moves {
            p[axis] += amount;
        }
        self.u(k, &p)
    }

    /// `(∇u)_{ij} = ∂_j u^i`.
    fn grad(&mut self, k: usize, z: &[f64]) -> Result<Mat> {
        let d = z.len();
        let h = self.h;
        let mut g = Mat::zeros(d, d);
        for j in 0..d {
            let up = self.shifted(k, z, &[(j, h)])?;
            let down = self.shifted(k, z, &[(j, -h)])?;
            for i in 0..d {
                g[(i, j)] = (up[i] - down[i]) / (2.0 * h);
            }
        }
        Ok(g)
    }

    /// `out[(i * d + j) * d + l] = ∂_{jl} u^i`.
    fn hessian(&mut self, k: usize, z: &[f64]) -> Result<Vec<f64>> {
        let d = z.len();
        let h = self.h;
        let centre = self.u(k, z)?;
        let mut out = vec![0.0; d * d * d];
        for j in 0..d {
            let up = self.shifted(k, z, &[(j, h)])?;
            let down = self.shifted(k, z, &[(j, -h)])?;
            for i in 0..d {
                out[(i * d + j) * d + j] = (up[i] - 2.0 * centre[i] + down[i]) / (h * h);
            }
            for l in j + 1..d {
                let pp = self.shifted(k, z, &[(j, h), (l, h)])?;
                let pm = self.shifted(k, z, &[(j, h), (l, -h)])?;
                let mp = self.shifted(k, z, &[(j, -h), (l, h)])?;
                let mm = self.shifted(k, z, &[(j, -h), (l, -h)])?;
                for i in 0..d {
                    let v = (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h * h);
                    out[(i * d + j) * d + l] = v;
                    out[(i * d + l) * d + j] = v;
                }
            }
        }
        Ok(out)
    }
}

/// `Σ_{jl} a_j H^i_{jl} c_l` for each component `i`.
fn bilinear(hess: &[f64], a: &[f64], c: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..d {
                for l in 0..d {
                    s += a[j] * hess[(i * d + j) * d + l] * c[l];
                }
            }
            s
        })
        .collect()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Expands `u_t(x) − x` over `M = opts.partitions` equal partition
/// intervals of `[s, t_end]`.
///
/// `u` at off-lattice points is evaluated by inverting the flow there; its
/// derivatives by central differences of step `fd_step`; the Taylor
/// remainder integrals by Gauss–Legendre quadrature in `θ`.
pub fn partition_expansion(
    field: &CoefficientField,
    noise: &NoiseRecord,
    s: f64,
    t_end: f64,
    x: &[f64],
    opts: &PartitionOptions,
) -> Result<PartitionReport> {
    let mut reports = partition_sequence(field, noise, s, t_end, x, &[opts.partitions], opts)?;
    Ok(reports.remove(0))
}

/// [`partition_expansion`] for several partition counts on one realization;
/// the limit targets are computed once.
pub fn partition_sequence(
    field: &CoefficientField,
    noise: &NoiseRecord,
    s: f64,
    t_end: f64,
    x: &[f64],
    partitions: &[usize],
    opts: &PartitionOptions,
) -> Result<Vec<PartitionReport>> {
    if field.has_jumps() {
        return Err(Error::JumpFieldRejected);
    }
    if !(opts.fd_step > 0.0) || opts.quad_order == 0 {
        return Err(Error::InvalidArgument("fd_step and quad_order must be positive".into()));
    }
    let d = field.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch(format!("point of length {}, field dimension {d}", x.len())));
    }
    let (start, end) = time_range(noise, s, t_end)?;
    let span = end - start;
    for &m_parts in partitions {
        if m_parts < 2 || !m_parts.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("partition count {m_parts} must be a power of two ≥ 2")));
        }
        if span % m_parts != 0 {
            return Err(Error::GridTooCoarse(format!(
                "{span} grid intervals do not split into {m_parts} equal parts"
            )));
        }
    }
    let stepper = Stepper::new(field, noise, opts.scheme)?;
    let mut ev = PointInverse {
        ws: stepper.workspace(),
        stepper,
        start,
        tol: opts.tol,
        h: opts.fd_step,
    };
    let targets = claim_targets(field, noise, start, end, x, &mut ev)?;
    let u_end = ev.u(end, x)?;
    let lhs: Vec<f64> = u_end.iter().zip(x).map(|(a, b)| a - b).collect();
    partitions
        .iter()
        .map(|&m| expand(&mut ev, start, end, m, x, opts.quad_order, &lhs, &targets))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn expand(
    ev: &mut PointInverse<'_>,
    start: usize,
    end: usize,
    m_parts: usize,
    x: &[f64],
    quad_order: usize,
    lhs: &[f64],
    targets: &[Vec<f64>; 2],
) -> Result<PartitionReport> {
    let d = x.len();
    let span = end - start;
    let knots: Vec<usize> = (0..=m_parts).map(|n| start + n * span / m_parts).collect();
    let tol = ev.tol;
    let (nodes, weights) = gauss_legendre_unit(quad_order);

    let mut sum_a = vec![0.0; d];
    let mut sum_c = vec![0.0; d];
    let mut sum_d = vec![0.0; d];
    let mut sum_ef = vec![0.0; d];
    let mut probe = vec![0.0; d];
    for n in 0..m_parts {
        let (kn, kn1) = (knots[n], knots[n + 1]);
        let fwd = ev.stepper.propagate(kn, kn1, x, &mut ev.ws)?;
        let v: Vec<f64> = x.iter().zip(&fwd).map(|(a, b)| a - b).collect();

        let grad_n = ev.grad(kn, x)?;
        let grad_n1 = ev.grad(kn1, x)?;
        // Θ_n and Θ_D share the path x + θ (Y_{t_{n+1}}(t_n, x) − x)
        let mut theta_a = vec![0.0; d];
        let mut theta_d = vec![0.0; d];
        for (th, w) in nodes.iter().zip(&weights) {
            for i in 0..d {
                probe[i] = x[i] - th * v[i];
            }
            let h_n = ev.hessian(kn, &probe)?;
            let h_n1 = ev.hessian(kn1, &probe)?;
            let diff: Vec<f64> = h_n1.iter().zip(&h_n).map(|(a, b)| a - b).collect();
            axpy(&mut theta_a, w * (1.0 - th), &bilinear(&h_n, &v, &v));
            axpy(&mut theta_d, w * (1.0 - th), &bilinear(&diff, &v, &v));
        }
        let a_n: Vec<f64> = grad_n.mul_vec(&v).iter().zip(&theta_a).map(|(g, q)| g - q).collect();
        let mut dg = grad_n1.clone();
        dg.add_scaled(&grad_n, -1.0);
        let c_n = dg.mul_vec(&v);
        axpy(&mut sum_a, 1.0, &a_n);
        axpy(&mut sum_c, 1.0, &c_n);
        axpy(&mut sum_d, -1.0, &theta_d);

        // E_n + F_n through z = Y_{t_{n+1}}⁻¹(t_n, x)
        let (z, _) = invert_point(&ev.stepper, kn, kn1, x, tol, &mut ev.ws)?;
        let (_, jac) = ev.stepper.propagate_with_jacobian(kn, kn1, &z, &mut ev.ws)?;
        let jac_inv = jac.inverse().ok_or(Error::SingularJacobian { det: jac.det() })?;
        let mut g_minus_i = jac_inv;
        g_minus_i.add_scaled(&Mat::identity(d), -1.0);
        let e_n = ev.grad(kn, &z)?.mul_vec(&g_minus_i.mul_vec(&v));
        let zx: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
        let mut f_n = vec![0.0; d];
        for (th, w) in nodes.iter().zip(&weights) {
            for i in 0..d {
                probe[i] = x[i] + th * zx[i];
            }
            axpy(&mut f_n, *w, &bilinear(&ev.hessian(kn, &probe)?, &zx, &v));
        }
        axpy(&mut sum_ef, 1.0, &e_n);
        axpy(&mut sum_ef, 1.0, &f_n);
    }

    let total: Vec<f64> = (0..d).map(|i| sum_a[i] + sum_c[i] + sum_d[i]).collect();
    let identity_residual = math::dist(lhs, &total);
    let split_residual = math::dist(&sum_c, &sum_ef);
    let [target_a, target_c] = targets.clone();
    let claim_residuals = [
        math::dist(&sum_a, &target_a),
        math::norm(&sum_d),
        math::dist(&sum_c, &target_c),
    ];
    Ok(PartitionReport {
        partitions: m_parts,
        sum_a,
        sum_c,
        sum_d,
        lhs: lhs.to_vec(),
        identity_residual,
        split_residual,
        claim_targets: [target_a, vec![0.0; d], target_c],
        claim_residuals,
    })
}

/// Limits of `Σ A_n` and `Σ C_n` as left-point Itô sums on the noise grid.
fn claim_targets(
    field: &CoefficientField,
    noise: &NoiseRecord,
    start: usize,
    end: usize,
    x: &[f64],
    ev: &mut PointInverse<'_>,
) -> Result<[Vec<f64>; 2]> {
    let d = x.len();
    let m = field.brownian_count();
    let pts = noise.grid().points();
    let mut target_a = vec![0.0; d];
    let mut target_c = vec![0.0; d];
    for k in start..end {
        let t = pts[k];
        let dt = pts[k + 1] - t;
        let dw = noise.increment(k);
        let e = field.evaluate(t, x)?;
        let g = ev.grad(k, x)?;
        let hs = ev.hessian(k, x)?;
        let mut second = vec![0.0; d];
        let mut correction = vec![0.0; d];
        for rho in 0..m {
            let col = e.sigma.column(rho);
            axpy(&mut second, 1.0, &bilinear(&hs, &col, &col));
            axpy(&mut correction, 1.0, &e.grad_sigma[rho].mul_vec(&col));
            axpy(&mut target_a, -dw[rho], &g.mul_vec(&col));
        }
        let gb = g.mul_vec(&e.b);
        let gc = g.mul_vec(&correction);
        for i in 0..d {
            target_a[i] -= (0.5 * second[i] + gb[i]) * dt;
            target_c[i] += (gc[i] + second[i]) * dt;
        }
    }
    Ok([target_a, target_c])
}
