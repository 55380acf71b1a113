//! Numerical inversion of the flow map `x ↦ X_t(s, x)`.
//!
//! A preimage is built backward one grid interval at a time: jumps are
//! undone by [`invert_jump_map`], continuous step maps by damped Newton with
//! a fixed-point fallback. The composed preimage is then polished by Newton
//! on the full forward map, and the final forward residual is stored as a
//! certificate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::flow::{FlowPath, Scheme, Stepper, Workspace};
use crate::linalg::Mat;
use crate::math;
use crate::noise::NoiseRecord;

const NEWTON_CAP: usize = 50;
const FIXED_POINT_CAP: usize = 200;
const POLISH_CAP: usize = 20;

/// Default inversion tolerance of a scheme.
pub fn default_tolerance(scheme: Scheme) -> f64 {
    match scheme {
        Scheme::ExactFamily => 1e-10,
        Scheme::Euler => 1e-8,
    }
}

/// Solves `x + H(t, x, z) = y`.
///
/// Fixed-point steps `x ← y − H(x)` are used while `|∇H(x)|₂ ≤ η`, where the
/// map is a contraction; Newton steps otherwise.
pub fn invert_jump_map(field: &CoefficientField, t: f64, z: f64, y: &[f64], tol: f64) -> Result<Vec<f64>> {
    if field.measure().atom_index(z).is_none() {
        return Err(Error::UnknownMark(z));
    }
    let d = field.dim();
    if y.len() != d {
        return Err(Error::DimensionMismatch(format!("point of length {}, field dimension {d}", y.len())));
    }
    let jump = field.jump();
    if jump.is_zero() {
        return Ok(y.to_vec());
    }
    let eta = field.regularity().eta;
    let mut x = y.to_vec();
    let mut h = vec![0.0; d];
    let mut g = Mat::zeros(d, d);
    let mut r = vec![0.0; d];
    let mut newton_steps = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_CAP + NEWTON_CAP {
        jump.jump(t, &x, z, &mut h);
        for i in 0..d {
            r[i] = x[i] + h[i] - y[i];
        }
        residual = math::norm(&r);
        if residual <= tol {
            return Ok(x);
        }
        jump.jump_grad(t, &x, z, &mut g)?;
        if g.op_norm() <= eta {
            for i in 0..d {
                x[i] = y[i] - h[i];
            }
        } else {
            newton_steps += 1;
            if newton_steps > NEWTON_CAP {
                break;
            }
            for i in 0..d {
                g[(i, i)] += 1.0;
            }
            let det = g.det();
            if math::abs(det) < 1e-12 {
                return Err(Error::SingularJumpJacobian { det: math::abs(det) });
            }
            let dx = g.solve(&r).ok_or(Error::SingularJumpJacobian { det: 0.0 })?;
            for i in 0..d {
                x[i] -= dx[i];
            }
        }
        if !math::all_finite(&x) {
            break;
        }
    }
    Err(Error::NoConvergence {
        stage: "jump inversion",
        iterations: FIXED_POINT_CAP + NEWTON_CAP,
        residual,
    })
}

/// Inverse flow values on a batch of query points.
///
/// Arrays are point-major over the stored times, like [`FlowPath`].
#[derive(Clone, Debug, PartialEq)]
pub struct InversePath {
    times: Vec<f64>,
    /// Grid index of each stored time.
    time_indices: Vec<usize>,
    start: usize,
    dim: usize,
    query_points: Vec<Vec<f64>>,
    values: Vec<f64>,
    gradients: Option<Vec<f64>>,
    residuals: Vec<f64>,
    tolerance: Option<f64>,
}

impl InversePath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time_indices(&self) -> &[usize] {
        &self.time_indices
    }

    pub fn start_index(&self) -> usize {
        self.start
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn query_points(&self) -> &[Vec<f64>] {
        &self.query_points
    }

    pub fn point_count(&self) -> usize {
        self.query_points.len()
    }

    pub fn time_count(&self) -> usize {
        self.times.len()
    }

    /// `X_t⁻¹(s, y_p)` at the `k`-th stored time.
    pub fn value(&self, p: usize, k: usize) -> &[f64] {
        let o = (p * self.time_count() + k) * self.dim;
        &self.values[o..o + self.dim]
    }

    pub fn residual(&self, p: usize, k: usize) -> f64 {
        self.residuals[p * self.time_count() + k]
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Tolerance certified by every stored residual; `None` for paths not
    /// produced by a certified solve.
    pub fn tolerance(&self) -> Option<f64> {
        self.tolerance
    }

    pub fn has_gradients(&self) -> bool {
        self.gradients.is_some()
    }

    pub fn gradient(&self, p: usize, k: usize) -> Option<Mat> {
        let d = self.dim;
        let o = (p * self.time_count() + k) * d * d;
        self.gradients
            .as_ref()
            .map(|g| Mat::from_rows(d, d, g[o..o + d * d].to_vec()))
    }
}

/// Which stored times of a flow to invert at.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseOptions {
    pub tol: f64,
    /// Offsets into the flow's stored times; all of them when `None`.
    pub times: Option<Vec<usize>>,
}

impl InverseOptions {
    pub fn for_scheme(scheme: Scheme) -> Self {
        Self {
            tol: default_tolerance(scheme),
            times: None,
        }
    }
}

/// Inverts the flow map of `flow` at each requested stored time.
pub fn invert_flow(
    field: &CoefficientField,
    flow: &FlowPath<'_>,
    query_points: &[Vec<f64>],
    opts: &InverseOptions,
) -> Result<InversePath> {
    let stepper = Stepper::new(field, flow.noise(), flow.scheme())?;
    invert_with(&stepper, flow.start_index(), query_points, opts)
}

/// [`invert_flow`] on a prepared stepper starting at grid point `start`.
pub fn invert_with(
    stepper: &Stepper<'_>,
    start: usize,
    query_points: &[Vec<f64>],
    opts: &InverseOptions,
) -> Result<InversePath> {
    let d = stepper.field().dim();
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
    }
    let grid = stepper.noise().grid();
    let time_indices = resolve_times(opts.times.as_deref(), start, grid.len())?;
    for y in query_points {
        if y.len() != d {
            return Err(Error::DimensionMismatch(format!("query point of length {}, field dimension {d}", y.len())));
        }
    }
    let n = time_indices.len();
    let mut values = Vec::with_capacity(query_points.len() * n * d);
    let mut residuals = Vec::with_capacity(query_points.len() * n);
    let mut ws = stepper.workspace();
    for y in query_points {
        for &end in &time_indices {
            let (x, res) = invert_point(stepper, start, end, y, opts.tol, &mut ws)?;
            values.extend_from_slice(&x);
            residuals.push(res);
        }
    }
    Ok(InversePath {
        times: time_indices.iter().map(|&k| grid.points()[k]).collect(),
        time_indices,
        start,
        dim: d,
        query_points: query_points.to_vec(),
        values,
        gradients: None,
        residuals,
        tolerance: Some(opts.tol),
    })
}

fn resolve_times(offsets: Option<&[usize]>, start: usize, len: usize) -> Result<Vec<usize>> {
    match offsets {
        None => Ok((start..len).collect()),
        Some(o) => o
            .iter()
            .map(|&k| {
                if start + k < len {
                    Ok(start + k)
                } else {
                    Err(Error::InvalidArgument(format!("time offset {k} is past the grid")))
                }
            })
            .collect(),
    }
}

/// Preimage of `y` under the flow from grid point `start` to `end`, with the
/// forward residual of the returned point.
pub fn invert_point(
    stepper: &Stepper<'_>,
    start: usize,
    end: usize,
    y: &[f64],
    tol: f64,
    ws: &mut Workspace,
) -> Result<(Vec<f64>, f64)> {
    if end == start {
        return Ok((y.to_vec(), 0.0));
    }
    let field = stepper.field();
    let mut z = y.to_vec();
    for k in (start..end).rev() {
        if let Some((t, mark)) = stepper.jump_at(k + 1) {
            z = invert_jump_map(field, t, mark, &z, 0.1 * tol)?;
        }
        z = invert_step(stepper, k, &z, 0.1 * tol, ws)?;
    }
    polish(stepper, start, end, y, z, tol, ws)
}

/// Solves `Φ_k(x) = target` for the continuous step map of interval `k`.
fn invert_step(stepper: &Stepper<'_>, k: usize, target: &[f64], tol: f64, ws: &mut Workspace) -> Result<Vec<f64>> {
    let d = target.len();
    let mut x = target.to_vec();
    let mut fx = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut f_trial = vec![0.0; d];
    let mut jac = Mat::zeros(d, d);
    let residual = |fx: &[f64]| math::dist(fx, target);

    stepper.continuous_map(k, &x, &mut fx, ws);
    let mut r = residual(&fx);
    for _ in 0..NEWTON_CAP {
        if r <= tol {
            return Ok(x);
        }
        stepper.continuous_jacobian(k, &x, &mut jac, ws)?;
        let rhs: Vec<f64> = fx.iter().zip(target).map(|(a, b)| a - b).collect();
        let Some(dx) = jac.solve(&rhs) else { break };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            for i in 0..d {
                trial[i] = x[i] - lambda * dx[i];
            }
            stepper.continuous_map(k, &trial, &mut f_trial, ws);
            let rt = residual(&f_trial);
            if rt < r || rt <= tol {
                x.copy_from_slice(&trial);
                fx.copy_from_slice(&f_trial);
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r <= tol {
        return Ok(x);
    }
    // near-identity step maps contract under x ← x − (Φ(x) − target)
    for _ in 0..FIXED_POINT_CAP {
        for i in 0..d {
            x[i] -= fx[i] - target[i];
        }
        stepper.continuous_map(k, &x, &mut fx, ws);
        r = residual(&fx);
        if r <= tol {
            return Ok(x);
        }
        if !r.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        stage: "step inversion",
        iterations: NEWTON_CAP + FIXED_POINT_CAP,
        residual: r,
    })
}

/// Newton on the composed forward map, using the propagated Jacobian.
fn polish(
    stepper: &Stepper<'_>,
    start: usize,
    end: usize,
    y: &[f64],
    mut x: Vec<f64>,
    tol: f64,
    ws: &mut Workspace,
) -> Result<(Vec<f64>, f64)> {
    let (mut fx, mut u) = stepper.propagate_with_jacobian(start, end, &x, ws)?;
    let mut r = math::dist(&fx, y);
    let mut best = (x.clone(), r);
    for _ in 0..POLISH_CAP {
        if r <= 0.25 * tol {
            break;
        }
        let rhs: Vec<f64> = fx.iter().zip(y).map(|(a, b)| a - b).collect();
        let Some(dx) = u.solve(&rhs) else { break };
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi -= di;
        }
        let next = stepper.propagate_with_jacobian(start, end, &x, ws)?;
        fx = next.0;
        u = next.1;
        let rn = math::dist(&fx, y);
        if rn < best.1 {
            best = (x.clone(), rn);
        } else if rn >= r {
            break;
        }
        r = rn;
    }
    if best.1 <= tol {
        Ok(best)
    } else {
        Err(Error::NoConvergence {
            stage: "flow polish",
            iterations: POLISH_CAP,
            residual: best.1,
        })
    }
}

/// Fills `∇X_t⁻¹(y) = [∇X_t(X_t⁻¹(y))]⁻¹`, with `∇X_t` re-propagated from
/// each stored preimage.
pub fn inverse_gradient(field: &CoefficientField, flow: &FlowPath<'_>, mut inverse: InversePath) -> Result<InversePath> {
    let stepper = Stepper::new(field, flow.noise(), flow.scheme())?;
    let d = inverse.dim;
    let mut ws = stepper.workspace();
    let mut out = Vec::with_capacity(inverse.values.len() * d);
    for p in 0..inverse.point_count() {
        for k in 0..inverse.time_count() {
            let x = inverse.value(p, k).to_vec();
            let (_, u) = stepper.propagate_with_jacobian(inverse.start, inverse.time_indices[k], &x, &mut ws)?;
            let det = u.det();
            if math::abs(det) < 1e-12 {
                return Err(Error::SingularJacobian { det: math::abs(det) });
            }
            let inv = u.inverse().ok_or(Error::SingularJacobian { det: 0.0 })?;
            out.extend_from_slice(inv.as_slice());
        }
    }
    inverse.gradients = Some(out);
    Ok(inverse)
}

/// Integrates the Stratonovich equation of the inverse flow of a jump-free
/// field,
/// `dZ = −Ū_t(Z) b°(x) dt − Ū_t(Z) σ^ρ(x) ∘ dw^ρ`,
/// where `b° = b − ½ σ^{jρ} ∂_j σ^{ρ}` is the Stratonovich drift of the
/// forward flow and `Ū_t(z)` is propagated from `s` along the path started at
/// `z`. Stepped by Euler–Heun; the integrand at the right end uses the
/// inverse Jacobian at the right time, which captures its covariation with
/// `w`.
pub fn integrate_inverse_sde_stratonovich(
    field: &CoefficientField,
    noise: &NoiseRecord,
    query_points: &[Vec<f64>],
    scheme: Scheme,
) -> Result<InversePath> {
    if field.has_jumps() {
        return Err(Error::JumpFieldRejected);
    }
    let stepper = Stepper::new(field, noise, scheme)?;
    let d = field.dim();
    let m = field.brownian_count();
    let grid = noise.grid();
    let pts = grid.points();
    let n = grid.len();
    let mut ws = stepper.workspace();
    let mut values = Vec::with_capacity(query_points.len() * n * d);
    let mut residuals = Vec::with_capacity(query_points.len() * n);
    let mut sigma = Mat::zeros(d, m);
    let mut drive = vec![0.0; d];
    for x in query_points {
        if x.len() != d {
            return Err(Error::DimensionMismatch(format!("query point of length {}, field dimension {d}", x.len())));
        }
        let mut z = x.clone();
        values.extend_from_slice(&z);
        residuals.push(0.0);
        // forward states of the path started at the current preimage
        for k in 0..n - 1 {
            let t = pts[k];
            let dt = pts[k + 1] - t;
            let dw = noise.increment(k);
            let strat = stratonovich_drift(field, t, x)?;
            field.continuous().diffusion(t, x, &mut sigma);
            for i in 0..d {
                drive[i] = strat[i] * dt;
                for rho in 0..m {
                    drive[i] += sigma[(i, rho)] * dw[rho];
                }
            }
            let u0 = stepper.propagate_inverse_jacobian(0, k, &z, &mut ws)?;
            let g0 = u0.mul_vec(&drive);
            let predictor: Vec<f64> = z.iter().zip(&g0).map(|(a, b)| a - b).collect();
            let u1 = stepper.propagate_inverse_jacobian(0, k + 1, &predictor, &mut ws)?;
            let g1 = u1.mul_vec(&drive);
            for i in 0..d {
                z[i] -= 0.5 * (g0[i] + g1[i]);
            }
            if !math::all_finite(&z) {
                return Err(Error::NonFiniteState { time: pts[k + 1] });
            }
            let fwd = stepper.propagate(0, k + 1, &z, &mut ws)?;
            values.extend_from_slice(&z);
            residuals.push(math::dist(&fwd, x));
        }
    }
    Ok(InversePath {
        times: pts.to_vec(),
        time_indices: (0..n).collect(),
        start: 0,
        dim: d,
        query_points: query_points.to_vec(),
        values,
        gradients: None,
        residuals,
        tolerance: None,
    })
}

fn stratonovich_drift(field: &CoefficientField, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let b_hat = field.hat_drift(t, x)?;
    let mut b = vec![0.0; x.len()];
    field.continuous().drift(t, x, &mut b);
    Ok(b.iter().zip(&b_hat).map(|(b, bh)| 0.5 * (b + bh)).collect())
}
