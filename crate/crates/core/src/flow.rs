//! Direct flow `X_t(s, x)`, Jacobian flow `U = ∇X`, and inverse-Jacobian
//! flow `Ū = [∇X]⁻¹` of a jump SDE over one noise realization.
//!
//! Jumps are taken raw and their compensator `Σ λ_k H(x, z_k)` is moved into
//! the drift, which is exact for a finite mark measure. On the interval from
//! grid point `k` to `k + 1` the continuous part is stepped first; a jump
//! flagged at point `k + 1` is then applied to the left limit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::coeffs::{AffineMap, CoefficientField};
use crate::error::{Error, Result};
use crate::linalg::{mul_into, Mat};
use crate::math;
use crate::noise::{NoiseRecord, PointKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Euler,
    /// Closed-form step maps of affine families with commuting noise.
    ExactFamily,
}

/// Scratch buffers for one propagation; avoids per-step allocation.
#[derive(Clone, Debug)]
pub struct Workspace {
    b: Vec<f64>,
    comp: Vec<f64>,
    h: Vec<f64>,
    left: Vec<f64>,
    sigma: Mat,
    grad: Mat,
    factor: Mat,
    prod: Mat,
}

impl Workspace {
    pub fn new(d: usize, m: usize) -> Self {
        Self {
            b: vec![0.0; d],
            comp: vec![0.0; d],
            h: vec![0.0; d],
            left: vec![0.0; d],
            sigma: Mat::zeros(d, m),
            grad: Mat::zeros(d, d),
            factor: Mat::zeros(d, d),
            prod: Mat::zeros(d, d),
        }
    }
}

/// Step maps of one field on one noise realization.
#[derive(Clone, Debug)]
pub struct Stepper<'a> {
    field: &'a CoefficientField,
    noise: &'a NoiseRecord,
    scheme: Scheme,
    exact: Vec<AffineMap>,
}

impl<'a> Stepper<'a> {
    pub fn new(field: &'a CoefficientField, noise: &'a NoiseRecord, scheme: Scheme) -> Result<Self> {
        if noise.brownian_count() != field.brownian_count() {
            return Err(Error::DimensionMismatch(format!(
                "noise has {} Wiener components, field {}",
                noise.brownian_count(),
                field.brownian_count()
            )));
        }
        for kind in noise.grid().kinds() {
            if let PointKind::Jump(atom) = kind {
                if *atom >= field.measure().atoms().len() {
                    return Err(Error::InvalidArgument(format!("noise refers to atom {atom} outside the measure")));
                }
            }
        }
        let mut exact = Vec::new();
        if scheme == Scheme::ExactFamily {
            let shift = field.compensator_shift().ok_or_else(|| {
                Error::SchemeUnsupported("exact scheme needs jumps affine in the state".into())
            })?;
            let pts = noise.grid().points();
            exact.reserve(pts.len() - 1);
            for k in 0..pts.len() - 1 {
                let dt = pts[k + 1] - pts[k];
                let map = field
                    .continuous()
                    .exact_step(pts[k], dt, noise.increment(k), &shift)
                    .ok_or_else(|| {
                        Error::SchemeUnsupported(format!(
                            "no closed-form step for family {}",
                            field.continuous().name()
                        ))
                    })?;
                exact.push(map);
            }
        }
        Ok(Self {
            field,
            noise,
            scheme,
            exact,
        })
    }

    pub fn field(&self) -> &'a CoefficientField {
        self.field
    }

    pub fn noise(&self) -> &'a NoiseRecord {
        self.noise
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.field.dim(), self.field.brownian_count())
    }

    pub fn intervals(&self) -> usize {
        self.noise.grid().intervals()
    }

    /// Time and atom of the jump at point `k`, if any.
    pub fn jump_at(&self, k: usize) -> Option<(f64, f64)> {
        match self.noise.grid().kinds()[k] {
            PointKind::Jump(atom) if self.field.has_jumps() => {
                Some((self.noise.grid().points()[k], self.field.measure().atoms()[atom].mark))
            }
            _ => None,
        }
    }

    /// Continuous part of interval `k`: `x ↦ X_{t_{k+1}−}`.
    pub fn continuous_map(&self, k: usize, x: &[f64], out: &mut [f64], ws: &mut Workspace) {
        match self.scheme {
            Scheme::ExactFamily => self.exact[k].apply(x, out),
            Scheme::Euler => {
                let pts = self.noise.grid().points();
                let t = pts[k];
                let dt = pts[k + 1] - t;
                let dw = self.noise.increment(k);
                let part = self.field.continuous();
                part.drift(t, x, &mut ws.b);
                part.diffusion(t, x, &mut ws.sigma);
                self.field.compensator_into(t, x, &mut ws.comp);
                let m = dw.len();
                for i in 0..x.len() {
                    let mut v = x[i] + (ws.b[i] - ws.comp[i]) * dt;
                    for rho in 0..m {
                        v += ws.sigma[(i, rho)] * dw[rho];
                    }
                    out[i] = v;
                }
            }
        }
    }

    /// Derivative of [`Self::continuous_map`] at `x`.
    pub fn continuous_jacobian(&self, k: usize, x: &[f64], out: &mut Mat, ws: &mut Workspace) -> Result<()> {
        match self.scheme {
            Scheme::ExactFamily => {
                out.as_mut_slice().copy_from_slice(self.exact[k].m.as_slice());
                Ok(())
            }
            Scheme::Euler => {
                let pts = self.noise.grid().points();
                let t = pts[k];
                let dt = pts[k + 1] - t;
                let dw = self.noise.increment(k);
                let part = self.field.continuous();
                out.set_identity();
                part.drift_grad(t, x, &mut ws.grad)?;
                out.add_scaled(&ws.grad, dt);
                self.field.compensator_grad_into(t, x, &mut ws.grad)?;
                out.add_scaled(&ws.grad, -dt);
                for (rho, w) in dw.iter().enumerate() {
                    part.diffusion_grad(t, x, rho, &mut ws.grad)?;
                    out.add_scaled(&ws.grad, *w);
                }
                Ok(())
            }
        }
    }

    /// Right factor `F` of the inverse-Jacobian step `Ū ← Ū F` on interval
    /// `k`: `I + (Σ∇σ^ρ∇σ^ρ − ∇b + Σλ∇H)Δt − Σ∇σ^ρΔw^ρ` under Euler, the
    /// exact inverse of the step matrix otherwise.
    pub fn inverse_jacobian_factor(&self, k: usize, x: &[f64], out: &mut Mat, ws: &mut Workspace) -> Result<()> {
        match self.scheme {
            Scheme::ExactFamily => {
                let inv = self.exact[k].m.inverse().ok_or(Error::SingularJacobian { det: 0.0 })?;
                *out = inv;
                Ok(())
            }
            Scheme::Euler => {
                let pts = self.noise.grid().points();
                let t = pts[k];
                let dt = pts[k + 1] - t;
                let dw = self.noise.increment(k);
                let part = self.field.continuous();
                out.set_identity();
                part.drift_grad(t, x, &mut ws.grad)?;
                out.add_scaled(&ws.grad, -dt);
                self.field.compensator_grad_into(t, x, &mut ws.grad)?;
                out.add_scaled(&ws.grad, dt);
                for (rho, w) in dw.iter().enumerate() {
                    part.diffusion_grad(t, x, rho, &mut ws.grad)?;
                    mul_into(&ws.grad, &ws.grad, &mut ws.prod);
                    out.add_scaled(&ws.prod, dt);
                    out.add_scaled(&ws.grad, -w);
                }
                Ok(())
            }
        }
    }

    /// `x ← x + H(t, x, z)` for the jump at point `k`; returns whether one
    /// happened.
    pub fn apply_jump(&self, k: usize, x: &mut [f64], ws: &mut Workspace) -> bool {
        let Some((t, z)) = self.jump_at(k) else {
            return false;
        };
        self.field.jump().jump(t, x, z, &mut ws.h);
        for (xi, hi) in x.iter_mut().zip(&ws.h) {
            *xi += hi;
        }
        true
    }

    /// `I + ∇H(t, x, z)` at the jump of point `k`.
    pub fn jump_jacobian(&self, k: usize, x: &[f64], out: &mut Mat) -> Result<bool> {
        let Some((t, z)) = self.jump_at(k) else {
            return Ok(false);
        };
        self.field.jump().jump_grad(t, x, z, out)?;
        for i in 0..x.len() {
            out[(i, i)] += 1.0;
        }
        Ok(true)
    }

    /// Advances `x` from point `k` to `k + 1`, jump included. `left`
    /// receives the left limit.
    pub fn step(&self, k: usize, x: &mut [f64], left: &mut [f64], ws: &mut Workspace) -> Result<()> {
        self.continuous_map(k, x, left, ws);
        x.copy_from_slice(left);
        self.apply_jump(k + 1, x, ws);
        self.check_finite(k + 1, x)
    }

    /// Advances `x` and `U` together from point `k` to `k + 1`.
    pub fn step_with_jacobian(&self, k: usize, x: &mut [f64], u: &mut Mat, ws: &mut Workspace) -> Result<()> {
        let mut f = core::mem::replace(&mut ws.factor, Mat::zeros(0, 0));
        let mut left = core::mem::take(&mut ws.left);
        let res = (|| {
            self.continuous_jacobian(k, x, &mut f, ws)?;
            mul_into(&f, u, &mut ws.prod);
            u.as_mut_slice().copy_from_slice(ws.prod.as_slice());
            self.continuous_map(k, x, &mut left, ws);
            x.copy_from_slice(&left);
            if self.jump_jacobian(k + 1, x, &mut f)? {
                mul_into(&f, u, &mut ws.prod);
                u.as_mut_slice().copy_from_slice(ws.prod.as_slice());
                self.apply_jump(k + 1, x, ws);
            }
            Ok(())
        })();
        ws.factor = f;
        ws.left = left;
        res?;
        self.check_finite(k + 1, x)?;
        if !u.is_finite() {
            return Err(Error::NonFiniteState { time: self.noise.grid().points()[k + 1] });
        }
        Ok(())
    }

    /// `X` at point `end` started from `x` at point `start`.
    pub fn propagate(&self, start: usize, end: usize, x: &[f64], ws: &mut Workspace) -> Result<Vec<f64>> {
        let mut state = x.to_vec();
        let mut left = vec![0.0; x.len()];
        for k in start..end {
            self.step(k, &mut state, &mut left, ws)?;
        }
        Ok(state)
    }

    /// `X` and `∇X` at point `end` started from `x` at point `start`.
    pub fn propagate_with_jacobian(
        &self,
        start: usize,
        end: usize,
        x: &[f64],
        ws: &mut Workspace,
    ) -> Result<(Vec<f64>, Mat)> {
        let mut state = x.to_vec();
        let mut u = Mat::identity(x.len());
        for k in start..end {
            self.step_with_jacobian(k, &mut state, &mut u, ws)?;
        }
        Ok((state, u))
    }

    /// `Ū` at point `end` for the path started from `x` at point `start`,
    /// transported by the inverse-Jacobian equation.
    pub fn propagate_inverse_jacobian(&self, start: usize, end: usize, x: &[f64], ws: &mut Workspace) -> Result<Mat> {
        let d = x.len();
        let mut state = x.to_vec();
        let mut left = vec![0.0; d];
        let mut ubar = Mat::identity(d);
        let mut f = Mat::zeros(d, d);
        for k in start..end {
            self.inverse_jacobian_factor(k, &state, &mut f, ws)?;
            mul_into(&ubar, &f, &mut ws.prod);
            ubar.as_mut_slice().copy_from_slice(ws.prod.as_slice());
            self.continuous_map(k, &state, &mut left, ws);
            state.copy_from_slice(&left);
            if self.jump_jacobian(k + 1, &state, &mut f)? {
                let inv = invert_jump_factor(&f)?;
                mul_into(&ubar, &inv, &mut ws.prod);
                ubar.as_mut_slice().copy_from_slice(ws.prod.as_slice());
                self.apply_jump(k + 1, &mut state, ws);
            }
            self.check_finite(k + 1, &state)?;
        }
        Ok(ubar)
    }

    fn check_finite(&self, k: usize, x: &[f64]) -> Result<()> {
        if math::all_finite(x) {
            Ok(())
        } else {
            Err(Error::NonFiniteState { time: self.noise.grid().points()[k] })
        }
    }
}

pub(crate) fn invert_jump_factor(f: &Mat) -> Result<Mat> {
    let det = f.det();
    if math::abs(det) < 1e-12 {
        return Err(Error::SingularJumpJacobian { det: math::abs(det) });
    }
    f.inverse().ok_or(Error::SingularJumpJacobian { det: 0.0 })
}

/// States of a batch of initial points driven by one noise realization.
///
/// Arrays are point-major: entry `(p, k)` is point `p` at the `k`-th stored
/// time. Stored times are the grid points from `start` on.
#[derive(Clone, Debug)]
pub struct FlowPath<'a> {
    noise: &'a NoiseRecord,
    scheme: Scheme,
    start: usize,
    dim: usize,
    initial_points: Vec<Vec<f64>>,
    states: Vec<f64>,
    left_limits: Vec<f64>,
    jacobians: Option<Vec<f64>>,
    inverse_jacobians: Option<Vec<f64>>,
}

impl<'a> FlowPath<'a> {
    pub fn noise(&self) -> &'a NoiseRecord {
        self.noise
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Grid index of the start time.
    pub fn start_index(&self) -> usize {
        self.start
    }

    pub fn times(&self) -> &'a [f64] {
        &self.noise.grid().points()[self.start..]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial_points(&self) -> &[Vec<f64>] {
        &self.initial_points
    }

    pub fn point_count(&self) -> usize {
        self.initial_points.len()
    }

    pub fn time_count(&self) -> usize {
        self.noise.grid().len() - self.start
    }

    fn offset(&self, p: usize, k: usize, block: usize) -> usize {
        (p * self.time_count() + k) * block
    }

    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let o = self.offset(p, k, self.dim);
        &self.states[o..o + self.dim]
    }

    /// `X_{t−}`; equals the state where no jump happened.
    pub fn left_limit(&self, p: usize, k: usize) -> &[f64] {
        let o = self.offset(p, k, self.dim);
        &self.left_limits[o..o + self.dim]
    }

    pub fn has_jacobians(&self) -> bool {
        self.jacobians.is_some()
    }

    pub fn has_inverse_jacobians(&self) -> bool {
        self.inverse_jacobians.is_some()
    }

    pub fn jacobian(&self, p: usize, k: usize) -> Option<Mat> {
        let d = self.dim;
        let o = self.offset(p, k, d * d);
        self.jacobians
            .as_ref()
            .map(|j| Mat::from_rows(d, d, j[o..o + d * d].to_vec()))
    }

    pub fn inverse_jacobian(&self, p: usize, k: usize) -> Option<Mat> {
        let d = self.dim;
        let o = self.offset(p, k, d * d);
        self.inverse_jacobians
            .as_ref()
            .map(|j| Mat::from_rows(d, d, j[o..o + d * d].to_vec()))
    }

    /// `max_k ‖U_k Ū_k − I‖_F` for point `p`.
    pub fn product_defect(&self, p: usize) -> Option<f64> {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for k in 0..self.time_count() {
            let mut prod = self.jacobian(p, k)?.mul(&self.inverse_jacobian(p, k)?);
            prod.add_scaled(&Mat::identity(d), -1.0);
            worst = worst.max(prod.frobenius());
        }
        Some(worst)
    }
}

/// Integrates the flow from the grid start for every initial point.
pub fn integrate_flow<'a>(
    field: &CoefficientField,
    noise: &'a NoiseRecord,
    initial_points: &[Vec<f64>],
    scheme: Scheme,
) -> Result<FlowPath<'a>> {
    integrate_flow_from(field, noise, 0, initial_points, scheme)
}

/// Integrates the flow from grid point `start`.
pub fn integrate_flow_from<'a>(
    field: &CoefficientField,
    noise: &'a NoiseRecord,
    start: usize,
    initial_points: &[Vec<f64>],
    scheme: Scheme,
) -> Result<FlowPath<'a>> {
    let stepper = Stepper::new(field, noise, scheme)?;
    let d = field.dim();
    if start >= noise.grid().len() {
        return Err(Error::InvalidArgument(format!("start index {start} is past the grid")));
    }
    for x in initial_points {
        if x.len() != d {
            return Err(Error::DimensionMismatch(format!("initial point of length {}, field dimension {d}", x.len())));
        }
        if !math::all_finite(x) {
            return Err(Error::NonFiniteValue("initial point"));
        }
    }
    let times = noise.grid().len() - start;
    let mut states = Vec::with_capacity(initial_points.len() * times * d);
    let mut left_limits = Vec::with_capacity(initial_points.len() * times * d);
    let mut ws = stepper.workspace();
    let mut left = vec![0.0; d];
    for x0 in initial_points {
        let mut x = x0.clone();
        states.extend_from_slice(&x);
        left_limits.extend_from_slice(&x);
        for k in start..noise.grid().len() - 1 {
            stepper.step(k, &mut x, &mut left, &mut ws)?;
            states.extend_from_slice(&x);
            left_limits.extend_from_slice(&left);
        }
    }
    Ok(FlowPath {
        noise,
        scheme,
        start,
        dim: d,
        initial_points: initial_points.to_vec(),
        states,
        left_limits,
        jacobians: None,
        inverse_jacobians: None,
    })
}

/// Transports `U` along the stored states: `U ← F_k U` on each interval,
/// `U ← (I + ∇H(X_{t−}, z)) U` at jumps.
pub fn integrate_jacobian<'a>(field: &CoefficientField, mut flow: FlowPath<'a>) -> Result<FlowPath<'a>> {
    let stepper = Stepper::new(field, flow.noise, flow.scheme)?;
    let d = flow.dim;
    let n = flow.time_count();
    let mut out = Vec::with_capacity(flow.point_count() * n * d * d);
    let mut ws = stepper.workspace();
    let mut f = Mat::zeros(d, d);
    for p in 0..flow.point_count() {
        let mut u = Mat::identity(d);
        out.extend_from_slice(u.as_slice());
        for k in 0..n - 1 {
            let g = flow.start + k;
            stepper.continuous_jacobian(g, flow.state(p, k), &mut f, &mut ws)?;
            u = f.mul(&u);
            if stepper.jump_jacobian(g + 1, flow.left_limit(p, k + 1), &mut f)? {
                u = f.mul(&u);
            }
            if !u.is_finite() {
                return Err(Error::NonFiniteState { time: flow.times()[k + 1] });
            }
            out.extend_from_slice(u.as_slice());
        }
    }
    flow.jacobians = Some(out);
    Ok(flow)
}

/// Transports `Ū` along the stored states: `Ū ← Ū F̄_k` on each interval,
/// `Ū ← Ū (I + ∇H(X_{t−}, z))⁻¹` at jumps.
pub fn integrate_inverse_jacobian<'a>(field: &CoefficientField, mut flow: FlowPath<'a>) -> Result<FlowPath<'a>> {
    let stepper = Stepper::new(field, flow.noise, flow.scheme)?;
    let d = flow.dim;
    let n = flow.time_count();
    let mut out = Vec::with_capacity(flow.point_count() * n * d * d);
    let mut ws = stepper.workspace();
    let mut f = Mat::zeros(d, d);
    for p in 0..flow.point_count() {
        let mut ubar = Mat::identity(d);
        out.extend_from_slice(ubar.as_slice());
        for k in 0..n - 1 {
            let g = flow.start + k;
            stepper.inverse_jacobian_factor(g, flow.state(p, k), &mut f, &mut ws)?;
            ubar = ubar.mul(&f);
            if stepper.jump_jacobian(g + 1, flow.left_limit(p, k + 1), &mut f)? {
                ubar = ubar.mul(&invert_jump_factor(&f)?);
            }
            if !ubar.is_finite() {
                return Err(Error::NonFiniteState { time: flow.times()[k + 1] });
            }
            out.extend_from_slice(ubar.as_slice());
        }
    }
    flow.inverse_jacobians = Some(out);
    Ok(flow)
}

/// `sup_x |X_t(s, x) − X_t(r, X_r(s, x))|` with both sides stepped on the
/// same grid and increments.
pub fn flow_composition_check(
    field: &CoefficientField,
    noise: &NoiseRecord,
    s: f64,
    r: f64,
    t: f64,
    points: &[Vec<f64>],
    scheme: Scheme,
) -> Result<f64> {
    let grid = noise.grid();
    let locate = |time: f64| {
        grid.index_of(time)
            .ok_or_else(|| Error::InvalidArgument(format!("time {time} is not a grid point")))
    };
    let (is, ir, it) = (locate(s)?, locate(r)?, locate(t)?);
    if !(is < ir && ir < it) {
        return Err(Error::InvalidInterval { s, t });
    }
    let stepper = Stepper::new(field, noise, scheme)?;
    let mut ws = stepper.workspace();
    let mut worst: f64 = 0.0;
    for x in points {
        let direct = stepper.propagate(is, it, x, &mut ws)?;
        let mid = stepper.propagate(is, ir, x, &mut ws)?;
        let composed = stepper.propagate(ir, it, &mid, &mut ws)?;
        worst = worst.max(math::dist(&direct, &composed));
    }
    Ok(worst)
}
