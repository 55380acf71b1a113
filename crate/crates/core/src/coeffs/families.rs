//! Built-in coefficient families and generic field transformations.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{hat_drift_of, AffineMap, ContinuousPart, JumpPart, LinearShift};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;

/// `b(x) = A x + c`, `σ^ρ(x) = B_ρ x + s_ρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    name: String,
    a: Mat,
    c: Vec<f64>,
    b: Vec<Mat>,
    s: Vec<Vec<f64>>,
}

impl Affine {
    pub fn new(a: Mat, c: Vec<f64>, b: Vec<Mat>, s: Vec<Vec<f64>>) -> Result<Self> {
        Self::named("AFFINE", a, c, b, s)
    }

    fn named(name: &str, a: Mat, c: Vec<f64>, b: Vec<Mat>, s: Vec<Vec<f64>>) -> Result<Self> {
        let d = a.rows();
        let shapes_ok = a.cols() == d
            && c.len() == d
            && !b.is_empty()
            && b.len() == s.len()
            && b.iter().all(|m| m.rows() == d && m.cols() == d)
            && s.iter().all(|v| v.len() == d);
        if d == 0 || !shapes_ok {
            return Err(Error::DimensionMismatch(format!(
                "affine family needs A: d×d, c: d, and m ≥ 1 pairs (B: d×d, s: d); got d = {d}, m = {}",
                b.len()
            )));
        }
        let finite = a.is_finite()
            && math::all_finite(&c)
            && b.iter().all(Mat::is_finite)
            && s.iter().all(|v| math::all_finite(v));
        if !finite {
            return Err(Error::NonFiniteValue("affine coefficients"));
        }
        Ok(Self {
            name: name.into(),
            a,
            c,
            b,
            s,
        })
    }

    /// `b = σ = 0` in dimension `d` with `m` Wiener components.
    pub fn zero(dim: usize, brownian: usize) -> Self {
        let b = vec![Mat::zeros(dim, dim); brownian];
        let s = vec![vec![0.0; dim]; brownian];
        Self::named("ZERO", Mat::zeros(dim, dim), vec![0.0; dim], b, s).expect("valid shape")
    }

    /// Constant drift `c`, no diffusion.
    pub fn constant(c: Vec<f64>) -> Result<Self> {
        let d = c.len();
        Self::named("CONST", Mat::zeros(d, d), c, vec![Mat::zeros(d, d)], vec![vec![0.0; d]])
    }

    /// Constant drift `c` and constant diffusion columns `s_ρ`.
    pub fn additive(c: Vec<f64>, s: Vec<Vec<f64>>) -> Result<Self> {
        let d = c.len();
        let b = vec![Mat::zeros(d, d); s.len()];
        Self::named("ADDITIVE", Mat::zeros(d, d), c, b, s)
    }

    /// Scalar geometric Brownian motion `dX = μ X dt + ν X dw`.
    pub fn gbm(mu: f64, nu: f64) -> Result<Self> {
        Self::named(
            "GBM",
            Mat::scalar(1, mu),
            vec![0.0],
            vec![Mat::scalar(1, nu)],
            vec![vec![0.0]],
        )
    }

    /// Planar rotation `b(x) = [[0, -1], [1, 0]] x`, no diffusion.
    pub fn rotation() -> Self {
        let a = Mat::from_rows(2, 2, vec![0.0, -1.0, 1.0, 0.0]);
        Self::named("ROT", a, vec![0.0; 2], vec![Mat::zeros(2, 2)], vec![vec![0.0; 2]])
            .expect("valid shape")
    }

    pub fn drift_matrix(&self) -> &Mat {
        &self.a
    }

    pub fn drift_offset(&self) -> &[f64] {
        &self.c
    }

    pub fn diffusion_matrices(&self) -> &[Mat] {
        &self.b
    }

    pub fn diffusion_offsets(&self) -> &[Vec<f64>] {
        &self.s
    }

    /// `β` with `B = β I`, if `B` is a multiple of the identity.
    fn scalar_multiple(m: &Mat) -> Option<f64> {
        let d = m.rows();
        let beta = m[(0, 0)];
        for i in 0..d {
            for j in 0..d {
                let expected = if i == j { beta } else { 0.0 };
                if m[(i, j)] != expected {
                    return None;
                }
            }
        }
        Some(beta)
    }
}

impl ContinuousPart for Affine {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.c.len()
    }

    fn brownian_count(&self) -> usize {
        self.b.len()
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.a.mul_vec_into(x, out);
        for (o, c) in out.iter_mut().zip(&self.c) {
            *o += c;
        }
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut Mat) {
        let d = self.dim();
        for (rho, (bm, s)) in self.b.iter().zip(&self.s).enumerate() {
            for i in 0..d {
                let mut v = s[i];
                for j in 0..d {
                    v += bm[(i, j)] * x[j];
                }
                out[(i, rho)] = v;
            }
        }
    }

    fn drift_grad(&self, _t: f64, _x: &[f64], out: &mut Mat) -> Result<()> {
        out.as_mut_slice().copy_from_slice(self.a.as_slice());
        Ok(())
    }

    fn diffusion_grad(&self, _t: f64, _x: &[f64], rho: usize, out: &mut Mat) -> Result<()> {
        out.as_mut_slice().copy_from_slice(self.b[rho].as_slice());
        Ok(())
    }

    fn drift_second(&self, _t: f64, _x: &[f64], _k: usize, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn diffusion_second(&self, _t: f64, _x: &[f64], _rho: usize, _k: usize, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn exact_step(&self, _t: f64, dt: f64, dw: &[f64], shift: &LinearShift) -> Option<AffineMap> {
        let d = self.dim();
        let mut a = self.a.clone();
        for i in 0..d {
            a[(i, i)] -= shift.scale;
        }
        let c: Vec<f64> = self.c.iter().zip(&shift.offset).map(|(c, o)| c - o).collect();
        let no_offset_noise = self.s.iter().all(|v| v.iter().all(|x| *x == 0.0));
        let betas: Option<Vec<f64>> = self.b.iter().map(Self::scalar_multiple).collect();

        if let (true, Some(betas)) = (no_offset_noise, betas.as_ref()) {
            if betas.iter().all(|b| *b == 0.0) {
                // exp of the augmented generator [[A, c], [0, 0]] dt
                let mut g = Mat::zeros(d + 1, d + 1);
                for i in 0..d {
                    for j in 0..d {
                        g[(i, j)] = a[(i, j)] * dt;
                    }
                    g[(i, d)] = c[i] * dt;
                }
                let e = g.expm();
                let mut m = Mat::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        m[(i, j)] = e[(i, j)];
                    }
                }
                let v = (0..d).map(|i| e[(i, d)]).collect();
                return Some(AffineMap { m, v });
            }
            if c.iter().all(|v| *v == 0.0) {
                let quad: f64 = betas.iter().map(|b| b * b).sum();
                let noise: f64 = betas.iter().zip(dw).map(|(b, w)| b * w).sum();
                let mut g = a;
                g.scale(dt);
                let mut m = g.expm();
                m.scale(math::exp(-0.5 * quad * dt + noise));
                return Some(AffineMap { m, v: vec![0.0; d] });
            }
        }

        let additive = a.as_slice().iter().all(|v| *v == 0.0)
            && self.b.iter().all(|m| m.as_slice().iter().all(|v| *v == 0.0));
        if additive {
            let mut v: Vec<f64> = c.iter().map(|c| c * dt).collect();
            for (s, w) in self.s.iter().zip(dw) {
                for (vi, si) in v.iter_mut().zip(s) {
                    *vi += si * w;
                }
            }
            return Some(AffineMap { m: Mat::identity(d), v });
        }
        None
    }

    fn perturbed_same_family(&self, drift_shift: f64, diffusion_scale: f64) -> Option<Arc<dyn ContinuousPart>> {
        let mut p = self.clone();
        p.c.iter_mut().for_each(|v| *v += drift_shift);
        p.b.iter_mut().for_each(|m| m.scale(diffusion_scale));
        p.s.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x *= diffusion_scale));
        Some(Arc::new(p))
    }

    fn corrected_reverse_same_family(&self) -> Option<Arc<dyn ContinuousPart>> {
        let d = self.dim();
        let mut a = self.a.clone();
        let mut c = self.c.clone();
        for (bm, s) in self.b.iter().zip(&self.s) {
            a.add_scaled(&bm.mul(bm), -1.0);
            let bs = bm.mul_vec(s);
            for i in 0..d {
                c[i] -= bs[i];
            }
        }
        a.scale(-1.0);
        c.iter_mut().for_each(|v| *v = -*v);
        let b = self
            .b
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.scale(-1.0);
                m
            })
            .collect();
        let s = self.s.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        Affine::named(&format!("BAR({})", self.name), a, c, b, s)
            .ok()
            .map(|f| Arc::new(f) as Arc<dyn ContinuousPart>)
    }
}

/// `b_i(x) = a sin x_i`, `σ_i(x) = s cos x_i`, one Wiener component.
#[derive(Clone, Debug, PartialEq)]
pub struct SinCos {
    dim: usize,
    a: f64,
    s: f64,
}

impl SinCos {
    pub fn new(dim: usize, a: f64, s: f64) -> Result<Self> {
        if dim == 0 || !a.is_finite() || !s.is_finite() {
            return Err(Error::InvalidArgument("SINCOS needs dim ≥ 1 and finite a, s".into()));
        }
        Ok(Self { dim, a, s })
    }
}

impl ContinuousPart for SinCos {
    fn name(&self) -> &str {
        "SINCOS"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn brownian_count(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.a * math::sin(*xi);
        }
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut Mat) {
        for (i, xi) in x.iter().enumerate() {
            out[(i, 0)] = self.s * math::cos(*xi);
        }
    }

    fn drift_grad(&self, _t: f64, x: &[f64], out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        for (i, xi) in x.iter().enumerate() {
            out[(i, i)] = self.a * math::cos(*xi);
        }
        Ok(())
    }

    fn diffusion_grad(&self, _t: f64, x: &[f64], _rho: usize, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        for (i, xi) in x.iter().enumerate() {
            out[(i, i)] = -self.s * math::sin(*xi);
        }
        Ok(())
    }

    fn drift_second(&self, _t: f64, x: &[f64], k: usize, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        out[(k, k)] = -self.a * math::sin(x[k]);
        Ok(())
    }

    fn diffusion_second(&self, _t: f64, x: &[f64], _rho: usize, k: usize, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        out[(k, k)] = -self.s * math::cos(x[k]);
        Ok(())
    }
}

/// `(b + shift, scale · σ)` around any continuous part.
#[derive(Debug)]
pub struct Perturbed {
    inner: Arc<dyn ContinuousPart>,
    shift: f64,
    scale: f64,
    name: String,
}

impl Perturbed {
    /// Prefers a same-family representation so closed-form schemes remain
    /// available.
    pub fn build(inner: Arc<dyn ContinuousPart>, shift: f64, scale: f64) -> Arc<dyn ContinuousPart> {
        if let Some(p) = inner.perturbed_same_family(shift, scale) {
            return p;
        }
        Self::generic(inner, shift, scale)
    }

    /// Always wraps, bypassing any same-family representation.
    pub fn generic(inner: Arc<dyn ContinuousPart>, shift: f64, scale: f64) -> Arc<dyn ContinuousPart> {
        let name = format!("PERTURBED({})", inner.name());
        Arc::new(Self {
            inner,
            shift,
            scale,
            name,
        })
    }
}

impl ContinuousPart for Perturbed {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn brownian_count(&self) -> usize {
        self.inner.brownian_count()
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.drift(t, x, out);
        out.iter_mut().for_each(|v| *v += self.shift);
    }

    fn diffusion(&self, t: f64, x: &[f64], out: &mut Mat) {
        self.inner.diffusion(t, x, out);
        out.scale(self.scale);
    }

    fn drift_grad(&self, t: f64, x: &[f64], out: &mut Mat) -> Result<()> {
        self.inner.drift_grad(t, x, out)
    }

    fn diffusion_grad(&self, t: f64, x: &[f64], rho: usize, out: &mut Mat) -> Result<()> {
        self.inner.diffusion_grad(t, x, rho, out)?;
        out.scale(self.scale);
        Ok(())
    }

    fn drift_second(&self, t: f64, x: &[f64], k: usize, out: &mut Mat) -> Result<()> {
        self.inner.drift_second(t, x, k, out)
    }

    fn diffusion_second(&self, t: f64, x: &[f64], rho: usize, k: usize, out: &mut Mat) -> Result<()> {
        self.inner.diffusion_second(t, x, rho, k, out)?;
        out.scale(self.scale);
        Ok(())
    }
}

/// `(-b̂, -σ)`: the field whose flow inverts to the solution of the
/// backward-signed SPDE.
#[derive(Debug)]
pub struct CorrectedReverse {
    inner: Arc<dyn ContinuousPart>,
    name: String,
}

impl CorrectedReverse {
    pub fn build(inner: Arc<dyn ContinuousPart>) -> Arc<dyn ContinuousPart> {
        if let Some(r) = inner.corrected_reverse_same_family() {
            return r;
        }
        Self::generic(inner)
    }

    /// Always wraps, bypassing any same-family representation.
    pub fn generic(inner: Arc<dyn ContinuousPart>) -> Arc<dyn ContinuousPart> {
        let name = format!("BAR({})", inner.name());
        Arc::new(Self { inner, name })
    }
}

impl ContinuousPart for CorrectedReverse {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn brownian_count(&self) -> usize {
        self.inner.brownian_count()
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        // gradients were validated when the field was assembled
        let bh = hat_drift_of(self.inner.as_ref(), t, x).unwrap_or_else(|_| vec![f64::NAN; x.len()]);
        for (o, v) in out.iter_mut().zip(bh) {
            *o = -v;
        }
    }

    fn diffusion(&self, t: f64, x: &[f64], out: &mut Mat) {
        self.inner.diffusion(t, x, out);
        out.scale(-1.0);
    }

    /// `∇b̂ = ∇b − Σ_ρ (∇σ^ρ ∇σ^ρ + Σ_j σ^{jρ} ∂_j ∇σ^ρ)`, negated.
    fn drift_grad(&self, t: f64, x: &[f64], out: &mut Mat) -> Result<()> {
        let d = self.dim();
        let m = self.brownian_count();
        self.inner.drift_grad(t, x, out)?;
        let mut sigma = Mat::zeros(d, m);
        self.inner.diffusion(t, x, &mut sigma);
        let mut g = Mat::zeros(d, d);
        let mut second = Mat::zeros(d, d);
        for rho in 0..m {
            self.inner.diffusion_grad(t, x, rho, &mut g)?;
            out.add_scaled(&g.mul(&g), -1.0);
            for j in 0..d {
                self.inner.diffusion_second(t, x, rho, j, &mut second)?;
                out.add_scaled(&second, -sigma[(j, rho)]);
            }
        }
        out.scale(-1.0);
        Ok(())
    }

    fn diffusion_grad(&self, t: f64, x: &[f64], rho: usize, out: &mut Mat) -> Result<()> {
        self.inner.diffusion_grad(t, x, rho, out)?;
        out.scale(-1.0);
        Ok(())
    }

    fn diffusion_second(&self, t: f64, x: &[f64], rho: usize, k: usize, out: &mut Mat) -> Result<()> {
        self.inner.diffusion_second(t, x, rho, k, out)?;
        out.scale(-1.0);
        Ok(())
    }
}

/// `H ≡ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoJump {
    dim: usize,
}

impl NoJump {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl JumpPart for NoJump {
    fn name(&self) -> &str {
        "NONE"
    }

    fn is_zero(&self) -> bool {
        true
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn jump(&self, _t: f64, _x: &[f64], _mark: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    fn jump_grad(&self, _t: f64, _x: &[f64], _mark: f64, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn affine_form(&self, _mark: f64, dim: usize) -> Option<(f64, Vec<f64>)> {
        Some((0.0, vec![0.0; dim]))
    }
}

/// `H(x, z) = c x` for every mark.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearJump {
    c: f64,
}

impl LinearJump {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::NonFiniteValue("LINJUMP coefficient"));
        }
        Ok(Self { c })
    }
}

impl JumpPart for LinearJump {
    fn name(&self) -> &str {
        "LINJUMP"
    }

    fn is_zero(&self) -> bool {
        self.c == 0.0
    }

    fn jump(&self, _t: f64, x: &[f64], _mark: f64, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.c * xi;
        }
    }

    fn jump_grad(&self, _t: f64, x: &[f64], _mark: f64, out: &mut Mat) -> Result<()> {
        *out = Mat::scalar(x.len(), self.c);
        Ok(())
    }

    fn affine_form(&self, _mark: f64, dim: usize) -> Option<(f64, Vec<f64>)> {
        Some((self.c, vec![0.0; dim]))
    }
}

/// `H_i(x, z) = a sin x_i` for every mark.
#[derive(Clone, Debug, PartialEq)]
pub struct SineJump {
    a: f64,
}

impl SineJump {
    pub fn new(a: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::NonFiniteValue("SINJUMP coefficient"));
        }
        Ok(Self { a })
    }
}

impl JumpPart for SineJump {
    fn name(&self) -> &str {
        "SINJUMP"
    }

    fn is_zero(&self) -> bool {
        self.a == 0.0
    }

    fn jump(&self, _t: f64, x: &[f64], _mark: f64, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.a * math::sin(*xi);
        }
    }

    fn jump_grad(&self, _t: f64, x: &[f64], _mark: f64, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        for (i, xi) in x.iter().enumerate() {
            out[(i, i)] = self.a * math::cos(*xi);
        }
        Ok(())
    }
}

/// `H(x, z) = z x`: the mark is the relative jump size.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MarkLinearJump;

impl JumpPart for MarkLinearJump {
    fn name(&self) -> &str {
        "MARKLIN"
    }

    fn jump(&self, _t: f64, x: &[f64], mark: f64, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = mark * xi;
        }
    }

    fn jump_grad(&self, _t: f64, x: &[f64], mark: f64, out: &mut Mat) -> Result<()> {
        *out = Mat::scalar(x.len(), mark);
        Ok(())
    }

    fn affine_form(&self, mark: f64, dim: usize) -> Option<(f64, Vec<f64>)> {
        Some((mark, vec![0.0; dim]))
    }
}

/// `H(x, z) = h`, independent of state and mark.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantJump {
    h: Vec<f64>,
}

impl ConstantJump {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() || !math::all_finite(&h) {
            return Err(Error::InvalidArgument("CONSTJUMP needs a finite nonempty vector".into()));
        }
        Ok(Self { h })
    }
}

impl JumpPart for ConstantJump {
    fn name(&self) -> &str {
        "CONSTJUMP"
    }

    fn is_zero(&self) -> bool {
        self.h.iter().all(|v| *v == 0.0)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.h.len())
    }

    fn jump(&self, _t: f64, _x: &[f64], _mark: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.h);
    }

    fn jump_grad(&self, _t: f64, _x: &[f64], _mark: f64, out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn affine_form(&self, _mark: f64, _dim: usize) -> Option<(f64, Vec<f64>)> {
        Some((0.0, self.h.clone()))
    }
}
