//! Coefficient fields `(b, σ, H)` of a jump SDE, the mark measure of its
//! Poisson noise, and derived coefficients.
//!
//! A [`CoefficientField`] pairs a [`ContinuousPart`] (drift and the `m`
//! diffusion columns) with a [`JumpPart`] and the finite [`MarkMeasure`] the
//! jumps are drawn from. Fields are immutable and cheap to clone.

mod assumptions;
mod families;

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use assumptions::{check_assumptions, AssumptionGrid, AssumptionRecord, AssumptionReport};
pub use families::{
    Affine, ConstantJump, CorrectedReverse, LinearJump, MarkLinearJump, NoJump, Perturbed, SinCos,
    SineJump,
};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;

/// Affine map `y = m x + v`; the step map of exactly solvable families.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub m: Mat,
    pub v: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.m.mul_vec_into(x, out);
        for (o, v) in out.iter_mut().zip(&self.v) {
            *o += v;
        }
    }
}

/// Drift correction `x ↦ scale·x + offset` subtracted from the drift. This is
/// the compensator `Σ λ_k H(x, z_k)` when every jump is affine in `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearShift {
    pub scale: f64,
    pub offset: Vec<f64>,
}

impl LinearShift {
    pub fn zero(dim: usize) -> Self {
        Self {
            scale: 0.0,
            offset: vec![0.0; dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0 && self.offset.iter().all(|v| *v == 0.0)
    }
}

/// Drift and diffusion of the continuous part of the SDE.
///
/// Gradient conventions: `drift_grad` fills `(∂_j b^i)_{ij}`;
/// `diffusion_grad(rho)` fills `(∂_j σ^{iρ})_{ij}`; the second-derivative
/// hooks fill `∂_k` of those matrices.
pub trait ContinuousPart: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn brownian_count(&self) -> usize;
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// `d × m` matrix whose columns are `σ^{·ρ}`.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut Mat);

    fn drift_grad(&self, _t: f64, _x: &[f64], _out: &mut Mat) -> Result<()> {
        Err(Error::MissingDerivative("drift gradient"))
    }

    fn diffusion_grad(&self, _t: f64, _x: &[f64], _rho: usize, _out: &mut Mat) -> Result<()> {
        Err(Error::MissingDerivative("diffusion gradient"))
    }

    fn drift_second(&self, _t: f64, _x: &[f64], _k: usize, _out: &mut Mat) -> Result<()> {
        Err(Error::MissingDerivative("drift second derivatives"))
    }

    fn diffusion_second(
        &self,
        _t: f64,
        _x: &[f64],
        _rho: usize,
        _k: usize,
        _out: &mut Mat,
    ) -> Result<()> {
        Err(Error::MissingDerivative("diffusion second derivatives"))
    }

    /// Closed-form flow over `[t, t + dt]` given the Brownian increment, with
    /// `shift` subtracted from the drift. `None` if the family has no
    /// closed form for this configuration.
    fn exact_step(&self, _t: f64, _dt: f64, _dw: &[f64], _shift: &LinearShift) -> Option<AffineMap> {
        None
    }

    /// Same-family representation of `(b + shift·1, scale·σ)`, if available.
    fn perturbed_same_family(&self, _drift_shift: f64, _diffusion_scale: f64) -> Option<Arc<dyn ContinuousPart>> {
        None
    }

    /// Same-family representation of `(-b̂, -σ)`, if available.
    fn corrected_reverse_same_family(&self) -> Option<Arc<dyn ContinuousPart>> {
        None
    }
}

/// Jump amplitude `H(t, x, z)`.
pub trait JumpPart: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// `true` if `H ≡ 0`.
    fn is_zero(&self) -> bool {
        false
    }

    /// Fixed state dimension, if the family has one.
    fn dim(&self) -> Option<usize> {
        None
    }

    fn jump(&self, t: f64, x: &[f64], mark: f64, out: &mut [f64]);

    fn jump_grad(&self, _t: f64, _x: &[f64], _mark: f64, _out: &mut Mat) -> Result<()> {
        Err(Error::MissingDerivative("jump gradient"))
    }

    /// `(α, h0)` with `H(x, z) = α x + h0`, if the jump is affine in `x`.
    fn affine_form(&self, _mark: f64, _dim: usize) -> Option<(f64, Vec<f64>)> {
        None
    }
}

/// One atom `λ δ_z` of the mark measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub mark: f64,
    pub rate: f64,
}

/// Finite discrete intensity measure `π = Σ λ_k δ_{z_k}`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MarkMeasure {
    atoms: Vec<Atom>,
    total_rate: f64,
}

impl MarkMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !(a.rate > 0.0) || !a.rate.is_finite() || !a.mark.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "atom ({}, {}) needs a finite mark and a finite positive rate",
                    a.mark, a.rate
                )));
            }
        }
        let total_rate = atoms.iter().map(|a| a.rate).sum();
        Ok(Self { atoms, total_rate })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom_index(&self, mark: f64) -> Option<usize> {
        self.atoms.iter().position(|a| a.mark == mark)
    }
}

/// Constants `β, N₀, η, N_κ` of the regularity assumptions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularity {
    pub beta: f64,
    pub n0: f64,
    pub eta: f64,
    pub n_kappa: f64,
}

impl Default for Regularity {
    fn default() -> Self {
        Self {
            beta: 2.0,
            n0: 1.0,
            eta: 0.5,
            n_kappa: 10.0,
        }
    }
}

impl Regularity {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta > 1.0
            && self.beta <= 3.0
            && self.n0 > 0.0
            && self.eta > 0.0
            && self.eta < 1.0
            && self.n_kappa > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "regularity needs beta in (1, 3], n0 > 0, eta in (0, 1), n_kappa > 0; got {self:?}"
            )))
        }
    }
}

/// Coefficients at one `(t, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub b: Vec<f64>,
    pub sigma: Mat,
    pub grad_b: Mat,
    pub grad_sigma: Vec<Mat>,
}

/// Jump amplitude and its gradient at one `(t, x, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvaluation {
    pub h: Vec<f64>,
    pub grad_h: Mat,
}

/// The coefficient triple `(b, σ, H)` with its mark measure.
#[derive(Clone)]
pub struct CoefficientField {
    continuous: Arc<dyn ContinuousPart>,
    jump: Arc<dyn JumpPart>,
    measure: MarkMeasure,
    regularity: Regularity,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("continuous", &self.continuous.name())
            .field("jump", &self.jump.name())
            .field("measure", &self.measure)
            .field("regularity", &self.regularity)
            .finish()
    }
}

impl CoefficientField {
    pub fn new(
        continuous: Arc<dyn ContinuousPart>,
        jump: Arc<dyn JumpPart>,
        measure: MarkMeasure,
        regularity: Regularity,
    ) -> Result<Self> {
        regularity.validate()?;
        if continuous.dim() == 0 || continuous.brownian_count() == 0 {
            return Err(Error::InvalidArgument("dim and brownian_count must be positive".into()));
        }
        if let Some(jd) = jump.dim() {
            if jd != continuous.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "jump part has dimension {jd}, continuous part {}",
                    continuous.dim()
                )));
            }
        }
        Ok(Self {
            continuous,
            jump,
            measure,
            regularity,
        })
    }

    /// A jump-free field with default regularity constants.
    pub fn continuous_only(continuous: Arc<dyn ContinuousPart>) -> Self {
        let d = continuous.dim();
        Self::new(continuous, Arc::new(NoJump::new(d)), MarkMeasure::empty(), Regularity::default())
            .expect("default regularity is valid")
    }

    pub fn with_regularity(mut self, regularity: Regularity) -> Result<Self> {
        regularity.validate()?;
        self.regularity = regularity;
        Ok(self)
    }

    pub fn with_continuous(&self, continuous: Arc<dyn ContinuousPart>) -> Result<Self> {
        Self::new(continuous, self.jump.clone(), self.measure.clone(), self.regularity)
    }

    pub fn dim(&self) -> usize {
        self.continuous.dim()
    }

    pub fn brownian_count(&self) -> usize {
        self.continuous.brownian_count()
    }

    pub fn continuous(&self) -> &Arc<dyn ContinuousPart> {
        &self.continuous
    }

    pub fn jump(&self) -> &Arc<dyn JumpPart> {
        &self.jump
    }

    pub fn measure(&self) -> &MarkMeasure {
        &self.measure
    }

    pub fn regularity(&self) -> &Regularity {
        &self.regularity
    }

    /// `true` if jumps can change the state.
    pub fn has_jumps(&self) -> bool {
        !self.jump.is_zero() && !self.measure.is_empty()
    }

    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<Evaluation> {
        self.check_point(x)?;
        let d = self.dim();
        let m = self.brownian_count();
        let mut b = vec![0.0; d];
        let mut sigma = Mat::zeros(d, m);
        let mut grad_b = Mat::zeros(d, d);
        self.continuous.drift(t, x, &mut b);
        self.continuous.diffusion(t, x, &mut sigma);
        self.continuous.drift_grad(t, x, &mut grad_b)?;
        let mut grad_sigma = Vec::with_capacity(m);
        for rho in 0..m {
            let mut g = Mat::zeros(d, d);
            self.continuous.diffusion_grad(t, x, rho, &mut g)?;
            grad_sigma.push(g);
        }
        let finite = math::all_finite(&b)
            && sigma.is_finite()
            && grad_b.is_finite()
            && grad_sigma.iter().all(Mat::is_finite);
        if !finite {
            return Err(Error::NonFiniteValue("coefficient evaluation"));
        }
        Ok(Evaluation {
            b,
            sigma,
            grad_b,
            grad_sigma,
        })
    }

    pub fn eval_jump(&self, t: f64, x: &[f64], mark: f64) -> Result<JumpEvaluation> {
        self.check_point(x)?;
        if self.measure.atom_index(mark).is_none() {
            return Err(Error::UnknownMark(mark));
        }
        let d = self.dim();
        let mut h = vec![0.0; d];
        let mut grad_h = Mat::zeros(d, d);
        self.jump.jump(t, x, mark, &mut h);
        self.jump.jump_grad(t, x, mark, &mut grad_h)?;
        if !math::all_finite(&h) || !grad_h.is_finite() {
            return Err(Error::NonFiniteValue("jump evaluation"));
        }
        Ok(JumpEvaluation { h, grad_h })
    }

    /// Corrected drift `b̂^i = b^i − Σ_{ρ,j} σ^{jρ} ∂_j σ^{iρ}`.
    pub fn hat_drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        hat_drift_of(self.continuous.as_ref(), t, x)
    }

    /// `Σ_k λ_k H(t, x, z_k)`.
    pub fn compensator_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.compensator_into(t, x, &mut out);
        out
    }

    pub(crate) fn compensator_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.jump.is_zero() {
            return;
        }
        let mut h = vec![0.0; x.len()];
        for atom in self.measure.atoms() {
            self.jump.jump(t, x, atom.mark, &mut h);
            for (o, v) in out.iter_mut().zip(&h) {
                *o += atom.rate * v;
            }
        }
    }

    /// `Σ_k λ_k ∇H(t, x, z_k)`.
    pub(crate) fn compensator_grad_into(&self, t: f64, x: &[f64], out: &mut Mat) -> Result<()> {
        out.fill(0.0);
        if self.jump.is_zero() {
            return Ok(());
        }
        let d = self.dim();
        let mut g = Mat::zeros(d, d);
        for atom in self.measure.atoms() {
            self.jump.jump_grad(t, x, atom.mark, &mut g)?;
            out.add_scaled(&g, atom.rate);
        }
        Ok(())
    }

    /// The compensator as a [`LinearShift`] when every atom's jump is affine.
    pub fn compensator_shift(&self) -> Option<LinearShift> {
        let d = self.dim();
        let mut shift = LinearShift::zero(d);
        if self.jump.is_zero() {
            return Some(shift);
        }
        for atom in self.measure.atoms() {
            let (alpha, h0) = self.jump.affine_form(atom.mark, d)?;
            shift.scale += atom.rate * alpha;
            for (o, v) in shift.offset.iter_mut().zip(&h0) {
                *o += atom.rate * v;
            }
        }
        Some(shift)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} components, field dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        if !math::all_finite(x) {
            return Err(Error::NonFiniteValue("input point"));
        }
        Ok(())
    }
}

pub(crate) fn hat_drift_of(part: &dyn ContinuousPart, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = part.dim();
    let m = part.brownian_count();
    let mut out = vec![0.0; d];
    part.drift(t, x, &mut out);
    let mut sigma = Mat::zeros(d, m);
    part.diffusion(t, x, &mut sigma);
    let mut g = Mat::zeros(d, d);
    for rho in 0..m {
        part.diffusion_grad(t, x, rho, &mut g)?;
        for i in 0..d {
            let mut corr = 0.0;
            for j in 0..d {
                corr += sigma[(j, rho)] * g[(i, j)];
            }
            out[i] -= corr;
        }
    }
    if !math::all_finite(&out) {
        return Err(Error::NonFiniteValue("corrected drift"));
    }
    Ok(out)
}
