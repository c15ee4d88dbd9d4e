//! Worked example: a free particle in one dimension with the Gaussian
//! interaction kernel `V(x − y) = V0 exp(−(x − y)²/2γ²)`.
//!
//! The variational system reduces to `Ḃ = (ϰ̃V0/γ²)C`, `Ċ = B/m` with
//! `C(0) = 1`, `B(0) = m b`, solved in closed form. For `ϰ̃V0 < 0` the packet
//! breathes with frequency `Ω = √(ϰ̃|V0|/(mγ²))`; for `ϰ̃V0 > 0` it spreads
//! exponentially.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::model::{GaussKernelParams, HartreeModel, ModelError, PhasePoint};
use crate::moments::{init_from_wavefunction, propagate_order2, MomentsError};
use crate::ode::Tolerances;
use crate::oracle::{evolve_to_times, fidelity, GridSpec, GridWaveFunction, OracleError, SplitStepConfig};
use crate::quad::{cumulative, linspace};
use crate::states::{action_series, project_onto_fock, state_eval_1d, state_grid, CoherentState, StatesError};
use crate::variations::{integrate_variations, CMat, VariationsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Variations(#[from] VariationsError),
    #[error(transparent)]
    States(#[from] StatesError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("Fock projection misses mass {0:e}")]
    Truncation(f64),
}

/// One packet of the worked example: model parameters, `ħ`, the germ
/// parameter `b` (`B(0) = m b`, `C(0) = 1`), the initial center and the Fock
/// coefficients. The state is normalized, so `ϰ̃ = ϰ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussExperiment {
    pub params: GaussKernelParams,
    pub hbar: f64,
    pub b: Complex64,
    pub p0: f64,
    pub x0: f64,
    pub c: Vec<Complex64>,
}

impl GaussExperiment {
    pub fn new(
        params: GaussKernelParams,
        hbar: f64,
        b: Complex64,
        p0: f64,
        x0: f64,
        c: Vec<Complex64>,
    ) -> Result<Self, GaussError> {
        params.validate()?;
        if !(hbar > 0.0 && hbar < 1.0) {
            return Err(GaussError::Invalid(format!("hbar must lie in (0, 1), got {hbar}")));
        }
        if !(b.im > 0.0) {
            return Err(GaussError::Invalid("Im b must be positive".into()));
        }
        let norm: f64 = c.iter().map(|v| v.norm_sqr()).sum();
        if c.is_empty() || (norm - 1.0).abs() > 1e-10 {
            return Err(GaussError::Invalid(format!("Fock coefficients must be normalized (|c|² = {norm})")));
        }
        Ok(Self { params, hbar, b, p0, x0, c })
    }

    /// `ϰ̃V0`.
    pub fn coupling(&self) -> f64 {
        self.params.kappa * self.params.v0
    }

    pub fn omega(&self) -> f64 {
        (self.coupling().abs() / (self.params.m * self.params.gamma * self.params.gamma)).sqrt()
    }

    pub fn model(&self) -> Result<HartreeModel, GaussError> {
        Ok(HartreeModel::gauss_1d(&self.params)?)
    }

    pub fn with_coefficients(&self, c: Vec<Complex64>) -> Result<Self, GaussError> {
        Self::new(self.params, self.hbar, self.b, self.p0, self.x0, c)
    }
}

/// Closed-form `C(t)`: `ch Ωt + (b/Ω) sh Ωt` for `ϰ̃V0 > 0`,
/// `cos Ωt + (b/Ω) sin Ωt` for `ϰ̃V0 < 0` and `1 + bt` without interaction.
pub fn closed_form_c(exp: &GaussExperiment, t: f64) -> Complex64 {
    let (k, w) = (exp.coupling(), exp.omega());
    if k == 0.0 {
        Complex64::new(1.0, 0.0) + exp.b * t
    } else if k > 0.0 {
        Complex64::from((w * t).cosh()) + exp.b / w * (w * t).sinh()
    } else {
        Complex64::from((w * t).cos()) + exp.b / w * (w * t).sin()
    }
}

/// `B(t) = m Ċ(t)`.
pub fn closed_form_b(exp: &GaussExperiment, t: f64) -> Complex64 {
    let (k, w, m) = (exp.coupling(), exp.omega(), exp.params.m);
    if k == 0.0 {
        exp.b * m
    } else if k > 0.0 {
        (Complex64::from(w * (w * t).sinh()) + exp.b * (w * t).cosh()) * m
    } else {
        (Complex64::from(-w * (w * t).sin()) + exp.b * (w * t).cos()) * m
    }
}

/// Coordinate variance of the vacuum, `|C(t)|²ħ/(2m Im b)`.
pub fn sigma_xx(exp: &GaussExperiment, t: f64) -> f64 {
    closed_form_c(exp, t).norm_sqr() * exp.hbar / (2.0 * exp.params.m * exp.b.im)
}

/// Samples per unit of `max(Ω, 1)·t` used by the running integrals.
const SAMPLES_PER_UNIT: f64 = 400.0;

fn fine_grid(exp: &GaussExperiment, t: f64) -> Vec<f64> {
    if t == 0.0 {
        return vec![0.0];
    }
    let n = ((t.abs() * exp.omega().max(1.0) * SAMPLES_PER_UNIT).ceil() as usize).max(64);
    linspace(0.0, t, n + 1)
}

/// Continuous `ln C(t)`, following the argument along a fine grid.
pub fn log_c(exp: &GaussExperiment, t: f64) -> Complex64 {
    let mut arg = 0.0;
    let mut prev = 0.0;
    for s in fine_grid(exp, t) {
        let a = closed_form_c(exp, s).arg();
        let mut d = a - prev;
        d -= (d / std::f64::consts::TAU).round() * std::f64::consts::TAU;
        arg += d;
        prev = a;
    }
    Complex64::new(closed_form_c(exp, t).norm().ln(), arg)
}

/// Functionals of the Fock coefficients that enter the corrected center and
/// the global phase. Both are complex in general; physical runs use real
/// coefficient pairings where the imaginary parts vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPair {
    pub theta1: Complex64,
    pub theta2: Complex64,
}

/// `Θ₁ = ϰ̃V0/(mγ² Im b) Σ (½c*_{n+1} + n c*_{n−1}) c_n` and
/// `Θ₂ = ϰ̃V0/(2m Im b) Σ [¼c*_{n+2} + (n+½)c*_n + (n²−n)c*_{n−2}] c_n`.
pub fn theta_coefficients(exp: &GaussExperiment) -> ThetaPair {
    let c = &exp.c;
    let get = |k: isize| -> Complex64 {
        if k < 0 {
            Complex64::default()
        } else {
            c.get(k as usize).map(|v| v.conj()).unwrap_or_default()
        }
    };
    let mut s1 = Complex64::default();
    let mut s2 = Complex64::default();
    for (n, cn) in c.iter().enumerate() {
        let (ni, nf) = (n as isize, n as f64);
        s1 += (get(ni + 1) * 0.5 + get(ni - 1) * nf) * cn;
        s2 += (get(ni + 2) * 0.25 + get(ni) * (nf + 0.5) + get(ni - 2) * (nf * nf - nf)) * cn;
    }
    let (m, g, imb) = (exp.params.m, exp.params.gamma, exp.b.im);
    ThetaPair {
        theta1: s1 * (exp.coupling() / (m * g * g * imb)),
        theta2: s2 * (exp.coupling() / (2.0 * m * imb)),
    }
}

/// Center `X(t, ħ) = √ħ(Θ₁/m)∫₀ᵗ∫₀^τ|C(s)|ds dτ + p₀t/m + x₀` and
/// `P = mẊ`.
pub fn corrected_trajectory(exp: &GaussExperiment, theta1: f64, t: f64) -> PhasePoint {
    let ts = fine_grid(exp, t);
    let abs_c: Vec<f64> = ts.iter().map(|&s| closed_form_c(exp, s).norm()).collect();
    let once = cumulative(&ts, &abs_c);
    let twice = cumulative(&ts, &once);
    let k = exp.hbar.sqrt() * theta1;
    let m = exp.params.m;
    let last = ts.len() - 1;
    PhasePoint::new_1d(exp.p0 + k * once[last], exp.x0 + exp.p0 * t / m + k / m * twice[last])
}

/// Global phase of the principal term at `t`, in units of `ħ`:
/// `∫(PẊ − P²/2m)dτ − ϰ̃V0 t + (ħ/γ²)Θ₂∫|C|²dτ`.
fn principal_phase(exp: &GaussExperiment, theta: &ThetaPair, t: f64) -> f64 {
    let ts = fine_grid(exp, t);
    let m = exp.params.m;
    let abs_c: Vec<f64> = ts.iter().map(|&s| closed_form_c(exp, s).norm()).collect();
    let p: Vec<f64> = cumulative(&ts, &abs_c)
        .iter()
        .map(|v| exp.p0 + exp.hbar.sqrt() * theta.theta1.re * v)
        .collect();
    let lagr: Vec<f64> = p.iter().map(|p| p * p / (2.0 * m)).collect();
    let c2: Vec<f64> = ts.iter().map(|&s| closed_form_c(exp, s).norm_sqr()).collect();
    let last = ts.len() - 1;
    let g2 = exp.params.gamma * exp.params.gamma;
    cumulative(&ts, &lagr)[last] - exp.coupling() * t + exp.hbar * theta.theta2.re / g2 * cumulative(&ts, &c2)[last]
}

/// Principal term as a coherent state: the Fock expansion `Σ c_k|k, t⟩`
/// around the corrected center with the closed-form germ, and the global
/// phase folded into the action.
pub fn principal_state(exp: &GaussExperiment, t: f64) -> CoherentState {
    let theta = theta_coefficients(exp);
    let z = corrected_trajectory(exp, theta.theta1.re, t);
    let c = closed_form_c(exp, t);
    let b = closed_form_b(exp, t);
    let one = |v: Complex64| CMat::from_element(1, 1, v);
    CoherentState {
        t,
        hbar: exp.hbar,
        z,
        action: principal_phase(exp, &theta, t),
        phi1: 0.0,
        q: one(b / c),
        b: one(b),
        c: one(c),
        d0: one(Complex64::from(exp.params.m * exp.b.im)),
        log_det_c: log_c(exp, t),
        fock: exp.c.clone(),
    }
}

/// `Ψ⁽⁰⁾(x, t)`.
pub fn principal_term(exp: &GaussExperiment, x: f64, t: f64) -> Complex64 {
    state_eval_1d(&principal_state(exp, t), x)
}

pub fn principal_grid(exp: &GaussExperiment, t: f64, spec: &GridSpec) -> Result<GridWaveFunction, GaussError> {
    Ok(state_grid(&principal_state(exp, t), spec, exp.params.m)?)
}

/// Split-step configuration for the example's interaction.
pub fn oracle_config(exp: &GaussExperiment, dt: f64) -> SplitStepConfig {
    SplitStepConfig {
        dt,
        steps: 0,
        kappa: exp.params.kappa,
        gamma: exp.params.gamma,
        v0: exp.params.v0,
        absorbing_width: 0.0,
        external: Vec::new(),
        record_every: 0,
    }
}

/// Grid holding the packet of `exp` on `[0, t]` (straight center line,
/// largest closed-form spreads on the interval).
pub fn experiment_grid(exp: &GaussExperiment, t: f64) -> Result<GridSpec, GaussError> {
    let k = exp.c.len() as f64;
    let mut sx: f64 = 0.0;
    let mut sp: f64 = 0.0;
    for s in linspace(0.0, t, 201) {
        sx = sx.max(sigma_xx(exp, s));
        sp = sp.max(closed_form_b(exp, s).norm_sqr() * exp.hbar / (2.0 * exp.params.m * exp.b.im));
    }
    // Higher Fock states are wider by a factor 2k + 1 in variance.
    let (sx, sp) = (sx * (2.0 * k + 1.0), sp * (2.0 * k + 1.0));
    let x1 = exp.x0 + exp.p0 * t / exp.params.m;
    Ok(GridSpec::auto(exp.x0.min(x1), exp.x0.max(x1), sx, sp, exp.p0.abs(), exp.hbar, exp.params.gamma)?)
}

/// Settings of the superposition experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionOptions {
    pub kmax: usize,
    pub samples: usize,
    pub dt: f64,
    pub grid: GridSpec,
    pub tol: Tolerances,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionReport {
    pub t: f64,
    pub hbar: f64,
    /// `‖c₁Ψ₁(y₃) + c₂Ψ₂(y₃) − Ψ₃(y₃)‖` on the grid.
    pub linearity_error: f64,
    /// Oracle fidelity of the combination built in the frame of `y₃`.
    pub fidelity_consistent: f64,
    /// Oracle fidelity of the combination of separately framed solutions.
    pub fidelity_naive: f64,
    /// Largest Fock mass lost by the projections.
    pub projection_loss: f64,
}

impl SuperpositionReport {
    pub fn gap(&self) -> f64 {
        self.fidelity_consistent - self.fidelity_naive
    }
}

/// Moment data of `frame_source` define the trajectory and the linear
/// evolution; every packet in `packets` is projected onto the Fock basis of
/// that frame at `t = 0` and carried to `t` with the moving basis.
fn evolve_in_frame(
    exp: &GaussExperiment,
    frame_source: &GridWaveFunction,
    packets: &[&GridWaveFunction],
    t: f64,
    opts: &SuperpositionOptions,
) -> Result<(Vec<GridWaveFunction>, f64), GaussError> {
    let model = exp.model()?;
    let y = init_from_wavefunction(frame_source, 2, exp.params.kappa)?;
    let ts = linspace(0.0, t, opts.samples);
    let traj = propagate_order2(&model, &y, t, &ts, &opts.tol, false)?;
    let b0 = CMat::from_element(1, 1, exp.b * exp.params.m);
    let c0 = CMat::from_element(1, 1, Complex64::from(1.0));
    let run = integrate_variations(&model, &traj, &b0, &c0, t, &ts, &opts.tol)?;
    let actions = action_series(&model, &traj)?;
    let last = run.frames.len() - 1;
    let start = CoherentState::from_frame(&run.frames[0], &run.d0_initial, exp.hbar, actions[0])?;
    let end = CoherentState::from_frame(&run.frames[last], &run.d0_initial, exp.hbar, actions[last])?;
    let mut loss: f64 = 0.0;
    let mut out = Vec::with_capacity(packets.len());
    for psi in packets {
        let coeffs = project_onto_fock(&start, psi, opts.kmax)?;
        let kept: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        loss = loss.max((psi.norm_sq() - kept).abs());
        out.push(state_grid(&end.clone().with_fock(coeffs), &opts.grid, exp.params.m)?);
    }
    Ok((out, loss))
}

/// Compares the frame-consistent combination `c₁Ψ₁(y₃) + c₂Ψ₂(y₃)` and the
/// naive combination `c₁Ψ₁(y₁) + c₂Ψ₂(y₂)` with the split-step solution from
/// `Ψ₀₃ ∝ c₁Ψ₀₁ + c₂Ψ₀₂`. Here `y_k` are the moment data of `Ψ₀ₖ`.
pub fn superposition_experiment(
    exp1: &GaussExperiment,
    exp2: &GaussExperiment,
    c1: Complex64,
    c2: Complex64,
    t: f64,
    opts: &SuperpositionOptions,
) -> Result<SuperpositionReport, GaussError> {
    if exp1.params != exp2.params || exp1.hbar != exp2.hbar {
        return Err(GaussError::Invalid("both packets must share the model and hbar".into()));
    }
    let psi1 = principal_grid(exp1, 0.0, &opts.grid)?;
    let psi2 = principal_grid(exp2, 0.0, &opts.grid)?;
    let raw = psi1.combine(c1, &psi2, c2)?;
    let scale = 1.0 / raw.norm_sq().sqrt();
    let psi3 = raw.scale(Complex64::from(scale));
    let (k1, k2) = (c1 * scale, c2 * scale);

    let exact = evolve_to_times(&psi3, &oracle_config(exp1, opts.dt), &[t], opts.dt)?
        .pop()
        .expect("one output time");

    let (frozen, loss3) = evolve_in_frame(exp1, &psi3, &[&psi1, &psi2, &psi3], t, opts)?;
    let combined = frozen[0].combine(k1, &frozen[1], k2)?;
    let linearity_error = combined.distance(&frozen[2])?;

    let mut loss = loss3;
    let mut naive_parts = Vec::with_capacity(2);
    for psi in [&psi1, &psi2] {
        let (mut v, l) = evolve_in_frame(exp1, psi, &[psi], t, opts)?;
        loss = loss.max(l);
        naive_parts.push(v.pop().expect("one packet"));
    }
    let naive = naive_parts[0].combine(k1, &naive_parts[1], k2)?;
    if loss > 1e-6 {
        return Err(GaussError::Truncation(loss));
    }
    Ok(SuperpositionReport {
        t,
        hbar: exp1.hbar,
        linearity_error,
        fidelity_consistent: fidelity(&combined, &exact)?,
        fidelity_naive: fidelity(&naive, &exact)?,
        projection_loss: loss,
    })
}

/// Second moments `[[σ_pp, σ_px], [σ_px, σ_xx]]` of the vacuum of `exp` at
/// `t = 0`.
pub fn vacuum_moments(exp: &GaussExperiment) -> DMatrix<f64> {
    let (m, b, h) = (exp.params.m, exp.b, exp.hbar);
    let d0 = m * b.im;
    let off = h * m * b.re / (2.0 * d0);
    DMatrix::from_row_slice(2, 2, &[h * m * m * b.norm_sqr() / (2.0 * d0), off, off, h / (2.0 * d0)])
}
