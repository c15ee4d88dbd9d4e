//! Zero-order Green kernel of the linearized equation, its spectral
//! representation over the Fock basis, and the first `√ħ` correction to a
//! packet in one dimension.
//!
//! With `u = y − X(s)`, `Δx = x − X(t)` and the blocks `λ₁…λ₄` of the
//! fundamental matrix `A(t, s)`, the kernel is
//!
//! `G(x,y) = (det 2πiħc)^{−1/2} exp{(i/ħ)[S(t) − S(s) + ⟨P(t),Δx⟩ − ⟨P(s),u⟩
//!   − ½⟨u,λ₁λ₃⁻¹u⟩ + ⟨Δx,λ₃⁻¹u⟩ − ½⟨Δx,λ₃⁻¹λ₄Δx⟩]}`
//!
//! where `c = A_xp = −λ₃ᵀ`. The square root is continued through caustics
//! with a factor `e^{−iπ/2}` per zero crossing of `det c`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{PhasePoint, SymbolModel};
use crate::moments::{Trajectory, TrajectoryState};
use crate::ode::Tolerances;
use crate::oracle::{GridWaveFunction, OracleError};
use crate::quad::{cumulative, linspace};
use crate::states::{action_series, fock_basis_grid, CoherentState, StatesError};
use crate::variations::{
    integrate_matriciant, CMat, Matriciant, VariationalFrame, VariationalRun, VariationsError,
};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreenError {
    #[error(transparent)]
    Variations(#[from] VariationsError),
    #[error(transparent)]
    States(#[from] StatesError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("caustic: |det λ3| = {det:e} at Δt = {dt}")]
    Caustic { det: f64, dt: f64 },
    #[error("kernel needs s < t (got s = {s}, t = {t})")]
    BadWindow { s: f64, t: f64 },
    #[error("composition needs τ − s ≥ 0.1 and matching endpoints")]
    BadComposition,
    #[error("wavefunction reaches the grid edge (edge mass {0:e})")]
    Aliasing(f64),
    #[error("one-dimensional operation on a {0}-dimensional model")]
    NotOneDimensional(usize),
    #[error("Fock tail mass {0:e} above threshold")]
    TruncationTail(f64),
    #[error("trajectory and frame samples differ")]
    SampleMismatch,
}

/// Closed-form zero-order kernel between two sample times of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Order0Kernel {
    pub s: f64,
    pub t: f64,
    pub hbar: f64,
    pub z_s: PhasePoint,
    pub z_t: PhasePoint,
    pub action_s: f64,
    pub action_t: f64,
    pub blocks: Matriciant,
    /// Number of zero crossings of `det c` on `(s, t]`.
    pub maslov: usize,
    prefactor: Complex64,
    l1_l3inv: DMatrix<f64>,
    l3inv: DMatrix<f64>,
    l3inv_l4: DMatrix<f64>,
}

/// Points per unit time used to follow `det c` between the endpoints.
const BRANCH_DENSITY: f64 = 400.0;

impl Order0Kernel {
    /// Builds the kernel from `s` to `t`; both must be sample times of `traj`
    /// (the action is integrated over the samples).
    pub fn new(
        model: &dyn SymbolModel,
        traj: &Trajectory,
        s: f64,
        t: f64,
        tol: &Tolerances,
    ) -> Result<Self, GreenError> {
        if t <= s {
            return Err(GreenError::BadWindow { s, t });
        }
        let actions = action_series(model, traj)?;
        let ts = traj.times();
        let find = |v: f64| {
            ts.iter()
                .position(|&w| (w - v).abs() <= 1e-12 * v.abs().max(1.0))
                .ok_or(GreenError::States(StatesError::NoSampleAt(v)))
        };
        let (is, it) = (find(s)?, find(t)?);
        let npts = (((t - s) * BRANCH_DENSITY).ceil() as usize).max(8);
        let mut grid = linspace(s, t, npts + 1);
        grid.retain(|&v| v > traj.t_start());
        let mat = integrate_matriciant(model, traj, t, &grid, tol)?;
        let i_s = mat.times.iter().position(|&v| (v - s).abs() <= 1e-12 * s.abs().max(1.0)).unwrap_or(0);
        let a_s_inv = mat.fundamental[i_s]
            .clone()
            .try_inverse()
            .expect("fundamental matrix is invertible");
        let n = model.dim();
        let mut maslov = 0;
        let mut prev_sign = 0.0;
        for j in i_s + 1..mat.times.len() {
            let a = &mat.fundamental[j] * &a_s_inv;
            let c = a.view((n, 0), (n, n)).determinant();
            let sign = c.signum();
            if prev_sign != 0.0 && c != 0.0 && sign != prev_sign {
                maslov += 1;
            }
            if c != 0.0 {
                prev_sign = sign;
            }
        }
        let a_ts = mat.fundamental.last().expect("non-empty") * &a_s_inv;
        let blocks = Matriciant::from_fundamental(&a_ts);
        let det3 = blocks.lambda3.determinant();
        // Relative to the scale of the whole fundamental matrix, so that a
        // tiny λ3 next to O(1) blocks counts as singular.
        let scale = a_ts.norm().max(1.0).powi(n as i32);
        if det3.abs() < 1e-8 * scale {
            return Err(GreenError::Caustic { det: det3.abs(), dt: t - s });
        }
        let l3inv = blocks.lambda3.clone().try_inverse().ok_or(GreenError::Caustic { det: det3.abs(), dt: t - s })?;
        let hbar = traj.initial.hbar;
        let det_c = (-blocks.lambda3.transpose()).determinant();
        let modulus = (2.0 * std::f64::consts::PI * hbar).powf(-(n as f64) / 2.0) * det_c.abs().powf(-0.5);
        let phase = -(n as f64) * std::f64::consts::FRAC_PI_4 - maslov as f64 * std::f64::consts::FRAC_PI_2;
        Ok(Self {
            s,
            t,
            hbar,
            z_s: traj.samples[is].z.clone(),
            z_t: traj.samples[it].z.clone(),
            action_s: actions[is],
            action_t: actions[it],
            maslov,
            prefactor: Complex64::from_polar(modulus, phase),
            l1_l3inv: &blocks.lambda1 * &l3inv,
            l3inv_l4: &l3inv * &blocks.lambda4,
            l3inv,
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.z_s.dim()
    }

    /// Real phase (times `ħ`) of the kernel at `(x, y)`.
    fn phase(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let u: Vec<f64> = (0..n).map(|i| y[i] - self.z_s.x[i]).collect();
        let dx: Vec<f64> = (0..n).map(|i| x[i] - self.z_t.x[i]).collect();
        let mut ph = self.action_t - self.action_s;
        for i in 0..n {
            ph += self.z_t.p[i] * dx[i] - self.z_s.p[i] * u[i];
            for j in 0..n {
                ph += -0.5 * u[i] * self.l1_l3inv[(i, j)] * u[j] + dx[i] * self.l3inv[(i, j)] * u[j]
                    - 0.5 * dx[i] * self.l3inv_l4[(i, j)] * dx[j];
            }
        }
        ph
    }
}

/// Kernel value `G(x, y)`.
pub fn kernel_order0(k: &Order0Kernel, x: &[f64], y: &[f64]) -> Complex64 {
    k.prefactor * Complex64::from_polar(1.0, k.phase(x, y) / k.hbar)
}

/// `∫G(x,y)ψ(y)dy` by grid quadrature, on the same grid (1D).
pub fn apply_kernel(k: &Order0Kernel, psi: &GridWaveFunction) -> Result<GridWaveFunction, GreenError> {
    if k.dim() != 1 {
        return Err(GreenError::NotOneDimensional(k.dim()));
    }
    let edge = psi.edge_mass();
    if edge > 1e-10 {
        return Err(GreenError::Aliasing(edge));
    }
    let n = psi.len();
    let inv_h = 1.0 / k.hbar;
    let (a1, l3, a4) = (k.l1_l3inv[(0, 0)], k.l3inv[(0, 0)], k.l3inv_l4[(0, 0)]);
    // Fold the y-only factors into the input and keep the x–y coupling.
    let col: Vec<(f64, Complex64)> = (0..n)
        .map(|j| {
            let u = psi.x(j) - k.z_s.x[0];
            let w = Complex64::from_polar(1.0, (-k.z_s.p[0] * u - 0.5 * a1 * u * u) * inv_h);
            (u, w * psi.samples[j])
        })
        .filter(|(_, v)| v.norm_sqr() > 0.0)
        .collect();
    let pre = k.prefactor * Complex64::from_polar(1.0, (k.action_t - k.action_s) * inv_h) * psi.dx;
    let out: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dx = psi.x(i) - k.z_t.x[0];
            let row = Complex64::from_polar(1.0, (k.z_t.p[0] * dx - 0.5 * a4 * dx * dx) * inv_h);
            let g = dx * l3 * inv_h;
            let acc: Complex64 = col.iter().map(|(u, v)| v * Complex64::from_polar(1.0, g * u)).sum();
            pre * row * acc
        })
        .collect();
    Ok(GridWaveFunction { samples: out, ..psi.clone() })
}

/// `max_ψ ‖G_{t←τ}G_{τ←s}ψ − G_{t←s}ψ‖/‖ψ‖` over a test basis.
pub fn compose_residual(
    first: &Order0Kernel,
    second: &Order0Kernel,
    direct: &Order0Kernel,
    basis: &[GridWaveFunction],
) -> Result<f64, GreenError> {
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    if !same(first.t, second.s) || !same(first.s, direct.s) || !same(second.t, direct.t) || first.t - first.s < 0.1
    {
        return Err(GreenError::BadComposition);
    }
    let mut worst: f64 = 0.0;
    for psi in basis {
        let two = apply_kernel(second, &apply_kernel(first, psi)?)?;
        let one = apply_kernel(direct, psi)?;
        worst = worst.max(two.distance(&one)? / psi.norm_sq().sqrt());
    }
    Ok(worst)
}

/// Truncated spectral sum `Σ_{k≤K} Φ_k(x,t) Φ_k*(y,s)` over the Fock states
/// of one frame at the two times (1D).
pub fn spectral_kernel(
    state_t: &CoherentState,
    state_s: &CoherentState,
    kmax: usize,
    x: f64,
    y: f64,
) -> Result<Complex64, GreenError> {
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..=kmax {
        let a = crate::states::fock_eval_1d(state_t, k, kmax, x)?;
        let b = crate::states::fock_eval_1d(state_s, k, kmax, y)?;
        acc += a * b.conj();
    }
    Ok(acc)
}

/// Action of the truncated spectral sum on a sampled wavefunction:
/// `Σ_{k≤K} ⟨Φ_k(s)|ψ⟩ Φ_k(t)`.
pub fn spectral_apply(
    state_t: &CoherentState,
    state_s: &CoherentState,
    kmax: usize,
    psi: &GridWaveFunction,
) -> Result<GridWaveFunction, GreenError> {
    let spec = psi.spec();
    let at_s = fock_basis_grid(state_s, kmax, &spec, psi.mass)?;
    let at_t = fock_basis_grid(state_t, kmax, &spec, psi.mass)?;
    let mut out = GridWaveFunction { samples: vec![Complex64::new(0.0, 0.0); psi.len()], ..psi.clone() };
    for (bs, bt) in at_s.iter().zip(&at_t) {
        let c = bs.inner(psi)?;
        for (o, v) in out.samples.iter_mut().zip(&bt.samples) {
            *o += c * v;
        }
    }
    Ok(out)
}

/// Cubic part of the Hamiltonian expansion about the trajectory, as a
/// matrix over the Fock states `0..=kmax` of the frame:
/// `W = (1/6)Σ g_ijk Δẑ_iΔẑ_jΔẑ_k − ½Σ_i (Σ_jk g_ijk Δ_jk) Δẑ_i`, with
/// `g = H_zzz + ϰ̃V_zzz` (z-derivatives at `w = z`). The linear term removes
/// the moment-driven drift already carried by the trajectory.
pub fn cubic_operator_matrix(
    model: &dyn SymbolModel,
    state: &TrajectoryState,
    frame: &VariationalFrame,
    d0: f64,
    kmax: usize,
) -> Result<CMat, GreenError> {
    if model.dim() != 1 {
        return Err(GreenError::NotOneDimensional(model.dim()));
    }
    let z = state.z.z();
    let zero = [0usize, 0];
    let g = |i: usize, j: usize, k: usize| {
        let mut mu = [0usize; 2];
        mu[i] += 1;
        mu[j] += 1;
        mu[k] += 1;
        model.h_deriv(&mu, &z, state.t) + state.kappa_eff * model.v_deriv(&mu, &zero, &z, &z, state.t)
    };
    let m = kmax + 4;
    let mut a = CMat::zeros(m, m);
    for k in 1..m {
        a[(k - 1, k)] = Complex64::from((k as f64).sqrt());
    }
    let ad = a.adjoint();
    let s = (state.hbar / (2.0 * d0)).sqrt();
    let (b, c) = (frame.b[(0, 0)], frame.c[(0, 0)]);
    let zp = (&a * b.conj() - &ad * b) * (I * s);
    let zx = (&a * c.conj() - &ad * c) * (I * s);
    let zs = [zp, zx];
    let d2 = state.moments.delta2();
    let mut w = CMat::zeros(m, m);
    for i in 0..2 {
        let mut lin = 0.0;
        for j in 0..2 {
            for k in 0..2 {
                let gijk = g(i, j, k);
                lin += gijk * d2[(j, k)];
                if gijk != 0.0 {
                    w += &zs[i] * &zs[j] * &zs[k] * Complex64::from(gijk / 6.0);
                }
            }
        }
        w -= &zs[i] * Complex64::from(0.5 * lin);
    }
    Ok(w.view((0, 0), (kmax + 1, kmax + 1)).into_owned())
}

/// First correction to a packet with Fock coefficients `c` (constant in the
/// moving basis): `δ_ν(t) = −(i/ħ)∫⟨ν,τ|W(τ)Φ⁽⁰⁾(τ)⟩dτ` at every frame
/// sample. The corrected packet is `Σ (c_ν + δ_ν)|ν,t⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionState {
    pub times: Vec<f64>,
    pub coeffs: Vec<Vec<Complex64>>,
    pub kmax: usize,
}

impl CorrectionState {
    pub fn at(&self, i: usize) -> &[Complex64] {
        &self.coeffs[i]
    }

    /// Corrected coefficients `c + δ` at sample `i`.
    pub fn corrected(&self, c: &[Complex64], i: usize) -> Vec<Complex64> {
        (0..=self.kmax)
            .map(|k| c.get(k).copied().unwrap_or_default() + self.coeffs[i][k])
            .collect()
    }

    /// Mass of the two highest retained entries at the last sample, a proxy
    /// for truncation error.
    pub fn tail_mass(&self) -> f64 {
        let last = self.coeffs.last().expect("non-empty correction");
        last.iter().skip(self.kmax.saturating_sub(1)).map(|c| c.norm_sqr()).sum()
    }
}

pub fn phi1_correction_1d(
    model: &dyn SymbolModel,
    traj: &Trajectory,
    run: &VariationalRun,
    c: &[Complex64],
    kmax: usize,
) -> Result<CorrectionState, GreenError> {
    if model.dim() != 1 {
        return Err(GreenError::NotOneDimensional(model.dim()));
    }
    let d0 = run.d0_initial[(0, 0)].re;
    let hbar = traj.initial.hbar;
    let cv = nalgebra::DVector::from_iterator(
        kmax + 1,
        (0..=kmax).map(|k| c.get(k).copied().unwrap_or_default()),
    );
    let mut rates: Vec<Vec<Complex64>> = Vec::with_capacity(run.frames.len());
    for f in &run.frames {
        let st = traj
            .state_at(model, f.t)
            .map_err(|e| GreenError::Variations(VariationsError::Moments(e)))?;
        let w = cubic_operator_matrix(model, &st, f, d0, kmax)?;
        let r = (w * &cv) * (-I / hbar);
        rates.push(r.iter().copied().collect());
    }
    let ts = run.times();
    let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); kmax + 1]; ts.len()];
    for k in 0..=kmax {
        let series: Vec<Complex64> = rates.iter().map(|r| r[k]).collect();
        for (i, v) in cumulative(&ts, &series).into_iter().enumerate() {
            coeffs[i][k] = v;
        }
    }
    let out = CorrectionState { times: ts, coeffs, kmax };
    let tail = out.tail_mass();
    if tail > 1e-6 {
        return Err(GreenError::TruncationTail(tail));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussKernelParams, HartreeModel};
    use crate::moments::{propagate_order2, MomentSet};
    use crate::oracle::{fidelity, GridSpec};
    use crate::states::{state_grid, vacuum_eval};
    use crate::variations::integrate_variations;
    use std::f64::consts::PI;

    fn tight() -> Tolerances {
        Tolerances::new(1e-12, 1e-12)
    }

    struct Setup {
        traj: Trajectory,
        run: VariationalRun,
    }

    fn setup(model: &HartreeModel, p: f64, x: f64, b: Complex64, hbar: f64, t1: f64, n: usize) -> Setup {
        let m = model.mass();
        let d0 = m * b.im;
        let d2 = DMatrix::from_row_slice(
            2,
            2,
            &[hbar * b.norm_sqr() * m * m / (2.0 * d0), hbar * m * b.re / (2.0 * d0), hbar * m * b.re / (2.0 * d0), hbar / (2.0 * d0)],
        );
        let s = TrajectoryState::new(0.0, PhasePoint::new_1d(p, x), MomentSet::from_delta2(&d2), model.kappa(), hbar)
            .unwrap();
        let ts = linspace(0.0, t1, n);
        let traj = propagate_order2(model, &s, t1, &ts, &tight(), false).unwrap();
        let b0 = CMat::from_element(1, 1, b * m);
        let c0 = CMat::from_element(1, 1, Complex64::from(1.0));
        let run = integrate_variations(model, &traj, &b0, &c0, t1, &ts, &tight()).unwrap();
        Setup { traj, run }
    }

    fn coherent(model: &HartreeModel, s: &Setup, i: usize) -> CoherentState {
        let act = action_series(model, &s.traj).unwrap()[i];
        CoherentState::from_frame(&s.run.frames[i], &s.run.d0_initial, s.traj.initial.hbar, act).unwrap()
    }

    #[test]
    fn free_kernel_matches_closed_form() {
        let model = HartreeModel::free(1, 1.5);
        let hbar = 0.05;
        let s = setup(&model, 0.4, 0.1, Complex64::I, hbar, 1.0, 101);
        let k = Order0Kernel::new(&model, &s.traj, 0.2, 0.9, &tight()).unwrap();
        let dt = 0.7;
        for (x, y) in [(0.0, 0.0), (0.3, -0.2), (1.1, 0.4), (-0.5, 0.9)] {
            let expect = (Complex64::from(1.5) / (2.0 * PI * I * hbar * dt)).sqrt()
                * Complex64::from_polar(1.0, 1.5 * (x - y) * (x - y) / (2.0 * hbar * dt));
            let got = kernel_order0(&k, &[x], &[y]);
            assert!((got - expect).norm() < 1e-6 * expect.norm(), "{got} vs {expect}");
        }
        assert_eq!(k.maslov, 0);
    }

    fn mehler(x: f64, y: f64, t: f64, hbar: f64) -> Complex64 {
        let (sn, cs) = t.sin_cos();
        let pre = (2.0 * PI * I * hbar * sn).powf(-0.5);
        pre * Complex64::from_polar(1.0, ((x * x + y * y) * cs - 2.0 * x * y) / (2.0 * hbar * sn))
    }

    #[test]
    fn harmonic_kernel_matches_mehler_on_a_grid() {
        let model = HartreeModel::harmonic(1, 1.0, 1.0);
        let hbar = 0.05;
        // Any reference trajectory gives the same kernel for a quadratic model.
        let s = setup(&model, 0.3, -0.4, Complex64::new(0.2, 0.9), hbar, PI / 4.0, 101);
        let k = Order0Kernel::new(&model, &s.traj, 0.0, PI / 4.0, &tight()).unwrap();
        let mut worst: f64 = 0.0;
        for x in linspace(-2.0, 2.0, 41) {
            for y in linspace(-2.0, 2.0, 41) {
                let e = mehler(x, y, PI / 4.0, hbar);
                worst = worst.max((kernel_order0(&k, &[x], &[y]) - e).norm());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn short_time_kernel_approaches_the_free_form() {
        // For Δt → 0 the kernel tends to the free propagator with the local
        // mass and the trajectory phases.
        let gp = GaussKernelParams { m: 1.0, gamma: 1.0, v0: -1.0, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&gp).unwrap();
        let hbar = 0.05;
        let s = setup(&model, 0.2, 0.0, Complex64::I, hbar, 0.501, 502);
        let dt = 1e-3;
        let k = Order0Kernel::new(&model, &s.traj, 0.5, 0.5 + dt, &tight()).unwrap();
        let ds = k.action_t - k.action_s;
        let mut worst: f64 = 0.0;
        for (x, y) in [(0.1, 0.1), (0.105, 0.1), (0.1, 0.095)] {
            let u = y - k.z_s.x[0];
            let dx = x - k.z_t.x[0];
            let approx = (1.0 / (2.0 * PI * I * hbar * dt)).sqrt()
                * Complex64::from_polar(
                    1.0,
                    (ds + k.z_t.p[0] * dx - k.z_s.p[0] * u + (dx - u) * (dx - u) / (2.0 * dt)) / hbar,
                );
            let got = kernel_order0(&k, &[x], &[y]);
            worst = worst.max((got - approx).norm() / approx.norm());
        }
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn caustic_is_reported() {
        let model = HartreeModel::harmonic(1, 1.0, 1.0);
        let s = setup(&model, 0.0, 0.0, Complex64::I, 0.05, PI, 3);
        let err = Order0Kernel::new(&model, &s.traj, 0.0, PI, &tight()).unwrap_err();
        assert!(matches!(err, GreenError::Caustic { .. }));
    }

    #[test]
    fn kernel_propagates_fock_states_and_composes() {
        let gp = GaussKernelParams { m: 1.0, gamma: 1.0, v0: -1.0, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&gp).unwrap();
        let hbar = 0.05;
        let s = setup(&model, 0.3, 0.0, Complex64::new(0.2, 1.1), hbar, 1.0, 401);
        let spec = GridSpec { x_min: -4.0, x_max: 4.5, n: 4096 };
        let st0 = coherent(&model, &s, 0);
        let st_half = coherent(&model, &s, 200);
        let st1 = coherent(&model, &s, 400);
        let basis0 = fock_basis_grid(&st0, 3, &spec, 1.0).unwrap();
        let basis1 = fock_basis_grid(&st1, 3, &spec, 1.0).unwrap();
        let k01 = Order0Kernel::new(&model, &s.traj, 0.0, 1.0, &tight()).unwrap();
        for (b0, b1) in basis0.iter().zip(&basis1) {
            let moved = apply_kernel(&k01, b0).unwrap();
            assert!(1.0 - fidelity(&moved, b1).unwrap() < 1e-6);
            assert!((moved.norm_sq() - 1.0).abs() < 1e-6);
            assert!(moved.distance(b1).unwrap() < 1e-5);
        }
        let k0h = Order0Kernel::new(&model, &s.traj, 0.0, 0.5, &tight()).unwrap();
        let kh1 = Order0Kernel::new(&model, &s.traj, 0.5, 1.0, &tight()).unwrap();
        let r = compose_residual(&k0h, &kh1, &k01, &basis0).unwrap();
        assert!(r < 1e-5, "{r}");
        // Linearity of the quadrature.
        let c1 = Complex64::new(0.3, -0.8);
        let c2 = Complex64::new(-1.2, 0.1);
        let mix = basis0[0].combine(c1, &basis0[2], c2).unwrap();
        let lhs = apply_kernel(&k01, &mix).unwrap();
        let rhs = apply_kernel(&k01, &basis0[0]).unwrap().combine(c1, &apply_kernel(&k01, &basis0[2]).unwrap(), c2).unwrap();
        assert!(lhs.distance(&rhs).unwrap() < 1e-12);
        // The spectral sum with a single term is the vacuum product.
        let g0 = spectral_kernel(&st1, &st_half, 0, 0.3, 0.15).unwrap();
        let v = vacuum_eval(&st1, &[0.3]) * vacuum_eval(&st_half, &[0.15]).conj();
        assert!((g0 - v).norm() < 1e-14);
    }

    #[test]
    fn branch_is_continued_through_a_caustic() {
        // Ω = 1: the window (0, 4) crosses det c = 0 at t = π. The
        // spectral sum, built from the frame's own square-root branch,
        // decides the phase.
        let gp = GaussKernelParams { m: 1.0, gamma: 1.0, v0: -1.0, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&gp).unwrap();
        let hbar = 0.05;
        let s = setup(&model, 0.0, 0.0, Complex64::new(0.0, 1.0), hbar, 4.0, 401);
        let k = Order0Kernel::new(&model, &s.traj, 0.0, 4.0, &tight()).unwrap();
        assert_eq!(k.maslov, 1);
        let spec = GridSpec { x_min: -4.0, x_max: 4.0, n: 4096 };
        let st0 = coherent(&model, &s, 0);
        let st1 = coherent(&model, &s, 400);
        let psi = GridWaveFunction::from_fn(&spec, hbar, 1.0, |x| {
            let u = x - 0.1;
            Complex64::from_polar((-(u * u) / (1.6 * hbar)).exp(), 0.2 * x / hbar)
        })
        .unwrap()
        .normalized();
        let via_kernel = apply_kernel(&k, &psi).unwrap();
        let via_sum = spectral_apply(&st1, &st0, 30, &psi).unwrap();
        assert!(via_kernel.distance(&via_sum).unwrap() < 1e-4);
    }

    #[test]
    fn kernel_solves_the_linear_equation() {
        // [−iħ∂_t + Ĥ₀]G = 0 with Ĥ₀ = H(Z) + ϰ̃ΣV Δ + ẊΔp̂ − ṖΔx
        // + ½⟨Δẑ, 𝔥_zz Δẑ⟩, time derivative by a 4th-order stencil and
        // x-derivatives by a 4th-order stencil on the same spacing.
        let gp = GaussKernelParams { m: 1.0, gamma: 1.0, v0: 0.8, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&gp).unwrap();
        let hbar = 0.05;
        let h = 1e-3;
        let t0 = 0.6;
        let mut ts: Vec<f64> = linspace(0.0, t0 - 2.0 * h, 400);
        ts.extend((-1..=2).map(|k| t0 + k as f64 * h));
        let s = setup_times(&model, 0.3, 0.0, hbar, &ts);
        let ks: Vec<Order0Kernel> =
            (-2..=2).map(|k| Order0Kernel::new(&model, &s, ts[60], t0 + k as f64 * h, &tight()).unwrap()).collect();
        let sys = s.system(&model).unwrap();
        let st = s.state_at(&model, t0).unwrap();
        let yv = sys.pack(&st);
        let mut dy = vec![0.0; yv.len()];
        sys.rhs(t0, &yv, &mut dy);
        let (pdot, xdot) = (dy[0], dy[1]);
        let hzz = crate::moments::hessian_eff(&model, &st.z.z(), st.kappa_eff, t0);
        let e0 = -crate::states::action_rate(&model, &sys, &st) + st.z.p[0] * xdot;
        let (p, xc) = (st.z.p[0], st.z.x[0]);
        let y = 0.2;
        for x in [0.25, 0.35, 0.5] {
            let g = |k: usize, xx: f64| kernel_order0(&ks[k], &[xx], &[y]);
            let gt = (g(0, x) - g(1, x) * 8.0 + g(3, x) * 8.0 - g(4, x)) / (12.0 * h);
            let gx = (g(2, x - 2.0 * h) - g(2, x - h) * 8.0 + g(2, x + h) * 8.0 - g(2, x + 2.0 * h)) / (12.0 * h);
            let gxx = (-g(2, x - 2.0 * h) + g(2, x - h) * 16.0 - g(2, x) * 30.0 + g(2, x + h) * 16.0
                - g(2, x + 2.0 * h))
                / (12.0 * h * h);
            let g0 = g(2, x);
            let dxv = x - xc;
            // Δp̂ψ = −iħψ' − Pψ, Δp̂²ψ = −ħ²ψ'' + 2iħPψ' + P²ψ.
            let dp = -I * hbar * gx - g0 * p;
            let dp2 = -hbar * hbar * gxx + 2.0 * I * hbar * p * gx + p * p * g0;
            let sym = 2.0 * dxv * dp - I * hbar * g0;
            let h0 = g0 * e0 + xdot * dp - pdot * dxv * g0
                + 0.5 * (hzz[(0, 0)] * dp2 + hzz[(0, 1)] * sym + hzz[(1, 1)] * dxv * dxv * g0);
            let res = -I * hbar * gt + h0;
            let scale = g0.norm();
            assert!(res.norm() / scale < 1e-3, "x={x}: {}", res.norm() / scale);
        }
    }

    fn setup_times(model: &HartreeModel, p: f64, x: f64, hbar: f64, ts: &[f64]) -> Trajectory {
        let d2 = DMatrix::from_row_slice(2, 2, &[hbar / 2.0, 0.0, 0.0, hbar / 2.0]);
        let s = TrajectoryState::new(0.0, PhasePoint::new_1d(p, x), MomentSet::from_delta2(&d2), model.kappa(), hbar)
            .unwrap();
        propagate_order2(model, &s, *ts.last().unwrap(), ts, &tight(), false).unwrap()
    }

    #[test]
    fn cubic_operator_vanishes_for_quadratic_models_and_lifts_the_vacuum_to_three() {
        let model = HartreeModel::harmonic(1, 1.0, 1.0);
        let s = setup(&model, 0.2, 0.1, Complex64::I, 0.01, 1.0, 41);
        let corr = phi1_correction_1d(&model, &s.traj, &s.run, &[Complex64::from(1.0)], 8).unwrap();
        assert!(corr.coeffs.iter().flatten().all(|c| c.norm() == 0.0));

        let model = HartreeModel::anharmonic_1d(1.0, 1.0, 0.6);
        let s = setup(&model, 0.2, 0.1, Complex64::new(0.1, 1.0), 0.01, 1.0, 201);
        let corr = phi1_correction_1d(&model, &s.traj, &s.run, &[Complex64::from(1.0)], 10).unwrap();
        let last = corr.at(corr.times.len() - 1);
        // The vacuum only couples to |3⟩: the |1⟩ component of the cubic
        // term is exactly the drift already carried by the trajectory.
        for (k, c) in last.iter().enumerate() {
            if k != 3 {
                assert!(c.norm() < 1e-12, "k={k}: {c}");
            }
        }
        assert!(last[3].norm() > 1e-6);
    }

    #[test]
    fn correction_improves_the_anharmonic_packet() {
        // Linear Schrödinger equation with a cubic term: the corrected packet
        // is closer to the split-step solution than the bare one.
        use crate::oracle::{evolve_to_times, SplitStepConfig};
        let eps = 0.6;
        let model = HartreeModel::anharmonic_1d(1.0, 1.0, eps);
        let hbar = 0.01;
        let t1 = 1.5;
        let s = setup(&model, 0.0, 0.3, Complex64::I, hbar, t1, 601);
        let spec = GridSpec { x_min: -3.0, x_max: 3.0, n: 4096 };
        let psi0 = state_grid(&coherent(&model, &s, 0), &spec, 1.0).unwrap();
        let cfg = SplitStepConfig {
            dt: 5e-4,
            steps: 3000,
            kappa: 0.0,
            gamma: 1.0,
            v0: 0.0,
            absorbing_width: 0.0,
            external: vec![0.0, 0.0, 0.5, eps / 6.0],
            record_every: 0,
        };
        let exact = evolve_to_times(&psi0, &cfg, &[t1], 5e-4).unwrap().pop().unwrap();
        let corr = phi1_correction_1d(&model, &s.traj, &s.run, &[Complex64::from(1.0)], 12).unwrap();
        let last = coherent(&model, &s, 600);
        let bare = state_grid(&last, &spec, 1.0).unwrap();
        let fixed = state_grid(&last.clone().with_fock(corr.corrected(&[Complex64::from(1.0)], 600)), &spec, 1.0)
            .unwrap();
        let e0 = 1.0 - fidelity(&bare, &exact).unwrap();
        let e1 = 1.0 - fidelity(&fixed, &exact).unwrap();
        assert!(e1 < 0.2 * e0, "bare {e0:e}, corrected {e1:e}");
    }
}
