//! Semiclassical phase, the Gaussian vacuum built on a variational frame and
//! the one-dimensional Fock ladder over it.
//!
//! The vacuum is
//! `N_ħ/√det C · exp{(i/ħ)[S + ⟨P,Δx⟩ + ½⟨Δx,QΔx⟩]}` with
//! `N_ħ = [(πħ)⁻ⁿ det D₀]^{1/4}`. In 1D the annihilation operator is
//! `â = (CΔp̂ − BΔx)/√(2ħD₀)` and
//! `|k⟩ = i^k e^{−ik arg C} h_k(ξ) |0⟩`, `ξ = Δx√D₀/(|C|√ħ)`, where `h_k` are
//! the normalized Hermite polynomials `H_k/√(2^k k!)`.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{PhasePoint, SymbolModel};
use crate::moments::{MomentSystem, MomentsError, Trajectory, TrajectoryState};
use crate::oracle::{GridSpec, GridWaveFunction, OracleError};
use crate::quad::cumulative;
use crate::variations::{CMat, VariationalFrame, VariationalRun, VariationsError};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatesError {
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Variations(#[from] VariationsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("no sample at t = {0}")]
    NoSampleAt(f64),
    #[error("need at least two samples")]
    InsufficientSamples,
    #[error("Fock states are implemented in one dimension only")]
    NotOneDimensional,
    #[error("Fock index {k} exceeds the configured truncation {max}")]
    FockIndex { k: usize, max: usize },
    #[error("Im Q is not positive definite")]
    ImQNotPositive,
    #[error("C is singular")]
    SingularC,
}

/// Integrand of the action:
/// `⟨P,Ẋ⟩ − H(Z) − ϰ̃ Σ_{|α|≤N} V_{0α}(Z,Z) Δ_α/α!`.
pub fn action_rate(model: &dyn SymbolModel, sys: &MomentSystem, s: &TrajectoryState) -> f64 {
    let n = model.dim();
    let y = sys.pack(s);
    let mut dy = vec![0.0; y.len()];
    sys.rhs(s.t, &y, &mut dy);
    let z = s.z.z();
    let pxdot: f64 = (0..n).map(|i| z[i] * dy[n + i]).sum();
    let zero = vec![0; 2 * n];
    let mut vsum = model.v(&z, &z, s.t);
    for (alpha, val) in s.moments.indices().iter().zip(s.moments.values()) {
        if *val != 0.0 {
            vsum += model.v_deriv(&zero, &alpha.0, &z, &z, s.t) / alpha.factorial() * val;
        }
    }
    pxdot - model.h(&z, s.t) - s.kappa_eff * vsum
}

/// `S` at every sample of the trajectory, by fourth-order quadrature of
/// [`action_rate`] over the samples.
pub fn action_series(model: &dyn SymbolModel, traj: &Trajectory) -> Result<Vec<f64>, StatesError> {
    if traj.samples.len() < 2 {
        return Err(StatesError::InsufficientSamples);
    }
    let sys = traj.system(model)?;
    let rates: Vec<f64> = traj.samples.iter().map(|s| action_rate(model, &sys, s)).collect();
    Ok(cumulative(&traj.times(), &rates))
}

fn sample_index(ts: &[f64], t: f64) -> Result<usize, StatesError> {
    ts.iter()
        .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
        .ok_or(StatesError::NoSampleAt(t))
}

/// `S(t)`, with `t` one of the trajectory's sample times.
pub fn action_phase(model: &dyn SymbolModel, traj: &Trajectory, t: f64) -> Result<f64, StatesError> {
    let i = sample_index(&traj.times(), t)?;
    Ok(action_series(model, traj)?[i])
}

/// `φ₁ = ½ Im ∫ Sp[𝔥_pp Q + 𝔥_px] dt` at every frame sample. By the
/// Liouville relation this equals `½ arg(det C(t)/det C(t₀))` on the
/// tracked branch, so `1/√det C = |det C|^{−1/2} e^{−iφ₁}` when
/// `det C(t₀) = 1`.
pub fn phi1_series(run: &VariationalRun) -> Result<Vec<f64>, StatesError> {
    if run.frames.len() < 2 {
        return Err(StatesError::InsufficientSamples);
    }
    let mut vals = Vec::with_capacity(run.frames.len());
    for f in &run.frames {
        let q = f.q().ok_or(StatesError::SingularC)?;
        let (hpp, hpx, _, _) = f.blocks();
        vals.push((hpp * q + hpx).trace().im);
    }
    Ok(cumulative(&run.times(), &vals).into_iter().map(|v| 0.5 * v).collect())
}

pub fn phi1_phase(run: &VariationalRun, t: f64) -> Result<f64, StatesError> {
    let i = sample_index(&run.times(), t)?;
    Ok(phi1_series(run)?[i])
}

/// A Gaussian packet on a frame at one time, optionally with Fock
/// coefficients over its ladder (1D).
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentState {
    pub t: f64,
    pub hbar: f64,
    pub z: PhasePoint,
    pub action: f64,
    pub phi1: f64,
    pub q: CMat,
    pub b: CMat,
    pub c: CMat,
    pub d0: CMat,
    pub log_det_c: Complex64,
    pub fock: Vec<Complex64>,
}

impl CoherentState {
    /// Builds the state from a frame sample, the conserved `D₀` and the
    /// action at that time. Fock coefficients default to the vacuum.
    pub fn from_frame(
        frame: &VariationalFrame,
        d0: &CMat,
        hbar: f64,
        action: f64,
    ) -> Result<Self, StatesError> {
        let q = frame.q().ok_or(StatesError::SingularC)?;
        let imq = q.map(|v| v.im);
        let sym = (&imq + imq.transpose()) * 0.5;
        if sym.symmetric_eigenvalues().min() <= 0.0 {
            return Err(StatesError::ImQNotPositive);
        }
        Ok(Self {
            t: frame.t,
            hbar,
            z: PhasePoint::from_z(&frame.z),
            action,
            phi1: 0.0,
            q,
            b: frame.b.clone(),
            c: frame.c.clone(),
            d0: d0.clone(),
            log_det_c: frame.log_det_c,
            fock: vec![Complex64::new(1.0, 0.0)],
        })
    }

    pub fn with_fock(mut self, coeffs: Vec<Complex64>) -> Self {
        self.fock = coeffs;
        self
    }

    pub fn with_phi1(mut self, phi1: f64) -> Self {
        self.phi1 = phi1;
        self
    }

    pub fn dim(&self) -> usize {
        self.z.dim()
    }

    /// `N_ħ = [(πħ)⁻ⁿ det D₀]^{1/4}`.
    pub fn normalization(&self) -> f64 {
        let n = self.dim() as i32;
        let det = self.d0.determinant().re;
        (det / (std::f64::consts::PI * self.hbar).powi(n)).powf(0.25)
    }

    /// `ξ = Δx√D₀/(|C|√ħ)` (1D).
    pub fn xi(&self, x: f64) -> f64 {
        (x - self.z.x[0]) * self.d0[(0, 0)].re.sqrt() / (self.c[(0, 0)].norm() * self.hbar.sqrt())
    }

    /// Largest Fock index carried by the coefficient vector.
    pub fn max_fock(&self) -> usize {
        self.fock.len().saturating_sub(1)
    }

    /// Mass of the coefficient vector beyond index `k`.
    pub fn tail_mass(&self, k: usize) -> f64 {
        self.fock.iter().skip(k + 1).map(|c| c.norm_sqr()).sum()
    }
}

/// Vacuum value at `x`.
pub fn vacuum_eval(state: &CoherentState, x: &[f64]) -> Complex64 {
    let n = state.dim();
    let dx: Vec<f64> = (0..n).map(|i| x[i] - state.z.x[i]).collect();
    let mut quad = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            quad += state.q[(i, j)] * dx[i] * dx[j];
        }
    }
    let lin: f64 = (0..n).map(|i| state.z.p[i] * dx[i]).sum();
    let phase = I / state.hbar * (state.action + lin + 0.5 * quad);
    state.normalization() * (phase - 0.5 * state.log_det_c).exp()
}

/// `h_0(ξ) … h_kmax(ξ)` with `h_k = H_k/√(2^k k!)`, by the stable
/// recurrence `h_{k+1} = √(2/(k+1)) ξ h_k − √(k/(k+1)) h_{k−1}`.
pub fn hermite_functions(kmax: usize, xi: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(kmax + 1);
    h.push(1.0);
    if kmax >= 1 {
        h.push(std::f64::consts::SQRT_2 * xi);
    }
    for k in 1..kmax {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * xi * h[k] - (kf / (kf + 1.0)).sqrt() * h[k - 1];
        h.push(next);
    }
    h
}

/// Phase `i^k e^{−ik arg C}` of the k-th Fock state.
fn fock_phase(state: &CoherentState, k: usize) -> Complex64 {
    let argc = state.c[(0, 0)].arg();
    I.powu(k as u32) * Complex64::from_polar(1.0, -(k as f64) * argc)
}

/// Value of the k-th Fock state at `x` (1D); `k` may not exceed `kmax`.
pub fn fock_eval_1d(state: &CoherentState, k: usize, kmax: usize, x: f64) -> Result<Complex64, StatesError> {
    if state.dim() != 1 {
        return Err(StatesError::NotOneDimensional);
    }
    if k > kmax {
        return Err(StatesError::FockIndex { k, max: kmax });
    }
    let h = hermite_functions(k, state.xi(x));
    Ok(fock_phase(state, k) * h[k] * vacuum_eval(state, &[x]))
}

/// `Σ_k c_k |k⟩` at `x` (1D).
pub fn state_eval_1d(state: &CoherentState, x: f64) -> Complex64 {
    let h = hermite_functions(state.max_fock(), state.xi(x));
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, c) in state.fock.iter().enumerate() {
        acc += c * fock_phase(state, k) * h[k];
    }
    acc * vacuum_eval(state, &[x])
}

/// Fock states `0..=kmax` sampled on a grid (1D).
pub fn fock_basis_grid(
    state: &CoherentState,
    kmax: usize,
    spec: &GridSpec,
    mass: f64,
) -> Result<Vec<GridWaveFunction>, StatesError> {
    if state.dim() != 1 {
        return Err(StatesError::NotOneDimensional);
    }
    let cols: Vec<Vec<Complex64>> = (0..spec.n)
        .into_par_iter()
        .map(|j| {
            let x = spec.x(j);
            let vac = vacuum_eval(state, &[x]);
            hermite_functions(kmax, state.xi(x))
                .into_iter()
                .enumerate()
                .map(|(k, h)| fock_phase(state, k) * h * vac)
                .collect()
        })
        .collect();
    (0..=kmax)
        .map(|k| {
            let samples = cols.iter().map(|c| c[k]).collect();
            GridWaveFunction::new(spec.x_min, spec.dx(), state.hbar, mass, samples).map_err(Into::into)
        })
        .collect()
}

/// The state `Σ_k c_k |k⟩` on a grid (1D).
pub fn state_grid(state: &CoherentState, spec: &GridSpec, mass: f64) -> Result<GridWaveFunction, StatesError> {
    if state.dim() != 1 {
        return Err(StatesError::NotOneDimensional);
    }
    Ok(GridWaveFunction::from_fn(spec, state.hbar, mass, |x| state_eval_1d(state, x))?)
}

/// Coefficients `⟨k|ψ⟩` for `k = 0..=kmax` by grid quadrature.
pub fn project_onto_fock(
    state: &CoherentState,
    psi: &GridWaveFunction,
    kmax: usize,
) -> Result<Vec<Complex64>, StatesError> {
    let basis = fock_basis_grid(state, kmax, &psi.spec(), psi.mass)?;
    basis.iter().map(|b| b.inner(psi).map_err(Into::into)).collect()
}

/// Which ladder operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Annihilation,
    Creation,
}

/// Ladder operator `N_a⟨a, JΔẑ⟩ = N_a(⟨C, Δp̂⟩ − ⟨B, Δx⟩)` built on one frame
/// column `a = (B e_k, C e_k)`, `N_a = 1/√(2ħ D₀,kk)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderOperator {
    pub n_a: f64,
    pub a: Vec<Complex64>,
    pub center: PhasePoint,
}

impl LadderOperator {
    pub fn from_state(state: &CoherentState, k: usize) -> Self {
        let a = state.b.column(k).iter().chain(state.c.column(k).iter()).copied().collect();
        Self {
            n_a: 1.0 / (2.0 * state.hbar * state.d0[(k, k)].re).sqrt(),
            a,
            center: state.z.clone(),
        }
    }

    /// Applies the operator to a sampled 1D wavefunction.
    pub fn apply_grid(&self, kind: Ladder, psi: &GridWaveFunction) -> Result<Vec<Complex64>, StatesError> {
        if self.center.dim() != 1 {
            return Err(StatesError::NotOneDimensional);
        }
        let (b, c) = match kind {
            Ladder::Annihilation => (self.a[0], self.a[1]),
            Ladder::Creation => (self.a[0].conj(), self.a[1].conj()),
        };
        let dp = psi.apply_momentum(1, self.center.p[0]);
        Ok(psi
            .samples
            .iter()
            .zip(&dp)
            .enumerate()
            .map(|(j, (v, d))| self.n_a * (c * d - b * (psi.x(j) - self.center.x[0]) * v))
            .collect())
    }
}

/// Action of `â` or `â⁺` on Fock coefficients. Creation extends the vector
/// by one entry so nothing is truncated.
pub fn ladder_apply(kind: Ladder, coeffs: &[Complex64]) -> Vec<Complex64> {
    match kind {
        Ladder::Annihilation => {
            (1..coeffs.len()).map(|k| coeffs[k] * (k as f64).sqrt()).collect::<Vec<_>>()
        }
        Ladder::Creation => std::iter::once(Complex64::new(0.0, 0.0))
            .chain(coeffs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64).sqrt()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussKernelParams, HartreeModel};
    use crate::moments::{propagate_order2, MomentSet};
    use crate::ode::Tolerances;
    use crate::oracle::fidelity;
    use crate::quad::linspace;
    use crate::variations::integrate_variations;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tight() -> Tolerances {
        Tolerances::new(1e-12, 1e-12)
    }

    fn c1(v: Complex64) -> CMat {
        CMat::from_element(1, 1, v)
    }

    struct Setup {
        traj: Trajectory,
        run: VariationalRun,
    }

    fn setup(model: &HartreeModel, p: f64, x: f64, b: Complex64, hbar: f64, t1: f64, n: usize) -> Setup {
        let m = model.mass();
        let d0 = m * b.im;
        let sig_x = hbar / (2.0 * d0);
        let sig_p = hbar * b.norm_sqr() * m * m / (2.0 * d0);
        let cov = hbar * m * b.re / (2.0 * d0);
        let d2 = DMatrix::from_row_slice(2, 2, &[sig_p, cov, cov, sig_x]);
        let s = TrajectoryState::new(0.0, PhasePoint::new_1d(p, x), MomentSet::from_delta2(&d2), model.kappa(), hbar)
            .unwrap();
        let ts = linspace(0.0, t1, n);
        let traj = propagate_order2(model, &s, t1, &ts, &tight(), false).unwrap();
        let run =
            integrate_variations(model, &traj, &c1(b * m), &c1(Complex64::from(1.0)), t1, &ts, &tight()).unwrap();
        Setup { traj, run }
    }

    fn state_at(model: &HartreeModel, s: &Setup, i: usize) -> CoherentState {
        let act = action_series(model, &s.traj).unwrap()[i];
        CoherentState::from_frame(&s.run.frames[i], &s.run.d0_initial, s.traj.initial.hbar, act).unwrap()
    }

    fn grid(center: f64, half: f64, n: usize) -> GridSpec {
        GridSpec { x_min: center - half, x_max: center + half, n }
    }

    #[test]
    fn free_particle_action_is_kinetic() {
        let model = HartreeModel::free(1, 2.0);
        let s = setup(&model, 0.7, 0.3, I, 0.01, 3.0, 301);
        let series = action_series(&model, &s.traj).unwrap();
        for (k, st) in s.traj.samples.iter().enumerate() {
            assert!((series[k] - 0.49 * st.t / 4.0).abs() < 1e-12);
        }
        assert!((action_phase(&model, &s.traj, 3.0).unwrap() - 0.49 * 3.0 / 4.0).abs() < 1e-12);
        assert!(matches!(action_phase(&model, &s.traj, 0.005), Err(StatesError::NoSampleAt(_))));
    }

    #[test]
    fn harmonic_action_matches_closed_form() {
        // Z = (−a sin t, a cos t), H = (p² + x²)/2: the integrand
        // p² − H = a²(sin² − cos²)/2 integrates to −a² sin(2t)/4.
        let model = HartreeModel::harmonic(1, 1.0, 1.0);
        let a = 0.8;
        let s = setup(&model, 0.0, a, I, 0.01, 2.0 * PI, 801);
        let series = action_series(&model, &s.traj).unwrap();
        for (k, st) in s.traj.samples.iter().enumerate() {
            assert!((series[k] + a * a * (2.0 * st.t).sin() / 4.0).abs() < 1e-9);
        }
        assert!(series.last().unwrap().abs() < 1e-9);
    }

    #[test]
    fn gaussian_model_action_carries_the_variance_term() {
        let p = GaussKernelParams { m: 1.0, gamma: 1.3, v0: -0.9, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&p).unwrap();
        let hbar = 0.01;
        let s = setup(&model, 0.4, 0.0, Complex64::new(0.2, 1.1), hbar, 4.0, 401);
        let series = action_series(&model, &s.traj).unwrap();
        let ts = s.traj.times();
        let sig: Vec<f64> = s.traj.samples.iter().map(|st| st.moments.delta2()[(1, 1)]).collect();
        let isig = cumulative(&ts, &sig);
        for k in 0..ts.len() {
            let expect = 0.16 / 2.0 * ts[k] - p.v0 * ts[k] + p.v0 / (2.0 * p.gamma * p.gamma) * isig[k];
            assert!((series[k] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn vacuum_at_start_has_expected_density() {
        let model = HartreeModel::free(1, 1.0);
        let hbar = 0.02;
        let s = setup(&model, 0.0, 0.0, I, hbar, 1.0, 11);
        let st = state_at(&model, &s, 0);
        for x in [-0.2, 0.0, 0.13] {
            let rho = vacuum_eval(&st, &[x]).norm_sqr();
            let expect = (-x * x / hbar).exp() / (PI * hbar).sqrt();
            assert!((rho - expect).abs() < 1e-12 * expect.max(1.0));
        }
        let psi = state_grid(&st, &grid(0.0, 3.0, 4096), 1.0).unwrap();
        assert!((psi.norm_sq() - 1.0).abs() < 1e-8);
        assert!((psi.weyl_moment(0, 2) - hbar / 2.0).abs() < 1e-10);
    }

    #[test]
    fn fock_suite_on_gaussian_model() {
        let gp = GaussKernelParams { m: 1.0, gamma: 1.0, v0: -0.7, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&gp).unwrap();
        let hbar = 0.01;
        let b = Complex64::new(0.3, 0.9);
        let s = setup(&model, 0.5, 0.0, b, hbar, 4.0, 5);
        for i in 0..5 {
            let st = state_at(&model, &s, i);
            let spec = grid(st.z.x[0], 3.5, 4096);
            let basis = fock_basis_grid(&st, 6, &spec, 1.0).unwrap();
            for (k, bk) in basis.iter().enumerate() {
                for (l, bl) in basis.iter().enumerate() {
                    let g = bk.inner(bl).unwrap();
                    let e = if k == l { 1.0 } else { 0.0 };
                    assert!((g - e).norm() < 1e-8, "t={} <{k}|{l}> = {g}", st.t);
                }
                let expect = hbar * st.c[(0, 0)].norm_sqr() * (2 * k + 1) as f64 / (2.0 * b.im);
                assert!((bk.weyl_moment_about(0, 2, st.z.p[0], st.z.x[0]) - expect).abs() < 1e-8);
                let direct = fock_eval_1d(&st, k, 6, spec.x(2100)).unwrap();
                assert!((direct - bk.samples[2100]).norm() < 1e-12);
            }
            assert!((basis[0].samples[2000] - vacuum_eval(&st, &[spec.x(2000)])).norm() < 1e-14);
        }
        let st = state_at(&model, &s, 0);
        assert_eq!(fock_eval_1d(&st, 7, 6, 0.0), Err(StatesError::FockIndex { k: 7, max: 6 }));
    }

    #[test]
    fn ladder_on_grid_matches_ladder_on_coefficients() {
        let gp = GaussKernelParams { m: 1.0, gamma: 1.0, v0: 0.6, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&gp).unwrap();
        let hbar = 0.02;
        let s = setup(&model, -0.3, 0.2, Complex64::new(-0.4, 1.2), hbar, 1.5, 4);
        let st = state_at(&model, &s, 3);
        let spec = grid(st.z.x[0], 4.0, 4096);
        let basis = fock_basis_grid(&st, 5, &spec, 1.0).unwrap();
        let op = LadderOperator::from_state(&st, 0);
        let vac_res = op.apply_grid(Ladder::Annihilation, &basis[0]).unwrap();
        let res_norm: f64 = vac_res.iter().map(|v| v.norm_sqr()).sum::<f64>() * spec.dx();
        assert!(res_norm.sqrt() < 1e-8);
        for k in 0..4 {
            let up = op.apply_grid(Ladder::Creation, &basis[k]).unwrap();
            let expect = basis[k + 1].scale(Complex64::from(((k + 1) as f64).sqrt()));
            let err: f64 =
                up.iter().zip(&expect.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() * spec.dx();
            assert!(err.sqrt() < 1e-8, "k={k}");
            if k > 0 {
                let down = op.apply_grid(Ladder::Annihilation, &basis[k]).unwrap();
                let expect = basis[k - 1].scale(Complex64::from((k as f64).sqrt()));
                let err: f64 =
                    down.iter().zip(&expect.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() * spec.dx();
                assert!(err.sqrt() < 1e-8, "k={k}");
            }
        }
    }

    #[test]
    fn ladder_coefficient_examples() {
        let vac = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!(ladder_apply(Ladder::Annihilation, &vac).iter().all(|c| c.norm() == 0.0));
        let up = ladder_apply(Ladder::Creation, &vac[..1]);
        assert_eq!(up, vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
    }

    proptest! {
        #[test]
        fn ladder_commutator_is_identity(re in prop::collection::vec(-1.0f64..1.0, 1..12),
                                         im in prop::collection::vec(-1.0f64..1.0, 12)) {
            let c: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
            let a_ad = ladder_apply(Ladder::Annihilation, &ladder_apply(Ladder::Creation, &c));
            let ad_a = ladder_apply(Ladder::Creation, &ladder_apply(Ladder::Annihilation, &c));
            for k in 0..c.len() {
                let ad_a_k = ad_a.get(k).copied().unwrap_or_default();
                prop_assert!((a_ad[k] - ad_a_k - c[k]).norm() < 1e-12);
            }
        }

        #[test]
        fn hermite_recurrence_matches_physicists_polynomials(xi in -3.0f64..3.0) {
            let h = hermite_functions(4, xi);
            let raw = [1.0, 2.0 * xi, 4.0 * xi * xi - 2.0, 8.0 * xi.powi(3) - 12.0 * xi,
                       16.0 * xi.powi(4) - 48.0 * xi * xi + 12.0];
            for k in 0..5 {
                let norm = (2f64.powi(k as i32) * crate::multiindex::factorial(k)).sqrt();
                prop_assert!((h[k] - raw[k] / norm).abs() < 1e-12 * raw[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn phi1_examples() {
        // Free particle, b = i, m = 1: Sp(𝔥_pp Q) = i/(1 + it), φ₁ = ½ arctan t.
        let model = HartreeModel::free(1, 1.0);
        let s = setup(&model, 0.0, 0.0, I, 0.01, 5.0, 2001);
        let series = phi1_series(&s.run).unwrap();
        assert_eq!(series[0], 0.0);
        for (f, v) in s.run.frames.iter().zip(&series) {
            assert!((v - 0.5 * f.t.atan()).abs() < 1e-9);
        }
        // Harmonic oscillator with Q = i stationary: φ₁ = t/2.
        let model = HartreeModel::harmonic(1, 1.0, 1.0);
        let s = setup(&model, 0.2, 0.0, I, 0.01, 3.0, 301);
        assert!((phi1_phase(&s.run, 3.0).unwrap() - 1.5).abs() < 1e-10);
    }

    #[test]
    fn phi1_matches_the_prefactor_phase() {
        // The vacuum prefactor 1/√det C equals |det C|^{−1/2} e^{−iφ₁}.
        let gp = GaussKernelParams { m: 1.0, gamma: 1.0, v0: 0.8, kappa: 1.0 };
        let model = HartreeModel::gauss_1d(&gp).unwrap();
        let s = setup(&model, 0.1, 0.0, Complex64::new(0.5, 0.7), 0.01, 6.0, 2401);
        let series = phi1_series(&s.run).unwrap();
        for (f, phi) in s.run.frames.iter().zip(&series) {
            let direct = (-0.5 * f.log_det_c).exp();
            let via = Complex64::from_polar(f.c.determinant().norm().powf(-0.5), -phi);
            assert!((direct - via).norm() < 1e-8 * direct.norm());
        }
    }

    #[test]
    fn vacuum_solves_the_linear_equation_for_quadratic_models() {
        // For ϰ = 0 and a quadratic Hamiltonian the packet is exact: compare
        // with the split-step solution of the same Schrödinger equation.
        use crate::oracle::{evolve_to_times, SplitStepConfig};
        let model = HartreeModel::harmonic(1, 1.0, 1.3);
        let hbar = 0.05;
        let s = setup(&model, 0.4, -0.2, Complex64::new(0.3, 0.8), hbar, 2.0, 401);
        let spec = grid(0.0, 5.0, 2048);
        let psi0 = state_grid(&state_at(&model, &s, 0), &spec, 1.0).unwrap();
        let cfg = SplitStepConfig {
            dt: 5e-4,
            steps: 4000,
            kappa: 0.0,
            gamma: 1.0,
            v0: 0.0,
            absorbing_width: 0.0,
            external: vec![0.0, 0.0, 0.5 * 1.69],
            record_every: 0,
        };
        let out = evolve_to_times(&psi0, &cfg, &[2.0], 5e-4).unwrap();
        let analytic = state_grid(&state_at(&model, &s, 400), &spec, 1.0).unwrap();
        let overlap = analytic.inner(&out[0]).unwrap();
        assert!(1.0 - fidelity(&analytic, &out[0]).unwrap() < 1e-8);
        // The action phase fixes the global phase as well.
        assert!((overlap - 1.0).norm() < 1e-5, "{overlap}");
    }
}
