//! Brute-force reference solver: a Strang split-step Fourier integrator for
//! the one-dimensional nonlinear equation with a Gaussian interaction kernel,
//! plus grid diagnostics (moments, fidelity, momentum representation).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::multiindex::{binomial, MultiIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("grids differ (x0, dx or size)")]
    GridMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("norm drift {drift:e} per 1000 steps exceeds 1e-8 (under-resolved run)")]
    NormDrift { drift: f64 },
    #[error("{mass:e} of the probability sits at the grid edges")]
    SupportTruncated { mass: f64 },
    #[error("the required resolution needs more than {max} grid points")]
    GridTooCoarse { max: usize },
}

/// Complex samples on a uniform periodic grid `x_j = x0 + j·dx`.
///
/// The same type holds momentum-space samples, in which case `x0` and `dx`
/// refer to the momentum axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWaveFunction {
    pub x0: f64,
    pub dx: f64,
    pub hbar: f64,
    pub mass: f64,
    pub samples: Vec<Complex64>,
}

fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
}

/// Angular wavenumbers in FFT order for `n` points spaced `dx`.
pub fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * dx);
    (0..n)
        .map(|j| if j < n / 2 { j as f64 * dk } else { (j as f64 - n as f64) * dk })
        .collect()
}

impl GridWaveFunction {
    pub fn new(
        x0: f64,
        dx: f64,
        hbar: f64,
        mass: f64,
        samples: Vec<Complex64>,
    ) -> Result<Self, OracleError> {
        if !samples.len().is_power_of_two() {
            return Err(OracleError::NotPowerOfTwo(samples.len()));
        }
        if !(dx > 0.0 && hbar > 0.0 && mass > 0.0) {
            return Err(OracleError::InvalidConfig("dx, hbar and mass must be positive".into()));
        }
        Ok(Self { x0, dx, hbar, mass, samples })
    }

    /// Samples `f` on the grid of `spec`.
    pub fn from_fn<F: Fn(f64) -> Complex64 + Sync>(
        spec: &GridSpec,
        hbar: f64,
        mass: f64,
        f: F,
    ) -> Result<Self, OracleError> {
        use rayon::prelude::*;
        let samples: Vec<Complex64> = (0..spec.n).into_par_iter().map(|j| f(spec.x(j))).collect();
        Self::new(spec.x_min, spec.dx(), hbar, mass, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.x(j)).collect()
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { x_min: self.x0, x_max: self.x0 + self.dx * self.len() as f64, n: self.len() }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (self.x0 - other.x0).abs() <= 1e-12 * self.dx
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
    }

    /// `‖ψ‖²` by the (periodic) trapezoid rule.
    pub fn norm_sq(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.dx
    }

    pub fn normalized(&self) -> Self {
        let s = 1.0 / self.norm_sq().sqrt();
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// `⟨self|other⟩ = ∫ self* other dx`.
    pub fn inner(&self, other: &Self) -> Result<Complex64, OracleError> {
        if !self.same_grid(other) {
            return Err(OracleError::GridMismatch);
        }
        Ok(self.samples.iter().zip(&other.samples).map(|(a, b)| a.conj() * b).sum::<Complex64>() * self.dx)
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &Self) -> Result<f64, OracleError> {
        if !self.same_grid(other) {
            return Err(OracleError::GridMismatch);
        }
        Ok((self.samples.iter().zip(&other.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
            * self.dx)
            .sqrt())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `a·self + b·other` on a shared grid.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self, OracleError> {
        if !self.same_grid(other) {
            return Err(OracleError::GridMismatch);
        }
        let mut out = self.clone();
        for (o, v) in out.samples.iter_mut().zip(&other.samples) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }

    /// Probability mass in the outer sixteenth of the grid on each side,
    /// relative to the total.
    pub fn edge_mass(&self) -> f64 {
        let n = self.len();
        let w = (n / 16).max(1);
        let edge: f64 = self.samples[..w].iter().chain(&self.samples[n - w..]).map(|c| c.norm_sqr()).sum();
        edge * self.dx / self.norm_sq()
    }

    /// `(-iħ∂_x − p_shift)^power ψ` evaluated spectrally.
    pub fn apply_momentum(&self, power: usize, p_shift: f64) -> Vec<Complex64> {
        if power == 0 {
            return self.samples.clone();
        }
        let n = self.len();
        let (fwd, inv) = fft_pair(n);
        let mut buf = self.samples.clone();
        fwd.process(&mut buf);
        let ks = wavenumbers(n, self.dx);
        for (b, k) in buf.iter_mut().zip(&ks) {
            *b *= (self.hbar * k - p_shift).powi(power as i32) / n as f64;
        }
        inv.process(&mut buf);
        buf
    }

    /// Mean `(⟨p̂⟩, ⟨x̂⟩)` of the normalized state.
    pub fn mean_phase_point(&self) -> (f64, f64) {
        let norm = self.norm_sq();
        let x: f64 =
            self.samples.iter().enumerate().map(|(j, c)| self.x(j) * c.norm_sqr()).sum::<f64>() * self.dx
                / norm;
        let dpsi = self.apply_momentum(1, 0.0);
        let p: f64 =
            self.samples.iter().zip(&dpsi).map(|(a, b)| (a.conj() * b).re).sum::<f64>() * self.dx / norm;
        (p, x)
    }

    /// Centered Weyl-symmetrized moment `⟨{Δp̂^a Δx̂^b}⟩ / ‖ψ‖²`, using the
    /// ordering identity `{p^a x^b} = 2^{−b} Σ_k C(b,k) x^k p^a x^{b−k}`.
    pub fn weyl_moment(&self, a: usize, b: usize) -> f64 {
        let (p0, x0) = self.mean_phase_point();
        self.weyl_moment_about(a, b, p0, x0)
    }

    pub fn weyl_moment_about(&self, a: usize, b: usize, p0: f64, x0: f64) -> f64 {
        let norm = self.norm_sq();
        let dxs: Vec<f64> = (0..self.len()).map(|j| self.x(j) - x0).collect();
        let mut total = 0.0;
        for k in 0..=b {
            let right: Vec<Complex64> =
                self.samples.iter().zip(&dxs).map(|(c, d)| c * d.powi((b - k) as i32)).collect();
            let tmp = GridWaveFunction { samples: right, ..self.clone() };
            let pr = tmp.apply_momentum(a, p0);
            let val: f64 = self
                .samples
                .iter()
                .zip(&dxs)
                .zip(&pr)
                .map(|((c, d), q)| (c.conj() * d.powi(k as i32) * q).re)
                .sum::<f64>()
                * self.dx;
            total += binomial(b, k) * val;
        }
        total / 2f64.powi(b as i32) / norm
    }

    /// Unitary ħ-scaled Fourier transform to the momentum grid
    /// `p_j = ħ k_j`, sorted ascending. Parseval holds exactly.
    pub fn momentum_representation(&self) -> GridWaveFunction {
        let n = self.len();
        let (fwd, _) = fft_pair(n);
        let mut buf = self.samples.clone();
        fwd.process(&mut buf);
        let ks = wavenumbers(n, self.dx);
        let scale = self.dx / (2.0 * std::f64::consts::PI * self.hbar).sqrt();
        let dp = self.hbar * (ks[1] - ks[0]);
        // Reorder so momenta ascend from −n/2.
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (j, (b, k)) in buf.iter().zip(&ks).enumerate() {
            let phase = Complex64::from_polar(1.0, -k * self.x0);
            let dst = (j + n / 2) % n;
            out[dst] = b * phase * scale;
        }
        GridWaveFunction {
            x0: -(n as f64 / 2.0) * dp,
            dx: dp,
            hbar: self.hbar,
            mass: self.mass,
            samples: out,
        }
    }

    /// CSV snapshot: a header comment with metadata, then `x,re,im` rows.
    pub fn to_csv(&self, t: f64) -> String {
        let mut s = format!(
            "# hbar={:e} mass={:e} t={:e} x0={:e} dx={:e} n={}\nx,re,im\n",
            self.hbar,
            self.mass,
            t,
            self.x0,
            self.dx,
            self.len()
        );
        for (j, c) in self.samples.iter().enumerate() {
            s.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", self.x(j), c.re, c.im));
        }
        s
    }
}

/// `|⟨ψ1|ψ2⟩| / (‖ψ1‖‖ψ2‖)`.
pub fn fidelity(a: &GridWaveFunction, b: &GridWaveFunction) -> Result<f64, OracleError> {
    let ip = a.inner(b)?;
    Ok((ip.norm() / (a.norm_sq() * b.norm_sq()).sqrt()).min(1.0))
}

/// All centered Weyl moments of order `k`, with an edge-mass guard.
pub fn grid_moments(psi: &GridWaveFunction, k: usize) -> Result<Vec<(MultiIndex, f64)>, OracleError> {
    let edge = psi.edge_mass();
    if edge > 1e-10 {
        return Err(OracleError::SupportTruncated { mass: edge });
    }
    let (p0, x0) = psi.mean_phase_point();
    Ok(MultiIndex::all_of_order(2, k)
        .into_iter()
        .map(|a| {
            let v = psi.weyl_moment_about(a.0[0], a.0[1], p0, x0);
            (a, v)
        })
        .collect())
}

/// Uniform periodic grid `[x_min, x_max)` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

pub const DEFAULT_GRID_POINTS: usize = 4096;
pub const MAX_GRID_POINTS: usize = 8192;

impl GridSpec {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    /// Grid covering centers in `[lo, hi]` with a margin of `20√σ_x` and at
    /// least `4.5γ` on each side, and enough points that the Nyquist
    /// momentum clears `p_max + 12√σ_p`. Starts at 4096 points and doubles up
    /// to 8192.
    pub fn auto(
        lo: f64,
        hi: f64,
        sigma_x_max: f64,
        sigma_p_max: f64,
        p_abs_max: f64,
        hbar: f64,
        gamma: f64,
    ) -> Result<Self, OracleError> {
        let margin = (20.0 * sigma_x_max.sqrt()).max(4.5 * gamma);
        let (x_min, x_max) = (lo - margin, hi + margin);
        let mut n = DEFAULT_GRID_POINTS;
        loop {
            let dx = (x_max - x_min) / n as f64;
            let p_nyq = std::f64::consts::PI * hbar / dx;
            if p_nyq >= p_abs_max + 12.0 * sigma_p_max.sqrt() {
                return Ok(Self { x_min, x_max, n });
            }
            if n >= MAX_GRID_POINTS {
                return Err(OracleError::GridTooCoarse { max: MAX_GRID_POINTS });
            }
            n *= 2;
        }
    }
}

/// Split-step run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStepConfig {
    pub dt: f64,
    pub steps: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub v0: f64,
    /// Width of the absorbing edge layer; 0 disables it.
    pub absorbing_width: f64,
    /// External potential `U(x) = Σ_k c_k x^k` (test mode).
    pub external: Vec<f64>,
    /// Record a snapshot every this many steps (0 = only the final state).
    pub record_every: usize,
}

impl SplitStepConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(OracleError::InvalidConfig("dt must be positive".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(OracleError::InvalidConfig("gamma must be positive".into()));
        }
        if self.absorbing_width < 0.0 {
            return Err(OracleError::InvalidConfig("absorbing width must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Reusable stepping machinery for a fixed grid and parameters.
pub struct SplitStepper {
    n: usize,
    dx: f64,
    hbar: f64,
    mass: f64,
    ks: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n_pad: usize,
    pad_fwd: Arc<dyn Fft<f64>>,
    pad_inv: Arc<dyn Fft<f64>>,
    /// Analytic transform of the kernel shape on the padded grid, times ϰV0.
    kernel_hat: Vec<f64>,
    external: Vec<f64>,
    mask: Option<Vec<f64>>,
    nonlinear: bool,
}

impl SplitStepper {
    pub fn new(psi: &GridWaveFunction, cfg: &SplitStepConfig) -> Result<Self, OracleError> {
        cfg.validate()?;
        let n = psi.len();
        let dx = psi.dx;
        let (fwd, inv) = fft_pair(n);
        let ks = wavenumbers(n, dx);
        // Zero padding makes the circular convolution linear on the grid as
        // long as the padded period exceeds the grid width plus ten widths.
        let width = dx * n as f64;
        let n_pad = (((width + 10.0 * cfg.gamma) / dx).ceil() as usize).next_power_of_two().max(2 * n);
        let (pad_fwd, pad_inv) = fft_pair(n_pad);
        let strength = cfg.kappa * cfg.v0;
        let kernel_hat: Vec<f64> = wavenumbers(n_pad, dx)
            .iter()
            .map(|k| {
                strength * cfg.gamma * (2.0 * std::f64::consts::PI).sqrt()
                    * (-0.5 * cfg.gamma * cfg.gamma * k * k).exp()
                    / n_pad as f64
            })
            .collect();
        let mask = (cfg.absorbing_width > 0.0).then(|| {
            (0..n)
                .map(|j| {
                    let x = psi.x(j);
                    let d = (x - psi.x0).min(psi.x0 + width - x);
                    if d >= cfg.absorbing_width {
                        1.0
                    } else {
                        let s = (d / cfg.absorbing_width).max(0.0);
                        (0.5 * std::f64::consts::PI * s).sin().powf(0.125)
                    }
                })
                .collect()
        });
        Ok(Self {
            n,
            dx,
            hbar: psi.hbar,
            mass: psi.mass,
            ks,
            fwd,
            inv,
            n_pad,
            pad_fwd,
            pad_inv,
            kernel_hat,
            external: cfg.external.clone(),
            mask,
            nonlinear: strength != 0.0,
        })
    }

    /// Nonlocal potential `ϰV0 (K★|ψ|²)(x_j)` on the grid.
    pub fn mean_field(&self, psi: &[Complex64]) -> Vec<f64> {
        if !self.nonlinear {
            return vec![0.0; self.n];
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_pad];
        for (b, c) in buf.iter_mut().zip(psi) {
            *b = Complex64::new(c.norm_sqr(), 0.0);
        }
        self.pad_fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.pad_inv.process(&mut buf);
        buf[..self.n].iter().map(|c| c.re).collect()
    }

    fn kinetic(&self, psi: &mut [Complex64], dt: f64) {
        self.fwd.process(psi);
        let inv_n = 1.0 / self.n as f64;
        for (c, k) in psi.iter_mut().zip(&self.ks) {
            *c *= Complex64::from_polar(inv_n, -self.hbar * k * k * dt / (2.0 * self.mass));
        }
        self.inv.process(psi);
    }

    /// One Strang step of size `dt` (negative steps run backwards).
    pub fn step(&self, psi: &mut GridWaveFunction, dt: f64) {
        let x0 = psi.x0;
        self.kinetic(&mut psi.samples, 0.5 * dt);
        let u = self.mean_field(&psi.samples);
        for (j, (c, uj)) in psi.samples.iter_mut().zip(&u).enumerate() {
            let x = x0 + j as f64 * self.dx;
            let ext: f64 = self.external.iter().rev().fold(0.0, |acc, a| acc * x + a);
            *c *= Complex64::from_polar(1.0, -(uj + ext) * dt / self.hbar);
        }
        self.kinetic(&mut psi.samples, 0.5 * dt);
        if let Some(m) = &self.mask {
            psi.samples.iter_mut().zip(m).for_each(|(c, w)| *c *= w);
        }
    }
}

/// Result of a split-step run.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub snapshots: Vec<(f64, GridWaveFunction)>,
    /// `|‖ψ_T‖² − ‖ψ₀‖²| / ‖ψ₀‖²`, scaled to 1000 steps.
    pub norm_drift_per_1000: f64,
}

impl OracleRun {
    pub fn last(&self) -> &GridWaveFunction {
        &self.snapshots.last().expect("non-empty run").1
    }
}

/// Runs `cfg.steps` Strang steps from `psi0`. The interaction is
/// `ϰV0 ∫ exp(−(x−y)²/2γ²) |ψ(y)|² dy`, i.e. the effective coupling
/// `ϰ‖ψ₀‖²` divided by the initial norm.
pub fn propagate_split_step(
    psi0: &GridWaveFunction,
    cfg: &SplitStepConfig,
) -> Result<OracleRun, OracleError> {
    let stepper = SplitStepper::new(psi0, cfg)?;
    let mut psi = psi0.clone();
    let mut snapshots = vec![(0.0, psi0.clone())];
    for s in 1..=cfg.steps {
        stepper.step(&mut psi, cfg.dt);
        if (cfg.record_every > 0 && s % cfg.record_every == 0) || s == cfg.steps {
            snapshots.push((s as f64 * cfg.dt, psi.clone()));
        }
    }
    let n0 = psi0.norm_sq();
    let drift = (psi.norm_sq() - n0).abs() / n0 * 1000.0 / cfg.steps.max(1) as f64;
    if cfg.absorbing_width == 0.0 && drift > 1e-8 {
        return Err(OracleError::NormDrift { drift });
    }
    Ok(OracleRun { snapshots, norm_drift_per_1000: drift })
}

/// Evolves `psi0` to each time in `times` (ascending, ≥ 0) using steps no
/// longer than `dt_max`; each interval is split evenly.
pub fn evolve_to_times(
    psi0: &GridWaveFunction,
    cfg: &SplitStepConfig,
    times: &[f64],
    dt_max: f64,
) -> Result<Vec<GridWaveFunction>, OracleError> {
    let stepper = SplitStepper::new(psi0, &SplitStepConfig { dt: dt_max, ..cfg.clone() })?;
    let mut psi = psi0.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let mut total_steps = 0usize;
    for &target in times {
        if target < t {
            return Err(OracleError::InvalidConfig("output times must ascend".into()));
        }
        let steps = ((target - t) / dt_max).ceil() as usize;
        if steps > 0 {
            let dt = (target - t) / steps as f64;
            for _ in 0..steps {
                stepper.step(&mut psi, dt);
            }
        }
        total_steps += steps;
        t = target;
        out.push(psi.clone());
    }
    let n0 = psi0.norm_sq();
    let drift = (psi.norm_sq() - n0).abs() / n0 * 1000.0 / total_steps.max(1) as f64;
    if cfg.absorbing_width == 0.0 && drift > 1e-8 {
        return Err(OracleError::NormDrift { drift });
    }
    Ok(out)
}
