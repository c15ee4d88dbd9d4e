//! Centered Weyl-ordered moments and the closed ODE systems for the mean
//! phase point together with its moments.
//!
//! Two systems are provided: the second-order system in any dimension and
//! the full hierarchy up to order `N ≤ 4` in one dimension. In the latter a
//! term is kept when its total weight does not exceed `N`, counting
//! `|α|` for each moment `Δ_α` and 2 for each power of `ħ`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{symplectic_j, ModelError, PhasePoint, SymbolModel};
use crate::multiindex::{binomial, factorial, falling, MultiIndex};
use crate::ode::{integrate, DenseSolution, OdeError, Tolerances};
use crate::oracle::GridWaveFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentsError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("moment order must be at least 2 (got {0})")]
    OrderTooLow(usize),
    #[error("moment order {0} is not supported here (at most 4)")]
    OrderTooHigh(usize),
    #[error("this system is one-dimensional only")]
    NotOneDimensional,
    #[error("second moments are not positive semidefinite (smallest eigenvalue {0:e})")]
    Unphysical(f64),
    #[error("non-finite state")]
    NonFinite,
    #[error("grid too coarse: momentum spread reaches within two bins of the Nyquist limit")]
    GridTooCoarse,
    #[error("the model supports derivatives up to order {have}, {need} are needed")]
    DerivativesUnavailable { have: usize, need: usize },
}

/// Centered moments `Δ_α` for `2 ≤ |α| ≤ N`. First moments are identically
/// zero and `Δ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    n: usize,
    order: usize,
    indices: Vec<MultiIndex>,
    values: Vec<f64>,
}

impl MomentSet {
    pub fn zeros(n: usize, order: usize) -> Self {
        let indices = MultiIndex::all_in_range(2 * n, 2, order);
        let values = vec![0.0; indices.len()];
        Self { n, order, indices, values }
    }

    /// Second-order set built from a `2n × 2n` covariance matrix.
    pub fn from_delta2(d2: &DMatrix<f64>) -> Self {
        let n = d2.nrows() / 2;
        let mut m = Self::zeros(n, 2);
        for i in 0..2 * n {
            for j in i..2 * n {
                let mut a = MultiIndex::zero(2 * n);
                a.0[i] += 1;
                a.0[j] += 1;
                m.set(&a, 0.5 * (d2[(i, j)] + d2[(j, i)]));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        let k = alpha.order();
        if k < 2 || k > self.order {
            return None;
        }
        let start = MultiIndex::all_in_range(2 * self.n, 2, k - 1).len();
        self.indices[start..].iter().position(|b| b == alpha).map(|p| start + p)
    }

    /// `Δ_α`; zero for first and out-of-range orders, one for `α = 0`.
    pub fn get(&self, alpha: &MultiIndex) -> f64 {
        match alpha.order() {
            0 => 1.0,
            1 => 0.0,
            _ => self.position(alpha).map_or(0.0, |i| self.values[i]),
        }
    }

    pub fn set(&mut self, alpha: &MultiIndex, v: f64) {
        let i = self.position(alpha).expect("multi-index outside the moment set");
        self.values[i] = v;
    }

    /// Covariance matrix `Δ₂` (momenta first).
    pub fn delta2(&self) -> DMatrix<f64> {
        let d = 2 * self.n;
        DMatrix::from_fn(d, d, |i, j| {
            let mut a = MultiIndex::zero(d);
            a.0[i] += 1;
            a.0[j] += 1;
            self.get(&a)
        })
    }

    /// Same values truncated or zero-extended to another order.
    pub fn with_order(&self, order: usize) -> Self {
        let mut m = Self::zeros(self.n, order);
        for (a, v) in self.indices.iter().zip(&self.values) {
            if a.order() <= order {
                m.set(a, *v);
            }
        }
        m
    }
}

/// Mean phase point plus moments: the state of the moment systems.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub z: PhasePoint,
    pub moments: MomentSet,
    /// Effective coupling `ϰ‖Ψ₀‖²`.
    pub kappa_eff: f64,
    pub hbar: f64,
}

impl TrajectoryState {
    /// Validates finiteness and positive semidefiniteness of `Δ₂`.
    pub fn new(
        t: f64,
        z: PhasePoint,
        moments: MomentSet,
        kappa_eff: f64,
        hbar: f64,
    ) -> Result<Self, MomentsError> {
        if !z.is_finite() || moments.values.iter().any(|v| !v.is_finite()) || !t.is_finite() {
            return Err(MomentsError::NonFinite);
        }
        if moments.order < 2 {
            return Err(MomentsError::OrderTooLow(moments.order));
        }
        let d2 = moments.delta2();
        let min_eig = d2.symmetric_eigenvalues().min();
        if min_eig < -1e-12 {
            return Err(MomentsError::Unphysical(min_eig));
        }
        Ok(Self { t, z, moments, kappa_eff, hbar })
    }

    pub fn order(&self) -> usize {
        self.moments.order
    }
}

/// Initial data from a sampled wavefunction: the mean phase point and the
/// centered Weyl-symmetrized moments up to order `n_order`. The effective
/// coupling is `ϰ‖ψ‖²`.
pub fn init_from_wavefunction(
    psi: &GridWaveFunction,
    n_order: usize,
    kappa: f64,
) -> Result<TrajectoryState, MomentsError> {
    if n_order < 2 {
        return Err(MomentsError::OrderTooLow(n_order));
    }
    let (p, x) = psi.mean_phase_point();
    // Resolve the momentum spread against the Nyquist momentum ħπ/dx.
    let p_nyq = psi.hbar * std::f64::consts::PI / psi.dx;
    let dp = psi.hbar * 2.0 * std::f64::consts::PI / (psi.dx * psi.len() as f64);
    let sigma_p = psi.weyl_moment(2, 0).max(0.0).sqrt();
    if p.abs() + 6.0 * sigma_p > p_nyq - 2.0 * dp {
        return Err(MomentsError::GridTooCoarse);
    }
    let mut m = MomentSet::zeros(1, n_order);
    for alpha in m.indices.clone() {
        let v = psi.weyl_moment(alpha.0[0], alpha.0[1]);
        m.set(&alpha, v);
    }
    TrajectoryState::new(0.0, PhasePoint::new_1d(p, x), m, kappa * psi.norm_sq(), psi.hbar)
}

fn check_derivatives(model: &dyn SymbolModel, need: usize) -> Result<(), MomentsError> {
    if model.max_order() < need {
        return Err(MomentsError::DerivativesUnavailable { have: model.max_order(), need });
    }
    Ok(())
}

/// `𝔥_zz = H_zz + ϰ̃ V_zz` with `z`-derivatives only, at `w = z`.
pub fn hessian_eff(model: &dyn SymbolModel, z: &[f64], kappa_eff: f64, t: f64) -> DMatrix<f64> {
    let d = z.len();
    let zero = vec![0; d];
    DMatrix::from_fn(d, d, |i, j| {
        let mut mu = vec![0; d];
        mu[i] += 1;
        mu[j] += 1;
        model.h_deriv(&mu, z, t) + kappa_eff * model.v_deriv(&mu, &zero, z, z, t)
    })
}

/// Right-hand side of the second-order system at a flat `(z, Δ₂)`.
fn order2_rhs_raw(
    model: &dyn SymbolModel,
    z: &[f64],
    d2: &DMatrix<f64>,
    kappa_eff: f64,
    t: f64,
) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = z.len();
    let zero = vec![0; d];
    let mut grad = vec![0.0; d];
    for (i, g) in grad.iter_mut().enumerate() {
        let ei: Vec<usize> = (0..d).map(|k| usize::from(k == i)).collect();
        let mut acc = model.h_deriv(&ei, z, t) + kappa_eff * model.v_deriv(&ei, &zero, z, z, t);
        for k in 0..d {
            for l in 0..d {
                let dkl = d2[(k, l)];
                if dkl == 0.0 {
                    continue;
                }
                let mut mu = ei.clone();
                mu[k] += 1;
                mu[l] += 1;
                let mut nu = vec![0; d];
                nu[k] += 1;
                nu[l] += 1;
                acc += 0.5
                    * dkl
                    * (model.h_deriv(&mu, z, t)
                        + kappa_eff * model.v_deriv(&mu, &zero, z, z, t)
                        + kappa_eff * model.v_deriv(&ei, &nu, z, z, t));
            }
        }
        *g = acc;
    }
    let j = symplectic_j(d / 2);
    let gv = nalgebra::DVector::from_vec(grad);
    let zdot = (&j * gv).data.into();
    let m = hessian_eff(model, z, kappa_eff, t);
    let jm = &j * &m;
    let d2dot = &jm * d2 - d2 * &m * &j;
    (zdot, d2dot, jm)
}

/// Time derivative of `(Z, Δ₂)` under the second-order system.
pub fn rhs_order2(
    model: &dyn SymbolModel,
    state: &TrajectoryState,
    t: f64,
) -> Result<(Vec<f64>, DMatrix<f64>), MomentsError> {
    check_derivatives(model, 3)?;
    if model.dim() != state.z.dim() {
        return Err(ModelError::DimensionMismatch { expected: model.dim(), got: state.z.dim() }.into());
    }
    let (zdot, d2dot, _) =
        order2_rhs_raw(model, &state.z.z(), &state.moments.delta2(), state.kappa_eff, t);
    Ok((zdot, d2dot))
}

/// Coefficient tables of the one-dimensional hierarchy. The state vector is
/// `[P, X, Δ_α…]` with the `α` in [`MomentSet`] order.
struct Hierarchy1d {
    order: usize,
    indices: Vec<MultiIndex>,
    /// `slot[a][b]` = position of `Δ_(a,b)` in the moment block.
    slot: Vec<Vec<Option<usize>>>,
}

impl Hierarchy1d {
    fn new(order: usize) -> Self {
        let indices = MultiIndex::all_in_range(2, 2, order);
        let mut slot = vec![vec![None; order + 1]; order + 1];
        for (i, a) in indices.iter().enumerate() {
            slot[a.0[0]][a.0[1]] = Some(i);
        }
        Self { order, indices, slot }
    }

    fn moment(&self, m: &[f64], a: usize, b: usize) -> f64 {
        match a + b {
            0 => 1.0,
            1 => 0.0,
            k if k > self.order => 0.0,
            _ => m[self.slot[a][b].unwrap()],
        }
    }

    /// `Σ_ν (H or ϰ̃V)_{D,ν} Δ_ν / ν!` over `ν` of weight at most `budget`.
    #[allow(clippy::too_many_arguments)]
    fn h_eff(
        &self,
        model: &dyn SymbolModel,
        z: &[f64],
        m: &[f64],
        kappa_eff: f64,
        t: f64,
        dp: usize,
        dx: usize,
        budget: isize,
    ) -> f64 {
        if budget < 0 {
            return 0.0;
        }
        let mu = [dp, dx];
        let mut acc = model.h_deriv(&mu, z, t);
        if kappa_eff != 0.0 {
            for k in 0..=(budget as usize).min(self.order) {
                if k == 1 {
                    continue;
                }
                for np in 0..=k {
                    let nx = k - np;
                    let dnu = self.moment(m, np, nx);
                    if dnu == 0.0 {
                        continue;
                    }
                    acc += kappa_eff * model.v_deriv(&mu, &[np, nx], z, z, t) * dnu
                        / (factorial(np) * factorial(nx));
                }
            }
        }
        acc
    }

    /// `(Ṗ, Ẋ)` truncated to products of total weight `budget`.
    fn zdot(&self, model: &dyn SymbolModel, z: &[f64], m: &[f64], ke: f64, t: f64, budget: usize) -> (f64, f64) {
        let (mut pdot, mut xdot) = (0.0, 0.0);
        for k in 0..=budget.min(self.order) {
            if k == 1 {
                continue;
            }
            for mp in 0..=k {
                let mx = k - mp;
                let dm = self.moment(m, mp, mx);
                if dm == 0.0 {
                    continue;
                }
                let w = dm / (factorial(mp) * factorial(mx));
                let rest = budget as isize - k as isize;
                xdot += w * self.h_eff(model, z, m, ke, t, mp + 1, mx, rest);
                pdot -= w * self.h_eff(model, z, m, ke, t, mp, mx + 1, rest);
            }
        }
        (pdot, xdot)
    }

    fn rhs(&self, model: &dyn SymbolModel, y: &[f64], dy: &mut [f64], ke: f64, hbar: f64, t: f64) {
        let n = self.order;
        let z = &y[..2];
        let m = &y[2..];
        let (pdot, xdot) = self.zdot(model, z, m, ke, t, n);
        dy[0] = pdot;
        dy[1] = xdot;
        for (idx, alpha) in self.indices.iter().enumerate() {
            let (a, b) = (alpha.0[0], alpha.0[1]);
            let na = a + b;
            let mut acc = 0.0;
            let mut k = 1;
            while 2 * (k - 1) <= n {
                let ck = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 } * (0.5 * hbar).powi(k as i32 - 1)
                    / factorial(k);
                for j in 0..=k {
                    if j > a || k - j > b {
                        continue;
                    }
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    let c = ck * binomial(k, j) * sign * falling(a, j) * falling(b, k - j);
                    // Remaining moment Δ_(a−j+μp, b−k+j+μx) has order na − k + |μ|.
                    for mu_ord in 0..=(n + k).saturating_sub(na) {
                        let rest_ord = na - k + mu_ord;
                        if rest_ord == 1 || rest_ord > n {
                            continue;
                        }
                        let budget = n as isize - rest_ord as isize - 2 * (k as isize - 1);
                        if budget < 0 {
                            continue;
                        }
                        for mp in 0..=mu_ord {
                            let mx = mu_ord - mp;
                            let d_rest = self.moment(m, a - j + mp, b - (k - j) + mx);
                            if d_rest == 0.0 {
                                continue;
                            }
                            let h = self.h_eff(model, z, m, ke, t, mp + k - j, mx + j, budget);
                            acc += c * h * d_rest / (factorial(mp) * factorial(mx));
                        }
                    }
                }
                k += 2;
            }
            // Transport of the centering point, truncated to the same weight.
            if a > 0 {
                let (pd, _) = self.zdot(model, z, m, ke, t, n + 1 - na);
                acc -= a as f64 * pd * self.moment(m, a - 1, b);
            }
            if b > 0 {
                let (_, xd) = self.zdot(model, z, m, ke, t, n + 1 - na);
                acc -= b as f64 * xd * self.moment(m, a, b - 1);
            }
            dy[2 + idx] = acc;
        }
    }
}

/// Which moment system a trajectory was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// Second order, any dimension; state `[z, Δ₂ (full matrix)]`.
    Order2,
    /// One-dimensional hierarchy; state `[P, X, Δ_α…]`.
    Hierarchy1d(usize),
}

/// A moment system bound to a model, usable as an ODE right-hand side and
/// as a building block for systems integrated jointly with it.
pub struct MomentSystem<'a> {
    pub model: &'a dyn SymbolModel,
    pub kind: SystemKind,
    pub kappa_eff: f64,
    pub hbar: f64,
    hier: Option<Hierarchy1d>,
}

impl<'a> MomentSystem<'a> {
    pub fn new(
        model: &'a dyn SymbolModel,
        kind: SystemKind,
        kappa_eff: f64,
        hbar: f64,
    ) -> Result<Self, MomentsError> {
        let hier = match kind {
            SystemKind::Order2 => {
                check_derivatives(model, 3)?;
                None
            }
            SystemKind::Hierarchy1d(n) => {
                if model.dim() != 1 {
                    return Err(MomentsError::NotOneDimensional);
                }
                if n < 2 {
                    return Err(MomentsError::OrderTooLow(n));
                }
                if n > 4 {
                    return Err(MomentsError::OrderTooHigh(n));
                }
                check_derivatives(model, n + 1)?;
                Some(Hierarchy1d::new(n))
            }
        };
        Ok(Self { model, kind, kappa_eff, hbar, hier })
    }

    pub fn len(&self) -> usize {
        let d = 2 * self.model.dim();
        match &self.hier {
            None => d + d * d,
            Some(h) => 2 + h.indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pack(&self, s: &TrajectoryState) -> Vec<f64> {
        let mut y = s.z.z();
        match &self.hier {
            None => y.extend(s.moments.delta2().iter()),
            Some(h) => {
                let m = s.moments.with_order(h.order);
                y.extend(m.values());
            }
        }
        y
    }

    pub fn unpack(&self, t: f64, y: &[f64]) -> TrajectoryState {
        let n = self.model.dim();
        let d = 2 * n;
        let z = PhasePoint::from_z(&y[..d]);
        let moments = match &self.hier {
            None => MomentSet::from_delta2(&DMatrix::from_column_slice(d, d, &y[d..d + d * d])),
            Some(h) => {
                let mut m = MomentSet::zeros(1, h.order);
                m.values_mut().copy_from_slice(&y[2..2 + h.indices.len()]);
                m
            }
        };
        TrajectoryState { t, z, moments, kappa_eff: self.kappa_eff, hbar: self.hbar }
    }

    pub fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        match &self.hier {
            None => {
                let d = 2 * self.model.dim();
                let d2 = DMatrix::from_column_slice(d, d, &y[d..d + d * d]);
                let (zdot, d2dot, _) = order2_rhs_raw(self.model, &y[..d], &d2, self.kappa_eff, t);
                dy[..d].copy_from_slice(&zdot);
                dy[d..d + d * d].copy_from_slice(d2dot.as_slice());
            }
            Some(h) => h.rhs(self.model, y, dy, self.kappa_eff, self.hbar, t),
        }
    }
}

/// Sampled solution of a moment system.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: SystemKind,
    pub initial: TrajectoryState,
    pub samples: Vec<TrajectoryState>,
    /// Fundamental matrices `A(t)` at the sample times (second-order runs
    /// with the cross-check enabled).
    pub fundamental: Option<Vec<DMatrix<f64>>>,
    /// `max_t ‖Δ₂(t) − A(t) Δ₂(0) Aᵀ(t)‖_max` when both routes were run.
    pub route_mismatch: Option<f64>,
    dense: DenseSolution,
    dim: usize,
}

impl Trajectory {
    /// The moment system this trajectory solves, for joint integration with
    /// other equations driven by it.
    pub fn system<'a>(&self, model: &'a dyn SymbolModel) -> Result<MomentSystem<'a>, MomentsError> {
        MomentSystem::new(model, self.kind, self.initial.kappa_eff, self.initial.hbar)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &TrajectoryState {
        self.samples.last().expect("non-empty trajectory")
    }

    /// Mean phase point at any covered time (dense output).
    pub fn z_at(&self, t: f64) -> Result<Vec<f64>, MomentsError> {
        let y = self.dense.eval(t)?;
        Ok(y[..2 * self.dim].to_vec())
    }

    /// Full state at any covered time (dense output).
    pub fn state_at(&self, model: &dyn SymbolModel, t: f64) -> Result<TrajectoryState, MomentsError> {
        let y = self.dense.eval(t)?;
        Ok(self.system(model)?.unpack(t, &y))
    }

    pub fn t_start(&self) -> f64 {
        self.initial.t
    }

    pub fn t_end(&self) -> f64 {
        self.last().t
    }

    /// CSV with columns `t, P.., X.., Δ_α.., kappa_eff, hbar`.
    pub fn to_csv(&self) -> String {
        let n = self.dim;
        let mut out = String::from("t");
        for i in 0..n {
            out.push_str(&if n == 1 { ",P".to_string() } else { format!(",P{}", i + 1) });
        }
        for i in 0..n {
            out.push_str(&if n == 1 { ",X".to_string() } else { format!(",X{}", i + 1) });
        }
        for a in self.initial.moments.indices() {
            out.push_str(&format!(",D_{}", a.label()));
        }
        out.push_str(",kappa_eff,hbar\n");
        for s in &self.samples {
            let mut row = vec![format!("{:.17e}", s.t)];
            row.extend(s.z.z().iter().map(|v| format!("{v:.17e}")));
            row.extend(s.moments.values().iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{:.17e}", s.kappa_eff));
            row.push(format!("{:.17e}", s.hbar));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn sample_grid(t0: f64, t1: f64, sample_times: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = std::iter::once(t0)
        .chain(sample_times.iter().copied().filter(|&s| s > t0 && s < t1))
        .chain(std::iter::once(t1))
        .collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    ts
}

/// Integrates the second-order system over `[t0, t1]`, sampling at
/// `sample_times` (plus both ends). With `cross_check` the fundamental matrix
/// `Ȧ = J𝔥_zz A` is integrated alongside and `A Δ₂(0) Aᵀ` compared with the
/// directly integrated `Δ₂`.
pub fn propagate_order2(
    model: &dyn SymbolModel,
    state0: &TrajectoryState,
    t1: f64,
    sample_times: &[f64],
    tol: &Tolerances,
    cross_check: bool,
) -> Result<Trajectory, MomentsError> {
    let sys = MomentSystem::new(model, SystemKind::Order2, state0.kappa_eff, state0.hbar)?;
    let d = 2 * model.dim();
    let base = sys.len();
    let mut y0 = sys.pack(&state0.clone().with_order(2));
    if cross_check {
        y0.extend(DMatrix::<f64>::identity(d, d).iter());
    }
    let j = symplectic_j(d / 2);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        sys.rhs(t, y, dy);
        if cross_check {
            let m = hessian_eff(model, &y[..d], sys.kappa_eff, t);
            let a = DMatrix::from_column_slice(d, d, &y[base..base + d * d]);
            let adot = &j * m * a;
            dy[base..].copy_from_slice(adot.as_slice());
        }
    };
    let t0 = state0.t;
    let ts = sample_grid(t0, t1, sample_times);
    let dense = integrate(rhs, t0, &y0, t1, &ts, tol)?;
    let mut samples = Vec::with_capacity(ts.len());
    let mut fundamental = cross_check.then(Vec::new);
    let mut mismatch: f64 = 0.0;
    let d2_0 = state0.moments.delta2();
    for &t in &ts {
        let y = dense.eval(t)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MomentsError::NonFinite);
        }
        let s = sys.unpack(t, &y);
        if let Some(f) = fundamental.as_mut() {
            let a = DMatrix::from_column_slice(d, d, &y[base..]);
            let d_direct = DMatrix::from_column_slice(d, d, &y[d..base]);
            let via_a = &a * &d2_0 * a.transpose();
            mismatch = mismatch.max((d_direct - via_a).amax());
            f.push(a);
        }
        samples.push(s);
    }
    Ok(Trajectory {
        kind: SystemKind::Order2,
        initial: state0.clone().with_order(2),
        samples,
        route_mismatch: cross_check.then_some(mismatch),
        fundamental,
        dense,
        dim: model.dim(),
    })
}

/// Integrates the one-dimensional hierarchy of order `n_order ≤ 4`.
pub fn propagate_order_n_1d(
    model: &dyn SymbolModel,
    state0: &TrajectoryState,
    n_order: usize,
    t1: f64,
    sample_times: &[f64],
    tol: &Tolerances,
) -> Result<Trajectory, MomentsError> {
    let sys = MomentSystem::new(
        model,
        SystemKind::Hierarchy1d(n_order),
        state0.kappa_eff,
        state0.hbar,
    )?;
    let initial = state0.clone().with_order(n_order);
    let y0 = sys.pack(&initial);
    let t0 = state0.t;
    let ts = sample_grid(t0, t1, sample_times);
    let dense = integrate(|t, y, dy| sys.rhs(t, y, dy), t0, &y0, t1, &ts, tol)?;
    let mut samples = Vec::with_capacity(ts.len());
    for &t in &ts {
        let y = dense.eval(t)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MomentsError::NonFinite);
        }
        samples.push(sys.unpack(t, &y));
    }
    Ok(Trajectory {
        kind: SystemKind::Hierarchy1d(n_order),
        initial,
        samples,
        fundamental: None,
        route_mismatch: None,
        dense,
        dim: 1,
    })
}

impl TrajectoryState {
    /// Same state with the moment set truncated or zero-extended.
    pub fn with_order(mut self, order: usize) -> Self {
        self.moments = self.moments.with_order(order);
        self
    }
}
