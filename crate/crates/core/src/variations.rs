//! Equations in variations along a trajectory: the complex frame `(B, C)`,
//! `Q = BC⁻¹`, the conserved skew products, the fundamental matrix and the
//! identities relating them.
//!
//! The frame obeys `Ḃ = −𝔥_xp B − 𝔥_xx C`, `Ċ = 𝔥_pp B + 𝔥_px C`, i.e.
//! `ȧ = J𝔥_zz a` for each column `a = (B e_k, C e_k)`. The fundamental matrix
//! `A(t)` has blocks `A = [[λ₄ᵀ, −λ₂ᵀ], [−λ₃ᵀ, λ₁ᵀ]]`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::model::{symplectic_j, SymbolModel};
use crate::moments::{hessian_eff, MomentsError, Trajectory};
use crate::ode::{integrate, OdeError, Tolerances};
use crate::quad::cumulative;

pub type CMat = DMatrix<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationsError {
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("C(t) is singular at t = {t}")]
    SingularC { t: f64 },
    #[error("det C(t) nearly vanished at t = {t} while D0 is not positive definite")]
    DegenerateGerm { t: f64 },
    #[error("B(t) is singular at t = {t}")]
    SingularB { t: f64 },
    #[error("need at least five uniformly spaced samples around index {0}")]
    InsufficientSamples(usize),
    #[error("log det C lost track of the branch at t = {t}")]
    BranchLost { t: f64 },
}

/// `{a₁, a₂} = ⟨a₁, J a₂⟩`, bilinear (no conjugation).
pub fn skew_product(a1: &[Complex64], a2: &[Complex64]) -> Complex64 {
    assert_eq!(a1.len(), a2.len(), "skew product needs equal dimensions");
    let n = a1.len() / 2;
    (0..n).map(|i| -a1[i] * a2[n + i] + a1[n + i] * a2[i]).sum()
}

/// Largest entry modulus.
pub fn cmax(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.norm()))
}

fn to_c(m: &DMatrix<f64>) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// `D₀ = (C†B − B†C)/(2i)`.
pub fn d0_of(b: &CMat, c: &CMat) -> CMat {
    (c.adjoint() * b - b.adjoint() * c) / (2.0 * I)
}

/// `D̃₀ = CᵀB − BᵀC`.
pub fn d0_tilde_of(b: &CMat, c: &CMat) -> CMat {
    c.transpose() * b - b.transpose() * c
}

fn is_positive_definite(h: &CMat) -> bool {
    // Hermitian part, embedded as a real symmetric matrix of twice the size.
    let n = h.nrows();
    let herm = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = herm[(i, j)];
            r[(i, j)] = v.re;
            r[(n + i, n + j)] = v.re;
            r[(i, n + j)] = -v.im;
            r[(n + i, j)] = v.im;
        }
    }
    r.symmetric_eigenvalues().min() > 0.0
}

/// One sample of the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalFrame {
    pub t: f64,
    pub b: CMat,
    pub c: CMat,
    /// Continuously tracked `log det C(t)`.
    pub log_det_c: Complex64,
    /// `𝔥_zz` at this sample.
    pub hzz: DMatrix<f64>,
    /// Mean phase point at this sample.
    pub z: Vec<f64>,
}

impl VariationalFrame {
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// `Q = BC⁻¹`, or `None` when `C` is singular.
    pub fn q(&self) -> Option<CMat> {
        self.c.clone().try_inverse().map(|ci| &self.b * ci)
    }

    pub fn d0(&self) -> CMat {
        d0_of(&self.b, &self.c)
    }

    pub fn d0_tilde(&self) -> CMat {
        d0_tilde_of(&self.b, &self.c)
    }

    /// Column `a_k = (B e_k, C e_k)`.
    pub fn column(&self, k: usize) -> Vec<Complex64> {
        self.b.column(k).iter().chain(self.c.column(k).iter()).copied().collect()
    }

    /// `√det C` on the tracked branch.
    pub fn sqrt_det_c(&self) -> Complex64 {
        (0.5 * self.log_det_c).exp()
    }

    /// `(𝔥_pp, 𝔥_px, 𝔥_xp, 𝔥_xx)` blocks.
    pub fn blocks(&self) -> (CMat, CMat, CMat, CMat) {
        let n = self.dim();
        let h = to_c(&self.hzz);
        (
            h.view((0, 0), (n, n)).into_owned(),
            h.view((0, n), (n, n)).into_owned(),
            h.view((n, 0), (n, n)).into_owned(),
            h.view((n, n), (n, n)).into_owned(),
        )
    }
}

/// Sampled frame with the initial invariants.
#[derive(Debug, Clone)]
pub struct VariationalRun {
    pub frames: Vec<VariationalFrame>,
    pub d0_initial: CMat,
    pub d0_tilde_initial: CMat,
}

fn pack_c(m: &CMat, out: &mut Vec<f64>) {
    for v in m.iter() {
        out.push(v.re);
        out.push(v.im);
    }
}

fn unpack_c(n: usize, y: &[f64]) -> CMat {
    CMat::from_iterator(n, n, y.chunks(2).take(n * n).map(|p| Complex64::new(p[0], p[1])))
}

/// Integrates the frame from `(B0, C0)` at the trajectory start to `t1`,
/// jointly with the moment system so that `𝔥_zz` is evaluated on the exact
/// integrated trajectory.
pub fn integrate_variations(
    model: &dyn SymbolModel,
    traj: &Trajectory,
    b0: &CMat,
    c0: &CMat,
    t1: f64,
    sample_times: &[f64],
    tol: &Tolerances,
) -> Result<VariationalRun, VariationsError> {
    let n = model.dim();
    if b0.nrows() != n || c0.nrows() != n || b0.ncols() != n || c0.ncols() != n {
        return Err(VariationsError::DimensionMismatch { expected: n, got: b0.nrows() });
    }
    let sys = traj.system(model)?;
    let ms = sys.len();
    let nn = n * n;
    let t0 = traj.initial.t;
    let mut y0 = sys.pack(&traj.initial);
    pack_c(b0, &mut y0);
    pack_c(c0, &mut y0);
    let det0 = c0.determinant();
    if det0.norm() == 0.0 {
        return Err(VariationsError::SingularC { t: t0 });
    }
    let ld0 = det0.ln();
    y0.push(ld0.re);
    y0.push(ld0.im);
    let ke = traj.initial.kappa_eff;

    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        sys.rhs(t, &y[..ms], &mut dy[..ms]);
        let hzz = to_c(&hessian_eff(model, &y[..2 * n], ke, t));
        let b = unpack_c(n, &y[ms..ms + 2 * nn]);
        let c = unpack_c(n, &y[ms + 2 * nn..ms + 4 * nn]);
        let hpp = hzz.view((0, 0), (n, n));
        let hpx = hzz.view((0, n), (n, n));
        let hxp = hzz.view((n, 0), (n, n));
        let hxx = hzz.view((n, n), (n, n));
        let bdot = -(hxp * &b) - hxx * &c;
        let cdot = hpp * &b + hpx * &c;
        let tr = match c.clone().try_inverse() {
            Some(ci) => (&cdot * ci).trace(),
            None => Complex64::new(f64::NAN, f64::NAN),
        };
        let mut out = Vec::with_capacity(4 * nn + 2);
        pack_c(&bdot, &mut out);
        pack_c(&cdot, &mut out);
        out.push(tr.re);
        out.push(tr.im);
        dy[ms..].copy_from_slice(&out);
    };
    let mut ts: Vec<f64> = std::iter::once(t0)
        .chain(sample_times.iter().copied().filter(|&s| s > t0 && s < t1))
        .chain(std::iter::once(t1))
        .collect();
    ts.dedup();
    let dense = integrate(rhs, t0, &y0, t1, &ts, tol)?;
    let d0_initial = d0_of(b0, c0);
    let d0_pd = is_positive_definite(&d0_initial);
    let mut frames = Vec::with_capacity(ts.len());
    for &t in &ts {
        let y = dense.eval(t)?;
        let z = y[..2 * n].to_vec();
        let b = unpack_c(n, &y[ms..ms + 2 * nn]);
        let c = unpack_c(n, &y[ms + 2 * nn..ms + 4 * nn]);
        let log_det_c = Complex64::new(y[ms + 4 * nn], y[ms + 4 * nn + 1]);
        if !log_det_c.re.is_finite() || !log_det_c.im.is_finite() {
            return Err(if d0_pd {
                VariationsError::SingularC { t }
            } else {
                VariationsError::DegenerateGerm { t }
            });
        }
        let hzz = hessian_eff(model, &z, ke, t);
        frames.push(VariationalFrame { t, b, c, log_det_c, hzz, z });
    }
    Ok(VariationalRun { d0_tilde_initial: d0_tilde_of(b0, c0), d0_initial, frames })
}

/// Invariants recomputed at one frame and their drift from `t = t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Invariants {
    pub d0: CMat,
    pub d0_tilde: CMat,
    pub d0_drift: f64,
    pub d0_tilde_drift: f64,
}

pub fn conserved_invariants(run: &VariationalRun, frame: &VariationalFrame) -> Invariants {
    let d0 = frame.d0();
    let d0_tilde = frame.d0_tilde();
    Invariants {
        d0_drift: cmax(&(&d0 - &run.d0_initial)),
        d0_tilde_drift: cmax(&(&d0_tilde - &run.d0_tilde_initial)),
        d0,
        d0_tilde,
    }
}

impl VariationalRun {
    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    /// Largest drift of `D₀` and `D̃₀` over all samples.
    pub fn max_invariant_drift(&self) -> (f64, f64) {
        self.frames.iter().fold((0.0, 0.0), |(a, b), f| {
            let inv = conserved_invariants(self, f);
            (a.max(inv.d0_drift), b.max(inv.d0_tilde_drift))
        })
    }

    /// Largest drift of every pairwise skew product `{a_j, a_k}` and
    /// `{a_j, a_k*}` over all samples.
    pub fn max_skew_drift(&self) -> f64 {
        let n = self.frames[0].dim();
        let first = &self.frames[0];
        let mut worst: f64 = 0.0;
        for f in &self.frames {
            for j in 0..n {
                for k in 0..n {
                    let (aj0, ak0) = (first.column(j), first.column(k));
                    let (aj, ak) = (f.column(j), f.column(k));
                    let conj = |v: &[Complex64]| v.iter().map(|c| c.conj()).collect::<Vec<_>>();
                    worst = worst.max((skew_product(&aj, &ak) - skew_product(&aj0, &ak0)).norm());
                    worst = worst
                        .max((skew_product(&aj, &conj(&ak)) - skew_product(&aj0, &conj(&ak0))).norm());
                }
            }
        }
        worst
    }

    /// `max ‖Q − Qᵀ‖` and the smallest eigenvalue of `Im Q` over all samples.
    pub fn q_symmetry_and_positivity(&self) -> Result<(f64, f64), VariationsError> {
        let mut asym: f64 = 0.0;
        let mut min_eig = f64::INFINITY;
        for f in &self.frames {
            let q = f.q().ok_or(VariationsError::SingularC { t: f.t })?;
            asym = asym.max(cmax(&(&q - q.transpose())));
            let imq = q.map(|v| v.im);
            let sym = (&imq + imq.transpose()) * 0.5;
            min_eig = min_eig.min(sym.symmetric_eigenvalues().min());
        }
        Ok((asym, min_eig))
    }

    /// `max ‖Im Q − (C†)⁻¹ D₀ C⁻¹‖`.
    pub fn im_q_identity_residual(&self) -> Result<f64, VariationsError> {
        let mut worst: f64 = 0.0;
        for f in &self.frames {
            let ci = f.c.clone().try_inverse().ok_or(VariationsError::SingularC { t: f.t })?;
            let q = &f.b * &ci;
            let rhs = ci.adjoint() * f.d0() * &ci;
            worst = worst.max(cmax(&(q.map(|v| Complex64::new(v.im, 0.0)) - rhs)));
        }
        Ok(worst)
    }

    fn stencil(&self, i: usize) -> Result<f64, VariationsError> {
        if i < 2 || i + 2 >= self.frames.len() {
            return Err(VariationsError::InsufficientSamples(i));
        }
        let h = self.frames[i + 1].t - self.frames[i].t;
        for k in i - 2..i + 2 {
            let hk = self.frames[k + 1].t - self.frames[k].t;
            if (hk - h).abs() > 1e-9 * h.abs().max(1.0) {
                return Err(VariationsError::InsufficientSamples(i));
            }
        }
        Ok(h)
    }

    /// Fourth-order central difference of a matrix-valued function of the
    /// frame at sample `i`.
    fn central_diff<F>(&self, i: usize, f: F) -> Result<CMat, VariationsError>
    where
        F: Fn(&VariationalFrame) -> Result<CMat, VariationsError>,
    {
        let h = self.stencil(i)?;
        let v = |k: usize| f(&self.frames[k]);
        Ok((v(i - 2)? - v(i - 1)? * Complex64::from(8.0) + v(i + 1)? * Complex64::from(8.0) - v(i + 2)?)
            / Complex64::from(12.0 * h))
    }

    /// `Q` and `‖Q̇ + 𝔥_xx + Q𝔥_px + 𝔥_xpQ + Q𝔥_ppQ‖_max` at sample `i`.
    pub fn q_and_riccati_residual(&self, i: usize) -> Result<(CMat, f64), VariationsError> {
        let f = &self.frames[i];
        let q = f.q().ok_or(VariationsError::SingularC { t: f.t })?;
        let qdot = self.central_diff(i, |g| g.q().ok_or(VariationsError::SingularC { t: g.t }))?;
        let (hpp, hpx, hxp, hxx) = f.blocks();
        let r = qdot + hxx + &q * hpx + hxp * &q + &q * hpp * &q;
        Ok((q, cmax(&r)))
    }

    /// Largest Riccati residual over all interior samples.
    pub fn max_riccati_residual(&self) -> Result<f64, VariationsError> {
        (2..self.frames.len().saturating_sub(2))
            .map(|i| self.q_and_riccati_residual(i).map(|(_, r)| r))
            .try_fold(0.0f64, |a, r| r.map(|r| a.max(r)))
    }

    /// Compares `exp{−½∫Sp[𝔥_pp Q + 𝔥_px]dt}` (quadrature over the samples)
    /// with `√(det C(t0)/det C(t))` on the tracked branch, and the tracked
    /// `exp(log det C)` with the raw determinant. Returns the larger relative
    /// mismatch.
    pub fn liouville_mismatch(&self) -> Result<f64, VariationsError> {
        let ts = self.times();
        let mut integrand = Vec::with_capacity(ts.len());
        for f in &self.frames {
            let q = f.q().ok_or(VariationsError::SingularC { t: f.t })?;
            let (hpp, hpx, _, _) = f.blocks();
            integrand.push((hpp * q + hpx).trace());
        }
        let integral = cumulative(&ts, &integrand);
        let ld0 = self.frames[0].log_det_c;
        let mut worst: f64 = 0.0;
        for (f, s) in self.frames.iter().zip(&integral) {
            let lhs = (-0.5 * s).exp();
            let rhs = (0.5 * (ld0 - f.log_det_c)).exp();
            worst = worst.max((lhs - rhs).norm() / rhs.norm());
            let det = f.c.determinant();
            let tracked = f.log_det_c.exp();
            let branch_err = (tracked - det).norm() / det.norm();
            if branch_err > 1e-6 {
                return Err(VariationsError::BranchLost { t: f.t });
            }
            worst = worst.max(branch_err);
        }
        Ok(worst)
    }

    /// Residuals of the two quadratic relations between `B`, `C` and `D₀`
    /// (valid when `D₀` is real positive definite and `D̃₀ = 0`):
    /// `C*D₀⁻¹Bᵀ − CD₀⁻¹B† = BD₀⁻¹C† − B*D₀⁻¹Cᵀ = 2i` and
    /// `C*D₀⁻¹Cᵀ − CD₀⁻¹C† = BD₀⁻¹B† − B*D₀⁻¹Bᵀ = 0`.
    pub fn quadratic_relation_residuals(&self) -> f64 {
        let d0i = self.d0_initial.clone().try_inverse().expect("D0 invertible");
        let n = self.d0_initial.nrows();
        let two_i = CMat::identity(n, n) * (2.0 * I);
        let mut worst: f64 = 0.0;
        for f in &self.frames {
            let (b, c) = (&f.b, &f.c);
            let (bc, cc) = (b.conjugate(), c.conjugate());
            let r = [
                &cc * &d0i * b.transpose() - c * &d0i * b.adjoint() - &two_i,
                b * &d0i * c.adjoint() - &bc * &d0i * c.transpose() - &two_i,
                &cc * &d0i * c.transpose() - c * &d0i * c.adjoint(),
                b * &d0i * b.adjoint() - &bc * &d0i * b.transpose(),
            ];
            for m in r {
                worst = worst.max(cmax(&m));
            }
        }
        worst
    }

    /// Residual of `d/dt[D₀⁻¹B†(Bᵀ)⁻¹] = −2i B⁻¹𝔥_xx(B⁻¹)ᵀ` over interior
    /// samples, relative to the size of the right-hand side.
    pub fn b_inverse_flow_residual(&self) -> Result<f64, VariationsError> {
        let d0i = self.d0_initial.clone().try_inverse().expect("D0 invertible");
        let lhs_fn = |f: &VariationalFrame| {
            let bti = f.b.transpose().try_inverse().ok_or(VariationsError::SingularB { t: f.t })?;
            Ok(&d0i * f.b.adjoint() * bti)
        };
        let mut worst: f64 = 0.0;
        for i in 2..self.frames.len().saturating_sub(2) {
            let f = &self.frames[i];
            let lhs = self.central_diff(i, lhs_fn)?;
            let bi = f.b.clone().try_inverse().ok_or(VariationsError::SingularB { t: f.t })?;
            let (_, _, _, hxx) = f.blocks();
            let rhs = &bi * hxx * bi.transpose() * (-2.0 * I);
            worst = worst.max(cmax(&(lhs - &rhs)) / cmax(&rhs).max(1.0));
        }
        Ok(worst)
    }

    /// CSV of real/imaginary parts of `B`, `C`, `Q` and the invariant drifts.
    pub fn to_csv(&self) -> String {
        let n = self.frames[0].dim();
        let mut head = vec!["t".to_string()];
        for name in ["B", "C", "Q"] {
            for i in 0..n {
                for j in 0..n {
                    head.push(format!("re_{name}{}{}", i + 1, j + 1));
                    head.push(format!("im_{name}{}{}", i + 1, j + 1));
                }
            }
        }
        head.push("d0_drift".into());
        head.push("d0_tilde_drift".into());
        let mut out = head.join(",");
        out.push('\n');
        for f in &self.frames {
            let q = f.q().unwrap_or_else(|| CMat::from_element(n, n, Complex64::new(f64::NAN, f64::NAN)));
            let mut row = vec![format!("{:.17e}", f.t)];
            for m in [&f.b, &f.c, &q] {
                for i in 0..n {
                    for j in 0..n {
                        row.push(format!("{:.17e}", m[(i, j)].re));
                        row.push(format!("{:.17e}", m[(i, j)].im));
                    }
                }
            }
            let inv = conserved_invariants(self, f);
            row.push(format!("{:.6e}", inv.d0_drift));
            row.push(format!("{:.6e}", inv.d0_tilde_drift));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Blocks of the fundamental matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matriciant {
    pub lambda1: DMatrix<f64>,
    pub lambda2: DMatrix<f64>,
    pub lambda3: DMatrix<f64>,
    pub lambda4: DMatrix<f64>,
}

impl Matriciant {
    pub fn from_fundamental(a: &DMatrix<f64>) -> Self {
        let n = a.nrows() / 2;
        let blk = |r, c| a.view((r, c), (n, n)).into_owned();
        Self {
            lambda4: blk(0, 0).transpose(),
            lambda2: -blk(0, n).transpose(),
            lambda3: -blk(n, 0).transpose(),
            lambda1: blk(n, n).transpose(),
        }
    }

    pub fn to_fundamental(&self) -> DMatrix<f64> {
        let n = self.lambda1.nrows();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(&self.lambda4.transpose());
        a.view_mut((0, n), (n, n)).copy_from(&(-self.lambda2.transpose()));
        a.view_mut((n, 0), (n, n)).copy_from(&(-self.lambda3.transpose()));
        a.view_mut((n, n), (n, n)).copy_from(&self.lambda1.transpose());
        a
    }

    /// `(‖λ₁ᵀλ₄ − λ₃ᵀλ₂ − I‖, ‖λ₃λ₄ᵀ − λ₄λ₃ᵀ‖)`.
    pub fn identity_residuals(&self) -> (f64, f64) {
        let n = self.lambda1.nrows();
        let r1 = self.lambda1.transpose() * &self.lambda4 - self.lambda3.transpose() * &self.lambda2
            - DMatrix::identity(n, n);
        let r2 = &self.lambda3 * self.lambda4.transpose() - &self.lambda4 * self.lambda3.transpose();
        (r1.amax(), r2.amax())
    }

    /// `‖AᵀJA − J‖`.
    pub fn symplectic_residual(&self) -> f64 {
        let a = self.to_fundamental();
        let j = symplectic_j(self.lambda1.nrows());
        (a.transpose() * &j * &a - j).amax()
    }
}

/// Sampled fundamental matrix `A(t)` with `A(t0) = I`.
#[derive(Debug, Clone)]
pub struct MatriciantRun {
    pub times: Vec<f64>,
    pub fundamental: Vec<DMatrix<f64>>,
}

impl MatriciantRun {
    pub fn blocks(&self, i: usize) -> Matriciant {
        Matriciant::from_fundamental(&self.fundamental[i])
    }

    /// Propagator from sample `i` to sample `j`: `A(t_j) A(t_i)⁻¹`.
    pub fn between(&self, i: usize, j: usize) -> Matriciant {
        let ai = self.fundamental[i].clone().try_inverse().expect("fundamental matrix is invertible");
        Matriciant::from_fundamental(&(&self.fundamental[j] * ai))
    }
}

/// Integrates `Ȧ = J𝔥_zz A`, `A(t0) = I`, jointly with the trajectory.
pub fn integrate_matriciant(
    model: &dyn SymbolModel,
    traj: &Trajectory,
    t1: f64,
    sample_times: &[f64],
    tol: &Tolerances,
) -> Result<MatriciantRun, VariationsError> {
    let n = model.dim();
    let d = 2 * n;
    let sys = traj.system(model)?;
    let ms = sys.len();
    let t0 = traj.initial.t;
    let mut y0 = sys.pack(&traj.initial);
    y0.extend(DMatrix::<f64>::identity(d, d).iter());
    let ke = traj.initial.kappa_eff;
    let j = symplectic_j(n);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        sys.rhs(t, &y[..ms], &mut dy[..ms]);
        let m = hessian_eff(model, &y[..d], ke, t);
        let a = DMatrix::from_column_slice(d, d, &y[ms..]);
        dy[ms..].copy_from_slice((&j * m * a).as_slice());
    };
    let mut ts: Vec<f64> = std::iter::once(t0)
        .chain(sample_times.iter().copied().filter(|&s| s > t0 && s < t1))
        .chain(std::iter::once(t1))
        .collect();
    ts.dedup();
    let dense = integrate(rhs, t0, &y0, t1, &ts, tol)?;
    let mut fundamental = Vec::with_capacity(ts.len());
    for &t in &ts {
        let y = dense.eval(t)?;
        fundamental.push(DMatrix::from_column_slice(d, d, &y[ms..]));
    }
    Ok(MatriciantRun { times: ts, fundamental })
}

/// Checks `∫_s^t B̃⁻¹𝔥_xx(B̃⁻¹)ᵀdτ = (B₀⁻¹)ᵀλ₂λ₄⁻¹(B₀⁻¹)ᵀ` for the solution
/// with `B̃(s) = B₀ = B₀ᵀ`, `C̃(s) = 0`, with `s` the trajectory start.
/// Returns the max-norm residual at `t`.
pub fn degenerate_cauchy_residual(
    model: &dyn SymbolModel,
    traj: &Trajectory,
    b0: &CMat,
    t: f64,
    tol: &Tolerances,
) -> Result<f64, VariationsError> {
    let n = model.dim();
    let nn = n * n;
    let sys = traj.system(model)?;
    let ms = sys.len();
    let ke = traj.initial.kappa_eff;
    let mut y0 = sys.pack(&traj.initial);
    pack_c(b0, &mut y0);
    pack_c(&CMat::zeros(n, n), &mut y0);
    pack_c(&CMat::zeros(n, n), &mut y0);
    let rhs = |tt: f64, y: &[f64], dy: &mut [f64]| {
        sys.rhs(tt, &y[..ms], &mut dy[..ms]);
        let h = to_c(&hessian_eff(model, &y[..2 * n], ke, tt));
        let b = unpack_c(n, &y[ms..ms + 2 * nn]);
        let c = unpack_c(n, &y[ms + 2 * nn..ms + 4 * nn]);
        let (hpp, hpx) = (h.view((0, 0), (n, n)), h.view((0, n), (n, n)));
        let (hxp, hxx) = (h.view((n, 0), (n, n)), h.view((n, n), (n, n)));
        let bdot = -(hxp * &b) - hxx * &c;
        let cdot = hpp * &b + hpx * &c;
        let bi = b.try_inverse().unwrap_or_else(|| CMat::from_element(n, n, Complex64::new(f64::NAN, 0.0)));
        let integrand = &bi * hxx * bi.transpose();
        let mut out = Vec::with_capacity(6 * nn);
        pack_c(&bdot, &mut out);
        pack_c(&cdot, &mut out);
        pack_c(&integrand, &mut out);
        dy[ms..].copy_from_slice(&out);
    };
    let t0 = traj.initial.t;
    let sol = integrate(rhs, t0, &y0, t, &[], tol)?;
    let y = sol.last();
    let integral = unpack_c(n, &y[ms + 4 * nn..]);
    let mat = integrate_matriciant(model, traj, t, &[], tol)?;
    let lam = mat.blocks(mat.times.len() - 1);
    let l4i = lam.lambda4.clone().try_inverse().ok_or(VariationsError::SingularB { t })?;
    let b0it = b0.clone().try_inverse().ok_or(VariationsError::SingularB { t: t0 })?.transpose();
    let expected = &b0it * to_c(&(&lam.lambda2 * l4i)) * &b0it;
    Ok(cmax(&(integral - expected)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussKernelParams, HartreeModel, Kernel, PhasePoint};
    use crate::moments::{propagate_order2, MomentSet, TrajectoryState};
    use crate::quad::linspace;
    use proptest::prelude::*;

    fn c1(v: Complex64) -> CMat {
        CMat::from_element(1, 1, v)
    }

    fn tight() -> Tolerances {
        Tolerances::new(1e-13, 1e-13)
    }

    fn traj_1d(model: &dyn SymbolModel, p: f64, x: f64, sig: f64, t1: f64) -> Trajectory {
        let d2 = DMatrix::from_row_slice(2, 2, &[sig, 0.0, 0.0, sig]);
        let s = TrajectoryState::new(0.0, PhasePoint::new_1d(p, x), MomentSet::from_delta2(&d2), model.kappa(), 0.01)
            .unwrap();
        propagate_order2(model, &s, t1, &[], &tight(), false).unwrap()
    }

    fn gauss(v0: f64) -> HartreeModel {
        HartreeModel::gauss_1d(&GaussKernelParams { m: 1.0, gamma: 1.0, v0, kappa: 1.0 }).unwrap()
    }

    #[test]
    fn skew_product_examples() {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        assert_eq!(skew_product(&[one, zero], &[zero, one]), Complex64::new(-1.0, 0.0));
        let a = [Complex64::new(0.3, 1.2), Complex64::new(-0.7, 0.1)];
        assert_eq!(skew_product(&a, &a), zero);
        // {a, a*} with a = (b, 1) is −2i Im b.
        let b = Complex64::new(0.4, 1.5);
        let a = [b, one];
        let ac = [b.conj(), one];
        assert!((skew_product(&a, &ac) - Complex64::new(0.0, -3.0)).norm() < 1e-15);
    }

    #[test]
    fn free_particle_frame_is_linear_in_time() {
        let m = HartreeModel::free(1, 1.0);
        let tr = traj_1d(&m, 0.3, 0.0, 0.005, 3.0);
        let ts = linspace(0.0, 3.0, 13);
        let run = integrate_variations(&m, &tr, &c1(I), &c1(Complex64::from(1.0)), 3.0, &ts, &tight()).unwrap();
        for f in &run.frames {
            assert!((f.b[(0, 0)] - I).norm() < 1e-12);
            assert!((f.c[(0, 0)] - (1.0 + I * f.t)).norm() < 1e-12);
        }
        let inv = conserved_invariants(&run, &run.frames[0]);
        assert!((inv.d0[(0, 0)] - 1.0).norm() < 1e-15);
        assert!(inv.d0_tilde[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn bounded_branch_with_matched_b_rotates() {
        // V0 < 0 with ϰ = γ = m = 1 gives Ω = 1; b = iΩ makes C = e^{iΩt}.
        let m = gauss(-1.0);
        let tr = traj_1d(&m, 0.0, 0.0, 0.005, 10.0);
        let ts = linspace(0.0, 10.0, 41);
        let run = integrate_variations(&m, &tr, &c1(I), &c1(Complex64::from(1.0)), 10.0, &ts, &tight()).unwrap();
        for f in &run.frames {
            assert!((f.c[(0, 0)] - Complex64::from_polar(1.0, f.t)).norm() < 1e-9, "t={}", f.t);
        }
    }

    #[test]
    fn invariant_suite_on_gaussian_model() {
        for v0 in [-1.0, 1.0] {
            let m = gauss(v0);
            let t1 = 5.0;
            let tr = traj_1d(&m, 0.2, 0.1, 0.005, t1);
            let ts = linspace(0.0, t1, 1001);
            let b0 = c1(Complex64::new(0.3, 2.0));
            let run = integrate_variations(&m, &tr, &b0, &c1(Complex64::from(1.0)), t1, &ts, &tight()).unwrap();
            let (dd, ddt) = run.max_invariant_drift();
            assert!(dd < 1e-10 && ddt < 1e-10, "{dd} {ddt}");
            assert!(run.max_skew_drift() < 1e-10);
            let (asym, min_eig) = run.q_symmetry_and_positivity().unwrap();
            assert!(asym < 1e-10 && min_eig > 0.0);
            assert!(run.im_q_identity_residual().unwrap() < 1e-10);
            assert!(run.max_riccati_residual().unwrap() < 1e-6);
            assert!(run.liouville_mismatch().unwrap() < 1e-8);
            assert!(run.quadratic_relation_residuals() < 1e-9);
            assert!(run.b_inverse_flow_residual().unwrap() < 1e-6);
        }
    }

    #[test]
    fn two_dimensional_frame_keeps_its_invariants() {
        let model = HartreeModel::new(
            2,
            1.0,
            1.0,
            HartreeModel::kinetic(2, 1.0),
            Kernel::Gaussian { v0: -0.8, gamma: 1.1 },
        )
        .unwrap();
        let d2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.004, 0.006, 0.005, 0.003]));
        let s = TrajectoryState::new(
            0.0,
            PhasePoint::new(vec![0.2, -0.1], vec![0.0, 0.3]),
            MomentSet::from_delta2(&d2),
            1.0,
            0.01,
        )
        .unwrap();
        let tr = propagate_order2(&model, &s, 3.0, &[], &tight(), false).unwrap();
        let b0 = CMat::from_row_slice(2, 2, &[I * 1.5, Complex64::from(0.2), Complex64::from(0.2), I * 0.8]);
        let c0 = CMat::identity(2, 2);
        let ts = linspace(0.0, 3.0, 601);
        let run = integrate_variations(&model, &tr, &b0, &c0, 3.0, &ts, &tight()).unwrap();
        let (dd, ddt) = run.max_invariant_drift();
        assert!(dd < 1e-10 && ddt < 1e-10);
        let (asym, min_eig) = run.q_symmetry_and_positivity().unwrap();
        assert!(asym < 1e-10 && min_eig > 0.0);
        assert!(run.quadratic_relation_residuals() < 1e-9);
        assert!(run.liouville_mismatch().unwrap() < 1e-8);
        // det D0 = Π Im b_k for diagonal B0.
        let diag_b = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![I * 1.5, I * 0.8]));
        assert!((d0_of(&diag_b, &c0).determinant() - Complex64::from(1.2)).norm() < 1e-14);

        let mat = integrate_matriciant(&model, &tr, 3.0, &[1.0, 2.0], &tight()).unwrap();
        for i in 0..mat.times.len() {
            let l = mat.blocks(i);
            let (r1, r2) = l.identity_residuals();
            assert!(r1 < 1e-9 && r2 < 1e-9);
            assert!(l.symplectic_residual() < 1e-9);
        }
    }

    #[test]
    fn free_particle_matriciant() {
        let m = HartreeModel::free(1, 2.0);
        let tr = traj_1d(&m, 0.0, 0.0, 0.005, 2.0);
        let mat = integrate_matriciant(&m, &tr, 2.0, &[1.0], &tight()).unwrap();
        let l0 = mat.blocks(0);
        assert_eq!(l0.identity_residuals(), (0.0, 0.0));
        let l = mat.blocks(2);
        assert!((l.lambda4[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((l.lambda3[(0, 0)] + 2.0 / 2.0).abs() < 1e-12);
        let half = mat.between(1, 2);
        assert!((half.lambda3[(0, 0)] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cauchy_problem_identity() {
        for v0 in [-1.0, 1.0] {
            let m = gauss(v0);
            let tr = traj_1d(&m, 0.1, 0.0, 0.005, 1.0);
            let r = degenerate_cauchy_residual(&m, &tr, &c1(I * 1.3), 1.0, &tight()).unwrap();
            assert!(r < 1e-9, "{r}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn skew_products_are_conserved(
            br in -1.0f64..1.0, bi in 0.2f64..3.0, v0 in -2.0f64..2.0, p in -0.5f64..0.5
        ) {
            let m = gauss(v0);
            let tr = traj_1d(&m, p, 0.0, 0.005, 2.0);
            let ts = linspace(0.0, 2.0, 9);
            let b0 = c1(Complex64::new(br, bi));
            let run = integrate_variations(&m, &tr, &b0, &c1(Complex64::from(1.0)), 2.0, &ts, &tight()).unwrap();
            prop_assert!(run.max_skew_drift() < 1e-10);
        }
    }
}
