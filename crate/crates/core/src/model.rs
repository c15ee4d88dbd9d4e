//! Classical symbols of the Hartree-type operator: the Hamiltonian `H(z, t)`
//! and the interaction kernel `V(z, w, t)`, with analytic derivatives.
//!
//! Phase-space points are flat slices `z = [p_1..p_n, x_1..x_n]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiindex::{falling, MultiIndex};

pub const DEFAULT_MAX_ORDER: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("the kernel symbol needs a second phase point w")]
    MissingW,
    #[error("a second phase point w is only meaningful for the kernel symbol")]
    UnexpectedW,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("derivative order {order} exceeds the supported maximum {max}")]
    OrderTooHigh { order: usize, max: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite argument")]
    NonFinite,
}

/// Phase point `(p, x)`, momentum first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub p: Vec<f64>,
    pub x: Vec<f64>,
}

impl PhasePoint {
    pub fn new(p: Vec<f64>, x: Vec<f64>) -> Self {
        assert_eq!(p.len(), x.len(), "p and x must share a dimension");
        Self { p, x }
    }

    pub fn new_1d(p: f64, x: f64) -> Self {
        Self { p: vec![p], x: vec![x] }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Flat `[p.., x..]` vector.
    pub fn z(&self) -> Vec<f64> {
        self.p.iter().chain(&self.x).copied().collect()
    }

    pub fn from_z(z: &[f64]) -> Self {
        let n = z.len() / 2;
        Self { p: z[..n].to_vec(), x: z[n..].to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.x).all(|v| v.is_finite())
    }
}

/// Unit symplectic matrix `J = [[0, −I], [I, 0]]` of size `2n`.
pub fn symplectic_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

/// Which symbol to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    H,
    V,
}

/// Evaluator contract for the symbols. Implementors need not check the
/// derivative order; the free functions [`eval_symbol`] and
/// [`eval_derivative`] do.
pub trait SymbolModel: Send + Sync {
    /// Spatial dimension `n`.
    fn dim(&self) -> usize;
    fn max_order(&self) -> usize;
    fn mass(&self) -> f64;
    /// Coupling `ϰ` in front of the nonlocal term.
    fn kappa(&self) -> f64;
    fn h(&self, z: &[f64], t: f64) -> f64;
    fn v(&self, z: &[f64], w: &[f64], t: f64) -> f64;
    /// `∂^μ H / ∂z^μ`.
    fn h_deriv(&self, mu: &[usize], z: &[f64], t: f64) -> f64;
    /// `∂^{μ+ν} V / ∂z^μ ∂w^ν`.
    fn v_deriv(&self, mu: &[usize], nu: &[usize], z: &[f64], w: &[f64], t: f64) -> f64;
    /// True when `H` is at most quadratic and `V` at most quadratic in `(z, w)`.
    fn is_quadratic(&self) -> bool {
        false
    }
    fn describe(&self) -> String;
}

fn check_len(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn eval_symbol(
    model: &dyn SymbolModel,
    which: Which,
    z: &PhasePoint,
    w: Option<&PhasePoint>,
    t: f64,
) -> Result<f64, ModelError> {
    let n = model.dim();
    check_len(n, z.dim())?;
    if !t.is_finite() || !z.is_finite() {
        return Err(ModelError::NonFinite);
    }
    match (which, w) {
        (Which::H, None) => Ok(model.h(&z.z(), t)),
        (Which::H, Some(_)) => Err(ModelError::UnexpectedW),
        (Which::V, None) => Err(ModelError::MissingW),
        (Which::V, Some(w)) => {
            check_len(n, w.dim())?;
            Ok(model.v(&z.z(), &w.z(), t))
        }
    }
}

pub fn eval_derivative(
    model: &dyn SymbolModel,
    which: Which,
    mu: &MultiIndex,
    nu: Option<&MultiIndex>,
    z: &PhasePoint,
    w: Option<&PhasePoint>,
    t: f64,
) -> Result<f64, ModelError> {
    let n = model.dim();
    check_len(2 * n, mu.len())?;
    check_len(n, z.dim())?;
    let order = mu.order() + nu.map_or(0, |v| v.order());
    if order > model.max_order() {
        return Err(ModelError::OrderTooHigh { order, max: model.max_order() });
    }
    match which {
        Which::H => {
            if w.is_some() {
                return Err(ModelError::UnexpectedW);
            }
            if nu.is_some_and(|v| v.order() > 0) {
                return Err(ModelError::UnexpectedW);
            }
            Ok(model.h_deriv(&mu.0, &z.z(), t))
        }
        Which::V => {
            let w = w.ok_or(ModelError::MissingW)?;
            check_len(n, w.dim())?;
            let zero = MultiIndex::zero(2 * n);
            let nu = nu.unwrap_or(&zero);
            check_len(2 * n, nu.len())?;
            Ok(model.v_deriv(&mu.0, &nu.0, &z.z(), &w.z(), t))
        }
    }
}

/// Polynomial in a fixed number of real variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub nvars: usize,
    /// `(exponents, coefficient)` pairs.
    pub terms: Vec<(Vec<usize>, f64)>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: vec![] }
    }

    pub fn term(mut self, exps: Vec<usize>, coef: f64) -> Self {
        assert_eq!(exps.len(), self.nvars);
        if coef != 0.0 {
            self.terms.push((exps, coef));
        }
        self
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|(e, _)| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        self.deriv(&vec![0; self.nvars], v)
    }

    pub fn deriv(&self, mu: &[usize], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        'terms: for (exps, c) in &self.terms {
            let mut val = *c;
            for i in 0..self.nvars {
                if mu[i] > exps[i] {
                    continue 'terms;
                }
                val *= falling(exps[i], mu[i]) * v[i].powi((exps[i] - mu[i]) as i32);
            }
            acc += val;
        }
        acc
    }
}

/// Nonlocal kernel `V(z, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    None,
    /// `V0 · exp(−|x − y|² / (2γ²))`, independent of the momenta.
    Gaussian { v0: f64, gamma: f64 },
    /// Polynomial in the concatenated variables `(z, w)`.
    Polynomial(Polynomial),
}

/// Probabilists' Hermite polynomial `He_k(u)`.
pub fn hermite_he(k: usize, u: f64) -> f64 {
    let (mut a, mut b) = (1.0, u);
    if k == 0 {
        return a;
    }
    for j in 1..k {
        let c = u * b - j as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `d^k/du^k [V0 exp(−u²/(2γ²))]`.
pub fn gaussian_kernel_derivative(k: usize, u: f64, v0: f64, gamma: f64) -> f64 {
    let s = u / gamma;
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    v0 * sign * gamma.powi(-(k as i32)) * hermite_he(k, s) * (-0.5 * s * s).exp()
}

/// Polynomial Hamiltonian plus an optional kernel: the built-in models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HartreeModel {
    n: usize,
    mass: f64,
    kappa: f64,
    max_order: usize,
    hamiltonian: Polynomial,
    kernel: Kernel,
}

/// Parameters of the one-dimensional free particle with Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussKernelParams {
    pub m: f64,
    pub gamma: f64,
    pub v0: f64,
    pub kappa: f64,
}

impl GaussKernelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(ModelError::InvalidParameter("mass must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ModelError::InvalidParameter("kernel width must be positive".into()));
        }
        if !self.v0.is_finite() || !self.kappa.is_finite() {
            return Err(ModelError::InvalidParameter("kernel amplitude and coupling must be finite".into()));
        }
        Ok(())
    }
}

impl HartreeModel {
    pub fn new(
        n: usize,
        mass: f64,
        kappa: f64,
        hamiltonian: Polynomial,
        kernel: Kernel,
    ) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::InvalidParameter("dimension must be at least 1".into()));
        }
        if !(mass > 0.0) {
            return Err(ModelError::InvalidParameter("mass must be positive".into()));
        }
        check_len(2 * n, hamiltonian.nvars)?;
        match &kernel {
            Kernel::Gaussian { gamma, v0 } => {
                if !(*gamma > 0.0) || !v0.is_finite() {
                    return Err(ModelError::InvalidParameter(
                        "Gaussian kernel needs gamma > 0 and finite V0".into(),
                    ));
                }
            }
            Kernel::Polynomial(p) => check_len(4 * n, p.nvars)?,
            Kernel::None => {}
        }
        Ok(Self { n, mass, kappa, max_order: DEFAULT_MAX_ORDER, hamiltonian, kernel })
    }

    /// `Σ p_i² / 2m`.
    pub fn kinetic(n: usize, mass: f64) -> Polynomial {
        let mut h = Polynomial::zero(2 * n);
        for i in 0..n {
            let mut e = vec![0; 2 * n];
            e[i] = 2;
            h = h.term(e, 0.5 / mass);
        }
        h
    }

    /// Free particle, no interaction.
    pub fn free(n: usize, mass: f64) -> Self {
        Self::new(n, mass, 0.0, Self::kinetic(n, mass), Kernel::None).expect("valid free model")
    }

    /// Isotropic oscillator `p²/2m + mω²x²/2`, no interaction.
    pub fn harmonic(n: usize, mass: f64, omega: f64) -> Self {
        let mut h = Self::kinetic(n, mass);
        for i in 0..n {
            let mut e = vec![0; 2 * n];
            e[n + i] = 2;
            h = h.term(e, 0.5 * mass * omega * omega);
        }
        Self::new(n, mass, 0.0, h, Kernel::None).expect("valid oscillator")
    }

    /// One-dimensional `p²/2m + U(x)` with `U(x) = Σ_k coeffs[k] x^k`.
    pub fn with_potential_1d(mass: f64, coeffs: &[f64]) -> Result<Self, ModelError> {
        let mut h = Self::kinetic(1, mass);
        for (k, c) in coeffs.iter().enumerate() {
            h = h.term(vec![0, k], *c);
        }
        Self::new(1, mass, 0.0, h, Kernel::None)
    }

    /// One-dimensional oscillator with a cubic anharmonicity `ε x³/6`.
    pub fn anharmonic_1d(mass: f64, omega: f64, eps: f64) -> Self {
        Self::with_potential_1d(mass, &[0.0, 0.0, 0.5 * mass * omega * omega, eps / 6.0])
            .expect("valid anharmonic model")
    }

    /// Free particle with the Gaussian interaction kernel (1D).
    pub fn gauss_1d(params: &GaussKernelParams) -> Result<Self, ModelError> {
        params.validate()?;
        Self::new(
            1,
            params.m,
            params.kappa,
            Self::kinetic(1, params.m),
            Kernel::Gaussian { v0: params.v0, gamma: params.gamma },
        )
    }

    /// Quadratic Hamiltonian with a quadratic attractive/repulsive kernel
    /// `V = ½ a |x − y|²`: an exactly solvable cross-check model.
    pub fn quadratic_with_polynomial_kernel(
        n: usize,
        mass: f64,
        omega: f64,
        kappa: f64,
        a: f64,
    ) -> Self {
        let base = Self::harmonic(n, mass, omega);
        let mut k = Polynomial::zero(4 * n);
        for i in 0..n {
            // (x_i − y_i)² = x_i² − 2 x_i y_i + y_i²; x_i at slot n+i, y_i at 3n+i.
            let mut e = vec![0; 4 * n];
            e[n + i] = 2;
            k = k.term(e.clone(), 0.5 * a);
            e[n + i] = 1;
            e[3 * n + i] = 1;
            k = k.term(e, -a);
            let mut e = vec![0; 4 * n];
            e[3 * n + i] = 2;
            k = k.term(e, 0.5 * a);
        }
        Self::new(n, mass, kappa, base.hamiltonian, Kernel::Polynomial(k)).expect("valid model")
    }

    pub fn with_max_order(mut self, max_order: usize) -> Self {
        self.max_order = max_order;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn hamiltonian(&self) -> &Polynomial {
        &self.hamiltonian
    }

    /// Coefficients of the position-only part of `H` in 1D, as `U(x) = Σ c_k x^k`.
    /// `None` when `H` is not of the form `p²/2m + U(x)`.
    pub fn potential_coeffs_1d(&self) -> Option<Vec<f64>> {
        if self.n != 1 {
            return None;
        }
        let mut coeffs = vec![0.0; self.hamiltonian.degree() + 1];
        let mut kinetic = 0.0;
        for (e, c) in &self.hamiltonian.terms {
            match (e[0], e[1]) {
                (0, k) => coeffs[k] += c,
                (2, 0) => kinetic += c,
                _ => return None,
            }
        }
        if (kinetic - 0.5 / self.mass).abs() > 1e-14 * kinetic.abs().max(1.0) {
            return None;
        }
        Some(coeffs)
    }
}

impl SymbolModel for HartreeModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn mass(&self) -> f64 {
        self.mass
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }

    fn h(&self, z: &[f64], _t: f64) -> f64 {
        self.hamiltonian.eval(z)
    }

    fn v(&self, z: &[f64], w: &[f64], t: f64) -> f64 {
        let zero = vec![0; 2 * self.n];
        self.v_deriv(&zero, &zero, z, w, t)
    }

    fn h_deriv(&self, mu: &[usize], z: &[f64], _t: f64) -> f64 {
        self.hamiltonian.deriv(mu, z)
    }

    fn v_deriv(&self, mu: &[usize], nu: &[usize], z: &[f64], w: &[f64], _t: f64) -> f64 {
        let n = self.n;
        match &self.kernel {
            Kernel::None => 0.0,
            Kernel::Gaussian { v0, gamma } => {
                if mu[..n].iter().chain(&nu[..n]).any(|&a| a > 0) {
                    return 0.0;
                }
                let mut val = 1.0;
                for i in 0..n {
                    let (a, b) = (mu[n + i], nu[n + i]);
                    let u = z[n + i] - w[n + i];
                    let sign = if b % 2 == 0 { 1.0 } else { -1.0 };
                    val *= sign * gaussian_kernel_derivative(a + b, u, 1.0, *gamma);
                }
                v0 * val
            }
            Kernel::Polynomial(p) => {
                let vars: Vec<f64> = z.iter().chain(w).copied().collect();
                let idx: Vec<usize> = mu.iter().chain(nu).copied().collect();
                p.deriv(&idx, &vars)
            }
        }
    }

    fn is_quadratic(&self) -> bool {
        self.hamiltonian.degree() <= 2
            && match &self.kernel {
                Kernel::None => true,
                Kernel::Gaussian { .. } => false,
                Kernel::Polynomial(p) => p.degree() <= 2,
            }
    }

    fn describe(&self) -> String {
        let k = match &self.kernel {
            Kernel::None => "no kernel".to_string(),
            Kernel::Gaussian { v0, gamma } => format!("Gaussian kernel V0={v0}, gamma={gamma}"),
            Kernel::Polynomial(p) => format!("polynomial kernel of degree {}", p.degree()),
        };
        format!(
            "n={}, m={}, kappa={}, H of degree {}, {}",
            self.n,
            self.mass,
            self.kappa,
            self.hamiltonian.degree(),
            k
        )
    }
}

/// Axis-aligned box of phase points sampled on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
}

impl SampleBox {
    pub fn cube(dim: usize, half_width: f64, points_per_axis: usize) -> Self {
        Self { lo: vec![-half_width; dim], hi: vec![half_width; dim], points_per_axis }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.lo.len();
        let k = self.points_per_axis.max(1);
        let total = k.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|i| {
                        let j = idx % k;
                        idx /= k;
                        if k == 1 {
                            0.5 * (self.lo[i] + self.hi[i])
                        } else {
                            self.lo[i] + (self.hi[i] - self.lo[i]) * j as f64 / (k - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Worst derivative mismatch found at one order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub order: usize,
    pub max_rel_error: f64,
    /// Largest analytic magnitude seen: a polynomial-growth spot check, and
    /// exactly zero for derivatives that vanish identically.
    pub max_abs_value: f64,
    pub worst: Option<(Which, MultiIndex, MultiIndex)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub per_order: Vec<OrderReport>,
    pub tolerance: f64,
    pub failures: Vec<(Which, MultiIndex, MultiIndex, f64)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn order(&self, k: usize) -> Option<&OrderReport> {
        self.per_order.iter().find(|r| r.order == k)
    }
}

const FD_STEP: f64 = 1e-4;

fn fd4<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Compares every analytic derivative with a fourth-order central difference
/// of the derivative one order lower. The error measure is
/// `|analytic − fd| / max(|analytic|, 1)`.
pub fn validate_derivatives(
    model: &dyn SymbolModel,
    sample_box: &SampleBox,
    tolerance: f64,
) -> ValidationReport {
    let n = model.dim();
    let d = 2 * n;
    let zpts = sample_box.points();
    let max = model.max_order();
    let mut per_order: Vec<OrderReport> = (0..=max)
        .map(|order| OrderReport { order, max_rel_error: 0.0, max_abs_value: 0.0, worst: None })
        .collect();
    let mut worst_per_index: Vec<(Which, MultiIndex, MultiIndex, f64)> = Vec::new();
    let zero = MultiIndex::zero(d);
    let mut record = |which: Which, mu: &MultiIndex, nu: &MultiIndex, analytic: f64, fd: Option<f64>| {
        let order = mu.order() + nu.order();
        let rep = &mut per_order[order];
        rep.max_abs_value = rep.max_abs_value.max(analytic.abs());
        if let Some(fd) = fd {
            let err = (analytic - fd).abs() / analytic.abs().max(1.0);
            if err > rep.max_rel_error {
                rep.max_rel_error = err;
                rep.worst = Some((which, mu.clone(), nu.clone()));
            }
            if err > tolerance && !worst_per_index.iter().any(|(w, m, v, _)| *w == which && m == mu && v == nu) {
                worst_per_index.push((which, mu.clone(), nu.clone(), err));
            }
        }
    };

    for mu in MultiIndex::all_in_range(d, 0, max) {
        for z in &zpts {
            let a = model.h_deriv(&mu.0, z, 0.0);
            let fd = mu.0.iter().position(|&k| k > 0).map(|i| {
                let lower = mu.checked_sub(&MultiIndex::unit(d, i)).unwrap();
                fd4(
                    |s| {
                        let mut zz = z.clone();
                        zz[i] += s;
                        model.h_deriv(&lower.0, &zz, 0.0)
                    },
                    FD_STEP,
                )
            });
            record(Which::H, &mu, &zero, a, fd);
        }
    }

    // The kernel is checked on pairs (z, w) drawn from a coarser grid to keep
    // the cost manageable.
    let coarse = SampleBox {
        points_per_axis: sample_box.points_per_axis.clamp(1, 3),
        ..sample_box.clone()
    }
    .points();
    for total in 0..=max {
        for joint in MultiIndex::all_of_order(2 * d, total) {
            let mu = MultiIndex(joint.0[..d].to_vec());
            let nu = MultiIndex(joint.0[d..].to_vec());
            for z in &coarse {
                for w in &coarse {
                    let a = model.v_deriv(&mu.0, &nu.0, z, w, 0.0);
                    let fd = joint.0.iter().position(|&k| k > 0).map(|i| {
                        let lower = joint.checked_sub(&MultiIndex::unit(2 * d, i)).unwrap();
                        let (lmu, lnu) = (&lower.0[..d], &lower.0[d..]);
                        fd4(
                            |s| {
                                let (mut zz, mut ww) = (z.clone(), w.clone());
                                if i < d {
                                    zz[i] += s;
                                } else {
                                    ww[i - d] += s;
                                }
                                model.v_deriv(lmu, lnu, &zz, &ww, 0.0)
                            },
                            FD_STEP,
                        )
                    });
                    record(Which::V, &mu, &nu, a, fd);
                }
            }
        }
    }
    ValidationReport { per_order, tolerance, failures: worst_per_index }
}
