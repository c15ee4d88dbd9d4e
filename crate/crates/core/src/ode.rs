//! Adaptive embedded Runge–Kutta 5(4) integration (Dormand–Prince pair) with
//! cubic Hermite dense output.
//!
//! States are flat `f64` slices; complex quantities are packed as interleaved
//! real and imaginary parts by the callers.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
    /// Upper bound on the step, which also bounds the dense-output error.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-10,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }
}

impl Tolerances {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Self {
            atol,
            rtol,
            ..Self::default()
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },
    #[error("maximum number of steps exceeded at t = {t}")]
    MaxSteps { t: f64 },
    #[error("time {t} outside the integrated interval [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("integration interval must be increasing (t0 = {t0}, t1 = {t1})")]
    BadInterval { t0: f64, t1: f64 },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Accepted steps of an integration, evaluable anywhere in the covered interval.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    ts: Vec<f64>,
    ys: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().expect("solution has at least one knot")
    }

    pub fn knots(&self) -> &[f64] {
        &self.ts
    }

    pub fn n_steps(&self) -> usize {
        self.ts.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.ys[0].len()
    }

    /// Final state.
    pub fn last(&self) -> &[f64] {
        self.ys.last().expect("solution has at least one knot")
    }

    /// State at `t`; exact at knots, cubic Hermite in between.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        let (start, end) = (self.t_start(), self.t_end());
        let slack = 1e-12 * (1.0 + end.abs());
        if !(t >= start - slack && t <= end + slack) {
            return Err(OdeError::OutOfRange { t, start, end });
        }
        let t = t.clamp(start, end);
        let i = match self.ts.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(k) => {
                out.copy_from_slice(&self.ys[k]);
                return Ok(());
            }
            Err(k) => k.saturating_sub(1).min(self.ts.len() - 2),
        };
        let (t0, t1) = (self.ts[i], self.ts[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (y0, y1, f0, f1) = (&self.ys[i], &self.ys[i + 1], &self.fs[i], &self.fs[i + 1]);
        for k in 0..out.len() {
            out[k] = h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k];
        }
        Ok(())
    }

    /// Time derivative at `t` from the Hermite interpolant.
    pub fn eval_derivative(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let (start, end) = (self.t_start(), self.t_end());
        if !(t >= start && t <= end) {
            return Err(OdeError::OutOfRange { t, start, end });
        }
        if let Ok(k) = self.ts.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            return Ok(self.fs[k].clone());
        }
        let i = self.ts.partition_point(|&x| x < t).saturating_sub(1).min(self.ts.len() - 2);
        let (t0, t1) = (self.ts[i], self.ts[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let d00 = 6.0 * s * (s - 1.0) / h;
        let d10 = (1.0 - s) * (1.0 - 3.0 * s);
        let d01 = -d00;
        let d11 = s * (3.0 * s - 2.0);
        let (y0, y1, f0, f1) = (&self.ys[i], &self.ys[i + 1], &self.fs[i], &self.fs[i + 1]);
        Ok((0..y0.len())
            .map(|k| d00 * y0[k] + d10 * f0[k] + d01 * y1[k] + d11 * f1[k])
            .collect())
    }
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], tol: &Tolerances) -> f64 {
    let n = y0.len().max(1) as f64;
    let sum: f64 = y0
        .iter()
        .zip(y1)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = tol.atol + tol.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], tol: &Tolerances, span: f64) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len().max(1) as f64;
    let sc: Vec<f64> = y0.iter().map(|y| tol.atol + tol.rtol * y.abs()).collect();
    let d0 = (y0.iter().zip(&sc).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(t0 + h0, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1`, landing exactly on every time
/// in `stops` that lies inside the interval.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    stops: &[f64],
    tol: &Tolerances,
) -> Result<DenseSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t1 >= t0) {
        return Err(OdeError::BadInterval { t0, t1 });
    }
    let dim = y0.len();
    let mut f0 = vec![0.0; dim];
    f(t0, y0, &mut f0);
    let mut sol = DenseSolution {
        ts: vec![t0],
        ys: vec![y0.to_vec()],
        fs: vec![f0.clone()],
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let mut targets: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < t1).collect();
    targets.push(t1);
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    targets.dedup();

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = initial_step(&mut f, t0, y0, &f0, tol, t1 - t0).min(tol.h_max);
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut target_idx = 0;
    let mut steps = 0usize;
    let mut last_rejected = false;

    while target_idx < targets.len() {
        let target = targets[target_idx];
        if steps >= tol.max_steps {
            return Err(OdeError::MaxSteps { t });
        }
        let remaining = target - t;
        let (h_try, hits) = if h >= remaining * (1.0 - 1e-12) {
            (remaining, true)
        } else {
            (h, false)
        };
        if h_try < tol.h_min && !hits {
            return Err(OdeError::StepUnderflow { t, h: h_try });
        }
        k[0].copy_from_slice(&f0);
        for i in 0..dim {
            ytmp[i] = y[i] + h_try * A21 * k[0][i];
        }
        f(t + C2 * h_try, &ytmp, &mut k[1]);
        for i in 0..dim {
            ytmp[i] = y[i] + h_try * (A31 * k[0][i] + A32 * k[1][i]);
        }
        f(t + C3 * h_try, &ytmp, &mut k[2]);
        for i in 0..dim {
            ytmp[i] = y[i] + h_try * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        f(t + C4 * h_try, &ytmp, &mut k[3]);
        for i in 0..dim {
            ytmp[i] = y[i]
                + h_try * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        f(t + C5 * h_try, &ytmp, &mut k[4]);
        for i in 0..dim {
            ytmp[i] = y[i]
                + h_try
                    * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i]
                        + A65 * k[4][i]);
        }
        f(t + h_try, &ytmp, &mut k[5]);
        for i in 0..dim {
            ynew[i] = y[i]
                + h_try
                    * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        let t_new = if hits { target } else { t + h_try };
        f(t_new, &ynew, &mut k[6]);
        for i in 0..dim {
            err[i] = h_try
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        steps += 1;
        if ynew.iter().any(|v| !v.is_finite()) {
            if h_try <= tol.h_min {
                return Err(OdeError::NonFinite { t });
            }
            h = 0.25 * h_try;
            last_rejected = true;
            continue;
        }
        let en = error_norm(&y, &ynew, &err, tol);
        if en <= 1.0 {
            t = t_new;
            y.copy_from_slice(&ynew);
            f0.copy_from_slice(&k[6]);
            sol.ts.push(t);
            sol.ys.push(y.clone());
            sol.fs.push(f0.clone());
            let mut fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            // A step shortened to land on a target does not shrink the next step.
            let h_base = if hits { h.max(h_try) } else { h_try };
            h = (h_base * fac).min(tol.h_max);
            last_rejected = false;
            if hits {
                target_idx += 1;
            }
        } else {
            let fac = (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
            h = h_try * fac;
            last_rejected = true;
            if h < tol.h_min {
                return Err(OdeError::StepUnderflow { t, h });
            }
        }
    }
    Ok(sol)
}
