//! Per-ħ experiment runs. Each mode writes its files into one directory per
//! ħ value and returns a JSON summary for the manifest.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::{json, Value};

use tcs_core::gauss1d::{superposition_experiment, GaussExperiment, SuperpositionOptions};
use tcs_core::green::{apply_kernel, kernel_order0, GreenError, Order0Kernel};
use tcs_core::model::{GaussKernelParams, HartreeModel, PhasePoint};
use tcs_core::moments::{
    init_from_wavefunction, propagate_order2, propagate_order_n_1d, MomentSet, Trajectory, TrajectoryState,
};
use tcs_core::ode::Tolerances;
use tcs_core::oracle::{evolve_to_times, fidelity, GridSpec, GridWaveFunction, SplitStepConfig};
use tcs_core::quad::linspace;
use tcs_core::scaling::fit_power_law;
use tcs_core::states::{action_series, project_onto_fock, state_grid, CoherentState};
use tcs_core::variations::{integrate_variations, CMat, VariationalRun};

use crate::config::{complex, fock_coefficients, ConfigError, ExperimentConfig, ModelConfig, Mode, StateConfig};
use crate::output::{write_table, write_text};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure at hbar = {hbar}: {message}")]
    Numerical { hbar: f64, message: String },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical { .. } => 3,
            RunError::Io { .. } => 1,
        }
    }
}

/// Trajectory samples per unit time, on top of the output times.
const SAMPLES_PER_UNIT: f64 = 200.0;
/// Largest Fock mass the initial projection may lose.
const PROJECTION_LOSS_LIMIT: f64 = 1e-6;
/// Errors below this are treated as rounding noise in sweeps.
const MACHINE_FLOOR: f64 = 1e-12;

/// Fixed numerical settings not exposed in the config, for the manifest.
pub fn fixed_settings(cfg: &ExperimentConfig) -> Value {
    let t = Tolerances::new(cfg.tolerances.ode_atol, cfg.tolerances.ode_rtol);
    json!({
        "ode": {"atol": t.atol, "rtol": t.rtol, "h_min": t.h_min, "h_max": finite(t.h_max), "max_steps": t.max_steps},
        "trajectory_samples_per_unit_time": SAMPLES_PER_UNIT,
        "projection_loss_limit": PROJECTION_LOSS_LIMIT,
        "machine_floor": MACHINE_FLOOR,
    })
}

/// Everything one ħ value needs: model, grid, initial wavefunction.
pub struct Case<'a> {
    pub cfg: &'a ExperimentConfig,
    pub hbar: f64,
    pub model: HartreeModel,
    pub kappa: f64,
    pub psi0: GridWaveFunction,
    pub times: Vec<f64>,
    pub tol: Tolerances,
    pub dir: PathBuf,
}

fn numerical(hbar: f64) -> impl Fn(String) -> RunError {
    move |message| RunError::Numerical { hbar, message }
}

macro_rules! num {
    ($hbar:expr, $e:expr) => {
        $e.map_err(|e| RunError::Numerical { hbar: $hbar, message: e.to_string() })
    };
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<HartreeModel, String> {
    match &cfg.model {
        ModelConfig::Gauss { m, gamma, v0, kappa } => {
            HartreeModel::gauss_1d(&GaussKernelParams { m: *m, gamma: *gamma, v0: *v0, kappa: *kappa })
                .map_err(|e| e.to_string())
        }
        ModelConfig::Polynomial { m, coeffs } => {
            HartreeModel::with_potential_1d(*m, coeffs).map_err(|e| e.to_string())
        }
    }
}

fn coupling(cfg: &ExperimentConfig) -> f64 {
    match cfg.model {
        ModelConfig::Gauss { kappa, .. } => kappa,
        ModelConfig::Polynomial { .. } => 0.0,
    }
}

fn kernel_width(cfg: &ExperimentConfig) -> f64 {
    match cfg.model {
        ModelConfig::Gauss { gamma, .. } => gamma,
        ModelConfig::Polynomial { .. } => 1.0,
    }
}

pub fn oracle_config(cfg: &ExperimentConfig) -> SplitStepConfig {
    let (kappa, v0, external) = match &cfg.model {
        ModelConfig::Gauss { kappa, v0, .. } => (*kappa, *v0, Vec::new()),
        ModelConfig::Polynomial { coeffs, .. } => (0.0, 0.0, coeffs.clone()),
    };
    SplitStepConfig {
        dt: cfg.tolerances.dt,
        steps: 0,
        kappa,
        gamma: kernel_width(cfg),
        v0,
        absorbing_width: 0.0,
        external,
        record_every: 0,
    }
}

/// Germ state at `t = 0`: center `(p0, x0)`, `B = m b`, `C = 1`.
pub fn germ_state(cfg: &ExperimentConfig, hbar: f64, fock: Vec<Complex64>) -> CoherentState {
    let m = cfg.model.mass();
    let b = complex(cfg.initial.b);
    let one = |v: Complex64| CMat::from_element(1, 1, v);
    CoherentState {
        t: 0.0,
        hbar,
        z: PhasePoint::new_1d(cfg.initial.p0, cfg.initial.x0),
        action: 0.0,
        phi1: 0.0,
        q: one(b),
        b: one(b * m),
        c: one(Complex64::new(1.0, 0.0)),
        d0: one(Complex64::from(m * b.im)),
        log_det_c: Complex64::default(),
        fock,
    }
}

/// Grid from the config, or sized from a second-order run started at the
/// germ moments widened by the highest Fock index.
fn choose_grid(cfg: &ExperimentConfig, model: &HartreeModel, hbar: f64, tol: &Tolerances) -> Result<GridSpec, String> {
    if let Some(g) = &cfg.grid {
        return Ok(GridSpec { x_min: g.x_min, x_max: g.x_max, n: g.n });
    }
    let coeffs = fock_coefficients(&cfg.initial.state).expect("Fock-basis state");
    let top = coeffs.iter().rposition(|c| c.norm() > 0.0).unwrap_or(0) as f64;
    let (m, b) = (cfg.model.mass(), complex(cfg.initial.b));
    let d0 = m * b.im;
    let w = 2.0 * top + 1.0;
    let off = w * hbar * m * b.re / (2.0 * d0);
    let pp = w * hbar * m * m * b.norm_sqr() / (2.0 * d0);
    let d2 = MomentSet::from_delta2(&DMatrix::from_row_slice(2, 2, &[pp, off, off, w * hbar / (2.0 * d0)]));
    let y0 = TrajectoryState::new(
        0.0,
        PhasePoint::new_1d(cfg.initial.p0, cfg.initial.x0),
        d2,
        coupling(cfg),
        hbar,
    )
    .map_err(|e| e.to_string())?;
    let ts = linspace(0.0, cfg.t_end, 201);
    let traj = propagate_order2(model, &y0, cfg.t_end, &ts, tol, false).map_err(|e| e.to_string())?;
    let (mut lo, mut hi, mut sx, mut sp, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64, 0.0f64);
    for s in &traj.samples {
        let d = s.moments.delta2();
        lo = lo.min(s.z.x[0]);
        hi = hi.max(s.z.x[0]);
        pmax = pmax.max(s.z.p[0].abs());
        sp = sp.max(d[(0, 0)]);
        sx = sx.max(d[(1, 1)]);
    }
    GridSpec::auto(lo, hi, sx, sp, pmax, hbar, kernel_width(cfg)).map_err(|e| e.to_string())
}

/// Reads an `x,re,im` table on a uniform grid.
pub fn read_grid_file(path: &Path, hbar: f64, mass: f64) -> Result<GridWaveFunction, ConfigError> {
    let bad = |message: String| ConfigError::Field { field: "initial.state".into(), message };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let mut xs = Vec::new();
    let mut samples = Vec::new();
    for row in reader.deserialize::<(f64, f64, f64)>() {
        let (x, re, im) = row.map_err(|e| bad(format!("{}: {e}", path.display())))?;
        xs.push(x);
        samples.push(Complex64::new(re, im));
    }
    if xs.len() < 16 {
        return Err(bad(format!("{} holds {} rows, at least 16 are needed", path.display(), xs.len())));
    }
    let dx = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    let uniform = xs.iter().enumerate().all(|(j, x)| (x - (xs[0] + j as f64 * dx)).abs() <= 1e-9 * dx.max(x.abs()));
    if !(dx > 0.0) || !uniform {
        return Err(bad(format!("{} is not sampled on a uniform ascending grid", path.display())));
    }
    GridWaveFunction::new(xs[0], dx, hbar, mass, samples).map_err(|e| bad(format!("{}: {e}", path.display())))
}

impl<'a> Case<'a> {
    pub fn new(cfg: &'a ExperimentConfig, base: &Path, hbar: f64, dir: PathBuf) -> Result<Self, RunError> {
        let err = numerical(hbar);
        let model = build_model(cfg).map_err(&err)?;
        let tol = Tolerances::new(cfg.tolerances.ode_atol, cfg.tolerances.ode_rtol);
        let mass = cfg.model.mass();
        let psi0 = match &cfg.initial.state {
            StateConfig::GridFile(p) => read_grid_file(&base.join(p), hbar, mass)?,
            s => {
                let spec = choose_grid(cfg, &model, hbar, &tol).map_err(&err)?;
                let germ = germ_state(cfg, hbar, fock_coefficients(s).expect("Fock-basis state"));
                num!(hbar, state_grid(&germ, &spec, mass))?
            }
        };
        Ok(Self { cfg, hbar, model, kappa: coupling(cfg), psi0, times: cfg.times(), tol, dir })
    }

    fn sample_times(&self) -> Vec<f64> {
        let n = ((self.cfg.t_end * SAMPLES_PER_UNIT).ceil() as usize).max(20);
        let mut ts = linspace(0.0, self.cfg.t_end, n + 1);
        ts.extend(&self.times);
        ts.sort_by(|a, b| a.total_cmp(b));
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        ts
    }

    fn index_of(ts: &[f64], t: f64) -> usize {
        ts.iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .expect("output times are sample times")
    }

    fn trajectory(&self, ts: &[f64]) -> Result<Trajectory, RunError> {
        let y0 = num!(self.hbar, init_from_wavefunction(&self.psi0, self.cfg.order, self.kappa))?;
        if self.cfg.order == 2 {
            num!(self.hbar, propagate_order2(&self.model, &y0, self.cfg.t_end, ts, &self.tol, true))
        } else {
            num!(self.hbar, propagate_order_n_1d(&self.model, &y0, self.cfg.order, self.cfg.t_end, ts, &self.tol))
        }
    }

    fn variations(&self, traj: &Trajectory, ts: &[f64]) -> Result<VariationalRun, RunError> {
        let m = self.cfg.model.mass();
        let b0 = CMat::from_element(1, 1, complex(self.cfg.initial.b) * m);
        let c0 = CMat::from_element(1, 1, Complex64::new(1.0, 0.0));
        num!(self.hbar, integrate_variations(&self.model, traj, &b0, &c0, self.cfg.t_end, ts, &self.tol))
    }

    fn oracle(&self) -> Result<Vec<GridWaveFunction>, RunError> {
        num!(self.hbar, evolve_to_times(&self.psi0, &oracle_config(self.cfg), &self.times, self.cfg.tolerances.dt))
    }

    /// Semiclassical wavefunctions at the output times: the initial packet
    /// is projected onto the Fock basis of the frame at `t = 0` and carried
    /// along with the moving basis.
    fn semiclassical(&self) -> Result<Semiclassical, RunError> {
        let ts = self.sample_times();
        let traj = self.trajectory(&ts)?;
        let run = self.variations(&traj, &ts)?;
        let actions = num!(self.hbar, action_series(&self.model, &traj))?;
        let state = |i: usize| {
            num!(self.hbar, CoherentState::from_frame(&run.frames[i], &run.d0_initial, self.hbar, actions[i]))
        };
        let start = state(0)?;
        let coeffs = num!(self.hbar, project_onto_fock(&start, &self.psi0, self.cfg.tolerances.kmax))?;
        let kept: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        let loss = (self.psi0.norm_sq() - kept).abs() / self.psi0.norm_sq();
        if loss > PROJECTION_LOSS_LIMIT {
            return Err(numerical(self.hbar)(format!(
                "Fock projection with kmax = {} misses mass {loss:e}; raise tolerances.kmax",
                self.cfg.tolerances.kmax
            )));
        }
        let spec = self.psi0.spec();
        let mut psis = Vec::with_capacity(self.times.len());
        for &t in &self.times {
            let s = state(Self::index_of(&ts, t))?.with_fock(coeffs.clone());
            psis.push(num!(self.hbar, state_grid(&s, &spec, self.cfg.model.mass()))?);
        }
        Ok(Semiclassical { ts, traj, psis, loss })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Grid actually used, so that every table can be regenerated from the
    /// manifest.
    pub fn grid_json(&self) -> Value {
        let g = self.psi0.spec();
        json!({"x_min": g.x_min, "x_max": g.x_max, "n": g.n})
    }

    pub fn run(&self, mode: Mode) -> Result<Value, RunError> {
        std::fs::create_dir_all(&self.dir).map_err(|source| RunError::Io { path: self.dir.clone(), source })?;
        let mut v = match mode {
            Mode::Simulate => self.simulate(),
            Mode::Semiclassical => self.run_semiclassical(),
            Mode::Variations => self.run_variations(),
            Mode::Green => self.green(),
            Mode::Compare => self.compare().map(|c| c.summary),
            Mode::Superpose => self.superpose(),
            Mode::Sweep => self.compare().map(|c| c.summary),
        }?;
        v["grid"] = self.grid_json();
        Ok(v)
    }

    fn simulate(&self) -> Result<Value, RunError> {
        write_text(&self.file("psi_initial.csv"), &self.psi0.to_csv(0.0))?;
        let psis = self.oracle()?;
        let mut rows = vec![moment_row(0.0, &self.psi0)];
        for (i, (t, psi)) in self.times.iter().zip(&psis).enumerate() {
            write_text(&self.file(&format!("psi_{i:03}.csv")), &psi.to_csv(*t))?;
            rows.push(moment_row(*t, psi));
        }
        write_table(&self.file("oracle.csv"), &["t", "norm", "p", "x", "sigma_pp", "sigma_px", "sigma_xx"], &rows)?;
        Ok(json!({"hbar": self.hbar, "grid_points": self.psi0.len(), "final_norm": psis.last().map(|p| p.norm_sq())}))
    }

    fn run_semiclassical(&self) -> Result<Value, RunError> {
        let sc = self.semiclassical()?;
        write_text(&self.file("trajectory.csv"), &sc.traj.to_csv())?;
        for (i, (t, psi)) in self.times.iter().zip(&sc.psis).enumerate() {
            write_text(&self.file(&format!("psi_{i:03}.csv")), &psi.to_csv(*t))?;
        }
        let last = sc.traj.last();
        Ok(json!({
            "hbar": self.hbar,
            "order": self.cfg.order,
            "projection_loss": sc.loss,
            "route_mismatch": sc.traj.route_mismatch,
            "final_center": {"p": last.z.p[0], "x": last.z.x[0]},
            "final_sigma_xx": last.moments.delta2()[(1, 1)],
        }))
    }

    fn run_variations(&self) -> Result<Value, RunError> {
        let ts = self.sample_times();
        let traj = self.trajectory(&ts)?;
        let run = self.variations(&traj, &ts)?;
        write_text(&self.file("variations.csv"), &run.to_csv())?;
        let (d0_drift, d0_tilde_drift) = run.max_invariant_drift();
        let (q_asym, im_q_min) = num!(self.hbar, run.q_symmetry_and_positivity())?;
        let report = json!({
            "hbar": self.hbar,
            "d0_drift": d0_drift,
            "d0_tilde_drift": d0_tilde_drift,
            "skew_product_drift": run.max_skew_drift(),
            "q_asymmetry": q_asym,
            "im_q_min_eigenvalue": im_q_min,
            "riccati_residual": num!(self.hbar, run.max_riccati_residual())?,
            "liouville_mismatch": num!(self.hbar, run.liouville_mismatch())?,
        });
        write_text(&self.file("invariants.json"), &pretty(&report))?;
        Ok(report)
    }

    /// Applies the zero-order kernel from `t = 0` to each output time and
    /// compares with the grid solution and the semiclassical packet.
    fn green(&self) -> Result<Value, RunError> {
        let sc = self.semiclassical()?;
        let oracle = self.oracle()?;
        let mut rows = Vec::with_capacity(self.times.len());
        let mut caustics = Vec::new();
        for (i, &t) in self.times.iter().enumerate() {
            match Order0Kernel::new(&self.model, &sc.traj, 0.0, t, &self.tol) {
                Ok(k) => {
                    let psi = num!(self.hbar, apply_kernel(&k, &self.psi0))?;
                    if i + 1 == self.times.len() {
                        self.export_kernel(&k)?;
                    }
                    rows.push(vec![
                        t,
                        k.maslov as f64,
                        num!(self.hbar, fidelity(&psi, &oracle[i]))?,
                        num!(self.hbar, fidelity(&psi, &sc.psis[i]))?,
                    ]);
                }
                Err(GreenError::Caustic { .. }) => {
                    caustics.push(t);
                    rows.push(vec![t, f64::NAN, f64::NAN, f64::NAN]);
                }
                Err(e) => return Err(numerical(self.hbar)(e.to_string())),
            }
        }
        write_table(&self.file("green.csv"), &["t", "maslov", "fidelity_oracle", "fidelity_semiclassical"], &rows)?;
        let worst = rows.iter().map(|r| r[2]).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        Ok(json!({"hbar": self.hbar, "caustic_times": caustics, "min_fidelity_oracle": finite(worst)}))
    }

    /// Kernel samples on every `n/64`-th grid point, as `x,y,re,im` rows.
    fn export_kernel(&self, k: &Order0Kernel) -> Result<(), RunError> {
        let stride = (self.psi0.len() / 64).max(1);
        let xs: Vec<f64> = (0..self.psi0.len()).step_by(stride).map(|j| self.psi0.x(j)).collect();
        let mut rows = Vec::with_capacity(xs.len() * xs.len());
        for &x in &xs {
            for &y in &xs {
                let g = kernel_order0(k, &[x], &[y]);
                rows.push(vec![x, y, g.re, g.im]);
            }
        }
        write_table(&self.file("kernel.csv"), &["x", "y", "re", "im"], &rows)
    }

    pub fn compare(&self) -> Result<Comparison, RunError> {
        let sc = self.semiclassical()?;
        let oracle = self.oracle()?;
        let mut rows = Vec::with_capacity(self.times.len());
        let (mut worst_rel, mut worst_infid) = (0.0f64, 0.0f64);
        for (i, &t) in self.times.iter().enumerate() {
            let semi = sc.traj.samples[Self::index_of(&sc.ts, t)].moments.delta2()[(1, 1)];
            let grid = oracle[i].weyl_moment(0, 2);
            let rel = (semi - grid).abs() / grid.abs();
            let infid = 1.0 - num!(self.hbar, fidelity(&sc.psis[i], &oracle[i]))?;
            worst_rel = worst_rel.max(rel);
            worst_infid = worst_infid.max(infid);
            rows.push(vec![t, semi, grid, rel, infid]);
        }
        write_table(
            &self.file("compare.csv"),
            &["t", "sigma_xx_semiclassical", "sigma_xx_oracle", "relative_error", "infidelity"],
            &rows,
        )?;
        let last = rows.last().expect("at least one output time");
        Ok(Comparison {
            worst_rel,
            worst_infid,
            final_sigma: (last[1], last[2]),
            summary: json!({
                "hbar": self.hbar,
                "max_relative_sigma_xx_error": worst_rel,
                "max_infidelity": worst_infid,
                "projection_loss": sc.loss,
            }),
        })
    }

    fn superpose(&self) -> Result<Value, RunError> {
        let cfg = self.cfg;
        let s = cfg.superpose.as_ref().expect("validated");
        let ModelConfig::Gauss { m, gamma, v0, kappa } = cfg.model else { unreachable!("validated") };
        let params = GaussKernelParams { m, gamma, v0, kappa };
        let exp = |state: &StateConfig| {
            num!(
                self.hbar,
                GaussExperiment::new(
                    params,
                    self.hbar,
                    complex(cfg.initial.b),
                    cfg.initial.p0,
                    cfg.initial.x0,
                    fock_coefficients(state).expect("validated"),
                )
            )
        };
        let (e1, e2) = (exp(&cfg.initial.state)?, exp(&s.second)?);
        let opts = SuperpositionOptions {
            kmax: cfg.tolerances.kmax,
            samples: ((cfg.t_end * SAMPLES_PER_UNIT).ceil() as usize).max(20) + 1,
            dt: cfg.tolerances.dt,
            grid: self.psi0.spec(),
            tol: self.tol,
        };
        let report = num!(self.hbar, superposition_experiment(&e1, &e2, complex(s.c1), complex(s.c2), cfg.t_end, &opts))?;
        let out = json!({
            "hbar": self.hbar,
            "t": report.t,
            "linearity_error": report.linearity_error,
            "fidelity_consistent": report.fidelity_consistent,
            "fidelity_naive": report.fidelity_naive,
            "gap": report.gap(),
            "projection_loss": report.projection_loss,
        });
        write_text(&self.file("superpose.json"), &pretty(&out))?;
        Ok(out)
    }
}

struct Semiclassical {
    ts: Vec<f64>,
    traj: Trajectory,
    psis: Vec<GridWaveFunction>,
    loss: f64,
}

pub struct Comparison {
    pub worst_rel: f64,
    pub worst_infid: f64,
    /// `σ_xx` at the last output time: moment system, grid.
    pub final_sigma: (f64, f64),
    pub summary: Value,
}

fn moment_row(t: f64, psi: &GridWaveFunction) -> Vec<f64> {
    let (p, x) = psi.mean_phase_point();
    vec![t, psi.norm_sq(), p, x, psi.weyl_moment(2, 0), psi.weyl_moment(1, 1), psi.weyl_moment(0, 2)]
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Runs `mode` for every ħ in parallel; results keep the config order.
pub fn run_all(cfg: &ExperimentConfig, base: &Path, out: &Path, mode: Mode) -> Result<Value, RunError> {
    if mode == Mode::Sweep {
        return sweep(cfg, base, out);
    }
    let dir = |i: usize| out.join(format!("hbar_{i}"));
    let results: Vec<Value> = cfg
        .hbar
        .par_iter()
        .enumerate()
        .map(|(i, &h)| Case::new(cfg, base, h, dir(i))?.run(mode))
        .collect::<Result<_, _>>()?;
    Ok(Value::Array(results))
}

fn sweep(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Value, RunError> {
    let runs: Vec<Comparison> = cfg
        .hbar
        .par_iter()
        .enumerate()
        .map(|(i, &h)| {
            let case = Case::new(cfg, base, h, out.join(format!("hbar_{i}")))?;
            std::fs::create_dir_all(&case.dir).map_err(|source| RunError::Io { path: case.dir.clone(), source })?;
            let mut c = case.compare()?;
            c.summary["grid"] = case.grid_json();
            Ok::<_, RunError>(c)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<f64>> = cfg
        .hbar
        .iter()
        .zip(&runs)
        .map(|(h, r)| vec![*h, r.worst_rel, r.worst_infid, r.final_sigma.0, r.final_sigma.1])
        .collect();
    write_table(
        &out.join("sweep.csv"),
        &["hbar", "max_relative_sigma_xx_error", "max_infidelity", "final_sigma_xx_semiclassical", "final_sigma_xx_oracle"],
        &rows,
    )?;
    let fit = |name: &str, ys: Vec<f64>| -> Value {
        if ys.iter().any(|&y| y <= MACHINE_FLOOR) {
            let notice = format!("{name}: values reach the rounding floor ({MACHINE_FLOOR:e}); no fit");
            eprintln!("{notice}");
            return json!({"skipped": notice});
        }
        match fit_power_law(&cfg.hbar, &ys) {
            Ok(f) => json!({"slope": f.slope, "intercept": f.intercept, "r2": f.r2}),
            Err(e) => json!({"skipped": format!("{name}: {e}")}),
        }
    };
    let fits = json!({
        "max_relative_sigma_xx_error": fit("max_relative_sigma_xx_error", runs.iter().map(|r| r.worst_rel).collect()),
        "max_infidelity": fit("max_infidelity", runs.iter().map(|r| r.worst_infid).collect()),
        "final_sigma_xx_semiclassical": fit("final_sigma_xx_semiclassical", runs.iter().map(|r| r.final_sigma.0).collect()),
        "final_sigma_xx_oracle": fit("final_sigma_xx_oracle", runs.iter().map(|r| r.final_sigma.1).collect()),
    });
    write_text(&out.join("sweep_fit.json"), &pretty(&fits))?;
    Ok(json!({"runs": runs.into_iter().map(|r| r.summary).collect::<Vec<_>>(), "fits": fits}))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(state: StateConfig) -> ExperimentConfig {
        serde_json::from_value(json!({
            "model": {"kind": "polynomial", "m": 1.0, "coeffs": [0.0, 0.0, 0.5]},
            "initial": {"b": [0.0, 1.0], "x0": 0.5},
            "t_end": 1.0,
            "hbar": [0.05]
        }))
        .map(|mut c: ExperimentConfig| {
            c.initial.state = state;
            c
        })
        .unwrap()
    }

    #[test]
    fn germ_grid_holds_the_packet() {
        let c = cfg(StateConfig::Fock(2));
        let case = Case::new(&c, Path::new("."), 0.05, PathBuf::from("unused")).unwrap();
        assert!((case.psi0.norm_sq() - 1.0).abs() < 1e-10);
        assert!(case.psi0.edge_mass() < 1e-12);
        let (_, x) = case.psi0.mean_phase_point();
        assert!((x - 0.5).abs() < 1e-10);
    }

    #[test]
    fn grid_file_roundtrip() {
        let c = cfg(StateConfig::Vacuum);
        let case = Case::new(&c, Path::new("."), 0.05, PathBuf::from("unused")).unwrap();
        let dir = std::env::temp_dir().join(format!("tcs-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("psi.csv");
        std::fs::write(&path, case.psi0.to_csv(0.0)).unwrap();
        let back = read_grid_file(&path, 0.05, 1.0).unwrap();
        assert_eq!(back.len(), case.psi0.len());
        assert!(back.distance(&case.psi0).unwrap() < 1e-12);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn harmonic_compare_is_exact_up_to_splitting() {
        let c = cfg(StateConfig::Fock(1));
        let dir = std::env::temp_dir().join(format!("tcs-cmp-{}", std::process::id()));
        let case = Case::new(&c, Path::new("."), 0.05, dir.clone()).unwrap();
        std::fs::create_dir_all(&dir).unwrap();
        let r = case.compare().unwrap();
        assert!(r.worst_rel < 1e-5, "{}", r.worst_rel);
        assert!(r.worst_infid < 1e-6, "{}", r.worst_infid);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
