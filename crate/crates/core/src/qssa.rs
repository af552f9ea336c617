//! The fast-release reduced system and the ξ → ∞ convergence study.

use rayon::prelude::*;

use crate::diagnostics::{decay_fit, DecayFit, Measures};
use crate::error::{Error, Result};
use crate::fem::{FemBlocks, Field, FullSystem, MassKind, ReducedSystem};
use crate::mesh::Mesh;
use crate::solver::{SolverHandle, SparseLu};
use crate::transient::{SimConfig, Simulation, StateVector, TrajectoryRecord};

/// Volume field carrying the boundary mass of `p₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct PStarField {
    pub values: Vec<f64>,
    /// `1ᵀ M_Ω values`.
    pub total_integral: f64,
}

/// Solves `M_Ω P* = B₂ p₀`, with the mass matrices of `fem`.
pub fn compute_pstar_with(fem: &FemBlocks, p0: &[f64]) -> Result<PStarField> {
    if p0.len() != fem.dofs.n_gamma2 {
        return Err(Error::Domain(format!(
            "p0 has {} values, the active arc has {} nodes",
            p0.len(),
            fem.dofs.n_gamma2
        )));
    }
    if let Some(v) = p0.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("p0 contains {v}")));
    }
    let rhs = fem.coupling_gamma2.matvec(p0);
    let handle = SolverHandle::new(&fem.mass_volume, &SparseLu, 1e-14)
        .map_err(|e| e.context("volume mass matrix is singular"))?;
    let values = handle.solve(&rhs)?;
    let total_integral = fem
        .mass_volume
        .row_sums()
        .iter()
        .zip(&values)
        .map(|(w, v)| w * v)
        .sum();
    Ok(PStarField {
        values,
        total_integral,
    })
}

pub fn compute_pstar(mesh: &Mesh, p0: &[f64]) -> Result<PStarField> {
    compute_pstar_with(&FemBlocks::assemble(mesh, MassKind::Consistent)?, p0)
}

fn reduced_config(config: &SimConfig) -> Result<SimConfig> {
    let mut c = config.clone();
    c.model = "qssa".into();
    c.validate()?;
    if c.params.d_cortex_l != 0.0 || c.params.d_cortex_p != 0.0 {
        return Err(Error::Unsupported(
            "the reduced system is defined without surface diffusion (d_l = d_p = 0)".into(),
        ));
    }
    Ok(c)
}

/// Initial state of the reduced system: `(L₀, P₀ + P*, l₀)`.
pub fn reduced_initial_state(sim: &Simulation, config: &SimConfig) -> Result<StateVector> {
    let mut s = config.initial.state(&sim.layout())?;
    let p0 = config
        .initial
        .cortex_p
        .resolve(sim.fem.dofs.n_gamma2, "p")?;
    let pstar = compute_pstar_with(&sim.fem, &p0)?;
    s.volume_p
        .iter_mut()
        .zip(&pstar.values)
        .for_each(|(p, q)| *p += q);
    Ok(s)
}

/// Runs the reduced system from `config` (its `model` and `ξ` are ignored).
pub fn run_reduced(config: &SimConfig, mesh: &Mesh) -> Result<TrajectoryRecord> {
    let c = reduced_config(config)?;
    let sim = Simulation::new(
        mesh,
        &ReducedSystem,
        &c.params,
        c.dt,
        c.mass_kind,
        &c.solver,
        c.tolerance,
    )?;
    let initial = reduced_initial_state(&sim, &c)?;
    sim.run(initial, c.n_steps(), c.record_every)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub xis: Vec<f64>,
    pub t_end: f64,
    /// `‖L^ξ − L‖_{L²(Ω_T)}` against the reduced run.
    pub errors_l_volume: Vec<f64>,
    /// `‖l^ξ − l‖_{L²(Γ_T)}` against the reduced run.
    pub errors_l_cortex: Vec<f64>,
    /// `‖p^ξ‖²_{L²(Γ₂,T)}`.
    pub p_norms: Vec<f64>,
    /// `ξ‖p^ξ‖_{L¹(Γ₂,T)}`.
    pub p_l1_scaled: Vec<f64>,
    /// `max_Γ₂ p^ξ(T)`.
    pub p_max_final: Vec<f64>,
    /// Largest relative mass drift over all runs, including the reduced one.
    pub max_mass_drift: f64,
    pub slope_p_norms: Option<DecayFit>,
    pub slope_errors_l_volume: Option<DecayFit>,
}

impl ConvergenceReport {
    /// Number of `i` with `v[i+1] > v[i]`.
    pub fn inversions(values: &[f64]) -> usize {
        values.windows(2).filter(|w| w[1] > w[0]).count()
    }
}

/// Trapezoidal accumulation of a per-step quantity.
#[derive(Debug, Clone, Copy, Default)]
struct Trapezoid {
    sum: f64,
    last: Option<f64>,
    dt: f64,
}

impl Trapezoid {
    fn new(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    fn push(&mut self, v: f64) {
        if let Some(prev) = self.last {
            self.sum += 0.5 * self.dt * (prev + v);
        }
        self.last = Some(v);
    }
}

struct XiRun {
    err_l: f64,
    err_cortex: f64,
    p_sq: f64,
    p_l1: f64,
    p_max: f64,
    drift: f64,
}

fn diff_sq(measures: &Measures, f: Field, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    measures.norm_sq(f, &d)
}

/// Full runs for every `ξ` (concurrently) against one reduced run, all on the
/// same mesh and time step up to `t_end`.
pub fn qssa_convergence_study(
    base: &SimConfig,
    mesh: &Mesh,
    xis: &[f64],
    t_end: f64,
) -> Result<ConvergenceReport> {
    if xis.len() < 2 || xis.windows(2).any(|w| !(w[1] > w[0])) || !(xis[0] > 0.0) {
        return Err(Error::Parameter(
            "xis must hold at least two positive, increasing values".into(),
        ));
    }
    let mut base = reduced_config(base)?;
    base.t_end = t_end;
    base.validate()?;
    let xi_max = xis[xis.len() - 1];
    if base.dt > 0.1 / xi_max {
        log::warn!(
            "dt = {} does not resolve the release time 1/ξ = {}",
            base.dt,
            1.0 / xi_max
        );
    }
    let n_steps = base.n_steps();
    let dt = base.dt;

    let reduced = Simulation::new(
        mesh,
        &ReducedSystem,
        &base.params,
        dt,
        base.mass_kind,
        &base.solver,
        base.tolerance,
    )?;
    let initial = reduced_initial_state(&reduced, &base)?;
    let mut reference: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(n_steps + 1);
    let reduced_run = reduced
        .run_with_observer(initial, n_steps, n_steps, &mut |s, _| {
            reference.push((s.volume_l.clone(), s.cortex_l.clone()));
            Ok(())
        })
        .map_err(|e| e.context("reduced system"))?;

    let run_one = |xi: f64| -> Result<XiRun> {
        let params = base.params.with_xi(xi);
        let sim = Simulation::new(
            mesh,
            &FullSystem,
            &params,
            dt,
            base.mass_kind,
            &base.solver,
            base.tolerance,
        )?;
        let m = &sim.measures;
        let initial = base.initial.state(&sim.layout())?;
        let (mut el, mut ec, mut psq, mut pl1) = (
            Trapezoid::new(dt),
            Trapezoid::new(dt),
            Trapezoid::new(dt),
            Trapezoid::new(dt),
        );
        let mut k = 0;
        let record = sim.run_with_observer(initial, n_steps, n_steps, &mut |s, _| {
            let (rl, rc) = &reference[k];
            k += 1;
            el.push(diff_sq(m, Field::VolumeL, &s.volume_l, rl));
            ec.push(diff_sq(m, Field::CortexL, &s.cortex_l, rc));
            psq.push(m.norm_sq(Field::CortexP, &s.cortex_p));
            pl1.push(m.l1_gamma2(&s.cortex_p));
            Ok(())
        })?;
        Ok(XiRun {
            err_l: el.sum.sqrt(),
            err_cortex: ec.sum.sqrt(),
            p_sq: psq.sum,
            p_l1: xi * pl1.sum,
            p_max: record
                .final_state()
                .cortex_p
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            drift: record.max_relative_mass_drift(),
        })
    };
    let runs: Vec<XiRun> = xis
        .par_iter()
        .map(|&xi| run_one(xi).map_err(|e| e.context(format!("full system, xi = {xi}"))))
        .collect::<Result<_>>()?;

    let pick = |f: fn(&XiRun) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let p_norms = pick(|r| r.p_sq);
    let errors_l_volume = pick(|r| r.err_l);
    let fit = |ys: &[f64]| (xis.len() >= 3).then(|| decay_fit(xis, ys).ok()).flatten();
    Ok(ConvergenceReport {
        xis: xis.to_vec(),
        t_end: n_steps as f64 * dt,
        errors_l_cortex: pick(|r| r.err_cortex),
        p_l1_scaled: pick(|r| r.p_l1),
        p_max_final: pick(|r| r.p_max),
        max_mass_drift: runs
            .iter()
            .map(|r| r.drift)
            .fold(reduced_run.max_relative_mass_drift(), f64::max),
        slope_p_norms: fit(&p_norms),
        slope_errors_l_volume: fit(&errors_l_volume),
        p_norms,
        errors_l_volume,
    })
}
