//! Implicit-Euler time stepping with one factorisation per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, FieldStats, MassReport, Measures};
use crate::error::{Error, Result};
use crate::fem::{BlockLayout, BlockOperator, FemBlocks, Field, MassKind, SystemModel};
use crate::mesh::{Mesh, MeshSpec};
use crate::params::ModelParams;
use crate::solver::{self, SolverHandle};

/// Nodal values of all species at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub volume_l: Vec<f64>,
    pub volume_p: Vec<f64>,
    pub cortex_l: Vec<f64>,
    /// Empty for the reduced system.
    pub cortex_p: Vec<f64>,
    pub t: f64,
}

impl StateVector {
    pub fn zeros(layout: &BlockLayout) -> Self {
        Self {
            volume_l: vec![0.0; layout.n_volume],
            volume_p: vec![0.0; layout.n_volume],
            cortex_l: vec![0.0; layout.n_gamma],
            cortex_p: vec![0.0; layout.n_gamma2],
            t: 0.0,
        }
    }

    pub fn field(&self, f: Field) -> &[f64] {
        match f {
            Field::VolumeL => &self.volume_l,
            Field::VolumeP => &self.volume_p,
            Field::CortexL => &self.cortex_l,
            Field::CortexP => &self.cortex_p,
        }
    }

    pub fn field_mut(&mut self, f: Field) -> &mut Vec<f64> {
        match f {
            Field::VolumeL => &mut self.volume_l,
            Field::VolumeP => &mut self.volume_p,
            Field::CortexL => &mut self.cortex_l,
            Field::CortexP => &mut self.cortex_p,
        }
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout {
            n_volume: self.volume_l.len(),
            n_gamma: self.cortex_l.len(),
            n_gamma2: self.cortex_p.len(),
        }
    }

    pub fn stack(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.layout().size());
        for f in Field::ALL {
            u.extend_from_slice(self.field(f));
        }
        u
    }

    pub fn unstack(layout: &BlockLayout, u: &[f64], t: f64) -> Result<Self> {
        if u.len() != layout.size() {
            return Err(Error::Domain(format!(
                "stacked vector has {} entries, layout expects {}",
                u.len(),
                layout.size()
            )));
        }
        Ok(Self {
            volume_l: u[layout.range(Field::VolumeL)].to_vec(),
            volume_p: u[layout.range(Field::VolumeP)].to_vec(),
            cortex_l: u[layout.range(Field::CortexL)].to_vec(),
            cortex_p: u[layout.range(Field::CortexP)].to_vec(),
            t,
        })
    }

    pub fn scaled(&self, k: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| k * x).collect();
        Self {
            volume_l: s(&self.volume_l),
            volume_p: s(&self.volume_p),
            cortex_l: s(&self.cortex_l),
            cortex_p: s(&self.cortex_p),
            t: self.t,
        }
    }

    pub fn is_finite(&self) -> bool {
        Field::ALL
            .iter()
            .all(|&f| self.field(f).iter().all(|v| v.is_finite()))
    }

    pub fn min_value(&self) -> f64 {
        Field::ALL
            .iter()
            .flat_map(|&f| self.field(f).iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        Field::ALL
            .iter()
            .flat_map(|&f| self.field(f).iter().copied())
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Initial data for one species: a constant, inline nodal values, or a file
/// of whitespace- or comma-separated nodal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldInit {
    Constant(f64),
    Values(Vec<f64>),
    File(PathBuf),
}

impl FieldInit {
    pub fn resolve(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        let values = match self {
            FieldInit::Constant(c) => vec![*c; n],
            FieldInit::Values(v) => v.clone(),
            FieldInit::File(path) => read_values(path)?,
        };
        if values.len() != n {
            return Err(Error::Domain(format!(
                "initial data for {what} has {} values, expected {n}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "initial data for {what} contains {v}"
            )));
        }
        Ok(values)
    }
}

fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::from(e).context(format!("cannot read {}", path.display())))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            out.push(tok.parse::<f64>().map_err(|_| {
                Error::Domain(format!(
                    "{}:{}: `{tok}` is not a number",
                    path.display(),
                    k + 1
                ))
            })?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialData {
    #[serde(rename = "L0")]
    pub volume_l: FieldInit,
    #[serde(rename = "P0")]
    pub volume_p: FieldInit,
    #[serde(rename = "l0")]
    pub cortex_l: FieldInit,
    #[serde(rename = "p0")]
    pub cortex_p: FieldInit,
}

impl Default for InitialData {
    fn default() -> Self {
        Self::constant(0.8, 0.6, 0.3, 0.4)
    }
}

impl InitialData {
    pub fn constant(l_vol: f64, p_vol: f64, l_cortex: f64, p_cortex: f64) -> Self {
        Self {
            volume_l: FieldInit::Constant(l_vol),
            volume_p: FieldInit::Constant(p_vol),
            cortex_l: FieldInit::Constant(l_cortex),
            cortex_p: FieldInit::Constant(p_cortex),
        }
    }

    pub fn get(&self, f: Field) -> &FieldInit {
        match f {
            Field::VolumeL => &self.volume_l,
            Field::VolumeP => &self.volume_p,
            Field::CortexL => &self.cortex_l,
            Field::CortexP => &self.cortex_p,
        }
    }

    /// Nodal state for the given layout; `p0` is ignored when the layout has no `p`.
    pub fn state(&self, layout: &BlockLayout) -> Result<StateVector> {
        let mut s = StateVector::zeros(layout);
        for f in Field::ALL {
            let n = layout.range(f).len();
            if n > 0 {
                *s.field_mut(f) = self.get(f).resolve(n, f.symbol())?;
            }
        }
        Ok(s)
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub dt: f64,
    pub t_end: f64,
    pub initial: InitialData,
    pub record_every: usize,
    pub mesh: MeshSpec,
    pub tolerance: f64,
    pub solver: String,
    pub mass_kind: MassKind,
    pub model: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            dt: 1e-3,
            t_end: 1.0,
            initial: InitialData::default(),
            record_every: 100,
            mesh: MeshSpec::default(),
            tolerance: 1e-10,
            solver: solver::DEFAULT_METHOD.to_string(),
            mass_kind: MassKind::Consistent,
            model: "full".to_string(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::Parameter(format!(
                "t_end must be >= dt, got t_end = {} and dt = {}",
                self.t_end, self.dt
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-6) {
            return Err(Error::Parameter(format!(
                "solver tolerance must lie in (0, 1e-6], got {}",
                self.tolerance
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Parameter("record_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of implicit-Euler steps; `t_end` is rounded to a multiple of `dt`.
    pub fn n_steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }
}

/// Per-step scalar diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub mass: MassReport,
    pub h: f64,
    /// Indexed like [`Field::ALL`]; NaN entries for an absent species.
    pub fields: [FieldStats; 4],
    /// `‖u(t_n) − u(t_{n−1})‖_M / dt`; zero at the initial time.
    pub increment_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub snapshots: Vec<StateVector>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub dt: f64,
    pub n_steps: usize,
    pub condition_estimate: f64,
    /// Steps on which some component dropped below `−1e−8·max|u(0)|`.
    pub negativity_violations: usize,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &StateVector {
        self.snapshots
            .last()
            .expect("a trajectory always holds the initial snapshot")
    }

    pub fn masses(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.mass.total).collect()
    }

    /// Largest `|mass(t_n) − mass(0)| / mass(0)` over the run.
    pub fn max_relative_mass_drift(&self) -> f64 {
        let m = self.masses();
        let m0 = m[0];
        m.iter().map(|v| (v - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE)
    }
}

/// A factorised run: mesh operators, the implicit-Euler matrix and its solver.
#[derive(Debug)]
pub struct Simulation {
    pub fem: FemBlocks,
    pub op: BlockOperator,
    pub measures: Measures,
    handle: SolverHandle,
}

impl Simulation {
    pub fn new(
        mesh: &Mesh,
        model: &dyn SystemModel,
        params: &ModelParams,
        dt: f64,
        mass_kind: MassKind,
        method: &str,
        tolerance: f64,
    ) -> Result<Self> {
        let fem = FemBlocks::assemble(mesh, mass_kind)?;
        let op = BlockOperator::assemble(&fem, model, params, dt)?;
        let handle = solver::factorize(&op, method, tolerance)?;
        let measures = Measures::new(mesh)?;
        log::debug!(
            "factorised {} system ({} dofs) with {}, condition ≈ {:.3e}",
            op.model,
            op.layout.size(),
            handle.method(),
            handle.condition_estimate()
        );
        Ok(Self {
            fem,
            op,
            measures,
            handle,
        })
    }

    pub fn from_config(mesh: &Mesh, config: &SimConfig) -> Result<Self> {
        let model = crate::fem::model_by_name(&config.model)?;
        Self::new(
            mesh,
            model.as_ref(),
            &config.params,
            config.dt,
            config.mass_kind,
            &config.solver,
            config.tolerance,
        )
    }

    pub fn layout(&self) -> BlockLayout {
        self.op.layout
    }

    pub fn handle(&self) -> &SolverHandle {
        &self.handle
    }

    pub fn step(&self, state: &StateVector) -> Result<StateVector> {
        step(&self.handle, &self.op, state)
    }

    pub fn diagnostics(
        &self,
        state: &StateVector,
        previous: Option<&StateVector>,
    ) -> StepDiagnostics {
        let mut fields = [FieldStats::absent(); 4];
        for (k, f) in Field::ALL.into_iter().enumerate() {
            fields[k] = self.measures.field_stats(f, state.field(f));
        }
        let increment_rate = previous.map_or(0.0, |prev| {
            let du: Vec<f64> = state
                .stack()
                .iter()
                .zip(prev.stack())
                .map(|(a, b)| a - b)
                .collect();
            self.op.mass.bilinear(&du, &du).max(0.0).sqrt() / self.op.dt
        });
        StepDiagnostics {
            t: state.t,
            mass: diagnostics::total_mass(state, &self.measures),
            h: diagnostics::lyapunov_h(state, &self.op.params, &self.measures),
            fields,
            increment_rate,
        }
    }

    /// Advances `initial` by `n_steps`, calling `observer` on every state
    /// (including the initial one).
    pub fn run_with_observer(
        &self,
        initial: StateVector,
        n_steps: usize,
        record_every: usize,
        observer: &mut dyn FnMut(&StateVector, &StepDiagnostics) -> Result<()>,
    ) -> Result<TrajectoryRecord> {
        if initial.layout() != self.layout() {
            return Err(Error::Domain(
                "initial state does not match the operator layout".into(),
            ));
        }
        let record_every = record_every.max(1);
        let floor = -1e-8 * initial.max_abs();
        let first = self.diagnostics(&initial, None);
        observer(&initial, &first)?;
        let mass0 = first.mass.total;
        let mut record = TrajectoryRecord {
            snapshots: vec![initial.clone()],
            diagnostics: vec![first],
            dt: self.op.dt,
            n_steps,
            condition_estimate: self.handle.condition_estimate(),
            negativity_violations: 0,
        };
        let t0 = initial.t;
        let mut state = initial;
        for n in 1..=n_steps {
            let mut next = self.step(&state)?;
            next.t = t0 + n as f64 * self.op.dt;
            let d = self.diagnostics(&next, Some(&state));
            if next.min_value() < floor {
                if record.negativity_violations == 0 {
                    log::warn!(
                        "negative concentration {:.3e} at t = {}",
                        next.min_value(),
                        next.t
                    );
                }
                record.negativity_violations += 1;
            }
            let prev_mass = record.diagnostics.last().map_or(mass0, |p| p.mass.total);
            if (d.mass.total - prev_mass).abs() > 10.0 * self.handle.tolerance() * mass0.abs() {
                log::warn!(
                    "mass changed by {:.3e} at t = {}",
                    d.mass.total - prev_mass,
                    next.t
                );
            }
            observer(&next, &d)?;
            record.diagnostics.push(d);
            if n % record_every == 0 || n == n_steps {
                record.snapshots.push(next.clone());
            }
            state = next;
        }
        Ok(record)
    }

    pub fn run(
        &self,
        initial: StateVector,
        n_steps: usize,
        record_every: usize,
    ) -> Result<TrajectoryRecord> {
        self.run_with_observer(initial, n_steps, record_every, &mut |_, _| Ok(()))
    }
}

/// One implicit-Euler step `(M + dt·A) u⁺ = M u`.
pub fn step(handle: &SolverHandle, op: &BlockOperator, state: &StateVector) -> Result<StateVector> {
    if state.layout() != op.layout {
        return Err(Error::Domain(
            "state does not match the operator layout".into(),
        ));
    }
    let t = state.t + op.dt;
    let rhs = op.mass.matvec(&state.stack());
    let u = handle.solve(&rhs).map_err(|e| match e {
        Error::Solve { .. } => Error::Divergence { t },
        other => other,
    })?;
    let next = StateVector::unstack(&op.layout, &u, t)?;
    if !next.is_finite() {
        return Err(Error::Divergence { t });
    }
    Ok(next)
}

pub fn run_transient_with_observer(
    config: &SimConfig,
    mesh: &Mesh,
    observer: &mut dyn FnMut(&StateVector, &StepDiagnostics) -> Result<()>,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let sim = Simulation::from_config(mesh, config)?;
    let initial = config.initial.state(&sim.layout())?;
    sim.run_with_observer(initial, config.n_steps(), config.record_every, observer)
}

pub fn run_transient(config: &SimConfig, mesh: &Mesh) -> Result<TrajectoryRecord> {
    run_transient_with_observer(config, mesh, &mut |_, _| Ok(()))
}
