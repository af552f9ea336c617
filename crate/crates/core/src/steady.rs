//! Stationary states with prescribed total mass.
//!
//! Two registered methods:
//! - `reduction`: uses that `K·(d_L L + d_P P) = 0` at steady state, so
//!   `W = d_L L + d_P P` is a constant `C`. Eliminating `P` and `p` leaves a
//!   coupled system for `(L, l)`. Requires `d_l = d_p = 0`.
//! - `bordered`: replaces one (redundant) row of `A u = 0` by the total-mass
//!   functional. Works for any diffusion rates.

use crate::error::{Error, Result};
use crate::fem::{BlockLayout, BlockOperator, FemBlocks, Field, FullSystem, MassKind, SystemModel};
use crate::mesh::Mesh;
use crate::params::ModelParams;
use crate::solver::{SolverHandle, SparseLu};
use crate::sparse::{norm2, CsrMatrix, TripletBuilder};
use crate::transient::StateVector;

const INNER_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub volume_l: Vec<f64>,
    pub volume_p: Vec<f64>,
    pub cortex_l: Vec<f64>,
    /// Empty for the reduced system.
    pub cortex_p: Vec<f64>,
    /// `d_L L + d_P P` after mass closure (NaN when the method does not use it).
    pub c: f64,
    /// `‖A u‖₂` of the time-independent operator.
    pub residual_norm: f64,
    pub total_mass: f64,
}

impl SteadyState {
    pub fn state(&self) -> StateVector {
        StateVector {
            volume_l: self.volume_l.clone(),
            volume_p: self.volume_p.clone(),
            cortex_l: self.cortex_l.clone(),
            cortex_p: self.cortex_p.clone(),
            t: f64::INFINITY,
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

    fn from_stacked(layout: &BlockLayout, u: &[f64], c: f64) -> Result<Self> {
        let s = StateVector::unstack(layout, u, f64::INFINITY)?;
        Ok(Self {
            volume_l: s.volume_l,
            volume_p: s.volume_p,
            cortex_l: s.cortex_l,
            cortex_p: s.cortex_p,
            c,
            residual_norm: f64::NAN,
            total_mass: f64::NAN,
        })
    }
}

pub trait StationaryMethod: Send + Sync {
    fn name(&self) -> &'static str;

    /// Stationary state of `model` whose total discrete mass equals `m0`.
    fn solve(
        &self,
        fem: &FemBlocks,
        model: &dyn SystemModel,
        params: &ModelParams,
        m0: f64,
    ) -> Result<SteadyState>;
}

pub fn stationary_method_names() -> Vec<&'static str> {
    stationary_registry().iter().map(|m| m.name()).collect()
}

fn stationary_registry() -> Vec<Box<dyn StationaryMethod>> {
    vec![Box::new(Reduction), Box::new(Bordered)]
}

pub fn stationary_method_by_name(name: &str) -> Result<Box<dyn StationaryMethod>> {
    stationary_registry()
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| {
            Error::Usage(format!(
                "unknown stationary method `{name}`; known: {}",
                stationary_method_names().join(", ")
            ))
        })
}

fn check_mass(m0: f64) -> Result<()> {
    if m0 > 0.0 && m0.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "prescribed mass must be > 0, got {m0}"
        )))
    }
}

fn mass_of(mass: &CsrMatrix, u: &[f64]) -> f64 {
    mass.row_sums().iter().zip(u).map(|(w, v)| w * v).sum()
}

/// Scales `u` to total mass `m0` and fills in the residual.
fn close(
    fem: &FemBlocks,
    model: &dyn SystemModel,
    params: &ModelParams,
    m0: f64,
    mut u: Vec<f64>,
    c: f64,
) -> Result<SteadyState> {
    let op = model.operator(fem, params);
    let mass = model.mass(fem);
    let total = mass_of(&mass, &u);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Solve {
            residual: f64::NAN,
            tolerance: INNER_TOLERANCE,
        });
    }
    let k = m0 / total;
    u.iter_mut().for_each(|v| *v *= k);
    let layout = model.layout(fem);
    let mut s = SteadyState::from_stacked(&layout, &u, c * k)?;
    s.residual_norm = norm2(&op.matvec(&u));
    s.total_mass = mass_of(&mass, &u);
    Ok(s)
}

/// Elimination of `P` and `p` through the constant `d_L L + d_P P = C`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reduction;

impl StationaryMethod for Reduction {
    fn name(&self) -> &'static str {
        "reduction"
    }

    fn solve(
        &self,
        fem: &FemBlocks,
        model: &dyn SystemModel,
        p: &ModelParams,
        m0: f64,
    ) -> Result<SteadyState> {
        check_mass(m0)?;
        p.validate()?;
        model.check_params(p)?;
        if p.d_cortex_l != 0.0 || p.d_cortex_p != 0.0 {
            return Err(Error::Unsupported(
                "the stationary reduction needs d_l = d_p = 0; use the `bordered` method".into(),
            ));
        }
        let (nv, ng) = (fem.dofs.n_volume, fem.dofs.n_gamma);
        let c = 1.0;

        let mut b = TripletBuilder::new(nv + ng, nv + ng);
        b.add_block(0, 0, &fem.stiff_volume, p.d_vol_l);
        b.add_block(
            0,
            0,
            &fem.mass_volume,
            p.beta + p.alpha * p.d_vol_l / p.d_vol_p,
        );
        b.add_block(0, 0, &fem.trace_mass_gamma(), p.lambda);
        b.add_block(0, nv, &fem.coupling_gamma, -p.gamma);
        b.add_block(nv, 0, &fem.coupling_gamma.transpose(), -p.lambda);
        b.add_block(nv, nv, &fem.mass_gamma, p.gamma);
        b.add_block(nv, nv, &fem.mass_gamma_flagged, p.sigma);
        let system = b.build();

        let mut rhs = vec![0.0; nv + ng];
        let load = fem.mass_volume.row_sums();
        for i in 0..nv {
            rhs[i] = p.alpha * c / p.d_vol_p * load[i];
        }
        let handle = SolverHandle::new(&system, &SparseLu, INNER_TOLERANCE)?;
        let x = handle.solve(&rhs)?;

        let layout = model.layout(fem);
        let mut u = vec![0.0; layout.size()];
        u[layout.range(Field::VolumeL)].copy_from_slice(&x[..nv]);
        for (k, i) in layout.range(Field::VolumeP).enumerate() {
            u[i] = (c - p.d_vol_l * x[k]) / p.d_vol_p;
        }
        u[layout.range(Field::CortexL)].copy_from_slice(&x[nv..]);
        if layout.has_cortex_p() {
            let off = layout.offset(Field::CortexP);
            for (k, &g) in fem.dofs.gamma2_to_gamma.iter().enumerate() {
                u[off + k] = p.sigma / p.xi * x[nv + g];
            }
        }
        close(fem, model, p, m0, u, c)
    }
}

/// `A u = 0` with its first row replaced by the total-mass functional.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bordered;

impl StationaryMethod for Bordered {
    fn name(&self) -> &'static str {
        "bordered"
    }

    fn solve(
        &self,
        fem: &FemBlocks,
        model: &dyn SystemModel,
        p: &ModelParams,
        m0: f64,
    ) -> Result<SteadyState> {
        check_mass(m0)?;
        p.validate()?;
        model.check_params(p)?;
        let op = model.operator(fem, p);
        let n = op.nrows();
        let mut b = TripletBuilder::new(n, n);
        for (i, j, v) in op.iter().filter(|&(i, _, _)| i != 0) {
            b.push(i, j, v);
        }
        // Rescaled so the replaced row has the magnitude of its neighbours.
        let weights = model.mass(fem).row_sums();
        let scale = op.norm_inf() / weights.iter().fold(0.0, |a: f64, w| a.max(w.abs()));
        for (j, w) in weights.iter().enumerate() {
            b.push(0, j, scale * w);
        }
        let mut rhs = vec![0.0; n];
        rhs[0] = scale * m0;
        let handle = SolverHandle::new(&b.build(), &SparseLu, INNER_TOLERANCE)?;
        let u = handle.solve(&rhs)?;
        let layout = model.layout(fem);
        let c = {
            let l = &u[layout.range(Field::VolumeL)];
            let pp = &u[layout.range(Field::VolumeP)];
            let w: Vec<f64> = l
                .iter()
                .zip(pp)
                .map(|(a, b)| p.d_vol_l * a + p.d_vol_p * b)
                .collect();
            if w.is_empty() {
                f64::NAN
            } else {
                w.iter().sum::<f64>() / w.len() as f64
            }
        };
        // The bordered row already fixes the mass; closure only removes roundoff.
        close(fem, model, p, m0, u, c)
    }
}

/// Full-system steady state (consistent mass, `reduction` method) with total mass `m0`.
pub fn solve_stationary(params: &ModelParams, mesh: &Mesh, m0: f64) -> Result<SteadyState> {
    let fem = FemBlocks::assemble(mesh, MassKind::Consistent)?;
    Reduction.solve(&fem, &FullSystem, params, m0)
}

/// `‖A u∞‖₂ / ‖u∞‖₂` for the time-independent part of `op`; 0 for the zero state.
pub fn verify_stationarity(steady: &StateVector, op: &BlockOperator) -> Result<f64> {
    if steady.layout() != op.layout {
        return Err(Error::Domain(
            "steady state does not match the operator layout".into(),
        ));
    }
    let u = steady.stack();
    let un = norm2(&u);
    if un == 0.0 {
        return Ok(0.0);
    }
    Ok(norm2(&op.operator.matvec(&u)) / un)
}
