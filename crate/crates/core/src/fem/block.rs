//! Monolithic implicit-Euler operators for the full and reduced systems.
//!
//! Every model is a [`SystemModel`] registered by name. A model fixes the
//! stacked unknown layout and assembles the time-independent operator `A`
//! (the discrete bilinear form, rows = test functions); the implicit-Euler
//! matrix is then `blockdiag(M) + dt·A`.

use std::collections::BTreeMap;

use super::{FemBlocks, MassKind};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::params::ModelParams;
use crate::sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    /// Cytoplasmic unphosphorylated `L`.
    VolumeL,
    /// Cytoplasmic phosphorylated `P`.
    VolumeP,
    /// Cortical unphosphorylated `l` on Γ.
    CortexL,
    /// Cortical phosphorylated `p` on Γ₂.
    CortexP,
}

impl Field {
    pub const ALL: [Field; 4] = [
        Field::VolumeL,
        Field::VolumeP,
        Field::CortexL,
        Field::CortexP,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Field::VolumeL => "L",
            Field::VolumeP => "P",
            Field::CortexL => "l",
            Field::CortexP => "p",
        }
    }
}

/// Offsets of the stacked unknown `(L, P, l, p)`; `n_gamma2 = 0` drops `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub n_volume: usize,
    pub n_gamma: usize,
    pub n_gamma2: usize,
}

impl BlockLayout {
    pub fn size(&self) -> usize {
        2 * self.n_volume + self.n_gamma + self.n_gamma2
    }

    pub fn range(&self, f: Field) -> std::ops::Range<usize> {
        let (nv, ng) = (self.n_volume, self.n_gamma);
        match f {
            Field::VolumeL => 0..nv,
            Field::VolumeP => nv..2 * nv,
            Field::CortexL => 2 * nv..2 * nv + ng,
            Field::CortexP => 2 * nv + ng..self.size(),
        }
    }

    pub fn offset(&self, f: Field) -> usize {
        self.range(f).start
    }

    pub fn has_cortex_p(&self) -> bool {
        self.n_gamma2 > 0
    }
}

/// A family member of the volume–surface model, selectable by name.
pub trait SystemModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn layout(&self, fem: &FemBlocks) -> BlockLayout;

    /// Rejects parameter combinations the model is not defined for.
    fn check_params(&self, params: &ModelParams) -> Result<()>;

    /// Time-independent operator `A` with `M u' + A u = 0`.
    fn operator(&self, fem: &FemBlocks, params: &ModelParams) -> CsrMatrix;

    /// Block-diagonal mass matrix of the stacked unknown.
    fn mass(&self, fem: &FemBlocks) -> CsrMatrix {
        let layout = self.layout(fem);
        let n = layout.size();
        let mut b = TripletBuilder::new(n, n);
        b.add_block(
            layout.offset(Field::VolumeL),
            layout.offset(Field::VolumeL),
            &fem.mass_volume,
            1.0,
        );
        b.add_block(
            layout.offset(Field::VolumeP),
            layout.offset(Field::VolumeP),
            &fem.mass_volume,
            1.0,
        );
        b.add_block(
            layout.offset(Field::CortexL),
            layout.offset(Field::CortexL),
            &fem.mass_gamma,
            1.0,
        );
        if layout.has_cortex_p() {
            b.add_block(
                layout.offset(Field::CortexP),
                layout.offset(Field::CortexP),
                &fem.mass_gamma2,
                1.0,
            );
        }
        b.build()
    }
}

/// Volume rows shared by both models: diffusion, L⇄P reactions and L⇄l sorption.
fn add_volume_and_sorption(
    b: &mut TripletBuilder,
    layout: &BlockLayout,
    fem: &FemBlocks,
    p: &ModelParams,
) {
    let (l, pv, cl) = (
        layout.offset(Field::VolumeL),
        layout.offset(Field::VolumeP),
        layout.offset(Field::CortexL),
    );
    let robin = fem.trace_mass_gamma();
    // (βL − αP, φ₁ − φ₂)
    b.add_block(l, l, &fem.stiff_volume, p.d_vol_l);
    b.add_block(l, l, &fem.mass_volume, p.beta);
    b.add_block(l, pv, &fem.mass_volume, -p.alpha);
    b.add_block(pv, l, &fem.mass_volume, -p.beta);
    b.add_block(pv, pv, &fem.stiff_volume, p.d_vol_p);
    b.add_block(pv, pv, &fem.mass_volume, p.alpha);
    // (λL − γl, φ₁ − ψ₁)_Γ
    b.add_block(l, l, &robin, p.lambda);
    b.add_block(l, cl, &fem.coupling_gamma, -p.gamma);
    b.add_block(cl, l, &fem.coupling_gamma.transpose(), -p.lambda);
    b.add_block(cl, cl, &fem.mass_gamma, p.gamma);
    b.add_block(cl, cl, &fem.stiff_gamma, p.d_cortex_l);
    // σl leaves l on the active arc
    b.add_block(cl, cl, &fem.mass_gamma_flagged, p.sigma);
}

/// The four-species system with `p` on the active arc.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullSystem;

impl SystemModel for FullSystem {
    fn name(&self) -> &'static str {
        "full"
    }

    fn description(&self) -> &'static str {
        "four species (L, P, l, p) with finite release rate xi"
    }

    fn layout(&self, fem: &FemBlocks) -> BlockLayout {
        BlockLayout {
            n_volume: fem.dofs.n_volume,
            n_gamma: fem.dofs.n_gamma,
            n_gamma2: fem.dofs.n_gamma2,
        }
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        params.check_assemblable()
    }

    fn operator(&self, fem: &FemBlocks, p: &ModelParams) -> CsrMatrix {
        let layout = self.layout(fem);
        let n = layout.size();
        let mut b = TripletBuilder::new(n, n);
        add_volume_and_sorption(&mut b, &layout, fem, p);
        let (pv, cl, cp) = (
            layout.offset(Field::VolumeP),
            layout.offset(Field::CortexL),
            layout.offset(Field::CortexP),
        );
        // (σl, ψ₁ − ψ₂)_Γ₂: the ψ₂ part
        let restrict = fem.dofs.restrict_gamma2();
        b.add_block(cp, cl, &fem.mass_gamma2.matmul(&restrict), -p.sigma);
        // (ξp, ψ₂ − φ₂)_Γ₂
        b.add_block(cp, cp, &fem.mass_gamma2, p.xi);
        b.add_block(pv, cp, &fem.coupling_gamma2, -p.xi);
        b.add_block(cp, cp, &fem.stiff_gamma2, p.d_cortex_p);
        b.build()
    }
}

/// Fast-release limit: `p` eliminated, `σχ_Γ₂ l` feeds `P` through its flux.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReducedSystem;

impl SystemModel for ReducedSystem {
    fn name(&self) -> &'static str {
        "qssa"
    }

    fn description(&self) -> &'static str {
        "three species (L, P, l) in the fast-release limit, no surface diffusion"
    }

    fn layout(&self, fem: &FemBlocks) -> BlockLayout {
        BlockLayout {
            n_volume: fem.dofs.n_volume,
            n_gamma: fem.dofs.n_gamma,
            n_gamma2: 0,
        }
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        params.check_assemblable()?;
        if params.d_cortex_l != 0.0 || params.d_cortex_p != 0.0 {
            return Err(Error::Unsupported(
                "the reduced system is defined without surface diffusion (d_l = d_p = 0)".into(),
            ));
        }
        Ok(())
    }

    fn operator(&self, fem: &FemBlocks, p: &ModelParams) -> CsrMatrix {
        let layout = self.layout(fem);
        let n = layout.size();
        let mut b = TripletBuilder::new(n, n);
        add_volume_and_sorption(&mut b, &layout, fem, p);
        b.add_block(
            layout.offset(Field::VolumeP),
            layout.offset(Field::CortexL),
            &fem.coupling_gamma_flagged(),
            -p.sigma,
        );
        b.build()
    }
}

/// Names of all registered models.
pub fn model_names() -> Vec<&'static str> {
    registry().iter().map(|m| m.name()).collect()
}

fn registry() -> Vec<Box<dyn SystemModel>> {
    vec![Box::new(FullSystem), Box::new(ReducedSystem)]
}

pub fn model_by_name(name: &str) -> Result<Box<dyn SystemModel>> {
    registry()
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| {
            Error::Usage(format!(
                "unknown model `{name}`; known: {}",
                model_names().join(", ")
            ))
        })
}

/// Assembled implicit-Euler operator plus its constituent blocks.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    pub model: &'static str,
    pub layout: BlockLayout,
    /// `mass + dt·operator`.
    pub system: CsrMatrix,
    /// Time-independent part `A`.
    pub operator: CsrMatrix,
    /// Block-diagonal mass.
    pub mass: CsrMatrix,
    pub blocks: BTreeMap<&'static str, CsrMatrix>,
    pub dt: f64,
    pub params: ModelParams,
    pub mass_kind: MassKind,
}

impl BlockOperator {
    pub fn assemble(
        fem: &FemBlocks,
        model: &dyn SystemModel,
        params: &ModelParams,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        model.check_params(params)?;
        let layout = model.layout(fem);
        let operator = model.operator(fem, params);
        let mass = model.mass(fem);
        if operator.nrows() != layout.size() || mass.nrows() != layout.size() {
            return Err(Error::Assembly(
                "operator size does not match the dof layout".into(),
            ));
        }
        let system = mass.add_scaled(&operator, dt);
        let blocks = BTreeMap::from([
            ("M_omega", fem.mass_volume.clone()),
            ("K_omega", fem.stiff_volume.clone()),
            ("M_gamma", fem.mass_gamma.clone()),
            ("K_gamma", fem.stiff_gamma.clone()),
            ("M_gamma_chi2", fem.mass_gamma_flagged.clone()),
            ("M_gamma2", fem.mass_gamma2.clone()),
            ("K_gamma2", fem.stiff_gamma2.clone()),
            ("B_gamma", fem.coupling_gamma.clone()),
            ("B_gamma2", fem.coupling_gamma2.clone()),
        ]);
        Ok(Self {
            model: model.name(),
            layout,
            system,
            operator,
            mass,
            blocks,
            dt,
            params: *params,
            mass_kind: fem.mass_kind,
        })
    }

    /// `‖wᵀA‖_∞ / ‖A‖_∞` for the all-ones block vector `w`.
    pub fn conservation_defect(&self) -> f64 {
        let w = vec![1.0; self.layout.size()];
        let col = self.operator.tr_matvec(&w);
        let norm = self.operator.norm_inf();
        let defect = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm == 0.0 {
            defect
        } else {
            defect / norm
        }
    }
}

/// Full-system operator with consistent mass matrices.
pub fn assemble_block_operator(
    mesh: &Mesh,
    params: &ModelParams,
    dt: f64,
) -> Result<BlockOperator> {
    let fem = FemBlocks::assemble(mesh, MassKind::Consistent)?;
    BlockOperator::assemble(&fem, &FullSystem, params, dt)
}
