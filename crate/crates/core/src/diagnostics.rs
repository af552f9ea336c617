//! Conserved quantities, energies, coercivity checks, fits and profiles.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_surface_matrices, assemble_volume_matrices, BlockOperator, DofMap, Field, Surface,
};
use crate::mesh::{signed_area2, Mesh, Point2};
use crate::params::ModelParams;
use crate::sparse::CsrMatrix;
use crate::transient::StateVector;

/// Consistent mass matrices used for every integral and norm.
#[derive(Debug, Clone)]
pub struct Measures {
    pub dofs: DofMap,
    pub mass_volume: CsrMatrix,
    pub mass_gamma: CsrMatrix,
    pub mass_gamma2: CsrMatrix,
    /// Row sums of the Γ₂ mass, for L¹ norms.
    pub lumped_gamma2: Vec<f64>,
}

impl Measures {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let dofs = DofMap::new(mesh)?;
        let (mass_volume, _) = assemble_volume_matrices(mesh)?;
        let (mass_gamma, _) = assemble_surface_matrices(mesh, &dofs, Surface::Gamma)?;
        let (mass_gamma2, _) = assemble_surface_matrices(mesh, &dofs, Surface::Gamma2)?;
        Ok(Self {
            lumped_gamma2: mass_gamma2.row_sums(),
            dofs,
            mass_volume,
            mass_gamma,
            mass_gamma2,
        })
    }

    pub fn mass_for(&self, f: Field) -> &CsrMatrix {
        match f {
            Field::VolumeL | Field::VolumeP => &self.mass_volume,
            Field::CortexL => &self.mass_gamma,
            Field::CortexP => &self.mass_gamma2,
        }
    }

    pub fn integral(&self, f: Field, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        self.mass_for(f)
            .row_sums()
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Squared L² norm `vᵀ M v`.
    pub fn norm_sq(&self, f: Field, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        self.mass_for(f).bilinear(values, values).max(0.0)
    }

    /// L¹ norm of a Γ₂ field with lumped weights.
    pub fn l1_gamma2(&self, values: &[f64]) -> f64 {
        self.lumped_gamma2
            .iter()
            .zip(values)
            .map(|(w, v)| w * v.abs())
            .sum()
    }

    pub fn field_stats(&self, f: Field, values: &[f64]) -> FieldStats {
        if values.is_empty() {
            return FieldStats::absent();
        }
        FieldStats {
            l2: self.norm_sq(f, values).sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats {
    pub l2: f64,
    pub min: f64,
    pub max: f64,
}

impl FieldStats {
    pub fn absent() -> Self {
        Self {
            l2: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MassReport {
    pub mass_volume_l: f64,
    pub mass_volume_p: f64,
    pub mass_gamma_l: f64,
    pub mass_gamma2_p: f64,
    pub total: f64,
}

pub fn total_mass(state: &StateVector, measures: &Measures) -> MassReport {
    let mass_volume_l = measures.integral(Field::VolumeL, &state.volume_l);
    let mass_volume_p = measures.integral(Field::VolumeP, &state.volume_p);
    let mass_gamma_l = measures.integral(Field::CortexL, &state.cortex_l);
    let mass_gamma2_p = measures.integral(Field::CortexP, &state.cortex_p);
    MassReport {
        mass_volume_l,
        mass_volume_p,
        mass_gamma_l,
        mass_gamma2_p,
        total: mass_volume_l + mass_volume_p + mass_gamma_l + mass_gamma2_p,
    }
}

/// `H = ½(‖L‖² + ‖P‖² + σ‖l‖²_Γ + ξ‖p‖²_Γ₂)`.
pub fn lyapunov_h(state: &StateVector, params: &ModelParams, measures: &Measures) -> f64 {
    0.5 * (measures.norm_sq(Field::VolumeL, &state.volume_l)
        + measures.norm_sq(Field::VolumeP, &state.volume_p)
        + params.sigma * measures.norm_sq(Field::CortexL, &state.cortex_l)
        + params.xi * measures.norm_sq(Field::CortexP, &state.cortex_p))
}

/// Decay rate used for the discrete Grönwall bound on `H`.
pub fn lyapunov_rate(params: &ModelParams) -> f64 {
    0.5 * [
        2.0 * params.beta,
        2.0 * params.alpha,
        params.gamma,
        params.xi,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Smallest `C` with `H_{n+1} ≤ (1 − η dt) H_n + η dt C` along the run; by
/// induction every `H_n ≤ max(H_0, C)`.
pub fn lyapunov_bound(h: &[f64], dt: f64, eta: f64) -> Result<f64> {
    let q = eta * dt;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("η·dt = {q} must lie in (0, 1]")));
    }
    Ok(h.windows(2)
        .map(|w| (w[1] - (1.0 - q) * w[0]) / q)
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GardingEstimate {
    pub delta1: f64,
    pub delta2: f64,
    /// Smallest generalised eigenvalue of `(A_sym + δ₁M − δ₂N, M)`.
    pub min_eig_shifted: f64,
}

impl GardingEstimate {
    pub fn validates(&self) -> bool {
        self.min_eig_shifted >= -1e-10
    }
}

/// Largest system handled by the dense eigensolver when `coarse_only` is set.
pub const GARDING_MAX_DOFS: usize = 2000;

const GARDING_EPS: f64 = 1e-3;

fn dense(m: &CsrMatrix) -> Mat<f64> {
    let mut d = Mat::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.iter() {
        d[(i, j)] += v;
    }
    d
}

fn min_eig(m: &Mat<f64>) -> Result<f64> {
    let sym = Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let ev = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Estimate(format!("eigensolver failed: {e:?}")))?;
    ev.first()
        .copied()
        .ok_or_else(|| Error::Estimate("empty matrix".into()))
}

/// Discrete Gårding check: `A_sym + δ₁M − δ₂N ⪰ 0` in the `M` inner product,
/// with `N` the block H¹ Gram matrix.
pub fn garding_estimate(op: &BlockOperator, coarse_only: bool) -> Result<GardingEstimate> {
    let n = op.layout.size();
    if coarse_only && n > GARDING_MAX_DOFS {
        return Err(Error::Estimate(format!(
            "{n} dofs exceed the dense limit of {GARDING_MAX_DOFS}"
        )));
    }
    let p = &op.params;
    let delta2 = 0.5
        * [
            p.d_vol_l,
            p.d_vol_p,
            p.d_cortex_l + GARDING_EPS,
            p.d_cortex_p + GARDING_EPS,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if !(delta2 > 0.0) {
        return Err(Error::Estimate("volume diffusion must be positive".into()));
    }

    let block = |name: &str| {
        op.blocks
            .get(name)
            .ok_or_else(|| Error::Estimate(format!("operator has no `{name}` block")))
    };
    let mut gram = crate::sparse::TripletBuilder::new(n, n);
    let mut stiff_blocks = vec![
        (Field::VolumeL, block("K_omega")?),
        (Field::VolumeP, block("K_omega")?),
        (Field::CortexL, block("K_gamma")?),
    ];
    if op.layout.has_cortex_p() {
        stiff_blocks.push((Field::CortexP, block("K_gamma2")?));
    }
    for (f, k) in stiff_blocks {
        gram.add_block(op.layout.offset(f), op.layout.offset(f), k, 1.0);
    }
    let gram = gram.build().add_scaled(&op.mass, 1.0);

    // M^{-1/2} through the eigendecomposition of the block mass.
    let m = dense(&op.mass);
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Estimate(format!("mass eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    if (0..n).any(|i| !(s[i] > 0.0)) {
        return Err(Error::Estimate(
            "block mass matrix is not positive definite".into(),
        ));
    }
    let scaled = Mat::from_fn(n, n, |i, j| u[(i, j)] / s[j].sqrt());
    let inv_sqrt = &scaled * u.transpose();

    let a_sym = {
        let a = dense(&op.operator);
        Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
    };
    let g = dense(&gram);
    let base = Mat::from_fn(n, n, |i, j| a_sym[(i, j)] - delta2 * g[(i, j)]);
    let lambda_min = min_eig(&(&inv_sqrt * &base * &inv_sqrt))?;
    let delta1 = if lambda_min >= 0.0 {
        0.0
    } else {
        -lambda_min * (1.0 + 1e-8) + 1e-12
    };

    let shifted = Mat::from_fn(n, n, |i, j| base[(i, j)] + delta1 * m[(i, j)]);
    let min_eig_shifted = min_eig(&(&inv_sqrt * &shifted * &inv_sqrt))?;
    let est = GardingEstimate {
        delta1,
        delta2,
        min_eig_shifted,
    };
    if !est.validates() || !delta1.is_finite() {
        return Err(Error::Estimate(format!(
            "no valid shift found: δ₁ = {delta1:e}, shifted minimum eigenvalue {min_eig_shifted:e}"
        )));
    }
    Ok(est)
}

/// `Z = L + P` and `W = d_L L + d_P P` at the volume nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityFields {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    /// Whether `min(d_L, d_P) ≤ W/Z ≤ max(d_L, d_P)` wherever `Z > 1e−14`.
    pub ratio_within_bounds: bool,
    /// Largest distance of `W/Z` outside the bounds (0 when within).
    pub max_violation: f64,
}

pub fn duality_fields(state: &StateVector, params: &ModelParams) -> DualityFields {
    let (dl, dp) = (params.d_vol_l, params.d_vol_p);
    let (lo, hi) = (dl.min(dp), dl.max(dp));
    let z: Vec<f64> = state
        .volume_l
        .iter()
        .zip(&state.volume_p)
        .map(|(l, p)| l + p)
        .collect();
    let w: Vec<f64> = state
        .volume_l
        .iter()
        .zip(&state.volume_p)
        .map(|(l, p)| dl * l + dp * p)
        .collect();
    let mut max_violation: f64 = 0.0;
    for (zi, wi) in z.iter().zip(&w) {
        if *zi > 1e-14 {
            let r = wi / zi;
            max_violation = max_violation.max(lo - r).max(r - hi);
        }
    }
    // Rounding in W/Z is a few ulps of the bounds.
    let slack = 1e-12 * hi;
    DualityFields {
        ratio_within_bounds: max_violation <= slack,
        max_violation: max_violation.max(0.0),
        z,
        w,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log y = slope·log x + intercept`.
pub fn decay_fit(xs: &[f64], ys: &[f64]) -> Result<DecayFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Domain(
            "decay fit needs at least 3 paired samples".into(),
        ));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) || !(xs[0] > 0.0) {
        return Err(Error::Domain(
            "xs must be positive and strictly increasing".into(),
        ));
    }
    if let Some(y) = ys.iter().find(|y| !(**y > 0.0)) {
        return Err(Error::Domain(format!("ys must be positive, found {y}")));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy <= 1e-300 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Samples of `L` and `P` along the ray at angle `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub theta: f64,
    pub r: Vec<f64>,
    pub volume_l: Vec<f64>,
    pub volume_p: Vec<f64>,
    /// Samples outside the polygon, evaluated on the nearest triangle.
    pub clamped: Vec<bool>,
}

fn barycentric(p: [Point2; 3], q: Point2) -> [f64; 3] {
    let area = signed_area2(p[0], p[1], p[2]);
    [
        signed_area2(q, p[1], p[2]) / area,
        signed_area2(p[0], q, p[2]) / area,
        signed_area2(p[0], p[1], q) / area,
    ]
}

/// Containing triangle (lowest index on ties) and barycentric weights; falls
/// back to the nearest triangle with clamped weights.
pub fn locate(mesh: &Mesh, q: Point2) -> (usize, [f64; 3], bool) {
    const TOL: f64 = -1e-12;
    for (k, t) in mesh.triangles.iter().enumerate() {
        let b = barycentric(mesh.triangle_points(t), q);
        if b.iter().all(|&w| w >= TOL) {
            return (k, b, false);
        }
    }
    let mut best = (0, f64::INFINITY);
    for (k, t) in mesh.triangles.iter().enumerate() {
        let p = mesh.triangle_points(t);
        let d = (0..3)
            .map(|e| crate::mesh::point_segment_distance(q, p[e], p[(e + 1) % 3]))
            .fold(f64::INFINITY, f64::min);
        if d < best.1 {
            best = (k, d);
        }
    }
    let b = barycentric(mesh.triangle_points(&mesh.triangles[best.0]), q);
    let c = b.map(|w| w.max(0.0));
    let s: f64 = c.iter().sum();
    (best.0, c.map(|w| w / s), true)
}

pub fn radial_profile(
    state: &StateVector,
    mesh: &Mesh,
    theta: f64,
    n_samples: usize,
) -> Result<RadialProfile> {
    if !(0.0..std::f64::consts::TAU).contains(&theta) {
        return Err(Error::Domain(format!("theta = {theta} outside [0, 2π)")));
    }
    if n_samples < 8 {
        return Err(Error::Domain(
            "radial profile needs at least 8 samples".into(),
        ));
    }
    if state.volume_l.len() != mesh.n_vertices() {
        return Err(Error::Domain("state does not belong to this mesh".into()));
    }
    let mut out = RadialProfile {
        theta,
        r: Vec::with_capacity(n_samples),
        volume_l: Vec::with_capacity(n_samples),
        volume_p: Vec::with_capacity(n_samples),
        clamped: Vec::with_capacity(n_samples),
    };
    let (c, s) = (theta.cos(), theta.sin());
    for k in 0..n_samples {
        let r = k as f64 / (n_samples - 1) as f64;
        let (t, b, clamped) = locate(mesh, Point2::new(r * c, r * s));
        let tri = mesh.triangles[t];
        let interp = |v: &[f64]| (0..3).map(|i| b[i] * v[tri[i]]).sum::<f64>();
        out.r.push(r);
        out.volume_l.push(interp(&state.volume_l));
        out.volume_p.push(interp(&state.volume_p));
        out.clamped.push(clamped);
    }
    Ok(out)
}

/// Largest interior local maximum of `values` exceeding both endpoint values
/// by more than `rel_margin` relative; returns its index.
pub fn interior_hump(values: &[f64], rel_margin: f64) -> Option<usize> {
    let n = values.len();
    if n < 3 {
        return None;
    }
    let ends = values[0].max(values[n - 1]);
    let threshold = ends + rel_margin * ends.abs();
    (1..n - 1)
        .filter(|&i| {
            values[i] >= values[i - 1] && values[i] >= values[i + 1] && values[i] > threshold
        })
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
}

/// Polar angles of the Γ nodes.
pub fn gamma_angles(mesh: &Mesh, dofs: &DofMap) -> Vec<f64> {
    dofs.gamma_to_volume
        .iter()
        .map(|&v| mesh.vertices[v].angle())
        .collect()
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Largest `|Δl/Δθ|` over boundary segments whose midpoint lies within
/// `window` radians of an endpoint of the active arc.
pub fn max_angular_slope_near_arc_ends(mesh: &Mesh, dofs: &DofMap, l: &[f64], window: f64) -> f64 {
    let ends = mesh
        .gamma2_endpoint_vertices
        .map(|v| mesh.vertices[v].angle());
    let angles = gamma_angles(mesh, dofs);
    let n = dofs.n_gamma;
    (0..n)
        .filter_map(|i| {
            let j = (i + 1) % n;
            let mid = mesh.vertices[dofs.gamma_to_volume[i]]
                .midpoint(mesh.vertices[dofs.gamma_to_volume[j]])
                .angle();
            let near = ends.iter().any(|&e| angular_distance(mid, e) <= window);
            near.then(|| (l[j] - l[i]).abs() / angular_distance(angles[j], angles[i]))
        })
        .fold(0.0, f64::max)
}

/// Minimum of a Γ field over the nodes of the active arc.
pub fn min_on_gamma2(dofs: &DofMap, l: &[f64]) -> f64 {
    dofs.gamma2_to_gamma
        .iter()
        .map(|&g| l[g])
        .fold(f64::INFINITY, f64::min)
}
