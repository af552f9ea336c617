use proptest::prelude::*;
use vsrd::diagnostics::{
    duality_fields, lyapunov_bound, lyapunov_h, lyapunov_rate, total_mass, Measures,
};
use vsrd::fem::{assemble_block_operator, FemBlocks, Field, FullSystem, MassKind, ReducedSystem};
use vsrd::mesh::{build_disk_mesh, Mesh};
use vsrd::qssa::{compute_pstar, compute_pstar_with, run_reduced};
use vsrd::steady::{solve_stationary, verify_stationarity, Bordered, Reduction, StationaryMethod};
use vsrd::transient::{run_transient, InitialData, SimConfig, Simulation, StateVector};
use vsrd::ModelParams;

fn coarse() -> Mesh {
    build_disk_mesh(8, 0, 0.5).unwrap()
}

fn level0() -> Mesh {
    build_disk_mesh(10, 0, 0.25).unwrap()
}

fn rel_l2(m: &Measures, f: Field, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (m.norm_sq(f, &d) / m.norm_sq(f, b)).sqrt()
}

fn rates() -> impl Strategy<Value = ModelParams> {
    (
        prop::array::uniform6(0.1f64..10.0),
        prop::array::uniform2(1e-3f64..0.5),
    )
        .prop_map(|(r, d)| ModelParams {
            alpha: r[0],
            beta: r[1],
            gamma: r[2],
            lambda: r[3],
            sigma: r[4],
            xi: r[5],
            d_vol_l: d[0],
            d_vol_p: d[1],
            ..ModelParams::default()
        })
}

fn layout_of(mesh: &Mesh) -> vsrd::fem::BlockLayout {
    assemble_block_operator(mesh, &ModelParams::default(), 1.0)
        .unwrap()
        .layout
}

#[test]
fn one_step_conserves_the_initial_mass() {
    let mesh = level0();
    for dt in [1e-3, 0.1, 10.0] {
        let sim = Simulation::new(
            &mesh,
            &FullSystem,
            &ModelParams::default(),
            dt,
            MassKind::Consistent,
            "sparse-lu",
            1e-12,
        )
        .unwrap();
        let s0 = InitialData::default().state(&sim.layout()).unwrap();
        let m0 = total_mass(&s0, &sim.measures).total;
        let m1 = total_mass(&sim.step(&s0).unwrap(), &sim.measures).total;
        assert!((m1 - m0).abs() <= 1e-10 * m0, "dt {dt}: {m0} -> {m1}");
    }
}

#[test]
fn initial_mass_tends_to_its_continuous_value() {
    let expected = 2.2 * std::f64::consts::PI;
    let errs: Vec<f64> = (0..3)
        .map(|k| {
            let mesh = build_disk_mesh(10, k, 0.25).unwrap();
            let s = InitialData::default().state(&layout_of(&mesh)).unwrap();
            (expected - total_mass(&s, &Measures::new(&mesh).unwrap()).total).abs()
        })
        .collect();
    assert!(errs[2] < errs[1] && errs[1] < errs[0]);
    assert!(errs[2] < 2e-3);
}

#[test]
fn fast_release_piles_p_up_near_the_active_arc() {
    let mesh = vsrd::mesh::MeshSpec::default().build().unwrap();
    let max_p = |xi: f64| {
        let c = SimConfig {
            params: ModelParams::default().with_xi(xi),
            dt: 1e-3,
            t_end: 0.3,
            record_every: 1_000_000,
            ..SimConfig::default()
        };
        run_transient(&c, &mesh)
            .unwrap()
            .final_state()
            .volume_p
            .iter()
            .copied()
            .fold(0.0, f64::max)
    };
    let ratio = max_p(1000.0) / max_p(1.0);
    assert!(ratio > 1.5, "ratio {ratio}");
}

#[test]
fn lyapunov_functional_stays_bounded() {
    let mesh = level0();
    let c = SimConfig {
        dt: 1e-2,
        t_end: 20.0,
        record_every: 1_000_000,
        ..SimConfig::default()
    };
    let rec = run_transient(&c, &mesh).unwrap();
    let h: Vec<f64> = rec.diagnostics.iter().map(|d| d.h).collect();
    let c_h = lyapunov_bound(&h, c.dt, lyapunov_rate(&c.params)).unwrap();
    assert!(c_h.is_finite());
    let bound = h[0].max(c_h);
    assert!(h.iter().all(|&v| v <= bound * (1.0 + 1e-12)));
    assert_eq!(rec.negativity_violations, 0);
}

#[test]
fn long_run_approaches_stationarity() {
    let mesh = level0();
    let c = SimConfig {
        dt: 1e-2,
        t_end: 100.0,
        record_every: 1_000_000,
        ..SimConfig::default()
    };
    let rec = run_transient(&c, &mesh).unwrap();
    let op = assemble_block_operator(&mesh, &c.params, c.dt).unwrap();
    assert!(verify_stationarity(rec.final_state(), &op).unwrap() <= 1e-4);
    let rate = |t: usize| rec.diagnostics[t * 100].increment_rate;
    assert!(rate(100) < rate(50) && rate(50) < rate(10));
    assert!(rec.max_relative_mass_drift() <= 1e-9);
}

#[test]
fn reduced_system_settles_on_its_stationary_state() {
    let mesh = level0();
    let c = SimConfig {
        dt: 2e-2,
        t_end: 400.0,
        record_every: 1_000_000,
        ..SimConfig::default()
    };
    let rec = run_reduced(&c, &mesh).unwrap();
    let fem = FemBlocks::assemble(&mesh, MassKind::Consistent).unwrap();
    let m0 = rec.diagnostics[0].mass.total;
    let st = Reduction
        .solve(&fem, &ReducedSystem, &c.params, m0)
        .unwrap();
    let m = Measures::new(&mesh).unwrap();
    for f in [Field::VolumeL, Field::VolumeP, Field::CortexL] {
        let r = rel_l2(&m, f, rec.final_state().field(f), st.field(f));
        assert!(r <= 1e-3, "{}: {r}", f.symbol());
    }
    assert!(rec.max_relative_mass_drift() <= 1e-9);
}

#[test]
fn reduced_run_carries_the_full_initial_mass() {
    let mesh = level0();
    let c = SimConfig {
        t_end: 0.01,
        ..SimConfig::default()
    };
    let rec = run_reduced(&c, &mesh).unwrap();
    let full = InitialData::default().state(&layout_of(&mesh)).unwrap();
    let m_full = total_mass(&full, &Measures::new(&mesh).unwrap()).total;
    for d in &rec.diagnostics {
        assert!((d.mass.total - m_full).abs() <= 1e-10 * m_full);
    }
}

#[test]
fn reduced_system_is_the_large_xi_limit() {
    let mesh = coarse();
    let c = SimConfig {
        dt: 1e-3,
        t_end: 1.0,
        record_every: 1_000_000,
        initial: InitialData::constant(0.8, 0.6, 0.3, 0.0),
        ..SimConfig::default()
    };
    let reduced = run_reduced(&c, &mesh).unwrap();
    let m = Measures::new(&mesh).unwrap();
    let err = |xi: f64| {
        let full = run_transient(
            &SimConfig {
                params: c.params.with_xi(xi),
                ..c.clone()
            },
            &mesh,
        )
        .unwrap();
        rel_l2(
            &m,
            Field::VolumeL,
            &full.final_state().volume_l,
            &reduced.final_state().volume_l,
        )
    };
    let (e100, e10000) = (err(100.0), err(1e4));
    assert!(e10000 < 1e-3, "{e10000}");
    assert!(e10000 < 0.05 * e100);
}

#[test]
fn duality_ratio_along_a_trajectory() {
    let mesh = level0();
    let c = SimConfig {
        t_end: 0.5,
        record_every: 1_000_000,
        ..SimConfig::default()
    };
    let mut bad = 0;
    vsrd::transient::run_transient_with_observer(&c, &mesh, &mut |s, _| {
        if !duality_fields(s, &c.params).ratio_within_bounds {
            bad += 1;
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(bad, 0);
}

#[test]
fn stationary_field_relation_and_mass() {
    let mesh = level0();
    let m0 = 2.2 * std::f64::consts::PI;
    let p = ModelParams::default();
    let s = solve_stationary(&p, &mesh, m0).unwrap();
    let w: Vec<f64> = s
        .volume_l
        .iter()
        .zip(&s.volume_p)
        .map(|(l, q)| p.d_vol_l * l + p.d_vol_p * q)
        .collect();
    assert!(w.iter().all(|v| (v - s.c).abs() <= 1e-8 * s.c));
    assert!((s.total_mass - m0).abs() <= 1e-10 * m0);
    let op = assemble_block_operator(&mesh, &p, 1.0).unwrap();
    assert!(verify_stationarity(&s.state(), &op).unwrap() <= 1e-8);
    for (k, &g) in FemBlocks::assemble(&mesh, MassKind::Consistent)
        .unwrap()
        .dofs
        .gamma2_to_gamma
        .iter()
        .enumerate()
    {
        assert!((s.cortex_p[k] - p.sigma / p.xi * s.cortex_l[g]).abs() <= 1e-12 * s.cortex_l[g]);
    }
}

/// Number of Γ segments between Γ node `g` and the nearest arc endpoint.
fn segments_to_arc_end(g: usize, n_gamma: usize, ends: [usize; 2]) -> usize {
    ends.iter()
        .map(|&e| {
            let d = g.abs_diff(e);
            d.min(n_gamma - d)
        })
        .min()
        .unwrap()
}

#[test]
fn nodal_cortex_relation_in_the_stationary_state() {
    let mesh = vsrd::mesh::MeshSpec::default().build().unwrap();
    let p = ModelParams::default();
    for kind in [MassKind::Lumped, MassKind::Consistent] {
        let fem = FemBlocks::assemble(&mesh, kind).unwrap();
        let s = Reduction.solve(&fem, &FullSystem, &p, 5.0).unwrap();
        let flagged: Vec<bool> = {
            let mut v = vec![false; fem.dofs.n_gamma];
            fem.dofs.gamma2_to_gamma.iter().for_each(|&g| v[g] = true);
            v
        };
        let ends = [
            fem.dofs.gamma2_to_gamma[0],
            *fem.dofs.gamma2_to_gamma.last().unwrap(),
        ];
        for g in 0..fem.dofs.n_gamma {
            let trace = s.volume_l[fem.dofs.gamma_to_volume[g]];
            let chi = if ends.contains(&g) {
                0.5
            } else if flagged[g] {
                1.0
            } else {
                0.0
            };
            let expected = p.lambda / (p.gamma + p.sigma * chi) * trace;
            let far = segments_to_arc_end(g, fem.dofs.n_gamma, ends) >= 20;
            if kind == MassKind::Lumped || far {
                assert!(
                    (s.cortex_l[g] - expected).abs() <= 1e-10 * expected,
                    "{kind:?} node {g}: {} vs {expected}",
                    s.cortex_l[g]
                );
            }
        }
    }
}

#[test]
fn stationary_methods_agree() {
    let mesh = level0();
    let fem = FemBlocks::assemble(&mesh, MassKind::Consistent).unwrap();
    let p = ModelParams::default().with_xi(3.0);
    let a = Reduction.solve(&fem, &FullSystem, &p, 4.0).unwrap();
    let b = Bordered.solve(&fem, &FullSystem, &p, 4.0).unwrap();
    let m = Measures::new(&mesh).unwrap();
    for f in Field::ALL {
        assert!(rel_l2(&m, f, a.field(f), b.field(f)) <= 1e-9);
    }
}

#[test]
fn pstar_support_and_extremum() {
    let mesh = coarse();
    let fem = FemBlocks::assemble(&mesh, MassKind::Consistent).unwrap();
    let ps = compute_pstar_with(&fem, &vec![0.4; fem.dofs.n_gamma2]).unwrap();
    let arc_nodes = fem.dofs.gamma2_to_volume();
    let (imax, _) = ps
        .values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    assert!(arc_nodes.contains(&imax));
    let far = mesh
        .vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| (v.x - 0.7).powi(2) + (v.y - 0.7).powi(2) < 0.1)
        .map(|(i, _)| ps.values[i].abs())
        .fold(0.0, f64::max);
    assert!(far < 1e-2 * ps.values[imax]);
    assert!((ps.total_integral - 0.4 * mesh.active_length()).abs() <= 1e-12);
}

#[test]
fn zero_data_stays_zero() {
    let mesh = coarse();
    let c = SimConfig {
        t_end: 0.05,
        initial: InitialData::constant(0.0, 0.0, 0.0, 0.0),
        ..SimConfig::default()
    };
    assert!(run_transient(&c, &mesh).unwrap().final_state().max_abs() == 0.0);
    assert!(run_reduced(&c, &mesh).unwrap().final_state().max_abs() == 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mass_is_conserved_at_every_step(p in rates(), dt in 1e-3f64..0.5) {
        let mesh = coarse();
        let c = SimConfig { params: p, dt, t_end: 10.0 * dt, tolerance: 1e-10, ..SimConfig::default() };
        let rec = run_transient(&c, &mesh).unwrap();
        let m = rec.masses();
        for w in m.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= 10.0 * c.tolerance * m[0]);
        }
    }

    #[test]
    fn pstar_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let mesh = coarse();
        let n = FemBlocks::assemble(&mesh, MassKind::Consistent).unwrap().dofs.n_gamma2;
        let f = |k: usize, s: u64| ((k as f64 + 1.0) * (s as f64 + 0.5)).sin();
        let p0: Vec<f64> = (0..n).map(|k| f(k, seed)).collect();
        let q0: Vec<f64> = (0..n).map(|k| f(k, seed + 17)).collect();
        let mix: Vec<f64> = p0.iter().zip(&q0).map(|(x, y)| a * x + b * y).collect();
        let (pp, pq, pm) = (compute_pstar(&mesh, &p0).unwrap(), compute_pstar(&mesh, &q0).unwrap(), compute_pstar(&mesh, &mix).unwrap());
        let scale = pp.values.iter().chain(&pq.values).fold(0.0f64, |m, v| m.max(v.abs())) * (a.abs() + b.abs()).max(1.0);
        for i in 0..pm.values.len() {
            prop_assert!((pm.values[i] - (a * pp.values[i] + b * pq.values[i])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn mass_and_energy_of_random_states(a in -2.0f64..2.0, b in -2.0f64..2.0, s in 0u64..500) {
        let mesh = coarse();
        let layout = layout_of(&mesh);
        let m = Measures::new(&mesh).unwrap();
        let gen = |seed: u64| {
            let u: Vec<f64> = (0..layout.size()).map(|k| ((k as f64 * 0.37 + seed as f64) * 1.3).sin()).collect();
            StateVector::unstack(&layout, &u, 0.0).unwrap()
        };
        let (x, y) = (gen(s), gen(s + 1));
        let z = StateVector::unstack(&layout, &x.stack().iter().zip(y.stack()).map(|(u, v)| a * u + b * v).collect::<Vec<_>>(), 0.0).unwrap();
        let (mx, my, mz) = (total_mass(&x, &m), total_mass(&y, &m), total_mass(&z, &m));
        prop_assert!((mz.total - (a * mx.total + b * my.total)).abs() <= 1e-12 * (1.0 + mx.total.abs() + my.total.abs()) * 4.0);
        let parts = mz.mass_volume_l + mz.mass_volume_p + mz.mass_gamma_l + mz.mass_gamma2_p;
        prop_assert!((parts - mz.total).abs() <= 1e-14 * (1.0 + mz.total.abs()) * 10.0);
        let p = ModelParams::default();
        prop_assert!(lyapunov_h(&x, &p, &m) > 0.0);
        prop_assert!(lyapunov_h(&z, &p, &m) >= 0.0);
    }

    #[test]
    fn stationary_state_scales_with_mass(kappa in 0.01f64..100.0, xi in 0.5f64..50.0) {
        let mesh = coarse();
        let p = ModelParams::default().with_xi(xi);
        let s1 = solve_stationary(&p, &mesh, 1.0).unwrap();
        let sk = solve_stationary(&p, &mesh, kappa).unwrap();
        for f in Field::ALL {
            for (a, b) in s1.field(f).iter().zip(sk.field(f)) {
                prop_assert!((kappa * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
        }
    }
}
