//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsrd::diagnostics::{gamma_angles, garding_estimate, radial_profile, Measures};
use vsrd::fem::{BlockOperator, DofMap, FemBlocks, Field, FullSystem, MassKind, ReducedSystem};
use vsrd::mesh::{build_disk_mesh, Mesh, MeshSpec};
use vsrd::presets::{presets, run_preset};
use vsrd::qssa::{compute_pstar_with, qssa_convergence_study, ConvergenceReport};
use vsrd::steady::{solve_stationary, Bordered, StationaryMethod};
use vsrd::transient::{run_transient, run_transient_with_observer, SimConfig, StateVector};
use vsrd::{ModelParams, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn default_mesh() -> Mesh {
    MeshSpec::default().build().unwrap()
}

fn rel_l2(m: &Measures, f: Field, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (m.norm_sq(f, &d) / m.norm_sq(f, b)).sqrt()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn mass_conservation() -> Result<Outcome> {
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["fig3_diff", "qssa_sweep"] {
        let dir = tempfile::tempdir()?;
        let start = Instant::now();
        let report = run_preset(name, dir.path(), &[])?;
        let elapsed = start.elapsed();
        let drift = if name == "fig3_diff" {
            // recomputed from the written diagnostics
            let mut r = csv::Reader::from_path(dir.path().join("diagnostics.csv"))?;
            let masses: Vec<f64> = r
                .records()
                .map(|rec| rec.unwrap()[1].parse::<f64>().unwrap())
                .collect();
            masses
                .iter()
                .map(|m| (m - masses[0]).abs() / masses[0])
                .fold(0.0, f64::max)
        } else {
            report.manifest.summary["max_relative_mass_drift"]
                .as_float()
                .unwrap()
        };
        pass &= drift <= 1e-9 && within(elapsed, 60);
        details.push(format!(
            "{name}: drift {drift:.2e} in {:.1}s",
            elapsed.as_secs_f64()
        ));
    }
    outcome(pass, details.join("; "))
}

fn ones_defect(a: &vsrd::sparse::CsrMatrix) -> f64 {
    let r = a.tr_matvec(&vec![1.0; a.nrows()]);
    r.iter().fold(0.0, |m: f64, v| m.max(v.abs())) / a.norm_inf()
}

fn conservation_identity() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut param_sets: Vec<ModelParams> = presets().iter().map(|p| p.config.params).collect();
    param_sets.extend(
        [1.0, 10.0, 20.0, 50.0, 100.0, 1000.0].map(|xi| ModelParams::default().with_xi(xi)),
    );
    for level in 0..2 {
        let mesh = build_disk_mesh(10, level, 0.25)?;
        for kind in [MassKind::Consistent, MassKind::Lumped] {
            let fem = FemBlocks::assemble(&mesh, kind)?;
            for p in &param_sets {
                for dt in [1e-4, 1e-3, 1e-2] {
                    worst = worst.max(ones_defect(
                        &BlockOperator::assemble(&fem, &FullSystem, p, dt)?.operator,
                    ));
                    count += 1;
                    if p.d_cortex_l == 0.0 && p.d_cortex_p == 0.0 {
                        worst = worst.max(ones_defect(
                            &BlockOperator::assemble(&fem, &ReducedSystem, p, dt)?.operator,
                        ));
                        count += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max ||w^T A||_inf / ||A||_inf = {worst:.2e} over {count} operators"),
    )
}

fn garding() -> Result<Outcome> {
    let start = Instant::now();
    let mesh = build_disk_mesh(10, 0, 0.25)?;
    let fem = FemBlocks::assemble(&mesh, MassKind::Consistent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sets = vec![ModelParams::default()];
    for _ in 0..5 {
        let mut r = || rng.random_range(0.1..10.0);
        let p = ModelParams {
            alpha: r(),
            beta: r(),
            gamma: r(),
            lambda: r(),
            sigma: r(),
            xi: r(),
            ..ModelParams::default()
        };
        sets.push(ModelParams {
            d_vol_l: rng.random_range(0.005..0.5),
            d_vol_p: rng.random_range(0.005..0.5),
            d_cortex_l: rng.random_range(0.0..0.1),
            d_cortex_p: rng.random_range(0.0..0.1),
            ..p
        });
    }
    let mut pass = true;
    let mut mins = Vec::new();
    let mut n = 0;
    for p in &sets {
        let op = BlockOperator::assemble(&fem, &FullSystem, p, 1e-3)?;
        n = op.layout.size();
        let g = garding_estimate(&op, true)?;
        pass &= g.validates() && g.min_eig_shifted >= -1e-10 && g.delta1.is_finite();
        mins.push(format!("{:.1e}", g.min_eig_shifted));
    }
    let elapsed = start.elapsed();
    pass &= n <= 2000 && within(elapsed, 30);
    outcome(
        pass,
        format!(
            "{n} dofs, min eigenvalues [{}], {:.1}s",
            mins.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn state_distance(m: &Measures, a: &StateVector, b: &StateVector) -> f64 {
    Field::ALL
        .iter()
        .map(|&f| {
            let d: Vec<f64> = a
                .field(f)
                .iter()
                .zip(b.field(f))
                .map(|(x, y)| x - y)
                .collect();
            m.norm_sq(f, &d)
        })
        .sum::<f64>()
        .sqrt()
}

fn time_step_convergence() -> Result<Outcome> {
    let mesh = default_mesh();
    let finals = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&dt| {
            let c = SimConfig {
                dt,
                t_end: 1.0,
                record_every: 1_000_000,
                ..SimConfig::default()
            };
            Ok(run_transient(&c, &mesh)?.final_state().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Measures::new(&mesh)?;
    let ratio =
        state_distance(&m, &finals[0], &finals[1]) / state_distance(&m, &finals[1], &finals[2]);
    outcome(
        (1.7..=2.3).contains(&ratio),
        format!("error ratio {ratio:.4}"),
    )
}

fn steady_state_oracle() -> Result<Outcome> {
    let start = Instant::now();
    let mesh = default_mesh();
    let m = Measures::new(&mesh)?;
    let c = SimConfig {
        dt: 1e-2,
        t_end: 100.0,
        record_every: 1_000_000,
        ..SimConfig::default()
    };
    let rec = run_transient(&c, &mesh)?;
    let m0 = rec.diagnostics[0].mass.total;
    let st = solve_stationary(&c.params, &mesh, m0)?;
    let errs: Vec<f64> = Field::ALL
        .iter()
        .map(|&f| rel_l2(&m, f, rec.final_state().field(f), st.field(f)))
        .collect();
    let oracle = errs.iter().all(|&e| e <= 1e-4);

    let pinf = |xi: f64| solve_stationary(&c.params.with_xi(xi), &mesh, m0).map(|s| s.volume_p);
    let reference = pinf(1000.0)?;
    let gap = |p: &[f64]| {
        p.iter()
            .zip(&reference)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    };
    let gaps = [1.0, 10.0, 100.0]
        .iter()
        .map(|&xi| pinf(xi).map(|p| gap(&p)))
        .collect::<Result<Vec<_>>>()?;
    let close = gaps[0] <= 0.01;
    let trend = gaps.windows(2).all(|w| w[1] < w[0]);
    let elapsed = start.elapsed();
    outcome(
        oracle && close && trend && within(elapsed, 180),
        format!(
            "t=100 rel L2 L {:.2e} P {:.2e} l {:.2e} p {:.2e} (<= 1e-4: {oracle}); P xi=1 vs 1000 {:.2}% (<= 1%: {close}); gaps xi=1,10,100 [{:.1e}, {:.1e}, {:.1e}] decreasing: {trend}; {:.1}s",
            errs[0], errs[1], errs[2], errs[3], 100.0 * gaps[0], gaps[0], gaps[1], gaps[2], elapsed.as_secs_f64()
        ),
    )
}

struct Qssa {
    report: ConvergenceReport,
    elapsed: Duration,
    pstar_defect: f64,
}

fn qssa_study() -> Result<Qssa> {
    let mesh = default_mesh();
    let base = SimConfig {
        dt: 1e-4,
        ..SimConfig::default()
    };
    let start = Instant::now();
    let report = qssa_convergence_study(&base, &mesh, &[10.0, 100.0, 1000.0], 0.5)?;
    let elapsed = start.elapsed();
    let fem = FemBlocks::assemble(&mesh, MassKind::Consistent)?;
    let p0 = vec![0.4; fem.dofs.n_gamma2];
    let pstar = compute_pstar_with(&fem, &p0)?;
    let arc_integral: f64 = fem.mass_gamma2.matvec(&p0).iter().sum();
    Ok(Qssa {
        report,
        elapsed,
        pstar_defect: (pstar.total_integral - arc_integral).abs(),
    })
}

fn qssa_decay(q: &Qssa) -> Result<Outcome> {
    let xs: Vec<f64> = q.report.xis.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = q.report.p_norms.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    outcome(
        slope <= -0.9 && within(q.elapsed, 180),
        format!(
            "slope {slope:.3}, ||p||^2 {:?}, {:.1}s",
            q.report.p_norms,
            q.elapsed.as_secs_f64()
        ),
    )
}

fn uniform_l1(q: &Qssa) -> Result<Outcome> {
    let v = &q.report.p_l1_scaled;
    let spread = max_of(v) / v.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        spread <= 2.0,
        format!("xi*||p||_L1 = {v:.4?}, spread {spread:.3}"),
    )
}

fn qssa_convergence(q: &Qssa) -> Result<Outcome> {
    let e = &q.report.errors_l_volume;
    let inversions = e.windows(2).filter(|w| w[1] > w[0]).count();
    outcome(
        inversions <= 1 && q.pstar_defect <= 1e-10,
        format!(
            "||L^xi - L||: {e:?}, {inversions} inversions; |int P* - int p0| = {:.1e}",
            q.pstar_defect
        ),
    )
}

fn monotone_suppression() -> Result<Outcome> {
    let mesh = default_mesh();
    let max_p = [10.0, 20.0, 50.0, 100.0]
        .iter()
        .map(|&xi| {
            let c = SimConfig {
                params: ModelParams::default().with_xi(xi),
                dt: 1e-4,
                t_end: 0.04,
                record_every: 1_000_000,
                ..SimConfig::default()
            };
            Ok(max_of(&run_transient(&c, &mesh)?.final_state().cortex_p))
        })
        .collect::<Result<Vec<_>>>()?;
    outcome(
        max_p.windows(2).all(|w| w[1] < w[0]),
        format!("max p(0.04) = {max_p:.4?}"),
    )
}

/// Index of an interior local maximum above both ends by more than `margin` relative.
fn hump(values: &[f64], margin: f64) -> Option<usize> {
    let n = values.len();
    let ends = values[0].max(values[n - 1]);
    (1..n - 1).find(|&i| {
        values[i] >= values[i - 1]
            && values[i] >= values[i + 1]
            && values[i] > ends * (1.0 + margin)
    })
}

fn hump_detection() -> Result<Outcome> {
    let start = Instant::now();
    let mesh = default_mesh();
    let fem = FemBlocks::assemble(&mesh, MassKind::Consistent)?;
    let m0 = 2.2 * PI;
    let with = Bordered.solve(
        &fem,
        &FullSystem,
        &ModelParams::default().with_surface_diffusion(0.02, 0.04),
        m0,
    )?;
    let without = solve_stationary(&ModelParams::default(), &mesh, m0)?;
    let pw = radial_profile(&with.state(), &mesh, 1.25 * PI, 101)?;
    let pn = radial_profile(&without.state(), &mesh, 1.25 * PI, 101)?;
    let hw = hump(&pw.volume_l, 0.0);
    let hn = hump(&pn.volume_l, 1e-3);
    let located = hw.is_some_and(|i| pw.r[i] > 0.2 && pw.r[i] < 0.95);
    let elapsed = start.elapsed();
    outcome(
        located && hn.is_none() && within(elapsed, 120),
        format!(
            "with surface diffusion: maximum at r = {:?}; without: {:?}; {:.1}s",
            hw.map(|i| pw.r[i]),
            hn.map(|i| pn.r[i]),
            elapsed.as_secs_f64()
        ),
    )
}

fn indirect_diffusion() -> Result<Outcome> {
    let mesh = default_mesh();
    let dofs = DofMap::new(&mesh)?;
    let theta = gamma_angles(&mesh, &dofs);
    let ends = mesh
        .gamma2_endpoint_vertices
        .map(|v| mesh.vertices[v].angle());
    let ang = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    };
    let measure = |d_l: f64| -> Result<(f64, f64)> {
        let p = ModelParams {
            d_vol_l: d_l,
            ..ModelParams::default()
        };
        let l = solve_stationary(&p, &mesh, 2.2 * PI)?.cortex_l;
        let n = dofs.n_gamma;
        let mut slope: f64 = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            let mid = theta[i] + 0.5 * ang(theta[j], theta[i]);
            if ends.iter().any(|&e| ang(mid, e) <= 0.2) {
                slope = slope.max((l[j] - l[i]).abs() / ang(theta[j], theta[i]));
            }
        }
        let min = dofs
            .gamma2_to_gamma
            .iter()
            .map(|&g| l[g])
            .fold(f64::INFINITY, f64::min);
        Ok((slope, min))
    };
    let (s1, m1) = measure(0.01)?;
    let (s2, m2) = measure(0.1)?;
    outcome(
        s2 < s1 && m2 > m1,
        format!("max |dl/dtheta| {s1:.4} -> {s2:.4}; min l on arc {m1:.4} -> {m2:.4}"),
    )
}

fn duality_bound() -> Result<Outcome> {
    let preset = presets()
        .into_iter()
        .find(|p| p.name == "fig3_nodiff")
        .expect("fig3_nodiff");
    let c = SimConfig {
        record_every: 1_000_000,
        ..preset.config
    };
    let (lo, hi) = (c.params.d_vol_l, c.params.d_vol_p);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    run_transient_with_observer(&c, &default_mesh(), &mut |s, _| {
        for (l, p) in s.volume_l.iter().zip(&s.volume_p) {
            let z = l + p;
            if z > 1e-14 {
                let r = (lo * l + hi * p) / z;
                worst = worst.max(lo - r).max(r - hi);
                checked += 1;
            }
        }
        Ok(())
    })?;
    outcome(
        worst <= 1e-12 * hi,
        format!("{checked} nodal checks, worst excursion {worst:.1e} outside [{lo}, {hi}]"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Result<Outcome>)> = vec![
        (
            "mass conservation (fig3_diff, qssa_sweep)",
            mass_conservation(),
        ),
        ("discrete conservation identity", conservation_identity()),
        ("Garding shadow", garding()),
        ("time-step convergence", time_step_convergence()),
        ("steady-state oracle equivalence", steady_state_oracle()),
    ];
    match qssa_study() {
        Ok(q) => {
            results.push(("QSSA decay", qssa_decay(&q)));
            results.push(("uniform L1 bound", uniform_l1(&q)));
            results.push(("QSSA convergence", qssa_convergence(&q)));
        }
        Err(e) => {
            let msg = e.to_string();
            for name in ["QSSA decay", "uniform L1 bound", "QSSA convergence"] {
                results.push((name, Err(vsrd::Error::Domain(msg.clone()))));
            }
        }
    }
    results.push(("monotone p suppression", monotone_suppression()));
    results.push(("hump detection", hump_detection()));
    results.push(("indirect-diffusion trend", indirect_diffusion()));
    results.push(("duality ratio bound", duality_bound()));

    let mut failed = 0;
    for (name, r) in &results {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
