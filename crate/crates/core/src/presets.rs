//! Named experiments and run orchestration.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::with_overrides;
use crate::diagnostics::{
    duality_fields, interior_hump, max_angular_slope_near_arc_ends, min_on_gamma2, radial_profile,
    Measures,
};
use crate::error::{Error, Result};
use crate::fem::{assemble_block_operator, DofMap, FemBlocks, Field, FullSystem};
use crate::mesh::Mesh;
use crate::output::{
    prepare_dir, snapshot_files, summary_float, write_convergence, write_diagnostics,
    write_matrix_file, write_mesh_file, write_profiles, write_snapshot, write_table, Manifest,
};
use crate::params::ModelParams;
use crate::qssa::{qssa_convergence_study, run_reduced};
use crate::steady::{stationary_method_by_name, SteadyState};
use crate::transient::{run_transient, run_transient_with_observer, SimConfig, TrajectoryRecord};

/// Angle of the radial profile through the middle of the active arc.
pub const PROFILE_THETA: f64 = 1.25 * PI;
pub const PROFILE_SAMPLES: usize = 101;
pub const HUMP_MARGIN: f64 = 1e-3;
/// Angular window around the arc endpoints for the slope diagnostic.
pub const SLOPE_WINDOW: f64 = 0.2;
/// `record_every` that keeps only the initial and final snapshot.
pub const FINAL_ONLY: usize = 1_000_000_000;

/// Files and scalar results of one executed experiment.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub summary: toml::Table,
}

impl Outcome {
    fn put(&mut self, key: impl Into<String>, v: f64) {
        self.summary.insert(key.into(), summary_float(v));
    }

    fn put_value(&mut self, key: impl Into<String>, v: impl Into<toml::Value>) {
        self.summary.insert(key.into(), v.into());
    }
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    /// Base configuration before `--set` overrides.
    fn config(&self) -> SimConfig;
    fn expected_outputs(&self, config: &SimConfig) -> Vec<String>;
    fn execute(&self, config: &SimConfig, mesh: &Mesh, outdir: &Path) -> Result<Outcome>;
}

/// Catalogue entry as listed by `vsrd presets`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub config: SimConfig,
    pub description: String,
    pub expected_outputs: Vec<String>,
}

fn snapshot_steps(n_steps: usize, record_every: usize) -> Vec<usize> {
    let r = record_every.max(1);
    let mut steps: Vec<usize> = (0..=n_steps).step_by(r).collect();
    if n_steps % r != 0 {
        steps.push(n_steps);
    }
    steps
}

fn trajectory_outputs(prefix: &str, config: &SimConfig) -> Vec<String> {
    let mut out = Vec::new();
    for k in 0..snapshot_steps(config.n_steps(), config.record_every).len() {
        out.extend(snapshot_files(&format!("{prefix}snapshot_{k:04}")));
    }
    out.push(format!("{prefix}diagnostics.csv"));
    out
}

fn write_trajectory(
    prefix: &str,
    record: &TrajectoryRecord,
    mesh: &Mesh,
    dofs: &DofMap,
    outdir: &Path,
    out: &mut Outcome,
) -> Result<()> {
    for (k, s) in record.snapshots.iter().enumerate() {
        let stem = format!("{prefix}snapshot_{k:04}");
        write_snapshot(outdir, &stem, s, mesh, dofs)?;
        out.outputs.extend(snapshot_files(&stem));
    }
    let name = format!("{prefix}diagnostics.csv");
    write_diagnostics(&outdir.join(&name), &record.diagnostics)?;
    out.outputs.push(name);
    out.put(
        format!("{prefix}max_relative_mass_drift"),
        record.max_relative_mass_drift(),
    );
    out.put(format!("{prefix}t_final"), record.final_state().t);
    out.put(
        format!("{prefix}condition_estimate"),
        record.condition_estimate,
    );
    out.put_value(
        format!("{prefix}negativity_violations"),
        record.negativity_violations as i64,
    );
    Ok(())
}

/// `‖a − b‖ / ‖b‖` in the L² norm of `f`.
pub fn relative_l2(measures: &Measures, f: Field, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (measures.norm_sq(f, &d) / measures.norm_sq(f, b)).sqrt()
}

/// Largest pointwise `|a − b| / |b|`.
pub fn max_pointwise_relative(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) / y).abs())
        .fold(0.0, f64::max)
}

fn stationary_method_for(params: &ModelParams) -> &'static str {
    if params.d_cortex_l == 0.0 && params.d_cortex_p == 0.0 {
        "reduction"
    } else {
        "bordered"
    }
}

/// Stationary state of the full system with the initial mass of `config`.
pub fn stationary_for(config: &SimConfig, mesh: &Mesh, m0: f64) -> Result<SteadyState> {
    let fem = FemBlocks::assemble(mesh, config.mass_kind)?;
    let method = stationary_method_by_name(stationary_method_for(&config.params))?;
    method.solve(&fem, &FullSystem, &config.params, m0)
}

/// One transient run as configured; `model = "qssa"` runs the reduced system.
pub struct SingleRun {
    pub name: String,
    pub description: String,
    pub config: SimConfig,
}

impl Experiment for SingleRun {
    fn name(&self) -> &str {
        &self.name
    }

    fn description(&self) -> &str {
        &self.description
    }

    fn config(&self) -> SimConfig {
        self.config.clone()
    }

    fn expected_outputs(&self, config: &SimConfig) -> Vec<String> {
        trajectory_outputs("", config)
    }

    fn execute(&self, config: &SimConfig, mesh: &Mesh, outdir: &Path) -> Result<Outcome> {
        let record = if config.model == "qssa" {
            run_reduced(config, mesh)?
        } else {
            run_transient(config, mesh)?
        };
        let dofs = DofMap::new(mesh)?;
        let mut out = Outcome::default();
        write_trajectory("", &record, mesh, &dofs, outdir, &mut out)?;
        Ok(out)
    }
}

/// Long transient run next to the stationary solve, with profile and boundary diagnostics.
pub struct StationaryFigure {
    pub name: &'static str,
    pub description: &'static str,
    pub params: ModelParams,
}

impl StationaryFigure {
    fn base_config(params: ModelParams) -> SimConfig {
        SimConfig {
            params,
            dt: 1e-2,
            t_end: 100.0,
            record_every: 2500,
            ..SimConfig::default()
        }
    }
}

impl Experiment for StationaryFigure {
    fn name(&self) -> &str {
        self.name
    }

    fn description(&self) -> &str {
        self.description
    }

    fn config(&self) -> SimConfig {
        Self::base_config(self.params)
    }

    fn expected_outputs(&self, config: &SimConfig) -> Vec<String> {
        let mut out = trajectory_outputs("", config);
        out.extend(snapshot_files("stationary"));
        out.push("profile.csv".into());
        out
    }

    fn execute(&self, config: &SimConfig, mesh: &Mesh, outdir: &Path) -> Result<Outcome> {
        let mut duality_violations = 0usize;
        let record = run_transient_with_observer(config, mesh, &mut |s, _| {
            if !duality_fields(s, &config.params).ratio_within_bounds {
                duality_violations += 1;
            }
            Ok(())
        })?;
        let dofs = DofMap::new(mesh)?;
        let measures = Measures::new(mesh)?;
        let mut out = Outcome::default();
        write_trajectory("", &record, mesh, &dofs, outdir, &mut out)?;
        out.put_value("duality_violations", duality_violations as i64);

        let m0 = record.diagnostics[0].mass.total;
        let steady = stationary_for(config, mesh, m0)?;
        let state = steady.state();
        write_snapshot(outdir, "stationary", &state, mesh, &dofs)?;
        out.outputs.extend(snapshot_files("stationary"));
        out.put_value("stationary_t", "inf");
        out.put_value("stationary_method", stationary_method_for(&config.params));
        out.put("stationary_residual_norm", steady.residual_norm);
        let last = record.final_state();
        for f in Field::ALL {
            if !steady.field(f).is_empty() {
                out.put(
                    format!("transient_vs_stationary_rel_l2_{}", f.symbol()),
                    relative_l2(&measures, f, last.field(f), steady.field(f)),
                );
            }
        }

        let profile = radial_profile(&state, mesh, PROFILE_THETA, PROFILE_SAMPLES)?;
        write_profiles(&outdir.join("profile.csv"), std::slice::from_ref(&profile))?;
        out.outputs.push("profile.csv".into());
        let hump = interior_hump(&profile.volume_l, HUMP_MARGIN);
        out.put_value("profile_hump", hump.is_some());
        if let Some(i) = hump {
            out.put("profile_hump_r", profile.r[i]);
        }
        out.put(
            "max_angular_slope_near_arc_ends",
            max_angular_slope_near_arc_ends(mesh, &dofs, &steady.cortex_l, SLOPE_WINDOW),
        );
        out.put(
            "min_l_on_active_arc",
            min_on_gamma2(&dofs, &steady.cortex_l),
        );
        Ok(out)
    }
}

/// Extra comparison written by a ξ sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepCompare {
    /// `max_Γ₂ p` at the final time.
    MaxCortexP,
    /// `max P` at the final time and over the run.
    MaxVolumeP,
    /// Final and stationary `P` fields, node by node.
    VolumeP,
}

pub struct XiSweep {
    pub name: &'static str,
    pub description: &'static str,
    pub xis: &'static [f64],
    pub dt: f64,
    pub t_end: f64,
    pub compare: SweepCompare,
}

fn xi_tag(xi: f64) -> String {
    format!("xi_{xi}")
}

impl XiSweep {
    fn comparison_file(&self) -> &'static str {
        match self.compare {
            SweepCompare::MaxCortexP => "max_p_vs_xi.csv",
            SweepCompare::MaxVolumeP => "max_P_vs_xi.csv",
            SweepCompare::VolumeP => "P_comparison.csv",
        }
    }
}

impl Experiment for XiSweep {
    fn name(&self) -> &str {
        self.name
    }

    fn description(&self) -> &str {
        self.description
    }

    fn config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            t_end: self.t_end,
            record_every: FINAL_ONLY,
            ..SimConfig::default()
        }
    }

    fn expected_outputs(&self, _config: &SimConfig) -> Vec<String> {
        let mut out = Vec::new();
        for &xi in self.xis {
            let tag = xi_tag(xi);
            out.extend(snapshot_files(&format!("{tag}_final")));
            out.push(format!("{tag}_diagnostics.csv"));
            if self.compare == SweepCompare::VolumeP {
                out.extend(snapshot_files(&format!("{tag}_stationary")));
            }
        }
        out.push(self.comparison_file().into());
        out
    }

    fn execute(&self, config: &SimConfig, mesh: &Mesh, outdir: &Path) -> Result<Outcome> {
        if config.model != "full" {
            return Err(Error::Unsupported(format!(
                "preset {} runs the full system only",
                self.name
            )));
        }
        let dofs = DofMap::new(mesh)?;
        let measures = Measures::new(mesh)?;
        let stationary = self.compare == SweepCompare::VolumeP;
        let runs: Vec<(TrajectoryRecord, Option<SteadyState>)> = self
            .xis
            .par_iter()
            .map(|&xi| {
                let c = SimConfig {
                    params: config.params.with_xi(xi),
                    ..config.clone()
                };
                let record = run_transient(&c, mesh)?;
                let steady = if stationary {
                    Some(stationary_for(&c, mesh, record.diagnostics[0].mass.total)?)
                } else {
                    None
                };
                Ok((record, steady))
            })
            .map(|r: Result<_>| r.map_err(|e| e.context(format!("preset {}", self.name))))
            .collect::<Result<_>>()?;

        let mut out = Outcome::default();
        let mut drift: f64 = 0.0;
        for (&xi, (record, steady)) in self.xis.iter().zip(&runs) {
            let tag = xi_tag(xi);
            let stem = format!("{tag}_final");
            write_snapshot(outdir, &stem, record.final_state(), mesh, &dofs)?;
            out.outputs.extend(snapshot_files(&stem));
            let name = format!("{tag}_diagnostics.csv");
            write_diagnostics(&outdir.join(&name), &record.diagnostics)?;
            out.outputs.push(name);
            drift = drift.max(record.max_relative_mass_drift());
            if let Some(s) = steady {
                let stem = format!("{tag}_stationary");
                write_snapshot(outdir, &stem, &s.state(), mesh, &dofs)?;
                out.outputs.extend(snapshot_files(&stem));
                for f in Field::ALL {
                    out.put(
                        format!("{tag}_transient_vs_stationary_rel_l2_{}", f.symbol()),
                        relative_l2(&measures, f, record.final_state().field(f), s.field(f)),
                    );
                }
            }
        }
        out.put("max_relative_mass_drift", drift);
        out.put("t_final", runs[0].0.final_state().t);

        let path = outdir.join(self.comparison_file());
        let fold_max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match self.compare {
            SweepCompare::MaxCortexP => {
                let rows: Vec<Vec<f64>> = self
                    .xis
                    .iter()
                    .zip(&runs)
                    .map(|(&xi, (r, _))| vec![xi, fold_max(&r.final_state().cortex_p)])
                    .collect();
                write_table(&path, &["xi", "max_p"], &rows)?;
            }
            SweepCompare::MaxVolumeP => {
                let rows: Vec<Vec<f64>> = self
                    .xis
                    .iter()
                    .zip(&runs)
                    .map(|(&xi, (r, _))| {
                        let over_time = r
                            .diagnostics
                            .iter()
                            .map(|d| d.fields[1].max)
                            .fold(f64::NEG_INFINITY, f64::max);
                        vec![xi, fold_max(&r.final_state().volume_p), over_time]
                    })
                    .collect();
                write_table(&path, &["xi", "max_P_final", "max_P_over_time"], &rows)?;
            }
            SweepCompare::VolumeP => {
                let (a, b) = (&runs[0], &runs[runs.len() - 1]);
                let (pa, pb) = (&a.0.final_state().volume_p, &b.0.final_state().volume_p);
                let (sa, sb) = (
                    &a.1.as_ref().expect("stationary").volume_p,
                    &b.1.as_ref().expect("stationary").volume_p,
                );
                let rows: Vec<Vec<f64>> = (0..pa.len())
                    .map(|i| {
                        vec![
                            i as f64,
                            pa[i],
                            pb[i],
                            ((pa[i] - pb[i]) / pb[i]).abs(),
                            sa[i],
                            sb[i],
                            ((sa[i] - sb[i]) / sb[i]).abs(),
                        ]
                    })
                    .collect();
                write_table(
                    &path,
                    &[
                        "node_id",
                        "P_first",
                        "P_last",
                        "rel_diff",
                        "P_stationary_first",
                        "P_stationary_last",
                        "rel_diff_stationary",
                    ],
                    &rows,
                )?;
                out.put("max_pointwise_rel_diff_P", max_pointwise_relative(pa, pb));
                out.put(
                    "max_pointwise_rel_diff_P_stationary",
                    max_pointwise_relative(sa, sb),
                );
                out.put_value("stationary_t", "inf");
            }
        }
        out.outputs.push(self.comparison_file().into());
        Ok(out)
    }
}

/// ξ → ∞ convergence study against the reduced system.
pub struct QssaSweep {
    pub xis: &'static [f64],
}

impl Experiment for QssaSweep {
    fn name(&self) -> &str {
        "qssa_sweep"
    }

    fn description(&self) -> &str {
        "full system for xi = 10, 100, 1000 against the fast-release reduced system, T = 0.5"
    }

    fn config(&self) -> SimConfig {
        SimConfig {
            dt: 1e-4,
            t_end: 0.5,
            record_every: FINAL_ONLY,
            ..SimConfig::default()
        }
    }

    fn expected_outputs(&self, _config: &SimConfig) -> Vec<String> {
        vec!["convergence.csv".into()]
    }

    fn execute(&self, config: &SimConfig, mesh: &Mesh, outdir: &Path) -> Result<Outcome> {
        let report = qssa_convergence_study(config, mesh, self.xis, config.t_end)?;
        write_convergence(&outdir.join("convergence.csv"), &report)?;
        let mut out = Outcome {
            outputs: vec!["convergence.csv".into()],
            ..Outcome::default()
        };
        out.put("t_final", report.t_end);
        out.put("max_relative_mass_drift", report.max_mass_drift);
        if let Some(fit) = report.slope_p_norms {
            out.put("slope_p_norm_sq", fit.slope);
            out.put("slope_p_norm_sq_r_squared", fit.r_squared);
        }
        if let Some(fit) = report.slope_errors_l_volume {
            out.put("slope_err_L", fit.slope);
        }
        let l1 = &report.p_l1_scaled;
        let (lo, hi) = l1
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        out.put("p_l1_scaled_spread", hi / lo);
        out.put_value(
            "err_L_inversions",
            crate::qssa::ConvergenceReport::inversions(&report.errors_l_volume) as i64,
        );
        Ok(out)
    }
}

fn surface(d_l: f64, d_p: f64) -> ModelParams {
    ModelParams::default().with_surface_diffusion(d_l, d_p)
}

/// All registered experiments, in catalogue order.
pub fn catalogue() -> Vec<Box<dyn Experiment>> {
    vec![
        Box::new(StationaryFigure {
            name: "fig3_diff",
            description: "cortical l with surface diffusion d_l = 0.02, d_p = 0.04, t = 100 and stationary state",
            params: surface(0.02, 0.04),
        }),
        Box::new(StationaryFigure {
            name: "fig3_nodiff",
            description: "cortical l without surface diffusion, t = 100 and stationary state",
            params: surface(0.0, 0.0),
        }),
        Box::new(StationaryFigure {
            name: "figLP_diff",
            description: "volume L and P with surface diffusion d_l = 0.02, d_p = 0.04, radial profile at theta = 5pi/4",
            params: surface(0.02, 0.04),
        }),
        Box::new(StationaryFigure {
            name: "figLP_nodiff",
            description: "volume L and P without surface diffusion, radial profile at theta = 5pi/4",
            params: surface(0.0, 0.0),
        }),
        Box::new(StationaryFigure {
            name: "figBigDiff",
            description: "ten-fold volume diffusion d_L = 0.1 without surface diffusion",
            params: ModelParams {
                d_vol_l: 0.1,
                ..ModelParams::default()
            },
        }),
        Box::new(XiSweep {
            name: "fig3a",
            description: "cortical p at t = 0.04 for xi = 10, 20, 50, 100",
            xis: &[10.0, 20.0, 50.0, 100.0],
            dt: 1e-4,
            t_end: 0.04,
            compare: SweepCompare::MaxCortexP,
        }),
        Box::new(XiSweep {
            name: "initial_mass",
            description: "volume P at t = 0.3 for xi = 1 and xi = 1000",
            xis: &[1.0, 1000.0],
            dt: 1e-4,
            t_end: 0.3,
            compare: SweepCompare::MaxVolumeP,
        }),
        Box::new(XiSweep {
            name: "steady_state",
            description: "states at t = 100 and stationary states for xi = 1 and xi = 1000",
            xis: &[1.0, 1000.0],
            dt: 1e-2,
            t_end: 100.0,
            compare: SweepCompare::VolumeP,
        }),
        Box::new(QssaSweep {
            xis: &[10.0, 100.0, 1000.0],
        }),
    ]
}

pub fn preset_names() -> Vec<String> {
    catalogue().iter().map(|e| e.name().to_string()).collect()
}

pub fn experiment_by_name(name: &str) -> Result<Box<dyn Experiment>> {
    catalogue()
        .into_iter()
        .find(|e| e.name() == name)
        .ok_or_else(|| {
            Error::Usage(format!(
                "unknown preset `{name}`; known: {}",
                preset_names().join(", ")
            ))
        })
}

pub fn presets() -> Vec<Preset> {
    catalogue()
        .iter()
        .map(|e| {
            let config = e.config();
            Preset {
                name: e.name().to_string(),
                description: e.description().to_string(),
                expected_outputs: e.expected_outputs(&config),
                config,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub dump_mesh: bool,
    pub dump_matrices: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outdir: PathBuf,
    pub manifest: Manifest,
}

/// Applies overrides, builds the mesh, runs `experiment` into `outdir` and writes `manifest.toml`.
pub fn run_experiment(
    experiment: &dyn Experiment,
    overrides: &[String],
    outdir: &Path,
    options: RunOptions,
) -> Result<RunReport> {
    let config = with_overrides(&experiment.config(), overrides)?;
    config.validate()?;
    let mesh = config.mesh.build()?;
    prepare_dir(outdir)?;
    let mut manifest = Manifest::new(experiment.name(), experiment.description(), &config, &mesh)?;
    log::info!(
        "running {} on {} vertices into {}",
        experiment.name(),
        mesh.n_vertices(),
        outdir.display()
    );
    let outcome = experiment.execute(&config, &mesh, outdir)?;
    manifest.outputs = outcome.outputs;
    manifest.summary = outcome.summary;
    if options.dump_mesh {
        write_mesh_file(&outdir.join("mesh.txt"), &mesh)?;
        manifest.outputs.push("mesh.txt".into());
    }
    if options.dump_matrices {
        let op = assemble_block_operator(&mesh, &config.params, config.dt)?;
        for (name, m) in [("mass.coo", &op.mass), ("operator.coo", &op.operator)] {
            write_matrix_file(&outdir.join(name), m)?;
            manifest.outputs.push(name.into());
        }
    }
    manifest.write(&outdir.join("manifest.toml"))?;
    Ok(RunReport {
        outdir: outdir.to_path_buf(),
        manifest,
    })
}

pub fn run_preset(name: &str, outdir: &Path, overrides: &[String]) -> Result<RunReport> {
    let experiment = experiment_by_name(name)?;
    run_experiment(
        experiment.as_ref(),
        overrides,
        outdir,
        RunOptions::default(),
    )
}

/// Runs several presets concurrently, each in `outdir/<name>`.
pub fn run_presets(
    names: &[String],
    outdir: &Path,
    overrides: &[String],
) -> Result<Vec<RunReport>> {
    let experiments = names
        .iter()
        .map(|n| experiment_by_name(n))
        .collect::<Result<Vec<_>>>()?;
    experiments
        .par_iter()
        .map(|e| {
            run_experiment(
                e.as_ref(),
                overrides,
                &outdir.join(e.name()),
                RunOptions::default(),
            )
            .map_err(|err| err.context(format!("preset {}", e.name())))
        })
        .collect()
}
