//! Batch execution and file output.
//!
//! Every run writes into its output directory:
//!
//! * `trajectory.csv`: `t, x_1..x_N, xdot_1..xdot_N, [xi<k>_1..xi<k>_N for k ≥ 2], disagreement, lap_seminorm`
//! * `report.txt`: one `key = value` per line (keys below)
//! * `config.echo`: the canonical scenario text
//! * `plot.gp`: gnuplot script, only with `gnuplot = true`
//!
//! Report keys: `name`, `controller`, `seed`, `scenario_hash`, `agents`,
//! `order`, `t_end`, `status` (`converged`, `not_converged` or `diverged`),
//! `diverged_at`, `converged`, `tolerance`, `tail_fraction`,
//! `residual_<k>` for each governed derivative order, `peak_disagreement`,
//! `final_disagreement`, `regime_radius`, `regime_entry_time`,
//! `has_spanning_tree`. Absent values are written as `none`.
//!
//! Exit codes: 0 converged, 1 configuration error, 2 diverged or not
//! converged, 3 IO error.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::cli::scenario::{ConfigError, ControllerKind, Scenario};
use crate::metrics::{consensus_report, disagreement_seminorm, laplacian_seminorm, ConsensusReport, MetricsError};
use crate::sim::integrator::Trajectory;
use crate::sim::{simulate_scenario, SimError};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub quiet: bool,
    pub gnuplot: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation error: {0}")]
    Sim(SimError),
    #[error("metrics error: {0}")]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub controller: ControllerKind,
    pub report: ConsensusReport,
    pub trajectory: Trajectory,
}

impl RunSummary {
    pub fn status(&self) -> &'static str {
        if self.report.diverged_at.is_some() {
            "diverged"
        } else if self.report.converged {
            "converged"
        } else {
            "not_converged"
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.report.converged {
            EXIT_CONVERGED
        } else {
            EXIT_NOT_CONVERGED
        }
    }
}

/// Simulates a scenario and summarizes it without touching the filesystem.
pub fn evaluate(sc: &Scenario) -> Result<RunSummary, RunError> {
    let setup = sc.build()?;
    let (trajectory, diverged_at) = match simulate_scenario(sc) {
        Ok(t) => (t, None),
        Err(SimError::Divergence { time, partial }) => (*partial, Some(time)),
        Err(SimError::Config(m)) => {
            return Err(ConfigError::Invalid {
                key: "scenario".into(),
                message: m,
            }
            .into())
        }
        Err(e) => return Err(RunError::Sim(e)),
    };
    let m = &sc.metrics;
    let report = consensus_report(
        &trajectory,
        m.tolerance,
        m.tail_fraction,
        Some((&setup.laplacian, m.regime_radius)),
        diverged_at,
    )?;
    Ok(RunSummary {
        controller: sc.cascade.controller,
        report,
        trajectory,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.11e}")).unwrap_or_else(|| "none".into())
}

pub fn report_text(sc: &Scenario, summary: &RunSummary) -> String {
    let r = &summary.report;
    let traj = &summary.trajectory;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("name", sc.name.clone());
    kv("controller", summary.controller.to_string());
    kv("seed", sc.seed.to_string());
    kv("scenario_hash", format!("{:016x}", traj.meta.scenario_hash));
    kv("agents", sc.n().to_string());
    kv("order", sc.cascade.order.to_string());
    kv("t_end", format!("{:.11e}", sc.integrator.t_end));
    kv("status", summary.status().into());
    kv("diverged_at", fmt_opt(r.diverged_at));
    kv("converged", r.converged.to_string());
    kv("tolerance", format!("{:.11e}", r.tolerance));
    kv("tail_fraction", format!("{:.11e}", sc.metrics.tail_fraction));
    for (k, res) in r.order_residuals.iter().enumerate() {
        kv(&format!("residual_{k}"), format!("{res:.11e}"));
    }
    kv("peak_disagreement", format!("{:.11e}", r.peak_disagreement));
    kv("final_disagreement", format!("{:.11e}", r.final_disagreement));
    kv("regime_radius", format!("{:.11e}", sc.metrics.regime_radius));
    kv("regime_entry_time", fmt_opt(r.regime_entry_time));
    kv("has_spanning_tree", sc.has_spanning_tree().to_string());
    s
}

/// Parses a `report.txt` back into key/value pairs.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn write_csv(path: &Path, sc: &Scenario, summary: &RunSummary) -> io::Result<()> {
    let setup = sc.build().map_err(io::Error::other)?;
    let traj = &summary.trajectory;
    let n = sc.n();
    let stage_cols = if summary.controller == ControllerKind::Compositional {
        sc.cascade.order.saturating_sub(1)
    } else {
        0
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    if !traj.plant_xdot.is_empty() {
        header.extend((1..=n).map(|i| format!("xdot_{i}")));
    }
    for k in 2..2 + stage_cols {
        header.extend((1..=n).map(|i| format!("xi{k}_{i}")));
    }
    header.push("disagreement".into());
    header.push("lap_seminorm".into());
    writeln!(w, "{}", header.join(","))?;
    let zero = nalgebra::DVector::zeros(n);
    let offsets = traj.offsets.as_ref().unwrap_or(&zero);
    let mut row = String::new();
    for (idx, t) in traj.times.iter().enumerate() {
        row.clear();
        let _ = write!(row, "{t:.11e}");
        let x = &traj.plant_x[idx];
        for v in x.iter() {
            let _ = write!(row, ",{v:.11e}");
        }
        if let Some(xd) = traj.plant_xdot.get(idx) {
            for v in xd.iter() {
                let _ = write!(row, ",{v:.11e}");
            }
        }
        if stage_cols > 0 {
            for v in traj.states[idx].rows(n, stage_cols * n).iter() {
                let _ = write!(row, ",{v:.11e}");
            }
        }
        let z = x - offsets;
        let _ = write!(
            row,
            ",{:.11e},{:.11e}",
            disagreement_seminorm(&z),
            laplacian_seminorm(&setup.laplacian, &z)
        );
        writeln!(w, "{row}")?;
    }
    w.flush()
}

fn gnuplot_script(n: usize) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key off\nset xlabel 't [s]'\nset multiplot layout 2,1\nset ylabel 'x_i - x_1'\nplot ",
    );
    let pos: Vec<String> = (1..=n)
        .map(|i| format!("'trajectory.csv' using 1:(${} - $2) with lines", i + 1))
        .collect();
    s.push_str(&pos.join(", \\\n     "));
    s.push_str("\nset ylabel 'disagreement'\nplot 'trajectory.csv' using 1:'disagreement' with lines\nunset multiplot\n");
    s
}

/// Writes all outputs of an evaluated run into `out_dir`.
pub fn write_outputs(sc: &Scenario, summary: &RunSummary, out_dir: &Path, opts: RunOptions) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    write_csv(&out_dir.join("trajectory.csv"), sc, summary)?;
    fs::write(out_dir.join("report.txt"), report_text(sc, summary))?;
    fs::write(out_dir.join("config.echo"), sc.emit())?;
    if opts.gnuplot {
        fs::write(out_dir.join("plot.gp"), gnuplot_script(sc.n()))?;
    }
    Ok(())
}

/// Runs one scenario and returns the process exit code. Configuration errors
/// produce no output files.
pub fn run(sc: &Scenario, out_dir: &Path, opts: RunOptions) -> i32 {
    let summary = match evaluate(sc) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = write_outputs(sc, &summary, out_dir, opts) {
        eprintln!("error: {e}");
        return EXIT_IO;
    }
    if !opts.quiet {
        print!("{}", report_text(sc, &summary));
    }
    summary.exit_code()
}

pub fn comparison_table(rows: &[RunSummary]) -> String {
    let orders = rows.iter().map(|r| r.report.order_residuals.len()).max().unwrap_or(0);
    let mut s = format!("{:<14} {:<14} {:>18}", "controller", "status", "peak_disagreement");
    for k in 0..orders {
        let _ = write!(s, " {:>18}", format!("residual_{k}"));
    }
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{:<14} {:<14} {:>18.6e}",
            r.controller.as_str(),
            r.status(),
            r.report.peak_disagreement
        );
        for k in 0..orders {
            match r.report.order_residuals.get(k) {
                Some(v) => {
                    let _ = write!(s, " {v:>18.6e}");
                }
                None => {
                    let _ = write!(s, " {:>18}", "none");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Runs the scenario once per controller (concurrently), each into
/// `out_dir/<controller>/`, and writes `out_dir/comparison.txt`.
///
/// All variants share the seed, so initial conditions, delay realizations
/// and disturbances match sample for sample.
pub fn compare(
    sc: &Scenario,
    controllers: &[ControllerKind],
    out_dir: &Path,
    opts: RunOptions,
) -> Result<Vec<RunSummary>, RunError> {
    let variants: Vec<Scenario> = controllers.iter().map(|c| sc.with_controller(*c)).collect();
    for v in &variants {
        v.validate()?;
    }
    let results: Vec<Result<RunSummary, RunError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|v| {
                scope.spawn(move || {
                    let summary = evaluate(v)?;
                    let dir = out_dir.join(v.cascade.controller.as_str());
                    write_outputs(v, &summary, &dir, opts)?;
                    Ok(summary)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let table = comparison_table(&rows);
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("comparison.txt"), &table)?;
    if !opts.quiet {
        print!("{table}");
    }
    Ok(rows)
}
