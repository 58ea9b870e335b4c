//! Command dispatch for the `contact-hj` binary.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::adjoint::{adjoint_measure, estimate_m, mass_trace, solve_adjoint};
use crate::config::{parse_config, OutputFormat, OutputSettings, RunConfig};
use crate::ergodic::{fixed_point_ergodic, select_u0};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::hamiltonians::Hamiltonian;
use crate::reproduce::{reproduce, Example};
use crate::schemes::{certify, kink_mask, solve_viscous, SchemeConfig};

/// Numerical tools for contact-type Hamilton-Jacobi equations on the flat torus.
#[derive(Debug, Parser)]
#[command(name = "contact-hj", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Damped fixed-point iteration for the ergodic pair (u, c).
    SolveErgodic(Common),
    /// Vanishing-viscosity run up to t = 1 from the configured initial datum.
    SolveViscous(Common),
    /// Adjoint measure for one source node and the configured ε.
    AdjointMeasure(Common),
    /// Uniqueness-set estimate over the configured roster of solutions.
    UniquenessSet(Common),
    /// Residual certificate for the configured initial datum.
    Certify(Common),
    /// Runs one of the worked examples and prints a pass/fail summary.
    ReproduceExample(Reproduce),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct Reproduce {
    /// ex4, ex5, ex6, ex7, prototype-c0, prototype-cpos or strict-monotone.
    pub example: String,
    /// Optional config; only its grid size and solver settings are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; falls back to CONTACT_HJ_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
}

const DEFAULT_OUT: &str = "contact-hj-out";

/// Exclusive claim on an output directory, released on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".contact-hj.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(format!(
                "output directory {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

struct Sink<'a> {
    dir: PathBuf,
    output: &'a OutputSettings,
    plots: Vec<(String, usize)>,
}

impl Sink<'_> {
    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if !self.output.wants(OutputFormat::Json) {
            return Ok(());
        }
        let text =
            serde_json::to_string_pretty(value).map_err(|e| Error::Integrity(e.to_string()))?;
        std::fs::write(self.dir.join(name), text + "\n")?;
        Ok(())
    }

    fn field(&mut self, name: &str, f: &GridFunction) -> Result<()> {
        if !self.output.wants(OutputFormat::Csv) {
            return Ok(());
        }
        let file = format!("{name}.csv");
        f.save_csv(&self.dir.join(&file), name)?;
        self.plots.push((file, f.grid().dim()));
        Ok(())
    }

    fn table(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<f64>>,
    ) -> Result<()> {
        if !self.output.wants(OutputFormat::Csv) {
            return Ok(());
        }
        let file = format!("{name}.csv");
        let mut w = std::io::BufWriter::new(File::create(self.dir.join(&file))?);
        writeln!(w, "# {}", header.join(", "))?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", cells.join(", "))?;
        }
        w.flush()?;
        self.plots.push((file, 1));
        Ok(())
    }

    /// Writes `plot.gp` covering every CSV written so far.
    fn finish(self) -> Result<()> {
        if !self.output.wants(OutputFormat::Gnuplot) || self.plots.is_empty() {
            return Ok(());
        }
        let mut s = String::from("set datafile separator ','\nset datafile commentschars '#'\n");
        for (file, dim) in &self.plots {
            let stem = file.trim_end_matches(".csv");
            s.push_str(&format!("set title '{stem}'\n"));
            if *dim == 2 {
                s.push_str(&format!(
                    "splot '{file}' using 1:2:3 with pm3d notitle\npause -1\n"
                ));
            } else {
                s.push_str(&format!(
                    "plot '{file}' using 1:2 with lines notitle\npause -1\n"
                ));
            }
        }
        std::fs::write(self.dir.join("plot.gp"), s)?;
        Ok(())
    }
}

fn configure_threads(requested: Option<usize>) -> Result<()> {
    let n = match requested {
        Some(n) => Some(n),
        None => match std::env::var("CONTACT_HJ_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::config(format!(
                    "CONTACT_HJ_THREADS must be a positive integer, got `{v}`"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::config("thread count must be positive"));
        }
        // a pool already built by an earlier call in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn out_dir(args: &RunArgs, cfg: Option<&RunConfig>) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Failure raised after outputs were written; carries the exit status.
struct Verdict(i32);

/// Runs a parsed command line and returns the process exit status: 0 on success,
/// 1 for numerical failures (non-convergence, failed certificate or reproduction),
/// 2 for configuration errors.
pub fn dispatch(cli: Cli) -> i32 {
    let (args, cfg_path) = match &cli.command {
        Command::ReproduceExample(r) => (&r.run, r.config.clone()),
        Command::SolveErgodic(c)
        | Command::SolveViscous(c)
        | Command::AdjointMeasure(c)
        | Command::UniquenessSet(c)
        | Command::Certify(c) => (&c.run, Some(c.config.clone())),
    };
    if let Err(e) = configure_threads(args.threads) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let cfg = match cfg_path.as_deref().map(parse_config).transpose() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let dir = out_dir(args, cfg.as_ref());
    let lock = match DirLock::acquire(&dir) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let default_output = OutputSettings {
        dir: None,
        formats: vec![OutputFormat::Csv, OutputFormat::Json],
    };
    let mut sink = Sink {
        dir: dir.clone(),
        output: cfg.as_ref().map_or(&default_output, |c| &c.output),
        plots: Vec::new(),
    };
    let result = match (&cli.command, cfg.as_ref()) {
        (Command::ReproduceExample(r), c) => run_reproduce(&r.example, c, &mut sink),
        (Command::SolveErgodic(_), Some(c)) => run_ergodic(c, &mut sink),
        (Command::SolveViscous(_), Some(c)) => run_viscous(c, &mut sink),
        (Command::AdjointMeasure(_), Some(c)) => run_adjoint(c, args.seed, &mut sink),
        (Command::UniquenessSet(_), Some(c)) => run_uniqueness(c, args.seed, &mut sink),
        (Command::Certify(_), Some(c)) => run_certify(c, &mut sink),
        (_, None) => unreachable!("every other command requires --config"),
    };
    let status = match result.and_then(|v| sink.finish().map(|_| v)) {
        Ok(Verdict(code)) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 1 {
                let diag = json!({ "error": e.to_string(), "kind": format!("{e:?}") });
                let _ = std::fs::write(dir.join("diagnostics.json"), format!("{diag:#}\n"));
            }
            e.exit_code()
        }
    };
    drop(lock);
    status
}

fn run_reproduce(name: &str, cfg: Option<&RunConfig>, sink: &mut Sink<'_>) -> Result<Verdict> {
    let example: Example = name.parse()?;
    let (n, scheme) = match cfg {
        Some(c) => (Some(c.grid.nodes_per_axis()), c.scheme.clone()),
        None => (None, SchemeConfig::default()),
    };
    let rep = reproduce(example, n, &scheme)?;
    print!("{}", rep.report());
    for (name, f) in &rep.fields {
        sink.field(name, f)?;
    }
    sink.json("summary.json", &rep)?;
    Ok(Verdict(if rep.pass { 0 } else { 1 }))
}

fn run_ergodic(cfg: &RunConfig, sink: &mut Sink<'_>) -> Result<Verdict> {
    let sol = fixed_point_ergodic(&cfg.model, &cfg.initial_or_zero(), &cfg.gmap)?;
    sink.field("u", &sol.u)?;
    sink.table(
        "trace",
        &["iteration", "update_linf"],
        sol.history
            .iter()
            .enumerate()
            .map(|(k, d)| vec![(k + 1) as f64, *d]),
    )?;
    sink.json("summary.json", &sol)?;
    println!(
        "c = {:.10e}, residual {:.3e}, {} iterations",
        sol.c, sol.residual_linf, sol.iterations
    );
    if !sol.converged {
        return Err(Error::NonConvergence {
            what: "ergodic fixed-point iteration".into(),
            iterations: sol.iterations,
            residual: sol.history.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(Verdict(0))
}

fn run_viscous(cfg: &RunConfig, sink: &mut Sink<'_>) -> Result<Verdict> {
    let tr = solve_viscous(&cfg.model, &cfg.initial_or_zero(), cfg.eps, &cfg.scheme)?;
    sink.field("u", tr.final_state())?;
    if sink.output.wants(OutputFormat::Csv) {
        tr.export(&sink.dir.join("trajectory"))?;
    }
    sink.json(
        "summary.json",
        &json!({ "eps": tr.eps, "dt": tr.dt, "steps": tr.steps, "warnings": tr.warnings }),
    )?;
    println!("ε = {}, {} steps of dt = {:.3e}", tr.eps, tr.steps, tr.dt);
    Ok(Verdict(0))
}

fn run_adjoint(cfg: &RunConfig, seed: u64, sink: &mut Sink<'_>) -> Result<Verdict> {
    let x0 = cfg.x0_nodes(seed)?[0];
    let tr = solve_viscous(&cfg.model, &cfg.initial_or_zero(), cfg.eps, &cfg.scheme)?;
    let sol = solve_adjoint(&cfg.model, &tr, x0)?;
    let trace = mass_trace(&sol, cfg.model.meta().monotone_r)?;
    let meas = adjoint_measure(&sol, "initial");
    sink.field("measure", &meas.density)?;
    sink.table(
        "trace",
        &["t", "mass"],
        trace
            .times
            .iter()
            .zip(&trace.mass)
            .map(|(t, m)| vec![*t, *m]),
    )?;
    sink.json(
        "summary.json",
        &json!({
            "eps": sol.eps, "x0": x0, "mass": meas.mass, "min_density": sol.min_value,
            "duality_defect": sol.duality_defect, "mass_laws_checked": trace.checked,
        }),
    )?;
    println!("x0 = {x0}, measure mass {:.6e}", meas.mass);
    Ok(Verdict(0))
}

fn run_uniqueness(cfg: &RunConfig, seed: u64, sink: &mut Sink<'_>) -> Result<Verdict> {
    let roster = if cfg.roster.is_empty() {
        if cfg.model.nonlinearity().is_none()
            || !matches!(cfg.family, crate::config::FamilyName::Prototype)
        {
            return Err(Error::config(
                "roster is empty; list solutions under `roster`",
            ));
        }
        let sel = select_u0(&cfg.model, cfg.grid, &cfg.c_ladder, cfg.u0_tol, &cfg.scheme)?;
        sink.field("u0", &sel.u0)?;
        vec![sel.u0]
    } else {
        cfg.roster.clone()
    };
    let x0s = cfg.x0_nodes(seed)?;
    let a = &cfg.adjoint;
    let est = estimate_m(
        &cfg.model,
        &roster,
        &x0s,
        &a.eps_ladder,
        a.threshold,
        a.certificate_tol,
        &cfg.scheme,
    )?;
    sink.field("mask", &est.mask.to_grid_function())?;
    sink.field("measure", &est.density)?;
    sink.json(
        "summary.json",
        &json!({
            "threshold": est.threshold, "eps": est.eps, "total_mass": est.total_mass,
            "nodes_in_mask": est.mask.count(), "runs": est.runs,
        }),
    )?;
    println!(
        "{} of {} nodes in the estimated set",
        est.mask.count(),
        cfg.grid.len()
    );
    Ok(Verdict(0))
}

fn run_certify(cfg: &RunConfig, sink: &mut Sink<'_>) -> Result<Verdict> {
    let u = cfg
        .initial
        .as_ref()
        .ok_or_else(|| Error::config("certify needs the function under test in `initial`"))?;
    let mask =
        (cfg.exclude_radius > 0).then(|| kink_mask(u, cfg.kink_jump_tol, cfg.exclude_radius));
    let cert = certify(
        &cfg.model,
        u,
        cfg.c,
        cfg.side,
        cfg.certify_tol,
        &cfg.scheme,
        mask.as_ref(),
    )?;
    sink.json("summary.json", &cert)?;
    println!(
        "{}: worst residual {:.3e} (tol {:e}, {} nodes excluded)",
        if cert.pass { "pass" } else { "FAIL" },
        cert.worst_value,
        cert.tol,
        cert.excluded
    );
    Ok(Verdict(if cert.pass { 0 } else { 1 }))
}
