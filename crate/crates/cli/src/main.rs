mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use greenlab::mmspace::Generator;

use crate::commands::Run;
use crate::config::{
    CapParams, Experiment, GeneratedSpace, GreenParams, PointSpec, RunConfig, SpaceBlock, VerifyParams,
};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "greenlab", version, about = "Capacities and p-harmonic Green's functions on weighted graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a space file.
    Gen(Common),
    /// Ring capacity sweep and sandwich check.
    Cap(Common),
    /// Green's function, profile and defining criteria.
    Green(Common),
    /// Every check on one configuration.
    Verify(Common),
    /// Integrability of a Green's function under mesh refinement.
    Scan(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its scalar fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Saved space file.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Vertex index or comma-separated coordinates.
    #[arg(long, alias = "center", allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long = "R")]
    big_r: Option<f64>,
    /// Comma-separated sweep radii.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Solve for an unnormalized Green's function (`green`).
    #[arg(long)]
    no_normalize: bool,
    /// Saved Green's function to check instead of solving (`green`).
    #[arg(long)]
    green_file: Option<PathBuf>,
    /// grid, cone, glued or path.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    half_height: Option<f64>,
    #[arg(long)]
    neck_length: Option<f64>,
    #[arg(long)]
    length: Option<f64>,
}

impl Common {
    fn generated(&self) -> Result<Option<GeneratedSpace>, CliError> {
        let Some(name) = &self.generator else { return Ok(None) };
        let h = self.h.ok_or_else(|| CliError::Config("missing --h".into()))?;
        let generator = match name.as_str() {
            "grid" => Generator::Grid { half_width: self.half_width.unwrap_or(0.5), alpha: self.alpha.unwrap_or(0.0) },
            "cone" => Generator::Cone { half_height: self.half_height.unwrap_or(0.5) },
            "glued" => Generator::Glued { neck_length: self.neck_length.unwrap_or(0.0) },
            "path" => Generator::Path { length: self.length.unwrap_or(1.0) },
            other => return Err(CliError::Config(format!("unknown generator '{other}'"))),
        };
        Ok(Some(GeneratedSpace { n: self.n, h, generator }))
    }

    /// Config file (or an empty one built from flags) with overrides applied.
    fn resolve(&self, command: &str) -> Result<(RunConfig, PathBuf), CliError> {
        let (mut cfg, base) = match &self.config {
            Some(path) => {
                let cfg = RunConfig::from_file(path)?;
                let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
                (cfg, base)
            }
            None => {
                let space = match (&self.space, self.generated()?) {
                    (Some(path), None) => SpaceBlock::File { path: path.clone() },
                    (None, Some(g)) => SpaceBlock::Generated(g),
                    (Some(_), Some(_)) => return Err(CliError::Config("give either --space or --generator".into())),
                    (None, None) => return Err(CliError::Config("missing --space, --generator or --config".into())),
                };
                let cfg = RunConfig {
                    space,
                    solver: Default::default(),
                    experiment: None,
                    out: PathBuf::from("out"),
                    seed: 0,
                };
                (cfg, PathBuf::from("."))
            }
        };
        if self.config.is_some() {
            if let Some(path) = &self.space {
                cfg.space = SpaceBlock::File { path: path.clone() };
            } else if let Some(g) = self.generated()? {
                cfg.space = SpaceBlock::Generated(g);
            }
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = self.p {
            cfg.solver.p = p;
        }
        let mut experiment = match (cfg.experiment.take(), command) {
            (Some(e), c) if e.name() == c => Some(e),
            (Some(e), "gen") => Some(e),
            (Some(e), c) => {
                return Err(CliError::Config(format!("config holds a {} experiment, not {c}", e.name())));
            }
            (None, "cap") => Some(Experiment::Cap(CapParams::default())),
            (None, "green") => Some(Experiment::Green(GreenParams { normalize: true, ..Default::default() })),
            (None, "verify") => Some(Experiment::Verify(VerifyParams { refinements: 2, ..Default::default() })),
            (None, "scan") => return Err(CliError::Config("scan needs an experiment block in --config".into())),
            (None, _) => None,
        };
        let x0 = self.x0.as_deref().map(PointSpec::parse).transpose()?;
        match &mut experiment {
            Some(Experiment::Cap(c)) => {
                c.x0 = x0.or(c.x0.take());
                c.p = self.p.or(c.p);
                c.big_r = self.big_r.or(c.big_r);
                c.radii = self.radii.clone().or(c.radii.take());
            }
            Some(Experiment::Green(g)) => {
                g.x0 = x0.or(g.x0.take());
                g.p = self.p.or(g.p);
                g.big_r = self.big_r.or(g.big_r);
                g.normalize &= !self.no_normalize;
                g.green_file = self.green_file.clone().or(g.green_file.take());
            }
            Some(Experiment::Verify(v)) => {
                v.x0 = x0.or(v.x0.take());
                v.p = self.p.or(v.p);
                v.big_r = self.big_r.or(v.big_r);
                v.radii = self.radii.clone().or(v.radii.take());
            }
            Some(Experiment::Scan(s)) => {
                s.p = self.p.or(s.p);
            }
            None => {}
        }
        cfg.experiment = experiment;
        Ok((cfg, base))
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(text) = std::env::var("GREENLAB_THREADS") {
        let n: usize = text
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("GREENLAB_THREADS must be a positive integer, got '{text}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn execute(command: &str, common: &Common) -> Result<i32, CliError> {
    init_threads()?;
    let (cfg, base) = common.resolve(command)?;
    let experiment = cfg.experiment.clone();
    let mut run = Run::new(cfg, &base)?;
    match (command, &experiment) {
        ("gen", _) => run.gen()?,
        ("cap", Some(Experiment::Cap(p))) => run.cap(p)?,
        ("green", Some(Experiment::Green(p))) => run.green(p)?,
        ("verify", Some(Experiment::Verify(p))) => run.verify(p)?,
        ("scan", Some(Experiment::Scan(p))) => run.scan(p)?,
        _ => unreachable!("experiment resolved for {command}"),
    }
    let outcome = run.finish(command)?;
    for check in &outcome.manifest.checks {
        println!("{:<32} {:?}", check.name, check.verdict);
    }
    if !outcome.nonconverged.is_empty() {
        for msg in &outcome.nonconverged {
            eprintln!("non-convergence: {msg}");
        }
        return Ok(3);
    }
    Ok(if outcome.manifest.failed() { 1 } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Gen(c) => ("gen", c),
        Command::Cap(c) => ("cap", c),
        Command::Green(c) => ("green", c),
        Command::Verify(c) => ("verify", c),
        Command::Scan(c) => ("scan", c),
    };
    let code = match execute(name, common) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("greenlab: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
