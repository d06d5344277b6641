use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use charmap::bench::{
    contour_checkpoint, dump_global_map, load_map, parse_pairs, run_scenario_from, scaling_study, sweep_e1, time_to_error,
    Method, RunConfig, SetKind,
};
use clap::{Args, Parser, Subcommand};

/// Set advection by characteristic mapping.
#[derive(Parser)]
#[command(name = "charmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `nf=128 e1=1e-5`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut pairs = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                parse_pairs(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => Vec::new(),
        };
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else { bail!("override `{o}` is not KEY=VALUE") };
            pairs.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        Ok(RunConfig::from_pairs(&pairs)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write a checkpoint every N steps (CM only).
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<usize>,
        /// Continue from a checkpoint directory.
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
    },
    /// Sweep the remap tolerance over fixed fine grids with dt = 1/nf.
    SweepE1 {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7])]
        e1: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128, 256])]
        nf: Vec<usize>,
        /// Report the cheapest run per E1 reaching this L2 error.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Wall time against grid size for CM and GALS.
    Scaling {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128, 256])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["cm", "gals"])]
        methods: Vec<String>,
    },
    /// Contours of a set advected by a checkpointed map.
    Contour {
        checkpoint: PathBuf,
        #[arg(long, default_value = "circle")]
        set: String,
        #[arg(long, default_value_t = 512)]
        resolution: usize,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Compose a checkpoint's global map into one fine map dump.
    Dump {
        checkpoint: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Read a map dump, report it and optionally contour a set through it.
    Load {
        map: PathBuf,
        #[arg(long)]
        set: Option<String>,
        #[arg(long, default_value_t = 512)]
        resolution: usize,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, checkpoint_every, resume } => {
            let mut cfg = config.load()?;
            if let Some(n) = checkpoint_every {
                cfg.checkpoint_every = n;
                cfg.validate()?;
            }
            let s = run_scenario_from(&cfg, resume.as_deref())?;
            for snap in &s.snapshots {
                let m = &snap.metrics;
                let h = m.hausdorff.map_or("-".to_string(), |h| format!("{h:.3e}"));
                println!(
                    "t={:<8} {:<10} l2={:.3e} hausdorff={h} measure_err={:.3e}",
                    snap.t, snap.set, m.l2, m.measure_rel_error
                );
            }
            let t = &s.timing;
            println!("steps={} remaps={} m={:.2} wall={:.3}s", t.steps, t.remaps, t.m, t.total);
            if let Some((time, nf)) = s.max_nf() {
                println!("max nf={nf} at t={time} final nf={}", s.final_nf().unwrap_or(nf));
            }
            if let Some(d) = s.tracer_return {
                println!("tracer return distance={d:.3e}");
            }
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::SweepE1 { config, e1, nf, target } => {
            let cfg = config.load()?;
            let rows = sweep_e1(&cfg, &e1, &nf)?;
            println!("e1,nf,l2,time_s,m");
            for r in &rows {
                match &r.result {
                    Ok((l2, _, t)) => println!("{:e},{},{l2:e},{:.4},{:.2}", r.e1, r.nf, t.total, t.m),
                    Err(e) => println!("{:e},{},,,,# {e}", r.e1, r.nf),
                }
            }
            if let Some(target) = target {
                for (e, t) in e1.iter().zip(time_to_error(&rows, &e1, target)) {
                    match t {
                        Some(t) => println!("# e1={e:e} time to l2<={target:e}: {t:.3}s"),
                        None => println!("# e1={e:e} never reaches l2<={target:e}"),
                    }
                }
            }
        }
        Command::Scaling { config, sizes, methods } => {
            let cfg = config.load()?;
            let methods: Vec<Method> = methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
            println!("n,method,time_s,l2");
            for r in scaling_study(&cfg, &sizes, &methods)? {
                println!("{},{},{:.4},{:e}", r.n, r.method.as_str(), r.time, r.l2);
            }
        }
        Command::Contour { checkpoint, set, resolution, out } => {
            let set: SetKind = set.parse()?;
            for f in contour_checkpoint(&checkpoint, set, resolution, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Dump { checkpoint, out } => {
            dump_global_map(&checkpoint, &out)?;
            println!("{}", out.display());
        }
        Command::Load { map, set, resolution, out } => {
            let set = set.map(|s| s.parse::<SetKind>()).transpose()?;
            let (info, files) = load_map(&map, set.map(|s| (s, resolution, out.as_path())))?;
            println!(
                "dims={} cells={} boundary={} max_displacement={:.6e}",
                info.dims,
                info.cells,
                info.boundary.as_str(),
                info.max_displacement
            );
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
