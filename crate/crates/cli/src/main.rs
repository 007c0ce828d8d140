use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dmdhdr::config::read_scenario;
use dmdhdr::controller::adapt_scene;
use dmdhdr::dic::{dic_match, effective_area, strain};
use dmdhdr::harness::{self, Scenario};
use dmdhdr::scene::{warp, GlareKind};
use dmdhdr::{io, metrics};

#[derive(Parser)]
#[command(name = "dmdhdr", version, about = "DMD adaptive HDR imaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured ground-truth radiance scene to PFM.
    Scene {
        #[arg(long)]
        out: PathBuf,
        /// Overrides `scene.glare`.
        #[arg(long)]
        glare: Option<GlareKind>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the closed-loop mask controller on a radiance scene.
    Adapt {
        #[arg(long)]
        scene: PathBuf,
        /// Scenario config; its sensor, dmd and controller sections apply.
        #[arg(long)]
        sensor: Option<PathBuf>,
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        literal_break: bool,
    },
    /// No-reference metrics of an 8-bit PGM.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate two 8-bit PGMs and derive strains.
    Dic {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "def")]
        deformed: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline plus the strain and quality studies.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn scenario(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => read_scenario(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(Scenario::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scene { out, glare, config } => {
            let mut s = scenario(config.as_deref())?;
            if let Some(g) = glare {
                s.scene.glare = g;
            }
            let field = warp(&s.scene.build()?, &s.deformation)?;
            io::write_radiance(&out, &field)?;
            println!(
                "scene {}x{} glare={} min={} max={}",
                field.width(),
                field.height(),
                s.scene.glare,
                field.min(),
                field.max()
            );
        }
        Command::Adapt {
            scene,
            sensor,
            out_mask,
            trace,
            literal_break,
        } => {
            let mut s = scenario(sensor.as_deref())?;
            s.controller.record_trace |= trace.is_some();
            s.controller.literal_break |= literal_break;
            let field = io::read_radiance(&scene)?;
            let r = adapt_scene(&field, &s.sensor, &s.dmd, &s.controller, s.noise_seed)?;
            io::write_mask(&out_mask, &r.mask)?;
            if let (Some(path), Some(rows)) = (trace, &r.trace) {
                harness::write_trace(path, rows)?;
            }
            println!(
                "captures={} residual_saturated={} exhausted={} min_mu={:e}",
                r.iterations,
                r.residual_count(),
                r.exhausted,
                r.mask.min_mu()
            );
        }
        Command::Metrics { input, out } => {
            let frame = io::read_pgm(&input)?;
            let m = metrics::quality(&frame)?;
            harness::write_metrics_csv(&out, &m)?;
        }
        Command::Dic {
            reference,
            deformed,
            config,
            out,
        } => {
            let s = scenario(config.as_deref())?;
            let r = io::read_pgm(&reference)?;
            let d = io::read_pgm(&deformed)?;
            let field = dic_match(&r, &d, &s.dic)?;
            let st = strain(&field, &s.dic)?;
            harness::write_dic_csv(&out, &field, &st)?;
            println!(
                "points={} effective_area={:.3}%",
                field.u.len(),
                effective_area(&field)
            );
        }
        Command::Experiment { config, out } => {
            let s = scenario(config.as_deref())?;
            harness::run_experiment(&s, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
