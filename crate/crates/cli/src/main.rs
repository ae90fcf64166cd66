use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use splatsfm::joint::Ablation;
use splatsfm::pipeline::{
    run_eval_stage, run_export_stage, run_joint_stage, run_pipeline, run_sfm_stage,
    run_synth_stage, PipelineConfig,
};
use std::path::PathBuf;

/// Global structure from motion with joint Gaussian-splat pose refinement.
#[derive(Parser)]
#[command(name = "splatsfm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Ablation mode override: full | frozen-poses | photometric-only |
    /// merged-tracks.
    #[arg(long)]
    ablation: Option<String>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(ablation) = &self.ablation {
            cfg.joint.ablation = ablation.parse::<Ablation>().map_err(anyhow::Error::msg)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its reference images.
    Synth(Common),
    /// Run global structure from motion and export COLMAP text.
    Sfm(Common),
    /// Joint pose-appearance refinement from the SfM export.
    Joint(Common),
    /// Evaluate the refined state against ground truth.
    Eval(Common),
    /// Export the current reconstruction as COLMAP text.
    Export(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Write the default configuration to stdout.
    DefaultConfig,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(common) => {
            let cfg = common.config()?;
            let scene = run_synth_stage(&cfg, &common.out)?;
            println!(
                "synth: {} cameras, {} points, {} tracks -> {}",
                scene.cameras.len(),
                scene.points.len(),
                scene.tracks.len(),
                common.out.display()
            );
        }
        Command::Sfm(common) => {
            let cfg = common.config()?;
            let (recon, stats) = run_sfm_stage(&cfg, &common.out)?;
            println!(
                "sfm: {} cameras, {} tracks, rms {:.3e} px ({} edges, {} failures)",
                recon.poses.len(),
                recon.tracks.len(),
                stats.final_rms_px,
                stats.edges,
                stats.edge_failures
            );
        }
        Command::Joint(common) => {
            let cfg = common.config()?;
            let run = run_joint_stage(&cfg, &common.out)?;
            let last = run.trace.last().context("empty trace")?;
            println!(
                "joint: {} iterations, final loss {:.6} (photo {:.6}, ba {:.6})",
                last.iteration, last.total, last.l_photo, last.l_ba
            );
        }
        Command::Eval(common) => {
            let cfg = common.config()?;
            let record = run_eval_stage(&cfg, &common.out)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
        Command::Export(common) => {
            run_export_stage(&common.out)?;
            println!("export: wrote {}", common.out.join("export").display());
        }
        Command::Pipeline(common) => {
            let cfg = common.config()?;
            let record = run_pipeline(&cfg, &common.out)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
            for (stage, secs) in &record.stage_seconds {
                eprintln!("  {stage}: {secs:.2} s");
            }
        }
        Command::DefaultConfig => {
            print!("{}", toml::to_string_pretty(&PipelineConfig::default())?);
        }
    }
    Ok(())
}
