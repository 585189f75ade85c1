use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use cinetransfer::geometry::Resolution;
use cinetransfer::harness::{
    cmd_ablate_guidance, cmd_ablate_param, cmd_copy_task, cmd_landscape, cmd_render_export, guidance_table, load_scene,
    param_table, ParamKind, Scenario,
};
use cinetransfer::metrics::LandscapeKind;
use cinetransfer::renderer::{QuadratureConfig, Renderer};
use cinetransfer::Result;

#[derive(Parser)]
#[command(name = "cinetransfer", version, about = "Transfer camera motion from a reference clip into a scene")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Overrides the render resolution, `HxW`.
    #[arg(long)]
    resolution: Option<Resolution>,
}

#[derive(Subcommand)]
enum Command {
    /// Transfer a scripted reference and score the result.
    CopyTask {
        #[command(flatten)]
        common: Common,
    },
    /// Recover time or focal from random starting values.
    AblateParam {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "time")]
        kind: ParamKind,
        #[arg(long, default_value_t = 16)]
        runs: usize,
        #[arg(long, default_value_t = 6)]
        clip_len: usize,
    },
    /// Sweep the number of gradient-carrying pixels.
    AblateGuidance {
        #[command(flatten)]
        common: Common,
        /// Comma-separated counts; `full` disables masking.
        #[arg(long, default_value = "64,256,1024,4096")]
        counts: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Loss over a grid of camera translations around the true camera.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pose")]
        kind: LandscapeKind,
        #[arg(long, default_value_t = 9)]
        cells: usize,
        /// Largest offset in scene units.
        #[arg(long, default_value_t = 0.6)]
        extent: f64,
    },
    /// Interpolate a keyframe file and render every frame.
    RenderExport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: PathBuf,
        /// Preset name or scene TOML path.
        #[arg(long, default_value = "scene_a")]
        scene: String,
        #[arg(long, default_value_t = 1)]
        multiplier: usize,
    },
}

fn scenario(c: &Common) -> Result<(Scenario, Option<PathBuf>)> {
    let path = c.scenario.as_ref().ok_or_else(|| cinetransfer::Error::invalid("--scenario", "required for this command"))?;
    let mut s = Scenario::load(path)?;
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    if let Some(r) = c.resolution {
        s.resolution = format!("{}x{}", r.height, r.width);
    }
    s.validate()?;
    Ok((s, path.parent().map(Path::to_path_buf)))
}

fn parse_counts(text: &str) -> Result<Vec<Option<usize>>> {
    text.split(',')
        .map(|t| match t.trim() {
            "full" => Ok(None),
            n => n.parse().map(Some).map_err(|e| cinetransfer::Error::Parse(format!("count {n:?}: {e}"))),
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CopyTask { common } => {
            let (s, dir) = scenario(&common)?;
            let rec = cmd_copy_task(&s, dir.as_deref(), Some(&common.out))?;
            println!("{}", serde_json::to_string(&rec.report).expect("report serializes"));
            Ok(())
        }
        Command::AblateParam { common, kind, runs, clip_len } => {
            let (s, dir) = scenario(&common)?;
            let recs = cmd_ablate_param(kind, &s, runs, clip_len, s.seed, dir.as_deref(), Some(&common.out))?;
            print!("{}", param_table(&recs));
            Ok(())
        }
        Command::AblateGuidance { common, counts, repeats } => {
            let (s, dir) = scenario(&common)?;
            let (rows, _) = cmd_ablate_guidance(&parse_counts(&counts)?, &s, repeats, dir.as_deref(), Some(&common.out))?;
            print!("{}", guidance_table(&rows));
            Ok(())
        }
        Command::Landscape { common, kind, cells, extent } => {
            let (s, dir) = scenario(&common)?;
            let l = cmd_landscape(kind, &s, cells, extent, dir.as_deref(), Some(&common.out))?;
            println!("argmin {:?} center {:?}", l.argmin(), l.center());
            Ok(())
        }
        Command::RenderExport { common, trajectory, scene, multiplier } => {
            let res = common.resolution.unwrap_or(Resolution::new(64, 64));
            let renderer = Renderer::new(Arc::new(load_scene(&scene, None)?), res, QuadratureConfig::default())?;
            let n = cmd_render_export(&trajectory, &renderer, multiplier, &common.out)?;
            println!("{n} frames written to {}", common.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
