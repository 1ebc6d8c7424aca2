//! `cropseg`: train, evaluate and apply the fruit segmenter, and track a
//! fruit through a time-lapse series.
//!
//! Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Device selection. Only the CPU backend is built in.
pub const DEVICE_ENV: &str = "CROPSEG_DEVICE";

#[derive(Parser, Debug)]
#[command(name = "cropseg", version, about = "Fruit segmentation and growth tracking")]
struct Cli {
    /// Seed for initialisation, splits, shuffling and synthesis (overrides config seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network from a run configuration
    Train(TrainArgs),
    /// Continue training a saved checkpoint
    Finetune(FinetuneArgs),
    /// Score a checkpoint on an annotated dataset
    Eval(EvalArgs),
    /// Compare a deep and a shallow network over several seeds
    Ablate(TrainArgs),
    /// Segment one image
    Segment(SegmentArgs),
    /// Follow one fruit through a photo series
    Track(TrackArgs),
    /// Redraw plots from a tracking CSV
    Report(ReportArgs),
    /// Write synthetic scenes or a synthetic time-lapse sequence
    Synth(SynthArgs),
    /// Draw a coordinate grid over a photo to help pick --center
    Probe(ProbeArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out_dir`)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to start from
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of image + annotation pairs
    #[arg(long)]
    pub data: PathBuf,
    /// Polygon label to use (default: first polygon)
    #[arg(long)]
    pub label: Option<String>,
    /// Write per-sample scores to this CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image to segment; the largest centered square is used
    pub image: PathBuf,
    /// Single prediction instead of eight-fold symmetry averaging
    #[arg(long)]
    pub no_d4: bool,
    #[arg(long, default_value_t = cropseg_core::predictor::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Output directory (default: next to the image)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Photo directory or `photo_id,path[,timestamp]` CSV
    #[arg(long)]
    pub manifest: PathBuf,
    /// Target position in the first photo, `x,y` pixels from the top-left
    #[arg(long, value_parser = parse_point)]
    pub center: (f64, f64),
    /// Window side at scale 1.0 (default: sized from the first photo)
    #[arg(long)]
    pub window: Option<usize>,
    /// Areas above this are clamped in the clamped CSV
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub no_d4: bool,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Optional run configuration supplying the `[tracking]` section
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Raw or clamped tracking CSV
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Night interval of photo ids, `start:end` (repeatable)
    #[arg(long, value_parser = parse_span)]
    pub night: Vec<(f64, f64)>,
    /// Highlighted interval of photo ids, `start:end` (repeatable)
    #[arg(long, value_parser = parse_span)]
    pub highlight: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Central fruit with distractors and clutter
    Scenes,
    /// Harder scenes: more distractors, blur, heavier clutter
    Hard,
    /// Drift-and-grow time-lapse with a photo manifest
    Sequence,
    /// Annotated crops of sequence-style photos, framed the way the tracker frames them
    Crops,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Scenes)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Image side in pixels (scenes, hard and crops)
    #[arg(long, default_value_t = 128)]
    pub side: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    pub image: PathBuf,
    /// Grid spacing in photo pixels
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// PNG to write (default: print the ASCII grid only)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(x)?, p(y)?))
}

fn parse_span(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn check_device() -> anyhow::Result<()> {
    match std::env::var(DEVICE_ENV) {
        Ok(d) if !d.is_empty() && !d.eq_ignore_ascii_case("cpu") => {
            anyhow::bail!("{DEVICE_ENV}={d}: only the cpu device is available")
        }
        _ => Ok(()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<cropseg_core::Error>(),
            Some(cropseg_core::Error::NonFinite { .. })
        )
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let seed = cli.seed;
    let result = check_device().and_then(|()| match cli.command {
        Command::Train(a) => commands::train(&a, seed),
        Command::Finetune(a) => commands::finetune(&a, seed),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a, seed),
        Command::Segment(a) => commands::segment(&a),
        Command::Track(a) => commands::track(&a),
        Command::Report(a) => commands::report(&a),
        Command::Synth(a) => commands::synth(&a, seed.unwrap_or(0)),
        Command::Probe(a) => commands::probe(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn point_and_span_parsing() {
        assert_eq!(parse_point("2600, 1950.5"), Ok((2600.0, 1950.5)));
        assert!(parse_point("2600").is_err());
        assert_eq!(parse_span("381:384"), Ok((381.0, 384.0)));
    }

    #[test]
    fn divergence_maps_to_three() {
        let e = anyhow::Error::new(cropseg_core::Error::NonFinite {
            epoch: 1,
            batch: 1,
            value: f64::NAN,
        })
        .context("training");
        assert_eq!(exit_code(&e), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("bad config")), 2);
    }
}
