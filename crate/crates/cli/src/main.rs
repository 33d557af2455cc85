use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "wjko",
    version,
    about = "Entropic Wasserstein gradient flows: scenario runs, frame rendering, dense reference solves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON scenario config; writes frames, previews, diagnostics.csv
    /// and a MANIFEST into the output directory.
    Run {
        /// Path to the scenario config (JSON).
        config: PathBuf,
        /// Output directory, created if absent.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a frame file to an 8-bit PGM preview.
    Render {
        /// Frame file written by `run`.
        frame: PathBuf,
        /// Destination image path.
        #[arg(long)]
        pgm: PathBuf,
    },
    /// Dense brute-force reference solves for test fixtures (n <= 8).
    Oracle {
        /// Reference case: jko, dykstra or attraction.
        #[arg(long)]
        case: String,
        /// Instance size.
        #[arg(long)]
        n: usize,
        /// Instance seed.
        #[arg(long)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => wjko_cli::run(&config, &out).map(|summary| {
            println!(
                "completed {} steps, wrote {} frames to {}",
                summary.steps,
                summary.frames,
                summary.out_dir.display()
            );
        }),
        Command::Render { frame, pgm } => wjko_cli::render(&frame, &pgm),
        Command::Oracle { case, n, seed } => {
            let mut stdout = std::io::stdout().lock();
            wjko_cli::oracle(&case, n, seed, &mut stdout)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
