//! `speclab`: spectral analysis of transformer feature maps and a toy
//! distillation harness, from the command line.
//!
//! Five commands cover the workflow: `analyze` turns a directory of layer
//! dumps into a spectral profile, `histogram` and `select` consume profiles,
//! `distill` runs a full teacher/baseline/distilled experiment from a JSON
//! config, and `compare` measures how far two profiles are apart.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric
//! failure. Diagnostics go to stderr; results go to files in the output
//! directory (plus `compare`'s distance on stdout).

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};

use commands::TokenGrid;

#[derive(Parser)]
#[command(
    name = "speclab",
    version,
    about = "Spectral feature-map analysis and toy distillation experiments"
)]
struct Cli {
    /// Directory generated files are written into (distill defaults to the
    /// config's io.out_dir instead).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Overrides the dataset seed of a distillation config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-layer channel spectra and the intensity profile of a
    /// directory of layer_*.npy dumps
    Analyze {
        /// Directory containing layer_*.npy feature dumps
        dir: PathBuf,
        /// Token grid for rank-3 (batch, tokens, channels) dumps, e.g. 4x4
        #[arg(long, value_name = "HxW", value_parser = parse_tokens)]
        tokens: Option<TokenGrid>,
        /// Discard token 0 as a class token before placing tokens on the grid
        #[arg(long)]
        drop_class: bool,
    },
    /// Bin a profile's intensities into histogram.csv and histogram.svg
    Histogram {
        /// Profile JSON produced by analyze or distill
        profile: PathBuf,
        /// Number of uniform bins
        #[arg(long, default_value_t = 8)]
        bins: usize,
    },
    /// Pick the most intense teacher layers and map them onto a student
    Select {
        /// Profile JSON of the teacher
        profile: PathBuf,
        /// How many teacher layers to pick
        #[arg(long)]
        k: usize,
        /// Depth of the student the picks are mapped onto
        #[arg(long)]
        student_depth: usize,
    },
    /// Train teacher, baseline student, and distilled student from a config
    Distill {
        /// Run configuration JSON
        config: PathBuf,
    },
    /// Print the distance between two profiles and plot their overlay
    Compare {
        /// First profile JSON
        profile_a: PathBuf,
        /// Second profile JSON
        profile_b: PathBuf,
    },
}

fn parse_tokens(s: &str) -> Result<TokenGrid, String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW (e.g. 4x4), got '{s}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad grid height '{h}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad grid width '{w}'"))?;
    if h == 0 || w == 0 {
        return Err("token grid sides must be >= 1".to_string());
    }
    Ok(TokenGrid { h, w })
}

fn main() {
    let cli = Cli::parse();
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let result = match cli.command {
        Command::Analyze {
            dir,
            tokens,
            drop_class,
        } => commands::analyze(&dir, tokens, drop_class, &out),
        Command::Histogram { profile, bins } => commands::histogram(&profile, bins, &out),
        Command::Select {
            profile,
            k,
            student_depth,
        } => commands::select(&profile, k, student_depth, &out),
        Command::Distill { config } => commands::distill(&config, cli.out, cli.seed),
        Command::Compare {
            profile_a,
            profile_b,
        } => commands::compare(&profile_a, &profile_b, &out),
    };
    if let Err(e) = result {
        eprintln!("speclab: {e}");
        process::exit(e.exit_code());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_grids_parse_both_separator_cases() {
        let g = parse_tokens("4x4").unwrap();
        assert_eq!((g.h, g.w), (4, 4));
        let g = parse_tokens("2X8").unwrap();
        assert_eq!((g.h, g.w), (2, 8));
    }

    #[test]
    fn bad_token_grids_are_rejected() {
        assert!(parse_tokens("44").is_err());
        assert!(parse_tokens("4x").is_err());
        assert!(parse_tokens("0x4").is_err());
        assert!(parse_tokens("ax4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
