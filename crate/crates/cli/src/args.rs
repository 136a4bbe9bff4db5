use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use infogate::io::Format;
use infogate::solver::Variant;
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "infogate", version, about = "Incremental 2D pose-graph SLAM with information-guided gating")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream datasets through solver variants and write per-increment
    /// metrics.
    Run(RunArgs),
    /// Build the MIT-P stream: MIT with noisy position priors on every k-th
    /// pose.
    MakeMitp(MitpArgs),
    /// Convert between g2o, TORO and JSON-lines.
    Convert(ConvertArgs),
    /// Check the sparse kernels and the solver against dense oracles on
    /// random graphs.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Batch optimum warm-started from a GNi run.
    Batch,
    /// The stream's vertex values.
    Initial,
    /// No ATE.
    None,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Dataset file; repeat for several.
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Variant name (GN1, GNi, GNi-LCG, GNi-IGG, GNi-SPO, GNi-SPO-LCG,
    /// GNi-SPO-IGG) or `all`; repeat for several.
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub tau_d: Option<f64>,
    #[arg(long)]
    pub tau_eta: Option<f64>,
    #[arg(long)]
    pub tau_gn: Option<usize>,
    /// Recorded in summary.json; runs are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parallel (dataset, variant) pairs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum)]
    pub emit: Option<Emit>,
    /// Trajectory the ATE is measured against.
    #[arg(long, value_enum)]
    pub reference: Option<Reference>,
    /// TOML file with any of the options above; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    pub format: Option<String>,
    #[serde(default)]
    pub variants: Vec<String>,
    pub tau_d: Option<f64>,
    pub tau_eta: Option<f64>,
    pub tau_gn: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub emit: Option<Emit>,
    pub reference: Option<Reference>,
}

#[derive(Debug, Args)]
pub struct MitpArgs {
    /// The MIT dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// A prior on every k-th pose.
    #[arg(long, default_value_t = 50)]
    pub every: usize,
    /// Standard deviation of the prior noise in meters.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Output file; its extension picks the format unless `--to` is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub to: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Largest number of poses in a random graph.
    #[arg(long, default_value_t = 30)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub graphs: usize,
    /// Directory for the JSON report and reproducer streams.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

/// Expands `all` and parses the remaining names.
pub fn parse_variants(names: &[String]) -> Result<Vec<Variant>, String> {
    let mut out = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            out.extend(Variant::ALL);
        } else {
            out.push(n.parse()?);
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|v| seen.insert(*v));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_lists() {
        let v = parse_variants(&["gni".into(), "GNi-SPO-IGG".into(), "GNi".into()]).unwrap();
        assert_eq!(v, vec![Variant::Gni, Variant::GniSpoIgg]);
        assert_eq!(parse_variants(&["all".into()]).unwrap().len(), 7);
        assert!(parse_variants(&["GN2".into()]).is_err());
    }

    #[test]
    fn file_config_keys() {
        let c: FileConfig = toml::from_str("datasets = [\"a.g2o\"]\ntau_d = 1e-4\nemit = \"csv\"\nreference = \"none\"").unwrap();
        assert_eq!(c.tau_d, Some(1e-4));
        assert_eq!(c.emit, Some(Emit::Csv));
        assert!(toml::from_str::<FileConfig>("tau_x = 1").is_err());
    }
}
