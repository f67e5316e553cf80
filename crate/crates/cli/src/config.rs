//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use blockcompat::format::read_quant_table_text;
use blockcompat::{DctVariant, Dims, PipelineSpec, QuantTable};
use clap::Args;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_BUDGET: u64 = 50_000;

/// Every key is optional; flags win over the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub variant: Option<String>,
    pub level_shift: Option<bool>,
    pub quant: Option<String>,
    pub budget: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,

    pub inputs: Option<Vec<PathBuf>>,
    pub table: Option<PathBuf>,
    pub strategy: Option<String>,
    pub fraction: Option<f64>,
    pub prior: Option<String>,
    pub pmaps: Option<PathBuf>,
    pub continue_on_error: Option<bool>,

    pub source: Option<String>,
    pub images: Option<Vec<PathBuf>>,
    pub samples: Option<usize>,
    pub m_max: Option<usize>,

    pub payloads: Option<Vec<f64>>,
    pub fractions: Option<Vec<f64>>,
    pub selections: Option<Vec<String>>,
    pub pmap_file: Option<PathBuf>,
    pub n_images: Option<usize>,
    pub blocks_per_image: Option<usize>,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// DCT implementation: naive or islow.
    #[arg(long)]
    pub variant: Option<String>,
    /// Disable the ±128 level shift.
    #[arg(long)]
    pub no_level_shift: bool,
    /// Quantization table: `unit`, `qf:N` or a table file.
    #[arg(long, value_name = "SPEC")]
    pub quant: Option<String>,
    /// Search iteration budget per block.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Master seed; required by every randomized command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores). Never changes results.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Report destination (stdout when absent).
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

/// `CommonArgs` merged with the file.
#[derive(Debug)]
pub struct Settings {
    pub file: FileConfig,
    pub variant: DctVariant,
    pub level_shift: bool,
    pub quant: Option<String>,
    pub budget: u64,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Settings {
    pub fn load(common: &CommonArgs) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let variant = match common.variant.as_ref().or(file.variant.as_ref()) {
            Some(v) => v.parse::<DctVariant>().map_err(CliError::Config)?,
            None => DctVariant::Naive,
        };
        let level_shift = !common.no_level_shift && file.level_shift.unwrap_or(true);
        let budget = common.budget.or(file.budget).unwrap_or(DEFAULT_BUDGET);
        if budget == 0 {
            return Err(CliError::Config("budget must be positive".into()));
        }
        let threads = common.threads.or(file.threads);
        if threads == Some(0) {
            return Err(CliError::Config("threads must be positive".into()));
        }
        Ok(Settings {
            variant,
            level_shift,
            quant: common.quant.clone().or_else(|| file.quant.clone()),
            budget,
            seed: common.seed.or(file.seed),
            threads,
            output: common.output.clone().or_else(|| file.output.clone()),
            file,
        })
    }

    /// Randomized commands refuse to run on an implicit seed.
    pub fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config(format!("{command} is randomized: pass --seed or set `seed`")))
    }

    /// Pipeline for blocks of `dims`, quantized per the `quant` setting.
    pub fn pipeline(&self, dims: Dims) -> Result<PipelineSpec, CliError> {
        let quant = quant_table(self.quant.as_deref(), dims)?;
        PipelineSpec::new(self.variant, self.level_shift, quant).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn quant_table(spec: Option<&str>, dims: Dims) -> Result<QuantTable, CliError> {
    let table = match spec {
        None | Some("unit") => QuantTable::unit(dims),
        Some(s) if s.starts_with("qf:") => {
            let q: u8 = s[3..]
                .parse()
                .map_err(|_| CliError::Config(format!("bad quality in `{s}`")))?;
            if dims != Dims::STANDARD {
                return Err(CliError::Config("quality tables are 8x8".into()));
            }
            QuantTable::from_quality(q).map_err(|e| CliError::Config(e.to_string()))?
        }
        Some(path) => {
            let text = read_existing(Path::new(path))?;
            read_quant_table_text(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?
        }
    };
    if table.dims() != dims {
        return Err(CliError::Config(format!(
            "quantization table is {} but blocks are {dims}",
            table.dims()
        )));
    }
    Ok(table)
}

/// Referenced inputs must exist; a missing one is a configuration error.
pub fn read_existing(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn require_path(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let path = path.ok_or_else(|| CliError::Config(format!("no {what} given")))?;
    if !path.exists() {
        return Err(CliError::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(path)
}

/// Comma-separated list flag, e.g. `--payloads 0,0.01`.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| CliError::Config(format!("bad {what} `{v}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common() -> CommonArgs {
        CommonArgs {
            config: None,
            variant: None,
            no_level_shift: false,
            quant: None,
            budget: None,
            seed: None,
            threads: None,
            output: None,
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "variant = \"islow\"\nbudget = 10\nseed = 5\n").unwrap();
        let mut args = common();
        args.config = Some(path);
        args.budget = Some(20);
        let s = Settings::load(&args).unwrap();
        assert_eq!(s.variant, DctVariant::Islow);
        assert_eq!(s.budget, 20);
        assert_eq!(s.seed, Some(5));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "bugdet = 10\n").unwrap();
        let mut args = common();
        args.config = Some(path);
        assert!(matches!(Settings::load(&args), Err(CliError::Config(_))));
    }

    #[test]
    fn seed_is_required_when_asked() {
        let s = Settings::load(&common()).unwrap();
        assert!(matches!(s.require_seed("heatmap"), Err(CliError::Config(_))));
    }

    #[test]
    fn quant_specs() {
        assert!(quant_table(Some("unit"), Dims::TOY).unwrap().is_unit());
        assert_eq!(quant_table(Some("qf:50"), Dims::STANDARD).unwrap().steps()[0], 16);
        assert!(quant_table(Some("qf:50"), Dims::TOY).is_err());
        assert!(quant_table(Some("/nonexistent/table"), Dims::STANDARD).is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("0, 0.5,1", "payload").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_list::<f64>("0,x", "payload").is_err());
    }
}
