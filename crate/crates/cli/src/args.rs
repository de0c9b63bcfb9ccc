use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tisp::{GlmFamily, ThresholdRule};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tisp", version, about = "Sparse GLM fitting by iterative thresholding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model at a fixed λ.
    Fit(FitArgs),
    /// Fit a log-spaced λ path from the zero start at every point.
    Path(PathArgs),
    /// Selective cross-validation over a λ path.
    Tune(TuneArgs),
    /// Proportional screening to ⌈αn⌉ predictors.
    Screen(ScreenArgs),
    /// Write a synthetic dataset as CSV.
    Simulate(SimulateArgs),
    /// Run the two-tone spectral benchmark.
    Spectral(SpectralArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    #[value(alias = "logistic", alias = "binomial")]
    Bernoulli,
    Poisson,
}

impl From<FamilyArg> for GlmFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => GlmFamily::GaussianIdentity,
            FamilyArg::Bernoulli => GlmFamily::BernoulliLogit,
            FamilyArg::Poisson => GlmFamily::PoissonLog,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// CSV with header x1..xp,y.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// soft, hard, ridge:η, scad[:a], firm:α or hard-ridge:η.
    #[arg(long, default_value = "soft")]
    pub rule: String,
    /// Ridge parameter for ridge and hard-ridge; overrides the rule suffix.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Group file: one group per line, 1-based column indices.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Fit an unpenalized intercept.
    #[arg(long)]
    pub intercept: bool,
    /// Relaxation parameter in (0, 2].
    #[arg(long, default_value_t = 2.0)]
    pub omega: f64,
    /// Design scaling divisor; the certified bound when omitted.
    #[arg(long)]
    pub k0: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 50)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub min_ratio: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Penalty level on the scaled design X/k0.
    #[arg(long)]
    pub lambda: f64,
    /// Refit the selected support by restricted MLE (restricted ridge for
    /// hard-ridge).
    #[arg(long)]
    pub calibrate: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Plain,
    Aic,
    Bic,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "bic")]
    pub criterion: CriterionArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ScreenArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Keep ⌈αn⌉ predictors (groups when a group file is given).
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub screen_iter: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Ar1,
    Twinsine,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub kind: SimKind,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Signal strength of the AR(1) coefficient pattern.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Noise variance of the two-tone signal.
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the true coefficients (AR(1)) or the group file (two-tone).
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TuningArg {
    LargeVal,
    ScvBic,
}

#[derive(Debug, Clone, Args)]
pub struct SpectralArgs {
    /// Comma-separated subset of bp, g-lasso, hard-ridge, g-hard-ridge.
    #[arg(long, value_delimiter = ',', default_value = "bp,g-lasso,hard-ridge,g-hard-ridge")]
    pub methods: Vec<String>,
    /// Comma-separated noise variances.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub sigma2: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, value_enum, default_value = "large-val")]
    pub tuning: TuningArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Seed of the first run; run `r` uses `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parses `name[:param]`, with `eta` overriding a ridge parameter.
pub fn parse_rule(spec: &str, eta: Option<f64>) -> Result<ThresholdRule, CliError> {
    let (name, param) = match spec.split_once(':') {
        Some((n, p)) => {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad rule parameter '{p}'")))?;
            (n, Some(v))
        }
        None => (spec, None),
    };
    let need = |what: &str, v: Option<f64>| {
        v.ok_or_else(|| CliError::Config(format!("rule '{name}' needs {what} (e.g. {name}:0.1)")))
    };
    let rule = match name.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "soft" | "lasso" => ThresholdRule::Soft,
        "hard" => ThresholdRule::Hard,
        "ridge" => ThresholdRule::Ridge { eta: need("η", eta.or(param))? },
        "scad" => ThresholdRule::Scad { a: param.unwrap_or(tisp::thresholding::SCAD_DEFAULT_A) },
        "firm" => ThresholdRule::Firm { alpha: need("α", param)? },
        "hard-ridge" | "hardridge" => ThresholdRule::HardRidge { eta: need("η", eta.or(param))? },
        other => return Err(CliError::Config(format!("unknown rule '{other}'"))),
    };
    if param.is_some() && matches!(rule, ThresholdRule::Soft | ThresholdRule::Hard) {
        return Err(CliError::Config(format!("rule '{name}' takes no parameter")));
    }
    rule.validate()?;
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_parse() {
        assert_eq!(parse_rule("soft", None).unwrap(), ThresholdRule::Soft);
        assert_eq!(parse_rule("scad", None).unwrap(), ThresholdRule::Scad { a: 3.7 });
        assert_eq!(parse_rule("firm:0.5", None).unwrap(), ThresholdRule::Firm { alpha: 0.5 });
        assert_eq!(
            parse_rule("hard_ridge:0.1", Some(0.3)).unwrap(),
            ThresholdRule::HardRidge { eta: 0.3 }
        );
        assert!(matches!(parse_rule("hard-ridge", None), Err(CliError::Config(_))));
        assert!(matches!(parse_rule("scad:1.5", None), Err(CliError::Config(_))));
        assert!(matches!(parse_rule("hard:2", None), Err(CliError::Config(_))));
        assert!(matches!(parse_rule("mcp", None), Err(CliError::Config(_))));
    }
}
