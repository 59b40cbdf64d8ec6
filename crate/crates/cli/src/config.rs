//! Run settings: command-line flags over an optional JSON config file over defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use mfg_evo::revision::{ProtocolConfig, ProtocolParams};
use mfg_evo::scenarios::mac::MacParams;
use serde::Deserialize;

use crate::Failure;

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Game-spec JSON file.
    #[arg(long, conflicts_with = "scenario")]
    pub spec: Option<PathBuf>,
    /// Built-in scenario: example3, mac or congestion-demo.
    #[arg(long)]
    pub scenario: Option<String>,
    /// JSON file with default values for any of these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Revision protocol family: dissatisfaction, pairwise-proportional-imitation, bnn, smith, none.
    #[arg(long)]
    pub protocol: Option<String>,
    /// Aspiration level K of the dissatisfaction protocol.
    #[arg(long = "k")]
    pub k: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Integration step (integrate) or sampling grid step (simulate).
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Population size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub multistart: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail instead of warning when a switch-rate row sum exceeds the revision rate.
    #[arg(long)]
    pub strict: bool,
    /// Initial condition: uniform, fig1, fig2 (example3), msne (mac), or comma-separated masses.
    #[arg(long)]
    pub init: Option<String>,
    /// Population sizes for a convergence study, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Points per axis of the payoff grids written for the mac scenario.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    spec: Option<PathBuf>,
    scenario: Option<String>,
    protocol: Option<ProtocolConfig>,
    horizon: Option<f64>,
    step: Option<f64>,
    tol: Option<f64>,
    n: Option<usize>,
    seed: Option<u64>,
    reps: Option<usize>,
    multistart: Option<usize>,
    out: Option<PathBuf>,
    strict: Option<bool>,
    init: Option<String>,
    ns: Option<Vec<usize>>,
    grid: Option<usize>,
    mac: Option<MacParams>,
}

#[derive(Clone, Debug)]
pub enum Target {
    Scenario(String),
    Spec(PathBuf),
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub target: Target,
    /// `None` leaves the choice to the subcommand and scenario.
    pub protocol: Option<ProtocolConfig>,
    pub horizon: f64,
    pub step: Option<f64>,
    pub tol: f64,
    pub n: usize,
    pub seed: u64,
    pub reps: usize,
    pub multistart: Option<usize>,
    pub out: PathBuf,
    pub strict: bool,
    pub init: String,
    pub ns: Option<Vec<usize>>,
    pub grid: usize,
    pub mac: MacParams,
}

fn read_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path_in = e.path().to_string();
        Failure::Usage(format!("{}: {path_in}: {}", path.display(), e.into_inner()))
    })
}

impl Settings {
    pub fn resolve(args: &RunArgs) -> Result<Settings, Failure> {
        let file = match &args.config {
            Some(p) => read_config(p)?,
            None => FileConfig::default(),
        };
        // a config file's relative spec path is taken relative to the file
        let file_spec = file.spec.map(|p| match &args.config {
            Some(cfg) if p.is_relative() => cfg.parent().unwrap_or(Path::new(".")).join(p),
            _ => p,
        });
        let target = match (&args.spec, &args.scenario) {
            (Some(p), _) => Target::Spec(p.clone()),
            (None, Some(s)) => Target::Scenario(s.clone()),
            (None, None) => match (file_spec, file.scenario) {
                (Some(p), None) => Target::Spec(p),
                (None, Some(s)) => Target::Scenario(s),
                (Some(_), Some(_)) => return Err(Failure::Usage("config sets both spec and scenario".into())),
                (None, None) => return Err(Failure::Usage("one of --spec or --scenario is required".into())),
            },
        };
        if let Target::Scenario(name) = &target {
            if !mfg_evo::scenarios::NAMES.contains(&name.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown scenario {name:?}; expected one of {}",
                    mfg_evo::scenarios::NAMES.join(", ")
                )));
            }
        }

        let strict = args.strict || file.strict.unwrap_or(false);
        let protocol = match (&args.protocol, file.protocol) {
            (Some(family), file_protocol) => {
                let file_k = file_protocol.filter(|p| &p.family == family).and_then(|p| p.params.k);
                Some(ProtocolConfig { family: family.clone(), params: ProtocolParams { k: args.k.or(file_k) }, strict })
            }
            (None, Some(mut p)) => {
                p.params.k = args.k.or(p.params.k);
                p.strict |= strict;
                Some(p)
            }
            (None, None) => None,
        };

        let settings = Settings {
            target,
            protocol,
            horizon: args.horizon.or(file.horizon).unwrap_or(10.0),
            step: args.step.or(file.step),
            tol: args.tol.or(file.tol).unwrap_or(1e-9),
            n: args.n.or(file.n).unwrap_or(1000),
            seed: args.seed.or(file.seed).unwrap_or(0),
            reps: args.reps.or(file.reps).unwrap_or(1),
            multistart: args.multistart.or(file.multistart),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            strict,
            init: args.init.clone().or(file.init).unwrap_or_else(|| "uniform".into()),
            ns: args.ns.clone().or(file.ns),
            grid: args.grid.or(file.grid).unwrap_or(51),
            mac: file.mac.unwrap_or_default(),
        };
        settings.check()?;
        Ok(settings)
    }

    fn check(&self) -> Result<(), Failure> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Failure::Usage(format!("--{name} must be positive, got {v}")))
            }
        };
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Failure::Usage(format!("--horizon must be nonnegative, got {}", self.horizon)));
        }
        if let Some(h) = self.step {
            positive("step", h)?;
        }
        positive("tol", self.tol)?;
        for (name, v) in [("n", self.n), ("reps", self.reps)] {
            if v == 0 {
                return Err(Failure::Usage(format!("--{name} must be positive")));
            }
        }
        if self.grid < 2 {
            return Err(Failure::Usage("--grid needs at least 2 points".into()));
        }
        if self.multistart == Some(0) {
            return Err(Failure::Usage("--multistart must be positive".into()));
        }
        if let Some(ns) = &self.ns {
            if ns.is_empty() || ns.contains(&0) {
                return Err(Failure::Usage("--ns needs positive population sizes".into()));
            }
        }
        if let Target::Spec(p) = &self.target {
            if !p.exists() {
                return Err(Failure::Usage(format!("spec file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
