//! The `depthforge` command line.
//!
//! Settings are layered: built-in defaults, then an optional TOML file given
//! with `--config`, then explicit flags. `--show-defaults` prints the
//! built-in layer in the same TOML layout the config file uses.

mod commands;
pub mod loss_plan;

pub use commands::{
    LossReportFile, MatchFile, MixRecord, MixesFile, PlanFile, PseudoLabelSummary, SampleDescriptor, SceneRecord,
    SelectionOutput, StatsFile,
};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::depthmix::DEFAULT_EPSILON;
use crate::error::{Error, Result};
use crate::geo_match::{GeoMatchConfig, DEFAULT_BOTTOM_MARGIN, DEFAULT_NUM_CANDIDATES, DEFAULT_TOP_MARGIN};
use crate::pseudo_label::{DEFAULT_EMA_ALPHA, DEFAULT_LAMBDA_F, DEFAULT_TAU};
use crate::selection::{DEFAULT_LAMBDA_E, DEFAULT_SCHEDULE};

#[derive(Debug, Parser)]
#[command(name = "depthforge", version, about = "Depth-guided data selection, mixing and pairing for segmentation datasets")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "DEPTHFORGE_THREADS")]
    pub threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// TOML settings file; explicit flags win over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the built-in settings as TOML and exit.
    #[arg(long)]
    pub show_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pick target images to annotate, step by step.
    Select(SelectArgs),
    /// Composite two samples by depth, or render every mix in a plan file.
    Mix(MixArgs),
    /// Turn class probabilities into a hard label map and confidence.
    PseudoLabel(PseudoLabelArgs),
    /// Rank candidate disparity maps by geometric difference to a target.
    MatchGeometry(MatchArgs),
    /// Plan clean and mixed samples for domain-adaptation batches.
    PlanSsda(PlanArgs),
    /// Aggregate loss terms described by a loss plan.
    LossReport(LossArgs),
    /// Per-class pixel ratio of a selection against the whole target set.
    Stats(StatsArgs),
    /// Generate a synthetic scene or dataset.
    Synthgen(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cumulative selection size after each step.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<usize>>,
    #[arg(long)]
    pub lambda_e: Option<f64>,
    /// Holds `step{t}.json` scores or `step{t}/<id>.png` student disparities.
    #[arg(long)]
    pub uncertainty_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["pair", "plans"])))]
pub struct MixArgs {
    /// Sample descriptor files, or entry ids when --manifest is given.
    #[arg(long, num_args = 2, value_names = ["I", "J"])]
    pub pair: Option<Vec<String>>,
    /// Plan file from `plan-ssda`; renders every TDM and CDM entry.
    #[arg(long, requires = "manifest")]
    pub plans: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Pair mode only; plan files carry their own.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PseudoLabelArgs {
    /// H x W x C tensor of class probabilities.
    #[arg(long)]
    pub probs: PathBuf,
    /// Scores are raw logits; apply softmax first.
    #[arg(long)]
    pub logits: bool,
    /// Label PNG and confidence tensor, comma separated.
    #[arg(long, value_name = "LABEL,CONF", value_parser = parse_out_pair)]
    pub out: OutPair,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutPair {
    pub label: PathBuf,
    pub conf: PathBuf,
}

fn parse_out_pair(s: &str) -> std::result::Result<OutPair, String> {
    match s.split_once(',') {
        Some((l, c)) if !l.is_empty() && !c.is_empty() && !c.contains(',') => Ok(OutPair {
            label: l.into(),
            conf: c.into(),
        }),
        _ => Err("expected LABEL,CONF".into()),
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub target: PathBuf,
    /// Directory of disparity PNGs; file stems are the candidate ids.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub top_margin: Option<usize>,
    #[arg(long)]
    pub bottom_margin: Option<usize>,
    /// Use the margins as given instead of scaling them to the image height.
    #[arg(long)]
    pub absolute_margins: bool,
    /// Also write the ranking as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub num_candidates: Option<usize>,
    #[arg(long)]
    pub top_margin: Option<usize>,
    #[arg(long)]
    pub bottom_margin: Option<usize>,
    #[arg(long)]
    pub absolute_margins: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub lambda_f: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub selected: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec or dataset spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthmixSettings {
    pub epsilon: f64,
}

impl Default for DepthmixSettings {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelSettings {
    pub tau: f64,
    pub lambda_f: f64,
    pub ema_alpha: f64,
}

impl Default for PseudoLabelSettings {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            lambda_f: DEFAULT_LAMBDA_F,
            ema_alpha: DEFAULT_EMA_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub schedule: Vec<usize>,
    pub lambda_e: f64,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            lambda_e: DEFAULT_LAMBDA_E,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoMatchSettings {
    pub top_margin: usize,
    pub bottom_margin: usize,
    pub absolute_margins: bool,
    pub num_candidates: usize,
}

impl Default for GeoMatchSettings {
    fn default() -> Self {
        Self {
            top_margin: DEFAULT_TOP_MARGIN,
            bottom_margin: DEFAULT_BOTTOM_MARGIN,
            absolute_margins: false,
            num_candidates: DEFAULT_NUM_CANDIDATES,
        }
    }
}

/// Effective settings after layering defaults, config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// 0 means one worker per core.
    pub threads: usize,
    pub log_level: String,
    pub depthmix: DepthmixSettings,
    pub pseudo_label: PseudoLabelSettings,
    pub selection: SelectionSettings,
    pub geo_match: GeoMatchSettings,
    /// Whether the seed came from a flag or the config file.
    #[serde(skip)]
    pub seed_given: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            log_level: "warn".into(),
            depthmix: DepthmixSettings::default(),
            pseudo_label: PseudoLabelSettings::default(),
            selection: SelectionSettings::default(),
            geo_match: GeoMatchSettings::default(),
            seed_given: false,
        }
    }
}

impl Settings {
    pub fn load(cli: &Cli) -> Result<Self> {
        let mut s = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| Error::format(path, e.to_string()))?;
                let seed_given = table.contains_key("seed");
                let mut s: Settings = table
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::format(path, e.to_string()))?;
                s.seed_given = seed_given;
                s
            }
            None => Settings::default(),
        };
        if let Some(seed) = cli.seed {
            s.seed = seed;
            s.seed_given = true;
        }
        if let Some(t) = cli.threads {
            s.threads = t;
        }
        if let Some(l) = &cli.log_level {
            s.log_level = l.clone();
        }
        Ok(s)
    }

    pub fn geo_config(&self) -> GeoMatchConfig {
        GeoMatchConfig {
            top_margin: self.geo_match.top_margin,
            bottom_margin: self.geo_match.bottom_margin,
            absolute_margins: self.geo_match.absolute_margins,
            num_candidates: self.geo_match.num_candidates,
            seed: self.seed,
        }
    }
}

pub fn show_defaults() -> String {
    toml::to_string_pretty(&Settings::default()).expect("defaults serialize")
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_json(value)).map_err(|e| Error::io(path, e))
}

fn init_logging(level: &str) {
    // a second init in the same process (tests) is harmless
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

/// Runs the tool on `argv` (program name first) and returns the exit code:
/// 0 on success, 1 on runtime failure, 2 on usage errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    if cli.show_defaults {
        print!("{}", show_defaults());
        return 0;
    }
    let Some(command) = cli.command.as_ref() else {
        use clap::CommandFactory;
        let _ = Cli::command().print_help();
        return 2;
    };
    let settings = match Settings::load(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("depthforge: error: {e}");
            return 1;
        }
    };
    init_logging(&settings.log_level);

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("depthforge: error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| commands::run(command, &settings)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("depthforge: error: {e}");
            1
        }
    }
}
