//! Command-line surface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tsvc_core::model::linear_predictor;
use tsvc_core::sim::{evaluate_detections, run_replicate, Detection, Preset, ScenarioId, ScenarioSpec, Truth};
use tsvc_core::{fit_tsvc, Distribution, Family, FitConfig};

use crate::csv_io::{covariates_from_table, load_csv, Table};
use crate::dot::tree_to_dot;
use crate::error::CliError;
use crate::model_file::ModelFile;
use crate::report;
use crate::schema::Schema;

#[derive(Debug, Parser)]
#[command(name = "tsvc", version, about = "Tree-structured varying-coefficient GLMs")]
pub struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write model.json, report.txt and one DOT file per tree.
    Fit(FitArgs),
    /// Append linear predictor and fitted mean columns to a CSV file.
    Predict(PredictArgs),
    /// Run simulation scenarios and write detection rates as tidy CSV.
    Simulate(SimulateArgs),
    /// Export the trees of a fitted model as Graphviz DOT.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// JSON sidecar listing column names, roles and scales.
    #[arg(long)]
    pub schema: PathBuf,
    /// gaussian, binomial or poisson (canonical link).
    #[arg(long)]
    pub family: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub nperm: usize,
    #[arg(long, default_value_t = 5)]
    pub min_node_size: usize,
    #[arg(long, default_value_t = 30)]
    pub max_splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Forbid splitting predictor j on modifier m; `j:m` by name or 1-based index.
    #[arg(long = "exclude-modifier", value_name = "J:M")]
    pub exclude_modifier: Vec<String>,
    /// Run every permutation even when significance is already out of reach.
    #[arg(long)]
    pub no_curtail: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub csv: PathBuf,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario ids: 1-5 or `illustrative` (comma separated or repeated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub scenario: Vec<String>,
    /// Sample sizes (default: 100,250,500; 400 for the illustrative example).
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Noise standard deviations (default: 1,1.5,2; 1 for the illustrative example).
    #[arg(long, value_delimiter = ',')]
    pub sigma: Vec<f64>,
    /// Replications per cell (default from the preset).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Permutations per test (default from the preset).
    #[arg(long)]
    pub nperm: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `desk` (50 reps, 500 permutations) or `full` (100 reps, 1000 permutations).
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of per-replicate results; existing ones are reused.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Write tree_<name>.dot files here instead of printing to stdout.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Only this predictor's tree.
    #[arg(long)]
    pub predictor: Option<String>,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                eprintln!("{}", CliError::Usage(e.kind().to_string()).to_json());
                return 2;
            }
            return 0;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("{}", CliError::Usage("--threads must be at least 1".into()).to_json());
            return 2;
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(a) => fit(&a),
        Command::Predict(a) => predict(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Export(a) => export(&a),
    }
}

pub fn parse_family(s: &str) -> Result<Family, CliError> {
    let d: Distribution = s.parse().map_err(|_| CliError::Usage(format!("unknown family `{s}` (use gaussian, binomial or poisson)")))?;
    Ok(Family::canonical(d))
}

/// Resolve `j:m` against predictor names, or 1-based indices.
pub fn parse_exclusion(s: &str, names: &[String]) -> Result<(usize, usize), CliError> {
    let resolve = |t: &str| -> Result<usize, CliError> {
        let t = t.trim();
        if let Some(k) = names.iter().position(|n| n == t) {
            return Ok(k);
        }
        match t.parse::<usize>() {
            Ok(k) if k >= 1 && k <= names.len() => Ok(k - 1),
            _ => Err(CliError::Usage(format!("--exclude-modifier: unknown predictor `{t}`"))),
        }
    };
    let (j, m) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("--exclude-modifier expects J:M, got `{s}`")))?;
    let (j, m) = (resolve(j)?, resolve(m)?);
    if j == m {
        return Err(CliError::Usage(format!("--exclude-modifier `{s}`: a predictor never modifies itself")));
    }
    Ok((j, m))
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let family = parse_family(&a.family)?;
    let schema = Schema::read(&a.schema)?;
    let data = load_csv(&a.csv, &schema)?;
    if data.p() < 2 {
        return Err(CliError::Data("fitting needs at least two predictors".into()));
    }
    let names: Vec<String> = data.columns().iter().map(|c| c.name.clone()).collect();
    let modifier_exclusions = a.exclude_modifier.iter().map(|s| parse_exclusion(s, &names)).collect::<Result<Vec<_>, _>>()?;
    let config = FitConfig {
        alpha: a.alpha,
        n_perm: a.nperm,
        min_node_size: a.min_node_size,
        max_splits: a.max_splits,
        seed: a.seed,
        modifier_exclusions,
        curtail: !a.no_curtail,
    };
    let model = fit_tsvc(&data, family, &config)?;
    std::fs::create_dir_all(&a.out_dir).map_err(CliError::io(&a.out_dir))?;
    let model_path = a.out_dir.join("model.json");
    let report_path = a.out_dir.join("report.txt");
    let text = report::render(&model, &config, data.n());
    std::fs::write(&report_path, &text).map_err(CliError::io(&report_path))?;
    for t in &model.trees {
        let path = a.out_dir.join(format!("tree_{}.dot", file_stem(data.name(t.predictor()))));
        std::fs::write(&path, tree_to_dot(t, &model.predictors)).map_err(CliError::io(&path))?;
    }
    ModelFile::new(config, model).write(&model_path)?;
    print!("{text}");
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let file = ModelFile::read(&a.model)?;
    let table = Table::read(&a.csv)?;
    let mut out = String::new();
    if !table.headers.is_empty() {
        let columns = covariates_from_table(&table, &file.model.predictors)?;
        let eta = linear_predictor(&file.model, &columns)?;
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        let header: Vec<&str> = table.headers.iter().map(String::as_str).chain(["eta", "mu"]).collect();
        let csv_err = |e: csv::Error| CliError::Data(e.to_string());
        wtr.write_record(&header).map_err(csv_err)?;
        for (rec, &e) in table.records.iter().zip(&eta) {
            let mu = file.model.family.inverse_link(e);
            let row: Vec<String> = rec.iter().cloned().chain([e.to_string(), mu.to_string()]).collect();
            wtr.write_record(&row).map_err(csv_err)?;
        }
        let bytes = wtr.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        out = String::from_utf8(bytes).expect("csv writer emits utf-8");
    }
    match &a.out {
        Some(path) => std::fs::write(path, out).map_err(CliError::io(path)),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

pub fn export(a: &ExportArgs) -> Result<(), CliError> {
    let file = ModelFile::read(&a.model)?;
    let model = &file.model;
    let trees: Vec<_> = match &a.predictor {
        Some(name) => {
            let j = model
                .predictors
                .iter()
                .position(|p| &p.name == name)
                .ok_or_else(|| CliError::Usage(format!("model has no predictor `{name}`")))?;
            vec![model.tree(j).ok_or_else(|| CliError::Usage(format!("predictor `{name}` has no tree")))?]
        }
        None => model.trees.iter().collect(),
    };
    for t in trees {
        let dot = tree_to_dot(t, &model.predictors);
        match &a.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
                let path = dir.join(format!("tree_{}.dot", file_stem(&model.predictors[t.predictor()].name)));
                std::fs::write(&path, dot).map_err(CliError::io(&path))?;
            }
            None => print!("{dot}"),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    scenario: ScenarioId,
    n: usize,
    sigma: f64,
    rep: usize,
    seed: u64,
    n_perm: usize,
    alpha: f64,
    detection: Detection,
    truth: Truth,
}

/// One simulation cell's settings.
#[derive(Debug, Clone, Copy)]
struct Cell {
    id: ScenarioId,
    n: usize,
    sigma: f64,
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let preset: Preset = a.preset.parse()?;
    let reps = a.reps.unwrap_or(preset.n_reps());
    let n_perm = a.nperm.unwrap_or(preset.n_perm());
    if reps == 0 || n_perm == 0 {
        return Err(CliError::Usage("--reps and --nperm must be at least 1".into()));
    }
    let label = if reps == preset.n_reps() && n_perm == preset.n_perm() { preset.name() } else { "custom" };
    let ids = a.scenario.iter().map(|s| s.parse::<ScenarioId>()).collect::<Result<Vec<_>, _>>()?;
    let (grid_n, grid_sigma) = Preset::grid();
    let mut cells = Vec::new();
    for &id in &ids {
        let ns: Vec<usize> = match (&a.n[..], id) {
            ([], ScenarioId::Illustrative) => vec![400],
            ([], _) => grid_n.to_vec(),
            (ns, _) => ns.to_vec(),
        };
        let sigmas: Vec<f64> = match (&a.sigma[..], id) {
            ([], ScenarioId::Illustrative) => vec![1.0],
            ([], _) => grid_sigma.to_vec(),
            (s, _) => s.to_vec(),
        };
        for &n in &ns {
            for &sigma in &sigmas {
                if n == 0 || !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(CliError::Usage(format!("invalid grid cell n = {n}, sigma = {sigma}")));
                }
                cells.push(Cell { id, n, sigma });
            }
        }
    }
    if let Some(dir) = &a.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let config = FitConfig {
        alpha: a.alpha,
        n_perm,
        ..FitConfig::default()
    };
    config.validate(2)?;

    let mut out = String::from("scenario,n,sigma,metric,value,reps,n_perm,preset,seed\n");
    for cell in cells {
        let spec = ScenarioSpec {
            id: cell.id,
            n: cell.n,
            sigma: cell.sigma,
            n_reps: reps,
            seed: a.seed,
        };
        let results: Vec<(Detection, Truth)> = (0..reps)
            .into_par_iter()
            .map(|rep| run_cached(&spec, rep, &config, a.checkpoint_dir.as_deref()))
            .collect::<Result<_, _>>()?;
        let (detections, truths): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let eval = evaluate_detections(&detections, &truths)?;
        log::info!("scenario {} n={} sigma={}: {:?}", cell.id, cell.n, cell.sigma, eval);
        for (metric, value) in eval.metrics() {
            let value = value.map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(out, "{},{},{},{metric},{value},{reps},{n_perm},{label},{}", cell.id, cell.n, cell.sigma, a.seed);
        }
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    std::fs::write(&a.out, out).map_err(CliError::io(&a.out))
}

fn run_cached(spec: &ScenarioSpec, rep: usize, config: &FitConfig, dir: Option<&Path>) -> Result<(Detection, Truth), CliError> {
    let path = dir.map(|d| d.join(format!("s{}_n{}_sigma{}_rep{}.json", spec.id, spec.n, spec.sigma, rep)));
    if let Some(path) = &path {
        if let Ok(text) = std::fs::read_to_string(path) {
            match serde_json::from_str::<Checkpoint>(&text) {
                Ok(c) if c.seed == spec.seed && c.n_perm == config.n_perm && c.alpha == config.alpha && c.scenario == spec.id && c.n == spec.n && c.sigma == spec.sigma && c.rep == rep => {
                    return Ok((c.detection, c.truth));
                }
                _ => log::warn!("ignoring stale checkpoint {}", path.display()),
            }
        }
    }
    let (model, truth) = run_replicate(spec, rep, config)?;
    let detection = Detection::from_model(&model);
    if let Some(path) = &path {
        let c = Checkpoint {
            scenario: spec.id,
            n: spec.n,
            sigma: spec.sigma,
            rep,
            seed: spec.seed,
            n_perm: config.n_perm,
            alpha: config.alpha,
            detection: detection.clone(),
            truth: truth.clone(),
        };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(&c).expect("checkpoint serializes")).map_err(CliError::io(&tmp))?;
        std::fs::rename(&tmp, path).map_err(CliError::io(path))?;
    }
    Ok((detection, truth))
}
