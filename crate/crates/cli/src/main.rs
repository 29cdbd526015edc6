//! `elr`: featurize, train, link, evaluate and inspect rule-based entity
//! linkers from the command line.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use elr_core::corpus::{self, Dataset, LookupClient, LookupConfig};
use elr_core::eval::{self, EvalReport};
use elr_core::logic::{Mode, ScoringGraph};
use elr_core::ruledsl::{self, RuleAst, TemplateLibrary};
use elr_core::simfeatures::{build_feature_table, FeatureCatalog, FeatureKind, FeatureTable};
use elr_core::training::{train, TrainConfig};
use elr_core::Model;

#[derive(Parser)]
#[command(name = "elr", version, about = "Rule-based entity linking with learnable logic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the feature table of a dataset
    Featurize(FeaturizeArgs),
    /// Fit rule weights and thresholds
    Train(TrainArgs),
    /// Rank candidates with a trained model
    Link(ApplyArgs),
    /// Precision, recall, F1 and recall@k of a model
    Eval(ApplyArgs),
    /// Evaluate a frozen model on another dataset
    Transfer(ApplyArgs),
    /// Train and evaluate one model per template subset
    Ablate(AblateArgs),
    /// Export a model's weight tree
    Inspect(InspectArgs),
    /// Retrieve candidates from a lookup service
    Fetch(FetchArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset in JSONL form
    #[arg(long)]
    data: PathBuf,
    /// Precomputed feature CSV; computed on the fly when absent
    #[arg(long)]
    features: Option<PathBuf>,
    /// Extra score column, NAME=PATH with a mention_id,candidate_id,score CSV
    #[arg(long = "scores", value_name = "NAME=PATH")]
    scores: Vec<String>,
}

#[derive(Args)]
struct RuleArgs {
    /// Rule file, or builtin:NAME for a built-in template
    #[arg(long)]
    rules: String,
    /// Rule to score with when the file defines several top-level rules
    #[arg(long)]
    root: Option<String>,
    #[arg(long, default_value = "lnn")]
    mode: Mode,
}

#[derive(Args)]
struct TrainOpts {
    /// key = value training configuration; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Restrict the table to the features these rules read
    #[arg(long)]
    rules: Option<String>,
    #[arg(long)]
    root: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    rules: RuleArgs,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApplyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cut-offs for recall@k
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Test dataset; without it the data is split
    #[arg(long)]
    test: Option<PathBuf>,
    /// Fraction held out when splitting
    #[arg(long, default_value_t = 0.2)]
    split: f64,
    /// Template subsets, `;`-separated lists of `,`-separated names
    #[arg(long, default_value = "Name;Name,Context;Name,Context,Type;LNN-EL")]
    subsets: String,
    #[arg(long, default_value = "lnn")]
    mode: Mode,
    #[command(flatten)]
    opts: TrainOpts,
    /// CSV, or Markdown when the name ends in .md
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Graphviz output
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Weight tree as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long)]
    endpoint: String,
    /// Surface form to look up; repeatable
    #[arg(long = "surface", required = true)]
    surfaces: Vec<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Entity id prefix to drop; repeatable
    #[arg(long)]
    deny: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad input or usage; exits with status 1.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_status(err: &anyhow::Error) -> u8 {
    use elr_core::Error as E;
    if err.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    match err.downcast_ref::<E>() {
        Some(E::Invalid(_) | E::Syntax(_) | E::Compile(_) | E::CatalogMismatch(_) | E::Malformed { .. }) => 1,
        _ => 2,
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("no such file: {}", path.display())))
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, contents.as_bytes()),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn parse_scores(specs: &[String]) -> Result<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, path)) if !name.is_empty() && !path.is_empty() => {
                let path = PathBuf::from(path);
                require_file(&path)?;
                Ok((name.to_string(), path))
            }
            _ => Err(invalid(format!("--scores expects NAME=PATH, got `{s}`"))),
        })
        .collect()
}

/// Loads the dataset, merges score columns and extends the catalog with them.
fn load_data(args: &DataArgs) -> Result<(Dataset, FeatureCatalog)> {
    require_file(&args.data)?;
    if let Some(f) = &args.features {
        require_file(f)?;
    }
    let scores = parse_scores(&args.scores)?;
    let (mut ds, report) = corpus::load_dataset(&args.data)?;
    log::info!("{}: {report}", args.data.display());
    let mut catalog = FeatureCatalog::default();
    for (name, path) in scores {
        let (merged, report) = corpus::merge_external_scores(ds, &path, &name)?;
        log::info!("{name}: {report:?}");
        ds = merged;
        if catalog.get(&name).is_none() {
            catalog.insert(name.clone(), FeatureKind::External { column: name })?;
        }
    }
    Ok((ds, catalog))
}

fn feature_table(args: &DataArgs, ds: &Dataset, catalog: &FeatureCatalog) -> Result<FeatureTable> {
    match &args.features {
        Some(path) => Ok(FeatureTable::load(path)?),
        None => Ok(build_feature_table(ds, catalog)?),
    }
}

/// The rule program and its root rule.
fn load_rules(spec: &str, root: Option<&str>) -> Result<(Vec<RuleAst>, Option<String>)> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let lib = TemplateLibrary::builtin();
        if lib.get(name).is_none() {
            return Err(invalid(format!("unknown built-in template `{name}` (have {})", lib.names().join(", "))));
        }
        return Ok((lib.program(name)?, Some(root.unwrap_or(name).to_string())));
    }
    let path = Path::new(spec);
    require_file(path)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rules = ruledsl::parse(&text).map_err(|e| invalid(format!("{}:{e}", path.display())))?;
    Ok((rules, root.map(str::to_string)))
}

fn compile(args: &RuleArgs, catalog: &FeatureCatalog, alpha: f64) -> Result<(ScoringGraph<f64>, FeatureCatalog)> {
    let (rules, root) = load_rules(&args.rules, args.root.as_deref())?;
    let graph = ruledsl::compile::<f64>(&rules, catalog, args.mode, alpha, root.as_deref())?;
    let used = catalog.restrict(&graph.features())?;
    Ok((graph, used))
}

fn train_config(opts: &TrainOpts) -> Result<TrainConfig> {
    let mut cfg = match &opts.config {
        Some(p) => {
            require_file(p)?;
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = opts.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = opts.mu {
        cfg.margin = v;
    }
    if let Some(v) = opts.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    if let Some(v) = opts.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = opts.lambda {
        cfg.penalty_lambda = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn featurize(args: FeaturizeArgs) -> Result<()> {
    let (ds, mut catalog) = load_data(&args.data)?;
    if let Some(spec) = &args.rules {
        let (rules, root) = load_rules(spec, args.root.as_deref())?;
        let (_, body) = ruledsl::inline_root(&rules, root.as_deref())?;
        let mut leaves: Vec<String> = Vec::new();
        for l in body.leaves() {
            if !leaves.iter().any(|x| x == l) {
                leaves.push(l.to_string());
            }
        }
        catalog = catalog.restrict(&leaves)?;
    } else if ds.embedding_dim.is_none() {
        let names: Vec<String> = catalog
            .names()
            .filter(|n| !matches!(catalog.get(n), Some(FeatureKind::Box { .. })))
            .map(str::to_string)
            .collect();
        catalog = catalog.restrict(&names)?;
    }
    let table = build_feature_table(&ds, &catalog)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_atomic(&args.out, &buf)?;
    log::info!("{} rows x {} features", table.len(), table.feature_names().len());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let config = train_config(&args.opts)?;
    let (ds, catalog) = load_data(&args.data)?;
    let (graph, used) = compile(&args.rules, &catalog, config.alpha)?;
    let table = feature_table(&args.data, &ds, &used)?;
    let model = train(&ds, &table, graph, &used, &config)?;
    if let Some(last) = model.training_log.last() {
        eprintln!("trained {} epochs: {last}", config.epochs);
    }
    write_atomic(&args.out, model.to_json().as_bytes())
}

fn apply_inputs(args: &ApplyArgs) -> Result<(Model, Dataset, FeatureTable)> {
    require_file(&args.model)?;
    if args.jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }
    let model = Model::load(&args.model)?;
    let (ds, catalog) = load_data(&args.data)?;
    let table = match &args.data.features {
        Some(p) => FeatureTable::load(p)?,
        None => {
            // the model's own catalog, plus any score columns given here
            let mut cat = model.catalog.clone();
            for n in catalog.names() {
                if cat.get(n).is_none() {
                    cat.insert(n, catalog.get(n).cloned().expect("listed"))?;
                }
            }
            build_feature_table(&ds, &cat.restrict(&model.graph.features())?)?
        }
    };
    Ok((model, ds, table))
}

fn link_cmd(args: ApplyArgs) -> Result<()> {
    let (model, ds, table) = apply_inputs(&args)?;
    let preds = eval::link_with_jobs(&model, &ds, &table, args.jobs)?;
    let mut out = String::new();
    for p in &preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)
}

fn write_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    eprintln!("precision {:.4} recall {:.4} F1 {:.4}", report.precision, report.recall, report.f1);
    match out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => write_atomic(p, report.to_csv().as_bytes()),
        _ => emit(out, &report.to_json()),
    }
}

fn eval_cmd(args: ApplyArgs, transfer: bool) -> Result<()> {
    let (model, ds, table) = apply_inputs(&args)?;
    let report = if transfer {
        eval::transfer_eval(&model, &ds, &table, &args.k)?
    } else {
        EvalReport::from_predictions(&eval::link_with_jobs(&model, &ds, &table, args.jobs)?, &ds, &args.k)
    };
    write_report(&report, args.out.as_deref())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let config = train_config(&args.opts)?;
    let subsets: Vec<Vec<String>> = args
        .subsets
        .split(';')
        .map(|s| s.split(',').map(|n| n.trim().to_string()).filter(|n| !n.is_empty()).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    if subsets.is_empty() {
        return Err(invalid("--subsets names no templates"));
    }
    let lib = TemplateLibrary::builtin();
    for name in subsets.iter().flatten() {
        if lib.get(name).is_none() {
            return Err(invalid(format!("unknown template `{name}`")));
        }
    }
    let (ds, catalog) = load_data(&args.data)?;
    let (train_ds, test_ds) = match &args.test {
        Some(p) => {
            require_file(p)?;
            (ds, corpus::load_dataset(p)?.0)
        }
        None => {
            if !(0.0..1.0).contains(&args.split) {
                return Err(invalid(format!("--split {} outside [0, 1)", args.split)));
            }
            ds.split(args.split, config.seed)
        }
    };
    let features: Vec<String> = subsets
        .iter()
        .map(|s| {
            let names: Vec<&str> = s.iter().map(String::as_str).collect();
            let (program, root) = lib.union(&names)?;
            let (_, body) = ruledsl::inline_root(&program, Some(&root))?;
            Ok(body.leaves().into_iter().map(str::to_string).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let used = catalog.restrict(&features)?;
    let train_table = feature_table(&args.data, &train_ds, &used)?;
    let test_table = build_feature_table(&test_ds, &used)?;
    let table = eval::ablation::<f64>(&train_ds, &train_table, &test_ds, &test_table, &lib, &subsets, &used, args.mode, &config)?;
    let text = match &args.out {
        Some(p) if p.extension().is_some_and(|e| e == "md") => table.to_markdown(),
        _ => table.to_csv(),
    };
    emit(args.out.as_deref(), &text)
}

fn inspect(args: InspectArgs) -> Result<()> {
    require_file(&args.model)?;
    let model = Model::load(&args.model)?;
    let doc = eval::export_weights(&model);
    if let Some(p) = &args.dot {
        write_atomic(p, eval::weights_to_dot(&doc).as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&doc)? + "\n";
    match (&args.out, &args.dot) {
        (Some(p), _) => write_atomic(p, json.as_bytes()),
        (None, Some(_)) => Ok(()),
        (None, None) => emit(None, &json),
    }
}

fn fetch(args: FetchArgs) -> Result<()> {
    if args.k == 0 {
        return Err(invalid("--k must be at least 1"));
    }
    let mut config = LookupConfig::new(args.endpoint.clone());
    for d in &args.deny {
        config = config.deny(d.clone());
    }
    let client = LookupClient::new(config)?;
    let surfaces: Vec<&str> = args.surfaces.iter().map(String::as_str).collect();
    let mut out = String::new();
    for (surface, res) in surfaces.iter().zip(client.fetch_many(&surfaces, args.k)) {
        let candidates = res?;
        out.push_str(&serde_json::to_string(&serde_json::json!({ "surface": surface, "candidates": candidates }))?);
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train_cmd(a),
        Command::Link(a) => link_cmd(a),
        Command::Eval(a) => eval_cmd(a, false),
        Command::Transfer(a) => eval_cmd(a, true),
        Command::Ablate(a) => ablate(a),
        Command::Inspect(a) => inspect(a),
        Command::Fetch(a) => fetch(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ELR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
