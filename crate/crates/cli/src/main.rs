//! `c2m3`: train toy MLPs, match them in weight space, merge, evaluate, and
//! simulate federated aggregation. Every command is deterministic given its
//! flags; JSON outputs carry a provenance block with the invoking arguments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use c2m3_core::evaluation::{
    barrier_curve_csv, barrier_report, cycle_error, pairwise_merge_matrix,
    similarity_csv, similarity_report, MatchSource,
};
use c2m3_core::fedsim::{round_table_csv, run_simulation, Aggregator, FedConfig};
use c2m3_core::matching::{
    coordinate_descent_match, fw_match_multi, fw_match_pair, load_match, save_match,
    InitStrategy, MatchConfig, MatchDocument, MatchMode, UniverseMatch,
};
use c2m3_core::merging::{map_to_universe, merge_many, merge_subset, naive_merge, repair};
use c2m3_core::model::{deserialize, serialize_with_provenance, Dataset, MlpParams};
use c2m3_core::training::{
    load_csv_dataset, make_dataset, train_mlp, DataKind, Split, SyntheticSpec, TrainConfig,
};

type Model = MlpParams<f64>;
type Data = Dataset<f64>;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<c2m3_core::Error> for CliError {
    fn from(e: c2m3_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(name = "c2m3", version, about = "Cycle-consistent multi-model merging of MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an MLP on synthetic or CSV data and write a model bundle.
    Train(TrainArgs),
    /// Match two or more models in weight space and write a permutation set.
    Match(MatchArgs),
    /// Merge models and write the merged bundle.
    Merge(MergeArgs),
    /// Evaluate models: barriers, similarity, CKA, merge matrix, cycle error.
    Eval(EvalArgs),
    /// Simulate federated rounds comparing FedAvg with c2m3 aggregation.
    Fedsim(FedsimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpecKind {
    Blobs,
    Spirals,
}

#[derive(Args)]
struct DataArgs {
    /// Synthetic dataset family (ignored when --data is given).
    #[arg(long, value_enum, default_value = "spirals")]
    spec: SpecKind,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// CSV dataset path overriding the synthetic generator.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
}

impl DataArgs {
    /// Train/test split: synthetic specs split 80/20; a CSV file is used
    /// for both sides.
    fn load(&self) -> Result<Split<f64>> {
        if let Some(path) = &self.data {
            let d = load_csv_dataset::<f64>(path, &self.label_column)?;
            return Ok(Split { train: d.clone(), test: d });
        }
        let spec = SyntheticSpec {
            kind: match self.spec {
                SpecKind::Blobs => DataKind::GaussianBlobs,
                SpecKind::Spirals => DataKind::Spirals,
            },
            n_samples: self.samples,
            n_classes: self.classes,
            input_dim: self.dim,
            noise: self.noise,
            seed: self.data_seed,
        };
        Ok(make_dataset(&spec)?)
    }
}

#[derive(Args)]
struct TrainHyper {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
}

impl TrainHyper {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Layer sizes, e.g. 2,64,64,32,2.
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: TrainHyper,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MatchModeArg {
    Pair,
    Universe,
    CoordDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Identity,
    Barycenter,
    Sinkhorn,
}

#[derive(Args)]
struct MatchArgs {
    /// Model bundle files (two for pair/coord-descent, two or more for
    /// universe).
    #[arg(long, num_args = 2.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "universe")]
    mode: MatchModeArg,
    #[arg(long, value_enum, default_value = "identity")]
    init: InitArg,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop bias terms from the matching objective (weights only).
    #[arg(long)]
    no_bias: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Naive,
    C2m3,
    MergeMany,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "c2m3")]
    strategy: StrategyArg,
    /// Reuse a universe permutation file instead of re-matching.
    #[arg(long)]
    perms: Option<PathBuf>,
    /// Average only these model indices (universe strategies only).
    #[arg(long)]
    subset: Option<String>,
    /// Apply REPAIR renormalization using --data statistics.
    #[arg(long)]
    repair: bool,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportArg {
    Barrier,
    Similarity,
    Cka,
    PerfMatrix,
    CycleError,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    report: ReportArg,
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Universe permutation file; computed with default matching if absent.
    #[arg(long)]
    perms: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    grid: usize,
    #[arg(long, default_value_t = 512)]
    probe_size: usize,
    #[arg(long, default_value_t = 0)]
    probe_seed: u64,
    /// Model index cycle for --report cycle-error, e.g. 0,1,2,0.
    #[arg(long)]
    cycle: Option<String>,
    /// JSON report destination.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV table alongside the JSON report.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AggregatorArg {
    Fedavg,
    C2m3,
    Both,
}

#[derive(Args)]
struct FedsimArgs {
    #[arg(long, default_value_t = 5)]
    clients: usize,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, default_value_t = 5)]
    local_epochs: usize,
    /// Share one initialization across clients in round 1.
    #[arg(long)]
    same_init: bool,
    #[arg(long, value_enum, default_value = "both")]
    aggregator: AggregatorArg,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 0)]
    partition_seed: u64,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: TrainHyper,
    /// Round table CSV; the config echo lands next to it with a .json
    /// extension.
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("invalid --dims {s:?}: expected comma-separated sizes")))?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(usage(format!("invalid --dims {s:?}: need at least two positive sizes")));
    }
    Ok(dims)
}

fn parse_indices(s: &str, flag: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("invalid {flag} {s:?}: expected comma-separated indices")))
}

fn provenance(command: &str, seed: u64) -> serde_json::Value {
    let args: Vec<String> = std::env::args().skip(1).collect();
    serde_json::json!({ "command": command, "seed": seed, "args": args })
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<Model>> {
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            deserialize::<f64>(&bytes)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn model_ids(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn match_config(init: InitArg, max_iters: usize, tol: f64, seed: u64, bias: bool) -> MatchConfig {
    MatchConfig {
        init: match init {
            InitArg::Identity => InitStrategy::Identity,
            InitArg::Barycenter => InitStrategy::Barycenter,
            InitArg::Sinkhorn => InitStrategy::Sinkhorn { seed },
        },
        max_iters,
        rel_tol: tol,
        seed,
        include_bias: bias,
        ..MatchConfig::default()
    }
}

/// Attach extra top-level keys to a serialized JSON document.
fn annotate_json(bytes: &[u8], extra: &[(&str, serde_json::Value)]) -> Result<Vec<u8>> {
    let mut value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Runtime("expected a JSON object".into()))?;
    for (k, v) in extra {
        obj.insert((*k).to_string(), v.clone());
    }
    serde_json::to_vec_pretty(&value).map_err(|e| CliError::Runtime(e.to_string()))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let dims = parse_dims(&args.dims)?;
    let split = args.data.load()?;
    if dims[0] != split.train.feature_dim() || *dims.last().unwrap() != split.train.n_classes {
        return Err(usage(format!(
            "--dims {:?} incompatible with data ({} features, {} classes)",
            args.dims,
            split.train.feature_dim(),
            split.train.n_classes
        )));
    }
    let model = train_mlp(&split.train, &dims, &args.hyper.config(args.seed))?;
    let train_metrics = model.loss_and_accuracy(&split.train)?;
    let test_metrics = model.loss_and_accuracy(&split.test)?;
    write_file(
        &args.out,
        &serialize_with_provenance(&model, provenance("train", args.seed)),
    )?;
    println!(
        "train loss {:.6} acc {:.4} | test loss {:.6} acc {:.4}",
        train_metrics.loss, train_metrics.accuracy, test_metrics.loss, test_metrics.accuracy
    );
    Ok(())
}

fn cmd_match(args: &MatchArgs) -> Result<()> {
    let models = load_models(&args.models)?;
    let ids = model_ids(&args.models);
    let config = match_config(args.init, args.max_iters, args.tol, args.seed, !args.no_bias);
    let (doc, extra) = match args.mode {
        MatchModeArg::Pair => {
            if models.len() != 2 {
                return Err(usage("pair mode takes exactly 2 models"));
            }
            let m = fw_match_pair(&models[0], &models[1], &config)?;
            let extra = vec![("objective", serde_json::json!(m.objective))];
            (MatchDocument::from_pairwise(&m, &ids[0], &ids[1]), extra)
        }
        MatchModeArg::CoordDescent => {
            if models.len() != 2 {
                return Err(usage("coord-descent mode takes exactly 2 models"));
            }
            let m = coordinate_descent_match(&models[0], &models[1], args.seed)?;
            let extra = vec![("objective", serde_json::json!(m.objective))];
            (MatchDocument::from_pairwise(&m, &ids[0], &ids[1]), extra)
        }
        MatchModeArg::Universe => {
            let u = fw_match_multi(&models, &config)?;
            // the factored maps are cycle consistent; report the worst cycle
            let mut worst: f64 = 0.0;
            for p in 0..models.len() {
                for q in 0..models.len() {
                    if p != q {
                        let e = cycle_error(&models, MatchSource::Universe(&u), &[p, q, p])?;
                        worst = worst.max(e);
                    }
                }
            }
            let extra = vec![
                ("objective", serde_json::json!(u.objective)),
                ("cycle_error", serde_json::json!(worst)),
            ];
            (MatchDocument::from_universe(&u, &ids)?, extra)
        }
    };
    let mut annotations = extra;
    annotations.push(("provenance", provenance("match", args.seed)));
    let bytes = annotate_json(&save_match(&doc), &annotations)?;
    write_file(&args.out, &bytes)?;
    Ok(())
}

fn universe_from(
    models: &[Model],
    perms: &Option<PathBuf>,
    config: &MatchConfig,
) -> Result<UniverseMatch> {
    match perms {
        None => Ok(fw_match_multi(models, config)?),
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let doc = load_match(&bytes)?;
            if doc.mode != MatchMode::Universe {
                return Err(CliError::Runtime(format!(
                    "{}: expected a universe permutation file",
                    path.display()
                )));
            }
            if doc.perms.len() != models.len() {
                return Err(CliError::Runtime(format!(
                    "{}: permutations cover {} models, got {}",
                    path.display(),
                    doc.perms.len(),
                    models.len()
                )));
            }
            Ok(UniverseMatch { perms: doc.perms, trace: doc.trace, objective: f64::NAN })
        }
    }
}

fn cmd_merge(args: &MergeArgs) -> Result<()> {
    let models = load_models(&args.models)?;
    let config = match_config(InitArg::Identity, args.max_iters, args.tol, args.seed, true);
    let mut merged = match args.strategy {
        StrategyArg::Naive => {
            if args.subset.is_some() {
                return Err(usage("--subset requires a universe strategy"));
            }
            naive_merge(&models)?
        }
        StrategyArg::MergeMany => {
            if args.subset.is_some() {
                return Err(usage("--subset requires a universe strategy"));
            }
            merge_many(&models, args.seed, args.max_iters)?
        }
        StrategyArg::C2m3 => {
            if models.len() < 2 {
                return Err(usage("c2m3 strategy needs at least 2 models"));
            }
            let matched = universe_from(&models, &args.perms, &config)?;
            match &args.subset {
                None => merge_subset(&models, &matched, &Vec::from_iter(0..models.len()))?,
                Some(s) => merge_subset(&models, &matched, &parse_indices(s, "--subset")?)?,
            }
        }
    };
    let mut repaired_endpoints = false;
    if args.repair {
        let split = args.data.load()?;
        let endpoints: Vec<Model> = match args.strategy {
            StrategyArg::C2m3 => {
                let matched = universe_from(&models, &args.perms, &config)?;
                repaired_endpoints = true;
                models
                    .iter()
                    .zip(&matched.perms)
                    .map(|(m, p)| Ok(map_to_universe(m, p)?))
                    .collect::<Result<_>>()?
            }
            _ => models.clone(),
        };
        merged = repair(&merged, &endpoints, &split.train)?.model;
    }
    let prov = serde_json::json!({
        "command": "merge",
        "seed": args.seed,
        "strategy": format!("{:?}", args.strategy).to_lowercase(),
        "repair": args.repair,
        "repair_endpoints_mapped": repaired_endpoints,
        "models": model_ids(&args.models),
        "args": std::env::args().skip(1).collect::<Vec<String>>(),
    });
    write_file(&args.out, &serialize_with_provenance(&merged, prov))?;
    Ok(())
}

fn probe_batch(data: &Data, size: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size.min(data.features.nrows()).max(1);
    let rows: Vec<usize> =
        (0..n).map(|_| rng.random_range(0..data.features.nrows())).collect();
    data.features.select(ndarray::Axis(0), &rows)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let models = load_models(&args.models)?;
    let split = args.data.load()?;
    let config = match_config(InitArg::Identity, 100, 1e-6, args.probe_seed, true);
    let (report_json, csv_bytes): (serde_json::Value, Option<Vec<u8>>) = match args.report {
        ReportArg::Barrier => {
            if models.len() != 2 {
                return Err(usage("barrier report takes exactly 2 models"));
            }
            let report =
                barrier_report(&models[0], &models[1], &split.train, &split.test, args.grid)?;
            let csv = barrier_curve_csv(&report.test)?;
            (serde_json::to_value(&report).unwrap(), Some(csv))
        }
        ReportArg::Similarity | ReportArg::Cka => {
            if models.len() < 2 {
                return Err(usage("similarity reports need at least 2 models"));
            }
            let matched = universe_from(&models, &args.perms, &config)?;
            let probe = probe_batch(&split.train, args.probe_size, args.probe_seed);
            let report = similarity_report(&models, &matched, &probe)?;
            let csv = similarity_csv(&report)?;
            let csv = if args.report == ReportArg::Cka {
                // keep only the representation rows
                let text = String::from_utf8(csv).expect("csv is utf-8");
                let filtered: Vec<&str> = text
                    .lines()
                    .enumerate()
                    .filter(|(i, l)| *i == 0 || l.split(',').nth(2).is_some_and(|m| m.starts_with("cka")))
                    .map(|(_, l)| l)
                    .collect();
                (filtered.join("\n") + "\n").into_bytes()
            } else {
                csv
            };
            (serde_json::to_value(&report).unwrap(), Some(csv))
        }
        ReportArg::PerfMatrix => {
            if models.len() < 2 {
                return Err(usage("perf-matrix needs at least 2 models"));
            }
            let matched = universe_from(&models, &args.perms, &config)?;
            let table = pairwise_merge_matrix(&models, &matched, &split.test)?;
            (serde_json::to_value(&table).unwrap(), None)
        }
        ReportArg::CycleError => {
            let cycle_str = args
                .cycle
                .as_ref()
                .ok_or_else(|| usage("--report cycle-error requires --cycle"))?;
            let cycle = parse_indices(cycle_str, "--cycle")?;
            let matched = universe_from(&models, &args.perms, &config)?;
            let e = cycle_error(&models, MatchSource::Universe(&matched), &cycle)?;
            (serde_json::json!({ "cycle": cycle, "cycle_error": e }), None)
        }
    };
    let wrapper = serde_json::json!({
        "report": format!("{:?}", args.report).to_lowercase(),
        "models": model_ids(&args.models),
        "data": split.train.name,
        "result": report_json,
        "provenance": provenance("eval", args.probe_seed),
    });
    write_file(&args.out, &serde_json::to_vec_pretty(&wrapper).unwrap())?;
    if let Some(csv) = csv_bytes {
        if let Some(path) = &args.csv {
            write_file(path, &csv)?;
        }
    }
    Ok(())
}

fn cmd_fedsim(args: &FedsimArgs) -> Result<()> {
    if args.clients < 2 {
        return Err(usage("--clients must be at least 2"));
    }
    if args.rounds < 1 {
        return Err(usage("--rounds must be at least 1"));
    }
    let dims = parse_dims(&args.dims)?;
    let split = args.data.load()?;
    let run = |aggregator: Aggregator| -> Result<Vec<u8>> {
        let cfg = FedConfig {
            n_clients: args.clients,
            rounds: args.rounds,
            local_epochs: args.local_epochs,
            same_init: args.same_init,
            aggregator,
            partition_seed: args.partition_seed,
            init_seed: args.init_seed,
            train: args.hyper.config(args.seed),
        };
        let result = run_simulation(&split.train, &split.test, &dims, &cfg)?;
        Ok(round_table_csv(&result.rounds, aggregator)?)
    };
    let mut csv: Vec<u8> = Vec::new();
    match args.aggregator {
        AggregatorArg::Fedavg => csv = run(Aggregator::FedAvg)?,
        AggregatorArg::C2m3 => csv = run(Aggregator::C2m3)?,
        AggregatorArg::Both => {
            let a = run(Aggregator::FedAvg)?;
            let b = run(Aggregator::C2m3)?;
            csv.extend_from_slice(&a);
            // skip the duplicated header line
            let b_text = String::from_utf8(b).expect("csv is utf-8");
            for line in b_text.lines().skip(1) {
                csv.extend_from_slice(line.as_bytes());
                csv.push(b'\n');
            }
        }
    }
    write_file(&args.out, &csv)?;
    let echo = serde_json::json!({
        "clients": args.clients,
        "rounds": args.rounds,
        "local_epochs": args.local_epochs,
        "same_init": args.same_init,
        "aggregator": format!("{:?}", args.aggregator).to_lowercase(),
        "dims": dims,
        "partition_seed": args.partition_seed,
        "init_seed": args.init_seed,
        "provenance": provenance("fedsim", args.seed),
    });
    let echo_path = args.out.with_extension("json");
    write_file(&echo_path, &serde_json::to_vec_pretty(&echo).unwrap())?;
    Ok(())
}

/// Merge `--config <file>` defaults into argv: any key in the JSON object
/// becomes `--key value` unless the flag was given explicitly.
fn merge_config_args(mut argv: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let pos = argv.iter().position(|a| a == "--config");
    let Some(pos) = pos else { return Ok(argv) };
    if pos + 1 >= argv.len() {
        return Err("--config requires a file path".into());
    }
    let path = argv.remove(pos + 1);
    argv.remove(pos);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| format!("{path}: config must be a JSON object"))?;
    for (key, v) in obj {
        let flag = format!("--{key}");
        if argv.contains(&flag) {
            continue;
        }
        match v {
            serde_json::Value::Bool(true) => argv.push(flag),
            serde_json::Value::Bool(false) => {}
            serde_json::Value::Array(items) => {
                argv.push(flag);
                for item in items {
                    argv.push(match item {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    });
                }
            }
            serde_json::Value::String(s) => {
                argv.push(flag);
                argv.push(s.clone());
            }
            other => {
                argv.push(flag);
                argv.push(other.to_string());
            }
        }
    }
    Ok(argv)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match merge_config_args(argv) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Match(a) => cmd_match(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Fedsim(a) => cmd_fedsim(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
