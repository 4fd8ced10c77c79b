//! `cofrnet` command-line tool.

// `!(lo < hi)` is used on purpose so that NaN bounds are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cofrnet::series::format_monomial;
use cofrnet::synthetic::{self, lookup, registry, report_csv, report_json, run_suite};
use cofrnet::training::mean_loss;
use cofrnet::{
    encode_poly, ic_model_attribution, init_model, load_csv, load_csv_matching, mape,
    series_report, split, train, verify_encoding, BenchConfig, Error, FeatureMask, FeatureUnits,
    Loss, ModelFile, Result, SparsePoly, Standardization, TargetSpec, Task, TrainConfig, Variant,
    DEFAULT_EPSILON,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "cofrnet",
    version,
    about = "Continued-fraction networks: train, evaluate, interpret, encode, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV dataset and save it as JSON.
    Train(TrainArgs),
    /// Score a saved model on a CSV dataset.
    Eval(EvalArgs),
    /// Attributions and series expansions of a saved model.
    #[command(subcommand)]
    Interpret(InterpretCommand),
    /// Shape function of one feature for diagonal ladders.
    Shape(ShapeArgs),
    /// Encode a polynomial as continued-fraction ladders and verify it.
    Encode(EncodeArgs),
    /// Synthetic-function benchmark against a matched MLP.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    F,
    D,
    Dl,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::F => Variant::F,
            VariantArg::D => Variant::D,
            VariantArg::Dl => Variant::DL,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Target column; every other column is a feature.
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "f")]
    variant: VariantArg,
    /// Comma-separated ladder depths (diagonal depths for d and dl).
    #[arg(long, value_delimiter = ',', default_value = "3")]
    depths: Vec<usize>,
    /// Full ladders: copies of the single depth for f, extra ladders of depth 2, 3, ... for dl.
    #[arg(long, default_value_t = 8)]
    full_ladders: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch loss CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Target column; defaults to the one the model was trained on.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Subcommand)]
enum InterpretCommand {
    /// Exact input gradients through continuants, as CSV.
    Ic(IcArgs),
    /// Truncated power series with ranked terms, as JSON.
    Ips(IpsArgs),
}

#[derive(Args)]
struct IcArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Zero-based row; all rows when omitted.
    #[arg(long)]
    row: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CenterArg {
    Mean,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitsArg {
    Standardized,
    Original,
}

#[derive(Args)]
struct IpsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 4)]
    degree: usize,
    #[arg(long, value_enum, default_value = "zero")]
    center: CenterArg,
    /// Number of ranked terms per output.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Feature coordinates of the series variables.
    #[arg(long, value_enum, default_value = "standardized")]
    units: UnitsArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShapeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature name or zero-based index.
    #[arg(long)]
    feature: String,
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Grid bounds in raw units; default is the mean plus or minus two standard deviations.
    #[arg(long, allow_hyphen_values = true)]
    min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    max: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// JSON file, inline JSON, or text such as `2*x1^2*x2 - 0.5*x2`.
    #[arg(long, allow_hyphen_values = true)]
    poly: String,
    /// Number of random verification points.
    #[arg(long, default_value_t = 1000)]
    verify: usize,
    /// Sampling box `lo,hi` applied to every coordinate.
    #[arg(
        long = "box",
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-1,1"
    )]
    bounds: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated function slugs; all functions when omitted.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    #[arg(
        long,
        alias = "seed",
        value_delimiter = ',',
        default_value = "0,1,2,3,4"
    )]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = BenchConfig::default().restarts)]
    restarts: usize,
    /// CSV report; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional JSON report with per-seed runs.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            report_error("usage", first);
            return ExitCode::FAILURE;
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Interpret(InterpretCommand::Ic(a)) => cmd_ic(a),
        Command::Interpret(InterpretCommand::Ips(a)) => cmd_ips(a),
        Command::Shape(a) => cmd_shape(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn output_names(file: &ModelFile) -> Vec<String> {
    let q = file.model.output_dim();
    if file.task == Task::Classification && file.classes.len() == q {
        file.classes.clone()
    } else if q == 1 && !file.target_name.is_empty() {
        vec![file.target_name.clone()]
    } else {
        (0..q).map(|m| format!("y{}", m + 1)).collect()
    }
}

fn feature_names(file: &ModelFile) -> Vec<String> {
    if file.feature_names.len() == file.model.input_dim() {
        file.feature_names.clone()
    } else {
        (0..file.model.input_dim())
            .map(|j| format!("x{}", j + 1))
            .collect()
    }
}

/// Accuracy, or MSE and MAPE in target units, of `file` on raw rows.
fn score(file: &ModelFile, rows: impl Iterator<Item = (Vec<f64>, f64)>) -> Result<Value> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut correct = 0usize;
    for (x, y) in rows {
        let out = file.predict(&x)?;
        if file.task == Task::Classification {
            let arg = out
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(i, _)| i);
            correct += usize::from(arg as f64 == y);
        } else {
            preds.push(out[0]);
        }
        targets.push(y);
    }
    let n = targets.len();
    if n == 0 {
        return Err(Error::Empty("no rows to score".into()));
    }
    Ok(match file.task {
        Task::Classification => json!({ "n": n, "accuracy": correct as f64 / n as f64 }),
        Task::Regression => {
            let mse = preds
                .iter()
                .zip(&targets)
                .map(|(p, y)| (p - y).powi(2))
                .sum::<f64>()
                / n as f64;
            let mape = mape(&preds, &targets).ok();
            json!({ "n": n, "mse": mse, "mape": mape })
        }
    })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let task: Task = a.task.into();
    let variant: Variant = a.variant.into();
    let data = load_csv(&a.data, &a.target, task)?;
    let (train_set, val_set, test_set) = split(&data, a.seed)?;
    let st = Standardization::fit(&train_set.samples, task);
    let train_std = train_set.standardized_with(&st);
    let val_std = val_set.standardized_with(&st);
    let (q, loss) = match task {
        Task::Regression => (data.samples.target_dim(), Loss::SquaredError),
        Task::Classification => (data.num_classes(), Loss::SoftmaxCrossEntropy),
    };
    let p = data.samples.input_dim();
    let full = match variant {
        Variant::F if a.depths.len() > 1 => 0,
        Variant::D => 0,
        _ => a.full_ladders,
    };
    let init = init_model(variant, p, q, &a.depths, full, a.seed)?;
    let cfg = TrainConfig {
        loss,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        dropout: a.dropout,
        seed: a.seed,
        epsilon: a.epsilon,
        frozen_rows: Vec::new(),
    };
    let val_samples = (!val_std.is_empty()).then_some(&val_std.samples);
    let (model, history) = train(&init, &train_std.samples, val_samples, &cfg)?;
    let train_loss = mean_loss(&model, &train_std.samples, loss)?;

    let mut file = ModelFile::new(model, task);
    file.standardization = Some(st);
    file.classes = data.classes.clone();
    file.feature_names = data.feature_names.clone();
    file.target_name = data.target_name.clone();
    file.save(&a.out)?;
    if let Some(path) = &a.history {
        write_or_print(Some(path), &history.to_csv())?;
    }

    let rows = |d: &cofrnet::Dataset| -> Vec<(Vec<f64>, f64)> {
        (0..d.len())
            .map(|i| (d.samples.input(i).to_vec(), d.samples.target(i)[0]))
            .collect()
    };
    let val = score(&file, rows(&val_set).into_iter())?;
    let test = score(&file, rows(&test_set).into_iter())?;
    let summary = json!({
        "model": a.out.display().to_string(),
        "variant": variant.to_string(),
        "ladders": file.model.num_ladders(),
        "params": file.model.param_count().actual,
        "epochs": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "train_loss": train_loss,
        "val": val,
        "test": test,
    });
    println!("{summary}");
    Ok(())
}

fn load_rows(file: &ModelFile, data: &Path, target: Option<&str>) -> Result<cofrnet::MatchedRows> {
    let features = feature_names(file);
    let spec = target.map(|column| TargetSpec {
        column,
        task: file.task,
        classes: &file.classes,
    });
    load_csv_matching(data, &features, spec)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let target = a.target.unwrap_or_else(|| file.target_name.clone());
    if target.is_empty() {
        return Err(Error::Config(
            "model has no target column name; pass --target".into(),
        ));
    }
    let rows = load_rows(&file, &a.data, Some(&target))?;
    let targets = rows.targets.clone().unwrap_or_default();
    let scored = score(
        &file,
        (0..rows.len()).map(|i| (rows.input(i).to_vec(), targets[i])),
    )?;
    println!("{scored}");
    Ok(())
}

fn cmd_ic(a: IcArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let rows = load_rows(&file, &a.data, None)?;
    let selected: Vec<usize> = match a.row {
        Some(r) if r >= rows.len() => {
            return Err(Error::OutOfRange(format!(
                "row {r} but the data has {} rows",
                rows.len()
            )));
        }
        Some(r) => vec![r],
        None => (0..rows.len()).collect(),
    };
    let features = feature_names(&file);
    let outputs = output_names(&file);
    let mut csv = format!("row,output,{},clamped\n", features.join(","));
    for r in selected {
        let z = file.to_model_coords(rows.input(r));
        let att = ic_model_attribution(&file.model, &z)?;
        for (m, name) in outputs.iter().enumerate() {
            // chain rule back to raw feature and target units
            let out_scale = match &file.standardization {
                Some(Standardization {
                    target_std: Some(sd),
                    ..
                }) => sd[m],
                _ => 1.0,
            };
            let cells: Vec<String> = (0..features.len())
                .map(|j| {
                    let in_scale = file
                        .standardization
                        .as_ref()
                        .map_or(1.0, |st| st.feature_std[j]);
                    (att.get(j, m) * out_scale / in_scale).to_string()
                })
                .collect();
            csv.push_str(&format!("{r},{name},{},{}\n", cells.join(","), att.clamped));
        }
    }
    write_or_print(a.out.as_deref(), &csv)
}

fn cmd_ips(a: IpsArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let p = file.model.input_dim();
    let center = match (a.center, &file.standardization) {
        (CenterArg::Zero, _) => vec![0.0; p],
        (CenterArg::Mean, Some(st)) => st.feature_mean.clone(),
        (CenterArg::Mean, None) => {
            return Err(Error::Config(
                "model stores no feature means; use --center zero".into(),
            ));
        }
    };
    let units = match a.units {
        UnitsArg::Standardized => FeatureUnits::Standardized,
        UnitsArg::Original => FeatureUnits::Original,
    };
    let series = file
        .interpret_series(a.degree, &center, units)
        .map_err(|e| match e {
            Error::SingularExpansion { .. } if matches!(a.center, CenterArg::Zero) => {
                Error::Config(format!("{e}; try --center mean"))
            }
            other => other,
        })?;
    let features = feature_names(&file);
    let outputs: Vec<Value> = series
        .iter()
        .zip(output_names(&file))
        .map(|(s, name)| {
            let report: Vec<Value> = series_report(s, a.top)
                .into_iter()
                .map(|t| {
                    json!({
                        "term": format_monomial(&t.exponents, Some(&features)),
                        "exponents": t.exponents,
                        "coefficient": t.coefficient,
                        "normalized": t.normalized,
                    })
                })
                .collect();
            json!({ "output": name, "series": s.to_export(), "report": report })
        })
        .collect();
    let units_name = match a.units {
        UnitsArg::Standardized => "standardized",
        UnitsArg::Original => "original",
    };
    let doc = json!({
        "degree": a.degree,
        "center": center,
        "units": units_name,
        "features": features,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    write_or_print(a.out.as_deref(), &text)
}

fn resolve_feature(file: &ModelFile, key: &str) -> Result<usize> {
    let names = feature_names(file);
    if let Some(j) = names.iter().position(|n| n == key) {
        return Ok(j);
    }
    match key.parse::<usize>() {
        Ok(j) if j < names.len() => Ok(j),
        Ok(j) => Err(Error::OutOfRange(format!(
            "feature {j} but the model has {} features",
            names.len()
        ))),
        Err(_) => Err(Error::UnknownColumn(key.to_string())),
    }
}

fn cmd_shape(a: ShapeArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let j = resolve_feature(&file, &a.feature)?;
    if !file
        .model
        .ladders()
        .iter()
        .any(|l| l.mask() == FeatureMask::Single(j))
    {
        return Err(Error::Config(format!(
            "model has no diagonal ladder on feature {j}; shape functions need variant d or dl"
        )));
    }
    if a.grid < 2 {
        return Err(Error::Config("grid needs at least 2 points".into()));
    }
    let (mu, sd) = file
        .standardization
        .as_ref()
        .map_or((0.0, 1.0), |st| (st.feature_mean[j], st.feature_std[j]));
    let lo = a.min.unwrap_or(mu - 2.0 * sd);
    let hi = a.max.unwrap_or(mu + 2.0 * sd);
    if !(lo < hi) {
        return Err(Error::Config(format!("empty grid [{lo}, {hi}]")));
    }
    let raw: Vec<f64> = (0..a.grid)
        .map(|i| lo + (hi - lo) * i as f64 / (a.grid - 1) as f64)
        .collect();
    let z: Vec<f64> = raw.iter().map(|x| (x - mu) / sd).collect();
    let outputs = output_names(&file);
    let names = feature_names(&file);
    let columns = (0..outputs.len())
        .map(|m| {
            let scale = match &file.standardization {
                Some(Standardization {
                    target_std: Some(s),
                    ..
                }) => s[m],
                _ => 1.0,
            };
            Ok(file
                .model
                .shape_function(j, m, &z)?
                .into_iter()
                .map(|v| v * scale)
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let header: Vec<String> = outputs.iter().map(|o| format!("f_{o}")).collect();
    let mut csv = format!("{},{}\n", names[j], header.join(","));
    for (i, x) in raw.iter().enumerate() {
        let cells: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
        csv.push_str(&format!("{x},{}\n", cells.join(",")));
    }
    write_or_print(a.out.as_deref(), &csv)
}

fn read_poly(arg: &str) -> Result<SparsePoly> {
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg)?
    } else {
        arg.to_string()
    };
    if text.trim_start().starts_with('{') {
        Ok(serde_json::from_str(&text)?)
    } else {
        SparsePoly::parse(text.trim(), None)
    }
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let poly = read_poly(&a.poly)?;
    let [lo, hi] = a.bounds[..] else {
        return Err(Error::Config("--box takes exactly two values lo,hi".into()));
    };
    let enc = encode_poly(&poly)?;
    let check = verify_encoding(&poly, &enc, a.verify, (lo, hi), a.seed)?;
    if let Some(path) = &a.out {
        let doc = json!({ "input_dim": poly.input_dim()?, "ladders": enc });
        write_or_print(Some(path), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    let summary = json!({
        "ladders": enc.len(),
        "max_error": check.max_relative_error,
        "accepted": check.accepted,
        "rejected": check.rejected,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let functions = if a.only.is_empty() {
        registry()
    } else {
        a.only
            .iter()
            .map(|k| {
                lookup(k.trim())
                    .ok_or_else(|| Error::Config(format!("unknown benchmark function {k:?}")))
            })
            .collect::<Result<Vec<synthetic::SyntheticFn>>>()?
    };
    if a.seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let cfg = BenchConfig {
        restarts: a.restarts,
        ..BenchConfig::default()
    };
    let rows = run_suite(&functions, &a.seeds, &cfg)?;
    write_or_print(a.out.as_deref(), &report_csv(&rows))?;
    if let Some(path) = &a.json {
        write_or_print(Some(path), &report_json(&rows)?)?;
    }
    Ok(())
}
