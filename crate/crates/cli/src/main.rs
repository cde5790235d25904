use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use deformcert::harness::{
    self, default_family, default_scales, parse_scales, presets::parse_scale, ReportOptions,
    SoundnessOptions, SweepSpec, SweepTable,
};
use deformcert::mlp::{write_training_log, Augmentation, WEIGHTS_MAGIC};
use deformcert::oracle::serve_stdio;
use deformcert::{
    CentroidClassifier, Classifier, DeformationKind, DistributionFamily, Error, Label,
    MlpClassifier, OracleClient, OracleConfig, PointCloud, Result, SmoothingConfig,
    TcpOracleServer, TrainConfig, Transport,
};

#[derive(Parser)]
#[command(
    name = "deformcert",
    version,
    about = "Certify point-cloud classifiers against parametric deformations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic shape dataset to a directory.
    Gen(GenArgs),
    /// Fit a classifier on a dataset directory.
    Train(TrainArgs),
    /// Run a certification sweep and write the results table.
    Certify(CertifyArgs),
    /// Print the envelope certified-accuracy curve of a results table.
    Envelope(TableArgs),
    /// Print the summary (ACR, curves) of a results table.
    Report(TableArgs),
    /// Time certification at each smoothing scale.
    Bench(BenchArgs),
    /// Answer label queries for a saved model over tcp or stdio.
    ServeOracle(ServeArgs),
    /// Check certificates empirically at offsets inside the certified ball.
    Soundness(SoundnessArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    per_class: usize,
    #[arg(long, default_value_t = 256)]
    points: usize,
    #[arg(long, default_value_t = 0.01)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// `mlp` or `centroid`.
    #[arg(long, default_value = "mlp")]
    model_type: String,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deformation augmentation, e.g. `rotz:uniform:pi`.
    #[arg(long)]
    augment: Option<String>,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Saved model (MLP weights or centroid JSON).
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    model: Option<PathBuf>,
    /// External classifier: `tcp:HOST:PORT` or `stdio:CMD`.
    #[arg(long)]
    oracle: Option<String>,
    /// Oracle response timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    kind: DeformationKind,
    /// `uniform` or `gaussian`; defaults to uniform for angular kinds.
    #[arg(long)]
    dist: Option<DistributionFamily>,
    /// Comma-separated σ/λ grid; `deg` suffix and `pi/K` accepted.
    #[arg(long)]
    scales: Option<String>,
    #[arg(long, default_value_t = SmoothingConfig::DEFAULT_N0)]
    n0: u64,
    #[arg(long, default_value_t = SmoothingConfig::DEFAULT_N)]
    n: u64,
    #[arg(long, default_value_t = SmoothingConfig::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = SmoothingConfig::DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use only the first K samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Results CSV; a JSON summary is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Write 0 in the `seconds` column so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Also report ACR at these α values (comma-separated) from the same counts.
    #[arg(long)]
    alpha_ablation: Option<String>,
}

#[derive(Args)]
struct TableArgs {
    /// Results CSV written by `certify`.
    #[arg(long)]
    table: PathBuf,
    /// Distribution family the table was produced with.
    #[arg(long)]
    dist: DistributionFamily,
    #[arg(long, default_value_t = harness::curves::SUMMARY_CURVE_POINTS)]
    points: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long)]
    device_note: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    /// `stdio` or `tcp:HOST:PORT`.
    #[arg(long, default_value = "stdio")]
    listen: String,
}

#[derive(Args)]
struct SoundnessArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, default_value_t = 20)]
    offsets: usize,
    #[arg(long, default_value_t = 1000)]
    votes: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<Box<dyn Classifier>> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path)?;
    let is_mlp = f.read_exact(&mut magic).is_ok() && &magic == WEIGHTS_MAGIC;
    if is_mlp {
        Ok(Box::new(MlpClassifier::load_weights(path)?))
    } else {
        Ok(Box::new(CentroidClassifier::load(path)?))
    }
}

fn open_classifier(args: &ModelArgs) -> Result<Box<dyn Classifier>> {
    match (&args.model, &args.oracle) {
        (Some(path), _) => load_model(path),
        (None, Some(t)) => {
            let config = OracleConfig {
                timeout: std::time::Duration::from_secs_f64(args.timeout),
                ..OracleConfig::default()
            };
            Ok(Box::new(OracleClient::connect(&t.parse()?, config)?))
        }
        (None, None) => Err(Error::InvalidArgument("need --model or --oracle".into())),
    }
}

type Prepared = (SweepSpec, Vec<(PointCloud, Label)>, Box<dyn Classifier>);

fn prepare(args: &SweepArgs) -> Result<Prepared> {
    let family = args.dist.unwrap_or_else(|| default_family(args.kind));
    let scales = match &args.scales {
        Some(s) => parse_scales(s)?,
        None => default_scales(args.kind),
    };
    let mut spec = SweepSpec::new(args.kind, family, scales);
    spec.n0 = args.n0;
    spec.n = args.n;
    spec.alpha = args.alpha;
    spec.batch = args.batch;
    spec.base_seed = args.seed;
    spec.validate()?;
    let mut data = harness::load_dataset(&args.data)?;
    if let Some(k) = args.limit {
        data.truncate(k);
    }
    let classifier = open_classifier(&args.model)?;
    Ok((spec, data, classifier))
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => {
            // a closed pipe (e.g. `| head`) is not an error
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn parse_augment(s: &str) -> Result<Augmentation> {
    let parts: Vec<&str> = s.split(':').collect();
    let [kind, dist, scale] = parts[..] else {
        return Err(Error::InvalidArgument(format!(
            "augmentation must look like kind:dist:scale, got `{s}`"
        )));
    };
    let family: DistributionFamily = dist.parse()?;
    Ok(Augmentation {
        kind: kind.parse()?,
        distribution: family.with_scale(parse_scale(scale)?),
    })
}

/// Radii of angular kinds are also shown in degrees.
fn print_summary(table: &SweepTable) {
    let s = harness::summarize(table);
    let deg = table.spec.kind.is_angular() && table.spec.family == DistributionFamily::Uniform;
    eprintln!(
        "{} / {}: {} samples, {} failed rows",
        s.kind, s.distribution, s.samples, s.failures
    );
    for row in &s.per_scale {
        let extra = if deg {
            format!(" ({:.2} deg)", row.acr.to_degrees())
        } else {
            String::new()
        };
        eprintln!(
            "  scale {:<10.5} acc@0 {:.3}  abstain {:.3}  ACR {:.4}{extra}",
            row.scale, row.clean_accuracy, row.abstain_rate, row.acr
        );
    }
    eprintln!("  envelope ACR {:.4}", s.envelope_acr);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let data = harness::synthetic_dataset(a.per_class, a.points, a.jitter, a.seed)?;
            harness::write_dataset(&a.out, &data)?;
            eprintln!("wrote {} clouds to {}", data.len(), a.out.display());
        }
        Command::Train(a) => {
            let data = harness::load_dataset(&a.data)?;
            match a.model_type.as_str() {
                "centroid" => {
                    CentroidClassifier::fit(&data)?.save(&a.out)?;
                }
                "mlp" => {
                    let config = TrainConfig {
                        epochs: a.epochs,
                        learning_rate: a.lr,
                        momentum: a.momentum,
                        batch_size: a.batch_size,
                        seed: a.seed,
                        augmentation: a.augment.as_deref().map(parse_augment).transpose()?,
                    };
                    let (model, log) = deformcert::mlp_train(&data, &config)?;
                    model.save_weights(&a.out)?;
                    if let Some(last) = log.last() {
                        eprintln!(
                            "epoch {}: loss {:.4}, train acc {:.3}",
                            last.epoch, last.loss, last.train_acc
                        );
                    }
                    if let Some(p) = &a.log {
                        write_training_log(&log, BufWriter::new(File::create(p)?))?;
                    }
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "model type must be `mlp` or `centroid`, got `{other}`"
                    )))
                }
            }
            eprintln!("saved {}", a.out.display());
        }
        Command::Certify(a) => {
            let (spec, data, clf) = prepare(&a.sweep)?;
            let table = harness::run_sweep(&spec, &data, &clf)?;
            let opts = ReportOptions {
                include_timing: !a.no_timing,
            };
            let mut w = BufWriter::new(File::create(&a.out)?);
            harness::write_csv(&table, &mut w, opts)?;
            w.flush()?;
            if let Some(p) = &a.jsonl {
                let mut w = BufWriter::new(File::create(p)?);
                harness::write_jsonl(&table, &mut w, opts)?;
                w.flush()?;
            }
            write_json(
                Some(&a.out.with_extension("json")),
                &harness::summarize(&table),
            )?;
            if let Some(list) = &a.alpha_ablation {
                let alphas = list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad alpha `{t}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let report = harness::alpha_ablation_from(&table, &alphas)?;
                write_json(Some(&a.out.with_extension("alpha.json")), &report)?;
                eprintln!(
                    "alpha ablation: ACR spread/mean {:.4}",
                    report.relative_spread()
                );
            }
            print_summary(&table);
        }
        Command::Envelope(a) => {
            let table = harness::read_csv(BufReader::new(File::open(&a.table)?), a.dist)?;
            println!("radius,certified_accuracy");
            for p in harness::envelope(&table).sample(a.points) {
                println!("{},{}", p.radius, p.accuracy);
            }
        }
        Command::Report(a) => {
            let table = harness::read_csv(BufReader::new(File::open(&a.table)?), a.dist)?;
            let mut summary = harness::summarize(&table);
            summary.envelope_curve = harness::envelope(&table).sample(a.points);
            write_json(None, &summary)?;
            print_summary(&table);
        }
        Command::Bench(a) => {
            let (spec, data, clf) = prepare(&a.sweep)?;
            let note = a.device_note.unwrap_or_else(|| {
                let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
                format!(
                    "{} {}, {threads} threads",
                    std::env::consts::OS,
                    std::env::consts::ARCH
                )
            });
            let report = harness::bench(&spec, &data, &clf, a.rounds, &note)?;
            for row in &report.rows {
                eprintln!(
                    "scale {:<10.5} {:.3} s ({:.4} s/sample)",
                    row.scale, row.seconds_median, row.seconds_per_sample
                );
            }
            eprintln!("relative spread {:.3}", report.relative_spread());
            write_json(a.out.as_deref(), &report)?;
        }
        Command::ServeOracle(a) => {
            let model = load_model(&a.model)?;
            match a.listen.parse::<Transport>()? {
                Transport::Stdio(None) => serve_stdio(&model, &OracleConfig::default())?,
                Transport::Tcp(addr) => {
                    let server = TcpOracleServer::spawn(
                        Arc::from(model),
                        addr.as_str(),
                        OracleConfig::default(),
                    )?;
                    eprintln!("listening on {}", server.local_addr());
                    server.join();
                }
                Transport::Stdio(Some(_)) => {
                    return Err(Error::InvalidArgument(
                        "serve with `stdio` or `tcp:HOST:PORT`".into(),
                    ))
                }
            }
        }
        Command::Soundness(a) => {
            let (spec, data, clf) = prepare(&a.sweep)?;
            let options = SoundnessOptions {
                offsets: a.offsets,
                votes: a.votes,
            };
            let report = harness::soundness(&spec, &data, &clf, options)?;
            eprintln!(
                "{} certificates, {} abstentions, {}/{} disagreeing offsets ({:.4})",
                report.certificates,
                report.abstentions,
                report.disagreements,
                report.checks,
                report.failure_fraction()
            );
            write_json(a.out.as_deref(), &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
