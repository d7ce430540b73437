use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bwgnn_core::experiments::{run_experiment, EXPERIMENTS};
use bwgnn_core::graph::{Label, Laplacian, LaplacianKind};
use bwgnn_core::io::{load_dataset, report_to_json, save_dataset, Report};
use bwgnn_core::metrics::MetricsReport;
use bwgnn_core::model::{forward, train, Checkpoint, GammaMode, ModelConfig, TrainConfig};
use bwgnn_core::spectral::{delta_s_high, eigendecompose, energy_profile};
use bwgnn_core::split::{split_nodes, SplitSpec};
use bwgnn_core::synth::{generate, SynthSpec};
use bwgnn_core::wavelet::{frequency_response_table, spectral_grid, HeatKernel, Kernel, WaveletBank};
use bwgnn_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "bwgnn", version, about = "Spectral anomaly analysis and Beta wavelet GNNs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Top-level RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory (depends on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    laplacian: Option<LaplacianArg>,
    /// Wavelet order C.
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long = "gamma-mode", global = true, value_enum)]
    gamma_mode: Option<GammaArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LaplacianArg {
    Regular,
    Normalized,
}

impl From<LaplacianArg> for LaplacianKind {
    fn from(v: LaplacianArg) -> Self {
        match v {
            LaplacianArg::Regular => LaplacianKind::Regular,
            LaplacianArg::Normalized => LaplacianKind::Normalized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaArg {
    Inverse,
    PaperLiteral,
    Unit,
}

impl From<GammaArg> for GammaMode {
    fn from(v: GammaArg) -> Self {
        match v {
            GammaArg::Inverse => GammaMode::Inverse,
            GammaArg::PaperLiteral => GammaMode::PaperLiteral,
            GammaArg::Unit => GammaMode::Unit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DropArg {
    Anomalies,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    All,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a SynthSpec JSON file.
    Synth { spec: PathBuf },
    /// Spectral energy profile of one feature, or the S_high shift after dropping nodes.
    Analyze {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        feature: usize,
        /// Restrict to one relation instead of the union of all relations.
        #[arg(long)]
        relation: Option<usize>,
        /// Report the S_high change after dropping these nodes instead of a profile.
        #[arg(long, value_enum)]
        drop: Option<DropArg>,
    },
    /// Frequency responses of a Beta bank and heat kernels as CSV.
    Wavelet {
        /// JSON with optional keys `order`, `taus`, `grid_step`.
        spec: Option<PathBuf>,
    },
    /// Train BWGNN on a dataset; writes checkpoint.json and metrics.json.
    Train {
        dataset: PathBuf,
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        train_ratio: f64,
    },
    /// Score a dataset with a checkpoint.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// `test` re-derives the training split from --seed and --train-ratio.
        #[arg(long, value_enum, default_value = "all")]
        mask: MaskArg,
        #[arg(long, default_value_t = 0.4)]
        train_ratio: f64,
    },
    /// Run a canned experiment.
    Experiment {
        name: String,
        /// Experiment config JSON; omitted keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
            std::fs::write(p, text).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        }
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn emit_report<R: Report>(out: Option<&Path>, report: &R) -> Result<()> {
    emit(out, &report_to_json(report)?)
}

fn labeled_targets(labels: &[Label], mask: &[usize]) -> Vec<bool> {
    mask.iter().map(|&i| labels[i] == Label::Anomalous).collect()
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let seed = g.seed.unwrap_or(0);
    let kind = g.laplacian.map(LaplacianKind::from);
    match cli.command {
        Command::Synth { spec } => {
            let mut spec: SynthSpec = read_json(&spec)?;
            if let Some(s) = g.seed {
                spec.seed = s;
            }
            let graph = generate(&spec)?;
            let dir = g.out.unwrap_or_else(|| PathBuf::from("dataset"));
            let manifest = save_dataset(&graph, "synthetic", &dir)?;
            println!("{}", manifest.display());
        }
        Command::Analyze {
            dataset,
            feature,
            relation,
            drop,
        } => {
            let ds = load_dataset(&dataset)?;
            let graph = ds.graph;
            let kind = kind.unwrap_or(LaplacianKind::Normalized);
            match drop {
                Some(mode) => {
                    let nodes = match mode {
                        DropArg::Anomalies => graph.anomalies(),
                        DropArg::Random => {
                            use rand::SeedableRng;
                            let count = graph.anomalies().len();
                            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                            rand::seq::index::sample(&mut rng, graph.num_nodes(), count).into_vec()
                        }
                    };
                    if nodes.is_empty() {
                        return Err(Error::Invalid("no nodes to drop: dataset has no anomalies".into()));
                    }
                    emit_report(g.out.as_deref(), &delta_s_high(&graph, &nodes, kind, relation)?)?;
                }
                None => {
                    let edges = match relation {
                        Some(r) => graph.relation(r)?.clone(),
                        None => graph.union_edges(),
                    };
                    if feature >= graph.feature_dim() {
                        return Err(Error::IndexOutOfRange {
                            what: "feature",
                            index: feature,
                            limit: graph.feature_dim(),
                        });
                    }
                    let spectrum = eigendecompose(&Laplacian::new(edges, kind)?)?;
                    let x: Vec<f64> = graph.features().column(feature).iter().copied().collect();
                    emit_report(g.out.as_deref(), &energy_profile(&spectrum, &x, None)?)?;
                }
            }
        }
        Command::Wavelet { spec } => {
            #[derive(Deserialize)]
            #[serde(default, deny_unknown_fields)]
            struct BankSpec {
                order: usize,
                taus: Vec<f64>,
                grid_step: f64,
            }
            impl Default for BankSpec {
                fn default() -> Self {
                    Self {
                        order: 2,
                        taus: vec![],
                        grid_step: 0.01,
                    }
                }
            }
            let mut bank: BankSpec = match spec {
                Some(p) => read_json(&p)?,
                None => BankSpec::default(),
            };
            if let Some(c) = g.order {
                bank.order = c;
            }
            if !(bank.grid_step > 0.0 && bank.grid_step <= 2.0) {
                return Err(Error::Invalid("grid_step must lie in (0, 2]".into()));
            }
            let mut kernels: Vec<Kernel> = WaveletBank::new(bank.order)?
                .kernels()
                .iter()
                .copied()
                .map(Kernel::Beta)
                .collect();
            for t in bank.taus {
                kernels.push(Kernel::Heat(HeatKernel::new(t)?));
            }
            let table = frequency_response_table(&kernels, &spectral_grid(bank.grid_step))?;
            emit(g.out.as_deref(), table.to_csv().trim_end())?;
        }
        Command::Train {
            dataset,
            model_config,
            train_config,
            train_ratio,
        } => {
            let graph = load_dataset(&dataset)?.graph;
            let mut mcfg: ModelConfig = match model_config {
                Some(p) => read_json(&p)?,
                None => ModelConfig::default(),
            };
            let mut tcfg: TrainConfig = match train_config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(c) = g.order {
                mcfg.order = c;
            }
            if let Some(s) = g.seed {
                mcfg.seed = s;
            }
            if let Some(m) = g.gamma_mode {
                tcfg.gamma_mode = m.into();
            }
            if matches!(kind, Some(LaplacianKind::Regular)) {
                return Err(Error::RequiresNormalized);
            }
            let split = split_nodes(graph.labels(), &SplitSpec::new(train_ratio, seed))?;
            let outcome = train(&graph, &split, &mcfg, &tcfg)?;
            let pred = forward(&outcome.best_params, &graph, &mcfg)?;
            let y = labeled_targets(graph.labels(), &split.test);
            let s: Vec<f64> = split.test.iter().map(|&i| pred.scores[i]).collect();
            let metrics = MetricsReport::evaluate(&y, &s, outcome.best_threshold)?;

            let dir = g.out.unwrap_or_else(|| PathBuf::from("model"));
            Checkpoint::new(&mcfg, &outcome.best_params, outcome.best_threshold).save(dir.join("checkpoint.json"))?;
            emit_report(Some(&dir.join("metrics.json")), &metrics)?;
            println!("{}", report_to_json(&metrics)?);
        }
        Command::Eval {
            checkpoint,
            dataset,
            mask,
            train_ratio,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let params = ckpt.params()?;
            let graph = load_dataset(&dataset)?.graph;
            let pred = forward(&params, &graph, &ckpt.config)?;
            let nodes: Vec<usize> = match mask {
                MaskArg::All => (0..graph.num_nodes()).filter(|&i| graph.labels()[i].is_labeled()).collect(),
                MaskArg::Test => split_nodes(graph.labels(), &SplitSpec::new(train_ratio, seed))?.test,
            };
            let y = labeled_targets(graph.labels(), &nodes);
            let s: Vec<f64> = nodes.iter().map(|&i| pred.scores[i]).collect();
            emit_report(g.out.as_deref(), &MetricsReport::evaluate(&y, &s, ckpt.threshold)?)?;
        }
        Command::Experiment { name, config } => {
            if !EXPERIMENTS.contains(&name.as_str()) {
                return Err(Error::UnknownExperiment {
                    name,
                    available: EXPERIMENTS.to_vec(),
                });
            }
            let mut cfg: Value = match config {
                Some(p) => read_json(&p)?,
                None => Value::Object(Default::default()),
            };
            apply_overrides(&name, &mut cfg, kind, g.order, g.gamma_mode.map(GammaMode::from))?;
            let output = run_experiment(&name, &cfg, seed)?;
            let dir = g.out.unwrap_or_else(|| PathBuf::from("results"));
            for p in output.write(&dir)? {
                eprintln!("wrote {}", p.display());
            }
            println!("{}", output.report.content_hash);
        }
    }
    Ok(())
}

// Maps the global flags onto the keys each experiment understands.
fn apply_overrides(
    name: &str,
    cfg: &mut Value,
    kind: Option<LaplacianKind>,
    order: Option<usize>,
    gamma: Option<GammaMode>,
) -> Result<()> {
    let obj = cfg
        .as_object_mut()
        .ok_or_else(|| Error::Invalid("experiment config must be a JSON object".into()))?;
    let trains = matches!(name, "order_sweep" | "degree_sweep" | "train_eval");
    if let Some(k) = kind {
        if trains {
            if k != LaplacianKind::Normalized {
                return Err(Error::RequiresNormalized);
            }
        } else {
            obj.insert("laplacian".into(), serde_json::to_value(k)?);
        }
    }
    let training = |obj: &mut serde_json::Map<String, Value>| -> Result<()> {
        let entry = obj
            .entry("training")
            .or_insert_with(|| Value::Object(Default::default()));
        let t = entry
            .as_object_mut()
            .ok_or_else(|| Error::Invalid("`training` must be a JSON object".into()))?;
        if let Some(c) = order {
            t.insert("order".into(), c.into());
        }
        if let Some(m) = gamma {
            t.insert("gamma_mode".into(), serde_json::to_value(m)?);
        }
        Ok(())
    };
    match name {
        "kernel_gallery" => {
            if let Some(c) = order {
                obj.insert("order".into(), c.into());
            }
        }
        "order_sweep" => {
            if let Some(c) = order {
                obj.insert("orders".into(), vec![c].into());
            }
            if gamma.is_some() {
                training(obj)?;
            }
        }
        "degree_sweep" | "train_eval" => training(obj)?,
        _ => {}
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
