//! Canned experiments. Each one takes a JSON config (missing keys take
//! defaults, unknown keys are rejected) and a single seed from which every
//! RNG is derived, and produces a JSON report plus plot-ready CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, Label, Laplacian, LaplacianKind};
use crate::io::{nullable, NonFinite, Report};
use crate::metrics::MetricsReport;
use crate::model::{train, Aggregation, FilterSpec, GammaMode, ModelConfig, TrainConfig, TrainOutcome};
use crate::spectral::{
    default_bins, delta_s_high, eigendecompose, energy_profile, s_high_fast, validate_prop1, Prop1Config,
};
use crate::split::{split_nodes, SplitSpec};
use crate::synth::{generate, perturb_anomaly_degree, single_gaussian, Gaussian, Perturbation, SynthSpec, Topology};
use crate::wavelet::{
    check_admissibility, frequency_response_table, kernel_moments, spectral_grid, wavelet_apply, HeatKernel, Kernel,
    PassType, WaveletBank,
};

pub const EXPERIMENTS: [&str; 6] = [
    "right_shift",
    "drop_shift",
    "kernel_gallery",
    "order_sweep",
    "degree_sweep",
    "train_eval",
];

/// Config echo, results and a content hash over both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub config: Value,
    pub results: Value,
    pub has_nonfinite: bool,
    /// SHA-256 of the canonical JSON of `name`, `seed`, `config` and `results`.
    pub content_hash: String,
}

impl NonFinite for ExperimentReport {
    fn has_nonfinite(&self) -> bool {
        self.has_nonfinite
    }
}

impl Report for ExperimentReport {
    const KIND: &'static str = "experiment_report";
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub artifacts: Vec<Artifact>,
}

impl ExperimentOutput {
    /// Writes `<name>_report.json` and every CSV into `dir`; returns the paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let report_path = dir.join(format!("{}_report.json", self.report.name));
        crate::io::save_report(&self.report, &report_path)?;
        let mut written = vec![report_path];
        for a in &self.artifacts {
            let p = dir.join(&a.file_name);
            crate::io::write_file(&p, &a.contents)?;
            written.push(p);
        }
        Ok(written)
    }
}

fn content_hash(name: &str, seed: u64, config: &Value, results: &Value) -> Result<String> {
    // serde_json maps are ordered by key, so this text is canonical.
    let text = serde_json::to_string(&serde_json::json!({
        "name": name,
        "seed": seed,
        "config": config,
        "results": results,
    }))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

fn parse_config<C: DeserializeOwned + Default>(config: &Value) -> Result<C> {
    match config {
        Value::Null => Ok(C::default()),
        v => serde_json::from_value(v.clone()).map_err(|e| Error::invalid(format!("invalid experiment config: {e}"))),
    }
}

fn finish<C: Serialize, R: Serialize + NonFinite>(
    name: &str,
    seed: u64,
    config: &C,
    results: &R,
    artifacts: Vec<Artifact>,
) -> Result<ExperimentOutput> {
    let config = serde_json::to_value(config)?;
    let results_value = serde_json::to_value(results)?;
    let content_hash = content_hash(name, seed, &config, &results_value)?;
    Ok(ExperimentOutput {
        report: ExperimentReport {
            name: name.to_string(),
            seed,
            config,
            results: results_value,
            has_nonfinite: results.has_nonfinite(),
            content_hash,
        },
        artifacts,
    })
}

/// Runs a named experiment.
pub fn run_experiment(name: &str, config: &Value, seed: u64) -> Result<ExperimentOutput> {
    info!("experiment {name} (seed {seed})");
    match name {
        "right_shift" => right_shift(&parse_config(config)?, seed),
        "drop_shift" => drop_shift(&parse_config(config)?, seed),
        "kernel_gallery" => kernel_gallery(&parse_config(config)?, seed),
        "order_sweep" => order_sweep(&parse_config(config)?, seed),
        "degree_sweep" => degree_sweep(&parse_config(config)?, seed),
        "train_eval" => train_eval(&parse_config(config)?, seed),
        other => Err(Error::UnknownExperiment {
            name: other.to_string(),
            available: EXPERIMENTS.to_vec(),
        }),
    }
}

/// Independent seed for stream `stream` under the top-level `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(stream))
}

// Stream tags, multiplied out so per-run indices never collide.
const GRAPH: u64 = 1 << 32;
const SPLIT: u64 = 2 << 32;
const MODEL: u64 = 3 << 32;
const DROP: u64 = 4 << 32;
const PERTURB: u64 = 5 << 32;

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn check_positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::invalid(format!("{what} must be at least 1")));
    }
    Ok(())
}

macro_rules! nonfinite_fields {
    ($ty:ty; $($field:ident),*) => {
        impl NonFinite for $ty {
            fn has_nonfinite(&self) -> bool {
                false $(|| self.$field.has_nonfinite())*
            }
        }
    };
}

// ---------------------------------------------------------------- right_shift

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RightShiftConfig {
    pub num_nodes: usize,
    pub ba_edges_per_node: usize,
    pub anomaly_fraction: f64,
    pub sigmas: Vec<f64>,
    pub seeds: usize,
    pub laplacian: LaplacianKind,
    /// Upper end of the low band.
    pub cutoff: f64,
    pub bin_width: f64,
    /// `(mean, std)` pairs for the single-Gaussian signal model.
    pub gaussian_cases: Vec<(f64, f64)>,
    pub gaussian_draws: usize,
    /// Runs the `E[1/eta_k]` monotonicity check when set.
    pub prop1: Option<Prop1Config>,
}

impl Default for RightShiftConfig {
    fn default() -> Self {
        Self {
            num_nodes: 500,
            ba_edges_per_node: 3,
            anomaly_fraction: 0.05,
            sigmas: vec![1.0, 2.0, 5.0, 20.0],
            seeds: 50,
            laplacian: LaplacianKind::Normalized,
            cutoff: 0.5,
            bin_width: 0.25,
            gaussian_cases: vec![(1.0, 1.0), (0.5, 1.0), (1.0, 2.0)],
            gaussian_draws: 200,
            prop1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaShift {
    pub sigma: f64,
    #[serde(with = "nullable")]
    pub low_share_mean: f64,
    #[serde(with = "nullable")]
    pub s_high_mean: f64,
    #[serde(with = "nullable::vec")]
    pub histogram_mean: Vec<f64>,
}
nonfinite_fields!(SigmaShift; low_share_mean, s_high_mean, histogram_mean);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCase {
    pub mean: f64,
    pub std: f64,
    #[serde(with = "nullable")]
    pub s_high_mean: f64,
}
nonfinite_fields!(GaussianCase; s_high_mean);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightShiftResults {
    pub bin_edges: Vec<f64>,
    pub per_sigma: Vec<SigmaShift>,
    /// Low-band share strictly decreases along `sigmas`.
    pub low_share_decreasing: bool,
    pub gaussian_cases: Vec<GaussianCase>,
    pub prop1: Option<crate::spectral::MonotonicityReport>,
}

impl NonFinite for RightShiftResults {
    fn has_nonfinite(&self) -> bool {
        self.per_sigma.has_nonfinite()
            || self.gaussian_cases.has_nonfinite()
            || self.prop1.as_ref().is_some_and(NonFinite::has_nonfinite)
    }
}

fn right_shift(cfg: &RightShiftConfig, seed: u64) -> Result<ExperimentOutput> {
    check_positive("seeds", cfg.seeds)?;
    if cfg.sigmas.is_empty() {
        return Err(Error::invalid("sigmas must not be empty"));
    }
    if !(cfg.bin_width > 0.0) {
        return Err(Error::invalid("bin_width must be positive"));
    }
    let spec = |sigma: f64, s: usize| {
        SynthSpec::ba_gaussian(
            cfg.num_nodes,
            cfg.ba_edges_per_node,
            cfg.anomaly_fraction,
            sigma,
            1,
            derive_seed(seed, GRAPH + s as u64),
        )
    };
    // Topology and anomaly set depend only on the seed, so every sigma
    // reuses one eigendecomposition per seed and the same standard normal draws.
    let per_seed: Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let base = generate(&spec(cfg.sigmas[0], s))?;
            let lap = Laplacian::new(base.relations()[0].clone(), cfg.laplacian)?;
            let spectrum = eigendecompose(&lap)?;
            let mut energies = Vec::new();
            let mut s_high = Vec::new();
            for &sigma in &cfg.sigmas {
                let g = generate(&spec(sigma, s))?;
                let x: Vec<f64> = g.features().column(0).iter().copied().collect();
                let profile = energy_profile(&spectrum, &x, Some(&[0.0, f64::MAX]))?;
                energies.push(profile.energy);
                s_high.push(profile.s_high);
            }
            Ok((spectrum.eigenvalues().to_vec(), energies, s_high))
        })
        .collect::<Result<_>>()?;

    let lam_max = per_seed
        .iter()
        .map(|(l, _, _)| *l.last().unwrap())
        .fold(0.0, f64::max);
    let upper = match cfg.laplacian {
        LaplacianKind::Normalized => lam_max.max(2.0),
        LaplacianKind::Regular => lam_max,
    };
    let edges = default_bins(upper, cfg.bin_width);
    let nbins = edges.len() - 1;

    let per_sigma: Vec<SigmaShift> = cfg
        .sigmas
        .iter()
        .enumerate()
        .map(|(si, &sigma)| {
            let mut hist = vec![0.0; nbins];
            let mut low = 0.0;
            let mut area = 0.0;
            for (lams, energies, s_high) in &per_seed {
                for (&lam, &e) in lams.iter().zip(&energies[si]) {
                    let bin = edges[1..].partition_point(|&edge| edge <= lam).min(nbins - 1);
                    hist[bin] += e;
                    if lam < cfg.cutoff {
                        low += e;
                    }
                }
                area += s_high[si];
            }
            let k = cfg.seeds as f64;
            SigmaShift {
                sigma,
                low_share_mean: low / k,
                s_high_mean: area / k,
                histogram_mean: hist.into_iter().map(|m| m / k).collect(),
            }
        })
        .collect();
    let shares: Vec<f64> = per_sigma.iter().map(|p| p.low_share_mean).collect();

    let topology = Topology::BarabasiAlbert {
        n: cfg.num_nodes,
        m: cfg.ba_edges_per_node,
    };
    let gaussian_cases = cfg
        .gaussian_cases
        .iter()
        .map(|&(mu, std)| {
            let values: Vec<f64> = (0..cfg.gaussian_draws.max(1))
                .into_par_iter()
                .map(|d| {
                    // Same graph and draw index across cases.
                    let g = single_gaussian(&topology, Gaussian::new(mu, std), 1, derive_seed(seed, GRAPH + d as u64))?;
                    let lap = Laplacian::new(g.relations()[0].clone(), cfg.laplacian)?;
                    let x: Vec<f64> = g.features().column(0).iter().copied().collect();
                    s_high_fast(&lap, &x)
                })
                .collect::<Result<_>>()?;
            Ok(GaussianCase {
                mean: mu,
                std,
                s_high_mean: mean(&values),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let prop1 = match &cfg.prop1 {
        Some(p) => Some(validate_prop1(&Prop1Config {
            seed: derive_seed(seed, MODEL),
            graph_seed: derive_seed(seed, GRAPH + u32::MAX as u64),
            ..p.clone()
        })?),
        None => None,
    };

    let results = RightShiftResults {
        bin_edges: edges.clone(),
        low_share_decreasing: strictly_decreasing(&shares),
        per_sigma,
        gaussian_cases,
        prop1,
    };

    let mut hist_csv = String::from("sigma,bin_lo,bin_hi,energy_mean\n");
    let mut share_csv = String::from("sigma,low_share_mean,s_high_mean\n");
    for p in &results.per_sigma {
        for (b, m) in p.histogram_mean.iter().enumerate() {
            writeln!(hist_csv, "{},{},{},{}", p.sigma, edges[b], edges[b + 1], m).unwrap();
        }
        writeln!(share_csv, "{},{},{}", p.sigma, p.low_share_mean, p.s_high_mean).unwrap();
    }
    let artifacts = vec![
        Artifact {
            file_name: "right_shift_histogram.csv".into(),
            contents: hist_csv,
        },
        Artifact {
            file_name: "right_shift_share.csv".into(),
            contents: share_csv,
        },
    ];
    finish("right_shift", seed, cfg, &results, artifacts)
}

// ----------------------------------------------------------------- drop_shift

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropShiftConfig {
    pub num_nodes: usize,
    pub ba_edges_per_node: usize,
    pub anomaly_fraction: f64,
    pub sigma: f64,
    pub feature_dim: usize,
    pub seeds: usize,
    pub laplacian: LaplacianKind,
}

impl Default for DropShiftConfig {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            ba_edges_per_node: 3,
            anomaly_fraction: 0.05,
            sigma: 5.0,
            feature_dim: 8,
            seeds: 20,
            laplacian: LaplacianKind::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRun {
    pub seed_index: usize,
    #[serde(with = "nullable")]
    pub drop_anomaly: f64,
    #[serde(with = "nullable")]
    pub drop_random: f64,
}
nonfinite_fields!(DropRun; drop_anomaly, drop_random);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropShiftResults {
    pub runs: Vec<DropRun>,
    #[serde(with = "nullable")]
    pub mean_drop_anomaly: f64,
    #[serde(with = "nullable")]
    pub mean_drop_random: f64,
    /// Dropping anomalies lowers the high-frequency area.
    pub anomaly_decreases: bool,
    /// Random drops move it less than anomaly drops.
    pub random_smaller: bool,
}
nonfinite_fields!(DropShiftResults; runs, mean_drop_anomaly, mean_drop_random);

fn drop_shift(cfg: &DropShiftConfig, seed: u64) -> Result<ExperimentOutput> {
    check_positive("seeds", cfg.seeds)?;
    let runs: Vec<DropRun> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let g = generate(&SynthSpec::ba_gaussian(
                cfg.num_nodes,
                cfg.ba_edges_per_node,
                cfg.anomaly_fraction,
                cfg.sigma,
                cfg.feature_dim,
                derive_seed(seed, GRAPH + s as u64),
            ))?;
            let anomalies = g.anomalies();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DROP + s as u64));
            let random: Vec<usize> = sample(&mut rng, g.num_nodes(), anomalies.len()).into_vec();
            Ok(DropRun {
                seed_index: s,
                drop_anomaly: delta_s_high(&g, &anomalies, cfg.laplacian, None)?.mean_delta,
                drop_random: delta_s_high(&g, &random, cfg.laplacian, None)?.mean_delta,
            })
        })
        .collect::<Result<_>>()?;
    let a: Vec<f64> = runs.iter().map(|r| r.drop_anomaly).collect();
    let r: Vec<f64> = runs.iter().map(|r| r.drop_random).collect();
    let (ma, mr) = (mean(&a), mean(&r));
    let mut csv = String::from("seed_index,drop_anomaly,drop_random\n");
    for run in &runs {
        writeln!(csv, "{},{},{}", run.seed_index, run.drop_anomaly, run.drop_random).unwrap();
    }
    let results = DropShiftResults {
        runs,
        mean_drop_anomaly: ma,
        mean_drop_random: mr,
        anomaly_decreases: ma < 0.0,
        random_smaller: mr.abs() < ma.abs(),
    };
    let artifacts = vec![Artifact {
        file_name: "drop_shift.csv".into(),
        contents: csv,
    }];
    finish("drop_shift", seed, cfg, &results, artifacts)
}

// ------------------------------------------------------------- kernel_gallery

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelGalleryConfig {
    pub order: usize,
    pub taus: Vec<f64>,
    pub grid_step: f64,
    pub knn_nodes: usize,
    pub knn_k: usize,
    /// Node receiving the one-hot impulse.
    pub impulse_node: usize,
    pub laplacian: LaplacianKind,
}

impl Default for KernelGalleryConfig {
    fn default() -> Self {
        Self {
            order: 4,
            taus: vec![1.0, 3.0, 5.0, 10.0],
            grid_step: 0.01,
            knn_nodes: 100,
            knn_k: 5,
            impulse_node: 0,
            laplacian: LaplacianKind::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryKernel {
    pub kernel_id: String,
    pub argmax: f64,
    pub pass_type: PassType,
    pub admissible: Option<bool>,
    #[serde(with = "nullable")]
    pub response_min: f64,
    #[serde(with = "nullable")]
    pub response_max: f64,
    /// Impulse response has entries of both signs (beyond rounding).
    pub mixed_signs: bool,
}
nonfinite_fields!(GalleryKernel; response_min, response_max);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelGalleryResults {
    pub kernels: Vec<GalleryKernel>,
    pub beta_low_pass: usize,
    pub beta_band_pass: usize,
    pub heat_all_low_pass: bool,
    pub some_beta_mixed_signs: bool,
    pub heat_all_nonnegative: bool,
    /// Entries with magnitude below this fraction of the largest are rounding noise.
    pub sign_tolerance: f64,
    pub moments: Vec<(String, f64, f64)>,
}
nonfinite_fields!(KernelGalleryResults; kernels);

const SIGN_TOL: f64 = 1e-12;

fn kernel_gallery(cfg: &KernelGalleryConfig, seed: u64) -> Result<ExperimentOutput> {
    let bank = WaveletBank::new(cfg.order)?;
    let heat: Vec<HeatKernel> = cfg.taus.iter().map(|&t| HeatKernel::new(t)).collect::<Result<_>>()?;
    let mut kernels: Vec<Kernel> = bank.kernels().iter().copied().map(Kernel::Beta).collect();
    kernels.extend(heat.iter().copied().map(Kernel::Heat));
    if !(cfg.grid_step > 0.0 && cfg.grid_step <= 2.0) {
        return Err(Error::invalid("grid_step must lie in (0, 2]"));
    }
    let table = frequency_response_table(&kernels, &spectral_grid(cfg.grid_step))?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, GRAPH));
    let knn = Topology::Knn {
        n: cfg.knn_nodes,
        k: cfg.knn_k,
        point_dim: 2,
    }
    .build(&mut rng)?;
    if cfg.impulse_node >= cfg.knn_nodes {
        return Err(Error::IndexOutOfRange {
            what: "impulse node",
            index: cfg.impulse_node,
            limit: cfg.knn_nodes,
        });
    }
    let lap = Laplacian::new(knn, cfg.laplacian)?;
    let mut impulse = vec![0.0; cfg.knn_nodes];
    impulse[cfg.impulse_node] = 1.0;
    let mut responses: Vec<Vec<f64>> = bank
        .kernels()
        .iter()
        .map(|k| wavelet_apply(k, &lap, &impulse))
        .collect::<Result<_>>()?;
    let spectrum = eigendecompose(&lap)?;
    let delta = DMatrix::from_column_slice(cfg.knn_nodes, 1, &impulse);
    for h in &heat {
        responses.push(h.apply_columns(&spectrum, &delta)?.column(0).iter().copied().collect());
    }

    let gallery: Vec<GalleryKernel> = table
        .kernels
        .iter()
        .zip(&kernels)
        .zip(&responses)
        .map(|((row, k), resp)| {
            let max_abs = resp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let tol = SIGN_TOL * max_abs;
            let pos = resp.iter().any(|&v| v > tol);
            let neg = resp.iter().any(|&v| v < -tol);
            GalleryKernel {
                kernel_id: row.kernel_id.clone(),
                argmax: row.argmax,
                pass_type: row.pass_type,
                admissible: match k {
                    Kernel::Beta(b) => Some(check_admissibility(b).pass),
                    Kernel::Heat(_) => None,
                },
                response_min: resp.iter().copied().fold(f64::INFINITY, f64::min),
                response_max: resp.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mixed_signs: pos && neg,
            }
        })
        .collect();
    let nb = bank.kernels().len();
    let (beta, heat_rows) = gallery.split_at(nb);
    let results = KernelGalleryResults {
        beta_low_pass: beta.iter().filter(|k| k.pass_type == PassType::LowPass).count(),
        beta_band_pass: beta.iter().filter(|k| k.pass_type == PassType::BandPass).count(),
        heat_all_low_pass: heat_rows.iter().all(|k| k.pass_type == PassType::LowPass),
        some_beta_mixed_signs: beta.iter().any(|k| k.mixed_signs),
        heat_all_nonnegative: heat_rows.iter().all(|k| !k.mixed_signs && k.response_max > 0.0),
        sign_tolerance: SIGN_TOL,
        moments: bank
            .kernels()
            .iter()
            .map(|k| {
                let m = kernel_moments(k);
                (k.id(), m.mean, m.variance)
            })
            .collect(),
        kernels: gallery,
    };

    let mut impulse_csv = String::from("kernel_id,node,value\n");
    for (row, resp) in table.kernels.iter().zip(&responses) {
        for (i, v) in resp.iter().enumerate() {
            writeln!(impulse_csv, "{},{i},{v}", row.kernel_id).unwrap();
        }
    }
    let artifacts = vec![
        Artifact {
            file_name: "kernel_gallery_response.csv".into(),
            contents: table.to_csv(),
        },
        Artifact {
            file_name: "kernel_gallery_impulse.csv".into(),
            contents: impulse_csv,
        },
    ];
    finish("kernel_gallery", seed, cfg, &results, artifacts)
}

// ---------------------------------------------------------- training helpers

/// Training knobs shared by the model experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub order: usize,
    pub agg: Aggregation,
    pub gamma_mode: GammaMode,
    pub train_ratio: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            hidden_dim: 64,
            order: 2,
            agg: Aggregation::Concat,
            gamma_mode: GammaMode::Inverse,
            train_ratio: 0.4,
        }
    }
}

impl TrainSettings {
    fn model(&self, filter: FilterSpec, seed: u64) -> ModelConfig {
        ModelConfig {
            order: self.order,
            hidden_dim: self.hidden_dim,
            agg: self.agg,
            filter,
            seed,
            ..ModelConfig::default()
        }
    }

    fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            gamma_mode: self.gamma_mode,
            ..TrainConfig::default()
        }
    }
}

/// Trains on `g` and scores the test split at the selected threshold.
pub fn fit_and_test(
    g: &Graph,
    split_seed: u64,
    mcfg: &ModelConfig,
    settings: &TrainSettings,
) -> Result<(MetricsReport, TrainOutcome)> {
    let split = split_nodes(g.labels(), &SplitSpec::new(settings.train_ratio, split_seed))?;
    let outcome = train(g, &split, mcfg, &settings.train())?;
    let pred = crate::model::forward(&outcome.best_params, g, mcfg)?;
    let y: Vec<bool> = split.test.iter().map(|&i| g.labels()[i] == Label::Anomalous).collect();
    let s: Vec<f64> = split.test.iter().map(|&i| pred.scores[i]).collect();
    let report = MetricsReport::evaluate(&y, &s, outcome.best_threshold)?;
    Ok((report, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub seed_index: usize,
    pub best_epoch: usize,
    pub test: MetricsReport,
}
nonfinite_fields!(RunResult; test);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    #[serde(with = "nullable")]
    pub median_f1_macro: f64,
    #[serde(with = "nullable")]
    pub median_auc: f64,
}
nonfinite_fields!(Summary; median_f1_macro, median_auc);

fn summarize(label: &str, runs: &[RunResult]) -> Summary {
    let mine: Vec<&RunResult> = runs.iter().filter(|r| r.label == label).collect();
    Summary {
        label: label.to_string(),
        median_f1_macro: median(&mine.iter().map(|r| r.test.f1_macro).collect::<Vec<_>>()),
        median_auc: median(&mine.iter().map(|r| r.test.auc).collect::<Vec<_>>()),
    }
}

fn runs_csv(runs: &[RunResult]) -> String {
    let mut csv = String::from("label,seed_index,best_epoch,threshold,f1_macro,auc\n");
    for r in runs {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.label, r.seed_index, r.best_epoch, r.test.threshold, r.test.f1_macro, r.test.auc
        )
        .unwrap();
    }
    csv
}

fn summary_csv(summaries: &[Summary]) -> String {
    let mut csv = String::from("label,median_f1_macro,median_auc\n");
    for s in summaries {
        writeln!(csv, "{},{},{}", s.label, s.median_f1_macro, s.median_auc).unwrap();
    }
    csv
}

/// Synthetic BA dataset shared by the model experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSettings {
    pub num_nodes: usize,
    pub ba_edges_per_node: usize,
    pub feature_dim: usize,
    pub anomaly_fraction: f64,
    pub sigma: f64,
}

impl Default for GraphSettings {
    fn default() -> Self {
        Self {
            num_nodes: 2000,
            ba_edges_per_node: 3,
            feature_dim: 8,
            anomaly_fraction: 0.05,
            sigma: 5.0,
        }
    }
}

impl GraphSettings {
    fn generate(&self, seed: u64) -> Result<Graph> {
        generate(&SynthSpec::ba_gaussian(
            self.num_nodes,
            self.ba_edges_per_node,
            self.anomaly_fraction,
            self.sigma,
            self.feature_dim,
            seed,
        ))
    }
}

// ---------------------------------------------------------------- order_sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderSweepConfig {
    pub orders: Vec<usize>,
    pub seeds: usize,
    pub graph: GraphSettings,
    pub training: TrainSettings,
}

impl Default for OrderSweepConfig {
    fn default() -> Self {
        Self {
            orders: vec![1, 2, 3, 4, 5],
            seeds: 3,
            graph: GraphSettings {
                num_nodes: 1000,
                ba_edges_per_node: 8,
                sigma: 3.0,
                ..GraphSettings::default()
            },
            training: TrainSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub runs: Vec<RunResult>,
    pub summary: Vec<Summary>,
    /// Median F1-macro never drops along the sweep.
    pub f1_nondecreasing: bool,
}
nonfinite_fields!(SweepResults; runs, summary);

fn order_sweep(cfg: &OrderSweepConfig, seed: u64) -> Result<ExperimentOutput> {
    check_positive("seeds", cfg.seeds)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds)
        .flat_map(|s| cfg.orders.iter().map(move |&c| (s, c)))
        .collect();
    let runs: Vec<RunResult> = jobs
        .into_par_iter()
        .map(|(s, c)| {
            let g = cfg.graph.generate(derive_seed(seed, GRAPH + s as u64))?;
            let mcfg = TrainSettings { order: c, ..cfg.training.clone() }
                .model(FilterSpec::Beta, derive_seed(seed, MODEL + s as u64));
            let (test, outcome) = fit_and_test(&g, derive_seed(seed, SPLIT + s as u64), &mcfg, &cfg.training)?;
            Ok(RunResult {
                label: format!("C={c}"),
                seed_index: s,
                best_epoch: outcome.best_epoch,
                test,
            })
        })
        .collect::<Result<_>>()?;
    let summary: Vec<Summary> = cfg.orders.iter().map(|c| summarize(&format!("C={c}"), &runs)).collect();
    let f1: Vec<f64> = summary.iter().map(|s| s.median_f1_macro).collect();
    let artifacts = vec![
        Artifact {
            file_name: "order_sweep_runs.csv".into(),
            contents: runs_csv(&runs),
        },
        Artifact {
            file_name: "order_sweep_summary.csv".into(),
            contents: summary_csv(&summary),
        },
    ];
    let results = SweepResults {
        runs,
        f1_nondecreasing: nondecreasing(&f1),
        summary,
    };
    finish("order_sweep", seed, cfg, &results, artifacts)
}

// --------------------------------------------------------------- degree_sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegreeSweepConfig {
    /// Anomaly spread multipliers.
    pub factors: Vec<f64>,
    /// Extra anomaly fractions injected into the base graph.
    pub fractions: Vec<f64>,
    pub seeds: usize,
    pub graph: GraphSettings,
    pub training: TrainSettings,
}

impl Default for DegreeSweepConfig {
    fn default() -> Self {
        Self {
            factors: vec![1.0, 2.0, 4.0],
            fractions: vec![],
            seeds: 5,
            graph: GraphSettings {
                num_nodes: 1000,
                sigma: 1.5,
                ..GraphSettings::default()
            },
            training: TrainSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeSweepResults {
    pub sigma: SweepResults,
    pub fraction: Option<SweepResults>,
}

impl NonFinite for DegreeSweepResults {
    fn has_nonfinite(&self) -> bool {
        self.sigma.has_nonfinite() || self.fraction.as_ref().is_some_and(NonFinite::has_nonfinite)
    }
}

fn degree_sweep(cfg: &DegreeSweepConfig, seed: u64) -> Result<ExperimentOutput> {
    check_positive("seeds", cfg.seeds)?;
    let modes: Vec<(String, Perturbation)> = cfg
        .factors
        .iter()
        .map(|&f| (format!("scale={f}"), Perturbation::ScaleSigma(f)))
        .chain(
            cfg.fractions
                .iter()
                .map(|&a| (format!("inject={a}"), Perturbation::InjectFraction(a))),
        )
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds).flat_map(|s| (0..modes.len()).map(move |m| (s, m))).collect();
    let runs: Vec<RunResult> = jobs
        .into_par_iter()
        .map(|(s, m)| {
            let base = cfg.graph.generate(derive_seed(seed, GRAPH + s as u64))?;
            let g = perturb_anomaly_degree(&base, modes[m].1, derive_seed(seed, PERTURB + s as u64))?;
            let mcfg = cfg.training.model(FilterSpec::Beta, derive_seed(seed, MODEL + s as u64));
            let (test, outcome) = fit_and_test(&g, derive_seed(seed, SPLIT + s as u64), &mcfg, &cfg.training)?;
            Ok(RunResult {
                label: modes[m].0.clone(),
                seed_index: s,
                best_epoch: outcome.best_epoch,
                test,
            })
        })
        .collect::<Result<_>>()?;
    let sweep = |prefix: &str| {
        let picked: Vec<RunResult> = runs.iter().filter(|r| r.label.starts_with(prefix)).cloned().collect();
        let summary: Vec<Summary> = modes
            .iter()
            .filter(|(l, _)| l.starts_with(prefix))
            .map(|(l, _)| summarize(l, &picked))
            .collect();
        let f1: Vec<f64> = summary.iter().map(|s| s.median_f1_macro).collect();
        SweepResults {
            runs: picked,
            f1_nondecreasing: nondecreasing(&f1),
            summary,
        }
    };
    let sigma = sweep("scale=");
    let fraction = (!cfg.fractions.is_empty()).then(|| sweep("inject="));
    let mut all_summary = sigma.summary.clone();
    if let Some(f) = &fraction {
        all_summary.extend(f.summary.iter().cloned());
    }
    let artifacts = vec![
        Artifact {
            file_name: "degree_sweep_runs.csv".into(),
            contents: runs_csv(&runs),
        },
        Artifact {
            file_name: "degree_sweep_summary.csv".into(),
            contents: summary_csv(&all_summary),
        },
    ];
    finish("degree_sweep", seed, cfg, &DegreeSweepResults { sigma, fraction }, artifacts)
}

// ----------------------------------------------------------------- train_eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainEvalConfig {
    pub seeds: usize,
    pub graph: GraphSettings,
    pub training: TrainSettings,
    /// Scales of the heat-kernel bank that replaces the Beta wavelets in the ablation.
    pub heat_taus: Vec<f64>,
}

impl Default for TrainEvalConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            graph: GraphSettings::default(),
            training: TrainSettings::default(),
            heat_taus: vec![1.0, 3.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEvalResults {
    pub runs: Vec<RunResult>,
    pub bwgnn: Summary,
    pub heat: Summary,
    #[serde(with = "nullable")]
    pub auc_gap: f64,
    /// Per-epoch `(epoch, loss, val_f1)` of the first BWGNN run.
    pub history: Vec<(usize, f64, f64)>,
}
nonfinite_fields!(TrainEvalResults; runs, bwgnn, heat, auc_gap);

fn train_eval(cfg: &TrainEvalConfig, seed: u64) -> Result<ExperimentOutput> {
    check_positive("seeds", cfg.seeds)?;
    let filters = [
        ("bwgnn", FilterSpec::Beta),
        (
            "heat",
            FilterSpec::Heat {
                taus: cfg.heat_taus.clone(),
            },
        ),
    ];
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds).flat_map(|s| [(s, 0), (s, 1)]).collect();
    let outcomes: Vec<(RunResult, Vec<(usize, f64, f64)>)> = jobs
        .into_par_iter()
        .map(|(s, f)| {
            let g = cfg.graph.generate(derive_seed(seed, GRAPH + s as u64))?;
            let mcfg = cfg
                .training
                .model(filters[f].1.clone(), derive_seed(seed, MODEL + s as u64));
            let (test, outcome) = fit_and_test(&g, derive_seed(seed, SPLIT + s as u64), &mcfg, &cfg.training)?;
            let history = outcome.history.iter().map(|h| (h.epoch, h.loss, h.val_f1)).collect();
            Ok((
                RunResult {
                    label: filters[f].0.to_string(),
                    seed_index: s,
                    best_epoch: outcome.best_epoch,
                    test,
                },
                history,
            ))
        })
        .collect::<Result<_>>()?;
    let history = outcomes[0].1.clone();
    let runs: Vec<RunResult> = outcomes.into_iter().map(|(r, _)| r).collect();
    let bwgnn = summarize("bwgnn", &runs);
    let heat = summarize("heat", &runs);
    let mut history_csv = String::from("epoch,loss,val_f1\n");
    for (e, l, f) in &history {
        writeln!(history_csv, "{e},{l},{f}").unwrap();
    }
    let artifacts = vec![
        Artifact {
            file_name: "train_eval_runs.csv".into(),
            contents: runs_csv(&runs),
        },
        Artifact {
            file_name: "train_eval_history.csv".into(),
            contents: history_csv,
        },
    ];
    let results = TrainEvalResults {
        auc_gap: bwgnn.median_auc - heat.median_auc,
        runs,
        bwgnn,
        heat,
        history,
    };
    finish("train_eval", seed, cfg, &results, artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_experiment_lists_available() {
        let err = run_experiment("nope", &Value::Null, 0).unwrap_err();
        let msg = err.to_string();
        for name in EXPERIMENTS {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn unknown_config_key_rejected() {
        let cfg = serde_json::json!({"orderr": 3});
        assert!(run_experiment("kernel_gallery", &cfg, 0).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, GRAPH + i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(derive_seed(7, GRAPH), derive_seed(8, GRAPH));
    }

    #[test]
    fn gallery_is_deterministic_and_hashed() {
        let a = run_experiment("kernel_gallery", &Value::Null, 3).unwrap();
        let b = run_experiment("kernel_gallery", &Value::Null, 3).unwrap();
        assert_eq!(a.report.content_hash, b.report.content_hash);
        assert_eq!(a.report.content_hash.len(), 64);
        assert_eq!(a.artifacts, b.artifacts);
    }
}
