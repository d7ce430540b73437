//! Graph Fourier analysis: spectra, energy distributions, the high-frequency
//! area and its perturbation under node removal, and a Monte-Carlo check that
//! the low-frequency energy ratio falls as the anomaly degree grows.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Laplacian, LaplacianKind, LinearOperator};
use crate::io::{nullable, NonFinite, Report};
use crate::synth;

/// Largest graph [`eigendecompose`] accepts by default.
pub const DEFAULT_EIGEN_CAP: usize = 4000;

/// Default histogram bin width over the eigenvalue axis.
pub const DEFAULT_BIN_WIDTH: f64 = 0.5;

/// Independent RNG stream for Monte-Carlo trial `stream` under `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ascending eigenvalues with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// Graph Fourier transform `U^T x`.
    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_signal(x, self.dim())?;
        Ok(self.eigenvectors.tr_mul(&DVector::from_column_slice(x)))
    }

    /// `U diag(g(lambda)) U^T x` for every column of `x`.
    pub fn filter_columns(&self, x: &DMatrix<f64>, g: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.nrows(),
            });
        }
        let mut coeffs = self.eigenvectors.tr_mul(x);
        for (k, mut row) in coeffs.row_iter_mut().enumerate() {
            row *= g(self.eigenvalues[k]);
        }
        Ok(&self.eigenvectors * coeffs)
    }

    /// Largest residual `||L u_i - lambda_i u_i|| / max(1, lambda_i)` and
    /// orthonormality defect `max |U^T U - I|`.
    pub fn residuals(&self, l: &impl LinearOperator) -> (f64, f64) {
        let mut worst = 0.0f64;
        for (i, col) in self.eigenvectors.column_iter().enumerate() {
            let lu = l.apply(col.as_slice()).expect("matching dimension");
            let lam = self.eigenvalues[i];
            let r = lu
                .iter()
                .zip(col.iter())
                .map(|(a, b)| (a - lam * b).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(r / lam.abs().max(1.0));
        }
        let gram = self.eigenvectors.tr_mul(&self.eigenvectors);
        let n = self.dim();
        let ortho = (gram - DMatrix::<f64>::identity(n, n)).amax();
        (worst, ortho)
    }
}

/// Dense symmetric eigendecomposition of a Laplacian, capped at
/// [`DEFAULT_EIGEN_CAP`] nodes.
pub fn eigendecompose(l: &Laplacian) -> Result<Spectrum> {
    eigendecompose_capped(l, DEFAULT_EIGEN_CAP)
}

pub fn eigendecompose_capped(l: &Laplacian, cap: usize) -> Result<Spectrum> {
    let n = l.dim();
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    let dense = l.to_dense();
    let mat = faer::Mat::<f64>::from_fn(n, n, |i, j| dense[(i, j)]);
    let eig = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let (s, u) = (eig.S().column_vector(), eig.U());
    // PSD, and bounded by 2 when normalized; clamp round-off at the ends.
    let upper = match l.kind() {
        LaplacianKind::Normalized => 2.0,
        LaplacianKind::Regular => f64::INFINITY,
    };
    let eigenvalues: Vec<f64> = (0..n).map(|i| s[i].clamp(0.0, upper)).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

fn check_signal(x: &[f64], n: usize) -> Result<f64> {
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(norm_sq)
}

/// Energy per eigenvalue interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `edges.len() == mass.len() + 1`; the last bin is closed.
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

/// Spectral energy distribution of one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub eigenvalues: Vec<f64>,
    pub hat_x: Vec<f64>,
    /// `hat_x_k^2 / sum_i hat_x_i^2`
    pub energy: Vec<f64>,
    /// Cumulative low-frequency ratio; `eta[k-1]` is the ratio for the first `k` eigenvalues.
    pub eta: Vec<f64>,
    pub histogram: Histogram,
    #[serde(with = "nullable")]
    pub s_high: f64,
}

impl EnergyProfile {
    /// Share of energy in eigenvalues strictly below `cutoff`.
    pub fn share_below(&self, cutoff: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.energy)
            .filter(|(&lam, _)| lam < cutoff)
            .map(|(_, &e)| e)
            .sum()
    }
}

/// Edges `0, width, 2 width, ...` covering `[0, lambda_max]`.
pub fn default_bins(lambda_max: f64, width: f64) -> Vec<f64> {
    let count = ((lambda_max / width).ceil() as usize).max(1);
    (0..=count).map(|i| i as f64 * width).collect()
}

/// Computes the spectral energy profile of `x`. `bins` must be strictly
/// increasing edges covering `[0, lambda_N]`; pass `None` for width-0.5 bins.
pub fn energy_profile(spectrum: &Spectrum, x: &[f64], bins: Option<&[f64]>) -> Result<EnergyProfile> {
    let norm_sq = check_signal(x, spectrum.dim())?;
    let hat = spectrum.transform(x)?;
    let total: f64 = hat.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::ZeroSignal);
    }
    debug_assert!((total - norm_sq).abs() <= 1e-8 * norm_sq);
    let energy: Vec<f64> = hat.iter().map(|v| v * v / total).collect();
    let mut eta = Vec::with_capacity(energy.len());
    let mut acc = 0.0;
    for e in &energy {
        acc += e;
        eta.push(acc.min(1.0));
    }
    *eta.last_mut().unwrap() = 1.0;

    let lambdas = spectrum.eigenvalues();
    let lam_max = spectrum.lambda_max();
    let edges = match bins {
        Some(b) => b.to_vec(),
        None => default_bins(lam_max, DEFAULT_BIN_WIDTH),
    };
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("bin edges must be strictly increasing with at least two entries"));
    }
    let tol = 1e-8 * lam_max.max(1.0);
    if edges[0] > lambdas[0].max(0.0) + tol || *edges.last().unwrap() < lam_max - tol {
        return Err(Error::invalid(format!(
            "bin edges [{}, {}] do not cover the spectrum [0, {lam_max}]",
            edges[0],
            edges.last().unwrap()
        )));
    }
    let nbins = edges.len() - 1;
    let mut mass = vec![0.0; nbins];
    for (&lam, &e) in lambdas.iter().zip(&energy) {
        let bin = edges[1..].partition_point(|&edge| edge <= lam).min(nbins - 1);
        mass[bin] += e;
    }

    let s_high = step_area(lambdas, &eta);
    Ok(EnergyProfile {
        eigenvalues: lambdas.to_vec(),
        hat_x: hat.iter().copied().collect(),
        energy,
        eta,
        histogram: Histogram { edges, mass },
        s_high,
    })
}

// Area above the step curve f(t) = eta_k on [lambda_k, lambda_{k+1}).
fn step_area(lambdas: &[f64], eta: &[f64]) -> f64 {
    let n = lambdas.len();
    let mut covered = 0.0;
    for i in 1..n {
        covered += (lambdas[i] - lambdas[i - 1]) * eta[i - 1];
    }
    lambdas[n - 1] - covered
}

/// High-frequency area from the spectrum, as the area between the
/// cumulative energy curve and 1.
pub fn s_high_exact(spectrum: &Spectrum, x: &[f64]) -> Result<f64> {
    check_signal(x, spectrum.dim())?;
    let hat = spectrum.transform(x)?;
    let total: f64 = hat.iter().map(|v| v * v).sum();
    let mut eta = Vec::with_capacity(hat.len());
    let mut acc = 0.0;
    for v in hat.iter() {
        acc += v * v;
        eta.push(acc / total);
    }
    Ok(step_area(spectrum.eigenvalues(), &eta))
}

/// High-frequency area as the Rayleigh quotient `x^T L x / x^T x`; linear in |E|.
pub fn s_high_fast(l: &Laplacian, x: &[f64]) -> Result<f64> {
    let norm_sq = check_signal(x, l.dim())?;
    Ok(l.quadratic_form(x) / norm_sq)
}

/// Per-feature outcome of a node-drop perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShift {
    pub column: usize,
    #[serde(with = "nullable")]
    pub s_high_original: f64,
    #[serde(with = "nullable")]
    pub s_high_perturbed: f64,
    #[serde(with = "nullable")]
    pub delta_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedColumn {
    pub column: usize,
    pub reason: String,
}

/// Relative change of the high-frequency area after dropping nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub kind: LaplacianKind,
    pub dropped: usize,
    pub features: Vec<FeatureShift>,
    /// Mean of `delta_relative` over retained columns.
    #[serde(with = "nullable")]
    pub mean_delta: f64,
    /// Smallest `delta_relative` over retained columns.
    #[serde(with = "nullable")]
    pub min_delta: f64,
    pub skipped: Vec<SkippedColumn>,
}

/// Drops `drop` from `g` (relation `relation`, or the union of all relations
/// when `None`) and reports the per-feature relative change of `S_high`,
/// with degrees recomputed on the induced subgraph.
pub fn delta_s_high(
    g: &Graph,
    drop: &[usize],
    kind: LaplacianKind,
    relation: Option<usize>,
) -> Result<ShiftReport> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut dropped = vec![false; n];
    for &i in drop {
        if i >= n {
            return Err(Error::IndexOutOfRange {
                what: "node",
                index: i,
                limit: n,
            });
        }
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
    if keep.is_empty() {
        return Err(Error::invalid("dropping every node leaves an empty subgraph"));
    }
    let edges = match relation {
        Some(r) => g.relation(r)?.clone(),
        None => g.union_edges(),
    };
    let base = Graph::unlabeled(edges, g.features().clone())?;
    let sub = base.induced_subgraph(&keep)?;
    let l_orig = Laplacian::new(base.relation(0)?.clone(), kind)?;
    let l_sub = Laplacian::new(sub.relation(0)?.clone(), kind)?;

    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for col in 0..g.feature_dim() {
        let x = base.features().column(col);
        let x_sub = sub.features().column(col);
        let (orig, pert) = match (s_high_fast(&l_orig, x.as_slice()), s_high_fast(&l_sub, x_sub.as_slice())) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::ZeroSignal), _) | (_, Err(Error::ZeroSignal)) => {
                warn!("feature column {col} is all-zero; skipped");
                skipped.push(SkippedColumn {
                    column: col,
                    reason: "all-zero column".into(),
                });
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        if orig <= 0.0 {
            warn!("feature column {col} has zero high-frequency area; skipped");
            skipped.push(SkippedColumn {
                column: col,
                reason: "zero high-frequency area".into(),
            });
            continue;
        }
        features.push(FeatureShift {
            column: col,
            s_high_original: orig,
            s_high_perturbed: pert,
            delta_relative: (pert - orig) / orig,
        });
    }
    let (mean_delta, min_delta) = if features.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let sum: f64 = features.iter().map(|f| f.delta_relative).sum();
        let min = features.iter().map(|f| f.delta_relative).fold(f64::INFINITY, f64::min);
        (sum / features.len() as f64, min)
    };
    Ok(ShiftReport {
        kind,
        dropped: drop.len(),
        features,
        mean_delta,
        min_delta,
        skipped,
    })
}

/// Monte-Carlo estimate of `E[1/eta_k]` at one anomaly degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    #[serde(with = "nullable")]
    pub mean_inv_eta: f64,
    #[serde(with = "nullable")]
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub k: usize,
    pub trials: usize,
    pub estimates: Vec<RatioEstimate>,
    /// One entry per consecutive pair: gap exceeds twice the combined standard error.
    pub gaps_significant: Vec<bool>,
    pub pass: bool,
    pub note: Option<String>,
}

impl NonFinite for EnergyProfile {
    fn has_nonfinite(&self) -> bool {
        self.s_high.has_nonfinite()
            || self.eigenvalues.has_nonfinite()
            || self.hat_x.has_nonfinite()
            || self.energy.has_nonfinite()
            || self.eta.has_nonfinite()
            || self.histogram.mass.has_nonfinite()
    }
}

impl Report for EnergyProfile {
    const KIND: &'static str = "energy_profile";
}

impl NonFinite for ShiftReport {
    fn has_nonfinite(&self) -> bool {
        self.mean_delta.has_nonfinite()
            || self.min_delta.has_nonfinite()
            || self
                .features
                .iter()
                .any(|f| f.s_high_original.has_nonfinite() || f.s_high_perturbed.has_nonfinite() || f.delta_relative.has_nonfinite())
    }
}

impl Report for ShiftReport {
    const KIND: &'static str = "shift_report";
}

impl NonFinite for MonotonicityReport {
    fn has_nonfinite(&self) -> bool {
        self.estimates
            .iter()
            .any(|e| e.mean_inv_eta.has_nonfinite() || e.std_err.has_nonfinite())
    }
}

impl Report for MonotonicityReport {
    const KIND: &'static str = "monotonicity_report";
}

/// Parameters of the energy-ratio monotonicity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prop1Config {
    pub num_nodes: usize,
    pub ba_edges_per_node: usize,
    pub graph_seed: u64,
    pub k: usize,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            num_nodes: 500,
            ba_edges_per_node: 3,
            graph_seed: 0,
            k: 250,
            ratios: vec![0.5, 1.0, 2.0, 5.0],
            trials: 2000,
            seed: 1,
        }
    }
}

/// Builds a Barabási–Albert graph and runs [`energy_ratio_monotonicity`]
/// under its regular Laplacian.
pub fn validate_prop1(cfg: &Prop1Config) -> Result<MonotonicityReport> {
    if cfg.trials < 100 {
        return Err(Error::InsufficientTrials(cfg.trials));
    }
    let edges = synth::barabasi_albert(cfg.num_nodes, cfg.ba_edges_per_node, &mut ChaCha8Rng::seed_from_u64(cfg.graph_seed))?;
    let l = Laplacian::new(edges, LaplacianKind::Regular)?;
    let spectrum = eigendecompose(&l)?;
    energy_ratio_monotonicity(&spectrum, cfg.k, &cfg.ratios, cfg.trials, cfg.seed)
}

/// Draws `x ~ N(e, ratio^2 I)` for each ratio (`sigma / |mu|` with `mu = 1`;
/// `1/eta_k` is scale-free so this is general) and estimates `E[1/eta_k]`.
/// Passes when estimates strictly increase with every gap above twice the
/// combined standard error.
pub fn energy_ratio_monotonicity(
    spectrum: &Spectrum,
    k: usize,
    ratios: &[f64],
    trials: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    let n = spectrum.dim();
    if trials < 100 {
        return Err(Error::InsufficientTrials(trials));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must lie in [1, {}], got {k}", n - 1)));
    }
    if let Some(r) = ratios.iter().find(|r| !r.is_finite() || **r < 0.0) {
        return Err(Error::invalid(format!(
            "anomaly degree {r} rejected: sigma/|mu| must be finite and nonnegative (mu != 0)"
        )));
    }
    if ratios.is_empty() {
        return Err(Error::invalid("no anomaly degrees given"));
    }

    let low_basis = spectrum.eigenvectors().columns(0, k).into_owned();
    let normal = StandardNormal;
    let mut estimates = Vec::with_capacity(ratios.len());
    for (ri, &ratio) in ratios.iter().enumerate() {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut x = DVector::zeros(n);
        for t in 0..trials {
            let mut rng = trial_rng(seed, (ri * trials + t) as u64);
            for v in x.iter_mut() {
                let z: f64 = normal.sample(&mut rng);
                *v = 1.0 + ratio * z;
            }
            let total = x.norm_squared();
            let low = low_basis.tr_mul(&x).norm_squared();
            let inv = total / low;
            sum += inv;
            sum_sq += inv * inv;
        }
        let mean = sum / trials as f64;
        let var = (sum_sq / trials as f64 - mean * mean).max(0.0) * trials as f64 / (trials - 1) as f64;
        estimates.push(RatioEstimate {
            ratio,
            mean_inv_eta: mean,
            std_err: (var / trials as f64).sqrt(),
        });
    }

    let strictly_increasing_ratios = ratios.windows(2).all(|w| w[0] < w[1]);
    let gaps_significant: Vec<bool> = estimates
        .windows(2)
        .map(|w| {
            let se = (w[0].std_err.powi(2) + w[1].std_err.powi(2)).sqrt();
            w[1].mean_inv_eta - w[0].mean_inv_eta > 2.0 * se
        })
        .collect();
    let (pass, note) = if ratios.len() < 2 || !strictly_increasing_ratios {
        (false, Some("degenerate input: anomaly degrees must be strictly increasing and at least two".to_string()))
    } else {
        (gaps_significant.iter().all(|&b| b), None)
    };
    Ok(MonotonicityReport {
        k,
        trials,
        estimates,
        gaps_significant,
        pass,
        note,
    })
}
