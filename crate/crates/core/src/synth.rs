//! Synthetic graphs with Gaussian node attributes and injected anomalies.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{is_connected, EdgeSet, Graph, Label};

const KNN_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    BarabasiAlbert { n: usize, m: usize },
    Knn {
        n: usize,
        k: usize,
        #[serde(default = "default_point_dim")]
        point_dim: usize,
    },
    Grid { rows: usize, cols: usize },
    Path { n: usize },
}

fn default_point_dim() -> usize {
    2
}

impl Topology {
    pub fn num_nodes(&self) -> usize {
        match *self {
            Topology::BarabasiAlbert { n, .. } | Topology::Knn { n, .. } | Topology::Path { n } => n,
            Topology::Grid { rows, cols } => rows * cols,
        }
    }

    pub fn build(&self, rng: &mut impl Rng) -> Result<EdgeSet> {
        match *self {
            Topology::BarabasiAlbert { n, m } => barabasi_albert(n, m, rng),
            Topology::Knn { n, k, point_dim } => knn_graph(n, k, point_dim, rng),
            Topology::Grid { rows, cols } => grid_graph(rows, cols),
            Topology::Path { n } => path_graph(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    fn sampler(&self) -> Result<Normal<f64>> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::invalid(format!(
                "Gaussian needs finite mean and positive std, got N({}, {}^2)",
                self.mean, self.std
            )));
        }
        Normal::new(self.mean, self.std).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Description of a synthetic anomaly dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub topology: Topology,
    pub normal: Gaussian,
    pub anomaly: Gaussian,
    pub anomaly_fraction: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Barabási–Albert graph with normals `N(1, 1)` and anomalies `N(1, sigma^2)`.
    pub fn ba_gaussian(n: usize, m: usize, fraction: f64, sigma: f64, feature_dim: usize, seed: u64) -> Self {
        Self {
            topology: Topology::BarabasiAlbert { n, m },
            normal: Gaussian::new(1.0, 1.0),
            anomaly: Gaussian::new(1.0, sigma),
            anomaly_fraction: fraction,
            feature_dim,
            seed,
        }
    }

    pub fn num_anomalies(&self) -> usize {
        (self.anomaly_fraction * self.topology.num_nodes() as f64).round() as usize
    }
}

/// Preferential attachment with `m` edges per new node. The first `m` nodes
/// start isolated, node `m` links to all of them and every later node draws
/// `m` distinct targets with probability proportional to degree, so the
/// graph is connected with exactly `m (n - m)` edges.
pub fn barabasi_albert(n: usize, m: usize, rng: &mut impl Rng) -> Result<EdgeSet> {
    if m == 0 || n <= m {
        return Err(Error::invalid(format!(
            "Barabási–Albert needs m >= 1 and n > m, got n = {n}, m = {m}"
        )));
    }
    let mut pairs = Vec::with_capacity(m * (n - m));
    // Every edge endpoint, so a uniform draw is degree-proportional.
    let mut endpoints: Vec<usize> = Vec::with_capacity(2 * m * (n - m));
    for t in 0..m {
        pairs.push((m, t));
        endpoints.extend([m, t]);
    }
    let mut targets = Vec::with_capacity(m);
    for v in m + 1..n {
        targets.clear();
        while targets.len() < m {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            pairs.push((v, t));
            endpoints.extend([v, t]);
        }
    }
    Ok(EdgeSet::from_pairs(n, pairs)?.0)
}

/// Symmetrized `k`-nearest-neighbour graph of `n` uniform points in the unit
/// cube of dimension `point_dim`, resampled until connected.
pub fn knn_graph(n: usize, k: usize, point_dim: usize, rng: &mut impl Rng) -> Result<EdgeSet> {
    if n < 2 || k == 0 || k >= n || point_dim == 0 {
        return Err(Error::invalid(format!(
            "kNN graph needs n >= 2, 1 <= k < n and point_dim >= 1, got n = {n}, k = {k}, dim = {point_dim}"
        )));
    }
    for _ in 0..KNN_ATTEMPTS {
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..point_dim).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let mut pairs = Vec::with_capacity(n * k);
        let mut by_dist: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for (i, pi) in points.iter().enumerate() {
            by_dist.clear();
            by_dist.extend(points.iter().enumerate().filter(|(j, _)| *j != i).map(|(j, pj)| {
                let d: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b).powi(2)).sum();
                (d, j)
            }));
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            pairs.extend(by_dist[..k].iter().map(|&(_, j)| (i, j)));
        }
        let edges = EdgeSet::from_pairs(n, pairs)?.0;
        if is_connected(&edges) {
            return Ok(edges);
        }
    }
    Err(Error::Generation(format!(
        "kNN graph (n = {n}, k = {k}) still disconnected after {KNN_ATTEMPTS} attempts"
    )))
}

pub fn grid_graph(rows: usize, cols: usize) -> Result<EdgeSet> {
    let n = rows * cols;
    if n < 2 {
        return Err(Error::invalid("grid needs at least two nodes"));
    }
    let mut pairs = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                pairs.push((i, i + 1));
            }
            if r + 1 < rows {
                pairs.push((i, i + cols));
            }
        }
    }
    Ok(EdgeSet::from_pairs(n, pairs)?.0)
}

pub fn path_graph(n: usize) -> Result<EdgeSet> {
    if n < 2 {
        return Err(Error::invalid("path needs at least two nodes"));
    }
    Ok(EdgeSet::from_pairs(n, (0..n - 1).map(|i| (i, i + 1)))?.0)
}

fn check_spec(spec: &SynthSpec) -> Result<()> {
    if spec.topology.num_nodes() < 2 {
        return Err(Error::invalid("synthetic graphs need at least two nodes"));
    }
    if !(0.0..1.0).contains(&spec.anomaly_fraction) {
        return Err(Error::invalid(format!(
            "anomaly fraction must lie in [0, 1), got {}",
            spec.anomaly_fraction
        )));
    }
    if spec.feature_dim == 0 {
        return Err(Error::invalid("feature_dim must be at least 1"));
    }
    Ok(())
}

/// Generates a labeled graph: topology, then a uniformly chosen anomaly set
/// of `round(alpha N)` nodes, then per-class i.i.d. Gaussian attributes.
pub fn generate(spec: &SynthSpec) -> Result<Graph> {
    check_spec(spec)?;
    let normal = spec.normal.sampler()?;
    let anomaly = spec.anomaly.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edges = spec.topology.build(&mut rng)?;
    let n = edges.num_nodes();
    let mut labels = vec![Label::Normal; n];
    for i in sample(&mut rng, n, spec.num_anomalies()) {
        labels[i] = Label::Anomalous;
    }
    let mut features = DMatrix::zeros(n, spec.feature_dim);
    for i in 0..n {
        let dist = if labels[i] == Label::Anomalous { &anomaly } else { &normal };
        for j in 0..spec.feature_dim {
            features[(i, j)] = dist.sample(&mut rng);
        }
    }
    Graph::new(vec![edges], features, labels)
}

/// All nodes drawn from one Gaussian; no labels.
pub fn single_gaussian(topology: &Topology, dist: Gaussian, feature_dim: usize, seed: u64) -> Result<Graph> {
    if feature_dim == 0 {
        return Err(Error::invalid("feature_dim must be at least 1"));
    }
    let sampler = dist.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = topology.build(&mut rng)?;
    let n = edges.num_nodes();
    let features = DMatrix::from_fn(n, feature_dim, |_, _| sampler.sample(&mut rng));
    Graph::unlabeled(edges, features)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Perturbation {
    /// Stretch anomaly attributes about their class mean by this factor.
    ScaleSigma(f64),
    /// Turn this fraction of all nodes (taken from the normal class) into
    /// anomalies with attributes resampled from existing anomaly rows.
    InjectFraction(f64),
}

/// Changes the anomaly degree of a labeled graph.
pub fn perturb_anomaly_degree(g: &Graph, mode: Perturbation, seed: u64) -> Result<Graph> {
    let anomalies = g.anomalies();
    let mut out = g.clone();
    match mode {
        Perturbation::ScaleSigma(factor) => {
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Error::invalid(format!("scale factor must be positive, got {factor}")));
            }
            if anomalies.is_empty() {
                return Err(Error::invalid("scale_sigma needs at least one anomaly"));
            }
            if factor == 1.0 {
                return Ok(out);
            }
            let mut feats = g.features().clone();
            for j in 0..g.feature_dim() {
                let mean = anomalies.iter().map(|&i| feats[(i, j)]).sum::<f64>() / anomalies.len() as f64;
                for &i in &anomalies {
                    feats[(i, j)] = mean + factor * (feats[(i, j)] - mean);
                }
            }
            out.set_features(feats)?;
        }
        Perturbation::InjectFraction(alpha) => {
            if !(0.0..1.0).contains(&alpha) {
                return Err(Error::invalid(format!("injection fraction must lie in [0, 1), got {alpha}")));
            }
            let count = (alpha * g.num_nodes() as f64).round() as usize;
            if count == 0 {
                return Ok(out);
            }
            let normals = g.nodes_with(Label::Normal);
            if count > normals.len() {
                return Err(Error::invalid(format!(
                    "cannot inject {count} anomalies: only {} normal nodes",
                    normals.len()
                )));
            }
            if anomalies.is_empty() {
                return Err(Error::invalid("inject_fraction needs existing anomalies to resample from"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut feats = g.features().clone();
            let mut labels = g.labels().to_vec();
            for pick in sample(&mut rng, normals.len(), count) {
                let target = normals[pick];
                let donor = anomalies[rng.gen_range(0..anomalies.len())];
                let row = g.features().row(donor).into_owned();
                feats.set_row(target, &row);
                labels[target] = Label::Anomalous;
            }
            out.set_features(feats)?;
            out.set_labels(labels)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ba_edge_count_and_connectivity() {
        for (n, m) in [(10, 1), (50, 2), (500, 3), (200, 7)] {
            let e = barabasi_albert(n, m, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            assert_eq!(e.num_edges(), m * (n - m));
            e.validate().unwrap();
            assert!(is_connected(&e));
            let max_deg = (0..n).map(|i| e.degree(i)).max().unwrap();
            assert!(max_deg >= m + 1);
        }
        assert!(barabasi_albert(3, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn knn_is_connected_and_symmetric() {
        let e = knn_graph(80, 4, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        e.validate().unwrap();
        assert!(is_connected(&e));
        assert!((0..80).all(|i| e.degree(i) >= 4));
    }

    #[test]
    fn grid_and_path() {
        assert_eq!(grid_graph(3, 4).unwrap().num_edges(), 3 * 3 + 2 * 4);
        assert_eq!(path_graph(5).unwrap().num_edges(), 4);
    }

    #[test]
    fn label_count_is_rounded_fraction() {
        let spec = SynthSpec::ba_gaussian(333, 2, 0.05, 5.0, 3, 1);
        let g = generate(&spec).unwrap();
        assert_eq!(g.anomalies().len(), 17);
        assert_eq!(g.feature_dim(), 3);
    }

    #[test]
    fn zero_fraction_all_normal() {
        let g = generate(&SynthSpec::ba_gaussian(100, 2, 0.0, 5.0, 1, 3)).unwrap();
        assert!(g.labels().iter().all(|&l| l == Label::Normal));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::ba_gaussian(200, 3, 0.05, 5.0, 4, 77);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 78;
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SynthSpec::ba_gaussian(100, 2, 1.0, 5.0, 1, 0);
        assert!(generate(&spec).is_err());
        spec.anomaly_fraction = 0.1;
        spec.anomaly.std = 0.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn scale_sigma_keeps_mean_and_scales_spread() {
        let g = generate(&SynthSpec::ba_gaussian(400, 2, 0.1, 3.0, 2, 5)).unwrap();
        assert_eq!(perturb_anomaly_degree(&g, Perturbation::ScaleSigma(1.0), 0).unwrap(), g);
        let s = perturb_anomaly_degree(&g, Perturbation::ScaleSigma(4.0), 0).unwrap();
        let an = g.anomalies();
        for j in 0..2 {
            let mean = |m: &DMatrix<f64>| an.iter().map(|&i| m[(i, j)]).sum::<f64>() / an.len() as f64;
            assert!((mean(g.features()) - mean(s.features())).abs() < 1e-12);
            let i = an[0];
            let dev = |m: &DMatrix<f64>| m[(i, j)] - mean(m);
            assert!((dev(s.features()) - 4.0 * dev(g.features())).abs() < 1e-10);
        }
        let normal = g.nodes_with(Label::Normal)[0];
        assert_eq!(g.features().row(normal), s.features().row(normal));
    }

    #[test]
    fn inject_fraction() {
        let g = generate(&SynthSpec::ba_gaussian(200, 2, 0.05, 3.0, 2, 5)).unwrap();
        let same = perturb_anomaly_degree(&g, Perturbation::InjectFraction(0.0), 1).unwrap();
        assert_eq!(same.labels(), g.labels());
        let more = perturb_anomaly_degree(&g, Perturbation::InjectFraction(0.1), 1).unwrap();
        assert_eq!(more.anomalies().len(), 10 + 20);
        assert!(perturb_anomaly_degree(&g, Perturbation::InjectFraction(0.99), 1).is_err());
    }
}
