use bwgnn_core::graph::{hop_distances, EdgeSet, Graph, Label};
use bwgnn_core::model::{
    forward, gradient, train, Activation, Aggregation, Bwgnn, GammaMode, ModelConfig, ModelParams, RelationMode,
    TrainConfig,
};
use bwgnn_core::split::{split_nodes, SplitSpec};
use bwgnn_core::synth::{generate, SynthSpec};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_graph(n: usize, d: usize, seed: u64) -> Graph {
    generate(&SynthSpec::ba_gaussian(n, 2, 0.2, 3.0, d, seed)).unwrap()
}

fn cfg(seed: u64) -> ModelConfig {
    ModelConfig {
        order: 2,
        hidden_dim: 8,
        seed,
        ..ModelConfig::default()
    }
}

fn fd_check(g: &Graph, cfg: &ModelConfig, coords: usize, seed: u64) -> f64 {
    let params = ModelParams::init(cfg, g.feature_dim()).unwrap();
    let mask: Vec<usize> = (0..g.num_nodes()).collect();
    let (_, grad) = gradient(&params, g, &mask, cfg, GammaMode::Inverse).unwrap();
    let flat = params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Bwgnn::new(g, cfg).unwrap();
    let eval = |theta: &[f64]| {
        let p = ModelParams::from_flat(cfg, g.feature_dim(), theta).unwrap();
        let pred = model.forward(&p, g.features()).unwrap();
        bwgnn_core::model::loss(&pred.scores, g.labels(), &mask, GammaMode::Inverse).unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = rng.gen_range(0..flat.len());
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    let g = small_graph(30, 4, 11);
    let worst = fd_check(&g, &cfg(3), 500, 0);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn gradient_matches_finite_differences_variants() {
    let g = small_graph(25, 3, 12);
    let variants = [
        ModelConfig { agg: Aggregation::Sum, ..cfg(4) },
        ModelConfig { activation: Activation::Tanh, ..cfg(5) },
        ModelConfig { order: 3, mlp_depth_in: 1, mlp_depth_head: 3, ..cfg(6) },
        ModelConfig {
            filter: bwgnn_core::model::FilterSpec::Heat { taus: vec![1.0, 5.0] },
            ..cfg(7)
        },
    ];
    for c in &variants {
        let worst = fd_check(&g, c, 200, 1);
        assert!(worst < 1e-4, "{c:?}: worst relative error {worst}");
    }
}

#[test]
fn hetero_gradient_matches_finite_differences() {
    let base = small_graph(30, 3, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<(usize, usize)> = (0..40).map(|_| (rng.gen_range(0..30), rng.gen_range(0..30))).collect();
    let second = EdgeSet::from_pairs(30, pairs).unwrap().0;
    let g = Graph::new(
        vec![base.relations()[0].clone(), second],
        base.features().clone(),
        base.labels().to_vec(),
    )
    .unwrap();
    let c = ModelConfig {
        relation_mode: RelationMode::Hetero,
        ..cfg(8)
    };
    let worst = fd_check(&g, &c, 300, 2);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn permutation_equivariance() {
    let g = small_graph(50, 3, 14);
    let c = cfg(9);
    let params = ModelParams::init(&c, 3).unwrap();
    let mut perm: Vec<usize> = (0..50).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let gp = g.permuted(&perm).unwrap();
    let a = forward(&params, &g, &c).unwrap().scores;
    let b = forward(&params, &gp, &c).unwrap().scores;
    for i in 0..50 {
        assert!((a[i] - b[perm[i]]).abs() < 1e-12);
    }
}

#[test]
fn duplicated_graph_doubles_gradient() {
    let g = small_graph(20, 3, 15);
    let n = g.num_nodes();
    let pairs: Vec<(usize, usize)> = g.relations()[0]
        .undirected_edges()
        .flat_map(|(u, v)| [(u, v), (u + n, v + n)])
        .collect();
    let edges = EdgeSet::from_pairs(2 * n, pairs).unwrap().0;
    let feats = DMatrix::from_fn(2 * n, 3, |i, j| g.features()[(i % n, j)]);
    let labels: Vec<Label> = (0..2 * n).map(|i| g.labels()[i % n]).collect();
    let doubled = Graph::new(vec![edges], feats, labels).unwrap();

    let c = cfg(10);
    let params = ModelParams::init(&c, 3).unwrap();
    let mask: Vec<usize> = (0..n).collect();
    let mask2: Vec<usize> = (0..2 * n).collect();
    let (l1, g1) = gradient(&params, &g, &mask, &c, GammaMode::Inverse).unwrap();
    let (l2, g2) = gradient(&params, &doubled, &mask2, &c, GammaMode::Inverse).unwrap();
    assert!((l2 - 2.0 * l1).abs() <= 1e-12 * l1.abs().max(1.0));
    for (a, b) in g1.iter().zip(&g2) {
        assert!((b - 2.0 * a).abs() <= 1e-10 * a.abs().max(1e-6), "{a} {b}");
    }
}

#[test]
fn receptive_field_is_order_hops() {
    for seed in 0..5 {
        let g = small_graph(60, 3, 20 + seed);
        for order in 1..=3 {
            let c = ModelConfig { order, ..cfg(seed) };
            let model = Bwgnn::new(&g, &c).unwrap();
            let params = ModelParams::init(&c, 3).unwrap();
            let full = model.forward_cached(&params, g.features()).unwrap();
            for v in [0, 17, 59] {
                let dist = hop_distances(&g.relations()[0], v).unwrap();
                let mut feats = g.features().clone();
                for (i, d) in dist.iter().enumerate() {
                    if d.map_or(true, |d| d > order) {
                        feats.row_mut(i).fill(0.0);
                    }
                }
                let masked = model.forward_cached(&params, &feats).unwrap();
                let a = full.representation().row(v);
                let b = masked.representation().row(v);
                assert!((a - b).amax() <= 1e-10, "seed {seed} order {order} node {v}");
            }
        }
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let g = generate(&SynthSpec::ba_gaussian(400, 3, 0.05, 5.0, 8, 1)).unwrap();
    let split = split_nodes(g.labels(), &SplitSpec::new(0.4, 1)).unwrap();
    let c = ModelConfig { seed: 1, ..ModelConfig::default() };
    let t = TrainConfig { epochs: 12, ..TrainConfig::default() };
    let a = train(&g, &split, &c, &t).unwrap();
    assert!(a.history[10].loss < a.history[0].loss);
    let b = train(&g, &split, &c, &t).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best_params, b.best_params);
}

#[test]
fn lr_zero_history_is_flat() {
    let g = generate(&SynthSpec::ba_gaussian(300, 3, 0.1, 1.0, 4, 2)).unwrap();
    let split = split_nodes(g.labels(), &SplitSpec::new(0.4, 2)).unwrap();
    let t = TrainConfig { epochs: 3, learning_rate: 0.0, ..TrainConfig::default() };
    let out = train(&g, &split, &cfg(2), &t).unwrap();
    assert!(out.history.iter().all(|h| h.loss == out.history[0].loss));
}

#[test]
fn single_class_training_mask_rejected() {
    let g = small_graph(30, 2, 16);
    let normals = g.nodes_with(Label::Normal);
    let split = bwgnn_core::split::Split {
        train: normals[..5].to_vec(),
        val: normals[5..10].to_vec(),
        test: vec![],
    };
    let err = train(&g, &split, &cfg(0), &TrainConfig::default()).unwrap_err();
    assert!(err.to_string().contains("gamma undefined"));
}
