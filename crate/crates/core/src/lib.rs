//! Spectral anomaly analysis on graphs and the Beta Wavelet Graph Neural
//! Network.

pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod spectral;
pub mod split;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
pub use graph::{EdgeSet, Graph, Label, Laplacian, LaplacianKind, LinearOperator};
