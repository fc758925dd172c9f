//! Gray-box adversarial attacks on the group fairness of graph node
//! classifiers via sequential edge flips under a utility budget.

pub mod attack;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod fast;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pgd;
pub mod rng;
pub mod sbm;
pub mod surrogate;
pub mod verify;
pub mod victim;

pub use error::{Error, Result};
pub use graph::{load_graph, Adjacency, EdgeFlip, EdgeGroup, FlipKind, Graph, Pair, Split};
pub use linalg::Matrix;
