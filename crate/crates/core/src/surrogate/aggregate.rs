use crate::graph::{Adjacency, Graph};
use crate::linalg::Matrix;

/// Aggregated features `Z` of the linearized two-layer GCN, together with the
/// caches needed to update it under single-edge flips.
///
/// With `Â = A + I` and `d̂` its row sums, row `i` of `Z` is
/// `Σ_{j ∈ N̂(i)} (d̂_i d̂_j)⁻¹ (ÂX)_j`; logits are `Z θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedFeatures {
    pub z: Matrix,
    /// `Â X`.
    pub ax: Matrix,
    /// Row sums of `Â` (degree + 1).
    pub dhat: Vec<usize>,
}

impl AggregatedFeatures {
    pub fn logits(&self, theta: &[f64]) -> Vec<f64> {
        self.z.mul_vec(theta)
    }

    pub fn max_abs_diff(&self, other: &AggregatedFeatures) -> f64 {
        assert_eq!(self.dhat, other.dhat, "degree caches differ");
        self.z.max_abs_diff(&other.z).max(self.ax.max_abs_diff(&other.ax))
    }
}

pub fn aggregate(graph: &Graph) -> AggregatedFeatures {
    aggregate_adjacency(graph.adjacency(), graph.features())
}

pub fn aggregate_adjacency(adj: &Adjacency, x: &Matrix) -> AggregatedFeatures {
    let n = adj.node_count();
    let d = x.cols();
    let dhat: Vec<usize> = (0..n).map(|i| adj.degree(i) + 1).collect();

    let mut ax = x.clone();
    for i in 0..n {
        for &j in adj.neighbors(i) {
            let (src, dst) = (x.row(j), ax.row_mut(i));
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += v;
            }
        }
    }

    // Row-normalize ÂX by d̂_j, then aggregate again and normalize by d̂_i.
    let mut scaled = ax.clone();
    for (j, &dj) in dhat.iter().enumerate() {
        let inv = 1.0 / dj as f64;
        scaled.row_mut(j).iter_mut().for_each(|v| *v *= inv);
    }
    let mut z = scaled.clone();
    for i in 0..n {
        for &j in adj.neighbors(i) {
            for k in 0..d {
                let v = scaled.get(j, k);
                let zi = z.row_mut(i);
                zi[k] += v;
            }
        }
        let inv = 1.0 / dhat[i] as f64;
        z.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }

    AggregatedFeatures { z, ax, dhat }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Pair;
    use rand::{Rng, SeedableRng};

    #[test]
    fn isolated_node_is_identity() {
        let adj = Adjacency::new(1);
        let x = Matrix::from_rows(&[vec![2.5, -1.0]]);
        let agg = aggregate_adjacency(&adj, &x);
        assert_eq!(agg.dhat, vec![1]);
        assert_eq!(agg.z, x);
    }

    #[test]
    fn connected_pair_by_hand() {
        let adj = Adjacency::from_pairs(2, [Pair { u: 0, v: 1 }]);
        let x = Matrix::from_rows(&[vec![1.0], vec![3.0]]);
        let agg = aggregate_adjacency(&adj, &x);
        assert_eq!(agg.dhat, vec![2, 2]);
        assert_eq!(agg.ax.as_slice(), &[4.0, 4.0]);
        assert_eq!(agg.z.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn matches_dense_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 50;
        let d = 4;
        let mut pairs = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen::<f64>() < 0.1 {
                    pairs.push(Pair { u, v });
                }
            }
        }
        let adj = Adjacency::from_pairs(n, pairs);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect());

        // Dense oracle: P = D̂⁻¹Â, Z = P P X.
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let di = (adj.degree(i) + 1) as f64;
            p.set(i, i, 1.0 / di);
            for &j in adj.neighbors(i) {
                p.set(i, j, 1.0 / di);
            }
        }
        let expected = p.matmul(&p.matmul(&x));
        let agg = aggregate_adjacency(&adj, &x);
        assert!(agg.z.max_abs_diff(&expected) <= 1e-12);
    }
}
