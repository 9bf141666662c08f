//! Regularization penalties on the reduced parameter vector.
//!
//! The inversion stabilizes its steps with a weighted combination of a
//! squared-`L²` term and a bounded-variation term,
//! `β‖a‖₂² + γ(‖a‖₁ + TV(a))`, where the total variation is taken over a
//! neighbor graph on the parameter indices: a chain for strip
//! parameterizations, grid adjacency for rectangular subregions, and no graph
//! for spectral (Karhunen–Loève) coefficients. Because the absolute values
//! are not differentiable, the step equation uses smoothed lagged-diffusivity
//! matrices instead of exact subgradients: `L₁ = diag(1/√(aᵢ²+ε²))` and `L₂`
//! the graph Laplacian with edge weights `1/√((aᵢ−aⱼ)²+ε²)`. Both are
//! symmetric positive semidefinite, `L₂` annihilates constants, and the
//! quadratic forms `aᵀL₁a` and `aᵀL₂a` converge to `‖a‖₁` and `TV(a)` as
//! `ε → 0`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Neighbor structure over parameter indices for the total-variation term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PenaltyGraph {
    /// No neighbors: the variation term vanishes (spectral coefficients).
    None,
    /// A path `0 — 1 — … — n−1` (vertical strips, left to right).
    Chain(usize),
    /// Grid adjacency over an x-major block tiling: region `bx·blocks_y + by`
    /// neighbors `(bx±1, by)` and `(bx, by±1)`.
    Grid {
        /// Block count along x.
        blocks_x: usize,
        /// Block count along y.
        blocks_y: usize,
    },
}

impl PenaltyGraph {
    /// Number of nodes the graph constrains, if any.
    pub fn node_count(&self) -> Option<usize> {
        match self {
            PenaltyGraph::None => None,
            PenaltyGraph::Chain(n) => Some(*n),
            PenaltyGraph::Grid { blocks_x, blocks_y } => Some(blocks_x * blocks_y),
        }
    }

    /// Undirected edge list, each pair listed once with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        match self {
            PenaltyGraph::None => Vec::new(),
            PenaltyGraph::Chain(n) => (1..*n).map(|i| (i - 1, i)).collect(),
            PenaltyGraph::Grid { blocks_x, blocks_y } => {
                let idx = |bx: usize, by: usize| bx * blocks_y + by;
                let mut edges = Vec::new();
                for bx in 0..*blocks_x {
                    for by in 0..*blocks_y {
                        if by + 1 < *blocks_y {
                            edges.push((idx(bx, by), idx(bx, by + 1)));
                        }
                        if bx + 1 < *blocks_x {
                            edges.push((idx(bx, by), idx(bx + 1, by)));
                        }
                    }
                }
                edges.sort_unstable();
                edges
            }
        }
    }
}

/// Weights and smoothing of the combined `L²`/bounded-variation penalty.
#[derive(Clone, Debug)]
pub struct Penalty {
    /// Weight of the squared-`L²` term.
    pub beta: f64,
    /// Weight of the bounded-variation term (`‖a‖₁` plus graph variation).
    pub gamma: f64,
    /// Smoothing parameter `ε` of the lagged-diffusivity matrices.
    pub smooth_eps: f64,
    /// Neighbor structure for the variation term.
    pub graph: PenaltyGraph,
}

impl Penalty {
    /// Creates a penalty with the default smoothing `ε = 1e−4`.
    pub fn new(beta: f64, gamma: f64, graph: PenaltyGraph) -> Result<Penalty> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::invalid(format!(
                "beta must be a nonnegative finite number, got {beta}"
            )));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::invalid(format!(
                "gamma must be a nonnegative finite number, got {gamma}"
            )));
        }
        Ok(Penalty {
            beta,
            gamma,
            smooth_eps: 1e-4,
            graph,
        })
    }

    /// Replaces the smoothing parameter; it must be positive.
    pub fn with_smooth_eps(mut self, eps: f64) -> Result<Penalty> {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::invalid(format!(
                "smoothing parameter must be positive, got {eps}"
            )));
        }
        self.smooth_eps = eps;
        Ok(self)
    }

    /// Checks that `a`'s length is compatible with the graph.
    fn check_dim(&self, a: &[f64]) -> Result<()> {
        if let Some(n) = self.graph.node_count() {
            if a.len() != n {
                return Err(Error::invalid(format!(
                    "parameter vector has {} entries but the graph has {n} nodes",
                    a.len()
                )));
            }
        }
        Ok(())
    }

    /// Evaluates `β‖a‖₂² + γ(‖a‖₁ + TV(a))`.
    pub fn value(&self, a: &[f64]) -> Result<f64> {
        self.check_dim(a)?;
        let sq: f64 = a.iter().map(|v| v * v).sum();
        let abs: f64 = a.iter().map(|v| v.abs()).sum();
        let tv: f64 = self
            .graph
            .edges()
            .iter()
            .map(|&(i, j)| (a[i] - a[j]).abs())
            .sum();
        Ok(self.beta * sq + self.gamma * (abs + tv))
    }

    /// Builds the smoothed step-equation matrices `(L₁, L₂)` at the current
    /// iterate: `L₁ = diag(1/√(aᵢ²+ε²))` and `L₂` the graph Laplacian with
    /// edge weights `1/√((aᵢ−aⱼ)²+ε²)`.
    pub fn matrices(&self, a: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_dim(a)?;
        let n = a.len();
        let eps2 = self.smooth_eps * self.smooth_eps;
        let mut l1 = DMatrix::zeros(n, n);
        for (i, v) in a.iter().enumerate() {
            l1[(i, i)] = 1.0 / (v * v + eps2).sqrt();
        }
        let mut l2 = DMatrix::zeros(n, n);
        for (i, j) in self.graph.edges() {
            let d = a[i] - a[j];
            let w = 1.0 / (d * d + eps2).sqrt();
            l2[(i, i)] += w;
            l2[(j, j)] += w;
            l2[(i, j)] -= w;
            l2[(j, i)] -= w;
        }
        Ok((l1, l2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_vector_has_no_variation() {
        let p = Penalty::new(0.7, 0.3, PenaltyGraph::Chain(5)).unwrap();
        let a = [1.5; 5];
        let expected = 0.7 * 5.0 * 1.5 * 1.5 + 0.3 * 5.0 * 1.5;
        assert_abs_diff_eq!(p.value(&a).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn chain_hand_sum() {
        let p = Penalty::new(0.0, 1.0, PenaltyGraph::Chain(3)).unwrap();
        // |1|+|2|+|4| = 7 and |1−2|+|2−4| = 3.
        assert_eq!(p.value(&[1.0, 2.0, 4.0]).unwrap(), 10.0);
    }

    #[test]
    fn value_scales_homogeneously() {
        let graph = PenaltyGraph::Grid {
            blocks_x: 3,
            blocks_y: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..9).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let doubled: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let l2_only = Penalty::new(1.0, 0.0, graph.clone()).unwrap();
        let bv_only = Penalty::new(0.0, 1.0, graph).unwrap();
        assert_abs_diff_eq!(
            l2_only.value(&doubled).unwrap(),
            4.0 * l2_only.value(&a).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bv_only.value(&doubled).unwrap(),
            2.0 * bv_only.value(&a).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn l1_diagonal_approaches_reciprocal_magnitudes() {
        let p = Penalty::new(0.0, 1.0, PenaltyGraph::None)
            .unwrap()
            .with_smooth_eps(1e-8)
            .unwrap();
        let (l1, _) = p.matrices(&[2.0, -3.0]).unwrap();
        assert_abs_diff_eq!(l1[(0, 0)], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(l1[(1, 1)], 1.0 / 3.0, epsilon = 1e-10);
        assert_eq!(l1[(0, 1)], 0.0);
    }

    #[test]
    fn laplacian_annihilates_constants() {
        for graph in [
            PenaltyGraph::Chain(6),
            PenaltyGraph::Grid {
                blocks_x: 3,
                blocks_y: 2,
            },
        ] {
            let n = graph.node_count().unwrap();
            let p = Penalty::new(0.0, 1.0, graph).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, l2) = p.matrices(&a).unwrap();
            let ones = nalgebra::DVector::from_element(n, 1.0);
            let image = &l2 * &ones;
            for v in image.iter() {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_node_chain_weight() {
        let p = Penalty::new(0.0, 1.0, PenaltyGraph::Chain(2))
            .unwrap()
            .with_smooth_eps(1.0)
            .unwrap();
        let (_, l2) = p.matrices(&[0.0, 1.0]).unwrap();
        let w = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(l2[(0, 0)], w, epsilon = 1e-15);
        assert_abs_diff_eq!(l2[(1, 1)], w, epsilon = 1e-15);
        assert_abs_diff_eq!(l2[(0, 1)], -w, epsilon = 1e-15);
        assert_abs_diff_eq!(l2[(1, 0)], -w, epsilon = 1e-15);
    }

    #[test]
    fn matrices_are_symmetric_psd_with_zero_row_sums() {
        let graphs = [
            PenaltyGraph::None,
            PenaltyGraph::Chain(7),
            PenaltyGraph::Grid {
                blocks_x: 3,
                blocks_y: 3,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for graph in graphs {
            let n = graph.node_count().unwrap_or(7);
            let p = Penalty::new(0.0, 1.0, graph).unwrap();
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (l1, l2) = p.matrices(&a).unwrap();
            for i in 0..n {
                assert!(l1[(i, i)] > 0.0);
                let row_sum: f64 = (0..n).map(|j| l2[(i, j)]).sum();
                assert_abs_diff_eq!(row_sum, 0.0, epsilon = 1e-12);
                for j in 0..n {
                    assert_eq!(l2[(i, j)], l2[(j, i)]);
                }
            }
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let xv = nalgebra::DVector::from_column_slice(&x);
                assert!(xv.dot(&(&l2 * &xv)) >= -1e-12);
                assert!(xv.dot(&(&l1 * &xv)) >= 0.0);
            }
        }
    }

    #[test]
    fn value_invariant_under_graph_automorphisms() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let chain = Penalty::new(0.4, 1.3, PenaltyGraph::Chain(6)).unwrap();
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let reversed: Vec<f64> = a.iter().rev().cloned().collect();
        assert_abs_diff_eq!(
            chain.value(&a).unwrap(),
            chain.value(&reversed).unwrap(),
            epsilon = 1e-13
        );

        // Transposing a square grid maps region bx·n+by to by·n+bx.
        let grid = Penalty::new(0.4, 1.3, PenaltyGraph::Grid {
            blocks_x: 3,
            blocks_y: 3,
        })
        .unwrap();
        let b: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut transposed = vec![0.0; 9];
        for bx in 0..3 {
            for by in 0..3 {
                transposed[by * 3 + bx] = b[bx * 3 + by];
            }
        }
        assert_abs_diff_eq!(
            grid.value(&b).unwrap(),
            grid.value(&transposed).unwrap(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn quadratic_forms_converge_to_exact_norms() {
        let cases: [(&[f64], PenaltyGraph); 3] = [
            (&[1.0, -2.0, 3.0], PenaltyGraph::Chain(3)),
            (&[0.5, 2.5], PenaltyGraph::Chain(2)),
            (
                &[1.0, 4.0, 2.0, -1.0],
                PenaltyGraph::Grid {
                    blocks_x: 2,
                    blocks_y: 2,
                },
            ),
        ];
        for (a, graph) in cases {
            let exact_l1: f64 = a.iter().map(|v| v.abs()).sum();
            let exact_tv: f64 = graph
                .edges()
                .iter()
                .map(|&(i, j)| (a[i] - a[j]).abs())
                .sum();
            let av = nalgebra::DVector::from_column_slice(a);
            let mut last_err = f64::INFINITY;
            for eps in [1e-2, 1e-4, 1e-6] {
                let p = Penalty::new(0.0, 1.0, graph.clone())
                    .unwrap()
                    .with_smooth_eps(eps)
                    .unwrap();
                let (l1, l2) = p.matrices(a).unwrap();
                let err = (av.dot(&(&l1 * &av)) - exact_l1).abs()
                    + (av.dot(&(&l2 * &av)) - exact_tv).abs();
                assert!(err < last_err, "smoothing error must shrink with eps");
                last_err = err;
            }
            assert!(last_err < 1e-9);
        }
    }

    #[test]
    fn grid_edges_enumerate_neighbors_once() {
        let graph = PenaltyGraph::Grid {
            blocks_x: 2,
            blocks_y: 3,
        };
        assert_eq!(
            graph.edges(),
            vec![(0, 1), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (4, 5)]
        );
        assert_eq!(PenaltyGraph::Chain(4).edges(), vec![(0, 1), (1, 2), (2, 3)]);
        assert!(PenaltyGraph::None.edges().is_empty());
    }

    #[test]
    fn spectral_penalty_skips_variation() {
        let p = Penalty::new(0.0, 2.0, PenaltyGraph::None).unwrap();
        assert_eq!(p.value(&[1.0, -1.0, 2.0]).unwrap(), 8.0);
        let (_, l2) = p.matrices(&[1.0, -1.0, 2.0]).unwrap();
        assert!(l2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_invalid_weights_and_dimensions() {
        assert!(Penalty::new(-0.1, 0.0, PenaltyGraph::None).is_err());
        assert!(Penalty::new(0.0, -1.0, PenaltyGraph::None).is_err());
        assert!(Penalty::new(0.0, 0.0, PenaltyGraph::None)
            .unwrap()
            .with_smooth_eps(0.0)
            .is_err());
        let p = Penalty::new(1.0, 1.0, PenaltyGraph::Chain(3)).unwrap();
        assert!(p.value(&[1.0, 2.0]).is_err());
        assert!(p.matrices(&[1.0, 2.0]).is_err());
    }
}
