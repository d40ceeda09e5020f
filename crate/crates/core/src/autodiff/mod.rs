//! Reverse-mode automatic differentiation on dense f64 tensors.
//!
//! Operations executed through a [`Graph`] are recorded in execution order;
//! [`Graph::backward`] replays them in reverse and accumulates gradients into
//! each tensor's grad slot. Recording and backward are single-threaded per
//! training context.

mod graph;
mod optim;
mod tensor;

pub use graph::{cosine_similarity, CosineSim, GradStore, Graph, PROB_FLOOR};
pub use optim::{clip_global_norm, init_normal, init_zeros, AdamState};
pub use tensor::{zero_grads, Tensor};

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(values: [[f64; 2]; 2]) -> Tensor {
        Tensor::param(&[2, 2], values.concat()).unwrap()
    }

    #[test]
    fn matmul_identity_passes_through() {
        let mut g = Graph::new();
        let eye = Tensor::constant(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let m = Tensor::param(&[3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let out = g.matmul(&eye, &m).unwrap();
        assert_eq!(out.values(), m.values());
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::new();
        let a = t2([[1.0, 2.0], [3.0, 4.0]]);
        let b = Tensor::param(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = g.matmul(&a, &b).unwrap();
        assert_eq!(c.values(), vec![17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        let err = g.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let mut g = Graph::new();
        let x = Tensor::constant(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(g.softmax(&x, 0).unwrap().values(), vec![0.5, 0.5]);
        let big = Tensor::constant(&[2], vec![1000.0, 1000.0]).unwrap();
        let p = g.softmax(&big, 0).unwrap().values();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_exp_normalize() {
        let mut g = Graph::new();
        let x = Tensor::constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = g.softmax(&x, 0).unwrap().values();
        let z: f64 = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (got, want) in p.iter().zip([1f64, 2.0, 3.0].iter().map(|v| v.exp() / z)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_similarity_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap().value - 1.0).abs() < 1e-12);
        let c = cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(!c.degenerate);
        // Direct evaluation: 32 / (sqrt(14) * sqrt(77))
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c.value - 0.974_631_846_197_076_8).abs() < 1e-12);
        let z = cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.degenerate);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let p = Tensor::constant(&[2], vec![0.5, 0.5]).unwrap();
        let l = g.cross_entropy(&p, 0).unwrap();
        assert!((l.item() - std::f64::consts::LN_2).abs() < 1e-12);
        let certain = Tensor::constant(&[2], vec![1.0, 0.0]).unwrap();
        assert_eq!(g.cross_entropy(&certain, 0).unwrap().item(), 0.0);
        // Clamped rather than infinite.
        let l = g.cross_entropy(&certain, 1).unwrap();
        assert!(l.item().is_finite() && l.item() > 0.0);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let p = Tensor::param(&[2, 3], vec![1.0; 6]).unwrap();
        let loss = g.sum(&p);
        g.backward(&loss).unwrap();
        assert_eq!(p.grad(), vec![1.0; 6]);
    }

    #[test]
    fn backward_elementwise_square() {
        let mut g = Graph::new();
        let p = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let sq = g.mul(&p, &p).unwrap();
        let loss = g.sum(&sq);
        g.backward(&loss).unwrap();
        assert_eq!(p.grad(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar_graph_output() {
        let mut g = Graph::new();
        let p = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let doubled = g.scale(&p, 2.0);
        assert!(g.backward(&doubled).is_err());
        let constant = Tensor::scalar(1.0);
        assert!(g.backward(&constant).is_err());
    }

    #[test]
    fn backward_twice_doubles_every_grad() {
        let mut g = Graph::new();
        let p = Tensor::param(&[4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let sq = g.mul(&p, &p).unwrap();
        let s = g.sigmoid(&sq);
        let loss = g.sum(&s);
        g.backward(&loss).unwrap();
        let once = p.grad();
        g.backward(&loss).unwrap();
        let twice = p.grad();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero_before_affine() {
        let mut g = Graph::new();
        let x = Tensor::param(&[1, 4], vec![3.0; 4]).unwrap();
        let gain = Tensor::constant(&[4], vec![1.0; 4]).unwrap();
        let bias = Tensor::constant(&[4], vec![0.0; 4]).unwrap();
        let y = g.layer_norm(&x, &gain, &bias).unwrap();
        for v in y.values() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardizes_random_rows() {
        use rand::Rng;
        let mut rng = crate::util::substream(11, "ln-test");
        let n = 64;
        let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let mut g = Graph::new();
        let x = Tensor::param(&[1, n], values).unwrap();
        let gain = Tensor::constant(&[n], vec![1.0; n]).unwrap();
        let bias = Tensor::constant(&[n], vec![0.0; n]).unwrap();
        let y = g.layer_norm(&x, &gain, &bias).unwrap().values();
        let mean: f64 = y.iter().sum::<f64>() / n as f64;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-7, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-5, "var {var}");
    }

    #[test]
    fn causal_softmax_rows_sum_to_one_and_mask_is_exact() {
        let mut g = Graph::new();
        let x = Tensor::param(&[3, 3], vec![0.3, 9.0, -2.0, 0.1, 0.2, 5.0, 1.0, 2.0, 3.0]).unwrap();
        let p = g.causal_softmax(&x).unwrap().values();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.0);
        assert_eq!(p[5], 0.0);
        assert!((p[3] + p[4] - 1.0).abs() < 1e-9);
        assert!((p[6] + p[7] + p[8] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let p = Tensor::param(&[1], vec![5.0]).unwrap();
        let mut adam = AdamState::new(0.1).unwrap();
        for _ in 0..500 {
            p.zero_grad();
            // d(x^2)/dx = 2x
            p.add_to_grad(&[2.0 * p.item()]);
            adam.step(std::slice::from_ref(&p));
        }
        assert!(p.item().abs() < 1e-2, "x = {}", p.item());
    }

    #[test]
    fn adam_zero_grad_keeps_bits() {
        let p = Tensor::param(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let before: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        let mut adam = AdamState::new(0.001).unwrap();
        adam.step(std::slice::from_ref(&p));
        adam.step(std::slice::from_ref(&p));
        assert_eq!(adam.step_count(), 2);
        let after: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn adam_first_step_moves_by_bias_corrected_signed_rate() {
        // From zero moments, one step with grad g moves by
        // lr * (g / (1-b1)) / bc1 / (sqrt(g^2 (1-b2)/bc2) + eps) ≈ lr * sign(g).
        let p = Tensor::param(&[2], vec![1.0, -1.0]).unwrap();
        p.add_to_grad(&[0.3, -0.7]);
        let mut adam = AdamState::new(0.001).unwrap();
        adam.step(std::slice::from_ref(&p));
        let moved = p.values();
        let expected0 = 1.0 - 0.001 * 0.3 / (0.3f64.powi(2).sqrt() + 1e-8);
        let expected1 = -1.0 + 0.001 * 0.7 / (0.7f64.powi(2).sqrt() + 1e-8);
        assert!((moved[0] - expected0).abs() < 1e-12);
        assert!((moved[1] - expected1).abs() < 1e-12);
    }

    #[test]
    fn clip_rescales_only_when_above_norm() {
        let p = Tensor::param(&[2], vec![0.0, 0.0]).unwrap();
        p.add_to_grad(&[3.0, 4.0]);
        clip_global_norm(std::slice::from_ref(&p), 1.0);
        let g = p.grad();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        p.zero_grad();
        p.add_to_grad(&[0.3, 0.4]);
        clip_global_norm(std::slice::from_ref(&p), 1.0);
        assert_eq!(p.grad(), vec![0.3, 0.4]);
    }

    #[test]
    fn masked_softmax_renormalizes_over_active() {
        let mut g = Graph::new();
        let x = Tensor::param(&[1, 3], vec![1.0, 5.0, 1.0]).unwrap();
        let p = g.masked_softmax(&x, &[true, false, true]).unwrap().values();
        assert_eq!(p[1], 0.0);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut g = Graph::new();
        let mut rng = crate::util::substream(3, "dropout");
        let x = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = g.dropout(&x, 0.0, &mut rng);
        assert_eq!(y.values(), x.values());
    }
}
