//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: each operation is evaluated as it is recorded, and
//! [`Graph::backward`] walks the tape in reverse to produce gradients for
//! every trainable leaf. Parameters live in a [`Params`] store outside the
//! graph, so a fresh graph is built per mini-batch.
//!
//! Conventions for nondifferentiable points: ReLU and `abs` use subgradient 0
//! at 0, and max pooling routes the whole gradient to the first maximal row.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{log_sum_exp, sigmoid, softplus, Graph, NodeId, Op};
pub use params::{Gradients, NamedTensor, ParamId, Params};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("{op}: {detail}")]
    Op { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(g: &mut Graph, v: &[f64]) -> NodeId {
        g.constant(Tensor::row(v.to_vec()))
    }

    #[test]
    fn relu_clips_negatives() {
        let mut g = Graph::new();
        let x = row(&mut g, &[-1.0, 0.0, 2.0]);
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn max_pool_over_column() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::column(vec![3.0, -1.0, 2.0]));
        let y = g.max_pool(x, 3).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
    }

    #[test]
    fn log_sum_exp_of_zeros() {
        let mut g = Graph::new();
        let x = row(&mut g, &[0.0, 0.0]);
        let y = g.log_sum_exp(x).unwrap();
        assert_abs_diff_eq!(g.value(y).data()[0], std::f64::consts::LN_2, epsilon = 1e-6);
        assert_abs_diff_eq!(
            log_sum_exp(&[1000.0, 1000.0]),
            1000.0 + 2f64.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut params = Params::new();
        let id = params.add("x", Tensor::row(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let sq = g.square(x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn softplus_gradient_at_zero_is_half() {
        let mut params = Params::new();
        let id = params.add("theta", Tensor::scalar(0.0));
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let loss = g.softplus(x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_abs_diff_eq!(grads.get(id).unwrap().data()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = row(&mut g, &[1.0, 2.0]);
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(DiffError::NotScalar { .. })));
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let c = g.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        assert!(g.add(a, c).unwrap_err().to_string().starts_with("add"));
    }

    #[test]
    fn max_pool_ties_route_to_first_row() {
        let mut params = Params::new();
        let id = params.add("x", Tensor::column(vec![1.0, 5.0, 5.0]));
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let m = g.max_pool(x, 3).unwrap();
        let loss = g.sum(m).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn dropout_mask_is_reused_in_backward() {
        let mut params = Params::new();
        let id = params.add("x", Tensor::row(vec![1.0; 200]));
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = g.dropout(x, 0.5, &mut rng).unwrap();
        let loss = g.sum(d).unwrap();
        let forward = g.value(d).data().to_vec();
        let grads = g.backward(loss).unwrap();
        // d(sum(x * mask))/dx = mask = forward value since x = 1
        assert_eq!(grads.get(id).unwrap().data(), forward.as_slice());
        assert!(forward.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(forward.contains(&0.0) && forward.contains(&2.0));
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let mut g = Graph::new();
        let x = row(&mut g, &[1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn windows_concatenates_consecutive_rows() {
        let mut g = Graph::new();
        // two sequences of length 3, d = 1
        let x = g.constant(Tensor::column(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = g.windows(x, 3, 2).unwrap();
        assert_eq!(g.value(w).shape(), &[4, 2]);
        assert_eq!(g.value(w).data(), &[1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 5.0, 6.0]);
    }

    #[test]
    fn broadcasting_binary_ops() {
        let mut g = Graph::new();
        let m = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.constant(Tensor::column(vec![10.0, 20.0]));
        let r = row(&mut g, &[1.0, -1.0]);
        let a = g.add(m, c).unwrap();
        assert_eq!(g.value(a).data(), &[11.0, 12.0, 23.0, 24.0]);
        let b = g.mul(m, r).unwrap();
        assert_eq!(g.value(b).data(), &[1.0, -2.0, 3.0, -4.0]);
    }

    /// Every differentiable op against central differences on random inputs
    /// kept away from kinks.
    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let mut params = Params::new();
            let mut rand_t = |r: usize, c: usize, lo: f64, hi: f64| {
                Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect())
                    .unwrap()
            };
            let a = params.add("a", rand_t(4, 3, -2.0, 2.0));
            let b = params.add("b", rand_t(3, 3, -2.0, 2.0));
            let pos = params.add("pos", rand_t(4, 3, 0.5, 2.0));
            let col = params.add("col", rand_t(4, 1, -1.0, 1.0));
            let table = params.add("table", rand_t(5, 3, -1.0, 1.0));

            let mut g = Graph::new();
            let (na, nb, np, nc, nt) = (
                g.param(&params, a),
                g.param(&params, b),
                g.param(&params, pos),
                g.param(&params, col),
                g.param(&params, table),
            );
            let terms = vec![
                g.matmul(na, nb).unwrap(),
                g.linear(na, nb).unwrap(),
                g.add(na, nc).unwrap(),
                g.sub(np, nc).unwrap(),
                g.mul(na, np).unwrap(),
                g.div(na, np).unwrap(),
                g.softplus(na).unwrap(),
                g.softsign(na).unwrap(),
                g.log(np).unwrap(),
                g.exp(na).unwrap(),
                g.square(na).unwrap(),
                g.softmax(na).unwrap(),
                g.log_softmax(na).unwrap(),
                g.gather(nt, vec![4, 0, 4, 2]).unwrap(),
            ];
            let mut total = g.concat_cols(terms).unwrap();
            let lse = g.log_sum_exp(total).unwrap();
            let sel = g.select_cols(total, vec![0, 5, 5, 17]).unwrap();
            let sel_sum = g.sum(sel).unwrap();
            let lse_sum = g.sum(lse).unwrap();
            total = g.add(sel_sum, lse_sum).unwrap();
            let w = g.windows(nt, 5, 2).unwrap();
            let seg = g.segment_mean(w, vec![1, 3]).unwrap();
            let seg_sum = g.sum(seg).unwrap();
            let weighted = g.scale(seg_sum, 0.7).unwrap();
            let shifted = g.add_scalar(weighted, 3.0).unwrap();
            let loss = g.add(total, shifted).unwrap();

            let report = gradient_check(&mut g, loss, 1e-5).unwrap();
            assert_eq!(report.excluded, 0, "trial {trial}");
            assert!(
                report.max_rel_error < 1e-4,
                "trial {trial}: {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn kinked_ops_are_checked_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut params = Params::new();
            let data: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let id = params.add("x", Tensor::matrix(6, 2, data).unwrap());
            let mut g = Graph::new();
            let x = g.param(&params, id);
            let r = g.relu(x).unwrap();
            let a = g.abs(x).unwrap();
            let c = g.clamp(x, -1.0, 1.0).unwrap();
            let m = g.max_pool(x, 3).unwrap();
            let ra = g.mul(r, a).unwrap();
            let s1 = g.sum(ra).unwrap();
            let s2 = g.sum(c).unwrap();
            let s3 = g.sum(m).unwrap();
            let s12 = g.add(s1, s2).unwrap();
            let loss = g.add(s12, s3).unwrap();
            let report = gradient_check(&mut g, loss, 1e-6).unwrap();
            assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
        }
    }

    #[test]
    fn abs_at_exact_zero_is_excluded() {
        let mut params = Params::new();
        let id = params.add("r", Tensor::row(vec![0.0, 1.5]));
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let a = g.abs(x).unwrap();
        let loss = g.sum(a).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[0.0, 1.0]);
        let report = gradient_check(&mut g, loss, 1e-5).unwrap();
        assert_eq!(report.excluded, 1);
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn recompute_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = Params::new();
        let id = params.add(
            "x",
            Tensor::matrix(3, 4, (0..12).map(|_| rng.random::<f64>()).collect()).unwrap(),
        );
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let d = g.dropout(x, 0.3, &mut rng).unwrap();
        let s = g.softmax(d).unwrap();
        let before = g.value(s).clone();
        g.recompute().unwrap();
        assert_eq!(g.value(s), &before);
    }
}
