//! Reverse-mode autodiff over dense `f64` matrices, with the layers, the
//! optimizer and the checkpoint format the policy network is built from.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod suite;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, Mode, Var};
pub use layers::{BiLstm, Encoder, EncoderConfig, EncoderLayer, LayerNorm, Linear, Lstm, Mlp, MultiHeadAttention};
pub use optim::{Adam, AdamConfig};
pub use suite::primitive_checks;
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_closed_forms() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s, Mode::Eval);
        let z = g.input(Tensor::row(&[0.0, 0.0]));
        let p = g.softmax_rows(z, None).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
        let c = g.input(Tensor::row(&[3.0; 4]));
        let n = g.layer_norm_rows(c);
        assert!(g.value(n).data().iter().all(|&v| v == 0.0));
        let x = g.input(Tensor::scalar(0.0));
        let sp = g.softplus(x);
        assert!((g.value(sp).item() - std::f64::consts::LN_2).abs() < 1e-15);

        let m = g.input(Tensor::row(&[1.0, 2.0, 3.0]));
        let mask = Tensor::row(&[0.0, f64::NEG_INFINITY, 0.0]);
        let p = g.softmax_rows(m, Some(&mask)).unwrap();
        assert_eq!(g.value(p).data()[1], 0.0);
        assert!((g.value(p).data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_gradient_at_zero_is_half() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::scalar(0.0));
        let mut g = Graph::new(&s, Mode::Eval);
        let v = g.param(x);
        let y = g.softplus(v);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x, &s).item(), 0.5);
    }

    #[test]
    fn matmul_sum_gradient_is_broadcast_transpose() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        let b = s.add("b", Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let unused = s.add("unused", Tensor::zeros(1, 1));
        let mut g = Graph::new(&s, Mode::Eval);
        let (av, bv) = (g.param(a), g.param(b));
        let ab = g.matmul(av, bv).unwrap();
        let out = g.sum(ab);
        let grads = g.backward(out).unwrap();
        // d/dA sum(AB) = 1 * B^T: row sums of B repeated on every row.
        assert_eq!(grads.get(a, &s).data(), &[3.0, 7.0, 11.0, 3.0, 7.0, 11.0]);
        assert_eq!(grads.get(unused, &s).data(), &[0.0]);
    }

    #[test]
    fn dropout_only_in_training_and_refused_by_grad_check() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::filled(4, 25, 1.0));
        let loss = |g: &mut Graph| {
            let v = g.param(x);
            let d = g.dropout(v, 0.5);
            Ok(g.sum(d))
        };
        let mut eval = Graph::new(&s, Mode::Eval);
        let out = loss(&mut eval).unwrap();
        assert_eq!(eval.value(out).item(), 100.0);
        let mut train = Graph::new(&s, Mode::Train { seed: 3 });
        let v = train.param(x);
        let d = train.dropout(v, 0.5);
        let vals = train.value(d).data().to_vec();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(vals.iter().any(|&v| v == 0.0));
        let refused = grad_check(&s, Mode::Train { seed: 1 }, GradCheckConfig::default(), loss);
        assert!(matches!(refused, Err(crate::Error::Config(_))));
    }

    #[test]
    fn quadratic_grad_check_is_tight() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let th = s.add_uniform("theta", 3, 4, 1, &mut rng);
        let report = grad_check(&s, Mode::Eval, GradCheckConfig::default(), |g| {
            let v = g.param(th);
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 12);
    }
}
