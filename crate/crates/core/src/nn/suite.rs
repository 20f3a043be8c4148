//! Finite-difference checks of every graph primitive and the composite
//! layers built from them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::nn::graph::{Graph, Mode, Var};
use crate::nn::layers::{BiLstm, Encoder, EncoderConfig, LayerNorm, Mlp, MultiHeadAttention};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

type Loss = Box<dyn Fn(&mut Graph) -> Result<Var>>;

/// Reduces a matrix to a scalar with non-uniform weights so gradients are
/// not trivially symmetric.
fn weighted_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let (r, c) = g.shape(x);
    let w: Vec<f64> = (0..r * c).map(|k| ((k * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let w = g.input(Tensor::matrix(r, c, w)?);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn primitives(store: &mut ParamStore, seed: u64) -> Vec<(&'static str, Loss)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = store.add_uniform("a", 3, 4, 1, &mut r);
    let b = store.add_uniform("b", 4, 2, 1, &mut r);
    let c = store.add_uniform("c", 3, 4, 1, &mut r);
    let row = store.add_uniform("row", 1, 4, 1, &mut r);
    let col = store.add_uniform("col", 3, 1, 1, &mut r);
    let mut out: Vec<(&'static str, Loss)> = Vec::new();
    macro_rules! unary {
        ($name:expr, $f:expr) => {
            out.push((
                $name,
                Box::new(move |g: &mut Graph| {
                    let x = g.param(a);
                    let y = $f(g, x)?;
                    weighted_sum(g, y)
                }),
            ));
        };
    }
    unary!("softplus", |g: &mut Graph, x| Ok::<_, Error>(g.softplus(x)));
    unary!("sigmoid", |g: &mut Graph, x| Ok::<_, Error>(g.sigmoid(x)));
    unary!("tanh", |g: &mut Graph, x| Ok::<_, Error>(g.tanh(x)));
    unary!("relu", |g: &mut Graph, x| Ok::<_, Error>(g.relu(x)));
    unary!("exp", |g: &mut Graph, x| Ok::<_, Error>(g.exp(x)));
    unary!("scale", |g: &mut Graph, x| Ok::<_, Error>(g.scale(x, -1.7)));
    unary!("softmax_rows", |g: &mut Graph, x| g.softmax_rows(x, None));
    unary!("masked_softmax", |g: &mut Graph, x| {
        let mut m = vec![0.0; 12];
        m[1] = f64::NEG_INFINITY;
        m[6] = f64::NEG_INFINITY;
        g.softmax_rows(x, Some(&Tensor::matrix(3, 4, m)?))
    });
    unary!("log_softmax_rows", |g: &mut Graph, x| Ok::<_, Error>(g.log_softmax_rows(x)));
    unary!("layer_norm_rows", |g: &mut Graph, x| Ok::<_, Error>(g.layer_norm_rows(x)));
    unary!("transpose", |g: &mut Graph, x| Ok::<_, Error>(g.transpose(x)));
    unary!("slice_cols", |g: &mut Graph, x| g.slice_cols(x, 1, 2));
    unary!("slice_rows", |g: &mut Graph, x| g.slice_rows(x, 1, 2));
    unary!("gather_rows", |g: &mut Graph, x| g.gather_rows(x, &[2, 0, 2]));
    unary!("gather", |g: &mut Graph, x| g.gather(x, &[(0, 1), (2, 3), (0, 1)]));
    unary!("mean", |g: &mut Graph, x| Ok::<_, Error>(g.mean(x)));
    unary!("mean_rows", |g: &mut Graph, x| Ok::<_, Error>(g.mean_rows(x)));
    unary!("sum_cols", |g: &mut Graph, x| Ok::<_, Error>(g.sum_cols(x)));
    unary!("normalize_rows_l2", |g: &mut Graph, x| Ok::<_, Error>(g.normalize_rows_l2(x)));
    unary!("clamp_min", |g: &mut Graph, x| Ok::<_, Error>(g.clamp_min(x, 0.05)));
    unary!("add_scalar", |g: &mut Graph, x| Ok::<_, Error>(g.add_scalar(x, 0.3)));
    macro_rules! binary {
        ($name:expr, $p:expr, $q:expr, $f:expr) => {
            let (p, q) = ($p, $q);
            out.push((
                $name,
                Box::new(move |g: &mut Graph| {
                    let (x, y) = (g.param(p), g.param(q));
                    let z = $f(g, x, y)?;
                    weighted_sum(g, z)
                }),
            ));
        };
    }
    binary!("matmul", a, b, |g: &mut Graph, x, y| g.matmul(x, y));
    binary!("add", a, c, |g: &mut Graph, x, y| g.add(x, y));
    binary!("sub", a, c, |g: &mut Graph, x, y| g.sub(x, y));
    binary!("mul", a, c, |g: &mut Graph, x, y| g.mul(x, y));
    binary!("add_row", a, row, |g: &mut Graph, x, y| g.add_row(x, y));
    binary!("mul_row", a, row, |g: &mut Graph, x, y| g.mul_row(x, y));
    binary!("mul_col", a, col, |g: &mut Graph, x, y| g.mul_col(x, y));
    binary!("concat_cols", a, col, |g: &mut Graph, x, y| g.concat_cols(&[x, y, x]));
    binary!("concat_rows", a, row, |g: &mut Graph, x, y| g.concat_rows(&[y, x]));
    out
}

/// One report per primitive, then attention alone and a full
/// encoder/layer-norm/MLP/BiLSTM stack.
pub fn primitive_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut store = ParamStore::new();
    let losses = primitives(&mut store, seed);
    let gc = GradCheckConfig { seed, ..GradCheckConfig::default() };
    let mut out = Vec::with_capacity(losses.len() + 2);
    for (name, loss) in &losses {
        out.push((name.to_string(), grad_check(&store, Mode::Eval, gc, loss)?));
    }

    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5A);
    let mut store = ParamStore::new();
    let x = store.add_uniform("x", 5, 8, 1, &mut r);
    let attn = MultiHeadAttention::new(&mut store, "attn", 8, 2, false, &mut r);
    let ln = LayerNorm::new(&mut store, "ln", 8);
    let enc = Encoder::new(
        &mut store,
        "enc",
        EncoderConfig { width: 8, layers: 2, heads: 2, ff_width: 16, dropout: 0.1 },
        false,
        &mut r,
    );
    let mlp = Mlp::new(&mut store, "mlp", &[8, 6, 3], false, &mut r);
    let lstm = BiLstm::new(&mut store, "lstm", 3, 4, &mut r);
    let seqs = vec![
        Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.5, 0.0, -0.4])?,
        Tensor::matrix(0, 3, vec![])?,
        Tensor::matrix(3, 3, vec![0.2, 0.1, -0.1, 0.3, 0.3, 0.9, -0.5, 0.2, 0.0])?,
        Tensor::matrix(2, 3, vec![0.0, 0.7, 0.1, -0.3, 0.2, 0.2])?,
    ];
    let gc = GradCheckConfig { max_coords_per_param: 8, ..gc };
    let report = grad_check(&store, Mode::Eval, gc, |g| {
        let xv = g.param(x);
        let y = attn.forward(g, xv, None)?;
        weighted_sum(g, y)
    })?;
    out.push(("multi-head attention".to_string(), report));
    let report = grad_check(&store, Mode::Eval, gc, |g| {
        let xv = g.param(x);
        let h = enc.forward(g, xv, None)?;
        let h = ln.forward(g, h)?;
        let h = mlp.forward(g, h)?;
        let e = lstm.forward_batch(g, &seqs)?;
        let a = weighted_sum(g, h)?;
        let b = weighted_sum(g, e)?;
        g.add(a, b)
    })?;
    out.push(("encoder + layer norm + mlp + bilstm".to_string(), report));
    Ok(out)
}
