//! Compares the factorized scoring head against a pairwise head that
//! scores every (worker, order) concatenation separately.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::{Graph, Mlp, Mode, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub workers: usize,
    pub orders: usize,
    pub trials: usize,
    /// Head evaluations (rows pushed through a scoring network).
    pub qk_head_passes: usize,
    pub pairwise_head_passes: usize,
    pub qk_seconds: f64,
    pub pairwise_seconds: f64,
    /// `pairwise_head_passes / qk_head_passes`.
    pub pass_ratio: f64,
    pub time_ratio: f64,
    pub output_shape: (usize, usize),
}

/// Fills an `n x m` score matrix both ways with heads of matched width.
pub fn qk_complexity_probe(n: usize, m: usize, trials: usize, width: usize, seed: u64) -> Result<ProbeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 16;
    let mut s = ParamStore::new();
    let f = Mlp::new(&mut s, "f", &[width, width, d], false, &mut rng);
    let gh = Mlp::new(&mut s, "g", &[width, width, d], false, &mut rng);
    let pair = Mlp::new(&mut s, "pair", &[2 * width, width, 1], false, &mut rng);
    let mut random = |rows: usize| {
        let data = (0..rows * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, width, data).expect("sized")
    };
    let (w, o) = (random(n), random(m));
    let pairs = {
        let mut data = Vec::with_capacity(n * m * 2 * width);
        for i in 0..n {
            for j in 0..m {
                data.extend_from_slice(w.row_slice(i));
                data.extend_from_slice(o.row_slice(j));
            }
        }
        Tensor::matrix(n * m, 2 * width, data)?
    };

    let mut shape = (0, 0);
    let start = Instant::now();
    for _ in 0..trials {
        let mut g = Graph::new(&s, Mode::Eval);
        let (wv, ov) = (g.input(w.clone()), g.input(o.clone()));
        let fw = f.forward(&mut g, wv)?;
        let go = gh.forward(&mut g, ov)?;
        let keys = crate::policy::positive_normalize(&mut g, go);
        let kt = g.transpose(keys);
        let out = g.matmul(fw, kt)?;
        shape = g.shape(out);
    }
    let qk_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    for _ in 0..trials {
        let mut g = Graph::new(&s, Mode::Eval);
        let pv = g.input(pairs.clone());
        let scores = pair.forward(&mut g, pv)?;
        debug_assert_eq!(g.shape(scores), (n * m, 1));
    }
    let pairwise_seconds = start.elapsed().as_secs_f64();

    let qk_head_passes = n + m;
    let pairwise_head_passes = n * m;
    Ok(ProbeReport {
        workers: n,
        orders: m,
        trials,
        qk_head_passes,
        pairwise_head_passes,
        qk_seconds,
        pairwise_seconds,
        pass_ratio: pairwise_head_passes as f64 / qk_head_passes.max(1) as f64,
        time_ratio: pairwise_seconds / qk_seconds.max(1e-12),
        output_shape: shape,
    })
}
