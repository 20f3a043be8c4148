use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Mode, Var};
use crate::nn::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Coordinates checked per parameter tensor; larger tensors are sampled.
    pub max_coords_per_param: usize,
    pub seed: u64,
    /// Floor on the denominator of the relative error.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-5, max_coords_per_param: 16, seed: 0, abs_floor: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and coordinate of the worst mismatch.
    pub worst: Option<(String, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of a scalar loss with central
/// differences. The loss is rebuilt from scratch for every evaluation, so
/// it must be deterministic: stochastic modes are refused.
pub fn grad_check<F>(store: &ParamStore, mode: Mode, cfg: GradCheckConfig, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if mode != Mode::Eval {
        return Err(Error::Config("grad_check needs a deterministic graph; dropout must be disabled".into()));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s, Mode::Eval);
        let out = loss(&mut g)?;
        Ok(g.value(out).item())
    };
    let grads = {
        let mut g = Graph::new(store, Mode::Eval);
        let out = loss(&mut g)?;
        g.backward(out)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for id in store.ids() {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= cfg.max_coords_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.max_coords_per_param).into_vec()
        };
        let analytic = grads.get(id, store);
        for k in coords {
            let numeric = central_difference(&mut probe, id, k, cfg.h, &eval)?;
            let err = relative_error(analytic.data()[k], numeric, cfg.abs_floor);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

fn central_difference(
    probe: &mut ParamStore,
    id: ParamId,
    k: usize,
    h: f64,
    eval: &dyn Fn(&ParamStore) -> Result<f64>,
) -> Result<f64> {
    let orig = probe.get(id).data()[k];
    probe.get_mut(id).data_mut()[k] = orig + h;
    let up = eval(probe)?;
    probe.get_mut(id).data_mut()[k] = orig - h;
    let down = eval(probe)?;
    probe.get_mut(id).data_mut()[k] = orig;
    Ok((up - down) / (2.0 * h))
}
