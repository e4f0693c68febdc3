//! Central-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Coordinates checked per parameter tensor at most.
pub const MAX_COORDS_PER_TENSOR: usize = 64;
/// Absolute disagreement treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest `|analytic − numeric|`, floor not applied.
    pub max_abs_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index with the largest error.
    pub worst: Option<(String, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Compares backprop gradients of `loss` against `(f(θ+h) − f(θ−h)) / 2h`.
///
/// `loss` must build a fresh graph from the current parameter values and
/// return its scalar output; it has to be deterministic.
pub fn finite_diff_check<F>(
    params: &mut ParamStore,
    h: f64,
    seed: u64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    let (graph, out) = loss(params)?;
    let f0 = graph.value(out).data()[0];
    let (again, out2) = loss(params)?;
    let f1 = again.value(out2).data()[0];
    if f0.to_bits() != f1.to_bits() {
        return Err(Error::Check(format!(
            "loss is not deterministic: {f0} then {f1}"
        )));
    }
    let grads = graph.backward(out);
    let mut analytic = ParamStore::clone(params);
    analytic.zero_grads();
    graph.accumulate_param_grads(&grads, &mut analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = params.value(id).len();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, MAX_COORDS_PER_TENSOR).into_vec();
            c.sort_unstable();
            c
        };
        let grad = analytic.value(id).grad().map(<[f64]>::to_vec);
        for i in coords {
            let x = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = x + h;
            let plus = eval(&mut loss, params)?;
            params.value_mut(id).data_mut()[i] = x - h;
            let minus = eval(&mut loss, params)?;
            params.value_mut(id).data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_ref().map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

fn eval<F>(loss: &mut F, params: &ParamStore) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    let (g, v) = loss(params)?;
    Ok(g.value(v).data()[0])
}
