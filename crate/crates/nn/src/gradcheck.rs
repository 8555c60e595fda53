//! Central finite-difference checks of backward-pass gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Mode, Var};
use crate::params::ParameterStore;
use crate::NnError;

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Draws rejected because a kink lies within the step.
    pub kinks: usize,
    pub max_rel_error: f64,
}

/// `|a − b| / max(|a|, |b|)`, floored at 1e-8 in the denominator.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares backward gradients of `build`'s scalar output with central
/// differences at `per_tensor` random entries of every parameter tensor.
///
/// Central differences with steps `STEP` and `STEP / 2` agree to O(h²) on a
/// smooth function. When they disagree by more than 1e-6 relative, a kink
/// (ReLU at 0, a maxpool near-tie, |·| at 0) lies within the step and the
/// draw is redrawn, up to 50 times per tensor; rejected draws are counted
/// in `kinks`. The reported error uses the `STEP` difference.
pub fn check_gradients<F>(
    store: &ParameterStore<f64>,
    mode: Mode,
    per_tensor: usize,
    seed: u64,
    build: F,
) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, NnError>,
{
    let mut analytic = store.clone();
    {
        let mut g = Graph::new(store, mode, true);
        let loss = build(&mut g)?;
        let grads = g.backward(loss)?;
        analytic.zero_grad();
        grads.accumulate_into(&mut analytic);
    }
    let eval = |s: &ParameterStore<f64>| -> Result<f64, NnError> {
        let mut g = Graph::new(s, mode, false);
        let loss = build(&mut g)?;
        Ok(g.value(loss)[0])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck {
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
    };
    let mut probe = store.clone();
    for pid in 0..store.params().len() {
        let (mut done, mut rejected) = (0, 0);
        while done < per_tensor && rejected < 50 {
            let i = rng.gen_range(0..store.param(pid).value.len());
            let orig = probe.param(pid).value.data[i];
            let mut central = |h: f64| -> Result<f64, NnError> {
                probe.params_mut()[pid].value.data[i] = orig + h;
                let up = eval(&probe)?;
                probe.params_mut()[pid].value.data[i] = orig - h;
                let down = eval(&probe)?;
                probe.params_mut()[pid].value.data[i] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let (full, half) = (central(STEP)?, central(STEP / 2.0)?);
            if (full - half).abs() > 1e-6 * full.abs().max(half.abs()) + 1e-8 {
                out.kinks += 1;
                rejected += 1;
                continue;
            }
            out.max_rel_error = out.max_rel_error.max(rel_error(analytic.param(pid).grad[i], full));
            out.checked += 1;
            done += 1;
        }
    }
    Ok(out)
}
