use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::NnError;

/// Elman step: `h = σ(U·x + V·h_prev)`, `y = W·h`. Batched rows; `U: [H, D]`,
/// `V: [H, H]`, `W: [O, H]`.
pub fn basic_rnn_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    u: Var,
    v: Var,
    w: Var,
) -> Result<(Var, Var), NnError> {
    let a = g.affine(x, u, None)?;
    let b = g.affine(h_prev, v, None)?;
    let pre = g.add(a, b)?;
    let h = g.sigmoid(pre)?;
    let y = g.affine(h, w, None)?;
    Ok((h, y))
}

/// LSTM weights: `w_ih: [4H, D]`, `w_hh: [4H, H]`, `bias: [4H]`, gate rows in
/// the order input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl LstmWeights {
    /// Looks up `{prefix}.w_ih`, `{prefix}.w_hh` and `{prefix}.bias`.
    pub fn from_store<T: Scalar>(g: &mut Graph<'_, T>, prefix: &str) -> Result<Self, NnError> {
        Ok(LstmWeights {
            w_ih: g.param(&format!("{prefix}.w_ih"))?,
            w_hh: g.param(&format!("{prefix}.w_hh"))?,
            bias: g.param(&format!("{prefix}.bias"))?,
        })
    }
}

pub fn lstm_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    (h_prev, c_prev): (Var, Var),
    wt: &LstmWeights,
) -> Result<(Var, Var), NnError> {
    let hidden = g.shape(h_prev)[1];
    if g.shape(wt.w_hh) != [4 * hidden, hidden] || g.shape(c_prev) != g.shape(h_prev) {
        return Err(NnError::ShapeMismatch(format!(
            "lstm: w_hh {:?}, h {:?}, c {:?}",
            g.shape(wt.w_hh),
            g.shape(h_prev),
            g.shape(c_prev)
        )));
    }
    let zx = g.affine(x, wt.w_ih, Some(wt.bias))?;
    let zh = g.affine(h_prev, wt.w_hh, None)?;
    let z = g.add(zx, zh)?;
    let zi = g.slice_cols(z, 0, hidden)?;
    let zf = g.slice_cols(z, hidden, hidden)?;
    let zg = g.slice_cols(z, 2 * hidden, hidden)?;
    let zo = g.slice_cols(z, 3 * hidden, hidden)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let cand = g.tanh(zg)?;
    let o = g.sigmoid(zo)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}
