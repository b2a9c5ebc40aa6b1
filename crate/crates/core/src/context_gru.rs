//! Bidirectional GRU over the fused utterance features.
//!
//! Gating per direction, with row-vector inputs:
//!
//! ```text
//! z = sigmoid(x W_z + h U_z + b_z)
//! r = sigmoid(x W_r + h U_r + b_r)
//! n = tanh(x W_n + (r * h) U_n + b_n)
//! h' = (1 - z) * h + z * n
//! ```

use crate::error::{Error, Result};
use crate::numerics::{Init, Matrix, ParamDecl, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn prefix(self) -> &'static str {
        match self {
            Direction::Forward => "gru.fwd",
            Direction::Backward => "gru.bwd",
        }
    }
}

const GATES: [&str; 3] = ["z", "r", "n"];

pub fn declare_params(input_width: usize, hidden: usize, out: &mut Vec<ParamDecl>) {
    for dir in [Direction::Forward, Direction::Backward] {
        let p = dir.prefix();
        for g in GATES {
            out.push(ParamDecl::new(format!("{p}.w_{g}"), input_width, hidden, Init::Xavier));
            out.push(ParamDecl::new(format!("{p}.u_{g}"), hidden, hidden, Init::Xavier));
            out.push(ParamDecl::new(format!("{p}.b_{g}"), 1, hidden, Init::Zeros));
        }
    }
}

struct Recurrent {
    u_z: Var,
    u_r: Var,
    u_n: Var,
}

fn recurrent(tape: &mut Tape, store: &ParamStore, dir: Direction) -> Result<Recurrent> {
    let p = dir.prefix();
    Ok(Recurrent {
        u_z: tape.param(store, &format!("{p}.u_z"))?,
        u_r: tape.param(store, &format!("{p}.u_r"))?,
        u_n: tape.param(store, &format!("{p}.u_n"))?,
    })
}

/// Input-side affine terms `x W_g + b_g` for all rows at once, per gate.
fn input_terms(tape: &mut Tape, store: &ParamStore, x: Var, dir: Direction) -> Result<[Var; 3]> {
    let p = dir.prefix();
    let mut out = Vec::with_capacity(3);
    for g in GATES {
        let w = tape.param(store, &format!("{p}.w_{g}"))?;
        let b = tape.param(store, &format!("{p}.b_{g}"))?;
        let xw = tape.matmul(x, w)?;
        out.push(tape.add_bias(xw, b)?);
    }
    Ok([out[0], out[1], out[2]])
}

/// One gated update given precomputed `1 x d_g` input terms.
fn step(tape: &mut Tape, rec: &Recurrent, xz: Var, xr: Var, xn: Var, h_prev: Var) -> Result<Var> {
    let hz = tape.matmul(h_prev, rec.u_z)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);
    let hr = tape.matmul(h_prev, rec.u_r)?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h_prev)?;
    let hn = tape.matmul(rh, rec.u_n)?;
    let n = tape.add(xn, hn)?;
    let n = tape.tanh(n);
    let delta = tape.sub(n, h_prev)?;
    let delta = tape.mul(z, delta)?;
    tape.add(h_prev, delta)
}

/// A single GRU step for one `1 x d_F` input row.
pub fn gru_cell(tape: &mut Tape, store: &ParamStore, x: Var, h_prev: Var, dir: Direction) -> Result<Var> {
    let p = dir.prefix();
    let (xr, xc) = tape.shape(x);
    let w_shape = store.value(&format!("{p}.w_z"))?.shape();
    if xr != 1 || xc != w_shape.0 {
        return Err(Error::Dimension {
            op: "gru_cell",
            left: (xr, xc),
            right: w_shape,
        });
    }
    if tape.shape(h_prev) != (1, w_shape.1) {
        return Err(Error::Dimension {
            op: "gru_cell hidden",
            left: tape.shape(h_prev),
            right: (1, w_shape.1),
        });
    }
    let [xz, xrr, xn] = input_terms(tape, store, x, dir)?;
    let rec = recurrent(tape, store, dir)?;
    step(tape, &rec, xz, xrr, xn, h_prev)
}

/// Runs both directions from zero initial states and returns `N x 2d_g` with
/// row `i` = `[forward state i, backward state i]`.
pub fn bigru_forward(tape: &mut Tape, store: &ParamStore, fused: Var) -> Result<Var> {
    let (n, width) = tape.shape(fused);
    if n == 0 {
        return Err(Error::Dataset("cannot run the GRU over an empty conversation".into()));
    }
    let w_shape = store.value("gru.fwd.w_z")?.shape();
    if width != w_shape.0 {
        return Err(Error::Dimension {
            op: "bigru_forward",
            left: (n, width),
            right: w_shape,
        });
    }
    let hidden = w_shape.1;
    let mut halves = Vec::with_capacity(2);
    for dir in [Direction::Forward, Direction::Backward] {
        let [xz, xr, xn] = input_terms(tape, store, fused, dir)?;
        let rec = recurrent(tape, store, dir)?;
        let mut h = tape.constant(Matrix::zeros(1, hidden));
        let mut states = vec![h; n];
        let order: Vec<usize> = match dir {
            Direction::Forward => (0..n).collect(),
            Direction::Backward => (0..n).rev().collect(),
        };
        for t in order {
            let z = tape.select_row(xz, t)?;
            let r = tape.select_row(xr, t)?;
            let c = tape.select_row(xn, t)?;
            h = step(tape, &rec, z, r, c, h)?;
            states[t] = h;
        }
        halves.push(tape.concat_rows(&states)?);
    }
    tape.concat_cols(&halves)
}
