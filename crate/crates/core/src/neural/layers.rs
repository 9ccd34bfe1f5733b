use rand::Rng;

use super::tape::{selu, Seg, Tape, Var};
use super::tensor::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::Result;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

/// Elementwise SELU.
pub fn selu_tensor<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(selu)
}

fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Packed LSTM weights: `w` is 4H x D, `u` is 4H x H, `b` is 4H, gate order (i, f, g, o).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmLayerParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Recurrent state of one LSTM layer, stored on the tape as `[h; c]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState(pub Var);

impl LstmLayerParams {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except the forget gate at 1.
    pub fn init<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[4 * hidden, input], init_bound(input), rng),
        );
        let u = store.add(
            format!("{name}.u"),
            Tensor::uniform(&[4 * hidden, hidden], init_bound(hidden), rng),
        );
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = F::one());
        let b = store.add(format!("{name}.b"), bias);
        Self {
            w,
            u,
            b,
            input,
            hidden,
        }
    }

    pub fn zero_state<F: Scalar>(&self, tape: &mut Tape<'_, F>) -> Result<LstmState> {
        Ok(LstmState(tape.input(vec![F::zero(); 2 * self.hidden])?))
    }

    /// One cell update; returns the new `[h'; c']` state.
    pub fn step<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: Seg, state: LstmState) -> Result<LstmState> {
        Ok(LstmState(tape.lstm(self, x, state.0)?))
    }

    /// The `h` half of a state.
    pub fn hidden_seg(&self, state: LstmState) -> Seg {
        Seg {
            var: state.0,
            start: 0,
            len: self.hidden,
        }
    }
}

/// `y = W x + b` with `W` of shape output x input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn init<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[output, input], init_bound(input), rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[output]));
        Self {
            w,
            b,
            input,
            output,
        }
    }
}

/// 1-D convolution along frequency: kernels `c_out x c_in x kernel`, `kernel` odd.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dParams {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1dParams {
    pub fn init<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[c_out, c_in, kernel], init_bound(c_in * kernel), rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Self {
            w,
            b,
            c_in,
            c_out,
            kernel,
        }
    }
}

/// Same-padded cross-correlation of a `c_in x width` input; returns `c_out x width`.
pub fn conv1d_freq<F: Scalar>(
    store: &ParamStore<F>,
    layer: &Conv1dParams,
    input: &[F],
) -> Result<Vec<F>> {
    let mut tape = Tape::new(store);
    let x = tape.input(input.to_vec())?;
    let y = tape.conv1d(layer, x)?;
    Ok(tape.value(y)?.to_vec())
}

/// Single LSTM cell update outside of a training graph; returns `(h', c')`.
pub fn lstm_step<F: Scalar>(
    store: &ParamStore<F>,
    layer: &LstmLayerParams,
    input: &[F],
    h: &[F],
    c: &[F],
) -> Result<(Vec<F>, Vec<F>)> {
    let mut tape = Tape::new(store);
    let x = tape.input(input.to_vec())?;
    let state = tape.input(h.iter().chain(c).copied().collect())?;
    let x = tape.seg(x)?;
    let out = tape.lstm(layer, x, state)?;
    let v = tape.value(out)?;
    Ok((v[..layer.hidden].to_vec(), v[layer.hidden..].to_vec()))
}
