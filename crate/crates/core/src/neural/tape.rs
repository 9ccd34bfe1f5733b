//! Reverse-mode differentiation over a linear tape of fused operations.
//!
//! Every node owns its forward value. Parameters are read from a borrowed
//! [`ParamStore`] and never copied onto the tape; their gradients are
//! accumulated into tensors aligned with the store.

use std::sync::atomic::{AtomicU64, Ordering};

use super::layers::{Conv1dParams, Linear, LstmLayerParams, SELU_ALPHA, SELU_LAMBDA};
use super::tensor::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// A contiguous slice of a node's value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seg {
    pub var: Var,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op<F> {
    Input,
    /// Value is `[h'; c']`; `state` holds `[h; c]`.
    Lstm {
        x: Seg,
        state: usize,
        layer: LstmLayerParams,
        /// Activated gates `[i, f, g, o]`.
        gates: Vec<F>,
        tanh_c: Vec<F>,
    },
    Linear {
        x: Seg,
        layer: Linear,
    },
    Conv1d {
        x: usize,
        layer: Conv1dParams,
        width: usize,
    },
    Selu {
        x: usize,
    },
    Concat {
        parts: Vec<(usize, usize, usize)>,
    },
    /// Scalar `sum((x - target)^2)`.
    SqErr {
        x: usize,
        target: Vec<F>,
    },
    /// Scalar `sum(w_i * x_i)`.
    Dot {
        x: usize,
        weights: Vec<F>,
    },
    /// Scalar `sum(c_k * s_k)` over scalar nodes.
    WeightedSum {
        terms: Vec<(usize, F)>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Vec<F>,
    op: Op<F>,
}

pub struct Tape<'p, F> {
    id: u64,
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    tape: u64,
    params: Vec<Tensor<F>>,
    nodes: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor<F>> {
        self.params
    }

    /// Gradient with respect to a node of the tape that produced these gradients.
    pub fn var(&self, v: Var) -> Result<&[F]> {
        if v.tape != self.tape || v.idx >= self.nodes.len() {
            return Err(Error::DetachedVariable);
        }
        Ok(&self.nodes[v.idx])
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> Result<&[F]> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    pub fn seg_value(&self, s: Seg) -> Result<&[F]> {
        Ok(&self.value(s.var)?[s.start..s.start + s.len])
    }

    /// Whole-node segment.
    pub fn seg(&self, v: Var) -> Result<Seg> {
        let len = self.value(v)?.len();
        Ok(Seg {
            var: v,
            start: 0,
            len,
        })
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::DetachedVariable);
        }
        Ok(v.idx)
    }

    fn check_seg(&self, s: Seg) -> Result<usize> {
        let i = self.index(s.var)?;
        if s.start + s.len > self.nodes[i].value.len() {
            return Err(Error::shape(
                format!("segment within {} values", self.nodes[i].value.len()),
                format!("{}..{}", s.start, s.start + s.len),
            ));
        }
        Ok(i)
    }

    fn push(&mut self, value: Vec<F>, op: Op<F>, what: &str) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} output")));
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    /// Constant leaf; gradients flow into it but no further.
    pub fn input(&mut self, value: Vec<F>) -> Result<Var> {
        self.push(value, Op::Input, "input")
    }

    pub fn lstm(&mut self, layer: &LstmLayerParams, x: Seg, state: Var) -> Result<Var> {
        let h_n = layer.hidden;
        self.check_seg(x)?;
        let si = self.index(state)?;
        if x.len != layer.input {
            return Err(Error::shape(format!("LSTM input {}", layer.input), x.len));
        }
        if self.nodes[si].value.len() != 2 * h_n {
            return Err(Error::shape(
                format!("LSTM state {}", 2 * h_n),
                self.nodes[si].value.len(),
            ));
        }
        let w = self.params.get(layer.w).data();
        let u = self.params.get(layer.u).data();
        let b = self.params.get(layer.b).data();
        let xv = self.seg_value(x)?;
        let (h, c) = self.nodes[si].value.split_at(h_n);
        let d = layer.input;
        let mut gates = vec![F::zero(); 4 * h_n];
        for (r, g) in gates.iter_mut().enumerate() {
            let z = b[r] + dot(&w[r * d..(r + 1) * d], xv) + dot(&u[r * h_n..(r + 1) * h_n], h);
            *g = if r / h_n == 2 { z.tanh() } else { sigmoid(z) };
        }
        let mut out = vec![F::zero(); 2 * h_n];
        let mut tanh_c = vec![F::zero(); h_n];
        for k in 0..h_n {
            let (i, f, g, o) = (gates[k], gates[h_n + k], gates[2 * h_n + k], gates[3 * h_n + k]);
            let c_new = f * c[k] + i * g;
            tanh_c[k] = c_new.tanh();
            out[k] = o * tanh_c[k];
            out[h_n + k] = c_new;
        }
        self.push(
            out,
            Op::Lstm {
                x,
                state: si,
                layer: *layer,
                gates,
                tanh_c,
            },
            "lstm",
        )
    }

    pub fn linear(&mut self, layer: &Linear, x: Seg) -> Result<Var> {
        self.check_seg(x)?;
        if x.len != layer.input {
            return Err(Error::shape(format!("linear input {}", layer.input), x.len));
        }
        let w = self.params.get(layer.w).data();
        let b = self.params.get(layer.b).data();
        let xv = self.seg_value(x)?;
        let out = (0..layer.output)
            .map(|r| b[r] + dot(&w[r * layer.input..(r + 1) * layer.input], xv))
            .collect();
        self.push(out, Op::Linear { x, layer: *layer }, "linear")
    }

    /// Cross-correlation over the last axis of a `c_in x width` input with same-size zero padding.
    pub fn conv1d(&mut self, layer: &Conv1dParams, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        if xv.len() % layer.c_in != 0 || xv.is_empty() {
            return Err(Error::shape(
                format!("multiple of {} input channels", layer.c_in),
                xv.len(),
            ));
        }
        let width = xv.len() / layer.c_in;
        let w = self.params.get(layer.w).data();
        let b = self.params.get(layer.b).data();
        let k = layer.kernel;
        let pad = k / 2;
        let mut out = vec![F::zero(); layer.c_out * width];
        for o in 0..layer.c_out {
            let y = &mut out[o * width..(o + 1) * width];
            y.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..layer.c_in {
                let xc = &xv[c * width..(c + 1) * width];
                for j in 0..k {
                    let wj = w[(o * layer.c_in + c) * k + j];
                    // y[n] += wj * x[n + j - pad] for valid source indices.
                    let lo = pad.saturating_sub(j);
                    let hi = (width + pad).saturating_sub(j).min(width);
                    for n in lo..hi {
                        y[n] += wj * xc[n + j - pad];
                    }
                }
            }
        }
        self.push(
            out,
            Op::Conv1d {
                x: xi,
                layer: *layer,
                width,
            },
            "conv1d",
        )
    }

    pub fn selu(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let out = self.nodes[xi].value.iter().map(|&v| selu(v)).collect();
        self.push(out, Op::Selu { x: xi }, "selu")
    }

    pub fn concat(&mut self, parts: &[Seg]) -> Result<Var> {
        let mut out = Vec::with_capacity(parts.iter().map(|s| s.len).sum());
        let mut idx = Vec::with_capacity(parts.len());
        for &s in parts {
            let i = self.check_seg(s)?;
            out.extend_from_slice(&self.nodes[i].value[s.start..s.start + s.len]);
            idx.push((i, s.start, s.len));
        }
        self.push(out, Op::Concat { parts: idx }, "concat")
    }

    pub fn sq_err(&mut self, x: Var, target: &[F]) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        if xv.len() != target.len() {
            return Err(Error::shape(xv.len(), target.len()));
        }
        let s = xv
            .iter()
            .zip(target)
            .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        self.push(
            vec![s],
            Op::SqErr {
                x: xi,
                target: target.to_vec(),
            },
            "squared error",
        )
    }

    pub fn dot(&mut self, x: Var, weights: &[F]) -> Result<Var> {
        let xi = self.index(x)?;
        if self.nodes[xi].value.len() != weights.len() {
            return Err(Error::shape(self.nodes[xi].value.len(), weights.len()));
        }
        let s = dot(&self.nodes[xi].value, weights);
        self.push(
            vec![s],
            Op::Dot {
                x: xi,
                weights: weights.to_vec(),
            },
            "dot",
        )
    }

    /// Sum of all elements of `x`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x)?.len();
        self.dot(x, &vec![F::one(); n])
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Result<Var> {
        let mut idx = Vec::with_capacity(terms.len());
        let mut s = F::zero();
        for &(v, c) in terms {
            let i = self.index(v)?;
            if self.nodes[i].value.len() != 1 {
                return Err(Error::shape("scalar term", self.nodes[i].value.len()));
            }
            s += c * self.nodes[i].value[0];
            idx.push((i, c));
        }
        self.push(vec![s], Op::WeightedSum { terms: idx }, "weighted sum")
    }

    /// Gradients of the scalar `loss` with respect to every node and parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let li = self.index(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::shape("scalar loss", self.nodes[li].value.len()));
        }
        let mut adj: Vec<Vec<F>> = self
            .nodes
            .iter()
            .map(|n| vec![F::zero(); n.value.len()])
            .collect();
        let mut pg = self.params.zeros_like();
        adj[li][0] = F::one();
        for i in (0..=li).rev() {
            if adj[i].iter().all(|v| v.is_zero()) {
                continue;
            }
            let (before, rest) = adj.split_at_mut(i);
            let dy = &rest[0];
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Lstm {
                    x,
                    state,
                    layer,
                    gates,
                    tanh_c,
                } => {
                    let h_n = layer.hidden;
                    let d = layer.input;
                    let sv = &self.nodes[*state].value;
                    let (h, c) = sv.split_at(h_n);
                    let mut dz = vec![F::zero(); 4 * h_n];
                    let mut dstate = vec![F::zero(); 2 * h_n];
                    for k in 0..h_n {
                        let (ig, fg, gg, og) =
                            (gates[k], gates[h_n + k], gates[2 * h_n + k], gates[3 * h_n + k]);
                        let dh = dy[k];
                        let dc = dy[h_n + k] + dh * og * (F::one() - tanh_c[k] * tanh_c[k]);
                        let d_o = dh * tanh_c[k];
                        dz[k] = dc * gg * ig * (F::one() - ig);
                        dz[h_n + k] = dc * c[k] * fg * (F::one() - fg);
                        dz[2 * h_n + k] = dc * ig * (F::one() - gg * gg);
                        dz[3 * h_n + k] = d_o * og * (F::one() - og);
                        dstate[h_n + k] = dc * fg;
                    }
                    let xv = &self.nodes[x.var.idx].value[x.start..x.start + x.len];
                    let w = self.params.get(layer.w).data();
                    let u = self.params.get(layer.u).data();
                    let mut dx = vec![F::zero(); d];
                    {
                        let gw = pg[layer.w.0].data_mut();
                        for (r, &g) in dz.iter().enumerate() {
                            if g.is_zero() {
                                continue;
                            }
                            let row = &mut gw[r * d..(r + 1) * d];
                            for (j, v) in row.iter_mut().enumerate() {
                                *v += g * xv[j];
                            }
                            for (j, v) in dx.iter_mut().enumerate() {
                                *v += g * w[r * d + j];
                            }
                        }
                    }
                    {
                        let gu = pg[layer.u.0].data_mut();
                        for (r, &g) in dz.iter().enumerate() {
                            if g.is_zero() {
                                continue;
                            }
                            let row = &mut gu[r * h_n..(r + 1) * h_n];
                            for (j, v) in row.iter_mut().enumerate() {
                                *v += g * h[j];
                            }
                            for j in 0..h_n {
                                dstate[j] += g * u[r * h_n + j];
                            }
                        }
                    }
                    for (v, &g) in pg[layer.b.0].data_mut().iter_mut().zip(&dz) {
                        *v += g;
                    }
                    for (j, v) in before[x.var.idx][x.start..x.start + x.len].iter_mut().enumerate() {
                        *v += dx[j];
                    }
                    for (v, g) in before[*state].iter_mut().zip(dstate) {
                        *v += g;
                    }
                }
                Op::Linear { x, layer } => {
                    let n_in = layer.input;
                    let xv = &self.nodes[x.var.idx].value[x.start..x.start + x.len];
                    let w = self.params.get(layer.w).data();
                    let mut dx = vec![F::zero(); n_in];
                    let gw = pg[layer.w.0].data_mut();
                    for (r, &g) in dy.iter().enumerate() {
                        if g.is_zero() {
                            continue;
                        }
                        for j in 0..n_in {
                            gw[r * n_in + j] += g * xv[j];
                            dx[j] += g * w[r * n_in + j];
                        }
                    }
                    for (v, &g) in pg[layer.b.0].data_mut().iter_mut().zip(dy.iter()) {
                        *v += g;
                    }
                    for (j, v) in before[x.var.idx][x.start..x.start + x.len].iter_mut().enumerate() {
                        *v += dx[j];
                    }
                }
                Op::Conv1d { x, layer, width } => {
                    let width = *width;
                    let k = layer.kernel;
                    let pad = k / 2;
                    let xv = &self.nodes[*x].value;
                    let w = self.params.get(layer.w).data();
                    let mut dx = vec![F::zero(); xv.len()];
                    {
                        let gw = pg[layer.w.0].data_mut();
                        for o in 0..layer.c_out {
                            let g = &dy[o * width..(o + 1) * width];
                            for c in 0..layer.c_in {
                                let xc = &xv[c * width..(c + 1) * width];
                                let dxc = &mut dx[c * width..(c + 1) * width];
                                for j in 0..k {
                                    let widx = (o * layer.c_in + c) * k + j;
                                    let wj = w[widx];
                                    let lo = pad.saturating_sub(j);
                                    let hi = (width + pad).saturating_sub(j).min(width);
                                    let mut acc = F::zero();
                                    for n in lo..hi {
                                        acc += g[n] * xc[n + j - pad];
                                        dxc[n + j - pad] += g[n] * wj;
                                    }
                                    gw[widx] += acc;
                                }
                            }
                        }
                    }
                    let gb = pg[layer.b.0].data_mut();
                    for o in 0..layer.c_out {
                        gb[o] += dy[o * width..(o + 1) * width].iter().copied().sum::<F>();
                    }
                    for (v, g) in before[*x].iter_mut().zip(dx) {
                        *v += g;
                    }
                }
                Op::Selu { x } => {
                    let xv = &self.nodes[*x].value;
                    for ((v, &g), &xin) in before[*x].iter_mut().zip(dy.iter()).zip(xv) {
                        *v += g * selu_grad(xin);
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for &(src, start, len) in parts {
                        for (v, &g) in before[src][start..start + len]
                            .iter_mut()
                            .zip(&dy[off..off + len])
                        {
                            *v += g;
                        }
                        off += len;
                    }
                }
                Op::SqErr { x, target } => {
                    let g = dy[0];
                    let two = F::of(2.0);
                    let xv = &self.nodes[*x].value;
                    for ((v, &a), &t) in before[*x].iter_mut().zip(xv).zip(target) {
                        *v += two * g * (a - t);
                    }
                }
                Op::Dot { x, weights } => {
                    let g = dy[0];
                    for (v, &w) in before[*x].iter_mut().zip(weights) {
                        *v += g * w;
                    }
                }
                Op::WeightedSum { terms } => {
                    let g = dy[0];
                    for &(src, c) in terms {
                        before[src][0] += g * c;
                    }
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            params: pg,
            nodes: adj,
        })
    }
}

pub fn selu<F: Scalar>(x: F) -> F {
    let lambda = F::of(SELU_LAMBDA);
    if x > F::zero() {
        lambda * x
    } else {
        lambda * F::of(SELU_ALPHA) * (x.exp() - F::one())
    }
}

fn selu_grad<F: Scalar>(x: F) -> F {
    let lambda = F::of(SELU_LAMBDA);
    if x > F::zero() {
        lambda
    } else {
        lambda * F::of(SELU_ALPHA) * x.exp()
    }
}
