use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::loss::pri_target;
use super::params::RtsnParams;
use super::RtsnConfig;
use crate::error::{Error, Result};
use crate::neural::{LstmState, Scalar, Seg, Tape, Tensor, Var};
use crate::util::map_indexed;

/// Edge replication of a possibly out-of-range frame or step index.
pub fn clamp_frame(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// `(2 tau + 1)^2 + (2 tau + 1)`.
pub fn posterior_channels(tau: usize) -> usize {
    let w = 2 * tau + 1;
    w * w + w
}

/// `(step, row)` pairs holding the base predictions of frame `t`, offset
/// `m` ascending from `-tau`: the row for offset `m` of step `t - m`.
pub fn mbp_sources(t: usize, len: usize, tau: usize) -> Vec<(usize, usize)> {
    let tau_i = tau as isize;
    (-tau_i..=tau_i)
        .map(|m| (clamp_frame(t as isize - m, len), (m + tau_i) as usize))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorSource {
    Pri { step: usize, row: usize },
    Noisy { frame: usize },
}

/// Channel layout of the posterior input for frame `t`: every row of the
/// step outputs `t - tau ..= t + tau`, then the matching noisy frames.
pub fn posterior_sources(t: usize, len: usize, tau: usize) -> Vec<PosteriorSource> {
    let tau_i = tau as isize;
    let w = 2 * tau + 1;
    let mut out = Vec::with_capacity(posterior_channels(tau));
    for m in -tau_i..=tau_i {
        let step = clamp_frame(t as isize + m, len);
        out.extend((0..w).map(|row| PosteriorSource::Pri { step, row }));
    }
    for m in -tau_i..=tau_i {
        out.push(PosteriorSource::Noisy {
            frame: clamp_frame(t as isize + m, len),
        });
    }
    out
}

fn check_frame(len: usize, t: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::EmptySignal);
    }
    if t >= len {
        return Err(Error::shape(format!("frame index below {len}"), t));
    }
    Ok(())
}

/// Frames `t ..= t + tau` concatenated, replicating the last frame past the end.
pub fn assemble_pri_input<F: Scalar>(lps: ArrayView2<'_, F>, t: usize, tau: usize) -> Result<Vec<F>> {
    let len = lps.nrows();
    check_frame(len, t)?;
    let mut out = Vec::with_capacity((tau + 1) * lps.ncols());
    for k in 0..=tau {
        out.extend(lps.row((t + k).min(len - 1)).iter().copied());
    }
    Ok(out)
}

/// Per-layer LSTM state stored as `[h; c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriState<F> {
    pub layers: Vec<Vec<F>>,
}

impl<F: Scalar> PriState<F> {
    pub fn zeros(config: &RtsnConfig) -> Self {
        Self {
            layers: vec![vec![F::zero(); 2 * config.lstm_units]; config.lstm_layers],
        }
    }

    fn check(&self, config: &RtsnConfig) -> Result<()> {
        let ok = self.layers.len() == config.lstm_layers
            && self.layers.iter().all(|l| l.len() == 2 * config.lstm_units);
        if ok {
            return Ok(());
        }
        Err(Error::shape(
            format!("{} layers of {} state values", config.lstm_layers, 2 * config.lstm_units),
            format!("{:?}", self.layers.iter().map(Vec::len).collect::<Vec<_>>()),
        ))
    }
}

/// One step's `(2 tau + 1) x N` multi-frame prediction; row `m + tau` predicts frame `t + m`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriStepOutput<F> {
    pub rows: Array2<F>,
}

impl<F: Scalar> PriStepOutput<F> {
    pub fn tau(&self) -> usize {
        self.rows.nrows() / 2
    }

    /// Prediction at offset `m` in `-tau ..= tau`.
    pub fn offset(&self, m: isize) -> ArrayView1<'_, F> {
        self.rows.row((m + self.tau() as isize) as usize)
    }
}

/// Stacked posterior channels, each of length `n_bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorInput<F> {
    pub channels: usize,
    pub n_bins: usize,
    pub data: Vec<F>,
}

impl<F> PosteriorInput<F> {
    pub fn channel(&self, c: usize) -> &[F] {
        &self.data[c * self.n_bins..(c + 1) * self.n_bins]
    }
}

fn check_lps<F>(params: &RtsnParams<F>, lps: &ArrayView2<'_, F>) -> Result<()> {
    if lps.nrows() == 0 {
        return Err(Error::EmptySignal);
    }
    if lps.ncols() != params.config.n_bins {
        return Err(Error::shape(
            format!("{} bins", params.config.n_bins),
            lps.ncols(),
        ));
    }
    Ok(())
}

/// Records one pri-NN step; returns the projection output and the new layer states.
fn pri_step<F: Scalar>(
    tape: &mut Tape<'_, F>,
    params: &RtsnParams<F>,
    input: Vec<F>,
    state: &[Var],
) -> Result<(Var, Vec<Var>)> {
    let x = tape.input(input)?;
    let mut x = tape.seg(x)?;
    let mut next = Vec::with_capacity(state.len());
    for (layer, &s) in params.lstm.iter().zip(state) {
        let s = layer.step(tape, x, LstmState(s))?;
        x = layer.hidden_seg(s);
        next.push(s.0);
    }
    Ok((tape.linear(&params.proj, x)?, next))
}

fn post_graph<F: Scalar>(tape: &mut Tape<'_, F>, params: &RtsnParams<F>, v: Var) -> Result<Var> {
    let mut x = v;
    for (i, layer) in params.conv.iter().enumerate() {
        x = tape.conv1d(layer, x)?;
        if i + 1 < params.conv.len() {
            x = tape.selu(x)?;
        }
    }
    Ok(x)
}

/// Run the prior network over a normalized LPS sequence, one step per frame.
pub fn pri_forward<F: Scalar>(
    params: &RtsnParams<F>,
    lps: ArrayView2<'_, F>,
    initial: &PriState<F>,
) -> Result<(Vec<PriStepOutput<F>>, PriState<F>)> {
    check_lps(params, &lps)?;
    initial.check(&params.config)?;
    let (tau, n, w) = (params.config.tau, params.config.n_bins, params.config.window());
    let mut state = initial.clone();
    let mut outputs = Vec::with_capacity(lps.nrows());
    for t in 0..lps.nrows() {
        let mut tape = Tape::new(&params.store);
        let vars = state
            .layers
            .iter()
            .map(|s| tape.input(s.clone()))
            .collect::<Result<Vec<_>>>()?;
        let (out, next) = pri_step(&mut tape, params, assemble_pri_input(lps, t, tau)?, &vars)?;
        for (dst, v) in state.layers.iter_mut().zip(next) {
            dst.copy_from_slice(tape.value(v)?);
        }
        let rows = Array2::from_shape_vec((w, n), tape.value(out)?.to_vec())
            .map_err(|e| Error::shape(format!("{w}x{n}"), e))?;
        outputs.push(PriStepOutput { rows });
    }
    Ok((outputs, state))
}

/// The `2 tau + 1` base predictions of frame `t`, offset ascending.
pub fn gather_mbps<F: Scalar>(outputs: &[PriStepOutput<F>], t: usize) -> Result<Vec<Vec<F>>> {
    check_frame(outputs.len(), t)?;
    let tau = outputs[0].tau();
    Ok(mbp_sources(t, outputs.len(), tau)
        .into_iter()
        .map(|(step, row)| outputs[step].rows.row(row).to_vec())
        .collect())
}

pub fn assemble_posterior_input<F: Scalar>(
    outputs: &[PriStepOutput<F>],
    noisy: ArrayView2<'_, F>,
    t: usize,
) -> Result<PosteriorInput<F>> {
    check_frame(outputs.len(), t)?;
    if noisy.nrows() != outputs.len() {
        return Err(Error::shape(
            format!("{} noisy frames", outputs.len()),
            noisy.nrows(),
        ));
    }
    let tau = outputs[0].tau();
    let n = noisy.ncols();
    let sources = posterior_sources(t, outputs.len(), tau);
    let mut data = Vec::with_capacity(sources.len() * n);
    for s in &sources {
        match *s {
            PosteriorSource::Pri { step, row } => data.extend(outputs[step].rows.row(row).iter()),
            PosteriorSource::Noisy { frame } => data.extend(noisy.row(frame).iter()),
        }
    }
    Ok(PosteriorInput {
        channels: sources.len(),
        n_bins: n,
        data,
    })
}

/// Posterior network on one stacked input; returns the enhanced frame.
pub fn post_forward<F: Scalar>(params: &RtsnParams<F>, v: &PosteriorInput<F>) -> Result<Vec<F>> {
    let want = params.config.posterior_channels();
    if v.channels != want || v.n_bins != params.config.n_bins {
        return Err(Error::shape(
            format!("{want}x{}", params.config.n_bins),
            format!("{}x{}", v.channels, v.n_bins),
        ));
    }
    let mut tape = Tape::new(&params.store);
    let x = tape.input(v.data.clone())?;
    let y = post_graph(&mut tape, params, x)?;
    Ok(tape.value(y)?.to_vec())
}

/// Full inference over a normalized sequence; returns the `T x N` enhanced LPS.
pub(crate) fn infer<F: Scalar>(params: &RtsnParams<F>, noisy: ArrayView2<'_, F>) -> Result<Array2<F>> {
    let (outputs, _) = pri_forward(params, noisy, &PriState::zeros(&params.config))?;
    let frames = map_indexed(noisy.nrows(), |t| {
        post_forward(params, &assemble_posterior_input(&outputs, noisy, t)?)
    });
    let n = params.config.n_bins;
    let mut out = Array2::zeros((noisy.nrows(), n));
    for (t, f) in frames.into_iter().enumerate() {
        out.row_mut(t)
            .iter_mut()
            .zip(f?)
            .for_each(|(d, s)| *d = s);
    }
    Ok(out)
}

/// A span of frames of one utterance, with the recurrent context preceding it.
pub struct ChunkInput<'a, F> {
    /// Whole normalized noisy utterance.
    pub noisy: ArrayView2<'a, F>,
    /// Whole normalized clean utterance.
    pub clean: ArrayView2<'a, F>,
    /// Frames whose loss terms are counted.
    pub frames: Range<usize>,
    /// LSTM state before step `frames.start`.
    pub state: &'a PriState<F>,
    /// Prior outputs of steps `frames.start - tau .. frames.start` (clipped at 0), held constant.
    pub history: &'a [Vec<F>],
}

pub struct ChunkOutput<F> {
    /// Sum over frames of the posterior squared error.
    pub post_sum: f64,
    /// Sum over frames of the prior Frobenius error.
    pub pri_sum: f64,
    /// `post_sum + lambda * pri_sum`.
    pub loss_sum: f64,
    pub frames: usize,
    /// Gradient of `loss_sum`, when requested.
    pub grads: Option<Vec<Tensor<F>>>,
    /// LSTM state after step `frames.end - 1`.
    pub state: PriState<F>,
    /// Prior outputs for the history of the following span.
    pub history: Vec<Vec<F>>,
}

/// Loss of a span of frames on a fresh graph. The prior network also runs up
/// to `tau` steps past the span, since the posterior input of the last frames
/// needs them; those steps start from the in-span state and are discarded
/// afterwards. Incoming state and history are constants, so no gradient
/// crosses the span boundary.
pub fn chunk_forward<F: Scalar>(
    params: &RtsnParams<F>,
    input: &ChunkInput<'_, F>,
    with_grad: bool,
) -> Result<ChunkOutput<F>> {
    let cfg = &params.config;
    let (tau, n) = (cfg.tau, cfg.n_bins);
    let len = input.noisy.nrows();
    check_lps(params, &input.noisy)?;
    if input.clean.dim() != input.noisy.dim() {
        return Err(Error::shape(
            format!("{:?}", input.noisy.dim()),
            format!("{:?}", input.clean.dim()),
        ));
    }
    let Range { start, end } = input.frames.clone();
    if start >= end || end > len {
        return Err(Error::shape(format!("frame span within 0..{len}"), format!("{start}..{end}")));
    }
    input.state.check(cfg)?;
    let hist_start = start.saturating_sub(tau);
    if input.history.len() != start - hist_start
        || input.history.iter().any(|h| h.len() != cfg.pri_output_len())
    {
        return Err(Error::shape(
            format!("{} history steps of {}", start - hist_start, cfg.pri_output_len()),
            format!("{} steps", input.history.len()),
        ));
    }

    let mut tape = Tape::new(&params.store);
    let mut pri = Vec::with_capacity(end + tau - hist_start);
    for h in input.history {
        pri.push(tape.input(h.clone())?);
    }
    let mut state = input
        .state
        .layers
        .iter()
        .map(|s| tape.input(s.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut final_state = None;
    for s in start..(end + tau).min(len) {
        let (out, next) = pri_step(&mut tape, params, assemble_pri_input(input.noisy, s, tau)?, &state)?;
        state = next;
        pri.push(out);
        if s + 1 == end {
            final_state = Some(PriState {
                layers: state
                    .iter()
                    .map(|&v| tape.value(v).map(<[F]>::to_vec))
                    .collect::<Result<_>>()?,
            });
        }
    }

    let mut noisy_vars: BTreeMap<usize, Var> = BTreeMap::new();
    let lambda = F::of(cfg.lambda);
    let mut terms = Vec::with_capacity(2 * (end - start));
    let (mut post_sum, mut pri_sum) = (0.0, 0.0);
    for t in start..end {
        let mut segs = Vec::with_capacity(cfg.posterior_channels());
        for src in posterior_sources(t, len, tau) {
            segs.push(match src {
                PosteriorSource::Pri { step, row } => Seg {
                    var: pri[step - hist_start],
                    start: row * n,
                    len: n,
                },
                PosteriorSource::Noisy { frame } => {
                    let var = match noisy_vars.get(&frame) {
                        Some(&v) => v,
                        None => {
                            let v = tape.input(input.noisy.row(frame).to_vec())?;
                            noisy_vars.insert(frame, v);
                            v
                        }
                    };
                    tape.seg(var)?
                }
            });
        }
        let v = tape.concat(&segs)?;
        let x_hat = post_graph(&mut tape, params, v)?;
        let clean_t: Vec<F> = input.clean.row(t).to_vec();
        let post_err = tape.sq_err(x_hat, &clean_t)?;
        let pri_err = tape.sq_err(pri[t - hist_start], &pri_target(input.clean, t, tau))?;
        post_sum += tape.value(post_err)?[0].as_f64();
        pri_sum += tape.value(pri_err)?[0].as_f64();
        terms.push((post_err, F::one()));
        terms.push((pri_err, lambda));
    }

    let grads = if with_grad {
        let loss = tape.weighted_sum(&terms)?;
        Some(tape.backward(loss)?.into_params())
    } else {
        None
    };
    let next_hist = end.saturating_sub(tau);
    let history = (next_hist..end)
        .map(|s| tape.value(pri[s - hist_start]).map(<[F]>::to_vec))
        .collect::<Result<_>>()?;
    Ok(ChunkOutput {
        post_sum,
        pri_sum,
        loss_sum: post_sum + cfg.lambda * pri_sum,
        frames: end - start,
        grads,
        state: final_state.expect("span is non-empty"),
        history,
    })
}
