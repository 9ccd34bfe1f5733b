//! The two-stage recurrent network: a multi-frame LSTM predictor followed by a
//! convolutional aggregator over its base predictions.

mod checkpoint;
mod enhance;
mod forward;
mod loss;
mod params;


pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use enhance::{enhance_utterance, Enhanced, LpsEnhancer};
pub use forward::{
    assemble_posterior_input, assemble_pri_input, chunk_forward, clamp_frame, gather_mbps,
    mbp_sources, post_forward, posterior_channels, posterior_sources, pri_forward, ChunkInput,
    ChunkOutput, PosteriorInput, PosteriorSource, PriState, PriStepOutput,
};
pub use loss::{mol_loss, mol_loss_masked, pri_target, MolLoss};
pub use params::RtsnParams;

use crate::config::{parse_key_values, parse_value, Entry};
use crate::error::{Error, Result};

/// Architecture and loss hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RtsnConfig {
    /// Half window size.
    pub tau: usize,
    /// Weight of the prior-network loss.
    pub lambda: f64,
    pub n_bins: usize,
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub conv_kernel: usize,
    pub conv_channels: Vec<usize>,
    /// Griffin-Lim iterations used at enhancement time.
    pub gla_iters: usize,
}

impl Default for RtsnConfig {
    fn default() -> Self {
        Self {
            tau: 4,
            lambda: 10.0,
            n_bins: 129,
            lstm_layers: 2,
            lstm_units: 512,
            conv_kernel: 5,
            conv_channels: vec![256, 128, 64, 1],
            gla_iters: 5,
        }
    }
}

impl RtsnConfig {
    /// Number of offsets `2 tau + 1`.
    pub fn window(&self) -> usize {
        2 * self.tau + 1
    }

    pub fn pri_input_len(&self) -> usize {
        (self.tau + 1) * self.n_bins
    }

    pub fn pri_output_len(&self) -> usize {
        self.window() * self.n_bins
    }

    pub fn posterior_channels(&self) -> usize {
        posterior_channels(self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.tau < 1 {
            return bad("tau must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.n_bins == 0 || self.lstm_layers == 0 || self.lstm_units == 0 {
            return bad("n_bins, lstm_layers and lstm_units must be positive".into());
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        match self.conv_channels.last() {
            Some(1) if self.conv_channels.iter().all(|&c| c > 0) => Ok(()),
            _ => bad(format!(
                "conv_channels must be positive and end in 1, got {:?}",
                self.conv_channels
            )),
        }
    }

    /// Apply one config entry; `Ok(false)` if the key is not a model key.
    pub fn set(&mut self, e: &Entry) -> Result<bool> {
        match e.key.as_str() {
            "tau" => self.tau = parse_value(e)?,
            "lambda" => self.lambda = parse_value(e)?,
            "n_bins" => self.n_bins = parse_value(e)?,
            "lstm_layers" => self.lstm_layers = parse_value(e)?,
            "lstm_units" => self.lstm_units = parse_value(e)?,
            "conv_kernel" => self.conv_kernel = parse_value(e)?,
            "gla_iters" => self.gla_iters = parse_value(e)?,
            "conv_channels" => {
                self.conv_channels = e
                    .value
                    .split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|_| Error::Config {
                            line: e.line,
                            msg: format!("invalid value {:?} for conv_channels", e.value),
                        })
                    })
                    .collect::<Result<_>>()?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key = value` lines accepted by [`RtsnConfig::parse`].
    pub fn to_text(&self) -> String {
        let ch: Vec<String> = self.conv_channels.iter().map(|c| c.to_string()).collect();
        format!(
            "tau = {}\nlambda = {:?}\nn_bins = {}\nlstm_layers = {}\nlstm_units = {}\nconv_kernel = {}\nconv_channels = {}\ngla_iters = {}\n",
            self.tau,
            self.lambda,
            self.n_bins,
            self.lstm_layers,
            self.lstm_units,
            self.conv_kernel,
            ch.join(", "),
            self.gla_iters
        )
    }

    /// Parse model keys only; anything else is an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in parse_key_values(text)? {
            if !cfg.set(&e)? {
                return Err(Error::Config {
                    line: e.line,
                    msg: format!("unknown key {:?}", e.key),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
