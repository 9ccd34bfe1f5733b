use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RtsnConfig;
use crate::corpus::NormStats;
use crate::error::Result;
use crate::neural::{Conv1dParams, Linear, LstmLayerParams, ParamStore, Scalar};

/// Weights of both stages plus the feature statistics they were trained with.
#[derive(Clone, Debug)]
pub struct RtsnParams<F> {
    pub config: RtsnConfig,
    pub store: ParamStore<F>,
    pub lstm: Vec<LstmLayerParams>,
    pub proj: Linear,
    pub conv: Vec<Conv1dParams>,
    pub stats: Option<NormStats>,
}

impl<F: Scalar> RtsnParams<F> {
    /// Seeded initialization. Tensors are created in a fixed order: LSTM
    /// layers bottom-up, the projection head, then the conv stack.
    pub fn init(config: &RtsnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        let mut input = config.pri_input_len();
        for l in 0..config.lstm_layers {
            lstm.push(LstmLayerParams::init(
                &mut store,
                &format!("lstm{l}"),
                input,
                config.lstm_units,
                &mut rng,
            ));
            input = config.lstm_units;
        }
        let proj = Linear::init(&mut store, "proj", input, config.pri_output_len(), &mut rng);
        let mut conv = Vec::with_capacity(config.conv_channels.len());
        let mut c_in = config.posterior_channels();
        for (l, &c_out) in config.conv_channels.iter().enumerate() {
            conv.push(Conv1dParams::init(
                &mut store,
                &format!("conv{l}"),
                c_in,
                c_out,
                config.conv_kernel,
                &mut rng,
            ));
            c_in = c_out;
        }
        Ok(Self {
            config: config.clone(),
            store,
            lstm,
            proj,
            conv,
            stats: None,
        })
    }

    /// Same layout as [`RtsnParams::init`] with every value zero.
    pub fn zeros(config: &RtsnConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        p.store.tensors_mut().iter_mut().for_each(|t| t.fill(F::zero()));
        Ok(p)
    }

    pub fn with_stats(mut self, stats: NormStats) -> Self {
        self.stats = Some(stats);
        self
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn cast<G: Scalar>(&self) -> RtsnParams<G> {
        RtsnParams {
            config: self.config.clone(),
            store: self.store.cast(),
            lstm: self.lstm.clone(),
            proj: self.proj,
            conv: self.conv.clone(),
            stats: self.stats.clone(),
        }
    }
}
