use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::decoder::DecoderParams;
use crate::diffcore::ParamStore;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Configuration, parameters and the handles into them.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub enc: EncoderParams,
    pub dec: DecoderParams,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = EncoderParams::new(&mut store, &cfg, &mut rng)?;
        let dec = DecoderParams::new(&mut store, &cfg, &mut rng);
        Ok(Self { cfg, store, enc, dec })
    }

    /// Binds `values` to the layout of `cfg`, matching parameters by name.
    pub fn from_store(cfg: ModelConfig, values: &ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        if values.len() != m.store.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                m.store.len(),
                values.len()
            )));
        }
        for e in m.store.entries_mut() {
            let id = values
                .id(&e.name)
                .ok_or_else(|| Error::Config(format!("missing parameter {}", e.name)))?;
            let v = values.value(id);
            if v.shape() != e.value.shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    lhs: e.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            e.value = v.clone();
        }
        Ok(m)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            enc: self.enc.clone(),
            dec: self.dec.clone(),
        }
    }
}
