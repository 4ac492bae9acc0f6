use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Trainable parameters of the biasing head.
#[derive(Clone, Debug, PartialEq)]
pub struct TcpgenParams {
    /// Query projection, `d_emb x d_dec`.
    pub w: Array2<f64>,
    /// Gate weights on the decoder state.
    pub w1: Array1<f64>,
    /// Gate weights on the pointer output vector.
    pub w2: Array1<f64>,
    /// Key and value of the out-of-list entry.
    pub ool_embedding: Array1<f64>,
}

impl TcpgenParams {
    pub fn zeros(d_emb: usize, d_dec: usize) -> Self {
        TcpgenParams {
            w: Array2::zeros((d_emb, d_dec)),
            w1: Array1::zeros(d_dec),
            w2: Array1::zeros(d_emb),
            ool_embedding: Array1::zeros(d_emb),
        }
    }

    /// Gaussian query projection with variance `1/d_dec`, small OOL
    /// embedding, zero gate weights.
    pub fn init(d_emb: usize, d_dec: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[0x7c9]);
        let std = 1.0 / (d_dec as f64).sqrt();
        let mut p = Self::zeros(d_emb, d_dec);
        p.w.iter_mut().for_each(|x| *x = std * rng.sample::<f64, _>(StandardNormal));
        p.ool_embedding
            .iter_mut()
            .for_each(|x| *x = 0.1 * rng.sample::<f64, _>(StandardNormal));
        p
    }

    pub fn d_emb(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_dec(&self) -> usize {
        self.w.ncols()
    }

    /// Attention temperature `1/sqrt(d_emb)`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.d_emb() as f64).sqrt()
    }

    pub fn check(&self) -> Result<()> {
        let (d_emb, d_dec) = (self.d_emb(), self.d_dec());
        if self.w1.len() != d_dec || self.w2.len() != d_emb || self.ool_embedding.len() != d_emb {
            return Err(Error::Shape(format!(
                "parameter shapes disagree: W {d_emb}x{d_dec}, W1 {}, W2 {}, ool {}",
                self.w1.len(),
                self.w2.len(),
                self.ool_embedding.len()
            )));
        }
        for (name, values) in self.named() {
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("W", self.w.as_slice().expect("standard layout")),
            ("W1", self.w1.as_slice().expect("standard layout")),
            ("W2", self.w2.as_slice().expect("standard layout")),
            ("ool_embedding", self.ool_embedding.as_slice().expect("standard layout")),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut [f64]); 4] {
        [
            ("W", self.w.as_slice_mut().expect("standard layout")),
            ("W1", self.w1.as_slice_mut().expect("standard layout")),
            ("W2", self.w2.as_slice_mut().expect("standard layout")),
            ("ool_embedding", self.ool_embedding.as_slice_mut().expect("standard layout")),
        ]
    }
}

const CHECKPOINT_FORMAT: &str = "tcpgen-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    d_emb: usize,
    d_dec: usize,
    vocab_size: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
    #[serde(rename = "W1")]
    w1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<f64>,
    ool_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<Vec<f64>>,
}

/// Parameters plus, when embedding training was enabled, the tuned
/// key/value table.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: TcpgenParams,
    pub embeddings: Option<Array2<f64>>,
}

impl Checkpoint {
    pub fn to_json(&self, vocab_size: usize) -> Result<String> {
        let p = &self.params;
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            d_emb: p.d_emb(),
            d_dec: p.d_dec(),
            vocab_size,
            w: p.w.iter().copied().collect(),
            w1: p.w1.to_vec(),
            w2: p.w2.to_vec(),
            ool_embedding: p.ool_embedding.to_vec(),
            embeddings: self.embeddings.as_ref().map(|e| e.iter().copied().collect()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: &Path, vocab_size: usize) -> Result<()> {
        std::fs::write(path, self.to_json(vocab_size)?).map_err(|e| Error::io(path, e))
    }

    /// Parse and validate against the expected dimensions.
    pub fn from_json(text: &str, vocab_size: usize, d_emb: usize, d_dec: usize) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(text)?;
        let bad = |m: String| Err(Error::Checkpoint(m));
        if f.format != CHECKPOINT_FORMAT || f.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported format {:?} version {}", f.format, f.version));
        }
        if f.d_emb != d_emb || f.d_dec != d_dec || f.vocab_size != vocab_size {
            return bad(format!(
                "dimensions (vocab {}, d_emb {}, d_dec {}) do not match (vocab {vocab_size}, d_emb {d_emb}, d_dec {d_dec})",
                f.vocab_size, f.d_emb, f.d_dec
            ));
        }
        if f.w.len() != d_emb * d_dec || f.w1.len() != d_dec || f.w2.len() != d_emb || f.ool_embedding.len() != d_emb {
            return bad("array lengths do not match declared shapes".into());
        }
        let embeddings = match f.embeddings {
            Some(e) if e.len() == vocab_size * d_emb => Some(
                Array2::from_shape_vec((vocab_size, d_emb), e).map_err(|e| Error::Checkpoint(e.to_string()))?,
            ),
            Some(_) => return bad("embedding table has the wrong length".into()),
            None => None,
        };
        let params = TcpgenParams {
            w: Array2::from_shape_vec((d_emb, d_dec), f.w).map_err(|e| Error::Checkpoint(e.to_string()))?,
            w1: Array1::from(f.w1),
            w2: Array1::from(f.w2),
            ool_embedding: Array1::from(f.ool_embedding),
        };
        params.check()?;
        Ok(Checkpoint { params, embeddings })
    }

    pub fn load(path: &Path, vocab_size: usize, d_emb: usize, d_dec: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, vocab_size, d_emb, d_dec)
    }
}
