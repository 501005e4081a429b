//! x-vector TDNN: five spliced frame layers, mean+std statistics pooling,
//! a 256-dim segment layer (the embedding), and a cosine projection trained
//! with the additive angular margin loss.
//!
//! | layer      | context          | input x output |
//! |------------|------------------|----------------|
//! | frame1     | t-2 .. t+2       | 200 x 256      |
//! | frame2     | {t-2, t, t+2}    | 768 x 256      |
//! | frame3     | {t-3, t, t+3}    | 768 x 256      |
//! | frame4     | {t}              | 256 x 256      |
//! | frame5     | {t}              | 256 x 512      |
//! | stats-pool | [0, T)           | 512T x 1024    |
//! | segment6   | {0}              | 1024 x 256     |
//! | projection | {0}              | 256 x N        |

pub mod aam;
pub mod io;
pub mod net;
pub mod train;

use rand::Rng;
use thiserror::Error;

use crate::seed;

pub use aam::{aam_loss, AamOutput, AamParams};
pub use net::{forward, forward_cached, ForwardCache};
pub use train::{train_step, TrainOptions};

#[derive(Debug, Error)]
pub enum TdnnError {
    #[error("input has {frames} frames; the network needs at least {needed}")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("input has {found} dims; the network expects {expected}")]
    InputDim { found: usize, expected: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("zero-norm {0}")]
    ZeroNorm(&'static str),
    #[error("non-finite loss ({loss}) at batch item {item}")]
    NonFinite { loss: f64, item: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("learning rate must be non-negative, got {0}")]
    BadLearningRate(f64),
    #[error("number of classes must be at least 1")]
    NoClasses,
    #[error("cannot average an empty embedding list")]
    EmptyAverage,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("parameter file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One spliced frame layer: output row t reads input rows `t + offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayerSpec {
    pub name: String,
    pub offsets: Vec<i32>,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdnnConfig {
    pub feat_dim: usize,
    pub frame_layers: Vec<FrameLayerSpec>,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl TdnnConfig {
    /// The Table-1 architecture over 40-dim fbank input.
    pub fn table1(num_classes: usize) -> Self {
        let layer = |name: &str, offsets: &[i32], out| FrameLayerSpec {
            name: name.to_string(),
            offsets: offsets.to_vec(),
            output_dim: out,
        };
        Self {
            feat_dim: 40,
            frame_layers: vec![
                layer("frame1", &[-2, -1, 0, 1, 2], 256),
                layer("frame2", &[-2, 0, 2], 256),
                layer("frame3", &[-3, 0, 3], 256),
                layer("frame4", &[0], 256),
                layer("frame5", &[0], 512),
            ],
            embedding_dim: 256,
            num_classes,
        }
    }

    /// Spliced input width of frame layer `i`.
    pub fn layer_input_dim(&self, i: usize) -> usize {
        let below = if i == 0 { self.feat_dim } else { self.frame_layers[i - 1].output_dim };
        below * self.frame_layers[i].offsets.len()
    }

    /// Input frames consumed per output frame at the top frame layer.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .frame_layers
            .iter()
            .map(|l| (l.offsets.iter().max().unwrap() - l.offsets.iter().min().unwrap()) as usize)
            .sum::<usize>()
    }

    /// Frames reaching the pooling layer for `t` input frames.
    pub fn pooled_frames(&self, t: usize) -> usize {
        (t + 1).saturating_sub(self.receptive_field())
    }

    pub fn pool_dim(&self) -> usize {
        2 * self.frame_layers.last().map(|l| l.output_dim).unwrap_or(self.feat_dim)
    }
}

/// Dense layer, weight stored row-major as `output x input`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, output_dim, weight: vec![0.0; input_dim * output_dim], bias: vec![0.0; output_dim] }
    }

    /// Uniform on `[-sqrt(3/fan_in), sqrt(3/fan_in)]`, i.e. std `1/sqrt(fan_in)`; zero bias.
    pub fn init(input_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let a = (3.0 / input_dim as f64).sqrt();
        let weight = (0..input_dim * output_dim).map(|_| rng.gen_range(-a..a)).collect();
        Self { input_dim, output_dim, weight, bias: vec![0.0; output_dim] }
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// Bias-free `embedding_dim x N` projection; column `j` is class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub rows: usize,
    pub classes: usize,
    pub weight: Vec<f64>,
}

impl Projection {
    pub fn init(rows: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let a = (3.0 / rows as f64).sqrt();
        Self { rows, classes, weight: (0..rows * classes).map(|_| rng.gen_range(-a..a)).collect() }
    }

    pub fn zeros(rows: usize, classes: usize) -> Self {
        Self { rows, classes, weight: vec![0.0; rows * classes] }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.weight[i * self.classes + j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdnnParams {
    pub config: TdnnConfig,
    pub frame: Vec<Affine>,
    pub segment6: Affine,
    pub projection: Projection,
}

fn layer_rng(seed: u64, name: &str) -> rand_chacha::ChaCha8Rng {
    seed::stream(seed, &format!("tdnn/{name}"), 0)
}

pub fn init_tdnn(cfg: &TdnnConfig, seed: u64) -> TdnnParams {
    let frame = cfg
        .frame_layers
        .iter()
        .enumerate()
        .map(|(i, l)| Affine::init(cfg.layer_input_dim(i), l.output_dim, &mut layer_rng(seed, &l.name)))
        .collect();
    let segment6 = Affine::init(cfg.pool_dim(), cfg.embedding_dim, &mut layer_rng(seed, "segment6"));
    let projection = Projection::init(cfg.embedding_dim, cfg.num_classes, &mut layer_rng(seed, "projection"));
    TdnnParams { config: cfg.clone(), frame, segment6, projection }
}

impl TdnnParams {
    pub fn zeros_like(&self) -> TdnnParams {
        TdnnParams {
            config: self.config.clone(),
            frame: self.frame.iter().map(|a| Affine::zeros(a.input_dim, a.output_dim)).collect(),
            segment6: Affine::zeros(self.segment6.input_dim, self.segment6.output_dim),
            projection: Projection::zeros(self.projection.rows, self.projection.classes),
        }
    }

    /// Named flat views of every tensor, in file order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (spec, a) in self.config.frame_layers.iter().zip(&self.frame) {
            out.push((format!("{}.weight", spec.name), a.weight.as_slice()));
            out.push((format!("{}.bias", spec.name), a.bias.as_slice()));
        }
        out.push(("segment6.weight".into(), self.segment6.weight.as_slice()));
        out.push(("segment6.bias".into(), self.segment6.bias.as_slice()));
        out.push(("projection.weight".into(), self.projection.weight.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (spec, a) in self.config.frame_layers.iter().zip(self.frame.iter_mut()) {
            out.push((format!("{}.weight", spec.name), a.weight.as_mut_slice()));
            out.push((format!("{}.bias", spec.name), a.bias.as_mut_slice()));
        }
        out.push(("segment6.weight".into(), self.segment6.weight.as_mut_slice()));
        out.push(("segment6.bias".into(), self.segment6.bias.as_mut_slice()));
        out.push(("projection.weight".into(), self.projection.weight.as_mut_slice()));
        out
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &TdnnParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Copy every layer below the projection and start a fresh `embedding_dim x new_classes` projection.
pub fn transfer_init(source: &TdnnParams, new_classes: usize, seed: u64) -> Result<TdnnParams, TdnnError> {
    if new_classes < 1 {
        return Err(TdnnError::NoClasses);
    }
    let mut config = source.config.clone();
    config.num_classes = new_classes;
    let projection = Projection::init(config.embedding_dim, new_classes, &mut layer_rng(seed, "projection"));
    Ok(TdnnParams { config, frame: source.frame.clone(), segment6: source.segment6.clone(), projection })
}

/// Segment-layer output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-dimension mean, used to merge the channels of one array recording.
pub fn average_embeddings(es: &[Embedding]) -> Result<Embedding, TdnnError> {
    let first = es.first().ok_or(TdnnError::EmptyAverage)?;
    let mut acc = vec![0.0; first.len()];
    for e in es {
        if e.len() != acc.len() {
            return Err(TdnnError::DimMismatch(acc.len(), e.len()));
        }
        for (a, v) in acc.iter_mut().zip(&e.0) {
            *a += v;
        }
    }
    let n = es.len() as f64;
    Ok(Embedding(acc.into_iter().map(|a| a / n).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_shapes() {
        let cfg = TdnnConfig::table1(10);
        assert_eq!(cfg.receptive_field(), 15);
        let dims: Vec<usize> = (0..5).map(|i| cfg.layer_input_dim(i)).collect();
        assert_eq!(dims, vec![200, 768, 768, 256, 256]);
        assert_eq!(cfg.pool_dim(), 1024);
        let p = init_tdnn(&cfg, 1);
        assert_eq!((p.projection.rows, p.projection.classes), (256, 10));
        assert_eq!((p.segment6.input_dim, p.segment6.output_dim), (1024, 256));
    }

    #[test]
    fn init_is_deterministic_and_fan_in_scaled() {
        let cfg = TdnnConfig::table1(4);
        let a = init_tdnn(&cfg, 5);
        assert_eq!(a, init_tdnn(&cfg, 5));
        assert_ne!(a, init_tdnn(&cfg, 6));
        for layer in a.frame.iter().chain(std::iter::once(&a.segment6)) {
            let n = layer.weight.len() as f64;
            let mean = layer.weight.iter().sum::<f64>() / n;
            let std = (layer.weight.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
            let target = 1.0 / (layer.input_dim as f64).sqrt();
            assert!((std / target - 1.0).abs() < 0.2, "std {std} vs {target}");
        }
    }

    #[test]
    fn transfer_copies_lower_layers() {
        let src = init_tdnn(&TdnnConfig::table1(1986), 3);
        let t = transfer_init(&src, 254, 4).unwrap();
        assert_eq!((t.projection.rows, t.projection.classes), (256, 254));
        assert_eq!(t.frame, src.frame);
        assert_eq!(t.segment6, src.segment6);
        let same = transfer_init(&src, 1986, 4).unwrap();
        assert_ne!(same.projection, src.projection);
        assert!(matches!(transfer_init(&src, 0, 1), Err(TdnnError::NoClasses)));
    }

    #[test]
    fn averaging() {
        let v = Embedding((0..256).map(|i| i as f64 * 0.5 - 3.0).collect());
        assert_eq!(average_embeddings(&vec![v.clone(); 16]).unwrap(), v);
        let neg = Embedding(v.0.iter().map(|x| -x).collect());
        assert!(average_embeddings(&[v.clone(), neg]).unwrap().0.iter().all(|&x| x == 0.0));
        let mut a = vec![0.0; 256];
        let mut b = vec![0.0; 256];
        a[0] = 1.0;
        b[1] = 1.0;
        let m = average_embeddings(&[Embedding(a), Embedding(b)]).unwrap();
        assert_eq!(&m.0[..3], &[0.5, 0.5, 0.0]);
        assert!(matches!(average_embeddings(&[]), Err(TdnnError::EmptyAverage)));
    }
}
