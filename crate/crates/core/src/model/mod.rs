//! Compact EEGNet-style classifier.
//!
//! Input layout is `[N, 1, channels, samples]`. Two convolutional blocks feed
//! a dense classification head:
//!
//! * block 1: temporal conv → batch norm → depthwise spatial conv → batch
//!   norm → ELU → average pool → dropout
//! * block 2: depthwise temporal conv → pointwise conv → batch norm → ELU →
//!   average pool → dropout
//! * head: flatten → dense
//!
//! Pooling drops trailing samples that do not fill a whole window.

mod checkpoint;
mod freeze;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, Provenance, CHECKPOINT_FORMAT_VERSION};
pub use freeze::{apply_freeze, FreezeDepth};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, BnMode, Float, Graph, Padding, ParamStore, Tensor, Var};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Hyperparameters of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    /// Temporal filter count.
    pub f1: usize,
    /// Spatial filters per temporal filter.
    pub depth_multiplier: usize,
    /// Pointwise filter count of block 2.
    pub f2: usize,
    pub temporal_kernel_len: usize,
    pub separable_kernel_len: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout_rate: f64,
    pub sample_rate_hz: f64,
}

impl ArchitectureSpec {
    /// Default layout: F1=8, D=2, F2=F1·D, temporal kernel of half a second,
    /// separable kernel 16, pools 4 and 8.
    pub fn eegnet(n_channels: usize, n_samples: usize, n_classes: usize, sample_rate_hz: f64) -> Self {
        ArchitectureSpec {
            n_channels,
            n_samples,
            n_classes,
            f1: 8,
            depth_multiplier: 2,
            f2: 16,
            temporal_kernel_len: ((sample_rate_hz / 2.0).round() as usize).max(1),
            separable_kernel_len: 16,
            pool1: 4,
            pool2: 8,
            dropout_rate: 0.1,
            sample_rate_hz,
        }
    }

    /// Check every constraint and return the derived extents.
    pub fn layout(&self) -> Result<Layout> {
        let positive = [
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
            ("f1", self.f1),
            ("depth_multiplier", self.depth_multiplier),
            ("f2", self.f2),
            ("temporal_kernel_len", self.temporal_kernel_len),
            ("separable_kernel_len", self.separable_kernel_len),
            ("pool1", self.pool1),
            ("pool2", self.pool2),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes", format!("need at least 2, got {}", self.n_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate", format!("must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        let pooled1 = self.n_samples / self.pool1;
        let pooled2 = pooled1 / self.pool2;
        if pooled2 == 0 {
            return Err(Error::invalid(
                "pooling",
                format!(
                    "{} samples -> {} after pool1={} -> {} after pool2={}; need at least one output step",
                    self.n_samples, pooled1, self.pool1, pooled2, self.pool2
                ),
            ));
        }
        Ok(Layout {
            crop1: pooled1 * self.pool1,
            pooled1,
            crop2: pooled2 * self.pool2,
            pooled2,
            features: self.f2 * pooled2,
        })
    }

    pub fn spatial_filters(&self) -> usize {
        self.f1 * self.depth_multiplier
    }
}

/// Time extents through the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub crop1: usize,
    pub pooled1: usize,
    pub crop2: usize,
    pub pooled2: usize,
    /// Flattened width feeding the head.
    pub features: usize,
}

/// Parameter group used for freezing and head surgery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockId {
    #[serde(rename = "block1")]
    Block1,
    #[serde(rename = "block2")]
    Block2,
    #[serde(rename = "head")]
    Head,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockId::Block1 => "block1",
            BlockId::Block2 => "block2",
            BlockId::Head => "head",
        })
    }
}

impl FromStr for BlockId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block1" => Ok(BlockId::Block1),
            "block2" => Ok(BlockId::Block2),
            "head" => Ok(BlockId::Head),
            other => Err(Error::invalid("block id", format!("unknown block `{other}`"))),
        }
    }
}

pub const TEMPORAL_CONV: &str = "block1.conv_temporal.weight";
pub const BN1: &str = "block1.bn1";
pub const SPATIAL_CONV: &str = "block1.conv_spatial.weight";
pub const BN2: &str = "block1.bn2";
pub const SEPARABLE_DEPTHWISE: &str = "block2.conv_depthwise.weight";
pub const SEPARABLE_POINTWISE: &str = "block2.conv_pointwise.weight";
pub const BN3: &str = "block2.bn3";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Block a parameter name belongs to, from its prefix.
pub fn block_of(name: &str) -> Option<BlockId> {
    match name.split('.').next()? {
        "block1" => Some(BlockId::Block1),
        "block2" => Some(BlockId::Block2),
        "head" => Some(BlockId::Head),
        _ => None,
    }
}

pub fn block_index(params: &ParamStore) -> Result<BTreeMap<String, BlockId>> {
    params
        .names()
        .map(|n| {
            block_of(n)
                .map(|b| (n.to_string(), b))
                .ok_or_else(|| Error::invalid("parameter", format!("`{n}` has no block")))
        })
        .collect()
}

fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-limit..=limit))
}

fn insert_bn(params: &mut ParamStore, prefix: &str, c: usize) {
    params.insert(format!("{prefix}.gamma"), Tensor::full(&[c], 1.0));
    params.insert(format!("{prefix}.beta"), Tensor::zeros(&[c]));
    params.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[c]));
    params.insert_buffer(format!("{prefix}.running_var"), Tensor::full(&[c], 1.0));
}

pub(crate) fn init_head<R: Rng + ?Sized>(params: &mut ParamStore, spec: &ArchitectureSpec, rng: &mut R) -> Result<()> {
    let features = spec.layout()?.features;
    let k = spec.n_classes;
    params.insert(HEAD_WEIGHT, glorot(&[features, k], features, k, rng));
    params.insert(HEAD_BIAS, Tensor::zeros(&[k]));
    Ok(())
}

/// Network definition bound to a validated spec.
#[derive(Clone, Debug, PartialEq)]
pub struct Eegnet {
    spec: ArchitectureSpec,
    layout: Layout,
}

/// Result of a forward pass.
pub struct Forward<T> {
    pub logits: Var,
    /// Graph leaves bound to trainable parameters.
    pub bound: Vec<(String, Var)>,
    /// Train-mode batch statistics per batch-norm prefix.
    pub bn_stats: Vec<(String, BatchStats<T>)>,
}

/// Construct the network and freshly initialized parameters.
pub fn build_model<R: Rng + ?Sized>(spec: &ArchitectureSpec, rng: &mut R) -> Result<(ParamStore, Eegnet)> {
    let model = Eegnet::new(spec.clone())?;
    let s = spec;
    let sf = s.spatial_filters();
    let mut params = ParamStore::new();
    let kt = s.temporal_kernel_len;
    params.insert(TEMPORAL_CONV, glorot(&[s.f1, 1, 1, kt], kt, s.f1 * kt, rng));
    insert_bn(&mut params, BN1, s.f1);
    params.insert(
        SPATIAL_CONV,
        glorot(&[sf, 1, s.n_channels, 1], s.n_channels, s.depth_multiplier * s.n_channels, rng),
    );
    insert_bn(&mut params, BN2, sf);
    let ks = s.separable_kernel_len;
    params.insert(SEPARABLE_DEPTHWISE, glorot(&[sf, 1, 1, ks], ks, ks, rng));
    params.insert(SEPARABLE_POINTWISE, glorot(&[s.f2, sf, 1, 1], sf, s.f2, rng));
    insert_bn(&mut params, BN3, s.f2);
    init_head(&mut params, s, rng)?;
    Ok((params, model))
}

impl Eegnet {
    pub fn new(spec: ArchitectureSpec) -> Result<Self> {
        let layout = spec.layout()?;
        Ok(Eegnet { spec, layout })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Record the network on `graph`. In train mode dropout is active and
    /// batch norms use batch statistics, except those whose parameters are
    /// frozen, which stay on their running statistics.
    pub fn forward<T: Float, R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<T>,
        params: &ParamStore<T>,
        input: Tensor<T>,
        train: bool,
        rng: &mut R,
    ) -> Result<Forward<T>> {
        let s = &self.spec;
        let shape = input.shape();
        let expect = [shape.first().copied().unwrap_or(0), 1, s.n_channels, s.n_samples];
        if shape != expect {
            return Err(Error::shape(
                "model input",
                format!("expected [N, 1, {}, {}], got {shape:?}", s.n_channels, s.n_samples),
            ));
        }
        let n = shape[0];
        let mut rec = Recorder {
            params,
            bound: Vec::new(),
            bn_stats: Vec::new(),
        };
        let x = graph.constant(input);

        // block 1
        let k = rec.bind(graph, TEMPORAL_CONV)?;
        let h = graph.conv2d(x, k, 1, Padding::same_width(s.temporal_kernel_len))?;
        let h = rec.batch_norm(graph, h, BN1, train)?;
        let k = rec.bind(graph, SPATIAL_CONV)?;
        let h = graph.depthwise_conv(h, k, s.depth_multiplier, Padding::default())?;
        let h = rec.batch_norm(graph, h, BN2, train)?;
        let h = graph.elu(h);
        let h = graph.crop_width(h, self.layout.crop1)?;
        let h = graph.avg_pool(h, 1, s.pool1)?;
        let h = graph.dropout(h, s.dropout_rate, train, rng)?;

        // block 2
        let k = rec.bind(graph, SEPARABLE_DEPTHWISE)?;
        let h = graph.depthwise_conv(h, k, 1, Padding::same_width(s.separable_kernel_len))?;
        let k = rec.bind(graph, SEPARABLE_POINTWISE)?;
        let h = graph.conv2d(h, k, 1, Padding::default())?;
        let h = rec.batch_norm(graph, h, BN3, train)?;
        let h = graph.elu(h);
        let h = graph.crop_width(h, self.layout.crop2)?;
        let h = graph.avg_pool(h, 1, s.pool2)?;
        let h = graph.dropout(h, s.dropout_rate, train, rng)?;

        // head
        let h = graph.reshape(h, &[n, self.layout.features])?;
        let w = rec.bind(graph, HEAD_WEIGHT)?;
        let b = rec.bind(graph, HEAD_BIAS)?;
        let logits = graph.dense(h, w, b)?;
        Ok(Forward {
            logits,
            bound: rec.bound,
            bn_stats: rec.bn_stats,
        })
    }

    /// Class probabilities in eval mode, processed in chunks of `batch` trials.
    pub fn predict_proba(&self, params: &ParamStore, input: &Tensor, batch: usize) -> Result<Tensor> {
        let s = input.shape();
        let n = s[0];
        let per = s[1..].iter().product::<usize>();
        let k = self.spec.n_classes;
        let mut out = Vec::with_capacity(n * k);
        let mut unused = crate::rng::seeded(0);
        for start in (0..n).step_by(batch.max(1)) {
            let end = (start + batch.max(1)).min(n);
            let chunk = Tensor::new(
                vec![end - start, s[1], s[2], s[3]],
                input.data()[start * per..end * per].to_vec(),
            )?;
            let mut g = Graph::new();
            let fw = self.forward(&mut g, params, chunk, false, &mut unused)?;
            out.extend_from_slice(crate::tensor::softmax_rows(g.value(fw.logits))?.data());
        }
        Tensor::new(vec![n, k], out)
    }
}

struct Recorder<'p, T> {
    params: &'p ParamStore<T>,
    bound: Vec<(String, Var)>,
    bn_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Float> Recorder<'_, T> {
    fn bind(&mut self, graph: &mut Graph<T>, name: &str) -> Result<Var> {
        let t = self.params.require(name)?.clone();
        if self.params.is_trainable(name) {
            let v = graph.param(t);
            self.bound.push((name.to_string(), v));
            Ok(v)
        } else {
            Ok(graph.constant(t))
        }
    }

    fn batch_norm(&mut self, graph: &mut Graph<T>, x: Var, prefix: &str, train: bool) -> Result<Var> {
        let gamma_name = format!("{prefix}.gamma");
        let gamma = self.bind(graph, &gamma_name)?;
        let beta = self.bind(graph, &format!("{prefix}.beta"))?;
        let eps = T::of(BN_EPSILON);
        let (y, stats) = if train && !self.params.is_frozen(&gamma_name) {
            graph.batch_norm(x, gamma, beta, BnMode::Train { eps })?
        } else {
            let rm = self.params.require(&format!("{prefix}.running_mean"))?;
            let rv = self.params.require(&format!("{prefix}.running_var"))?;
            let mode = BnMode::Eval {
                running_mean: rm.data(),
                running_var: rv.data(),
                eps,
            };
            graph.batch_norm(x, gamma, beta, mode)?
        };
        if let Some(st) = stats {
            self.bn_stats.push((prefix.to_string(), st));
        }
        Ok(y)
    }
}

/// Fold train-mode batch statistics into the running estimates of every
/// batch norm that is not frozen.
pub fn update_running_stats<T: Float>(params: &mut ParamStore<T>, stats: &[(String, BatchStats<T>)]) -> Result<()> {
    let m = T::of(BN_MOMENTUM);
    let keep = T::one() - m;
    for (prefix, st) in stats {
        if params.is_frozen(&format!("{prefix}.gamma")) {
            continue;
        }
        let unbiased = st.unbiased_var();
        for (suffix, batch) in [("running_mean", &st.mean), ("running_var", &unbiased)] {
            let name = format!("{prefix}.{suffix}");
            if params.is_frozen(&name) {
                continue;
            }
            let t = params
                .get_mut(&name)
                .ok_or_else(|| Error::Missing(format!("buffer `{name}`")))?;
            for (r, &b) in t.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + m * b;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small_spec() -> ArchitectureSpec {
        let mut s = ArchitectureSpec::eegnet(4, 64, 3, 64.0);
        s.temporal_kernel_len = 8;
        s.separable_kernel_len = 4;
        s.pool1 = 2;
        s.pool2 = 4;
        s
    }

    #[test]
    fn reference_spec_builds_and_shapes() {
        let spec = ArchitectureSpec::eegnet(25, 1000, 4, 250.0);
        let (params, model) = build_model(&spec, &mut seeded(1)).unwrap();
        assert_eq!(model.layout().pooled2, 31);
        assert_eq!(params.get(HEAD_WEIGHT).unwrap().shape(), &[16 * 31, 4]);
        let input = Tensor::from_fn(&[2, 1, 25, 1000], |i| ((i % 17) as f32 - 8.0) * 0.1);
        let probs = model.predict_proba(&params, &input, 8).unwrap();
        assert_eq!(probs.shape(), &[2, 4]);
        for row in probs.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = small_spec();
        let (a, _) = build_model(&spec, &mut seeded(9)).unwrap();
        let (b, _) = build_model(&spec, &mut seeded(9)).unwrap();
        let (c, _) = build_model(&spec, &mut seeded(10)).unwrap();
        assert!(a.values_bit_equal(&b));
        assert!(!a.values_bit_equal(&c));
    }

    #[test]
    fn infeasible_pooling_reports_extents() {
        let mut spec = small_spec();
        spec.n_samples = 7;
        let err = build_model(&spec, &mut seeded(0)).unwrap_err().to_string();
        assert!(err.contains("7 samples -> 3 after pool1=2 -> 0"), "{err}");
    }

    #[test]
    fn invalid_dropout_and_classes_rejected() {
        let mut spec = small_spec();
        spec.dropout_rate = 1.0;
        assert!(spec.layout().is_err());
        let mut spec = small_spec();
        spec.n_classes = 1;
        assert!(spec.layout().is_err());
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let spec = small_spec();
        let (params, model) = build_model(&spec, &mut seeded(0)).unwrap();
        let bad = Tensor::zeros(&[2, 1, 5, 64]);
        assert!(model.predict_proba(&params, &bad, 4).is_err());
    }

    #[test]
    fn every_parameter_has_a_block() {
        let (params, _) = build_model(&small_spec(), &mut seeded(0)).unwrap();
        let idx = block_index(&params).unwrap();
        assert_eq!(idx.len(), params.len());
        assert_eq!(idx[HEAD_BIAS], BlockId::Head);
        assert_eq!(idx["block1.bn2.running_var"], BlockId::Block1);
    }

    #[test]
    fn train_forward_reports_batch_stats_and_updates_running() {
        let spec = small_spec();
        let (mut params, model) = build_model(&spec, &mut seeded(0)).unwrap();
        let input = Tensor::from_fn(&[3, 1, 4, 64], |i| (i as f32 * 0.37).sin());
        let mut g = Graph::new();
        let fw = model.forward(&mut g, &params, input, true, &mut seeded(1)).unwrap();
        assert_eq!(fw.bn_stats.len(), 3);
        let before = params.get("block1.bn1.running_mean").unwrap().clone();
        update_running_stats(&mut params, &fw.bn_stats).unwrap();
        assert_ne!(params.get("block1.bn1.running_mean").unwrap(), &before);
    }
}
