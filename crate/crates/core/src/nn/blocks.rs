use serde::{Deserialize, Serialize};

use super::{BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::tensor::{he_uniform_init, Activation, BnMode, Prng, RunningStats, Scalar, Tape, Tensor, Var};

/// Named trainable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    pub params: Vec<(String, Tensor<T>)>,
    pub bn_stats: Vec<(String, RunningStats<T>)>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), bn_stats: Vec::new() }
    }

    fn add(&mut self, name: String, value: Tensor<T>) -> usize {
        debug_assert!(self.params.iter().all(|(n, _)| *n != name), "duplicate parameter {name}");
        self.params.push((name, value));
        self.params.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    fn conv(
        &mut self,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        depthwise: bool,
        bias: bool,
        prng: &mut Prng,
    ) -> Result<Conv> {
        let (shape, fan_in) = if depthwise {
            ([out_ch, 1, k, k], k * k)
        } else {
            ([out_ch, in_ch, k, k], in_ch * k * k)
        };
        let weight = self.add(format!("{prefix}.weight"), he_uniform_init(&shape, fan_in, prng)?);
        let bias = bias.then(|| self.add(format!("{prefix}.bias"), Tensor::zeros(&[out_ch])));
        Ok(Conv { weight, bias, stride, pad: k / 2, depthwise })
    }

    fn batchnorm(&mut self, prefix: &str, channels: usize) -> BatchNorm {
        let gamma = self.add(format!("{prefix}.gamma"), Tensor::full(&[channels], T::one()));
        let beta = self.add(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
        self.bn_stats.push((prefix.to_string(), RunningStats::new(channels)));
        BatchNorm { gamma, beta, stats: self.bn_stats.len() - 1 }
    }

    fn dense(&mut self, prefix: &str, inputs: usize, outputs: usize, prng: &mut Prng) -> Result<Dense> {
        let weight = self.add(format!("{prefix}.weight"), he_uniform_init(&[inputs, outputs], inputs, prng)?);
        let bias = self.add(format!("{prefix}.bias"), Tensor::zeros(&[outputs]));
        Ok(Dense { weight, bias })
    }
}

/// Running-statistics access for one forward pass: train mode updates them,
/// eval mode only reads.
pub(crate) enum BnStats<'a, T> {
    Train(&'a mut [(String, RunningStats<T>)]),
    Eval(&'a [(String, RunningStats<T>)]),
}

pub(crate) struct Ctx<'a, 'b, T> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a [Var],
    pub stats: BnStats<'b, T>,
}

#[derive(Clone, Debug)]
struct Conv {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    pad: usize,
    depthwise: bool,
}

impl Conv {
    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<Var> {
        let w = ctx.params[self.weight];
        let b = self.bias.map(|i| ctx.params[i]);
        if self.depthwise {
            ctx.tape.depthwise_conv2d(x, w, b, self.stride, self.pad)
        } else {
            ctx.tape.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}

#[derive(Clone, Debug)]
struct BatchNorm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

impl BatchNorm {
    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var, act: Activation) -> Result<Var> {
        let (g, b) = (ctx.params[self.gamma], ctx.params[self.beta]);
        let (momentum, eps) = (T::lit(BN_MOMENTUM), T::lit(BN_EPS));
        match &mut ctx.stats {
            BnStats::Train(s) => {
                ctx.tape.batchnorm_act(x, g, b, &mut s[self.stats].1, BnMode::Train, momentum, eps, act)
            }
            BnStats::Eval(s) => {
                let mut frozen = s[self.stats].1.clone();
                ctx.tape.batchnorm_act(x, g, b, &mut frozen, BnMode::Eval, momentum, eps, act)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    weight: usize,
    bias: usize,
}

impl Dense {
    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<Var> {
        ctx.tape.dense(x, ctx.params[self.weight], Some(ctx.params[self.bias]))
    }

    pub(crate) fn weight_index(&self) -> usize {
        self.weight
    }
}

/// Convolution (no bias) + batch norm + activation.
#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
    act: Activation,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        depthwise: bool,
        act: Activation,
        prng: &mut Prng,
    ) -> Result<Self> {
        let conv = store.conv(&format!("{prefix}.conv"), in_ch, out_ch, k, stride, depthwise, false, prng)?;
        let bn = store.batchnorm(&format!("{prefix}.bn"), out_ch);
        Ok(ConvBn { conv, bn, act })
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        self.bn.forward(ctx, y, self.act)
    }
}

/// One row of the inverted-residual stage table: expansion factor `t`,
/// output channels `c`, repeats `n`, stride of the first repeat `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InvertedResidualSpec {
    pub expansion: usize,
    pub out_channels: usize,
    pub repeats: usize,
    pub first_stride: usize,
}

/// Stage table of the scaled-down MobileNetV2-style backbone, `(t, c, n, s)`.
pub const MOBILENET_LITE_STAGES: [InvertedResidualSpec; 4] = [
    InvertedResidualSpec { expansion: 1, out_channels: 16, repeats: 1, first_stride: 1 },
    InvertedResidualSpec { expansion: 6, out_channels: 24, repeats: 2, first_stride: 2 },
    InvertedResidualSpec { expansion: 6, out_channels: 32, repeats: 2, first_stride: 2 },
    InvertedResidualSpec { expansion: 6, out_channels: 64, repeats: 2, first_stride: 2 },
];

const MOBILENET_STEM_CHANNELS: usize = 16;
const FEATURE_DIM: usize = 128;
const VGG_STAGE_CHANNELS: [usize; 3] = [32, 64, 128];
const MIN_INPUT: usize = 32;

/// Expand (1x1) -> depthwise 3x3 -> linear project (1x1), with an identity
/// skip when the block keeps both resolution and width.
#[derive(Clone, Debug)]
pub struct InvertedResidual {
    expand: ConvBn,
    depthwise: ConvBn,
    project: ConvBn,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl InvertedResidual {
    pub fn has_skip(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    /// Index of the projection convolution's weight in the owning store.
    pub fn project_weight(&self) -> usize {
        self.project.conv.weight
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<Var> {
        let h = self.expand.forward(ctx, x)?;
        let h = self.depthwise.forward(ctx, h)?;
        let h = self.project.forward(ctx, h)?;
        if self.has_skip() {
            ctx.tape.add(x, h)
        } else {
            Ok(h)
        }
    }

    /// Runs the block on its own (a fresh tape per call), mainly for tests.
    pub fn apply<T: Scalar>(&self, store: &mut ParamStore<T>, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = store.params.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let stats = match mode {
            BnMode::Train => BnStats::Train(&mut store.bn_stats),
            BnMode::Eval => BnStats::Eval(&store.bn_stats),
        };
        let mut ctx = Ctx { tape: &mut tape, params: &params, stats };
        let xv = ctx.tape.constant(x.clone());
        let y = self.forward(&mut ctx, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// Builds one inverted residual block with stride `stride`.
pub fn build_inverted_residual<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    in_ch: usize,
    expansion: usize,
    out_ch: usize,
    stride: usize,
    prng: &mut Prng,
) -> Result<InvertedResidual> {
    if in_ch == 0 || out_ch == 0 || expansion == 0 {
        return Err(Error::invalid("inverted residual: channels and expansion must be >= 1"));
    }
    if !(1..=2).contains(&stride) {
        return Err(Error::invalid(format!("inverted residual: stride {stride} not in {{1, 2}}")));
    }
    let hidden = in_ch * expansion;
    let expand = ConvBn::build(store, &format!("{prefix}.expand"), in_ch, hidden, 1, 1, false, Activation::Relu6, prng)?;
    let depthwise =
        ConvBn::build(store, &format!("{prefix}.depthwise"), hidden, hidden, 3, stride, true, Activation::Relu6, prng)?;
    let project =
        ConvBn::build(store, &format!("{prefix}.project"), hidden, out_ch, 1, 1, false, Activation::Linear, prng)?;
    Ok(InvertedResidual { expand, depthwise, project, in_channels: in_ch, out_channels: out_ch, stride })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    MobilenetLite,
    VggLite,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::MobilenetLite => "mobilenet_lite",
            BackboneKind::VggLite => "vgg_lite",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mobilenet_lite" => Ok(BackboneKind::MobilenetLite),
            "vgg_lite" => Ok(BackboneKind::VggLite),
            other => Err(Error::invalid(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    ConvBn(ConvBn),
    ConvRelu(Conv),
    Residual(InvertedResidual),
    MaxPool,
    GlobalAvgPool,
    DenseRelu(Dense),
}

/// A feature extractor mapping `N x C x H x W` to `N x feature_dim`.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub in_channels: usize,
    pub feature_dim: usize,
    layers: Vec<Layer>,
}

impl Backbone {
    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, '_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::ConvBn(c) => c.forward(ctx, h)?,
                Layer::ConvRelu(c) => {
                    let y = c.forward(ctx, h)?;
                    ctx.tape.activation(y, Activation::Relu)?
                }
                Layer::Residual(r) => r.forward(ctx, h)?,
                Layer::MaxPool => ctx.tape.maxpool2d(h, 2, 2)?,
                Layer::GlobalAvgPool => ctx.tape.global_avg_pool(h)?,
                Layer::DenseRelu(d) => {
                    let y = d.forward(ctx, h)?;
                    ctx.tape.activation(y, Activation::Relu)?
                }
            };
        }
        Ok(h)
    }

    pub fn inverted_residuals(&self) -> impl Iterator<Item = &InvertedResidual> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Residual(r) => Some(r),
            _ => None,
        })
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::ConvRelu(_) | Layer::ConvBn(_))).count()
            + 3 * self.inverted_residuals().count()
    }

    pub fn maxpool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::MaxPool)).count()
    }

    pub fn build<T: Scalar>(
        kind: BackboneKind,
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        input_hw: usize,
        prng: &mut Prng,
    ) -> Result<Self> {
        match kind {
            BackboneKind::MobilenetLite => build_mobilenet_lite(store, prefix, in_channels, input_hw, prng),
            BackboneKind::VggLite => build_vgg_lite(store, prefix, in_channels, input_hw, prng),
        }
    }
}

fn check_input(in_channels: usize, input_hw: usize, what: &str) -> Result<()> {
    if in_channels == 0 {
        return Err(Error::invalid(format!("{what}: input channels must be >= 1")));
    }
    if input_hw < MIN_INPUT {
        return Err(Error::invalid(format!("{what}: input {input_hw}px is below the {MIN_INPUT}px minimum")));
    }
    Ok(())
}

/// Scaled-down MobileNetV2: 3x3/2 stem to 16 channels, the
/// [`MOBILENET_LITE_STAGES`] table, a 1x1 conv to 128 and global pooling.
pub fn build_mobilenet_lite<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    in_channels: usize,
    input_hw: usize,
    prng: &mut Prng,
) -> Result<Backbone> {
    check_input(in_channels, input_hw, "mobilenet_lite")?;
    let mut layers = vec![Layer::ConvBn(ConvBn::build(
        store,
        &format!("{prefix}.stem"),
        in_channels,
        MOBILENET_STEM_CHANNELS,
        3,
        2,
        false,
        Activation::Relu6,
        prng,
    )?)];
    let mut ch = MOBILENET_STEM_CHANNELS;
    let mut block = 0;
    for stage in &MOBILENET_LITE_STAGES {
        for r in 0..stage.repeats {
            let stride = if r == 0 { stage.first_stride } else { 1 };
            let b = build_inverted_residual(
                store,
                &format!("{prefix}.block{block}"),
                ch,
                stage.expansion,
                stage.out_channels,
                stride,
                prng,
            )?;
            layers.push(Layer::Residual(b));
            ch = stage.out_channels;
            block += 1;
        }
    }
    layers.push(Layer::ConvBn(ConvBn::build(
        store,
        &format!("{prefix}.head_conv"),
        ch,
        FEATURE_DIM,
        1,
        1,
        false,
        Activation::Relu6,
        prng,
    )?));
    layers.push(Layer::GlobalAvgPool);
    Ok(Backbone { kind: BackboneKind::MobilenetLite, in_channels, feature_dim: FEATURE_DIM, layers })
}

/// VGG-style: three stages of two 3x3 conv+relu and a 2x2 max pool
/// (32, 64, 128 channels), global pooling, then dense 128 + relu.
pub fn build_vgg_lite<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    in_channels: usize,
    input_hw: usize,
    prng: &mut Prng,
) -> Result<Backbone> {
    check_input(in_channels, input_hw, "vgg_lite")?;
    let mut layers = Vec::new();
    let mut ch = in_channels;
    let mut idx = 0;
    for &out in &VGG_STAGE_CHANNELS {
        for _ in 0..2 {
            let conv = store.conv(&format!("{prefix}.conv{idx}"), ch, out, 3, 1, false, true, prng)?;
            layers.push(Layer::ConvRelu(conv));
            ch = out;
            idx += 1;
        }
        layers.push(Layer::MaxPool);
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::DenseRelu(store.dense(&format!("{prefix}.fc"), ch, FEATURE_DIM, prng)?));
    Ok(Backbone { kind: BackboneKind::VggLite, in_channels, feature_dim: FEATURE_DIM, layers })
}

pub(crate) fn build_dense<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    inputs: usize,
    outputs: usize,
    prng: &mut Prng,
) -> Result<Dense> {
    store.dense(prefix, inputs, outputs, prng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i * 37 % 101) as f64) / 50.0 - 1.0)
    }

    #[test]
    fn skip_rule_and_shapes() {
        let mut store = ParamStore::<f64>::new();
        let mut prng = Prng::new(1);
        let same = build_inverted_residual(&mut store, "a", 16, 1, 16, 1, &mut prng).unwrap();
        assert!(same.has_skip());
        let y = same.apply(&mut store, &ramp(&[2, 16, 8, 8]), BnMode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 16, 8, 8]);

        let down = build_inverted_residual(&mut store, "b", 16, 6, 24, 2, &mut prng).unwrap();
        assert!(!down.has_skip());
        let y = down.apply(&mut store, &ramp(&[2, 16, 8, 8]), BnMode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 24, 4, 4]);
    }

    #[test]
    fn zero_projection_with_skip_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let block = build_inverted_residual(&mut store, "a", 16, 1, 16, 1, &mut Prng::new(2)).unwrap();
        let w = block.project_weight();
        store.params[w].1.data_mut().fill(0.0);
        let x = ramp(&[2, 16, 6, 6]);
        for mode in [BnMode::Train, BnMode::Eval] {
            let y = block.apply(&mut store, &x, mode).unwrap();
            assert_eq!(y.data(), x.data());
        }
    }

    #[test]
    fn mobilenet_stage_table_skip_flags() {
        let mut store = ParamStore::<f32>::new();
        let b = build_mobilenet_lite(&mut store, "m", 3, 64, &mut Prng::new(0)).unwrap();
        let flags: Vec<bool> = b.inverted_residuals().map(|r| r.has_skip()).collect();
        // (1,16,1,1): 16->16 s1 skip; each stage's first repeat changes width or stride,
        // the second repeat keeps both.
        assert_eq!(flags, vec![true, false, true, false, true, false, true]);
        for r in b.inverted_residuals() {
            assert_eq!(r.has_skip(), r.stride == 1 && r.in_channels == r.out_channels);
        }
    }

    #[test]
    fn vgg_structure() {
        let mut store = ParamStore::<f32>::new();
        let b = build_vgg_lite(&mut store, "v", 3, 64, &mut Prng::new(0)).unwrap();
        assert_eq!(b.conv_layer_count(), 6);
        assert_eq!(b.maxpool_count(), 3);
        assert_eq!(64 >> b.maxpool_count(), 8);
    }

    #[test]
    fn small_inputs_rejected() {
        let mut store = ParamStore::<f32>::new();
        assert!(build_mobilenet_lite(&mut store, "m", 3, 31, &mut Prng::new(0)).is_err());
        assert!(build_vgg_lite(&mut store, "v", 1, 16, &mut Prng::new(0)).is_err());
    }
}
