use serde::{Deserialize, Serialize};

use super::blocks::{build_dense, Backbone, BackboneKind, BnStats, Ctx, Dense, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Activation, BnMode, Prng, Scalar, Tape, Tensor, Var};

pub const NUM_CLASSES: usize = 2;
pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Multi,
    Single,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Multi => "multi",
            Arch::Single => "single",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(Arch::Multi),
            "single" => Ok(Arch::Single),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub backbone: BackboneKind,
    pub image_size: usize,
    pub hidden: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch, backbone: BackboneKind, image_size: usize) -> Self {
        ModelSpec { arch, backbone, image_size, hidden: DEFAULT_HIDDEN }
    }
}

#[derive(Clone, Debug)]
struct Head {
    fc1: Dense,
    fc2: Dense,
}

/// RGB branch, optional silhouette branch, and the fusion MLP head.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    store: ParamStore<T>,
    rgb: Backbone,
    sil: Option<Backbone>,
    head: Head,
}

/// Two independent backbones (`rgb.*`, `sil.*`), feature concatenation,
/// dense `2*feature_dim -> hidden` + relu, dense `hidden -> 2`.
pub fn build_multi_input<T: Scalar>(
    kind: BackboneKind,
    rgb_shape: [usize; 3],
    sil_shape: [usize; 3],
    hidden: usize,
    prng: &mut Prng,
) -> Result<Model<T>> {
    if rgb_shape[0] != 3 || sil_shape[0] != 1 {
        return Err(Error::invalid(format!(
            "multi-input expects 3-channel RGB and 1-channel silhouette, got {rgb_shape:?} and {sil_shape:?}"
        )));
    }
    if rgb_shape[1..] != sil_shape[1..] {
        return Err(Error::invalid(format!(
            "branch spatial shapes differ: {:?} vs {:?}",
            &rgb_shape[1..],
            &sil_shape[1..]
        )));
    }
    let size = square(rgb_shape)?;
    Model::build(ModelSpec { arch: Arch::Multi, backbone: kind, image_size: size, hidden }, prng)
}

/// RGB-only baseline: one backbone, dense `feature_dim -> hidden` + relu,
/// dense `hidden -> 2`.
pub fn build_single_input<T: Scalar>(
    kind: BackboneKind,
    rgb_shape: [usize; 3],
    hidden: usize,
    prng: &mut Prng,
) -> Result<Model<T>> {
    if rgb_shape[0] != 3 {
        return Err(Error::invalid(format!("single-input expects a 3-channel RGB shape, got {rgb_shape:?}")));
    }
    let size = square(rgb_shape)?;
    Model::build(ModelSpec { arch: Arch::Single, backbone: kind, image_size: size, hidden }, prng)
}

fn square(shape: [usize; 3]) -> Result<usize> {
    if shape[1] != shape[2] {
        return Err(Error::invalid(format!("only square inputs are supported, got {}x{}", shape[1], shape[2])));
    }
    Ok(shape[1])
}

pub fn param_count<T: Scalar>(model: &Model<T>) -> usize {
    model.store.param_count()
}

impl<T: Scalar> Model<T> {
    /// Builds the model; the RGB branch always consumes the PRNG first, so
    /// single- and multi-input models from the same seed share RGB weights.
    pub fn build(spec: ModelSpec, prng: &mut Prng) -> Result<Self> {
        if spec.hidden == 0 {
            return Err(Error::invalid("hidden width must be >= 1"));
        }
        let mut store = ParamStore::new();
        let rgb = Backbone::build(spec.backbone, &mut store, "rgb", 3, spec.image_size, prng)?;
        let sil = match spec.arch {
            Arch::Multi => Some(Backbone::build(spec.backbone, &mut store, "sil", 1, spec.image_size, prng)?),
            Arch::Single => None,
        };
        let fused = rgb.feature_dim + sil.as_ref().map_or(0, |s| s.feature_dim);
        let fc1 = build_dense(&mut store, "head.fc1", fused, spec.hidden, prng)?;
        let fc2 = build_dense(&mut store, "head.fc2", spec.hidden, NUM_CLASSES, prng)?;
        Ok(Model { spec, store, rgb, sil, head: Head { fc1, fc2 } })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn is_multi_input(&self) -> bool {
        self.sil.is_some()
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.store.params.iter().map(|(_, t)| t).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.store.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.store.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Name of the first fusion layer's weight (`fused_features x hidden`).
    pub fn fusion_weight_name(&self) -> &str {
        &self.store.params[self.head.fc1.weight_index()].0
    }

    pub fn rgb_feature_dim(&self) -> usize {
        self.rgb.feature_dim
    }

    fn check_inputs(&self, rgb: &Tensor<T>, sil: Option<&Tensor<T>>) -> Result<()> {
        let s = self.spec.image_size;
        if rgb.ndim() != 4 || rgb.shape()[1..] != [3, s, s] {
            return Err(Error::invalid(format!("rgb batch shape {:?}, expected N x 3 x {s} x {s}", rgb.shape())));
        }
        match (&self.sil, sil) {
            (Some(_), None) => Err(Error::invalid("multi-input model needs a silhouette batch")),
            (None, Some(_)) => Err(Error::invalid("single-input model does not take a silhouette batch")),
            (Some(_), Some(sil)) => {
                if sil.ndim() != 4 || sil.shape() != [rgb.shape()[0], 1, s, s] {
                    return Err(Error::invalid(format!(
                        "silhouette batch shape {:?}, expected {} x 1 x {s} x {s}",
                        sil.shape(),
                        rgb.shape()[0]
                    )));
                }
                Ok(())
            }
            (None, None) => Ok(()),
        }
    }

    /// Forward pass using caller-registered parameter nodes (one per entry
    /// of [`Model::params`], same order). Returns `N x 2` logits.
    pub fn forward_with(
        &mut self,
        tape: &mut Tape<T>,
        params: &[Var],
        rgb: &Tensor<T>,
        sil: Option<&Tensor<T>>,
        mode: BnMode,
    ) -> Result<Var> {
        self.check_inputs(rgb, sil)?;
        if params.len() != self.store.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter nodes, got {}",
                self.store.params.len(),
                params.len()
            )));
        }
        let Model { store, rgb: rgb_branch, sil: sil_branch, head, .. } = self;
        let stats = match mode {
            BnMode::Train => BnStats::Train(&mut store.bn_stats),
            BnMode::Eval => BnStats::Eval(&store.bn_stats),
        };
        let mut ctx = Ctx { tape, params, stats };
        let x = ctx.tape.constant(rgb.clone());
        let mut features = rgb_branch.forward(&mut ctx, x)?;
        if let (Some(branch), Some(sil)) = (sil_branch.as_ref(), sil) {
            let s = ctx.tape.constant(sil.clone());
            let sf = branch.forward(&mut ctx, s)?;
            features = ctx.tape.concat_features(features, sf)?;
        }
        let h = head.fc1.forward(&mut ctx, features)?;
        let h = ctx.tape.activation(h, Activation::Relu)?;
        head.fc2.forward(&mut ctx, h)
    }

    /// Registers the model's parameters on `tape` and runs the forward pass.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        rgb: &Tensor<T>,
        sil: Option<&Tensor<T>>,
        mode: BnMode,
    ) -> Result<(Var, Vec<Var>)> {
        let params: Vec<Var> = self.store.params.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let logits = self.forward_with(tape, &params, rgb, sil, mode)?;
        Ok((logits, params))
    }

    /// Eval-mode logits; a pure function of inputs and parameters.
    pub fn predict_logits(&self, rgb: &Tensor<T>, sil: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check_inputs(rgb, sil)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.store.params.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let mut ctx = Ctx { tape: &mut tape, params: &params, stats: BnStats::Eval(&self.store.bn_stats) };
        let x = ctx.tape.constant(rgb.clone());
        let mut features = self.rgb.forward(&mut ctx, x)?;
        if let (Some(branch), Some(sil)) = (self.sil.as_ref(), sil) {
            let s = ctx.tape.constant(sil.clone());
            let sf = branch.forward(&mut ctx, s)?;
            features = ctx.tape.concat_features(features, sf)?;
        }
        let h = self.head.fc1.forward(&mut ctx, features)?;
        let h = ctx.tape.activation(h, Activation::Relu)?;
        let logits = self.head.fc2.forward(&mut ctx, h)?;
        Ok(tape.value(logits).clone())
    }
}
