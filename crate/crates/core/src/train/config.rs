use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Arch, BackboneKind, Model, ModelSpec, DEFAULT_HIDDEN};
use crate::tensor::{Prng, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 224 px, lr 1e-5, batch 16, 60 epochs.
    Paper,
    /// 64 px, lr 1e-3, batch 16, 30 epochs.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Fully resolved training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub image_size: usize,
    pub seed: u64,
    pub backbone: BackboneKind,
    pub arch: Arch,
    pub precision: Precision,
    pub hidden: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let (lr, epochs, image_size) = match profile {
            Profile::Paper => (1e-5, 60, 224),
            Profile::Desk => (1e-3, 30, 64),
        };
        TrainConfig {
            profile,
            lr,
            batch_size: 16,
            epochs,
            image_size,
            seed: 0,
            backbone: BackboneKind::MobilenetLite,
            arch: Arch::Multi,
            precision: Precision::F32,
            hidden: DEFAULT_HIDDEN,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn desk() -> Self {
        Self::profile(Profile::Desk)
    }

    pub fn paper() -> Self {
        Self::profile(Profile::Paper)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr) || !positive(self.adam_eps) {
            return Err(Error::invalid("learning rate and adam eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0,1)"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2 (batch norm needs two samples)"));
        }
        if self.epochs == 0 || self.hidden == 0 {
            return Err(Error::invalid("epochs and hidden width must be positive"));
        }
        if self.image_size < 32 {
            return Err(Error::invalid(format!("image_size must be >= 32, got {}", self.image_size)));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec { arch: self.arch, backbone: self.backbone, image_size: self.image_size, hidden: self.hidden }
    }

    /// Freshly initialised model; weights depend only on the spec and seed.
    pub fn build_model<T: Scalar>(&self) -> Result<Model<T>> {
        Model::build(self.model_spec(), &mut Prng::new(self.seed))
    }

    /// SHA-256 (hex) of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// User-facing config document: every key is optional and overrides the
/// selected profile (default `desk`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<Profile>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub image_size: Option<usize>,
    pub seed: Option<u64>,
    pub backbone: Option<BackboneKind>,
    pub arch: Option<Arch>,
    pub precision: Option<Precision>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::profile(self.profile.unwrap_or(Profile::Desk));
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        take!(lr, batch_size, epochs, image_size, seed, backbone, arch, precision);
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        let p = TrainConfig::paper();
        assert_eq!((p.lr, p.batch_size, p.epochs, p.image_size), (1e-5, 16, 60, 224));
        let d = TrainConfig::desk();
        assert_eq!((d.lr, d.batch_size, d.epochs, d.image_size), (1e-3, 16, 30, 64));
        assert_eq!((d.beta1, d.beta2, d.adam_eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = ConfigFile::parse(r#"{"profile":"paper","epochs":3,"arch":"single"}"#).unwrap().resolve().unwrap();
        assert_eq!((c.epochs, c.arch, c.lr), (3, Arch::Single, 1e-5));
        assert_eq!(ConfigFile::parse(r#"{"epoch":3}"#).unwrap_err().kind(), "invalid-argument");
        let bad = ConfigFile { batch_size: Some(1), ..Default::default() };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::desk();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
