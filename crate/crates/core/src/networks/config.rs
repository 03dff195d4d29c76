use serde::{Deserialize, Serialize};

use crate::numerics::AdamConfig;
use crate::{Error, Result};

pub const MIN_ENCODER_LAYERS: usize = 2;
pub const MAX_ENCODER_LAYERS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One self-expressive matrix per modality, fused after training.
    Drogsure,
    /// A single self-expressive matrix shared by all modalities.
    Dmsc,
    /// A single matrix acting on the concatenated per-modality codes.
    Concat,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Drogsure => "drogsure",
            Variant::Dmsc => "dmsc",
            Variant::Concat => "concat",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drogsure" => Ok(Variant::Drogsure),
            "dmsc" => Ok(Variant::Dmsc),
            "concat" => Ok(Variant::Concat),
            other => Err(Error::Config(format!("unsupported variant `{other}`"))),
        }
    }
}

/// One convolution layer: `filters` output channels with a `kernel`×`kernel` window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel: usize,
}

impl LayerSpec {
    pub const fn new(filters: usize, kernel: usize) -> Self {
        LayerSpec { filters, kernel }
    }
}

/// Loss weights. Defaults leave every term unweighted except where a scale is
/// needed for the data fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Reconstruction weight (halved in the loss).
    pub gamma: f64,
    /// Entrywise l1 weight on the coefficient matrices.
    pub rho: f64,
    /// Self-expression weight (halved in the loss).
    pub mu: f64,
    pub lambda_group: f64,
    pub lambda_comm: f64,
    /// Weight of the Frobenius regulariser used by the shared-matrix baseline.
    pub lambda_frob: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            gamma: 1.0,
            rho: 1.0,
            mu: 1.0,
            lambda_group: 1.0,
            lambda_comm: 1.0,
            lambda_frob: 1.0,
        }
    }
}

impl Hyper {
    /// Every violation, one message per field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let fields = [
            ("gamma", self.gamma),
            ("rho", self.rho),
            ("mu", self.mu),
            ("lambda_group", self.lambda_group),
            ("lambda_comm", self.lambda_comm),
            ("lambda_frob", self.lambda_frob),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                out.push(format!("{name} must be a nonnegative real, got {v}"));
            } else if v == 0.0 && (name == "gamma" || name == "mu") {
                out.push(format!("{name} must be strictly positive"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub modalities: usize,
    pub encoder_layers: Vec<LayerSpec>,
    pub height: usize,
    pub width: usize,
    pub hyper: Hyper,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Encoder used for the five-modality polarimetric face data: 5/3, 7/1, 15/1.
    pub fn polarimetric_encoder() -> Vec<LayerSpec> {
        vec![LayerSpec::new(5, 3), LayerSpec::new(7, 1), LayerSpec::new(15, 1)]
    }

    /// Encoder used for the cropped face-part data: 10/5, 20/3, 30/3.
    pub fn face_parts_encoder() -> Vec<LayerSpec> {
        vec![LayerSpec::new(10, 5), LayerSpec::new(20, 3), LayerSpec::new(30, 3)]
    }

    pub fn new(variant: Variant, modalities: usize, encoder_layers: Vec<LayerSpec>, height: usize, width: usize) -> Self {
        ModelConfig {
            variant,
            modalities,
            encoder_layers,
            height,
            width,
            hyper: Hyper::default(),
            pretrain_epochs: 200,
            finetune_epochs: 1000,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.hyper.violations();
        if self.modalities == 0 {
            out.push("modalities must be at least 1".into());
        }
        let layers = self.encoder_layers.len();
        if !(MIN_ENCODER_LAYERS..=MAX_ENCODER_LAYERS).contains(&layers) {
            out.push(format!(
                "encoder_layers must have {MIN_ENCODER_LAYERS}..={MAX_ENCODER_LAYERS} entries, got {layers}"
            ));
        }
        for (i, l) in self.encoder_layers.iter().enumerate() {
            if l.filters == 0 {
                out.push(format!("encoder_layers[{i}].filters must be at least 1"));
            }
            if l.kernel % 2 == 0 {
                out.push(format!("encoder_layers[{i}].kernel must be odd, got {}", l.kernel));
            }
        }
        if self.height == 0 || self.width == 0 {
            out.push("image height and width must be positive".into());
        }
        if let Err(e) = self.optimizer.validate() {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    /// Channels in the final encoder feature map.
    pub fn latent_channels(&self) -> usize {
        self.encoder_layers.last().map_or(1, |l| l.filters)
    }

    /// Flattened latent width of one modality.
    pub fn latent_dim(&self) -> usize {
        self.height * self.width * self.latent_channels()
    }
}
