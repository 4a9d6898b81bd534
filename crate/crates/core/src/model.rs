//! Architectures of the ablation matrix, from unimodal baselines to full
//! bidirectional FOAA cross-attention.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    direct_outer_fusion, foaa_self_attention, sdp_attention, CrossAttentionParams, FoaaBlockParams,
    FoaaHeadParams, FusionHeadParams, OuterOpKind, DEFAULT_DIV_EPSILON,
};
use crate::data::MultimodalSample;
use crate::encoders::{
    ImageEncoderConfig, ImageEncoderParams, TabularEncoderConfig, TabularEncoderParams, DEFAULT_DROPOUT,
    DEFAULT_TABULAR_HIDDEN,
};
use crate::error::{Error, Result};
use crate::param::{Bindings, Module, Parameter};
use crate::tape::{Tape, Var};

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Tabular MLP only.
    Mlp,
    /// Image CNN only.
    Cnn,
    /// CNN with a scaled dot-product self-attention head.
    CnnStandardSa,
    /// CNN with FOAA self-attention over all four operators.
    CnnFoaaSa,
    CrossOa,
    CrossOp,
    CrossOs,
    CrossOd,
    CrossOaOp,
    CrossOaOpOs,
    /// Simplified outer-fusion baseline without attention.
    DirectOuter,
    /// Cross-attention with all four operators.
    Foaa,
}

impl Arch {
    /// Table order.
    pub const ALL: [Arch; 12] = [
        Arch::Mlp,
        Arch::Cnn,
        Arch::CnnStandardSa,
        Arch::CnnFoaaSa,
        Arch::CrossOa,
        Arch::CrossOp,
        Arch::CrossOs,
        Arch::CrossOd,
        Arch::CrossOaOp,
        Arch::CrossOaOpOs,
        Arch::DirectOuter,
        Arch::Foaa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Cnn => "cnn",
            Arch::CnnStandardSa => "cnn_standard_sa",
            Arch::CnnFoaaSa => "cnn_foaa_sa",
            Arch::CrossOa => "cross_oa",
            Arch::CrossOp => "cross_op",
            Arch::CrossOs => "cross_os",
            Arch::CrossOd => "cross_od",
            Arch::CrossOaOp => "cross_oa_op",
            Arch::CrossOaOpOs => "cross_oa_op_os",
            Arch::DirectOuter => "direct_outer",
            Arch::Foaa => "foaa",
        }
    }

    /// Human-readable row label.
    pub fn label(self) -> &'static str {
        match self {
            Arch::Mlp => "MLP (tabular)",
            Arch::Cnn => "CNN (image)",
            Arch::CnnStandardSa => "CNN Standard SA",
            Arch::CnnFoaaSa => "CNN FOAA SA",
            Arch::CrossOa => "Cross OA",
            Arch::CrossOp => "Cross OP",
            Arch::CrossOs => "Cross OS",
            Arch::CrossOd => "Cross OD",
            Arch::CrossOaOp => "Cross OA+OP",
            Arch::CrossOaOpOs => "Cross OA+OP+OS",
            Arch::DirectOuter => "Direct outer fusion (simplified)",
            Arch::Foaa => "FOAA",
        }
    }

    /// Operators of the cross-attention rows.
    pub fn cross_ops(self) -> Option<&'static [OuterOpKind]> {
        use OuterOpKind::*;
        match self {
            Arch::CrossOa => Some(&[Add]),
            Arch::CrossOp => Some(&[Mul]),
            Arch::CrossOs => Some(&[Sub]),
            Arch::CrossOd => Some(&[Div]),
            Arch::CrossOaOp => Some(&[Add, Mul]),
            Arch::CrossOaOpOs => Some(&[Add, Mul, Sub]),
            Arch::Foaa => Some(&OuterOpKind::ALL),
            _ => None,
        }
    }

    pub fn uses_image(self) -> bool {
        self != Arch::Mlp
    }

    pub fn uses_tabular(self) -> bool {
        !matches!(self, Arch::Cnn | Arch::CnnStandardSa | Arch::CnnFoaaSa)
    }

    pub fn valid_names() -> String {
        Arch::ALL.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown arch '{s}'; valid rows: {}", Arch::valid_names())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Flattened embedding width shared by both modalities.
    pub m: usize,
    pub image_channels: [usize; 2],
    pub tabular_hidden: usize,
    pub dropout: f64,
    pub div_epsilon: f64,
    /// Cross-attention in both directions (otherwise image queries only).
    pub bidirectional: bool,
    /// Image encoder stages (1, 2 or 3) excluded from optimization.
    pub frozen_image_stages: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            m: 64,
            image_channels: [4, 8],
            tabular_hidden: DEFAULT_TABULAR_HIDDEN,
            dropout: DEFAULT_DROPOUT,
            div_epsilon: DEFAULT_DIV_EPSILON,
            bidirectional: true,
            frozen_image_stages: Vec::new(),
            num_classes: 2,
        }
    }
}

/// A complete classifier for one [`Arch`].
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Arch,
    div_epsilon: f64,
    pub image: Option<ImageEncoderParams>,
    pub tabular: Option<TabularEncoderParams>,
    pub sdp: Option<FoaaHeadParams>,
    pub self_attention: Option<FoaaBlockParams>,
    pub cross: Option<CrossAttentionParams>,
    pub head: FusionHeadParams,
}

/// Outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Aggregated `m`-vector entering the head.
    pub fused: Var,
    /// `relu(fc·fused)`, the representation the classifier reads.
    pub hidden: Var,
    pub logits: Var,
}

impl Model {
    pub fn new(arch: Arch, cfg: &ModelConfig, image_shape: [usize; 3], tabular_width: usize, seed: u64) -> Result<Self> {
        if cfg.m == 0 || cfg.num_classes < 2 {
            return Err(Error::Config("need m >= 1 and at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = if arch.uses_image() {
            let mut enc = ImageEncoderParams::new(
                "image",
                &ImageEncoderConfig {
                    input_shape: image_shape,
                    channels: cfg.image_channels,
                    m: cfg.m,
                },
                &mut rng,
            )?;
            for &stage in &cfg.frozen_image_stages {
                enc.set_stage_frozen(stage, true)?;
            }
            Some(enc)
        } else {
            None
        };
        let tabular = if arch.uses_tabular() {
            Some(TabularEncoderParams::new(
                "tabular",
                &TabularEncoderConfig {
                    d_in: tabular_width,
                    hidden: cfg.tabular_hidden,
                    m: cfg.m,
                    dropout: cfg.dropout,
                },
                &mut rng,
            )?)
        } else {
            None
        };
        let sdp = (arch == Arch::CnnStandardSa).then(|| FoaaHeadParams::new("sdp", cfg.m, &mut rng));
        let self_attention = if arch == Arch::CnnFoaaSa {
            Some(FoaaBlockParams::new("self", cfg.m, &OuterOpKind::ALL, cfg.div_epsilon, &mut rng)?)
        } else {
            None
        };
        let cross = match arch.cross_ops() {
            Some(ops) => Some(CrossAttentionParams::new(
                "cross",
                cfg.m,
                ops,
                cfg.bidirectional,
                cfg.div_epsilon,
                &mut rng,
            )?),
            None => None,
        };
        let head = FusionHeadParams::new("head", cfg.m, cfg.num_classes, &mut rng);
        Ok(Model {
            arch,
            div_epsilon: cfg.div_epsilon,
            image,
            tabular,
            sdp,
            self_attention,
            cross,
            head,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    /// Runs the model on one sample. Passing `dropout_rng` selects training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        sample: &MultimodalSample,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward> {
        let e_img = match &self.image {
            Some(enc) => {
                let img = tape.constant(sample.image.clone());
                Some(enc.forward(tape, b, img)?)
            }
            None => None,
        };
        let e_tab = match &self.tabular {
            Some(enc) => {
                let row = tape.constant(sample.tabular.clone());
                Some(enc.forward(tape, b, row, dropout_rng)?)
            }
            None => None,
        };
        let fused = match (self.arch, e_img, e_tab) {
            (Arch::Mlp, _, Some(t)) => t,
            (Arch::Cnn, Some(i), _) => i,
            (Arch::CnnStandardSa, Some(i), _) => {
                let head = self.sdp.as_ref().expect("sdp head built for this arch");
                let att = sdp_attention(tape, b, head, i, i, i)?;
                tape.add(att, i)?
            }
            (Arch::CnnFoaaSa, Some(i), _) => {
                let block = self.self_attention.as_ref().expect("self-attention built for this arch");
                foaa_self_attention(tape, b, block, i)?
            }
            (Arch::DirectOuter, Some(i), Some(t)) => {
                direct_outer_fusion(tape, &OuterOpKind::ALL, self.div_epsilon, i, t)?
            }
            (_, Some(i), Some(t)) => {
                let cross = self.cross.as_ref().expect("cross-attention built for this arch");
                cross.forward(tape, b, i, t)?
            }
            _ => unreachable!("encoders are built to match the arch"),
        };
        let hidden = self.head.hidden(tape, b, fused)?;
        let z = tape.vecmat(hidden, b.var(&self.head.classifier))?;
        let logits = tape.add(z, b.var(&self.head.bias))?;
        Ok(Forward { fused, hidden, logits })
    }

    /// Class probabilities in evaluation mode.
    pub fn predict_proba(&self, sample: &MultimodalSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = Bindings::bind(self, &mut tape)?;
        let out = self.forward(&mut tape, &b, sample, None)?;
        let p = tape.softmax_rows(out.logits);
        Ok(tape.data(p).to_vec())
    }

    /// Representation read by the classifier, in evaluation mode.
    pub fn embed(&self, sample: &MultimodalSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = Bindings::bind(self, &mut tape)?;
        let out = self.forward(&mut tape, &b, sample, None)?;
        Ok(tape.data(out.hidden).to_vec())
    }
}

impl Module for Model {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        if let Some(e) = &self.image {
            out.extend(e.params());
        }
        if let Some(e) = &self.tabular {
            out.extend(e.params());
        }
        if let Some(h) = &self.sdp {
            out.extend(h.params());
        }
        if let Some(s) = &self.self_attention {
            out.extend(s.params());
        }
        if let Some(c) = &self.cross {
            out.extend(c.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.image {
            out.extend(e.params_mut());
        }
        if let Some(e) = &mut self.tabular {
            out.extend(e.params_mut());
        }
        if let Some(h) = &mut self.sdp {
            out.extend(h.params_mut());
        }
        if let Some(s) = &mut self.self_attention {
            out.extend(s.params_mut());
        }
        if let Some(c) = &mut self.cross {
            out.extend(c.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sample() -> MultimodalSample {
        MultimodalSample {
            image: Tensor::from_fn(&[1, 8, 8], |i| (i as f64 * 0.3).sin()),
            tabular: Tensor::vector(vec![0.5, -1.0, 0.2]),
            label: 1,
        }
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            m: 6,
            tabular_hidden: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn every_arch_builds_and_predicts() {
        for arch in Arch::ALL {
            let model = Model::new(arch, &cfg(), [1, 8, 8], 3, 1).unwrap();
            let p = model.predict_proba(&sample()).unwrap();
            assert_eq!(p.len(), 2);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{arch}");
            assert_eq!(model.embed(&sample()).unwrap().len(), 6);
            let names: std::collections::HashSet<_> = model.params().iter().map(|p| p.name().to_string()).collect();
            assert_eq!(names.len(), model.params().len());
            assert_eq!(model.params().len(), model.clone().params_mut().len());
        }
    }

    #[test]
    fn arch_names_round_trip() {
        for arch in Arch::ALL {
            assert_eq!(arch.name().parse::<Arch>().unwrap(), arch);
        }
        let err = "cross_xx".parse::<Arch>().unwrap_err().to_string();
        assert!(err.contains("foaa") && err.contains("direct_outer"));
    }

    #[test]
    fn foaa_has_eight_heads_bidirectional() {
        let model = Model::new(Arch::Foaa, &cfg(), [1, 8, 8], 3, 1).unwrap();
        assert_eq!(model.cross.as_ref().unwrap().params().len(), 24);
        let uni = Model::new(
            Arch::Foaa,
            &ModelConfig {
                bidirectional: false,
                ..cfg()
            },
            [1, 8, 8],
            3,
            1,
        )
        .unwrap();
        assert_eq!(uni.cross.as_ref().unwrap().params().len(), 12);
    }

    #[test]
    fn frozen_stages_propagate() {
        let model = Model::new(
            Arch::Cnn,
            &ModelConfig {
                frozen_image_stages: vec![1, 2],
                ..cfg()
            },
            [1, 8, 8],
            3,
            1,
        )
        .unwrap();
        let enc = model.image.as_ref().unwrap();
        assert!(enc.conv1_w.is_frozen() && enc.conv2_b.is_frozen());
        assert!(!enc.proj_w.is_frozen());
    }
}
