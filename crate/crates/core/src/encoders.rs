//! Per-modality input heads producing flattened `m`-vectors.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Bindings, Module, Parameter};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEncoderConfig {
    /// Input `[c, h, w]`.
    pub input_shape: [usize; 3],
    pub channels: [usize; 2],
    pub m: usize,
}

/// Two conv stages (3×3 conv, ReLU, 2×2 average pool) and a dense
/// projection of the flattened map to `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoderParams {
    input_shape: [usize; 3],
    pub conv1_w: Parameter,
    pub conv1_b: Parameter,
    pub conv2_w: Parameter,
    pub conv2_b: Parameter,
    pub proj_w: Parameter,
    pub proj_b: Parameter,
}

impl ImageEncoderParams {
    pub fn new<R: Rng + ?Sized>(prefix: &str, cfg: &ImageEncoderConfig, rng: &mut R) -> Result<Self> {
        let [c, h, w] = cfg.input_shape;
        if h < 4 || w < 4 {
            return Err(Error::dim("encode_image", &cfg.input_shape, &[4, 4]));
        }
        let [c1, c2] = cfg.channels;
        if c == 0 || c1 == 0 || c2 == 0 || cfg.m == 0 {
            return Err(Error::Config("image encoder widths must be positive".into()));
        }
        let flat = c2 * (h / 2 / 2) * (w / 2 / 2);
        let b1 = 1.0 / ((c * 9) as f64).sqrt();
        let b2 = 1.0 / ((c1 * 9) as f64).sqrt();
        let b3 = 1.0 / (flat as f64).sqrt();
        Ok(ImageEncoderParams {
            input_shape: cfg.input_shape,
            conv1_w: Parameter::uniform(format!("{prefix}.conv1.w"), &[c1, c, 3, 3], b1, rng),
            conv1_b: Parameter::zeros(format!("{prefix}.conv1.b"), &[c1]),
            conv2_w: Parameter::uniform(format!("{prefix}.conv2.w"), &[c2, c1, 3, 3], b2, rng),
            conv2_b: Parameter::zeros(format!("{prefix}.conv2.b"), &[c2]),
            proj_w: Parameter::uniform(format!("{prefix}.proj.w"), &[cfg.m, flat], b3, rng),
            proj_b: Parameter::zeros(format!("{prefix}.proj.b"), &[cfg.m]),
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.proj_w.shape()[0]
    }

    /// Freezes or unfreezes one conv stage (1 or 2); stage 3 is the projection.
    pub fn set_stage_frozen(&mut self, stage: usize, frozen: bool) -> Result<()> {
        let params = match stage {
            1 => [&mut self.conv1_w, &mut self.conv1_b],
            2 => [&mut self.conv2_w, &mut self.conv2_b],
            3 => [&mut self.proj_w, &mut self.proj_b],
            _ => return Err(Error::Config(format!("image encoder has no stage {stage}"))),
        };
        for p in params {
            p.set_frozen(frozen);
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, img: Var) -> Result<Var> {
        if tape.shape(img) != self.input_shape {
            return Err(Error::dim("encode_image", &self.input_shape, tape.shape(img)));
        }
        let x = tape.conv2d(img, b.var(&self.conv1_w), b.var(&self.conv1_b))?;
        let x = tape.relu(x);
        let x = tape.avg_pool2(x)?;
        let x = tape.conv2d(x, b.var(&self.conv2_w), b.var(&self.conv2_b))?;
        let x = tape.relu(x);
        let x = tape.avg_pool2(x)?;
        let flat = tape.value(x).numel();
        let x = tape.reshape(x, &[flat])?;
        let y = tape.matvec(b.var(&self.proj_w), x)?;
        tape.add(y, b.var(&self.proj_b))
    }
}

impl Module for ImageEncoderParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.proj_w,
            &self.proj_b,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.proj_w,
            &mut self.proj_b,
        ]
    }
}

pub fn encode_image(tape: &mut Tape, b: &Bindings, params: &ImageEncoderParams, img: Var) -> Result<Var> {
    params.forward(tape, b, img)
}

pub const DEFAULT_TABULAR_HIDDEN: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularEncoderConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub m: usize,
    pub dropout: f64,
}

/// `d_in → hidden → m` MLP with ReLU and dropout on the hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularEncoderParams {
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
    dropout: f64,
}

impl TabularEncoderParams {
    pub fn new<R: Rng + ?Sized>(prefix: &str, cfg: &TabularEncoderConfig, rng: &mut R) -> Result<Self> {
        if cfg.d_in == 0 || cfg.hidden == 0 || cfg.m == 0 {
            return Err(Error::Config("tabular encoder widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", cfg.dropout)));
        }
        Ok(TabularEncoderParams {
            w1: Parameter::uniform(format!("{prefix}.fc1.w"), &[cfg.hidden, cfg.d_in], 1.0 / (cfg.d_in as f64).sqrt(), rng),
            b1: Parameter::zeros(format!("{prefix}.fc1.b"), &[cfg.hidden]),
            w2: Parameter::uniform(format!("{prefix}.fc2.w"), &[cfg.m, cfg.hidden], 1.0 / (cfg.hidden as f64).sqrt(), rng),
            b2: Parameter::zeros(format!("{prefix}.fc2.b"), &[cfg.m]),
            dropout: cfg.dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w2.shape()[0]
    }

    /// `dropout_rng` switches on training mode (inverted dropout); `None`
    /// evaluates deterministically.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        row: Var,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if tape.shape(row) != [self.input_dim()] {
            return Err(Error::dim("encode_tabular", &[self.input_dim()], tape.shape(row)));
        }
        let h = tape.matvec(b.var(&self.w1), row)?;
        let h = tape.add(h, b.var(&self.b1))?;
        let mut h = tape.relu(h);
        if let Some(rng) = dropout_rng {
            if self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let n = tape.value(h).numel();
                let mask = Tensor::from_fn(&[n], |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let mask = tape.constant(mask);
                h = tape.mul(h, mask)?;
            }
        }
        let y = tape.matvec(b.var(&self.w2), h)?;
        tape.add(y, b.var(&self.b2))
    }
}

impl Module for TabularEncoderParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

pub fn encode_tabular(
    tape: &mut Tape,
    b: &Bindings,
    params: &TabularEncoderParams,
    row: Var,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    params.forward(tape, b, row, dropout_rng)
}
