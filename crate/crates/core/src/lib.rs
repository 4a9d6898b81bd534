//! Flattened outer arithmetic attention (FOAA) for two-modality fusion.
//!
//! The crate bundles a small reverse-mode differentiation tape over dense
//! `f64` tensors, the four outer-arithmetic attention heads (addition,
//! subtraction, product, division) in self- and cross-attention form, toy
//! image and tabular encoders, a synthetic two-modality task whose label only
//! exists in the interaction of both inputs, and the training, metric and
//! cross-validation machinery to compare fusion strategies on it.
//!
//! ```
//! use foaa_core::attention::{outer_op, OuterOpKind};
//! use foaa_core::tape::Tape;
//! use foaa_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let q = tape.constant(Tensor::vector(vec![1.0, 2.0]));
//! let k = tape.constant(Tensor::vector(vec![3.0, 4.0]));
//! let s = outer_op(&mut tape, OuterOpKind::Add, q, k, 1e-6).unwrap();
//! assert_eq!(tape.data(s), &[4.0, 5.0, 5.0, 6.0]);
//! ```

pub mod attention;
pub mod data;
pub mod encoders;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod foat;
pub mod gradcheck;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
