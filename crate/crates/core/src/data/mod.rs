//! Paired two-modality datasets: synthetic generation, file ingestion,
//! class-balancing sampling, augmentation and Monte Carlo resplitting.

mod augment;
mod generate;
mod io;
mod sampler;
mod splits;

pub use augment::{augment, augment_with_info, erase_rect, flip_horizontal, AugmentInfo, EraseRect};
pub use generate::{
    gen_imbalanced_dataset, gen_interaction_dataset, GeneratedDataset, GeneratorConfig, MIN_SAMPLES,
};
pub use io::{read_dataset, write_dataset, IMAGES_FILE, IMAGE_DIR, LABELS_FILE, TABULAR_FILE};
pub use sampler::{weighted_draws, SamplerWeights};
pub use splits::{monte_carlo_splits, DatasetSplit};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    /// `[c, h, w]`.
    pub image: Tensor,
    /// `[d_in]`.
    pub tabular: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MultimodalSample>,
    pub num_classes: usize,
}

impl Dataset {
    /// Checks labels and that every sample shares the first sample's shapes.
    pub fn new(samples: Vec<MultimodalSample>, num_classes: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("dataset is empty".into()))?;
        let (img, tab) = (first.image.shape().to_vec(), first.tabular.shape().to_vec());
        if img.len() != 3 || tab.len() != 1 {
            return Err(Error::Contract(format!(
                "samples need a [c, h, w] image and a [d] row, got {img:?} and {tab:?}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= num_classes {
                return Err(Error::Contract(format!(
                    "sample {i} has label {} but there are {num_classes} classes",
                    s.label
                )));
            }
            if s.image.shape() != img.as_slice() || s.tabular.shape() != tab.as_slice() {
                return Err(Error::Contract(format!("sample {i} has inconsistent modality shapes")));
            }
        }
        Ok(Dataset { samples, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.samples[0].image.shape();
        [s[0], s[1], s[2]]
    }

    pub fn tabular_width(&self) -> usize {
        self.samples[0].tabular.numel()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}
