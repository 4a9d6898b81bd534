//! Synthetic sign-agreement task.
//!
//! Each sample carries two independent Gaussian latents `z_a`, `z_b`. The
//! label is `1` when `sign(w_a·z_a) == sign(w_b·z_b)` for hidden unit
//! directions `w_a`, `w_b`. Modality A renders `z_a` as a sum of low
//! frequency cosine patterns over the image, modality B maps `z_b` through a
//! fixed orthogonal embedding into the tabular row. Because each sign is a
//! fair coin independent of the other latent, neither modality alone says
//! anything about the label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    pub noise: f64,
    pub image_shape: [usize; 3],
    pub tabular_width: usize,
    pub latent_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 1000,
            seed: 0,
            noise: 0.1,
            image_shape: [1, 16, 16],
            tabular_width: 8,
            latent_dim: 3,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.n < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                self.n
            )));
        }
        let [c, h, w] = self.image_shape;
        if c == 0 || h < 4 || w < 4 {
            return Err(Error::Config(format!("image shape {:?} too small", self.image_shape)));
        }
        if self.latent_dim == 0 || self.latent_dim > self.tabular_width {
            return Err(Error::Config(format!(
                "latent_dim must lie in 1..={}, got {}",
                self.tabular_width, self.latent_dim
            )));
        }
        if self.latent_dim > h * w {
            return Err(Error::Config("latent_dim exceeds available image patterns".into()));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Generated samples together with the latent state that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub latents_a: Vec<Vec<f64>>,
    pub latents_b: Vec<Vec<f64>>,
    pub direction_a: Vec<f64>,
    pub direction_b: Vec<f64>,
}

impl GeneratedDataset {
    /// Label implied by the stored latents.
    pub fn label_from_latents(&self, i: usize) -> usize {
        let sa = dot(&self.direction_a, &self.latents_a[i]) >= 0.0;
        let sb = dot(&self.direction_b, &self.latents_b[i]) >= 0.0;
        usize::from(sa == sb)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, n);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Low-frequency 2-D cosine patterns (shared across channels), each scaled to
/// unit RMS per pixel. Distinct frequency pairs are mutually orthogonal.
fn image_patterns(shape: [usize; 3], count: usize) -> Vec<Vec<f64>> {
    let [c, h, w] = shape;
    let mut freqs: Vec<(usize, usize)> = (0..h)
        .flat_map(|fy| (0..w).map(move |fx| (fy, fx)))
        .filter(|&f| f != (0, 0))
        .collect();
    freqs.sort_by_key(|&(fy, fx)| (fy + fx, fy));
    freqs
        .into_iter()
        .take(count)
        .map(|(fy, fx)| {
            let mut p = Vec::with_capacity(c * h * w);
            for _ in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let cy = (std::f64::consts::PI * fy as f64 * (y as f64 + 0.5) / h as f64).cos();
                        let cx = (std::f64::consts::PI * fx as f64 * (x as f64 + 0.5) / w as f64).cos();
                        p.push(cy * cx);
                    }
                }
            }
            let rms = (dot(&p, &p) / p.len() as f64).sqrt();
            p.into_iter().map(|v| v / rms).collect()
        })
        .collect()
}

/// `width × latent` matrix (row-major) with orthogonal columns of norm
/// `sqrt(width / latent)`, via Gram-Schmidt on Gaussian draws.
fn tabular_embedding(rng: &mut ChaCha8Rng, width: usize, latent: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(latent);
    while cols.len() < latent {
        let mut v = gaussian_vec(rng, width);
        for c in &cols {
            let proj = dot(&v, c);
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = (width as f64 / latent as f64).sqrt();
    let mut out = vec![0.0; width * latent];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[i * latent + j] = v * scale;
        }
    }
    out
}

/// Fixed per-seed geometry of the task.
struct Task {
    direction_a: Vec<f64>,
    direction_b: Vec<f64>,
    patterns: Vec<Vec<f64>>,
    embedding: Vec<f64>,
}

impl Task {
    fn new(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        Task {
            direction_a: unit_vec(rng, cfg.latent_dim),
            direction_b: unit_vec(rng, cfg.latent_dim),
            patterns: image_patterns(cfg.image_shape, cfg.latent_dim),
            embedding: tabular_embedding(rng, cfg.tabular_width, cfg.latent_dim),
        }
    }

    fn render(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng, za: &[f64], zb: &[f64], label: usize) -> MultimodalSample {
        let numel: usize = cfg.image_shape.iter().product();
        let mut img = vec![0.0; numel];
        for (z, p) in za.iter().zip(&self.patterns) {
            img.iter_mut().zip(p).for_each(|(v, b)| *v += z * b);
        }
        for v in &mut img {
            *v += cfg.noise * rng.sample::<f64, _>(StandardNormal);
        }
        let d = cfg.latent_dim;
        let row = (0..cfg.tabular_width)
            .map(|i| {
                let clean: f64 = (0..d).map(|j| self.embedding[i * d + j] * zb[j]).sum();
                clean + cfg.noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        MultimodalSample {
            image: Tensor::new(cfg.image_shape.to_vec(), img).expect("validated shape"),
            tabular: Tensor::vector(row),
            label,
        }
    }
}

fn generate(cfg: &GeneratorConfig, zero_fraction: Option<f64>) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let task = Task::new(cfg, &mut rng);
    let mut samples = Vec::with_capacity(cfg.n);
    let mut latents_a = Vec::with_capacity(cfg.n);
    let mut latents_b = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let za = gaussian_vec(&mut rng, cfg.latent_dim);
        let mut zb = gaussian_vec(&mut rng, cfg.latent_dim);
        let sa = dot(&task.direction_a, &za) >= 0.0;
        if let Some(frac) = zero_fraction {
            // Reflecting z_b across the w_b hyperplane keeps it Gaussian and
            // flips its sign, so the label can be drawn first.
            let label = usize::from(rng.random::<f64>() >= frac);
            let want_sb = if label == 1 { sa } else { !sa };
            let proj = dot(&task.direction_b, &zb);
            if (proj >= 0.0) != want_sb {
                zb.iter_mut()
                    .zip(&task.direction_b)
                    .for_each(|(z, w)| *z -= 2.0 * proj * w);
                if proj == 0.0 && !want_sb {
                    // exact zero cannot be reflected to the negative side
                    zb.iter_mut().zip(&task.direction_b).for_each(|(z, w)| *z -= 1e-12 * w);
                }
            }
        }
        let sb = dot(&task.direction_b, &zb) >= 0.0;
        let label = usize::from(sa == sb);
        samples.push(task.render(cfg, &mut rng, &za, &zb, label));
        latents_a.push(za);
        latents_b.push(zb);
    }
    Ok(GeneratedDataset {
        dataset: Dataset::new(samples, 2)?,
        latents_a,
        latents_b,
        direction_a: task.direction_a,
        direction_b: task.direction_b,
    })
}

/// Balanced sign-agreement dataset.
pub fn gen_interaction_dataset(cfg: &GeneratorConfig) -> Result<GeneratedDataset> {
    generate(cfg, None)
}

/// Same task with class 0 drawn at probability `ratio`.
pub fn gen_imbalanced_dataset(cfg: &GeneratorConfig, ratio: f64) -> Result<GeneratedDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    generate(cfg, Some(ratio))
}
