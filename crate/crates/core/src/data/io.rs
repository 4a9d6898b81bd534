//! On-disk dataset layout.
//!
//! * `tabular.csv`: header row, one numeric column per feature plus an
//!   integer `label` column.
//! * `images.foat`: one batched `[n, c, h, w]` tensor, with `labels.csv`
//!   (single `label` column) alongside; or an `images/` directory holding one
//!   `[c, h, w]` FOAT file per sample, read in file-name order.

use std::fs;
use std::path::Path;

use super::{Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::foat;
use crate::tensor::Tensor;

pub const TABULAR_FILE: &str = "tabular.csv";
pub const IMAGES_FILE: &str = "images.foat";
pub const LABELS_FILE: &str = "labels.csv";
pub const IMAGE_DIR: &str = "images";

/// Writes the tabular CSV, the batched image tensor and its label sidecar.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let width = data.tabular_width();
    let mut tab = csv::Writer::from_path(dir.join(TABULAR_FILE))?;
    let mut header: Vec<String> = (0..width).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    tab.write_record(&header)?;
    for s in &data.samples {
        let mut rec: Vec<String> = s.tabular.data().iter().map(|v| v.to_string()).collect();
        rec.push(s.label.to_string());
        tab.write_record(&rec)?;
    }
    tab.flush()?;

    let mut labels = csv::Writer::from_path(dir.join(LABELS_FILE))?;
    labels.write_record(["label"])?;
    for s in &data.samples {
        labels.write_record([s.label.to_string()])?;
    }
    labels.flush()?;

    let [c, h, w] = data.image_shape();
    let mut pixels = Vec::with_capacity(data.len() * c * h * w);
    for s in &data.samples {
        pixels.extend_from_slice(s.image.data());
    }
    foat::save(dir.join(IMAGES_FILE), &Tensor::new(vec![data.len(), c, h, w], pixels)?)?;
    Ok(())
}

fn read_tabular(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Format(format!("{} has no 'label' column", path.display())))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(rec.len().saturating_sub(1));
        for (col, field) in rec.iter().enumerate() {
            if col == label_col {
                labels.push(field.trim().parse::<usize>().map_err(|_| {
                    Error::Format(format!("row {}: label '{field}' is not a class index", line + 1))
                })?);
            } else {
                row.push(field.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!("row {}: '{field}' is not numeric", line + 1))
                })?);
            }
        }
        rows.push(row);
    }
    Ok((rows, labels))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Format(format!("{} has no 'label' column", path.display())))?;
    rdr.records()
        .map(|r| {
            let r = r?;
            r[col]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad label '{}'", &r[col])))
        })
        .collect()
}

fn read_images(dir: &Path) -> Result<Vec<Tensor>> {
    let batched = dir.join(IMAGES_FILE);
    if batched.exists() {
        let t = foat::load(&batched)?;
        let (n, per) = match t.shape() {
            [n, c, h, w] => (*n, vec![*c, *h, *w]),
            other => return Err(Error::Format(format!("batched images must be 4-D, got {other:?}"))),
        };
        let size: usize = per.iter().product();
        return (0..n)
            .map(|i| Tensor::new(per.clone(), t.data()[i * size..(i + 1) * size].to_vec()))
            .collect();
    }
    let folder = dir.join(IMAGE_DIR);
    let mut files: Vec<_> = fs::read_dir(&folder)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "foat"))
        .collect();
    files.sort();
    files.iter().map(foat::load).collect()
}

/// Reads a dataset laid out as described in the module docs. The number of
/// classes is one more than the largest label.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (rows, labels) = read_tabular(&dir.join(TABULAR_FILE))?;
    let images = read_images(dir)?;
    if images.len() != rows.len() {
        return Err(Error::Format(format!(
            "{} images but {} tabular rows",
            images.len(),
            rows.len()
        )));
    }
    let sidecar = dir.join(LABELS_FILE);
    if sidecar.exists() && read_labels(&sidecar)? != labels {
        return Err(Error::Format("image label sidecar disagrees with tabular labels".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let samples = images
        .into_iter()
        .zip(rows)
        .zip(labels)
        .map(|((image, row), label)| {
            if row.is_empty() {
                return Err(Error::Format("tabular rows need at least one feature".into()));
            }
            Ok(MultimodalSample {
                image,
                tabular: Tensor::vector(row),
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_interaction_dataset, GeneratorConfig};

    fn small() -> Dataset {
        gen_interaction_dataset(&GeneratorConfig {
            n: 120,
            seed: 2,
            image_shape: [1, 6, 5],
            tabular_width: 4,
            latent_dim: 2,
            ..GeneratorConfig::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn batched_round_trip() {
        let data = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let header = fs::read_to_string(dir.path().join(TABULAR_FILE)).unwrap();
        assert!(header.starts_with("f0,f1,f2,f3,label\n"));
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn per_sample_image_files() {
        let data = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        fs::remove_file(dir.path().join(IMAGES_FILE)).unwrap();
        fs::create_dir(dir.path().join(IMAGE_DIR)).unwrap();
        for (i, s) in data.samples.iter().enumerate() {
            foat::save(dir.path().join(IMAGE_DIR).join(format!("{i:06}.foat")), &s.image).unwrap();
        }
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn label_column_anywhere_and_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TABULAR_FILE), "label,x,y\n1,0.5,2\n0,1,-1\n").unwrap();
        fs::create_dir(dir.path().join(IMAGE_DIR)).unwrap();
        for i in 0..2 {
            foat::save(dir.path().join(IMAGE_DIR).join(format!("{i}.foat")), &Tensor::zeros(&[1, 4, 4])).unwrap();
        }
        let d = read_dataset(dir.path()).unwrap();
        assert_eq!(d.labels(), vec![1, 0]);
        assert_eq!(d.samples[0].tabular.data(), &[0.5, 2.0]);

        fs::write(dir.path().join(LABELS_FILE), "label\n0\n0\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn missing_label_column() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TABULAR_FILE), "a,b\n1,2\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format(_))));
    }
}
