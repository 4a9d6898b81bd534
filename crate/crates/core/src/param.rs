//! Named trainable parameters and their on-disk layout.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::foat;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    name: String,
    value: Tensor,
    frozen: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Parameter {
            name: name.into(),
            value: value.with_requires_grad(true),
            frozen: false,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Parameter::new(name, Tensor::zeros(shape))
    }

    /// Uniform initialization in `±bound`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        Parameter::new(name, t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

/// Anything owning parameters. Both accessors must list the same parameters.
pub trait Module {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value().numel()).sum()
    }
}

/// A flat list of parameters, handy for gradient checks on raw inputs.
#[derive(Clone, Debug, Default)]
pub struct ParamSet(pub Vec<Parameter>);

impl Module for ParamSet {
    fn params(&self) -> Vec<&Parameter> {
        self.0.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.iter_mut().collect()
    }
}

/// Tape handles for every parameter of a module, looked up by name.
#[derive(Debug, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    /// Records every parameter of `module` as a leaf on `tape`.
    pub fn bind<M: Module + ?Sized>(module: &M, tape: &mut Tape) -> Result<Self> {
        let mut vars = HashMap::new();
        for p in module.params() {
            let v = tape.param(p);
            if vars.insert(p.name().to_string(), v).is_some() {
                return Err(Error::Config(format!("duplicate parameter name {}", p.name())));
            }
        }
        Ok(Bindings { vars })
    }

    pub fn var(&self, p: &Parameter) -> Var {
        self.vars[p.name()]
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

pub const PARAM_MANIFEST: &str = "params.manifest";

/// Writes one FOAT file per parameter plus a text manifest with lines
/// `name = file shape` (shape as `AxB`, `scalar` for rank 0).
pub fn save_params<M: Module + ?Sized>(module: &M, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for p in module.params() {
        let file = format!("{}.foat", p.name());
        foat::save(dir.join(&file), p.value())?;
        manifest.push_str(&format!("{} = {} {}\n", p.name(), file, format_shape(p.shape())));
    }
    fs::write(dir.join(PARAM_MANIFEST), manifest)?;
    Ok(())
}

/// Loads values saved by [`save_params`] into `module`, checking that names
/// and shapes agree exactly.
pub fn load_params<M: Module + ?Sized>(module: &mut M, dir: &Path) -> Result<()> {
    let text = fs::read_to_string(dir.join(PARAM_MANIFEST))?;
    let mut entries = HashMap::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, rest) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Format(format!("manifest line {}: missing ' = '", lineno + 1)))?;
        let (file, shape) = rest
            .split_once(' ')
            .ok_or_else(|| Error::Format(format!("manifest line {}: missing shape", lineno + 1)))?;
        entries.insert(name.to_string(), (file.to_string(), parse_shape(shape)?));
    }
    let mut seen = HashSet::new();
    for p in module.params_mut() {
        let (file, shape) = entries.get(p.name()).ok_or_else(|| {
            Error::Contract(format!("parameter {} missing from {}", p.name(), dir.display()))
        })?;
        let t = foat::load(dir.join(file))?;
        if t.shape() != p.shape() || shape.as_slice() != p.shape() {
            return Err(Error::Contract(format!(
                "parameter {} has shape {:?} on disk but {:?} in the model",
                p.name(),
                t.shape(),
                p.shape()
            )));
        }
        *p.value_mut() = t.with_requires_grad(true);
        seen.insert(p.name().to_string());
    }
    if let Some(extra) = entries.keys().find(|k| !seen.contains(*k)) {
        return Err(Error::Contract(format!("saved parameter {extra} does not exist in the model")));
    }
    Ok(())
}

pub fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape '{s}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_and_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = ParamSet(vec![
            Parameter::uniform("a.w", &[3, 2], 0.5, &mut rng),
            Parameter::uniform("bias", &[4], 0.5, &mut rng),
        ]);
        let dir = tempfile::tempdir().unwrap();
        save_params(&set, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join(PARAM_MANIFEST)).unwrap();
        assert!(manifest.contains("a.w = a.w.foat 3x2"));

        let mut other = ParamSet(vec![Parameter::zeros("a.w", &[3, 2]), Parameter::zeros("bias", &[4])]);
        load_params(&mut other, dir.path()).unwrap();
        assert_eq!(other.0, set.0);

        let mut wrong = ParamSet(vec![Parameter::zeros("a.w", &[2, 3]), Parameter::zeros("bias", &[4])]);
        assert!(load_params(&mut wrong, dir.path()).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let set = ParamSet(vec![Parameter::zeros("x", &[1]), Parameter::zeros("x", &[1])]);
        let mut tape = Tape::new();
        assert!(Bindings::bind(&set, &mut tape).is_err());
    }
}
