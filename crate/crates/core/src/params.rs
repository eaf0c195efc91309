//! Named parameter tensors, their initialisation and graph binding.

use std::collections::BTreeMap;

use hstr_tensor::{Float, Graph, Tensor, Var};
use ndarray::IxDyn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter declarations of a model.
#[derive(Default)]
pub struct SpecList(pub Vec<ParamSpec>);

impl SpecList {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) {
        self.0.push(ParamSpec { name: name.into(), shape: shape.to_vec(), init });
    }

    /// `{prefix}.weight [out, in, k, k]` and `{prefix}.bias [out]`.
    pub fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) {
        let fan = c_in * k * k;
        self.push(format!("{prefix}.weight"), &[c_out, c_in, k, k], Init::FanIn(fan));
        self.push(format!("{prefix}.bias"), &[c_out], Init::FanIn(fan));
    }

    /// Transposed convolution, weight `[in, out, k, k]`.
    pub fn conv_transpose(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) {
        let fan = c_out * k * k;
        self.push(format!("{prefix}.weight"), &[c_in, c_out, k, k], Init::FanIn(fan));
        self.push(format!("{prefix}.bias"), &[c_out], Init::FanIn(fan));
    }

    pub fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize, bias: bool) {
        self.push(format!("{prefix}.weight"), &[d_out, d_in], Init::FanIn(d_in));
        if bias {
            self.push(format!("{prefix}.bias"), &[d_out], Init::FanIn(d_in));
        }
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gamma"), &[d], Init::Ones);
        self.push(format!("{prefix}.beta"), &[d], Init::Zeros);
    }

    /// Re-initialises every parameter under `prefix` to zero.
    pub fn zero(&mut self, prefix: &str) {
        for p in self.0.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.init = Init::Zeros;
        }
    }
}

/// Parameters by name, in 32-bit storage.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    /// Each tensor draws from its own stream keyed by (seed, name), so adding
    /// a parameter never perturbs the others.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut tensors = BTreeMap::new();
        for spec in specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(IxDyn(&spec.shape)),
                Init::Ones => Tensor::ones(IxDyn(&spec.shape)),
                Init::FanIn(fan) => {
                    let bound = 1.0 / (fan.max(1) as f32).sqrt();
                    let mut rng = seed::rng(seed, &[seed::hash_str(&spec.name)]);
                    Tensor::from_shape_simple_fn(IxDyn(&spec.shape), || rng.random_range(-bound..=bound))
                }
            };
            tensors.insert(spec.name.clone(), t);
        }
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<f32>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn cast<T: Float>(&self) -> BTreeMap<String, Tensor<T>> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.mapv(|x| T::of(x as f64)))).collect()
    }

    /// Adds uniform noise in `[-scale, scale]` to every value, drawn per name.
    pub fn jitter(&mut self, seed: u64, scale: f32) {
        for (name, t) in self.tensors.iter_mut() {
            let mut rng = seed::rng(seed, &[seed::hash_str(name), 1]);
            t.mapv_inplace(|v| v + rng.random_range(-scale..=scale));
        }
    }

    /// Every spec resolvable with the declared shape, and nothing extra. The
    /// first offending name (in sorted order) is reported.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        let expected: BTreeMap<&str, &ParamSpec> = specs.iter().map(|s| (s.name.as_str(), s)).collect();
        for (name, t) in &self.tensors {
            match expected.get(name.as_str()) {
                None => return Err(Error::Checkpoint(format!("parameter {name:?} does not exist in this configuration"))),
                Some(spec) if spec.shape != t.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name:?} has shape {:?}, configuration expects {:?}",
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(missing) = expected.keys().find(|k| !self.tensors.contains_key(**k)) {
            return Err(Error::Checkpoint(format!("parameter {missing:?} missing")));
        }
        Ok(())
    }
}

/// Parameters bound as leaves of one graph.
pub struct Scope<'g, T: Float> {
    pub g: &'g Graph<T>,
    vars: BTreeMap<String, Var>,
}

impl<'g, T: Float> Scope<'g, T> {
    pub fn bind(g: &'g Graph<T>, params: &BTreeMap<String, Tensor<T>>) -> Self {
        let vars = params.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect();
        Self { g, vars }
    }

    /// Panics on an unknown name; parameter sets are validated against the
    /// configuration before binding.
    pub fn p(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn conv(&self, prefix: &str, x: Var, stride: usize, pad: usize) -> Var {
        self.g.conv2d(x, self.p(&format!("{prefix}.weight")), Some(self.p(&format!("{prefix}.bias"))), stride, pad)
    }

    pub fn conv_transpose(&self, prefix: &str, x: Var, stride: usize, pad: usize, output_pad: usize) -> Var {
        self.g.conv_transpose2d(
            x,
            self.p(&format!("{prefix}.weight")),
            Some(self.p(&format!("{prefix}.bias"))),
            stride,
            pad,
            output_pad,
        )
    }

    pub fn linear(&self, prefix: &str, x: Var) -> Var {
        let bias = format!("{prefix}.bias");
        let b = self.has(&bias).then(|| self.p(&bias));
        self.g.linear(x, self.p(&format!("{prefix}.weight")), b)
    }

    pub fn layer_norm(&self, prefix: &str, x: Var) -> Var {
        self.g.layer_norm(x, self.p(&format!("{prefix}.gamma")), self.p(&format!("{prefix}.beta")), 1e-5)
    }
}
