use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor together with its Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let adam_m = Tensor::zeros(tensor.shape());
        let adam_v = Tensor::zeros(tensor.shape());
        Self {
            name: name.into(),
            tensor,
            adam_m,
            adam_v,
            step_count: 0,
        }
    }
}

/// Initialization schemes used across the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitSpec {
    /// N(0, 1); embeddings.
    GaussianUnit,
    /// Uniform with mean 0 and standard deviation sqrt(1/fan_in); linear layers.
    UniformFanIn {
        fan_in: usize,
    },
    /// N(0, 1/(2n)) with n hidden units; LSTM weights.
    LstmGaussian {
        hidden_units: usize,
    },
    /// U(-eps, eps); the uniform-initialization ablation.
    UniformEps {
        eps: f64,
    },
    /// LSTM gate bias laid out as [input, forget, output, candidate]: forget slice 1, rest 0.
    ForgetBiasOne {
        hidden_units: usize,
    },
    Zeros,
}

impl InitSpec {
    pub fn sample<R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match *self {
            InitSpec::GaussianUnit => sample_normal(n, 1.0, rng),
            InitSpec::UniformFanIn { fan_in } => {
                if fan_in == 0 {
                    return Err(Error::Config("uniform-fanin needs fan_in > 0".into()));
                }
                // U(-a, a) has std a/sqrt(3)
                let a = (3.0 / fan_in as f64).sqrt();
                sample_uniform(n, a, rng)
            }
            InitSpec::LstmGaussian { hidden_units } => {
                if hidden_units == 0 {
                    return Err(Error::Config("lstm-gaussian needs hidden_units > 0".into()));
                }
                sample_normal(n, (1.0 / (2.0 * hidden_units as f64)).sqrt(), rng)
            }
            InitSpec::UniformEps { eps } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(Error::Config(format!(
                        "uniform-eps needs eps > 0, got {eps}"
                    )));
                }
                sample_uniform(n, eps, rng)
            }
            InitSpec::ForgetBiasOne { hidden_units } => {
                if n != 4 * hidden_units {
                    return Err(Error::Config(format!(
                        "forget-bias-one expects 4*{hidden_units} entries, got {n}"
                    )));
                }
                let mut v = vec![0.0; n];
                v[hidden_units..2 * hidden_units].fill(1.0);
                v
            }
            InitSpec::Zeros => vec![0.0; n],
        };
        Tensor::new(shape.to_vec(), data)
    }
}

fn sample_normal<R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn sample_uniform<R: Rng + ?Sized>(n: usize, a: f64, rng: &mut R) -> Vec<f64> {
    let dist = Uniform::new(-a, a).expect("a > 0");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Owns every parameter of a model; names are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, tensor));
        Ok(id)
    }

    pub fn init<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: InitSpec,
        rng: &mut R,
    ) -> Result<ParamId> {
        let t = init.sample(shape, rng)?;
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Re-draws every parameter from `init`, keeping shapes and names.
    pub fn reinit_all<R: Rng + ?Sized>(&mut self, init: InitSpec, rng: &mut R) -> Result<()> {
        for p in &mut self.params {
            let shape = p.tensor.shape().to_vec();
            p.tensor = init.sample(&shape, rng)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_of(t: &Tensor) -> (f64, f64) {
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn init_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        for fan_in in [1usize, 8, 512] {
            let t = InitSpec::UniformFanIn { fan_in }
                .sample(&[n], &mut rng)
                .unwrap();
            let (mean, std) = std_of(&t);
            let target = (1.0 / fan_in as f64).sqrt();
            assert!(
                (std - target).abs() / target < 0.05,
                "fan_in {fan_in}: {std}"
            );
            assert!(mean.abs() < 0.02 * target.max(0.1));
        }
        let t = InitSpec::GaussianUnit.sample(&[n], &mut rng).unwrap();
        let (_, std) = std_of(&t);
        assert!((std - 1.0).abs() < 0.05);
        let t = InitSpec::LstmGaussian { hidden_units: 8 }
            .sample(&[n], &mut rng)
            .unwrap();
        let (_, std) = std_of(&t);
        let target = (1.0f64 / 16.0).sqrt();
        assert!((std - target).abs() / target < 0.05);
        let t = InitSpec::UniformEps { eps: 1e-4 }
            .sample(&[n], &mut rng)
            .unwrap();
        assert!(t.data().iter().all(|x| x.abs() <= 1e-4));
    }

    #[test]
    fn forget_bias_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = InitSpec::ForgetBiasOne { hidden_units: 2 }
            .sample(&[8], &mut rng)
            .unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(InitSpec::ForgetBiasOne { hidden_units: 3 }
            .sample(&[8], &mut rng)
            .is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            s.add("w", Tensor::zeros(&[2])),
            Err(Error::Config(_))
        ));
        let p = s.get(s.id("w").unwrap());
        assert_eq!(p.adam_m.shape(), p.tensor.shape());
        assert_eq!(p.adam_v.shape(), p.tensor.shape());
    }
}
