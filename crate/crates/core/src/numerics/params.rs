use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Graph, NumericsError, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named parameters, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<(), NumericsError> {
        if self.params.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), Parameter { name: name.to_string(), tensor, trainable });
        Ok(())
    }

    /// Gaussian init with standard deviation `std`.
    pub fn insert_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> Result<(), NumericsError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        self.insert(name, Tensor::new(shape, data)?, true)
    }

    pub fn insert_filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<(), NumericsError> {
        self.insert(name, Tensor::filled(shape, value), true)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter, NumericsError> {
        self.params.get(name).ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter, NumericsError> {
        self.params.get_mut(name).ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.tensor.numel()).sum()
    }

    /// Mark every parameter under `prefix` frozen (or trainable again).
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.values_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParameterStore {
        ParameterStore {
            params: self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    /// Copy all parameters from `other`, replacing same-named entries.
    pub fn merge(&mut self, other: ParameterStore) {
        self.params.extend(other.params);
    }

    pub fn into_vec(self) -> Vec<Parameter> {
        self.params.into_values().collect()
    }
}

impl FromIterator<Parameter> for ParameterStore {
    fn from_iter<T: IntoIterator<Item = Parameter>>(iter: T) -> Self {
        Self { params: iter.into_iter().map(|p| (p.name.clone(), p)).collect() }
    }
}

/// Which parameters a particular graph should track gradients for.
#[derive(Clone, Debug, PartialEq)]
pub enum GradPolicy {
    /// No gradients (inference).
    None,
    /// Every trainable parameter.
    All,
    /// Trainable parameters whose names start with one of these prefixes.
    Only(Vec<String>),
    /// Trainable parameters except those under these prefixes.
    Except(Vec<String>),
}

impl GradPolicy {
    pub fn only(prefixes: &[&str]) -> Self {
        Self::Only(prefixes.iter().map(|s| s.to_string()).collect())
    }

    pub fn except(prefixes: &[&str]) -> Self {
        Self::Except(prefixes.iter().map(|s| s.to_string()).collect())
    }

    pub fn tracks(&self, p: &Parameter) -> bool {
        if !p.trainable {
            return false;
        }
        match self {
            Self::None => false,
            Self::All => true,
            Self::Only(pre) => pre.iter().any(|x| p.name.starts_with(x.as_str())),
            Self::Except(pre) => !pre.iter().any(|x| p.name.starts_with(x.as_str())),
        }
    }
}

impl Graph {
    /// Bring a stored parameter onto the tape according to `policy`.
    pub fn load_param(&mut self, store: &ParameterStore, name: &str, policy: &GradPolicy) -> Result<Var, NumericsError> {
        let p = store.get(name)?;
        Ok(self.param(name, &p.tensor, policy.tracks(p)))
    }
}
