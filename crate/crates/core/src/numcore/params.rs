use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::TensorError;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays. Names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId, TensorError> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Copies every parameter value from `other`, matching by name.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other.id(name).ok_or_else(|| TensorError::MissingParam(name.clone()))?;
            let v = other.value(src);
            if v.dim() != self.values[i].dim() {
                return Err(TensorError::ParamShape {
                    name: name.clone(),
                    expected: self.values[i].dim(),
                    found: v.dim(),
                });
            }
            self.values[i] = v.clone();
        }
        Ok(())
    }
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    Normal(f64),
    /// Normal with standard deviation `1/sqrt(rows)` (fan-in scaling).
    FanIn,
}

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> ParamId {
        let value = match init {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
            Init::Constant(c) => Array2::from_elem((rows, cols), c),
            Init::Normal(std) => self.normal(rows, cols, std),
            Init::FanIn => self.normal(rows, cols, 1.0 / (rows.max(1) as f64).sqrt()),
        };
        self.param_value(name, value)
    }

    /// Registers a parameter with an explicit initial value.
    pub fn param_value(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store
            .add(&full, value)
            .expect("parameter names are generated uniquely")
    }

    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        let rng = &mut *self.rng;
        Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
    }
}
