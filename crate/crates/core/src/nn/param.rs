use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

/// Handle into a [`ParamStore`]. Stable for the lifetime of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat registry of named learnable matrices.
///
/// Names are unique and double as checkpoint block names, so keep them
/// stable across versions.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: Vec<Array2<f64>>,
    names: Vec<String>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = self.values.len();
        self.values.push(value);
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    /// Uniform init on `(-bound, bound)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let v = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        self.add(name, v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}
