use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::Real;

/// Which group of the model a parameter belongs to.
///
/// `Shared` is the encoder (embeddings and both GRU directions); the other
/// three are the attention and output layers owned by one task each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Shared,
    Head,
    Tail,
    Relation,
}

impl Partition {
    pub const ALL: [Partition; 4] = [
        Partition::Shared,
        Partition::Head,
        Partition::Tail,
        Partition::Relation,
    ];

    pub fn code(self) -> u8 {
        match self {
            Partition::Shared => 0,
            Partition::Head => 1,
            Partition::Tail => 2,
            Partition::Relation => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Partition::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Shared => "shared",
            Partition::Head => "head",
            Partition::Tail => "tail",
            Partition::Relation => "relation",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub partition: Partition,
    pub value: Tensor<T>,
    /// Adam first moment.
    pub m: Tensor<T>,
    /// Adam second moment.
    pub v: Tensor<T>,
    /// Frozen parameters still receive gradients but are never updated.
    pub frozen: bool,
}

/// Handle to a parameter inside one [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensors, each tagged with exactly one [`Partition`], plus the
/// optimizer state that travels with them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            index: BTreeMap::new(),
            step: 0,
        }
    }

    /// Adds a parameter. Re-using a name is a configuration error.
    pub fn insert(&mut self, name: &str, partition: Partition, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            partition,
            m: zeros.clone(),
            v: zeros,
            value,
            frozen: false,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub(crate) fn push_raw(&mut self, param: Parameter<T>) -> Result<ParamId> {
        let id = self.insert(&param.name, param.partition, param.value.clone())?;
        let slot = &mut self.params[id.0];
        slot.m = param.m;
        slot.v = param.v;
        slot.frozen = param.frozen;
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name)?;
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Shape {
                name: name.to_string(),
                expected: slot.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let id = self.id(name)?;
        self.params[id.0].frozen = frozen;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn names_in(&self, partition: Partition) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.partition == partition)
            .map(|p| p.name.as_str())
            .collect()
    }

    pub fn partitions(&self) -> Vec<Partition> {
        let mut seen: Vec<Partition> = self.params.iter().map(|p| p.partition).collect();
        seen.sort();
        seen.dedup();
        seen
    }

    /// Optimizer steps applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
