use super::{EstimatorError, Result};
use crate::Scalar;

/// Name, shape and location of one parameter array inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every trainable array laid out contiguously in declaration order, with
/// Adam's first and second moments of the same layout and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    slots: Vec<ParamSlot>,
    pub values: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(arrays: Vec<(String, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let slots: Vec<ParamSlot> = arrays
            .into_iter()
            .map(|(name, shape)| {
                let slot = ParamSlot { name, shape, offset };
                offset += slot.len();
                slot
            })
            .collect();
        Self {
            slots,
            values: vec![T::zero(); offset],
            m: vec![T::zero(); offset],
            v: vec![T::zero(); offset],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> &[T] {
        let s = self.slot(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
        &self.values[s.range()]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [T] {
        let r = self
            .slot(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .range();
        &mut self.values[r]
    }

    /// Replace all values; moments and step reset.
    pub fn load(&mut self, values: Vec<T>) -> Result<()> {
        if values.len() != self.len() {
            return Err(EstimatorError::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.len()
            )));
        }
        self.values = values;
        self.m.iter_mut().for_each(|x| *x = T::zero());
        self.v.iter_mut().for_each(|x| *x = T::zero());
        self.step = 0;
        Ok(())
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.len()]
    }

    pub fn check_congruent(&self) -> Result<()> {
        if self.m.len() != self.values.len() || self.v.len() != self.values.len() {
            return Err(EstimatorError::Shape("moment arrays out of shape".into()));
        }
        Ok(())
    }
}
