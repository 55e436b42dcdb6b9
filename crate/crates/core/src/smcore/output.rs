//! Global output accumulation. Every contribution is an atomic add.

use crate::error::{Error, Result};
use crate::oracle::{ArithMode, OutputMap, Scalar};

#[derive(Clone, Debug)]
pub struct OutputBuffer {
    values: OutputMap,
    adds: Vec<u32>,
}

impl OutputBuffer {
    pub fn new(len: usize, mode: ArithMode) -> Self {
        let values = match mode {
            ArithMode::Int32 => OutputMap::Int(vec![0; len]),
            ArithMode::Float32 => OutputMap::Float(vec![0.0; len]),
        };
        OutputBuffer {
            values,
            adds: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.adds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adds.is_empty()
    }

    pub fn add(&mut self, index: usize, value: Scalar) -> Result<()> {
        let slot = self
            .adds
            .get_mut(index)
            .ok_or_else(|| Error::Fault(format!("output index {index} out of range")))?;
        *slot += 1;
        match (&mut self.values, value) {
            (OutputMap::Int(v), Scalar::Int(x)) => v[index] += x,
            (OutputMap::Float(v), Scalar::Float(x)) => v[index] += x,
            _ => return Err(Error::Fault("mixed arithmetic modes in output".into())),
        }
        Ok(())
    }

    pub fn add_counts(&self) -> &[u32] {
        &self.adds
    }

    pub fn values(&self) -> &OutputMap {
        &self.values
    }

    pub fn into_map(self) -> OutputMap {
        self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulates_and_counts() {
        let mut b = OutputBuffer::new(2, ArithMode::Int32);
        b.add(1, Scalar::Int(-2)).unwrap();
        b.add(1, Scalar::Int(-4)).unwrap();
        assert_eq!(b.values(), &OutputMap::Int(vec![0, -6]));
        assert_eq!(b.add_counts(), &[0, 2]);
        assert!(b.add(2, Scalar::Int(1)).is_err());
        assert!(b.add(0, Scalar::Float(1.0)).is_err());
    }
}
