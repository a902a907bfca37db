use std::collections::BTreeMap;

use super::{KernelError, Scalar, Tensor};

/// Named learnable tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<(), KernelError> {
        if self.entries.contains_key(name) {
            return Err(KernelError::DuplicateParam(name.to_string()));
        }
        self.entries.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn coordinate_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    /// Elementwise `self += other * factor`; both stores must hold the same names and shapes.
    pub fn add_scaled(&mut self, other: &ParamStore<T>, factor: T) -> Result<(), KernelError> {
        self.ensure_same_layout(other)?;
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y * factor;
            }
        }
        Ok(())
    }

    pub fn ensure_same_layout(&self, other: &ParamStore<T>) -> Result<(), KernelError> {
        if self.entries.len() != other.entries.len() {
            return Err(KernelError::InvalidArgument(format!(
                "parameter stores hold {} and {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(KernelError::UnknownParam(kb.clone()));
            }
            if va.shape() != vb.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "param layout",
                    left: va.shape().to_vec(),
                    right: vb.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::zeros(1, 1)).unwrap();
        assert_eq!(
            s.insert("w", Tensor::zeros(1, 1)),
            Err(KernelError::DuplicateParam("w".into()))
        );
    }

    #[test]
    fn add_scaled_checks_layout() {
        let mut a = ParamStore::<f64>::new();
        a.insert("w", Tensor::ones(2, 2)).unwrap();
        let mut b = ParamStore::<f64>::new();
        b.insert("w", Tensor::ones(2, 2)).unwrap();
        a.add_scaled(&b, 0.5).unwrap();
        assert_eq!(a.get("w").unwrap(), &Tensor::full(2, 2, 1.5));
        let mut c = ParamStore::<f64>::new();
        c.insert("w", Tensor::ones(1, 2)).unwrap();
        assert!(a.add_scaled(&c, 1.0).is_err());
    }
}
