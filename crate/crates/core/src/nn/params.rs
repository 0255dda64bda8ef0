use std::collections::HashMap;

use crate::tensor::{Real, Tensor};

/// Named trainable tensors in registration order. Registration order is part
/// of a model's identity: it fixes init draws, optimizer iteration, and
/// checkpoint layout, so runs reproduce byte-identically.
pub struct ParamSet<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> Tensor<T> {
        let name = name.into();
        assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name '{name}'"
        );
        assert!(t.requires_grad(), "parameter '{name}' must be a trainable leaf");
        self.entries.push((name, t.clone()));
        t
    }

    pub fn extend(&mut self, other: &ParamSet<T>) {
        for (n, t) in &other.entries {
            self.add(n.clone(), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Copy of all values, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|(_, t)| t.value_vec()).collect()
    }

    /// Load values produced by `snapshot` (same model layout required).
    pub fn load(&self, snap: &[Vec<T>]) {
        assert_eq!(snap.len(), self.entries.len(), "snapshot layout mismatch");
        for ((_, t), vals) in self.entries.iter().zip(snap) {
            t.set_values(vals);
        }
    }

    /// Named value map for checkpoints.
    pub fn named_values(&self) -> Vec<(String, (usize, usize), Vec<T>)> {
        self.entries.iter().map(|(n, t)| (n.clone(), t.shape(), t.value_vec())).collect()
    }

    /// Restore from named blobs; every registered parameter must be present
    /// with a matching shape. Extra blobs are ignored (caller may validate).
    pub fn load_named(&self, blobs: &HashMap<String, ((usize, usize), Vec<T>)>) -> crate::Result<()> {
        for (n, t) in &self.entries {
            let (shape, vals) = blobs.get(n).ok_or_else(|| {
                crate::Error::Checkpoint(format!("missing parameter '{n}'"))
            })?;
            if *shape != t.shape() {
                return Err(crate::Error::Checkpoint(format!(
                    "parameter '{n}' shape {}x{} does not match model {}x{}",
                    shape.0,
                    shape.1,
                    t.shape().0,
                    t.shape().1
                )));
            }
            t.set_values(vals);
        }
        Ok(())
    }
}

impl ParamSet<f32> {
    /// Bit-exact equality of all values (freeze-contract and identity tests).
    pub fn bits_equal(&self, other: &ParamSet<f32>) -> bool {
        if self.len() != other.len() {
            return false;
        }
        self.entries.iter().zip(&other.entries).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta.shape() == tb.shape()
                && ta
                    .values()
                    .iter()
                    .zip(tb.values().iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }

    pub fn value_bits(&self) -> Vec<Vec<u32>> {
        self.entries
            .iter()
            .map(|(_, t)| t.values().iter().map(|v| v.to_bits()).collect())
            .collect()
    }
}
