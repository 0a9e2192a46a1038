//! Named parameter tensors and their initialization.

use rand::Rng;

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Puts every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(n, t)| {
                let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
                (n.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Wraps existing graph variables, one per stored tensor in store
    /// order, as a [`Bound`].
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.entries.len()
            )));
        }
        Ok(Bound {
            vars: self.entries.iter().map(|(n, _)| n.clone()).zip(vars.iter().copied()).collect(),
        })
    }
}

/// Graph handles for a bound [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Gradients in store order; parameters the loss did not reach get zeros.
    pub fn gradients(&self, g: &Graph) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|(_, v)| match g.grad(*v) {
                Some(t) => t.clone(),
                None => Tensor::zeros(g.shape(*v)),
            })
            .collect()
    }
}

/// Uniform He-style fan-in initialization: `U(-√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn he_bounds() {
        let t = he_uniform(&[8, 6], 6, &mut rng_from(1));
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(t.shape(), &[8, 6]);
    }

    #[test]
    fn insert_replaces_and_keeps_order() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::scalar(1.0));
        p.insert("b", Tensor::scalar(2.0));
        p.insert("a", Tensor::scalar(3.0));
        let names: Vec<&str> = p.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(p.get("a").unwrap().item().unwrap(), 3.0);
        assert!(p.get("c").is_err());
    }
}
