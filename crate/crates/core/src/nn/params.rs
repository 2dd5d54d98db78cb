use rand::Rng;

use super::{NnError, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialization rule of a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-sqrt(1/fan_in), +sqrt(1/fan_in))`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    /// Adam first and second moments.
    pub m: Vec<F>,
    pub v: Vec<F>,
}

/// Named trainable tensors in insertion order, with Adam state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<F> {
    params: Vec<Parameter<F>>,
    step: u64,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            step: 0,
        }
    }

    pub fn add<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        let len: usize = shape.iter().product();
        let data: Vec<F> = match init {
            Init::Uniform { fan_in } => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                (0..len).map(|_| F::of(rng.gen_range(-bound..bound))).collect()
            }
            Init::Zeros => vec![F::zero(); len],
            Init::Ones => vec![F::one(); len],
        };
        self.push(name.into(), Tensor::new(shape, data).expect("parameter rank within limit"))
    }

    pub fn push(&mut self, name: String, value: Tensor<F>) -> ParamId {
        let len = value.len();
        self.params.push(Parameter {
            name,
            value,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn advance_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (id, g) in &grads.0 {
            self.params[id.0].value.accumulate_grad(g);
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.clear_grad());
    }

    /// Sets every missing gradient to zero.
    pub fn fill_missing_grads(&mut self) {
        for p in &mut self.params {
            if p.value.grad().is_none() {
                *p.value.grad_mut() = Some(vec![F::zero(); p.value.len()]);
            }
        }
    }

    /// Copies values (and moments) into another precision.
    pub fn cast<G: Real>(&self) -> ParameterStore<G> {
        let conv = |xs: &[F]| xs.iter().map(|x| G::of(x.to_f64().unwrap())).collect();
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    m: conv(&p.m),
                    v: conv(&p.v),
                })
                .collect(),
            step: self.step,
        }
    }

    /// Replaces all values; shapes and order must match.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<F>)>) -> Result<(), NnError> {
        if values.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, value)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter `{name}` {:?} does not match `{}` {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<F>(pub Vec<(ParamId, Vec<F>)>);

impl<F> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.0.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::<f32>::new();
        let w = store.add("w", &[16, 4], Init::Uniform { fan_in: 16 }, &mut rng);
        let b = store.add("b", &[4], Init::Zeros, &mut rng);
        let g = store.add("g", &[4], Init::Ones, &mut rng);
        assert_eq!(store.count(), 64 + 8);
        assert!(store.value(w).data().iter().all(|x| x.abs() <= 0.25));
        assert!(store.value(b).data().iter().all(|x| *x == 0.0));
        assert!(store.value(g).data().iter().all(|x| *x == 1.0));
        assert_eq!(store.find("g"), Some(g));
        assert_eq!(store.get(w).m.len(), 64);
    }
}
