use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A trainable parameter with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param { shape, value: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn normal(shape: Vec<usize>, std: f32, rng: &mut impl Rng) -> Self {
        let mut p = Param::zeros(shape);
        let dist = Normal::new(0.0, std).expect("finite std");
        p.value.iter_mut().for_each(|v| *v = dist.sample(rng));
        p
    }

    pub fn uniform(shape: Vec<usize>, bound: f32, rng: &mut impl Rng) -> Self {
        let mut p = Param::zeros(shape);
        let dist = Uniform::new_inclusive(-bound, bound);
        p.value.iter_mut().for_each(|v| *v = dist.sample(rng));
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns named parameters.
pub trait Parameters {
    /// Visits every parameter under a dotted name, in a fixed order.
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
