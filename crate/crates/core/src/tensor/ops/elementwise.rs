use super::Op;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};

impl<T: Element> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let out = self.value(x).iter().map(|&v| v * f).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, factor: f })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().copied().sum::<T>();
        self.push(vec![1], vec![total], Op::Sum { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape { x }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }
}
