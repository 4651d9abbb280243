use rand::{Rng, RngCore};

use super::{Matrix, Tape, Var};
use crate::error::Result;

/// Inverted dropout: during training each entry is kept with probability
/// `1 - rate` and rescaled by `1 / (1 - rate)`; in evaluation it is the identity.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> Dropout<'a> {
    pub fn disabled() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn training(rate: f64, rng: &'a mut dyn RngCore) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let (rows, cols) = tape.value(x).shape();
        let mask = Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let mask = tape.leaf(mask);
        tape.hadamard(x, mask)
    }
}
