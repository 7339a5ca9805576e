//! Dense layers over a [`ParamStore`].

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// Puts parameter `id` on the tape, as a trainable node or as a constant.
pub fn param(store: &ParamStore, tape: &mut Tape, id: ParamId, trainable: bool) -> Var {
    if trainable {
        store.var(tape, id)
    } else {
        tape.constant(store.get(id).clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut Rng) -> Result<Self> {
        let w = store.glorot(&format!("{name}.w"), fan_in, fan_out, rng)?;
        let b = if bias {
            Some(store.zeros(&format!("{name}.b"), 1, fan_out)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: Var, trainable: bool) -> Result<Var> {
        let w = param(store, tape, self.w, trainable);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = param(store, tape, b, trainable);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Linear layers with ReLU between them and no final activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: Var, trainable: bool) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = l.forward(store, tape, h, trainable)?;
        }
        Ok(h)
    }
}
