use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{xavier_uniform, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Fully connected network: tanh on hidden layers, linear output multiplied
/// by `output_scale`.
///
/// Weights are stored `[fan_in, fan_out]` so a batch `[m, fan_in]` maps to
/// `x·W + b`. Parameters are laid out `[W₀, b₀, W₁, b₁, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub output_scale: f64,
    params: Vec<Tensor>,
}

/// Shape-only description of an [`Mlp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpLayout {
    pub sizes: Vec<usize>,
    pub output_scale: f64,
}

impl Mlp {
    /// Xavier-uniform weights and zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let params = sizes
            .windows(2)
            .flat_map(|w| [xavier_uniform(w[0], w[1], rng), Tensor::zeros(&[w[1]])])
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            output_scale: 1.0,
            params,
        })
    }

    pub fn from_params(layout: &MlpLayout, params: Vec<Tensor>) -> Result<Self> {
        let mut mlp = Self {
            sizes: layout.sizes.clone(),
            output_scale: layout.output_scale,
            params: Vec::new(),
        };
        mlp.check_params(&params)?;
        mlp.params = params;
        Ok(mlp)
    }

    pub fn layout(&self) -> MlpLayout {
        MlpLayout {
            sizes: self.sizes.clone(),
            output_scale: self.output_scale,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        let expected: Vec<Vec<usize>> = self
            .sizes
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect();
        let ok = params.len() == expected.len()
            && params
                .iter()
                .zip(&expected)
                .all(|(p, e)| p.shape() == e.as_slice());
        if ok {
            Ok(())
        } else {
            Err(Error::dim(
                "mlp_params",
                format!(
                    "expected {expected:?}, got {:?}",
                    params.iter().map(Tensor::shape).collect::<Vec<_>>()
                ),
            ))
        }
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        self.check_params(&params)?;
        self.params = params;
        Ok(())
    }

    /// Multiplies the output layer's weights and bias by `factor`.
    pub fn scale_output(&mut self, factor: f64) {
        let k = self.params.len();
        for p in &mut self.params[k - 2..] {
            p.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Zeroes the output layer so the network maps everything to 0.
    pub fn zero_output(&mut self) {
        let k = self.params.len();
        for p in &mut self.params[k - 2..] {
            p.data_mut().fill(0.0);
        }
    }

    /// Records the network on `tape` with parameters bound to `vars`
    /// (same layout as [`Mlp::params`]). `x` is `[m, input_dim]`.
    pub fn forward_with(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "mlp has {} parameter tensors, got {} handles",
                self.params.len(),
                vars.len()
            )));
        }
        let layers = vars.len() / 2;
        let mut h = x;
        for (i, pair) in vars.chunks(2).enumerate() {
            h = tape.add(tape.matmul(h, pair[0])?, pair[1])?;
            if i + 1 < layers {
                h = tape.tanh(h);
            }
        }
        Ok(if self.output_scale == 1.0 {
            h
        } else {
            tape.scale(h, self.output_scale)
        })
    }

    /// Untracked evaluation of a batch `[m, input_dim]`.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let xv = tape.constant(x.clone());
        let out = self.forward_with(&tape, &vars, xv)?;
        Ok(tape.value(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::seeded_rng;

    #[test]
    fn parameter_count_and_shapes() {
        let mlp = Mlp::new(&[2, 32, 32, 2], &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(mlp.param_count(), 2 * 32 + 32 + 32 * 32 + 32 + 32 * 2 + 2);
        let out = mlp.eval(&Tensor::zeros(&[5, 2])).unwrap();
        assert_eq!(out.shape(), &[5, 2]);
        // zero biases: the origin maps to the origin
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_scale_multiplies() {
        let mut mlp = Mlp::new(&[3, 8, 2], &mut seeded_rng(1, 0)).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, -0.5, 0.9]]);
        let base = mlp.eval(&x).unwrap();
        mlp.output_scale = 1e-2;
        let scaled = mlp.eval(&x).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a * 1e-2 - b).abs() < 1e-18);
        }
    }

    #[test]
    fn scaling_output_layer_scales_output() {
        let mut mlp = Mlp::new(&[3, 8, 2], &mut seeded_rng(2, 0)).unwrap();
        let x = Tensor::from_rows(&[vec![0.4, 0.2, -1.0]]);
        let base = mlp.eval(&x).unwrap();
        mlp.scale_output(1e-2);
        assert_eq!(mlp.output_scale, 1.0);
        for (a, b) in base.data().iter().zip(mlp.eval(&x).unwrap().data()) {
            assert!((a * 1e-2 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(Mlp::new(&[3], &mut seeded_rng(0, 0)).is_err());
        let mut mlp = Mlp::new(&[2, 4, 2], &mut seeded_rng(0, 0)).unwrap();
        assert!(mlp.set_params(vec![Tensor::zeros(&[2, 4])]).is_err());
    }
}
