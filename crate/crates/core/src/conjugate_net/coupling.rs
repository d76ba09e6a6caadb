use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::mlp::{Mlp, MlpLayout};

/// Which half of the state passes through a layer unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    KeepFirst,
    KeepSecond,
}

impl Parity {
    fn alternate(i: usize) -> Self {
        if i.is_multiple_of(2) {
            Parity::KeepFirst
        } else {
            Parity::KeepSecond
        }
    }
}

/// Additive coupling: the kept half is copied, the other half is shifted by
/// `shift(kept)`. The inverse subtracts the same shift.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    pub parity: Parity,
    pub shift: Mlp,
}

impl CouplingLayer {
    pub fn half(&self) -> usize {
        self.shift.input_dim()
    }

    fn apply(&self, tape: &Tape, vars: &[Var], z: Var, sign: f64) -> Result<Var> {
        let half = self.half();
        match tape.shape(z).as_slice() {
            [_, w] if *w == 2 * half => {}
            s => {
                return Err(Error::dim(
                    "coupling",
                    format!("expected [m, {}], got {s:?}", 2 * half),
                ))
            }
        }
        let first = tape.slice(z, 1, 0..half)?;
        let second = tape.slice(z, 1, half..2 * half)?;
        let (kept, moved) = match self.parity {
            Parity::KeepFirst => (first, second),
            Parity::KeepSecond => (second, first),
        };
        let s = self.shift.forward_with(tape, vars, kept)?;
        let moved = if sign > 0.0 {
            tape.add(moved, s)?
        } else {
            tape.sub(moved, s)?
        };
        match self.parity {
            Parity::KeepFirst => tape.concat(&[kept, moved], 1),
            Parity::KeepSecond => tape.concat(&[moved, kept], 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleLayout {
    pub dim: usize,
    pub layers: Vec<(Parity, MlpLayout)>,
}

/// Stack of additive coupling layers with alternating parity; an exactly
/// invertible map on `R^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingEnsemble {
    dim: usize,
    layers: Vec<CouplingLayer>,
}

impl CouplingEnsemble {
    /// `layers` coupling layers, each with a shift network
    /// `dim/2 → hidden... → dim/2`.
    pub fn new(dim: usize, hidden: &[usize], layers: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "coupling layers split the state in half; dimension {dim} is not even"
            )));
        }
        let half = dim / 2;
        let sizes: Vec<usize> = std::iter::once(half)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(half))
            .collect();
        let layers = (0..layers)
            .map(|i| {
                Ok(CouplingLayer {
                    parity: Parity::alternate(i),
                    shift: Mlp::new(&sizes, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { dim, layers })
    }

    pub fn from_params(layout: &EnsembleLayout, params: Vec<Tensor>) -> Result<Self> {
        let mut rest = params.into_iter();
        let mut layers = Vec::with_capacity(layout.layers.len());
        for (parity, mlp) in &layout.layers {
            let count = 2 * (mlp.sizes.len() - 1);
            let chunk: Vec<Tensor> = rest.by_ref().take(count).collect();
            layers.push(CouplingLayer {
                parity: *parity,
                shift: Mlp::from_params(mlp, chunk)?,
            });
        }
        if rest.next().is_some() {
            return Err(Error::Contract("surplus coupling parameters".into()));
        }
        let ens = Self {
            dim: layout.dim,
            layers,
        };
        if ens.layers.iter().any(|l| 2 * l.half() != ens.dim) {
            return Err(Error::dim(
                "coupling_ensemble",
                "layer width disagrees with dimension",
            ));
        }
        Ok(ens)
    }

    pub fn layout(&self) -> EnsembleLayout {
        EnsembleLayout {
            dim: self.dim,
            layers: self
                .layers
                .iter()
                .map(|l| (l.parity, l.shift.layout()))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    /// Shrinks (or grows) every shift network's output layer in place.
    pub fn scale_output_layers(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.shift.scale_output(factor);
        }
    }

    pub fn set_output_scale(&mut self, scale: f64) {
        for l in &mut self.layers {
            l.shift.output_scale = scale;
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.shift.params().iter().cloned())
            .collect()
    }

    pub fn param_tensor_count(&self) -> usize {
        self.layers.iter().map(|l| l.shift.params().len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.shift.param_count()).sum()
    }

    pub fn set_params(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.param_tensor_count() {
            return Err(Error::Contract(format!(
                "ensemble has {} parameter tensors, got {}",
                self.param_tensor_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let k = l.shift.params().len();
            l.shift.set_params(params[offset..offset + k].to_vec())?;
            offset += k;
        }
        Ok(())
    }

    fn split<'a>(&self, vars: &'a [Var]) -> Result<Vec<&'a [Var]>> {
        if vars.len() != self.param_tensor_count() {
            return Err(Error::Contract(format!(
                "ensemble has {} parameter tensors, got {} handles",
                self.param_tensor_count(),
                vars.len()
            )));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for l in &self.layers {
            let k = l.shift.params().len();
            out.push(&vars[offset..offset + k]);
            offset += k;
        }
        Ok(out)
    }

    /// `𝓗(z)` for a batch `[m, dim]`.
    pub fn forward_with(&self, tape: &Tape, vars: &[Var], z: Var) -> Result<Var> {
        let chunks = self.split(vars)?;
        let mut z = z;
        for (l, v) in self.layers.iter().zip(chunks) {
            z = l.apply(tape, v, z, 1.0)?;
        }
        Ok(z)
    }

    /// `𝓗⁻¹(y)`: layers in reverse order, shifts subtracted.
    pub fn inverse_with(&self, tape: &Tape, vars: &[Var], y: Var) -> Result<Var> {
        let chunks = self.split(vars)?;
        let mut y = y;
        for (l, v) in self.layers.iter().zip(chunks).rev() {
            y = l.apply(tape, v, y, -1.0)?;
        }
        Ok(y)
    }

    fn run(&self, z: &[f64], inverse: bool) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Config(format!(
                "coupling ensemble of dimension {} applied to a {}-vector",
                self.dim,
                z.len()
            )));
        }
        let tape = Tape::new();
        let vars: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.constant(p))
            .collect();
        let x = tape.constant(Tensor::row(z));
        let out = if inverse {
            self.inverse_with(&tape, &vars, x)?
        } else {
            self.forward_with(&tape, &vars, x)?
        };
        Ok(tape.value(out).into_data())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.run(z, false)
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.run(y, true)
    }
}

/// `[x; x]`.
pub fn twin_augment(x0: &[f64]) -> Vec<f64> {
    x0.iter().chain(x0).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::seeded_rng;

    #[test]
    fn zero_output_layers_give_identity() {
        let mut ens = CouplingEnsemble::new(4, &[8, 8], 2, &mut seeded_rng(0, 0)).unwrap();
        for l in ens.layers_mut() {
            l.shift.zero_output();
        }
        let z = [0.3, -1.2, 2.0, 0.5];
        assert_eq!(ens.forward(&z).unwrap(), z.to_vec());
        assert_eq!(ens.inverse(&z).unwrap(), z.to_vec());
    }

    #[test]
    fn single_layer_passes_first_half() {
        let ens = CouplingEnsemble::new(4, &[8], 1, &mut seeded_rng(1, 0)).unwrap();
        let z = [0.3, -1.2, 2.0, 0.5];
        let y = ens.forward(&z).unwrap();
        assert_eq!(&y[..2], &z[..2]);
        assert_ne!(&y[2..], &z[2..]);
    }

    #[test]
    fn odd_dimension_is_rejected() {
        assert!(matches!(
            CouplingEnsemble::new(3, &[4], 2, &mut seeded_rng(0, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn round_trips_both_ways() {
        let mut rng = seeded_rng(2, 0);
        for _ in 0..20 {
            let ens = CouplingEnsemble::new(4, &[16, 16], 2, &mut rng).unwrap();
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let back = ens.inverse(&ens.forward(&z).unwrap()).unwrap();
            let fwd = ens.forward(&ens.inverse(&z).unwrap()).unwrap();
            for i in 0..4 {
                assert!((back[i] - z[i]).abs() <= 1e-10 * z[i].abs().max(1.0));
                assert!((fwd[i] - z[i]).abs() <= 1e-10 * z[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn twin_augmentation() {
        assert_eq!(
            twin_augment(&[2.0, -2.0 / 3.0]),
            vec![2.0, -2.0 / 3.0, 2.0, -2.0 / 3.0]
        );
        assert_eq!(twin_augment(&[0.0; 3]), vec![0.0; 6]);
        for n in 0..6 {
            assert_eq!(twin_augment(&vec![1.0; n]).len(), 2 * n);
        }
    }

    #[test]
    fn layout_round_trip() {
        let ens = CouplingEnsemble::new(8, &[10, 10], 2, &mut seeded_rng(3, 0)).unwrap();
        let copy = CouplingEnsemble::from_params(&ens.layout(), ens.params()).unwrap();
        assert_eq!(copy, ens);
    }
}
