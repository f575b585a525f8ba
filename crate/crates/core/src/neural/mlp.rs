use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub(crate) fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weight.rows())
            .map(|k| dot(self.weight.row(k), x) + self.bias[k])
            .collect()
    }
}

/// ReLU reconstructor. Hidden layers alternate `r → m` and `m → r`; an even
/// count brings the width back to `r`, and the final layer maps `r → m`.
/// Every layer, the output one included, applies ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructorParams {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<DenseLayer>,
}

impl ReconstructorParams {
    pub fn zeros(r: usize, m: usize, hidden_layers: usize) -> Result<Self> {
        if !hidden_layers.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "the reconstructor needs an even number of hidden layers, got {hidden_layers}"
            )));
        }
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        for k in 0..hidden_layers {
            layers.push(if k % 2 == 0 {
                DenseLayer::zeros(m, r)
            } else {
                DenseLayer::zeros(r, m)
            });
        }
        layers.push(DenseLayer::zeros(m, r));
        Ok(Self { layers })
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("output layer").weight.rows()
    }

    pub(crate) fn check(&self, r: usize, m: usize) -> Result<()> {
        let reference = Self::zeros(r, m, self.hidden_layer_count())?;
        for (k, (a, b)) in self.layers.iter().zip(&reference.layers).enumerate() {
            if a.weight.shape() != b.weight.shape() || a.bias.len() != b.bias.len() {
                return Err(Error::arg(format!(
                    "reconstructor layer {k} should be {:?}, found {:?}",
                    b.weight.shape(),
                    a.weight.shape()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Maps a hidden state of length `r` to a field of length `m`.
pub fn mlp_forward(params: &ReconstructorParams, h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != params.input_size() {
        return Err(Error::arg(format!(
            "reconstructor expects {} inputs, got {}",
            params.input_size(),
            h.len()
        )));
    }
    let mut x = h.to_vec();
    for layer in &params.layers {
        x = layer.preactivation(&x).into_iter().map(relu).collect();
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn odd_hidden_count_rejected() {
        assert!(ReconstructorParams::zeros(2, 3, 1).is_err());
        let p = ReconstructorParams::zeros(2, 3, 4).unwrap();
        assert_eq!(p.layers.len(), 5);
        assert_eq!(p.layers[1].weight.shape(), (2, 3));
        assert_eq!(p.output_size(), 3);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = ReconstructorParams::zeros(2, 4, 2).unwrap();
        assert_eq!(mlp_forward(&p, &[1.0, -3.0]).unwrap(), vec![0.0; 4]);
        assert!(mlp_forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn relu_identity_region_is_linear() {
        let mut p = ReconstructorParams::zeros(2, 3, 2).unwrap();
        p.layers[0].weight = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]).unwrap();
        p.layers[1].weight = Matrix::from_rows(&[&[1.0, 0.0, 0.5], &[0.0, 2.0, 0.0]]).unwrap();
        p.layers[2].weight = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[3.0, 1.0]]).unwrap();
        let x = [0.4, 1.5];
        let composed = p.layers[2]
            .weight
            .matmul(&p.layers[1].weight)
            .unwrap()
            .matmul(&p.layers[0].weight)
            .unwrap();
        let expected = composed.mul_vec(&x).unwrap();
        let got = mlp_forward(&p, &x).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_independent_forward() {
        let mut rng = SeededRng::new(3);
        let mut p = ReconstructorParams::zeros(2, 3, 2).unwrap();
        for layer in &mut p.layers {
            for w in layer.weight.as_mut_slice() {
                *w = rng.uniform_range(-1.0, 1.0);
            }
            for b in &mut layer.bias {
                *b = rng.uniform_range(-0.5, 0.5);
            }
        }
        let h = [0.3, -0.7];
        // nested-loop reference
        let mut x: Vec<f64> = h.to_vec();
        for layer in &p.layers {
            let (rows, cols) = layer.weight.shape();
            let mut next = vec![0.0; rows];
            for i in 0..rows {
                let mut acc = layer.bias[i];
                for j in 0..cols {
                    acc += layer.weight[(i, j)] * x[j];
                }
                next[i] = acc.max(0.0);
            }
            x = next;
        }
        let got = mlp_forward(&p, &h).unwrap();
        for (a, b) in got.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
