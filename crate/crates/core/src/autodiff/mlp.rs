use rand::Rng;

use crate::autodiff::{BlockId, LayoutBuilder, Matrix, ParamLayout, ParamStore, Tape, Var, WeightSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully connected network with tanh between layers and a linear output.
///
/// Layer `i` owns blocks `{prefix}.{i}.weight` (out×in) and `{prefix}.{i}.bias` (1×out).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
    layers: Vec<(BlockId, BlockId)>,
}

impl Mlp {
    /// Registers the blocks for widths `sizes = [in, hidden.., out]`.
    pub fn declare(builder: &mut LayoutBuilder, prefix: &str, sizes: &[usize]) {
        for (i, w) in sizes.windows(2).enumerate() {
            builder.push(format!("{prefix}.{i}.weight"), w[1], w[0]);
            builder.push(format!("{prefix}.{i}.bias"), 1, w[1]);
        }
    }

    /// Finds the consecutive layers named `{prefix}.{i}.*` in `layout`.
    pub fn from_layout(layout: &ParamLayout, prefix: &str) -> Result<Self> {
        let mut layers = Vec::new();
        let mut sizes = Vec::new();
        while let Ok(w) = layout.id(&format!("{prefix}.{}.weight", layers.len())) {
            let b = layout.id(&format!("{prefix}.{}.bias", layers.len()))?;
            let (ws, bs) = (layout.block(w), layout.block(b));
            if bs.rows != 1 || bs.cols != ws.rows {
                return Err(Error::Shape(format!("bias {} does not match weight", bs.name)));
            }
            if let Some(&prev) = sizes.last() {
                if prev != ws.cols {
                    return Err(Error::Shape(format!("{} expects {} inputs, previous layer gives {prev}", ws.name, ws.cols)));
                }
            } else {
                sizes.push(ws.cols);
            }
            sizes.push(ws.rows);
            layers.push((w, b));
        }
        if layers.is_empty() {
            return Err(Error::InvalidConfig(format!("no layers under {prefix:?}")));
        }
        Ok(Mlp {
            prefix: prefix.to_string(),
            sizes,
            layers,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.layers.iter().map(|l| l.0)
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) weights and biases; optionally zeroes the output layer.
    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<S>, rng: &mut R, zero_last: bool) {
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let zero = zero_last && k + 1 == self.layers.len();
            let bound = 1.0 / (self.sizes[k] as f64).sqrt();
            for id in [w, b] {
                for v in store.block_mut(id) {
                    *v = if zero { S::zero() } else { S::lit(rng.random_range(-bound..bound)) };
                }
            }
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, src: &dyn WeightSource<S>, x: Var) -> Result<Var> {
        if tape.shape(x).1 != self.input_dim() {
            return Err(Error::Shape(format!(
                "{} takes {} inputs, got {}",
                self.prefix,
                self.input_dim(),
                tape.shape(x).1
            )));
        }
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let wv = src.bind(tape, w)?;
            let bv = src.bind(tape, b)?;
            h = tape.affine(h, wv, Some(bv))?;
            if k + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

/// Evaluates the network under `prefix` on one input vector with the store's weights.
pub fn mlp_forward<S: Scalar>(store: &ParamStore<S>, prefix: &str, input: &[S]) -> Result<Vec<S>> {
    let mlp = Mlp::from_layout(store.layout(), prefix)?;
    let mut tape = Tape::new(0);
    let x = tape.constant(Matrix::row_vector(input.to_vec()));
    let y = mlp.forward(&mut tape, &crate::autodiff::Frozen(store), x)?;
    Ok(tape.value(y).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn store(sizes: &[usize]) -> ParamStore<f64> {
        let mut b = ParamLayout::builder();
        Mlp::declare(&mut b, "net", sizes);
        ParamStore::zeros(b.build().unwrap())
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let s = store(&[3, 5, 2]);
        assert_eq!(mlp_forward(&s, "net", &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut s = store(&[3, 3]);
        let id = s.layout().id("net.0.weight").unwrap();
        s.set_block(id, &Matrix::identity(3)).unwrap();
        assert_eq!(mlp_forward(&s, "net", &[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn matches_hand_written_forward() {
        let mut s = store(&[2, 4, 1]);
        let mlp = Mlp::from_layout(s.layout(), "net").unwrap();
        mlp.init(&mut s, &mut seeded(3), false);
        let x = [0.7, -0.4];
        let f = s.flat();
        // weight0 4x2 at 0, bias0 at 8, weight1 1x4 at 12, bias1 at 16
        let mut out = f[16];
        for j in 0..4 {
            let pre = f[2 * j] * x[0] + f[2 * j + 1] * x[1] + f[8 + j];
            out += f[12 + j] * pre.tanh();
        }
        let y = mlp_forward(&s, "net", &x).unwrap();
        assert!((y[0] - out).abs() < 1e-15);
    }

    #[test]
    fn wrong_input_width_is_an_error() {
        let s = store(&[2, 4, 1]);
        assert!(mlp_forward(&s, "net", &[1.0]).is_err());
        assert!(mlp_forward(&s, "missing", &[1.0, 2.0]).is_err());
    }
}
