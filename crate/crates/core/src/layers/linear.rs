use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    densify, masked_transpose_matvec, matvec, outer, sparse_outer, top_k_indices,
    transpose_matvec, FlopCounter, IndexSet, Matrix, SparseRowGradient, Vector,
};

/// Fully connected unit `y = W x + b`; each row of `W` is one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// Top-k budget for back propagation; `None` means full gradients.
    pub meprop_k: Option<usize>,
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, meprop_k: Option<usize>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::DimensionMismatch {
                op: "LinearLayer::new",
                left: weight.shape(),
                right: (bias.len(), 1),
            });
        }
        if meprop_k == Some(0) {
            return Err(Error::invalid("meprop_k", "must be at least 1"));
        }
        Ok(LinearLayer {
            weight,
            bias,
            meprop_k,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        meprop_k: Option<usize>,
        rng: &mut R,
    ) -> Self {
        LinearLayer {
            weight: glorot_uniform(outputs, inputs, rng),
            bias: vec![0.0; outputs],
            meprop_k,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    /// Whether back propagation through this layer is actually sparsified.
    pub fn is_sparse(&self) -> bool {
        matches!(self.meprop_k, Some(k) if k < self.outputs())
    }
}

/// Inputs and outputs of one computation unit, kept for back propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub x: Vector,
    pub y: Vector,
    pub z: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightGrad {
    Dense(Matrix),
    Sparse(SparseRowGradient),
}

impl WeightGrad {
    pub fn to_dense(&self) -> Matrix {
        match self {
            WeightGrad::Dense(m) => m.clone(),
            WeightGrad::Sparse(s) => densify(s),
        }
    }

    pub fn nonzero_rows(&self) -> usize {
        let dense = self.to_dense();
        (0..dense.rows())
            .filter(|&i| dense.row(i).iter().any(|&v| v != 0.0))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub dw: WeightGrad,
    pub db: Vector,
    pub dx: Vector,
    /// Rows that received gradient, when back propagation was sparsified.
    pub selected: Option<IndexSet>,
}

/// Dense forward pass. Sparsification never touches the forward direction.
pub fn linear_forward(
    layer: &LinearLayer,
    x: &[f64],
    flops: &mut FlopCounter,
) -> Result<(Vector, ForwardCache)> {
    let mut y = matvec(&layer.weight, x, flops)?;
    for (yi, bi) in y.iter_mut().zip(&layer.bias) {
        *yi += bi;
    }
    let cache = ForwardCache {
        x: x.into(),
        y: y.clone(),
        z: y.clone(),
    };
    Ok((y, cache))
}

fn check_grad(layer: &LinearLayer, cache: &ForwardCache, grad_y: &[f64]) -> Result<()> {
    if grad_y.len() != layer.outputs() || cache.x.len() != layer.inputs() {
        return Err(Error::DimensionMismatch {
            op: "linear_backward",
            left: layer.weight.shape(),
            right: (grad_y.len(), cache.x.len()),
        });
    }
    Ok(())
}

pub fn linear_backward_full(
    layer: &LinearLayer,
    cache: &ForwardCache,
    grad_y: &[f64],
    flops: &mut FlopCounter,
) -> Result<LayerGradients> {
    check_grad(layer, cache, grad_y)?;
    let dw = outer(grad_y, &cache.x, flops);
    let dx = transpose_matvec(&layer.weight, grad_y, flops)?;
    Ok(LayerGradients {
        dw: WeightGrad::Dense(dw),
        db: grad_y.into(),
        dx,
        selected: None,
    })
}

/// meProp back propagation: keep the `k` largest-magnitude entries of
/// `grad_y` and compute gradients through those rows only.
pub fn linear_backward_meprop(
    layer: &LinearLayer,
    cache: &ForwardCache,
    grad_y: &[f64],
    k: usize,
    flops: &mut FlopCounter,
) -> Result<LayerGradients> {
    check_grad(layer, cache, grad_y)?;
    let selected = top_k_indices(grad_y, k)?;
    linear_backward_selected(layer, cache, grad_y, selected, flops)
}

/// Back propagation through an explicit row set (top-k, unified batch
/// selection, or the unmasked neurons of an example).
pub fn linear_backward_selected(
    layer: &LinearLayer,
    cache: &ForwardCache,
    grad_y: &[f64],
    selected: IndexSet,
    flops: &mut FlopCounter,
) -> Result<LayerGradients> {
    check_grad(layer, cache, grad_y)?;
    let dw = sparse_outer(grad_y, &cache.x, &selected, flops)?;
    let dx = masked_transpose_matvec(&layer.weight, grad_y, &selected, flops)?;
    let mut db = vec![0.0; grad_y.len()];
    for &i in selected.indices() {
        db[i] = grad_y[i];
    }
    Ok(LayerGradients {
        dw: WeightGrad::Sparse(dw),
        db: db.into(),
        dx,
        selected: Some(selected),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_2x2(w: [[f64; 2]; 2], b: [f64; 2]) -> LinearLayer {
        LinearLayer::new(
            Matrix::from_rows(&[w[0].to_vec(), w[1].to_vec()]).unwrap(),
            b.to_vec(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut f = FlopCounter::new();
        let id = layer_2x2([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        assert_eq!(&*linear_forward(&id, &[3.0, 4.0], &mut f).unwrap().0, &[3.0, 4.0]);
        let l = layer_2x2([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]);
        assert_eq!(&*linear_forward(&l, &[1.0, 1.0], &mut f).unwrap().0, &[4.0, 8.0]);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = LinearLayer::init(6, 4, None, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = linear_forward(&l, &x, &mut FlopCounter::new()).unwrap();
        for i in 0..4 {
            let mut s = l.bias[i];
            for j in 0..6 {
                s += l.weight.get(i, j) * x[j];
            }
            assert!((y[i] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_chain_rule() {
        let l = LinearLayer::new(Matrix::from_vec(1, 1, vec![2.0]).unwrap(), vec![0.0], None)
            .unwrap();
        let mut f = FlopCounter::new();
        let (_, cache) = linear_forward(&l, &[3.0], &mut f).unwrap();
        let g = linear_backward_full(&l, &cache, &[1.0], &mut f).unwrap();
        assert_eq!(g.dw.to_dense().as_slice(), &[3.0]);
        assert_eq!(&*g.dx, &[2.0]);
        let z = linear_backward_full(&l, &cache, &[0.0], &mut f).unwrap();
        assert_eq!(z.dw.to_dense().as_slice(), &[0.0]);
        assert_eq!(&*z.dx, &[0.0]);
        assert_eq!(&*z.db, &[0.0]);
    }

    #[test]
    fn meprop_two_by_two_example() {
        let l = layer_2x2([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        let mut f = FlopCounter::new();
        let (_, cache) = linear_forward(&l, &[1.0, 1.0], &mut f).unwrap();
        let g = linear_backward_meprop(&l, &cache, &[0.1, 0.5], 1, &mut f).unwrap();
        assert_eq!(
            g.dw.to_dense(),
            Matrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap()
        );
        assert_eq!(&*g.db, &[0.0, 0.5]);
        assert_eq!(&*g.dx, &[0.0, 0.5]);
    }

    #[test]
    fn meprop_dominant_entry_scales_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = LinearLayer::init(5, 4, None, &mut rng);
        let mut f = FlopCounter::new();
        let (_, cache) = linear_forward(&l, &[0.2; 5], &mut f).unwrap();
        let grad = [0.01, -3.0, 0.02, 0.001];
        let g = linear_backward_meprop(&l, &cache, &grad, 1, &mut f).unwrap();
        let expected: Vec<f64> = l.weight.row(1).iter().map(|w| w * -3.0).collect();
        assert_eq!(&*g.dx, &expected[..]);
    }

    #[test]
    fn full_k_is_bit_identical_to_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = LinearLayer::init(7, 5, None, &mut rng);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gy: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut f = FlopCounter::new();
        let (_, cache) = linear_forward(&l, &x, &mut f).unwrap();
        let full = linear_backward_full(&l, &cache, &gy, &mut f).unwrap();
        for k in [5, 6, 50] {
            let sp = linear_backward_meprop(&l, &cache, &gy, k, &mut f).unwrap();
            assert_eq!(sp.dw.to_dense(), full.dw.to_dense());
            assert_eq!(sp.db, full.db);
            assert_eq!(sp.dx, full.dx);
        }
    }

    #[test]
    fn shape_errors() {
        let l = layer_2x2([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        let mut f = FlopCounter::new();
        assert!(linear_forward(&l, &[1.0], &mut f).is_err());
        let (_, cache) = linear_forward(&l, &[1.0, 1.0], &mut f).unwrap();
        assert!(linear_backward_full(&l, &cache, &[1.0], &mut f).is_err());
        assert!(linear_backward_meprop(&l, &cache, &[1.0, 2.0], 0, &mut f).is_err());
        assert!(LinearLayer::new(Matrix::zeros(2, 2), vec![0.0], None).is_err());
    }
}
