//! Reverse-mode differentiation over dense arrays, including gradients of
//! gradients (needed by the second-order meta-learning update).

mod array;
mod backward;
mod tape;

pub use array::{Array, Real};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a vector or matrix, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: index {index} out of bounds for {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: no operands")]
    Empty { op: &'static str },
    #[error("shape {shape:?} does not hold {len} values")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("{op}: numeric overflow (non-finite result)")]
    NonFinite { op: &'static str },
    #[error("gradient output must be scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("node is not on this tape")]
    NotOnTape,
    #[error("node {id} does not require gradients")]
    NoGrad { id: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tape<f64>, v: f64) -> Var<f64> {
        t.param(Array::scalar(v))
    }

    #[test]
    fn derivative_of_square() {
        let t = Tape::new();
        let x = scalar(&t, 3.0);
        let y = x.mul(&x).unwrap();
        let g = t.gradient(&y, &[x], false).unwrap();
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let t = Tape::new();
        let x = scalar(&t, 2.0);
        let y = x.mul(&x).unwrap().mul(&x).unwrap();
        let dy = t.gradient(&y, &[x.clone()], true).unwrap();
        assert_eq!(dy[0].item(), 12.0);
        let d2y = t.gradient(&dy[0], &[x], false).unwrap();
        assert_eq!(d2y[0].item(), 12.0);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let t = Tape::new();
        let logits = t.param(Array::from_f64(&[1, 2], &[0.0, 0.0]).unwrap());
        let loss = logits.cross_entropy(&[0], &[1.0]).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-15);
        let g = t.grad_arrays(&loss, &[logits]).unwrap();
        assert_eq!(g[0].data(), &[-0.5, 0.5]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let t = Tape::<f64>::new();
        let x = t.param(Array::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let err = t.gradient(&x, &[x.clone()], false).unwrap_err();
        assert!(matches!(err, AutodiffError::NotScalar { .. }));
    }

    #[test]
    fn foreign_node_is_rejected() {
        let a = Tape::<f64>::new();
        let b = Tape::<f64>::new();
        let x = scalar(&a, 1.0);
        let y = scalar(&b, 1.0);
        let z = x.mul(&x).unwrap();
        assert_eq!(a.gradient(&z, &[y], false).unwrap_err(), AutodiffError::NotOnTape);
    }

    #[test]
    fn constant_has_no_gradient() {
        let t = Tape::new();
        let c = t.constant(Array::scalar(1.0));
        let y = c.mul(&c).unwrap();
        let x = scalar(&t, 1.0);
        let z = y.add(&x).unwrap();
        assert!(matches!(t.gradient(&z, &[c], false), Err(AutodiffError::NoGrad { .. })));
    }

    #[test]
    fn unused_input_gets_zero_gradient() {
        let t = Tape::new();
        let x = scalar(&t, 1.0);
        let unused = t.param(Array::from_f64(&[2], &[1.0, 1.0]).unwrap());
        let y = x.mul(&x).unwrap();
        let g = t.grad_arrays(&y, &[unused]).unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0]);
    }
}
