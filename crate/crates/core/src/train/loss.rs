use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Mean squared error over all elements.
pub fn mse_loss<T: Scalar>(tape: &Tape<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "mse_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(&diff)?;
    tape.mean(&sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn hand_cases() {
        let tape = Tape::new();
        let pred = tape.param(Tensor::<f64>::from_f64([2], &[0., 1.]).unwrap());
        let gt = tape.constant(Tensor::from_f64([2], &[1., 1.]).unwrap());
        let loss = mse_loss(&tape, &pred, &gt).unwrap();
        assert_eq!(loss.value().item().unwrap(), 0.5);
        let same = mse_loss(&tape, &gt, &gt).unwrap();
        assert_eq!(same.value().item().unwrap(), 0.0);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&pred).data(), &[-1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2]));
        let b = tape.constant(Tensor::zeros([3]));
        assert!(mse_loss(&tape, &a, &b).is_err());
    }
}
