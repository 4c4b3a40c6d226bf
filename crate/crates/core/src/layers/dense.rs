use crate::error::{Error, Result};
use crate::layers::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Real, Shape4, Tensor};

fn check<T: Real>(input: Shape4, weights: &Tensor<T>, bias: &[T]) -> Result<(usize, usize)> {
    let ws = weights.shape();
    if input.h != 1 || input.w != 1 {
        return Err(Error::Shape(format!("dense input {input} is not flattened")));
    }
    if ws.c != input.c || ws.h != 1 || ws.w != 1 {
        return Err(Error::Shape(format!(
            "dense weights {ws} do not accept {} input features",
            input.c
        )));
    }
    if bias.len() != ws.n {
        return Err(Error::Shape(format!(
            "dense bias length {} vs {} units",
            bias.len(),
            ws.n
        )));
    }
    Ok((ws.c, ws.n))
}

/// `out = W·x + b` per batch item. `weights` has shape `(units, features, 1, 1)`
/// and the input `(n, features, 1, 1)`.
pub fn dense_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let s = input.shape();
    let (features, units) = check(s, weights, bias)?;
    let mut out = Tensor::zeros(Shape4::of(s.n, units, 1, 1));
    for row in out.data_mut().chunks_exact_mut(units) {
        row.copy_from_slice(bias);
    }
    gemm_nt(s.n, units, features, input.data(), weights.data(), out.data_mut());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    upstream: &Tensor<T>,
    need_input_grad: bool,
) -> Result<DenseGrads<T>> {
    let s = input.shape();
    let (features, units) = check(s, weights, bias)?;
    if upstream.shape() != Shape4::of(s.n, units, 1, 1) {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match dense output ({}, {units}, 1, 1)",
            upstream.shape(),
            s.n
        )));
    }
    let mut dw = Tensor::zeros(weights.shape());
    gemm_tn(units, features, s.n, upstream.data(), input.data(), dw.data_mut());
    let mut db = vec![T::zero(); units];
    for row in upstream.data().chunks_exact(units) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    let dx = need_input_grad.then(|| {
        let mut dx = Tensor::zeros(s);
        gemm_nn(s.n, features, units, upstream.data(), weights.data(), dx.data_mut());
        dx
    });
    Ok(DenseGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn identity_weights() {
        let mut rng = SeededRng::new(1);
        let x = Tensor::<f64>::uniform(Shape4::of(2, 3, 1, 1), -1.0, 1.0, &mut rng);
        let w = Tensor::from_fn(Shape4::of(3, 3, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        assert_eq!(dense_forward(&x, &w, &[0.0; 3]).unwrap(), x);

        let up = Tensor::<f64>::uniform(Shape4::of(2, 3, 1, 1), -1.0, 1.0, &mut rng);
        let g = dense_backward(&x, &w, &[0.0; 3], &up, true).unwrap();
        assert_eq!(g.input.unwrap(), up);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let x = Tensor::<f64>::filled(Shape4::of(4, 5, 1, 1), 3.0);
        let w = Tensor::zeros(Shape4::of(3, 5, 1, 1));
        let y = dense_forward(&x, &w, &[1.0, 2.0, 3.0]).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn random_layer_matches_hand_product() {
        let mut rng = SeededRng::new(7);
        let x = Tensor::<f64>::uniform(Shape4::of(2, 4, 1, 1), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(Shape4::of(3, 4, 1, 1), -1.0, 1.0, &mut rng);
        let b = [0.1, -0.2, 0.3];
        let y = dense_forward(&x, &w, &b).unwrap();
        for n in 0..2 {
            for o in 0..3 {
                let mut acc = b[o];
                for i in 0..4 {
                    acc += w.at(o, i, 0, 0) * x.at(n, i, 0, 0);
                }
                assert!((y.at(n, o, 0, 0) - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unflattened_input_rejected() {
        let x = Tensor::<f64>::zeros(Shape4::of(1, 4, 2, 1));
        let w = Tensor::zeros(Shape4::of(3, 4, 1, 1));
        assert!(dense_forward(&x, &w, &[0.0; 3]).is_err());
        let x = Tensor::<f64>::zeros(Shape4::of(1, 5, 1, 1));
        assert!(dense_forward(&x, &w, &[0.0; 3]).is_err());
    }
}
