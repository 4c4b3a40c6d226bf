use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

/// What the backward pass needs from a pooling forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Shape4,
    pub mode: PoolMode,
    pub window: usize,
    pub stride: usize,
    /// For max pooling, the flat input offset of each output's maximum.
    pub argmax: Vec<usize>,
}

fn pooled_extent(input: Shape4, window: usize, stride: usize) -> Result<(usize, usize)> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be ≥ 1".into()));
    }
    if window > input.h || window > input.w {
        return Err(Error::Shape(format!(
            "pool window {window} larger than input {input}"
        )));
    }
    Ok(((input.h - window) / stride + 1, (input.w - window) / stride + 1))
}

/// Max or average pooling over `window × window` cells every `stride` cells.
/// Ties in max pooling resolve to the first cell in row-major scan order.
pub fn pool2d<T: Real>(
    input: &Tensor<T>,
    mode: PoolMode,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    let s = input.shape();
    let (oh, ow) = pooled_extent(s, window, stride)?;
    let out_shape = Shape4::of(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(if mode == PoolMode::Max { out_shape.len() } else { 0 });
    let data = input.data();
    let inv = T::one() / T::lit((window * window) as f64);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.offset(n, c, 0, 0);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * stride, ox * stride);
                    match mode {
                        PoolMode::Max => {
                            let mut best = base + y0 * s.w + x0;
                            for y in y0..y0 + window {
                                for x in x0..x0 + window {
                                    let o = base + y * s.w + x;
                                    if data[o] > data[best] {
                                        best = o;
                                    }
                                }
                            }
                            out.push(data[best]);
                            argmax.push(best);
                        }
                        PoolMode::Avg => {
                            let mut acc = T::zero();
                            for y in y0..y0 + window {
                                let row = base + y * s.w;
                                for x in x0..x0 + window {
                                    acc += data[row + x];
                                }
                            }
                            out.push(acc * inv);
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(out_shape, out)?,
        PoolIndices {
            input_shape: s,
            mode,
            window,
            stride,
            argmax,
        },
    ))
}

/// Max pooling routes each upstream value to its recorded argmax; average
/// pooling spreads it evenly over the window.
pub fn pool2d_backward<T: Real>(upstream: &Tensor<T>, idx: &PoolIndices) -> Result<Tensor<T>> {
    let s = idx.input_shape;
    let (oh, ow) = pooled_extent(s, idx.window, idx.stride)?;
    let expected = Shape4::of(s.n, s.c, oh, ow);
    if upstream.shape() != expected {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match pool output {expected}",
            upstream.shape()
        )));
    }
    let mut dx = Tensor::zeros(s);
    match idx.mode {
        PoolMode::Max => {
            if idx.argmax.len() != upstream.len() {
                return Err(Error::State("max-pool backward without cached argmax".into()));
            }
            let d = dx.data_mut();
            for (&g, &o) in upstream.data().iter().zip(&idx.argmax) {
                d[o] += g;
            }
        }
        PoolMode::Avg => {
            let inv = T::one() / T::lit((idx.window * idx.window) as f64);
            let up = upstream.data();
            let d = dx.data_mut();
            let mut k = 0;
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = s.offset(n, c, 0, 0);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = up[k] * inv;
                            k += 1;
                            for y in oy * idx.stride..oy * idx.stride + idx.window {
                                for x in ox * idx.stride..ox * idx.stride + idx.window {
                                    d[base + y * s.w + x] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn square() -> Tensor<f64> {
        Tensor::from_vec(Shape4::of(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn max_and_avg_of_two_by_two() {
        let (m, idx) = pool2d(&square(), PoolMode::Max, 2, 2).unwrap();
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
        let (a, _) = pool2d(&square(), PoolMode::Avg, 2, 2).unwrap();
        assert_eq!(a.data(), &[2.5]);
    }

    #[test]
    fn window_larger_than_input() {
        assert!(pool2d(&square(), PoolMode::Max, 3, 1).is_err());
    }

    #[test]
    fn max_backward_routes_to_argmax() {
        let (_, idx) = pool2d(&square(), PoolMode::Max, 2, 2).unwrap();
        let up = Tensor::from_vec(Shape4::of(1, 1, 1, 1), vec![7.0]).unwrap();
        assert_eq!(pool2d_backward(&up, &idx).unwrap().data(), &[0.0, 0.0, 0.0, 7.0]);
    }

    #[test]
    fn matches_brute_force_window_scan() {
        let mut rng = SeededRng::new(21);
        let x = Tensor::<f64>::uniform(Shape4::of(1, 2, 8, 8), -1.0, 1.0, &mut rng);
        let (mx, _) = pool2d(&x, PoolMode::Max, 2, 2).unwrap();
        let (av, _) = pool2d(&x, PoolMode::Avg, 2, 2).unwrap();
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let cells = [
                        x.at(0, c, 2 * oy, 2 * ox),
                        x.at(0, c, 2 * oy, 2 * ox + 1),
                        x.at(0, c, 2 * oy + 1, 2 * ox),
                        x.at(0, c, 2 * oy + 1, 2 * ox + 1),
                    ];
                    let m = cells.iter().cloned().fold(f64::MIN, f64::max);
                    let a = cells.iter().sum::<f64>() / 4.0;
                    assert_eq!(mx.at(0, c, oy, ox), m);
                    assert!((av.at(0, c, oy, ox) - a).abs() < 1e-15);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn avg_never_exceeds_max_on_nonnegative(seed: u64, window in 1usize..4, stride in 1usize..3) {
            let mut rng = SeededRng::new(seed);
            let x = Tensor::<f64>::uniform(Shape4::of(2, 2, 7, 7), 0.0, 5.0, &mut rng);
            let (mx, _) = pool2d(&x, PoolMode::Max, window, stride).unwrap();
            let (av, _) = pool2d(&x, PoolMode::Avg, window, stride).unwrap();
            for (a, m) in av.data().iter().zip(mx.data()) {
                prop_assert!(a <= m);
            }
        }
    }
}
