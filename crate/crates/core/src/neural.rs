//! Max-Feature-Map activation and 2x2 stride-2 max pooling, with backward
//! passes. Tensors are stored channels-first: (channels, height, width).

use ndarray::{s, Array3, Zip};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NeuralError {
    #[error("MFM needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("pooling needs height and width of at least 2, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("invalid tensor: {0}")]
    Invalid(&'static str),
}

/// Channels x height x width feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    values: Array3<f64>,
}

impl Tensor3 {
    pub fn new(values: Array3<f64>) -> Result<Self, NeuralError> {
        let (c, h, w) = values.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(NeuralError::Invalid("every dimension must be at least 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::Invalid("non-finite value"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

fn halves(x: &Tensor3) -> Result<usize, NeuralError> {
    let c = x.values.dim().0;
    if c % 2 == 1 {
        return Err(NeuralError::OddChannels(c));
    }
    Ok(c / 2)
}

/// `out[c] = max(x[c], x[c + k])` for the 2k input channels.
pub fn mfm(x: &Tensor3) -> Result<Tensor3, NeuralError> {
    let k = halves(x)?;
    let a = x.values.slice(s![..k, .., ..]);
    let b = x.values.slice(s![k.., .., ..]);
    let out = Zip::from(&a).and(&b).map_collect(|&p, &q| if q > p { q } else { p });
    Ok(Tensor3 { values: out })
}

/// Gradient of `sum(upstream * mfm(x))` with respect to `x`. Each upstream
/// value goes to the winning half; ties go to the first half.
pub fn mfm_backward(x: &Tensor3, upstream: &Tensor3) -> Result<Tensor3, NeuralError> {
    let k = halves(x)?;
    let (c, h, w) = x.shape();
    if upstream.shape() != (k, h, w) {
        return Err(NeuralError::Shape {
            expected: (k, h, w),
            got: upstream.shape(),
        });
    }
    let mut grad = Array3::zeros((c, h, w));
    for ch in 0..k {
        for i in 0..h {
            for j in 0..w {
                let g = upstream.values[[ch, i, j]];
                if x.values[[ch + k, i, j]] > x.values[[ch, i, j]] {
                    grad[[ch + k, i, j]] = g;
                } else {
                    grad[[ch, i, j]] = g;
                }
            }
        }
    }
    Ok(Tensor3 { values: grad })
}

fn pool_dims(x: &Tensor3) -> Result<(usize, usize, usize), NeuralError> {
    let (c, h, w) = x.shape();
    if h < 2 || w < 2 {
        return Err(NeuralError::TooSmall(h, w));
    }
    Ok((c, h / 2, w / 2))
}

/// Position of the maximum in the 2x2 window at (2i, 2j); the first in
/// row-major order wins ties.
fn window_argmax(x: &Array3<f64>, ch: usize, i: usize, j: usize) -> (usize, usize) {
    let mut best = (2 * i, 2 * j);
    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
        let cand = (2 * i + di, 2 * j + dj);
        if x[[ch, cand.0, cand.1]] > x[[ch, best.0, best.1]] {
            best = cand;
        }
    }
    best
}

/// Non-overlapping 2x2 max per channel; an odd trailing row or column is dropped.
pub fn max_pool_2x2(x: &Tensor3) -> Result<Tensor3, NeuralError> {
    let (c, ho, wo) = pool_dims(x)?;
    let out = Array3::from_shape_fn((c, ho, wo), |(ch, i, j)| {
        let (a, b) = window_argmax(&x.values, ch, i, j);
        x.values[[ch, a, b]]
    });
    Ok(Tensor3 { values: out })
}

/// Gradient of `sum(upstream * max_pool_2x2(x))`; each window's gradient goes
/// to its (first) maximum.
pub fn max_pool_2x2_backward(x: &Tensor3, upstream: &Tensor3) -> Result<Tensor3, NeuralError> {
    let dims = pool_dims(x)?;
    if upstream.shape() != dims {
        return Err(NeuralError::Shape {
            expected: dims,
            got: upstream.shape(),
        });
    }
    let mut grad = Array3::zeros(x.shape());
    for ((ch, i, j), &g) in upstream.values.indexed_iter() {
        let (a, b) = window_argmax(&x.values, ch, i, j);
        grad[[ch, a, b]] += g;
    }
    Ok(Tensor3 { values: grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
        Tensor3::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn mfm_examples() {
        let x = Tensor3::new(array![[[1.0, 2.0]], [[3.0, 0.0]]]).unwrap();
        assert_eq!(mfm(&x).unwrap().values(), &array![[[3.0, 2.0]]]);
        let same = Tensor3::new(array![[[1.5, -2.0]], [[1.5, -2.0]]]).unwrap();
        assert_eq!(mfm(&same).unwrap().values(), &array![[[1.5, -2.0]]]);
        let odd = Tensor3::new(Array3::zeros((3, 1, 1))).unwrap();
        assert_eq!(mfm(&odd), Err(NeuralError::OddChannels(3)));
    }

    #[test]
    fn mfm_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 8, 5, 7);
        let y = mfm(&x).unwrap();
        for c in 0..4 {
            for i in 0..5 {
                for j in 0..7 {
                    let (a, b) = (x.values()[[c, i, j]], x.values()[[c + 4, i, j]]);
                    assert_eq!(y.values()[[c, i, j]], if a >= b { a } else { b });
                }
            }
        }
    }

    #[test]
    fn mfm_gradient_routing() {
        let x = Tensor3::new(array![[[5.0, 1.0]], [[1.0, 1.0]]]).unwrap();
        let up = Tensor3::new(array![[[2.0, 3.0]]]).unwrap();
        let g = mfm_backward(&x, &up).unwrap();
        // second element is a tie: first half takes it
        assert_eq!(g.values(), &array![[[2.0, 3.0]], [[0.0, 0.0]]]);
    }

    #[test]
    fn mfm_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 6, 4, 5);
        let up = random(&mut rng, 3, 4, 5);
        let loss = |t: &Array3<f64>| -> f64 {
            let y = mfm(&Tensor3::new(t.clone()).unwrap()).unwrap();
            (y.values() * up.values()).sum()
        };
        let g = mfm_backward(&x, &up).unwrap();
        let h = 1e-5;
        for idx in ndarray::indices(x.shape()) {
            let (c, i, j) = idx;
            let other = if c < 3 { c + 3 } else { c - 3 };
            if (x.values()[[c, i, j]] - x.values()[[other, i, j]]).abs() < 10.0 * h {
                continue;
            }
            let mut p = x.values().clone();
            p[[c, i, j]] += h;
            let mut m = x.values().clone();
            m[[c, i, j]] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let an = g.values()[[c, i, j]];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(fd.abs()).max(1e-12) + 1e-10);
        }
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor3::new(array![[[1.0, 2.0], [3.0, 4.0]]]).unwrap();
        assert_eq!(max_pool_2x2(&x).unwrap().values(), &array![[[4.0]]]);
        let c = Tensor3::new(Array3::from_elem((2, 5, 6), 0.25)).unwrap();
        assert_eq!(max_pool_2x2(&c).unwrap().values(), &Array3::from_elem((2, 2, 3), 0.25));
        let thin = Tensor3::new(Array3::zeros((1, 1, 4))).unwrap();
        assert_eq!(max_pool_2x2(&thin), Err(NeuralError::TooSmall(1, 4)));
    }

    #[test]
    fn pooling_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 3, 8, 10);
        let y = max_pool_2x2(&x).unwrap();
        assert_eq!(y.shape(), (3, 4, 5));
        for c in 0..3 {
            for i in 0..4 {
                for j in 0..5 {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..2 {
                        for b in 0..2 {
                            m = m.max(x.values()[[c, 2 * i + a, 2 * j + b]]);
                        }
                    }
                    assert_eq!(y.values()[[c, i, j]], m);
                }
            }
        }
    }

    #[test]
    fn pooling_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 2, 6, 7);
        let up = random(&mut rng, 2, 3, 3);
        let g = max_pool_2x2_backward(&x, &up).unwrap();
        let loss = |t: &Array3<f64>| {
            (max_pool_2x2(&Tensor3::new(t.clone()).unwrap()).unwrap().values() * up.values()).sum()
        };
        let h = 1e-6;
        for idx in ndarray::indices(x.shape()) {
            let mut p = x.values().clone();
            p[idx] += h;
            let mut m = x.values().clone();
            m[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g.values()[idx]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn mfm_dominates_and_scales(
            vals in proptest::collection::vec(-10.0f64..10.0, 24),
            alpha in 0.0f64..5.0,
        ) {
            let x = Tensor3::new(Array3::from_shape_vec((4, 2, 3), vals).unwrap()).unwrap();
            let y = mfm(&x).unwrap();
            for ((c, i, j), &v) in y.values().indexed_iter() {
                let (a, b) = (x.values()[[c, i, j]], x.values()[[c + 2, i, j]]);
                prop_assert!(v >= a && v >= b && (v == a || v == b));
            }
            let scaled = mfm(&Tensor3::new(x.values() * alpha).unwrap()).unwrap();
            let expected = y.values() * alpha;
            prop_assert_eq!(scaled.values(), &expected);
        }
    }
}
