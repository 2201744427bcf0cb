//! Central-difference checks of every differentiable operator, five random
//! instances each, evaluated in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recnet_tensor::{gradcheck, Conv2dSpec, ConvTranspose2dSpec, Tape, Tensor, BN_EPS};

const TOL: f64 = 1e-4;
const H: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so |x| and PReLU kinks are never crossed by ±h.
fn random_off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces an arbitrary tensor to a scalar with fixed random weights so
/// every output coordinate contributes a distinct gradient.
fn project(tape: &mut Tape<f64>, y: recnet_tensor::Var, seed: u64) -> recnet_tensor::Result<recnet_tensor::Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = random(tape.shape(y), &mut rng);
    let p = tape.constant(probe);
    let prod = tape.mul(y, p)?;
    Ok(tape.sum(prod))
}

fn check<F>(name: &str, instances: impl Fn(u64) -> (Tensor<f64>, F))
where
    F: Fn(&mut Tape<f64>, recnet_tensor::Var) -> recnet_tensor::Result<recnet_tensor::Var>,
{
    for seed in 0..5 {
        let (point, f) = instances(seed);
        let err = gradcheck(f, &point, H).unwrap();
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn square_function_oracle() {
    let err = gradcheck(|t, x| Ok(t.square(x)), &Tensor::scalar(3.0f64), 1e-3).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn constant_function_has_zero_error() {
    let err = gradcheck(
        |t, _x| Ok(t.constant(Tensor::scalar(4.0f64))),
        &Tensor::scalar(1.0f64),
        1e-3,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn gradcheck_conv2d_wrt_input_weight_bias() {
    let spec = Conv2dSpec::new(2, 3, (3, 4), (2, 1));
    check("conv2d/x", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(&spec.weight_shape(), &mut rng);
        let b = random(&[3], &mut rng);
        (random(&[2, 2, 7, 8], &mut rng), move |t: &mut Tape<f64>, x| {
            let w = t.constant(w.clone());
            let b = t.constant(b.clone());
            let y = t.conv2d(x, w, b, spec)?;
            project(t, y, seed + 100)
        })
    });
    check("conv2d/w", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 2, 7, 8], &mut rng);
        (random(&spec.weight_shape(), &mut rng), move |t: &mut Tape<f64>, w| {
            let x = t.constant(x.clone());
            let b = t.constant(Tensor::zeros(&[3]));
            let y = t.conv2d(x, w, b, spec)?;
            project(t, y, seed + 200)
        })
    });
    check("conv2d/b", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 2, 7, 8], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        (random(&[3], &mut rng), move |t: &mut Tape<f64>, b| {
            let x = t.constant(x.clone());
            let w = t.constant(w.clone());
            let y = t.conv2d(x, w, b, spec)?;
            project(t, y, seed + 300)
        })
    });
}

#[test]
fn gradcheck_conv_transpose2d() {
    let spec = ConvTranspose2dSpec::new(3, 2, (2, 3), (2, 1), (7, 9));
    let padded = ConvTranspose2dSpec::new(3, 2, (3, 5), (1, 1), (6, 7)).with_padding((0, 1));
    for spec in [spec, padded] {
        check("convT/x", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(&spec.weight_shape(), &mut rng);
            let b = random(&[2], &mut rng);
            (random(&[2, 3, 3, 5], &mut rng), move |t: &mut Tape<f64>, x| {
                let w = t.constant(w.clone());
                let b = t.constant(b.clone());
                let y = t.conv_transpose2d(x, w, b, spec)?;
                project(t, y, seed + 100)
            })
        });
        check("convT/w", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 3, 3, 5], &mut rng);
            (random(&spec.weight_shape(), &mut rng), move |t: &mut Tape<f64>, w| {
                let x = t.constant(x.clone());
                let b = t.constant(Tensor::zeros(&[2]));
                let y = t.conv_transpose2d(x, w, b, spec)?;
                project(t, y, seed + 200)
            })
        });
        check("convT/b", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[1, 3, 3, 5], &mut rng);
            let w = random(&spec.weight_shape(), &mut rng);
            (random(&[2], &mut rng), move |t: &mut Tape<f64>, b| {
                let x = t.constant(x.clone());
                let w = t.constant(w.clone());
                let y = t.conv_transpose2d(x, w, b, spec)?;
                project(t, y, seed + 300)
            })
        });
    }
}

#[test]
fn gradcheck_batchnorm_train_and_eval() {
    check("bn-train/x", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = random(&[2], &mut rng);
        let beta = random(&[2], &mut rng);
        (random(&[3, 2, 3, 4], &mut rng), move |t: &mut Tape<f64>, x| {
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let (y, _) = t.batch_norm_train(x, g, b, BN_EPS)?;
            project(t, y, seed + 100)
        })
    });
    check("bn-train/gamma", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[3, 2, 3, 4], &mut rng);
        (random(&[2], &mut rng), move |t: &mut Tape<f64>, g| {
            let x = t.constant(x.clone());
            let b = t.constant(Tensor::zeros(&[2]));
            let (y, _) = t.batch_norm_train(x, g, b, BN_EPS)?;
            project(t, y, seed + 200)
        })
    });
    check("bn-train/beta", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[3, 2, 3, 4], &mut rng);
        (random(&[2], &mut rng), move |t: &mut Tape<f64>, b| {
            let x = t.constant(x.clone());
            let g = t.constant(Tensor::full(&[2], 1.5));
            let (y, _) = t.batch_norm_train(x, g, b, BN_EPS)?;
            project(t, y, seed + 300)
        })
    });
    check("bn-eval/x", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = random(&[2], &mut rng);
        (random(&[2, 2, 3, 3], &mut rng), move |t: &mut Tape<f64>, x| {
            let g = t.constant(gamma.clone());
            let b = t.constant(Tensor::zeros(&[2]));
            let y = t.batch_norm_eval(x, g, b, &[0.1, -0.2], &[0.5, 2.0], BN_EPS)?;
            project(t, y, seed + 400)
        })
    });
}

#[test]
fn gradcheck_prelu_wrt_input_and_slope() {
    check("prelu/x", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_off_kink(&[2, 3, 4], &mut rng), move |t: &mut Tape<f64>, x| {
            let a = t.constant(Tensor::full(&[1], 0.25));
            let y = t.prelu(x, a)?;
            project(t, y, seed + 100)
        })
    });
    check("prelu/a", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_off_kink(&[2, 3, 4], &mut rng);
        (Tensor::full(&[1], rng.random_range(0.0..0.5)), move |t: &mut Tape<f64>, a| {
            let x = t.constant(x.clone());
            let y = t.prelu(x, a)?;
            project(t, y, seed + 200)
        })
    });
}

#[test]
fn gradcheck_dense() {
    check("dense/x", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(&[3, 5], &mut rng);
        let b = random(&[3], &mut rng);
        (random(&[4, 5], &mut rng), move |t: &mut Tape<f64>, x| {
            let w = t.constant(w.clone());
            let b = t.constant(b.clone());
            let y = t.linear(x, w, b)?;
            project(t, y, seed + 100)
        })
    });
    check("dense/w", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[4, 5], &mut rng);
        (random(&[3, 5], &mut rng), move |t: &mut Tape<f64>, w| {
            let x = t.constant(x.clone());
            let b = t.constant(Tensor::zeros(&[3]));
            let y = t.linear(x, w, b)?;
            project(t, y, seed + 200)
        })
    });
    check("dense/b", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[4, 5], &mut rng);
        let w = random(&[3, 5], &mut rng);
        (random(&[3], &mut rng), move |t: &mut Tape<f64>, b| {
            let x = t.constant(x.clone());
            let w = t.constant(w.clone());
            let y = t.linear(x, w, b)?;
            project(t, y, seed + 300)
        })
    });
}

#[test]
fn gradcheck_elementwise_and_reductions() {
    check("sigmoid", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random(&[3, 4], &mut rng).map(|v| v * 4.0), move |t: &mut Tape<f64>, x| {
            let y = t.sigmoid(x);
            project(t, y, seed + 1)
        })
    });
    check("square-mean", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random(&[3, 4], &mut rng), |t: &mut Tape<f64>, x| {
            let y = t.square(x);
            Ok(t.mean(y))
        })
    });
    check("abs-sum", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_off_kink(&[3, 4], &mut rng), |t: &mut Tape<f64>, x| {
            let y = t.abs(x);
            Ok(t.sum(y))
        })
    });
    check("add-sub-scale-reshape", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let other = random(&[2, 6], &mut rng);
        (random(&[2, 6], &mut rng), move |t: &mut Tape<f64>, x| {
            let o = t.constant(other.clone());
            let a = t.add(x, o)?;
            let s = t.sub(a, x)?;
            let s = t.add(s, x)?;
            let s = t.scale(s, -1.5);
            let s = t.reshape(s, &[3, 4])?;
            let sq = t.mul(s, s)?;
            Ok(t.sum(sq))
        })
    });
}

#[test]
fn gradcheck_image_gradients() {
    check("grad_u", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random(&[2, 1, 4, 5], &mut rng), move |t: &mut Tape<f64>, x| {
            let y = t.grad_u(x)?;
            project(t, y, seed + 10)
        })
    });
    check("grad_v", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random(&[2, 1, 4, 5], &mut rng), move |t: &mut Tape<f64>, x| {
            let y = t.grad_v(x)?;
            project(t, y, seed + 20)
        })
    });
}

#[test]
fn gradcheck_conv_prelu_composite() {
    // 1x6x9 input through conv + PReLU
    let spec = Conv2dSpec::new(1, 2, (3, 3), (1, 2));
    check("conv+prelu", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 40);
        let w = random(&spec.weight_shape(), &mut rng);
        let b = random(&[2], &mut rng);
        (random(&[1, 6, 9], &mut rng), move |t: &mut Tape<f64>, x| {
            let w = t.constant(w.clone());
            let b = t.constant(b.clone());
            let y = t.conv2d(x, w, b, spec)?;
            let a = t.constant(Tensor::full(&[1], 0.25));
            let y = t.prelu(y, a)?;
            project(t, y, seed + 50)
        })
    });
}
