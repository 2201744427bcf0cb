use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recnet::losses::{
    loss_grad, loss_mse, loss_pr, similarity_from_distance, target_similarity, total_loss, total_term, LossConfig,
    LossReport,
};
use recnet::Pose;
use recnet_tensor::{gradcheck, Tape, Tensor};

fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

/// Direct loop evaluation used as the reference.
fn grad_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                s += ((a[i + 1] - a[i]) - (b[i + 1] - b[i])).abs();
            }
            if r + 1 < h {
                s += ((a[i + w] - a[i]) - (b[i + w] - b[i])).abs();
            }
        }
    }
    s / (h * w) as f64
}

#[test]
fn mse_examples() {
    let z = t(&[1, 2, 2], &[0.0; 4]);
    assert_eq!(loss_mse(&z, &z).unwrap(), 0.0);
    assert_eq!(loss_mse(&z, &t(&[1, 2, 2], &[1.0; 4])).unwrap(), 1.0);
    assert_eq!(loss_mse(&t(&[1, 1, 1], &[2.0]), &t(&[1, 1, 1], &[5.0])).unwrap(), 9.0);
    assert!(loss_mse(&z, &t(&[1, 1, 4], &[0.0; 4])).is_err());
}

#[test]
fn gradient_loss_examples() {
    let a = t(&[1, 3, 4], &[1.0, 2.0, 4.0, 0.0, 3.0, 3.0, 1.0, 2.0, 5.0, 0.0, 1.0, 1.0]);
    assert_eq!(loss_grad(&a, &a).unwrap(), 0.0);
    let zeros = t(&[1, 3, 3], &[0.0; 9]);
    assert_eq!(loss_grad(&zeros, &t(&[1, 3, 3], &[5.0; 9])).unwrap(), 0.0);
    let i = t(&[1, 2, 2], &[0.0, 0.0, 0.0, 0.0]);
    let ihat = t(&[1, 2, 2], &[0.0, 1.0, 0.0, 1.0]);
    assert_eq!(loss_grad(&i, &ihat).unwrap(), 0.5);
    assert!(loss_grad(&t(&[1, 1, 4], &[0.0; 4]), &t(&[1, 1, 4], &[0.0; 4])).is_err());
}

#[test]
fn gradient_loss_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let (h, w) = (rng.random_range(2..7), rng.random_range(2..9));
        let a: Vec<f32> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = loss_grad(&t(&[1, h, w], &a), &t(&[1, h, w], &b)).unwrap();
        let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let want = grad_oracle(&to64(&a), &to64(&b), h, w);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn similarity_examples() {
    let p = Pose::identity();
    assert_eq!(target_similarity(&p, &p, 10.0), 1.0);
    let q = Pose::from_yaw(0.7, [6.0, 8.0, 0.0]);
    assert!((target_similarity(&p, &q, 10.0) - 0.36787944).abs() < 1e-8);
    assert!(similarity_from_distance(3.0, 10.0) > similarity_from_distance(5.0, 10.0));
    assert!(similarity_from_distance(4.0, 12.0) > similarity_from_distance(4.0, 10.0));
}

#[test]
fn pr_examples() {
    assert_eq!(loss_pr(0.4, 0.4), 0.0);
    assert_eq!(loss_pr(1.0, 0.0), 1.0);
    assert!((loss_pr(0.6, 0.35) - 0.0625).abs() < 1e-15);
}

#[test]
fn total_combines_components() {
    let i = t(&[1, 2, 3], &[1.0, 2.0, 3.0, 2.0, 2.0, 0.5]);
    let ihat = t(&[1, 2, 3], &[1.5, 2.0, 2.0, 2.5, 1.0, 0.0]);
    let (p1, p2) = (Pose::identity(), Pose::from_yaw(0.0, [3.0, 4.0, 0.0]));
    let c = 0.2;
    let base = total_loss(&i, &ihat, &p1, &p2, c, &LossConfig::default()).unwrap();
    let cfg = |alpha, lambda_grad| LossConfig { alpha, lambda_grad, m: 10.0 };

    let rec_only = total_loss(&i, &ihat, &p1, &p2, c, &cfg(0.0, 1.0)).unwrap();
    assert_eq!(rec_only.total, base.l_mse + base.l_grad);
    let mse_only = total_loss(&i, &ihat, &p1, &p2, c, &cfg(0.0, 0.0)).unwrap();
    assert_eq!(mse_only.total, base.l_mse);

    let r2 = total_loss(&i, &ihat, &p1, &p2, c, &cfg(2.0, 3.0)).unwrap();
    assert!((r2.total - (base.l_mse + 3.0 * base.l_grad + 2.0 * base.l_pr)).abs() < 1e-12);

    let exact = total_loss(&i, &i, &p1, &p2, (-0.5f64).exp(), &LossConfig::default()).unwrap();
    assert_eq!(exact.total, 0.0);
    assert!(total_loss(&i, &ihat, &p1, &p2, c, &LossConfig { m: 0.0, ..LossConfig::default() }).is_err());
}

#[test]
fn csv_row_layout() {
    assert_eq!(LossReport::csv_header(), "step,l_mse,l_grad,l_pr,total");
    let r = LossReport { l_mse: 0.5, l_grad: 0.25, l_pr: 1.0, total: 1.75 };
    assert_eq!(r.csv_row(3), "3,0.5,0.25,1,1.75");
    assert_eq!(LossReport { l_pr: f64::NAN, ..r }.non_finite_component(), Some("l_pr"));
}

#[test]
fn total_loss_gradcheck() {
    let cfg = LossConfig { alpha: 0.7, lambda_grad: 1.3, m: 10.0 };
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Tensor::<f64>::from_fn(&[2, 1, 4, 5], |_| rng.random_range(0.0..1.0));
        let recon = Tensor::<f64>::from_fn(&[2, 1, 4, 5], |_| rng.random_range(0.0..1.0));
        let c = Tensor::<f64>::from_fn(&[2], |_| rng.random_range(0.0..1.0));
        let c_hat = Tensor::<f64>::from_fn(&[2], |_| rng.random_range(0.05..0.95));

        let err = gradcheck(
            |tape: &mut Tape<f64>, x| {
                let i = tape.constant(image.clone());
                let ct = tape.constant(c.clone());
                let ch = tape.constant(c_hat.clone());
                Ok(total_term(tape, i, x, ct, ch, &cfg).unwrap().total)
            },
            &recon,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "recon seed {seed}: {err}");

        let err = gradcheck(
            |tape: &mut Tape<f64>, x| {
                let i = tape.constant(image.clone());
                let r = tape.constant(recon.clone());
                let ct = tape.constant(c.clone());
                Ok(total_term(tape, i, r, ct, x, &cfg).unwrap().total)
            },
            &c_hat,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "similarity seed {seed}: {err}");
    }
}
