use gaitrt_core::resnet::{BatchNorm, Conv1d, Dense, Mode, ResNetArch, ResNetModel, Tensor3};
use gaitrt_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const SEEDS: u64 = 10;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn random_tensor(rng: &mut ChaCha8Rng, b: usize, t: usize, c: usize) -> Tensor3 {
    Tensor3::from_vec(
        b,
        t,
        c,
        (0..b * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn central_diff(f: &mut dyn FnMut(f64) -> f64, x0: f64) -> f64 {
    (f(x0 + H) - f(x0 - H)) / (2.0 * H)
}

fn sum_sq(t: &Tensor3) -> f64 {
    t.as_slice().iter().map(|v| v * v).sum()
}

#[test]
fn conv1d_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(11 + seed);
        for &(k, cin, cout, stride, pad, t) in &[
            (3, 2, 3, 1, 1, 7),
            (2, 3, 2, 2, 0, 9),
            (1, 4, 4, 1, 0, 5),
            (5, 1, 2, 3, 2, 11),
        ] {
            let mut conv = Conv1d::zeros(k, cin, cout, stride, pad);
            conv.weight = random_vec(&mut rng, k * cin * cout);
            conv.bias = random_vec(&mut rng, cout);
            let x = random_tensor(&mut rng, 2, t, cin);
            let y = conv.forward(&x).unwrap();
            let dy = Tensor3::from_vec(
                y.batch(),
                y.time(),
                y.channels(),
                y.as_slice().iter().map(|v| 2.0 * v).collect(),
            )
            .unwrap();
            let mut grad = Conv1d::zeros(k, cin, cout, stride, pad);
            let dx = conv.backward(&x, &dy, &mut grad).unwrap();

            let mut worst: f64 = 0.0;
            for i in 0..x.as_slice().len() {
                let mut f = |v: f64| {
                    let mut xp = x.clone();
                    xp.as_mut_slice()[i] = v;
                    sum_sq(&conv.forward(&xp).unwrap())
                };
                worst = worst.max(rel_err(
                    dx.as_slice()[i],
                    central_diff(&mut f, x.as_slice()[i]),
                ));
            }
            for i in 0..conv.weight.len() {
                let mut f = |v: f64| {
                    let mut c = conv.clone();
                    c.weight[i] = v;
                    sum_sq(&c.forward(&x).unwrap())
                };
                worst = worst.max(rel_err(
                    grad.weight[i],
                    central_diff(&mut f, conv.weight[i]),
                ));
            }
            for i in 0..cout {
                let mut f = |v: f64| {
                    let mut c = conv.clone();
                    c.bias[i] = v;
                    sum_sq(&c.forward(&x).unwrap())
                };
                worst = worst.max(rel_err(grad.bias[i], central_diff(&mut f, conv.bias[i])));
            }
            assert!(
                worst < 1e-5,
                "seed {seed} conv {k}/{cin}/{cout}/{stride}/{pad}: max relative error {worst:e}"
            );
        }
    }
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(5 + seed);
        for &(b, t, c) in &[(2, 5, 3), (4, 3, 1), (1, 8, 2)] {
            let mut bn = BatchNorm::new(c);
            bn.gamma = random_vec(&mut rng, c);
            bn.beta = random_vec(&mut rng, c);
            let x = random_tensor(&mut rng, b, t, c);
            let r = random_tensor(&mut rng, b, t, c);
            let weighted = |y: &Tensor3| -> f64 {
                y.as_slice()
                    .iter()
                    .zip(r.as_slice())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (_, cache) = bn.forward_train(&x).unwrap();
            let mut grad = BatchNorm::new(c);
            grad.gamma.fill(0.0);
            grad.beta.fill(0.0);
            let dx = bn.backward(&cache, &r, &mut grad).unwrap();

            let mut worst: f64 = 0.0;
            for i in 0..x.as_slice().len() {
                let mut f = |v: f64| {
                    let mut xp = x.clone();
                    xp.as_mut_slice()[i] = v;
                    weighted(&bn.forward_train(&xp).unwrap().0)
                };
                worst = worst.max(rel_err(
                    dx.as_slice()[i],
                    central_diff(&mut f, x.as_slice()[i]),
                ));
            }
            for i in 0..c {
                let mut f = |v: f64| {
                    let mut p = bn.clone();
                    p.gamma[i] = v;
                    weighted(&p.forward_train(&x).unwrap().0)
                };
                worst = worst.max(rel_err(grad.gamma[i], central_diff(&mut f, bn.gamma[i])));
                let mut f = |v: f64| {
                    let mut p = bn.clone();
                    p.beta[i] = v;
                    weighted(&p.forward_train(&x).unwrap().0)
                };
                worst = worst.max(rel_err(grad.beta[i], central_diff(&mut f, bn.beta[i])));
            }
            assert!(
                worst < 1e-5,
                "seed {seed} batch norm ({b},{t},{c}): max relative error {worst:e}"
            );
        }
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(31 + seed);
        let (n_in, n_out, rows) = (5, 3, 4);
        let mut dense = Dense::zeros(n_in, n_out);
        dense.weight = random_vec(&mut rng, n_in * n_out);
        dense.bias = random_vec(&mut rng, n_out);
        let x = Matrix::from_vec(rows, n_in, random_vec(&mut rng, rows * n_in));
        let sq = |m: &Matrix| -> f64 { m.as_slice().iter().map(|v| v * v).sum() };
        let y = dense.forward(&x).unwrap();
        let dy = Matrix::from_vec(rows, n_out, y.as_slice().iter().map(|v| 2.0 * v).collect());
        let mut grad = Dense::zeros(n_in, n_out);
        let dx = dense.backward(&x, &dy, &mut grad);

        let mut worst: f64 = 0.0;
        for i in 0..rows * n_in {
            let mut f = |v: f64| {
                let mut xp = x.clone();
                xp.as_mut_slice()[i] = v;
                sq(&dense.forward(&xp).unwrap())
            };
            worst = worst.max(rel_err(
                dx.as_slice()[i],
                central_diff(&mut f, x.as_slice()[i]),
            ));
        }
        for i in 0..dense.weight.len() {
            let mut f = |v: f64| {
                let mut d = dense.clone();
                d.weight[i] = v;
                sq(&d.forward(&x).unwrap())
            };
            worst = worst.max(rel_err(
                grad.weight[i],
                central_diff(&mut f, dense.weight[i]),
            ));
        }
        for i in 0..n_out {
            let mut f = |v: f64| {
                let mut d = dense.clone();
                d.bias[i] = v;
                sq(&d.forward(&x).unwrap())
            };
            worst = worst.max(rel_err(grad.bias[i], central_diff(&mut f, dense.bias[i])));
        }
        assert!(
            worst < 1e-5,
            "seed {seed} dense: max relative error {worst:e}"
        );
    }
}

fn small_arch() -> ResNetArch {
    ResNetArch {
        n_in: 3,
        n_out: 2,
        window: 10,
        stem_kernel: 3,
        stem_stride: 1,
        stem_channels: 4,
        block_channels: vec![4, 6, 6, 5],
        kernel: 3,
        dense: 7,
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let arch = small_arch();
        let mut model = ResNetModel::init(&arch, 21 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(8 + seed);
        for p in model.params_mut() {
            for v in p.iter_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.2..0.2);
                }
            }
        }
        let x = random_tensor(&mut rng, 2, arch.window, arch.n_in);
        let y = Matrix::from_vec(2, 2, random_vec(&mut rng, 4));
        let (_, grads, _) = model.loss_and_gradients(&x, &y).unwrap();
        let analytic: Vec<Vec<f64>> = grads.params().iter().map(|p| p.to_vec()).collect();

        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let n_groups = analytic.len();
        for g in 0..n_groups {
            for j in 0..analytic[g].len() {
                let x0 = model.params()[g][j];
                let mut f = |v: f64| {
                    let mut m = model.clone();
                    m.params_mut()[g][j] = v;
                    m.loss_and_gradients(&x, &y).unwrap().0
                };
                let numeric = central_diff(&mut f, x0);
                worst = worst.max(rel_err(analytic[g][j], numeric));
                checked += 1;
            }
        }
        assert_eq!(checked, model.n_params());
        assert!(
            worst < 1e-4,
            "seed {seed} full model: max relative error {worst:e} over {checked} parameters"
        );
    }
}

#[test]
fn zeroed_residual_branches_reduce_to_stem_and_head() {
    let arch = ResNetArch {
        block_channels: vec![4, 4, 4, 4],
        ..small_arch()
    };
    let mut model = ResNetModel::init(&arch, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for b in &mut model.blocks {
        b.second.bn.gamma.fill(0.0);
        b.second.bn.beta.fill(0.0);
        b.second.bn.running_mean = random_vec(&mut rng, 4);
    }
    let x = random_tensor(&mut rng, 3, arch.window, arch.n_in);

    let mut head_only = ResNetModel::init(
        &ResNetArch {
            block_channels: vec![],
            ..arch.clone()
        },
        0,
    );
    head_only.stem = model.stem.clone();
    head_only.hidden = model.hidden.clone();
    head_only.output = model.output.clone();
    for mode in [Mode::Infer, Mode::Train] {
        let a = model.forward_net(&x, mode).unwrap();
        let b = head_only.forward_net(&x, mode).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-12, "{mode:?}: {p} vs {q}");
        }
    }
}
