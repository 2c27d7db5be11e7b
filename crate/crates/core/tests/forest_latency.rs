use std::time::Instant;

use gaitrt_core::forest::{fit_forest, ForestParams};
use gaitrt_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn single_row_inference_under_100_us() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 3000;
    let x = Matrix::from_vec(n, 20, (0..n * 20).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let y = Matrix::from_vec(
        n,
        5,
        (0..n * 5)
            .map(|i| x.get(i / 5, i % 20).sin() + rng.gen_range(-0.1..0.1))
            .collect(),
    );
    let params = ForestParams {
        max_depth: Some(30),
        ..ForestParams::angle_default()
    };
    let f = fit_forest(&x, &y, &params, 3).unwrap();
    assert_eq!(f.trees.len(), 200);
    assert!(f.trees.iter().all(|t| t.depth() <= 30));

    let mut out = [0.0; 5];
    let mut times = Vec::with_capacity(2000);
    for i in 0..2000 {
        let row = x.row(i % n);
        let t0 = Instant::now();
        f.predict_row(row, &mut out).unwrap();
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    assert!(median < 100e-6, "median single-row latency {:.1} us", median * 1e6);
}
