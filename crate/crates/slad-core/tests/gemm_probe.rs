use slad_core::nn::{Activation, DenseLayer, Matrix, MlpNet};
use slad_core::RealMatrix;
use std::time::Instant;

fn net(h: usize, hidden: usize) -> MlpNet<f64> {
    let w1: Vec<f64> = (0..hidden * h).map(|i| ((i as f64) * 0.7).sin() * 0.1).collect();
    let w2: Vec<f64> = (0..hidden).map(|i| ((i as f64) * 0.3).cos() * 0.1).collect();
    MlpNet::new(vec![
        DenseLayer::new(
            Matrix::from_vec(hidden, h, w1),
            vec![0.01; hidden],
            Activation::LeakyRelu,
        )
        .unwrap(),
        DenseLayer::new(Matrix::from_vec(1, hidden, w2), vec![0.0; 1], Activation::Identity)
            .unwrap(),
    ])
    .unwrap()
}

#[test]
#[ignore]
fn probe_gemm_throughput() {
    let a = RealMatrix::from_vec(1280, 128, (0..1280 * 128).map(|i| (i as f64).sin()).collect());
    let b = RealMatrix::from_vec(100, 128, (0..100 * 128).map(|i| (i as f64).cos()).collect());
    let mut c = RealMatrix::zeros(1280, 100);
    let iters = 2000;
    let t0 = Instant::now();
    for _ in 0..iters {
        RealMatrix::gemm_into(1.0, &a, false, &b, true, 0.0, &mut c);
    }
    let dt = t0.elapsed().as_secs_f64();
    let madds = iters as f64 * 1280.0 * 128.0 * 100.0;
    println!(
        "fwd-shape gemm:     {:.2} Gmadd/s ({:.3} ms/iter)",
        madds / dt / 1e9,
        dt / iters as f64 * 1e3
    );

    // backward dW1 shape: delta^T (100x1280) @ inputs (1280x128)
    let delta = RealMatrix::from_vec(1280, 100, (0..1280 * 100).map(|i| (i as f64).sin()).collect());
    let mut dw = RealMatrix::zeros(100, 128);
    let t0 = Instant::now();
    for _ in 0..iters {
        RealMatrix::gemm_into(1.0, &delta, true, &a, false, 0.0, &mut dw);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "bwd-shape gemm:     {:.2} Gmadd/s ({:.3} ms/iter)",
        madds / dt / 1e9,
        dt / iters as f64 * 1e3
    );

    let phi = net(128, 100);
    let t0 = Instant::now();
    for _ in 0..iters {
        let _ = phi.forward(&a).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("full forward:       {:.3} ms/iter", dt / iters as f64 * 1e3);

    let (_, cache) = phi.forward(&a).unwrap();
    let og = RealMatrix::from_vec(1280, 1, (0..1280).map(|i| (i as f64).sin() / 1280.0).collect());
    let t0 = Instant::now();
    for _ in 0..iters {
        let _ = phi.backward(&cache, &og).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("full backward:      {:.3} ms/iter", dt / iters as f64 * 1e3);

    let t0 = Instant::now();
    let mut sink = 0.0;
    for it in 0..iters {
        let mut z = a.clone();
        for v in z.data_mut() {
            *v = Activation::LeakyRelu.apply(*v);
        }
        sink += z.get(it % 100, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "clone+leaky 1280x128: {:.3} ms/iter (sink {sink:.2})",
        dt / iters as f64 * 1e3
    );

    // training-like: fresh batch buffer each iteration + fwd + bwd
    let pool: Vec<f64> = (0..26_000_000).map(|i| (i as f64 * 0.11).sin()).collect();
    let t0 = Instant::now();
    let mut sink2 = 0.0;
    for it in 0..iters {
        let mut fresh = RealMatrix::zeros(1280, 128);
        let off = (it * 997 * 128) % (pool.len() - 1280 * 128);
        for r in 0..1280 {
            fresh
                .row_mut(r)
                .copy_from_slice(&pool[off + r * 128..off + (r + 1) * 128]);
        }
        let (out, cache) = phi.forward(&fresh).unwrap();
        let g = phi.backward(&cache, &og).unwrap();
        sink2 += out.get(0, 0) + g[0].dw.get(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "fresh asm+fwd+bwd:  {:.3} ms/iter (sink {sink2:.2})",
        dt / iters as f64 * 1e3
    );
}
