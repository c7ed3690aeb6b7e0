// Quick throughput probe for the conv-sized dgemm calls. Not part of the
// test suite; run manually with `cargo run --example gemm_probe`.
use std::time::Instant;

fn bench(m: usize, k: usize, n: usize, reps: usize) {
    let a = vec![0.5f64; m * k];
    let b = vec![0.25f64; k * n];
    let mut c = vec![0.0f64; m * n];
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
    let t = Instant::now();
    for _ in 0..reps {
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
    let dt = t.elapsed().as_secs_f64();
    let gf = (2.0 * m as f64 * k as f64 * n as f64 * reps as f64) / dt / 1e9;
    println!("{m}x{k}x{n}: {gf:.2} GFLOP/s ({:.1} ms/call)", dt * 1e3 / reps as f64);
}

fn main() {
    bench(64, 300, 14400, 20);   // conv1 forward, batch 64
    bench(64, 1600, 3136, 20);   // conv2 forward
    bench(64, 576, 576, 200);    // conv3 forward
    bench(1024, 576, 64, 100);   // fc1
    bench(300, 64, 14400, 20);   // conv1 backward-input shape
    bench(64, 14400, 300, 20);   // conv1 backward-weight shape
}
