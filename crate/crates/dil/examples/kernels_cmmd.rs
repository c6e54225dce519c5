//! Weighted conditional MMD on a toy sample: zero at uniform weights,
//! positive once the weights favour points with a different relation.

use dil::kernels::{cmmd_sq, gram, mmd_sq, GramPair, KernelSpec, DEFAULT_BETA};
use dil::models::Task;
use nalgebra::DMatrix;

fn main() -> dil::Result<()> {
    let n = 40;
    let x = DMatrix::from_fn(n, 1, |i, _| -2.0 + 4.0 * i as f64 / (n - 1) as f64);
    // the last ten points follow y = -x
    let y: Vec<f64> = (0..n).map(|i| if i >= 30 { -x[(i, 0)] } else { x[(i, 0)] }).collect();

    let spec = KernelSpec::rbf_median(&x, DEFAULT_BETA)?;
    let kx = gram(&x, &spec)?;
    println!("Gram {}x{}, k(x0, x0) = {:.3}", kx.nrows(), kx.ncols(), kx[(0, 0)]);

    let grams = GramPair::from_data(&x, &y, Task::Regression, &spec)?;
    let uniform = vec![1.0 / n as f64; n];
    let skewed: Vec<f64> = (0..n).map(|i| if i >= 30 { 0.07 } else { 0.3 / 30.0 }).collect();
    println!("cmmd at uniform weights: {:.2e}", cmmd_sq(&uniform, &grams, spec.beta)?);
    println!("cmmd with mass on the flipped tail: {:.4}", cmmd_sq(&skewed, &grams, spec.beta)?);

    let head = x.rows(0, 20).into_owned();
    let tail = x.rows(20, 20).into_owned();
    println!("mmd^2(first half, second half) = {:.4}", mmd_sq(&head, &tail, &spec)?);
    Ok(())
}
