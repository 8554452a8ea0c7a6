//! Synthetic streams used by the calibration sweep and the test suites.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::DenseMatrix;
use crate::rng::{self, Namespace};

/// `n × d` matrix with i.i.d. standard normal entries.
pub fn gaussian(n: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut r = rng::stream(seed, Namespace::Synthetic, 0);
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
    DenseMatrix::from_row_major(n, d, data).expect("finite gaussian entries")
}

/// Gaussian rows whose column scales grow geometrically from 1 to `spread`,
/// giving a stream with a controlled condition number.
pub fn gaussian_scaled(n: usize, d: usize, spread: f64, seed: u64) -> DenseMatrix {
    let mut r = rng::stream(seed, Namespace::Synthetic, 1);
    let scales: Vec<f64> = (0..d).map(|j| if d == 1 { 1.0 } else { spread.powf(j as f64 / (d - 1) as f64) }).collect();
    let data: Vec<f64> = (0..n * d)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut r);
            scales[k % d] * z
        })
        .collect();
    DenseMatrix::from_row_major(n, d, data).expect("finite gaussian entries")
}

/// Labeled points from two Gaussian clouds centred at `±separation·e₁`,
/// where a fraction `mirror` of the points carries the label of the other
/// cloud. Labels are ±1.
pub fn labeled_clouds(n: usize, d: usize, separation: f64, mirror: f64, seed: u64) -> (Vec<f64>, DenseMatrix) {
    let mut r = rng::stream(seed, Namespace::Synthetic, 2);
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let y: f64 = if r.random::<bool>() { 1.0 } else { -1.0 };
        let flip = r.random::<f64>() < mirror;
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut r);
            let centre = if j == 0 { y * separation } else { 0.0 };
            data.push(centre + noise);
        }
        labels.push(if flip { -y } else { y });
    }
    (labels, DenseMatrix::from_row_major(n, d, data).expect("finite entries"))
}

/// Unit vectors drawn uniformly from the sphere in `d` dimensions.
pub fn unit_directions(count: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, Namespace::Synthetic, 3);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}
