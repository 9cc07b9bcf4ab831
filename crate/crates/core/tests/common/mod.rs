#![allow(dead_code)]

use aging_core::{AgeGrid, CareerPanel, TransformSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Population cubic written out by hand: x = (age - 30) / 10.
pub fn cubic(beta: &[f64; 4], age: i32) -> f64 {
    let x = (f64::from(age) - 30.0) / 10.0;
    beta[0] + beta[1] * x + beta[2] * x * x + beta[3] * x * x * x
}

/// Fully observed random-intercept panel drawn without the library's simulator.
/// Returns the panel and each player's intercept.
pub fn generate(beta: [f64; 4], tau2: f64, sigma2: f64, n_players: usize, seed: u64) -> (CareerPanel, Vec<f64>) {
    let grid = AgeGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b_dist = Normal::new(0.0, tau2.sqrt()).unwrap();
    let e_dist = Normal::new(0.0, sigma2.sqrt()).unwrap();
    let mut values = Vec::with_capacity(n_players * grid.len());
    let mut intercepts = Vec::with_capacity(n_players);
    for _ in 0..n_players {
        let b = b_dist.sample(&mut rng);
        intercepts.push(b);
        for age in grid.ages() {
            values.push(cubic(&beta, age) + b + e_dist.sample(&mut rng));
        }
    }
    let players = (0..n_players).map(|p| format!("p{p:05}")).collect();
    let panel = CareerPanel::fully_observed(players, grid, values, TransformSpec::default()).unwrap();
    (panel, intercepts)
}
