//! Fixtures shared by the criterion benchmarks.

use fairgame_core::{
    sample, CharacteristicFunction, DataSet, DirectObservationModel, LinearGaussianModel, PlayerModel, TrueParameter,
};

/// Deterministic non-additive game: `v(S) = (Σ_{i∈S} w_i)^1.5` with `w_i = 1 + (i mod 5)`.
pub fn power_game(n: usize) -> CharacteristicFunction {
    let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
    CharacteristicFunction::from_fn(n, |s| s.members().map(|i| w[i]).sum::<f64>().powf(1.5)).expect("valid game")
}

pub fn theta_star() -> TrueParameter {
    TrueParameter::from_slice(&[1.0, -1.0, 0.5, 2.0]).expect("finite")
}

/// The three synthetic players with `m` points each.
pub fn synthetic_players(m: usize, seed: u64) -> (Vec<PlayerModel>, Vec<DataSet>) {
    let models: Vec<PlayerModel> = vec![
        LinearGaussianModel::standard(4, 1.0, true).expect("valid").into(),
        DirectObservationModel::isotropic(4, 2.5).expect("valid").into(),
        LinearGaussianModel::standard(4, 1.1, true).expect("valid").into(),
    ];
    let data = models
        .iter()
        .enumerate()
        .map(|(i, md)| sample(md, &theta_star(), m, seed + i as u64).expect("sampling"))
        .collect();
    (models, data)
}
