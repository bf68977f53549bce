//! Data sources that serve a player's observations on demand.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::{draw_point, DataPoint, DesignLaw, LinearGaussianModel, PlayerModel, TrueParameter};
use crate::rng::{rng_from, Rng};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceError {
    /// The source cannot serve the requested count.
    Exhausted,
    Failed(Error),
}

impl From<Error> for SourceError {
    fn from(e: Error) -> Self {
        SourceError::Failed(e)
    }
}

/// Serves i.i.d. observations for one player.
pub trait DataSource: Send + Sync {
    fn model(&self) -> &PlayerModel;

    fn draw(&mut self, count: usize) -> Result<Vec<DataPoint>, SourceError>;
}

/// Caps the total number of points a source may serve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Budget {
    limit: Option<usize>,
    served: usize,
}

impl Budget {
    pub(crate) fn new(limit: Option<usize>) -> Self {
        Self { limit, served: 0 }
    }

    pub(crate) fn take(&mut self, count: usize) -> Result<(), SourceError> {
        if let Some(limit) = self.limit {
            if self.served + count > limit {
                return Err(SourceError::Exhausted);
            }
        }
        self.served += count;
        Ok(())
    }
}

/// Draws fresh data from a model at a fixed true parameter.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    model: PlayerModel,
    theta: TrueParameter,
    rng: Rng,
    budget: Budget,
}

impl SyntheticSource {
    pub fn new(model: PlayerModel, theta: TrueParameter, seed: u64) -> Result<Self> {
        if model.dim() != theta.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: theta.dim() });
        }
        Ok(Self { model, theta, rng: rng_from(seed, &[0x5359]), budget: Budget::new(None) })
    }

    pub fn with_budget(mut self, limit: usize) -> Self {
        self.budget = Budget::new(Some(limit));
        self
    }
}

impl DataSource for SyntheticSource {
    fn model(&self) -> &PlayerModel {
        &self.model
    }

    fn draw(&mut self, count: usize) -> Result<Vec<DataPoint>, SourceError> {
        self.budget.take(count)?;
        Ok((0..count).map(|_| draw_point(&self.model, self.theta.as_vector(), &mut self.rng)).collect())
    }
}

/// Labelled latent codes from a multi-mode Gaussian mixture.
///
/// The parameter stacks the mode means (`modes × latent_dim`). A player sees
/// mode `j` with probability `mode_probs[j]` and observes the code
/// `z ~ N(μ_j, spread² I)` together with its label. With a finite pool the
/// player resamples, with replacement, from a fixed set of such codes.
#[derive(Debug, Clone)]
pub struct MixtureLatentSource {
    model: PlayerModel,
    theta: TrueParameter,
    pool: Option<Vec<DataPoint>>,
    rng: Rng,
}

impl MixtureLatentSource {
    pub fn new(
        theta: TrueParameter,
        latent_dim: usize,
        mode_probs: Vec<f64>,
        spread: f64,
        pool_size: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let model: PlayerModel = LinearGaussianModel::new(
            theta.dim(),
            DesignLaw::ModeSelect { mode_probs, block: latent_dim },
            spread,
            true,
        )?
        .into();
        let mut rng = rng_from(seed, &[0x4d4958]);
        let pool = match pool_size {
            Some(0) => return Err(Error::InsufficientData { needed: 1, found: 0 }),
            Some(p) => Some((0..p).map(|_| draw_point(&model, theta.as_vector(), &mut rng)).collect()),
            None => None,
        };
        Ok(Self { model, theta, pool, rng })
    }

    pub fn true_parameter(&self) -> &DVector<f64> {
        self.theta.as_vector()
    }
}

impl DataSource for MixtureLatentSource {
    fn model(&self) -> &PlayerModel {
        &self.model
    }

    fn draw(&mut self, count: usize) -> Result<Vec<DataPoint>, SourceError> {
        use rand::Rng as _;
        Ok(match &self.pool {
            Some(pool) => (0..count).map(|_| pool[self.rng.random_range(0..pool.len())].clone()).collect(),
            None => (0..count).map(|_| draw_point(&self.model, self.theta.as_vector(), &mut self.rng)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DirectObservationModel;

    #[test]
    fn budget_exhaustion() {
        let model: PlayerModel = DirectObservationModel::isotropic(2, 1.0).unwrap().into();
        let theta = TrueParameter::from_slice(&[0.0, 1.0]).unwrap();
        let mut s = SyntheticSource::new(model, theta, 1).unwrap().with_budget(5);
        assert_eq!(s.draw(3).unwrap().len(), 3);
        assert_eq!(s.draw(3), Err(SourceError::Exhausted));
        assert_eq!(s.draw(2).unwrap().len(), 2);
    }

    #[test]
    fn mixture_labels_follow_bias() {
        let theta = TrueParameter::from_slice(&[0.0, 0.0, 5.0, 5.0]).unwrap();
        let mut s = MixtureLatentSource::new(theta, 2, vec![0.1, 0.9], 0.5, None, 3).unwrap();
        let pts = s.draw(5000).unwrap();
        let first =
            pts.iter().filter(|p| matches!(p, DataPoint::Linear { design, .. } if design[(0, 0)] == 1.0)).count();
        let frac = first as f64 / 5000.0;
        assert!((frac - 0.1).abs() < 0.02, "{frac}");
    }

    #[test]
    fn pooled_mixture_reuses_pool() {
        let theta = TrueParameter::from_slice(&[0.0, 0.0, 5.0, 5.0]).unwrap();
        let mut s = MixtureLatentSource::new(theta, 2, vec![0.5, 0.5], 1.0, Some(3), 3).unwrap();
        let mut pts = s.draw(200).unwrap();
        pts.dedup_by(|a, b| a == b);
        let mut distinct: Vec<String> = pts.iter().map(|p| format!("{p:?}")).collect();
        distinct.sort();
        distinct.dedup();
        assert!(distinct.len() <= 3);
    }
}
