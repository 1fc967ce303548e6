use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamState, TrainConfig};
use super::cnn::{Batch, Cnn, CnnArchitecture};
use super::real::Real;
use super::{check_patch, patch_size, FeatureConfig, RegressorError};
use crate::dataset::NormalizedSample;
use crate::geometry::GazeAngles;
use crate::synth::mix_seed;

/// A trained network together with the features it consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub net: Cnn<f32>,
    pub features: FeatureConfig,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCnn {
    pub model: CnnModel,
    /// Mean per-sample loss of every iteration's batch.
    pub loss_trace: Vec<f64>,
}

fn push_sample<T: Real>(
    batch: &mut Batch<T>,
    sample: &NormalizedSample,
    features: &FeatureConfig,
) -> Result<(), RegressorError> {
    let img: Vec<T> = sample
        .patch
        .pixels()
        .iter()
        .map(|&p| T::from_f64(p as f64 / 255.0))
        .collect();
    let feat: Vec<T> = features
        .extract(sample)?
        .into_iter()
        .map(T::from_f64)
        .collect();
    batch.push(
        &img,
        &feat,
        [T::from_f64(sample.gaze.yaw), T::from_f64(sample.gaze.pitch)],
    );
    Ok(())
}

/// Builds a network batch from samples.
pub fn make_batch<T: Real>(
    samples: &[&NormalizedSample],
    features: &FeatureConfig,
) -> Result<Batch<T>, RegressorError> {
    let mut batch = Batch::new();
    for s in samples {
        push_sample(&mut batch, s, features)?;
    }
    Ok(batch)
}

/// Trains from scratch with seeded initialization and shuffling. Batches
/// walk through a shuffled order and reshuffle once it is used up.
pub fn train_cnn(
    samples: &[NormalizedSample],
    features: FeatureConfig,
    config: &TrainConfig,
) -> Result<TrainedCnn, RegressorError> {
    config.validate()?;
    let (w, h) = patch_size(samples)?;
    let arch = CnnArchitecture::for_input(w, h, features.dim())?;
    let mut net = Cnn::<f32>::init(arch, mix_seed(config.seed, 0, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0, 2));

    // Pre-scale everything once.
    let all: Vec<&NormalizedSample> = samples.iter().collect();
    let data = make_batch::<f32>(&all, &features)?;
    let in_len = w * h;
    let fdim = features.dim();

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut adam = AdamState::new(net.params.len());
    let mut grad = vec![0.0f32; net.params.len()];
    let mut batch = Batch::<f32>::new();
    let mut loss_trace = Vec::with_capacity(config.iterations);

    for iteration in 1..=config.iterations {
        batch.clear();
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push(
                &data.images[i * in_len..(i + 1) * in_len],
                &data.features[i * fdim..(i + 1) * fdim],
                [data.targets[2 * i], data.targets[2 * i + 1]],
            );
        }
        let loss = net.loss_and_gradient(&batch, &mut grad)?;
        let mean = loss as f64 / config.batch_size as f64;
        if !mean.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(RegressorError::NonFiniteLoss { iteration });
        }
        loss_trace.push(mean);
        adam.step(&mut net.params, &grad, config, iteration);
    }

    Ok(TrainedCnn {
        model: CnnModel {
            net,
            features,
            config: *config,
        },
        loss_trace,
    })
}

const PREDICT_CHUNK: usize = 64;

impl CnnModel {
    pub fn input_size(&self) -> (usize, usize) {
        (self.net.arch.in_width, self.net.arch.in_height)
    }

    pub fn predict(&self, samples: &[NormalizedSample]) -> Result<Vec<GazeAngles>, RegressorError> {
        let size = self.input_size();
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(PREDICT_CHUNK) {
            for s in chunk {
                check_patch(&s.patch, size)?;
            }
            let refs: Vec<&NormalizedSample> = chunk.iter().collect();
            let batch = make_batch::<f32>(&refs, &self.features)?;
            for y in self.net.forward(&batch)? {
                out.push(GazeAngles::new(y[0] as f64, y[1] as f64));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{EyeSide, HeadAngles};
    use crate::synth::{render_eye, EyeAppearance};

    pub(crate) fn rendered(n: usize, seed: u64) -> Vec<NormalizedSample> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n.max(2) as f64;
                let g = GazeAngles::from_degrees(-15.0 + 30.0 * t, 10.0 * (7.0 * t).sin());
                let h = HeadAngles::from_degrees(5.0 * (3.0 * t).cos(), -2.0);
                let app = EyeAppearance {
                    noise_sigma: 2.0,
                    seed: seed + i as u64,
                    ..EyeAppearance::default()
                };
                NormalizedSample {
                    id: format!("s{i}"),
                    person: "p".into(),
                    eye: EyeSide::Right,
                    patch: render_eye(&g, &h, &app).unwrap(),
                    head: h,
                    gaze: g,
                    pupil: None,
                    geometry: None,
                }
            })
            .collect()
    }

    #[test]
    fn overfits_ten_samples() {
        let samples = rendered(10, 0);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 10,
            iterations: 2000,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train_cnn(&samples, FeatureConfig::default(), &cfg).unwrap();
        assert!(out.loss_trace.iter().all(|l| l.is_finite()));
        let last = *out.loss_trace.last().unwrap();
        assert!(last < 1e-3, "final loss {last}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let samples = rendered(6, 1);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            iterations: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_cnn(&samples, FeatureConfig::default(), &cfg).unwrap();
        let b = train_cnn(&samples, FeatureConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_cnn(&samples, FeatureConfig::default(), &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.model.net.params, c.model.net.params);
    }

    #[test]
    fn diverging_training_is_caught() {
        let samples = rendered(4, 2);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            batch_size: 4,
            iterations: 50,
            ..TrainConfig::default()
        };
        let err = train_cnn(&samples, FeatureConfig::default(), &cfg).unwrap_err();
        assert!(matches!(err, RegressorError::NonFiniteLoss { .. }), "{err:?}");
    }
}
