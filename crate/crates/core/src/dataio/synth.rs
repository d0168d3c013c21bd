use serde::{Deserialize, Serialize};

use crate::dataio::dataset::{Dataset, ImageRole};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

/// Parameters of the synthetic attribute-to-visual benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub train_classes: usize,
    pub unlab_classes: usize,
    pub test_classes: usize,
    pub images_per_class: usize,
    pub d_visual: usize,
    pub d_attribute: usize,
    pub noise_sigma: f64,
    pub nonlinear: bool,
    pub seed: u64,
}

impl SynthSpec {
    /// The `synth-A` preset: 10/5/5 classes, 60 images each, 64-d features,
    /// 16-d attributes, noise 0.15, nonlinear map.
    pub fn synth_a(seed: u64) -> Self {
        SynthSpec {
            train_classes: 10,
            unlab_classes: 5,
            test_classes: 5,
            images_per_class: 60,
            d_visual: 64,
            d_attribute: 16,
            noise_sigma: 0.15,
            nonlinear: true,
            seed,
        }
    }

    /// A tiny instance for smoke tests and the CLI's quick paths.
    pub fn smoke(seed: u64) -> Self {
        SynthSpec {
            train_classes: 4,
            unlab_classes: 2,
            test_classes: 2,
            images_per_class: 8,
            d_visual: 8,
            d_attribute: 6,
            noise_sigma: 0.1,
            nonlinear: true,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "synth-A" | "synth-a" => Some(Self::synth_a(seed)),
            "synth-smoke" => Some(Self::smoke(seed)),
            _ => None,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.train_classes + self.unlab_classes + self.test_classes
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.train_classes,
            self.unlab_classes,
            self.test_classes,
            self.images_per_class,
            self.d_visual,
            self.d_attribute,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "synthetic counts must be >= 1: {self:?}"
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Weight scale of the tanh layer of the nonlinear map. Large enough that
/// unit attributes drive it well into saturation.
const INPUT_GAIN: f64 = 3.0;
/// Output scale of the nonlinear map, relative to `1/sqrt(width)`. It sets
/// the class-mean spread against the image noise.
const OUTPUT_GAIN: f64 = 0.3;

/// Samples a labeled benchmark whose class semantics are fixed by the
/// attributes: each image is `map(attribute of its class) + noise`.
///
/// Attributes are uniform on the unit sphere. The map is linear, or a
/// tanh layer followed by a linear layer when `nonlinear` is set.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let (c, dt, dv) = (spec.n_classes(), spec.d_attribute, spec.d_visual);

    let mut rng = root.derive(10);
    let mut attributes = Matrix::from_fn(c, dt, |_, _| rng.normal());
    let norms = attributes.row_norms();
    for r in 0..c {
        let n = norms[r].max(f64::MIN_POSITIVE);
        attributes.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }

    let mut rng = root.derive(11);
    let class_means = if spec.nonlinear {
        let hidden = dv;
        let a1 = Matrix::from_fn(dt, hidden, |_, _| INPUT_GAIN * rng.normal());
        let s2 = OUTPUT_GAIN / (hidden as f64).sqrt();
        let a2 = Matrix::from_fn(hidden, dv, |_, _| s2 * rng.normal());
        attributes.matmul(&a1)?.map(f64::tanh).matmul(&a2)?
    } else {
        let a = Matrix::from_fn(dt, dv, |_, _| rng.normal());
        attributes.matmul(&a)?
    };

    let mut rng = root.derive(12);
    let n = c * spec.images_per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / spec.images_per_class).collect();
    let visual = Matrix::from_fn(n, dv, |r, col| {
        class_means.get(labels[r], col) + spec.noise_sigma * rng.normal()
    });
    let roles = labels
        .iter()
        .map(|&l| {
            if l < spec.train_classes {
                ImageRole::LabeledTrain
            } else if l < spec.train_classes + spec.unlab_classes {
                ImageRole::UnlabeledTrain
            } else {
                ImageRole::Test
            }
        })
        .collect();
    let names = (0..c).map(|i| format!("class{i:02}")).collect();
    Dataset::new(visual, labels, attributes, roles)?.with_names(names)
}

/// Percentage of `role` images whose nearest class mean (over the classes
/// of that role, means taken over all images of a class) is their own.
pub fn nearest_class_mean_accuracy(ds: &Dataset, role: ImageRole) -> f64 {
    let images = ds.indices_with(role);
    if images.is_empty() {
        return 0.0;
    }
    let mut classes: Vec<usize> = images.iter().map(|&i| ds.labels()[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    let d = ds.d_visual();
    let means: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let mut m = vec![0.0; d];
            let mut count = 0usize;
            for i in (0..ds.n_images()).filter(|&i| ds.labels()[i] == c) {
                for (a, b) in m.iter_mut().zip(ds.visual().row(i)) {
                    *a += b;
                }
                count += 1;
            }
            m.iter_mut().for_each(|v| *v /= count as f64);
            m
        })
        .collect();
    let correct = images
        .iter()
        .filter(|&&i| {
            let x = ds.visual().row(i);
            let mut best = (f64::INFINITY, 0);
            for (k, m) in means.iter().enumerate() {
                let dist: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            classes[best.1] == ds.labels()[i]
        })
        .count();
    100.0 * correct as f64 / images.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_linear_gives_identical_class_members() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            nonlinear: false,
            ..SynthSpec::smoke(3)
        };
        let ds = gen_synthetic(&spec).unwrap();
        for i in 1..spec.images_per_class {
            assert_eq!(ds.visual().row(0), ds.visual().row(i));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = gen_synthetic(&SynthSpec::smoke(9)).unwrap();
        let b = gen_synthetic(&SynthSpec::smoke(9)).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&SynthSpec::smoke(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn attributes_are_unit_rows() {
        let ds = gen_synthetic(&SynthSpec::synth_a(0)).unwrap();
        for n in ds.attributes().row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SynthSpec {
            test_classes: 0,
            ..SynthSpec::smoke(0)
        };
        assert!(gen_synthetic(&spec).is_err());
    }
}
