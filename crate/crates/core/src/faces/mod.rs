//! Procedural face-like images with ground-truth subject, pose and
//! expression factors, plus label indexing and the leave-one-subject-out split.

mod render;

use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use render::{curvature, glyph_coverage, oval_mask, pan_angle, render_sample, shear, subject_field};

const CELL_TAG: u64 = 0x4345_4c4c;

/// Generator settings. Every dataset is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub n_subjects: usize,
    pub n_expressions: usize,
    pub n_poses: usize,
    pub side: usize,
    pub samples_per_cell: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for FactorSpec {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            n_expressions: 6,
            n_poses: 5,
            side: 24,
            samples_per_cell: 6,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::Config {
                field,
                reason: reason.into(),
            })
        };
        if self.n_subjects < 2 {
            return bad("n_subjects", "must be at least 2");
        }
        if self.n_expressions < 2 {
            return bad("n_expressions", "must be at least 2");
        }
        if self.n_poses < 2 {
            return bad("n_poses", "must be at least 2");
        }
        if self.side < 16 {
            return bad("side", "must be at least 16");
        }
        if self.samples_per_cell < 1 {
            return bad("samples_per_cell", "must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be a finite value >= 0");
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn total_samples(&self) -> usize {
        self.n_subjects * self.n_expressions * self.n_poses * self.samples_per_cell
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One rendered image with its factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Position in the originally generated dataset.
    pub id: usize,
    pub subject: usize,
    pub expression: usize,
    pub pose: usize,
    pub domain: Domain,
    pub noise_seed: u64,
    pub image: Vec<f32>,
}

/// `(pose, expression)` → sample positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelIndex {
    n_poses: usize,
    n_expressions: usize,
    buckets: Vec<Vec<usize>>,
}

impl LabelIndex {
    pub fn build(
        n_poses: usize,
        n_expressions: usize,
        labels: impl Iterator<Item = (usize, usize)>,
    ) -> Self {
        let mut buckets = alloc::vec![Vec::new(); n_poses * n_expressions];
        for (i, (p, e)) in labels.enumerate() {
            buckets[p * n_expressions + e].push(i);
        }
        Self {
            n_poses,
            n_expressions,
            buckets,
        }
    }

    pub fn bucket(&self, pose: usize, expression: usize) -> &[usize] {
        if pose >= self.n_poses || expression >= self.n_expressions {
            return &[];
        }
        &self.buckets[pose * self.n_expressions + expression]
    }

    /// Uniform draw from a `(pose, expression)` bucket; `None` when empty.
    pub fn draw(&self, pose: usize, expression: usize, rng: &mut impl RngCore) -> Option<usize> {
        let b = self.bucket(pose, expression);
        (!b.is_empty()).then(|| b[rng.gen_range(0..b.len())])
    }

    /// Uniform draw among all samples with the given expression, any pose.
    pub fn draw_expression(&self, expression: usize, rng: &mut impl RngCore) -> Option<usize> {
        if expression >= self.n_expressions {
            return None;
        }
        let total: usize = (0..self.n_poses).map(|p| self.bucket(p, expression).len()).sum();
        if total == 0 {
            return None;
        }
        let mut k = rng.gen_range(0..total);
        for p in 0..self.n_poses {
            let b = self.bucket(p, expression);
            if k < b.len() {
                return Some(b[k]);
            }
            k -= b.len();
        }
        None
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An ordered list of samples with a label index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: FactorSpec,
    samples: Vec<Sample>,
    index: LabelIndex,
}

impl Dataset {
    pub fn from_samples(spec: FactorSpec, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            if s.subject >= spec.n_subjects || s.expression >= spec.n_expressions || s.pose >= spec.n_poses {
                return Err(usage(format!("sample {} has labels outside the spec", s.id)));
            }
            if s.image.len() != spec.pixels() {
                return Err(usage(format!("sample {} has {} pixels", s.id, s.image.len())));
            }
        }
        let index = LabelIndex::build(
            spec.n_poses,
            spec.n_expressions,
            samples.iter().map(|s| (s.pose, s.expression)),
        );
        Ok(Self { spec, samples, index })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn index(&self) -> &LabelIndex {
        &self.index
    }

    /// Images of the given positions as an `n × pixels` tensor.
    pub fn images(&self, idx: &[usize]) -> Tensor {
        let d = self.spec.pixels();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend(self.samples[i].image.iter().map(|&v| f64::from(v)));
        }
        Tensor::matrix(idx.len(), d, data).expect("image rows")
    }

    pub fn all_images(&self) -> Tensor {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.images(&idx)
    }

    pub fn subjects(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.samples.iter().map(|s| s.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Uniform sample from the `(pose, expression)` bucket, or `None` when the
/// bucket is empty.
pub fn lookup_by_labels<'a>(
    dataset: &'a Dataset,
    pose: usize,
    expression: usize,
    rng: &mut impl RngCore,
) -> Option<&'a Sample> {
    dataset.index.draw(pose, expression, rng).map(|i| dataset.get(i))
}

/// Renders every `(subject, expression, pose, k)` cell of the spec.
pub fn generate_dataset(spec: &FactorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.total_samples());
    for subject in 0..spec.n_subjects {
        for expression in 0..spec.n_expressions {
            for pose in 0..spec.n_poses {
                let mut cell = rng::stream(rng::derive(
                    spec.seed,
                    &[CELL_TAG, subject as u64, expression as u64, pose as u64],
                ));
                for _ in 0..spec.samples_per_cell {
                    let noise_seed = cell.next_u64();
                    let image = render_sample(spec, subject, expression, pose, noise_seed)?;
                    samples.push(Sample {
                        id: samples.len(),
                        subject,
                        expression,
                        pose,
                        domain: Domain::Source,
                        noise_seed,
                        image,
                    });
                }
            }
        }
    }
    Dataset::from_samples(spec.clone(), samples)
}

/// Held-out subject's training images with labels withheld.
///
/// The training interface exposes images only; [`TargetTrain::reveal`] is
/// for evaluation code (probes, oracle checks) and must not feed training.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrain {
    data: Dataset,
}

impl TargetTrain {
    pub fn new(data: Dataset) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.data.spec.pixels()
    }

    pub fn images(&self, idx: &[usize]) -> Tensor {
        self.data.images(idx)
    }

    pub fn all_images(&self) -> Tensor {
        self.data.all_images()
    }

    /// Always `None`: target expressions are not available to training.
    pub fn expression(&self, _i: usize) -> Option<usize> {
        None
    }

    /// Always `None`: target poses are not available to training.
    pub fn pose(&self, _i: usize) -> Option<usize> {
        None
    }

    /// Labeled view for evaluation only.
    pub fn reveal(&self) -> &Dataset {
        &self.data
    }
}

/// Result of a leave-one-subject-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct LosoSplit {
    pub source: Dataset,
    pub target_train: TargetTrain,
    pub target_test: Dataset,
}

/// Holds out one subject as the target domain: its samples are shuffled by
/// `seed` and split 2/3 train, 1/3 test; all other subjects form the source.
pub fn split_loso(dataset: &Dataset, held_out_subject: usize, seed: u64) -> Result<LosoSplit> {
    let mut source = Vec::new();
    let mut target = Vec::new();
    for s in dataset.samples() {
        if s.subject == held_out_subject {
            target.push(Sample {
                domain: Domain::Target,
                ..s.clone()
            });
        } else {
            source.push(Sample {
                domain: Domain::Source,
                ..s.clone()
            });
        }
    }
    if target.is_empty() {
        return Err(usage(format!("unknown subject {held_out_subject}")));
    }
    let mut r = rng::stream(rng::derive(seed, &[held_out_subject as u64]));
    target.shuffle(&mut r);
    let n_train = target.len() * 2 / 3;
    let test = target.split_off(n_train);
    let spec = dataset.spec.clone();
    Ok(LosoSplit {
        source: Dataset::from_samples(spec.clone(), source)?,
        target_train: TargetTrain::new(Dataset::from_samples(spec.clone(), target)?),
        target_test: Dataset::from_samples(spec, test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> FactorSpec {
        FactorSpec {
            n_subjects: 3,
            n_expressions: 3,
            n_poses: 3,
            side: 16,
            samples_per_cell: 2,
            noise_sigma: 0.02,
            seed: 11,
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        for spec in [
            FactorSpec { n_subjects: 1, ..FactorSpec::default() },
            FactorSpec { n_poses: 1, ..FactorSpec::default() },
            FactorSpec { side: 12, ..FactorSpec::default() },
            FactorSpec { noise_sigma: -0.1, ..FactorSpec::default() },
        ] {
            assert!(matches!(spec.validate(), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn index_bucket_counts() {
        let ds = generate_dataset(&small_spec()).unwrap();
        assert_eq!(ds.len(), 54);
        for p in 0..3 {
            for e in 0..3 {
                let b = ds.index().bucket(p, e);
                assert_eq!(b.len(), 6);
                assert!(b.iter().all(|&i| ds.get(i).pose == p && ds.get(i).expression == e));
            }
        }
    }

    #[test]
    fn singleton_bucket_lookup() {
        let spec = small_spec();
        let ds = generate_dataset(&spec).unwrap();
        let only = ds.samples()[..1].to_vec();
        let one = Dataset::from_samples(spec, only).unwrap();
        let mut r = rng::stream(1);
        let (p, e) = (one.get(0).pose, one.get(0).expression);
        assert_eq!(lookup_by_labels(&one, p, e, &mut r).unwrap().id, one.get(0).id);
        assert!(lookup_by_labels(&one, (p + 1) % 3, e, &mut r).is_none());
    }

    #[test]
    fn expression_only_draw_matches_expression() {
        let ds = generate_dataset(&small_spec()).unwrap();
        let mut r = rng::stream(3);
        for _ in 0..50 {
            let i = ds.index().draw_expression(2, &mut r).unwrap();
            assert_eq!(ds.get(i).expression, 2);
        }
    }

    #[test]
    fn target_view_hides_labels() {
        let ds = generate_dataset(&small_spec()).unwrap();
        let split = split_loso(&ds, 1, 4).unwrap();
        assert_eq!(split.target_train.expression(0), None);
        assert_eq!(split.target_train.pose(0), None);
        assert_eq!(split.target_train.reveal().get(0).subject, 1);
        assert!(split_loso(&ds, 9, 4).is_err());
        assert_eq!(split.source.len(), 36);
        assert_eq!(split.target_train.len(), 12);
        assert_eq!(split.target_test.len(), 6);
    }
}
