//! The six CIFAR-10 training regimes (TR1-TR6).
//!
//! Each regime fixes learning rate, train batch size, grouping volatility and
//! the ordered train-time transform list. Everything else (optimizer kind,
//! weight decay, scheduler, epochs) comes from the base config.

use super::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub id: u8,
    pub lr: f64,
    pub batch_size: usize,
    pub grouping_volatility: f64,
    pub transforms: Vec<TransformSpec>,
    /// Reported CIFAR-10 accuracy in percent, for reference only.
    pub reported_accuracy: f64,
}

const MEAN: [f64; 3] = [0.49, 0.48, 0.45];
const STD: [f64; 3] = [0.25, 0.24, 0.26];

fn t(kind: TransformKind) -> TransformSpec {
    TransformSpec::new(kind)
}

/// Regime `id` in 1..=6.
pub fn regime(id: u8) -> Option<Regime> {
    use TransformKind::*;
    let (lr, batch_size, gv, mut transforms, acc) = match id {
        1 => (1e-4, 1024, 1.02, vec![], 67.61),
        2 => (1e-3, 512, 0.79, vec![t(RandomCrop), t(RandomHorizontalFlip)], 72.66),
        3 => (
            2.36e-4,
            512,
            0.93,
            vec![t(RandomCrop), t(RandomHorizontalFlip), t(CutOut)],
            76.53,
        ),
        4 => (
            2.36e-4,
            512,
            0.78,
            vec![t(RandomHorizontalFlip), t(RandomRotation), t(ColorJitter)],
            78.18,
        ),
        5 => (2.36e-4, 512, 0.88, vec![t(RandAugment)], 79.15),
        6 => (2.36e-4, 500, 0.88, vec![t(RandAugment), t(CutOut)], 81.53),
        _ => return None,
    };
    transforms.push(t(ToTensor));
    transforms.push(match id {
        1 => TransformSpec::normalize(&[0.5; 3], &[0.5; 3]),
        2 => TransformSpec::normalize(&MEAN, &[0.20; 3]),
        _ => TransformSpec::normalize(&MEAN, &STD),
    });
    Some(Regime {
        id,
        lr,
        batch_size,
        grouping_volatility: gv,
        transforms,
        reported_accuracy: acc,
    })
}

pub fn all() -> Vec<Regime> {
    (1..=6).filter_map(regime).collect()
}

impl Regime {
    /// Copy of `base` with this regime's values applied to the train split
    /// and training section.
    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        c.training.optimizer.lr = self.lr;
        c.training.grouping_volatility = self.grouping_volatility;
        c.splits.train.batch_size = self.batch_size;
        c.splits.train.transforms = self.transforms.clone();
        c.validate()?;
        Ok(c)
    }

    pub fn name(&self) -> String {
        format!("TR{}", self.id)
    }
}
