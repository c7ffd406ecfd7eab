//! Merged-domain batch sampling and the multi-task schedule.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Lm,
    ApiAction,
    ApiAttribute,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Lm, TaskKind::ApiAction, TaskKind::ApiAttribute];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Task for one batch of multi-task epoch `mt_epoch` out of `mt_epochs`.
///
/// The first two and the last epoch draw all three tasks uniformly; the rest
/// draw the attribute task with probability 1/3 and LM otherwise.
pub fn task_sampler(mt_epoch: usize, mt_epochs: usize, rng: &mut impl Rng) -> TaskKind {
    let draw = rng.random_range(0..3u32);
    let full = mt_epoch < 2 || mt_epoch + 1 == mt_epochs;
    match (full, draw) {
        (true, 0) => TaskKind::ApiAction,
        (_, 1) => TaskKind::ApiAttribute,
        _ => TaskKind::Lm,
    }
}

/// A batch of example indices from a single domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub domain: Domain,
    pub indices: Vec<usize>,
}

/// Shuffles each domain once per epoch and interleaves their batches by
/// picking a random not-yet-exhausted domain at every step.
#[derive(Clone, Debug)]
pub struct DomainSampler {
    sizes: Vec<(Domain, usize)>,
    batch_size: usize,
}

impl DomainSampler {
    pub fn new(sizes: &[(Domain, usize)], batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if sizes.is_empty() {
            return Err(Error::InvalidArgument("no domain to sample from".into()));
        }
        if let Some((d, _)) = sizes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidArgument(format!("domain {d} has no examples")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            batch_size,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.sizes.iter().map(|(_, n)| n.div_ceil(self.batch_size)).sum()
    }

    pub fn epoch(&self, rng: &mut ChaCha8Rng) -> Vec<Batch> {
        let mut queues: Vec<(Domain, std::vec::IntoIter<Vec<usize>>)> = self
            .sizes
            .iter()
            .map(|&(domain, n)| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                let chunks: Vec<Vec<usize>> =
                    order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
                (domain, chunks.into_iter())
            })
            .collect();
        let mut out = Vec::with_capacity(self.batches_per_epoch());
        while !queues.is_empty() {
            let pick = rng.random_range(0..queues.len());
            match queues[pick].1.next() {
                Some(indices) => out.push(Batch {
                    domain: queues[pick].0,
                    indices,
                }),
                None => {
                    queues.remove(pick);
                }
            }
        }
        out
    }
}

/// One merged epoch over furniture and fashion example lists.
pub fn domain_sampler(
    furniture_examples: usize,
    fashion_examples: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>> {
    let sampler = DomainSampler::new(
        &[
            (Domain::Furniture, furniture_examples),
            (Domain::Fashion, fashion_examples),
        ],
        batch_size,
    )?;
    Ok(sampler.epoch(rng))
}
