//! Central finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{loss, loss_and_grad, HeadKind, Label, ModelConfig, Objective, Parameters};
use crate::error::Result;
use crate::serializer::Segment;

const EPS: f64 = 1e-5;
const MIN_COORDS: usize = 600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ObjectiveKind {
    Lm,
    Head(HeadKind),
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub objective: ObjectiveKind,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub tensors_covered: usize,
    /// Tensor and flat index of the worst coordinate.
    pub worst: String,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
}

/// Compares analytic gradients with central differences (eps = 1e-5) over
/// at least 600 sampled coordinates spread across every tensor.
///
/// Biases and layer-norm parameters are perturbed away from their usual
/// initial values so that every code path carries a generic gradient.
pub fn grad_check(cfg: &ModelConfig, seed: u64, objective: ObjectiveKind) -> Result<GradCheckReport> {
    let mut params = Parameters::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AAD_C4EC);
    let jitter = Normal::new(0.0, 0.1).expect("valid normal");
    for (name, mut t) in params.tensors_mut() {
        let leaf = name.rsplit('.').next().unwrap_or(&name).to_string();
        if leaf.starts_with('b') || leaf.contains("ln") {
            t.mapv_inplace(|v| v + jitter.sample(&mut rng));
        }
    }

    let n = cfg.max_seq_len.min(12);
    let segs = [Segment::Sys, Segment::User, Segment::Bel, Segment::Mul];
    let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
    let segments: Vec<Segment> = (0..n).map(|_| segs[rng.random_range(0..4)]).collect();
    let targets: Vec<usize> = tokens[1..].to_vec();
    let mut mask: Vec<bool> = (0..n - 1).map(|_| rng.random_bool(0.7)).collect();
    mask[n - 2] = true;
    let tap = rng.random_range(n / 2..n);
    let label = match objective {
        ObjectiveKind::Head(h) if h.multi_label() => {
            Label::MultiHot((0..h.classes()).map(|_| rng.random_bool(0.5)).collect())
        }
        ObjectiveKind::Head(h) => Label::Class(rng.random_range(0..h.classes())),
        ObjectiveKind::Lm => Label::Class(0),
    };
    let obj = match objective {
        ObjectiveKind::Lm => Objective::Lm {
            targets: &targets,
            mask: &mask,
        },
        ObjectiveKind::Head(head) => Objective::Classify {
            head,
            tap,
            label: &label,
        },
    };

    let mut grads = params.zeros_like();
    loss_and_grad(&params, &tokens, &segments, cfg, obj, &mut grads)?;

    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, t.iter().copied().collect()))
        .collect();
    let per_tensor = MIN_COORDS.div_ceil(analytic.len());

    let mut report = GradCheckReport {
        objective,
        max_rel_error: 0.0,
        coords_checked: 0,
        tensors_covered: 0,
        worst: String::new(),
    };
    for (ti, (name, values)) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if values.len() <= per_tensor {
            (0..values.len()).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..values.len())).collect()
        };
        report.tensors_covered += 1;
        for idx in picks {
            let mut probe = |delta: f64| -> Result<f64> {
                {
                    let mut tensors = params.tensors_mut();
                    let slot = &mut tensors[ti].1;
                    slot.as_slice_mut().expect("standard layout")[idx] += delta;
                }
                let value = loss(&params, &tokens, &segments, cfg, obj);
                {
                    let mut tensors = params.tensors_mut();
                    let slot = &mut tensors[ti].1;
                    slot.as_slice_mut().expect("standard layout")[idx] -= delta;
                }
                value
            };
            let up = probe(EPS)?;
            let down = probe(-EPS)?;
            let fd = (up - down) / (2.0 * EPS);
            let err = rel_error(values[idx], fd);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{idx}] analytic={} numeric={fd}", values[idx]);
            }
        }
    }
    Ok(report)
}
