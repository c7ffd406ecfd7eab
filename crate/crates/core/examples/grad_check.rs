//! Compares analytic gradients with central finite differences on a tiny
//! double-precision model, for the LM loss and each classifier head.

use todmt::model::{grad_check, HeadKind, ObjectiveKind};
use todmt::ModelConfig;

fn main() -> todmt::Result<()> {
    let cfg = ModelConfig {
        vocab_size: 50,
        model_dim: 16,
        n_layers: 2,
        n_heads: 2,
        max_seq_len: 12,
        init_std: 0.3,
        ..ModelConfig::default()
    };
    let objectives = std::iter::once(ObjectiveKind::Lm).chain(HeadKind::ALL.into_iter().map(ObjectiveKind::Head));
    for objective in objectives {
        let r = grad_check(&cfg, 0, objective)?;
        println!(
            "{:<40} max rel error {:.2e} over {} coordinates in {} tensors",
            format!("{objective:?}"),
            r.max_rel_error,
            r.coords_checked,
            r.tensors_covered
        );
        println!("{:<40} worst: {}", "", r.worst);
    }
    Ok(())
}
