//! The metric battery on hand-made predictions.

use todmt::corpus::AttributeLabel;
use todmt::metrics::{
    action_metrics, attribute_metrics, belief_metrics, bleu4, retrieval_metrics, sentence_bleu, BleuMode,
    SlotConvention,
};
use todmt::BeliefFrame;

fn main() -> todmt::Result<()> {
    let hyps = ["here is the back of the sofa .", "the chair is now in your cart ."];
    let refs = ["here is the back of the couch .", "the chair is now in your cart ."];
    println!("corpus BLEU-4     {:.4}", bleu4(&hyps, &refs, BleuMode::Corpus));
    println!("sentence BLEU-4   {:.4}", sentence_bleu(hyps[0], refs[0]));

    let action = action_metrics(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]], &[0, 1])?;
    println!("action accuracy   {:.3}, perplexity {:.3}", action.accuracy, action.perplexity);

    let attrs = attribute_metrics(
        &[AttributeLabel::Multi(vec![true, false, true]), AttributeLabel::Multi(vec![false; 3])],
        &[AttributeLabel::Multi(vec![true, false, false]), AttributeLabel::Multi(vec![false, true, false])],
    )?;
    println!("attribute micro-F1 {:.3} ({:?})", attrs.micro_f1, attrs.counts);

    let r = retrieval_metrics(&[0, 1, 3], 100, &[1, 5, 10])?;
    println!("recall {:?}, mean rank {:.3}, MRR {:.4}", r.recall, r.mean_rank, r.mrr);

    // The object slot sits under the wrong intent: pooled scoring credits it,
    // intent-scoped scoring does not.
    let gold = vec![vec![
        BeliefFrame::new("DA:ASK:GET:FURNITURE.price", &[("furniture-O", "OBJECT_1")]),
        BeliefFrame::new("DA:INFORM:PREFER:FURNITURE", &[]),
    ]];
    let pred = vec![vec![
        BeliefFrame::new("DA:ASK:GET:FURNITURE.price", &[]),
        BeliefFrame::new("DA:INFORM:PREFER:FURNITURE", &[("furniture-O", "OBJECT_1")]),
    ]];
    for conv in [SlotConvention::Pooled, SlotConvention::IntentScoped] {
        let b = belief_metrics(&pred, &gold, conv);
        println!(
            "{conv:?}: intent F1 {:.2}, slot F1 {:.2}, joint {:.2}",
            b.intent_f1, b.slot_f1, b.joint_accuracy
        );
    }
    Ok(())
}
