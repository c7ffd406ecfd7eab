//! Builds deterministic 100-candidate pools for a synthetic corpus and
//! ranks one pool against a response.

use todmt::corpus::{synth_corpus, Domain};
use todmt::decoder::rank_candidates;
use todmt::eval::{candidate_pools, POOL_SIZE};

fn main() -> todmt::Result<()> {
    let corpus = synth_corpus(4, 100, Domain::Furniture)?;
    let pools = candidate_pools(&corpus, POOL_SIZE)?;
    let pool = &pools[3];
    let gold = &pool.candidates[pool.gt_index];
    println!("{}:{} gold at index {}: {gold}", pool.dialogue_id, pool.turn, pool.gt_index);

    for response in [gold.as_str(), "here are the next items .", "i do not know"] {
        let ranks = rank_candidates(response, &pool.candidates);
        let mut order: Vec<usize> = (0..ranks.len()).collect();
        order.sort_by_key(|&i| ranks[i]);
        println!("\nresponse `{response}`: gold ranked {}", ranks[pool.gt_index]);
        for &i in order.iter().take(3) {
            println!("  #{} {}", ranks[i], pool.candidates[i]);
        }
    }
    Ok(())
}
