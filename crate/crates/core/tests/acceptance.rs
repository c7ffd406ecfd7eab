//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so the report prints in order; exits non-zero if
//! any criterion fails. Tolerances are the constants below.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use todmt::artifacts::train_to_dir;
use todmt::config::Config;
use todmt::corpus::{synth_corpus, synth_corpus_with, ApiAction, AttributeLabel, SynthStyle};
use todmt::decoder::rank_candidates;
use todmt::eval::{candidate_pools, evaluate, EvalOptions, EvalOutput, POOL_SIZE, RECALL_KS};
use todmt::metrics::{
    action_metrics, attribute_metrics, belief_metrics, bleu4, f1, retrieval_metrics, sentence_bleu, BleuMode,
    Counts, SlotConvention,
};
use todmt::model::{forward, grad_check, loss, HeadKind, Objective, ObjectiveKind};
use todmt::serializer::{format_belief, parse_belief, render_example, split_intent, IntentVocab, Segment};
use todmt::trainer::{adamw_step, task_sampler, AdamWConfig, DomainSampler, OptimizerState, TaskKind};
use todmt::{BeliefFrame, Dialogue, Domain, Features, ModelConfig, Parameters, SerializerConfig, Turn, VisualObject};

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const CAUSALITY_TRIALS: usize = 100;
const MASK_TRIALS: usize = 100;
const ROUND_TRIPS: usize = 1000;
const ORACLE_TOL: f64 = 1e-9;
const ORACLE_INSTANCES: usize = 200;
const SAMPLER_DRAWS: usize = 30_000;
const SAMPLER_TOL: f64 = 0.02;
const COVERAGE_EPOCHS: usize = 100;
const ADAMW_TOL: f64 = 1e-12;
const OVERFIT_MAX_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const OVERFIT_JOINT: f64 = 0.95;
const OVERFIT_ACTION: f64 = 0.95;
const OVERFIT_BLEU: f64 = 0.8;
const ABLATION_MARGIN: f64 = 0.05;

type Outcome = Result<String, String>;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        model_dim: 16,
        n_layers: 2,
        n_heads: 2,
        max_seq_len: 12,
        init_std: 0.3,
        ..ModelConfig::default()
    }
}

fn random_segments(rng: &mut ChaCha8Rng, n: usize) -> Vec<Segment> {
    const ALL: [Segment; 4] = [Segment::Sys, Segment::User, Segment::Bel, Segment::Mul];
    (0..n).map(|_| ALL[rng.random_range(0..4)]).collect()
}

fn c1_gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = tiny_model();
    let mut worst = 0.0f64;
    let kinds = std::iter::once(ObjectiveKind::Lm).chain(HeadKind::ALL.into_iter().map(ObjectiveKind::Head));
    for (i, kind) in kinds.enumerate() {
        let r = grad_check(&cfg, 100 + i as u64, kind).map_err(|e| e.to_string())?;
        if r.coords_checked < 500 {
            return Err(format!("{kind:?}: only {} coordinates", r.coords_checked));
        }
        if r.max_rel_error > GRAD_TOL {
            return Err(format!("{kind:?}: {:.3e} at {}", r.max_rel_error, r.worst));
        }
        worst = worst.max(r.max_rel_error);
    }
    let took = start.elapsed();
    if took > GRAD_BUDGET {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("max relative error {worst:.2e} over LM + 4 heads in {took:.1?}"))
}

fn c2_causality() -> Outcome {
    let cfg = ModelConfig {
        max_seq_len: 16,
        ..tiny_model()
    };
    let params = Parameters::init(&cfg, 5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..CAUSALITY_TRIALS {
        let n = rng.random_range(2..=cfg.max_seq_len);
        let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
        let segs = random_segments(&mut rng, n);
        let j = rng.random_range(1..n);
        let mut changed = tokens.clone();
        changed[j] = (tokens[j] + rng.random_range(1..cfg.vocab_size)) % cfg.vocab_size;
        let a = forward(&params, &tokens, &segs, &cfg).map_err(|e| e.to_string())?.logits.unwrap();
        let b = forward(&params, &changed, &segs, &cfg).map_err(|e| e.to_string())?.logits.unwrap();
        for t in 0..j {
            if a.row(t).iter().zip(b.row(t)).any(|(x, y)| x.to_bits() != y.to_bits()) {
                return Err(format!("trial {trial}: row {t} moved after changing token {j}"));
            }
        }
    }
    Ok(format!("{CAUSALITY_TRIALS} trials, earlier rows bit-identical"))
}

fn c3_masking() -> Outcome {
    let cfg = ModelConfig {
        max_seq_len: 16,
        ..tiny_model()
    };
    let params = Parameters::init(&cfg, 6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..MASK_TRIALS {
        let n = rng.random_range(3..=cfg.max_seq_len);
        let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
        let segs = random_segments(&mut rng, n);
        let targets: Vec<usize> = tokens[1..].to_vec();
        let mut mask: Vec<bool> = (0..n - 1).map(|_| rng.random_bool(0.5)).collect();
        mask[rng.random_range(0..n - 1)] = true;
        let mut scrambled = targets.clone();
        for (t, m) in scrambled.iter_mut().zip(&mask) {
            if !m {
                *t = rng.random_range(0..cfg.vocab_size);
            }
        }
        let obj = |targets| Objective::Lm { targets, mask: &mask };
        let a = loss(&params, &tokens, &segs, &cfg, obj(&targets)).map_err(|e| e.to_string())?;
        let b = loss(&params, &tokens, &segs, &cfg, obj(&scrambled)).map_err(|e| e.to_string())?;
        if a.to_bits() != b.to_bits() {
            return Err(format!("trial {trial}: {a} vs {b}"));
        }
    }

    let ser = SerializerConfig {
        max_tokens: 4096,
        ..SerializerConfig::default()
    };
    let mut corpus = synth_corpus(31, 32, Domain::Furniture).map_err(|e| e.to_string())?;
    corpus.extend(synth_corpus(31, 32, Domain::Fashion).map_err(|e| e.to_string())?);
    let mut examples = 0;
    for d in &corpus {
        for t in 0..d.turns.len() {
            let r = render_example(d, t, &ser).map_err(|e| e.to_string())?;
            let user = (0..r.prompt_len - 1)
                .rev()
                .find(|&i| r.tokens[i] == "User" && r.tokens[i + 1] == ":")
                .ok_or_else(|| format!("{} turn {t}: no `User :`", d.dialogue_id))?;
            let boundary_ok = r.loss_mask.iter().enumerate().all(|(i, &m)| m == (i >= user));
            if !boundary_ok {
                return Err(format!("{} turn {t}: mask boundary is not at position {user}", d.dialogue_id));
            }
            examples += 1;
        }
    }
    Ok(format!(
        "{MASK_TRIALS} scrambles bit-identical; boundary exact on {examples} examples of {} dialogues",
        corpus.len()
    ))
}

fn visual(id: &str, pos: &str, decor: [&str; 2]) -> VisualObject {
    VisualObject {
        object_id: id.into(),
        position: pos.into(),
        colors: vec!["White".into()],
        class_name: "Kitchen Islands".into(),
        decor_styles: decor.iter().map(|s| s.to_string()).collect(),
        extra: BTreeMap::new(),
    }
}

fn furniture_turn(user: &str, system: &str, belief: Vec<BeliefFrame>) -> Turn {
    Turn {
        user_utterance: user.into(),
        system_response: system.into(),
        action: ApiAction {
            action: 0,
            attributes: AttributeLabel::Single(0),
        },
        visual: vec![
            visual("OBJECT_0", "left", ["Rustic", "Sophisticated"]),
            visual("OBJECT_1", "center", ["Traditional", "Modern"]),
        ],
        belief,
    }
}

fn c4_serializer_golden() -> Outcome {
    let dialogue = Dialogue {
        dialogue_id: "kitchen".into(),
        domain: Domain::Furniture,
        turns: vec![
            furniture_turn("show me kitchen islands", "Can you see now?", vec![]),
            furniture_turn(
                "no I cannot.  can you tell me about them?",
                "This is our Hedon Kitchen Island with Stainless Steel Top. It featuresa natural wood countertop.",
                vec![],
            ),
            furniture_turn(
                "and what are the dimensions?",
                "The width is 52 inches, depth 18 inches, and height is 36 inches.",
                vec![BeliefFrame::new("DA:ASK:GET:FURNITURE.dimensions", &[])],
            ),
        ],
    };
    let cfg = SerializerConfig {
        history_turns: 2,
        features: Features {
            split_intent: false,
            segment_embedding: true,
            add_action: false,
            mask_history_loss: true,
            multi_domain: false,
        },
        max_tokens: 512,
    };
    let scene = "<SOM> OBJECT_0 : pos left color [ White ] class_name Kitchen Islands decor_style [ Rustic Sophisticated ] \
                 OBJECT_1 : pos center color [ White ] class_name Kitchen Islands decor_style [ Traditional Modern ] <EOM>";
    let masked = format!(
        "System : Can you see now? User : no I cannot.  can you tell me about them? {scene} \
         System : This is our Hedon Kitchen Island with Stainless Steel Top. It featuresa natural wood countertop."
    );
    let trained = format!(
        "User : and what are the dimensions? {scene} => Belief State : DA:ASK:GET:FURNITURE.dimensions [  ] <EOB> \
         The width is 52 inches, depth 18 inches, and height is 36 inches. <EOS>"
    );
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let (masked, trained) = (words(&masked), words(&trained));

    let r = render_example(&dialogue, 2, &cfg).map_err(|e| e.to_string())?;
    let expected: Vec<String> = masked.iter().chain(&trained).cloned().collect();
    if r.tokens != expected {
        return Err(format!("rendered `{}`", r.text()));
    }
    let expected_mask: Vec<bool> = (0..expected.len()).map(|i| i >= masked.len()).collect();
    if r.loss_mask != expected_mask {
        return Err("italic prefix is not exactly the masked span".into());
    }
    let split = split_intent("DA:ASK:GET:FURNITURE.dimensions").map_err(|e| e.to_string())?;
    if split != "intent ask get furniture dimensions" {
        return Err(format!("split intent gave `{split}`"));
    }
    Ok(format!("{} tokens verbatim, {} masked; split intent verbatim", expected.len(), masked.len()))
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[u8], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(len);
    (0..n).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
}

fn c5_belief_round_trip() -> Outcome {
    const UPPER: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ_";
    const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    const VALUE: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJ0123456789_-'?";
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // Intents whose split forms collide (`DA:A:B` and `DA:A.b`) cannot both
    // round-trip, so the pool keeps the first of each split form.
    let mut by_split = BTreeMap::new();
    while by_split.len() < 40 {
        let mut intent = String::from("DA");
        for _ in 0..rng.random_range(1..=3) {
            intent.push(':');
            intent.push_str(&random_word(&mut rng, UPPER, 1..=8));
        }
        if rng.random_bool(0.5) {
            intent.push('.');
            intent.push_str(&random_word(&mut rng, LOWER, 1..=8));
        }
        let split = split_intent(&intent).map_err(|e| e.to_string())?;
        by_split.entry(split).or_insert(intent);
    }
    let pool: Vec<String> = by_split.into_values().collect();
    let vocab = IntentVocab::from_intents(pool.iter());

    let mut checked = 0;
    for si in [true, false] {
        let cfg = SerializerConfig {
            features: Features {
                split_intent: si,
                ..Features::default()
            },
            ..SerializerConfig::default()
        };
        for trial in 0..ROUND_TRIPS {
            let frames: Vec<BeliefFrame> = (0..rng.random_range(0..=4))
                .map(|_| BeliefFrame {
                    intent: pool.choose(&mut rng).unwrap().clone(),
                    slots: (0..rng.random_range(0..=3))
                        .map(|_| {
                            let key = format!("{}-{}", random_word(&mut rng, LOWER, 1..=6), random_word(&mut rng, VALUE, 1..=4));
                            let value = (0..rng.random_range(1..=3))
                                .map(|_| random_word(&mut rng, VALUE, 1..=6))
                                .collect::<Vec<_>>()
                                .join(" ");
                            (key, value)
                        })
                        .collect(),
                })
                .collect();
            let text = format_belief(&frames, &cfg);
            let back = parse_belief(&text, &cfg, &vocab);
            if back != frames {
                return Err(format!("SI {si}, trial {trial}: `{text}` parsed to {back:?}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} lists round-trip (SI on and off)"))
}

// Independent oracles: plain loops over owned n-gram vectors, products
// instead of log sums, linear-scan multiset matching.

fn oracle_ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn oracle_clipped(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let h = oracle_ngrams(hyp, n);
    let mut available = oracle_ngrams(reference, n);
    let mut matched = 0;
    for g in &h {
        if let Some(pos) = available.iter().position(|r| r == g) {
            available.swap_remove(pos);
            matched += 1;
        }
    }
    (matched, h.len())
}

fn oracle_bleu(pairs: &[(Vec<String>, Vec<String>)], smooth: bool) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in pairs {
        for n in 0..4 {
            let (m, t) = oracle_clipped(h, rf, n + 1);
            matched[n] += m;
            total[n] += t;
        }
        c += h.len();
        r += rf.len();
    }
    if c == 0 {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 0..4 {
        let add = usize::from(smooth && n > 0);
        let (m, t) = (matched[n] + add, total[n] + add);
        if m == 0 {
            return 0.0;
        }
        product *= m as f64 / t as f64;
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * product.powf(0.25)
}

fn random_sentence(rng: &mut ChaCha8Rng, words: &[&str], len: std::ops::RangeInclusive<usize>) -> Vec<String> {
    let n = rng.random_range(len);
    (0..n).map(|_| words.choose(rng).unwrap().to_string()).collect()
}

fn oracle_counts<T: PartialEq + Clone>(pred: &[T], gold: &[T]) -> Counts {
    let mut left = gold.to_vec();
    let mut tp = 0;
    for p in pred {
        if let Some(i) = left.iter().position(|g| g == p) {
            left.remove(i);
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

fn oracle_f1(c: Counts) -> f64 {
    if c.tp + c.fp + c.fn_ == 0 {
        return 1.0;
    }
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let recall = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn close(what: &str, i: usize, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= ORACLE_TOL {
        Ok(())
    } else {
        Err(format!("{what} instance {i}: {got} vs oracle {want}"))
    }
}

fn c6_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words = ["the", "a", "red", "chair", "is", "here", "of", "sofa"];
    let e = |e: todmt::Error| e.to_string();

    for i in 0..ORACLE_INSTANCES {
        let n = rng.random_range(1..=5);
        let pairs: Vec<(Vec<String>, Vec<String>)> = (0..n)
            .map(|_| (random_sentence(&mut rng, &words, 0..=12), random_sentence(&mut rng, &words, 1..=12)))
            .collect();
        let hyps: Vec<String> = pairs.iter().map(|(h, _)| h.join(" ")).collect();
        let refs: Vec<String> = pairs.iter().map(|(_, r)| r.join(" ")).collect();
        close("corpus BLEU", i, bleu4(&hyps, &refs, BleuMode::Corpus), oracle_bleu(&pairs, false))?;
        close("sentence BLEU", i, sentence_bleu(&hyps[0], &refs[0]), oracle_bleu(&pairs[..1], true))?;
    }

    for i in 0..ORACLE_INSTANCES {
        let pool = rng.random_range(1..=120);
        let ranks: Vec<usize> = (0..rng.random_range(1..=50)).map(|_| rng.random_range(0..pool)).collect();
        let m = retrieval_metrics(&ranks, pool, &RECALL_KS).map_err(e)?;
        for &k in &RECALL_KS {
            let mut hits = 0;
            for &r in &ranks {
                if r < k {
                    hits += 1;
                }
            }
            close("recall", i, m.recall_at(k).unwrap(), hits as f64 / ranks.len() as f64)?;
        }
        let positions: Vec<f64> = ranks.iter().map(|&r| (r + 1) as f64).collect();
        close("mean rank", i, m.mean_rank, positions.iter().sum::<f64>() / positions.len() as f64)?;
        let reciprocal: f64 = positions.iter().map(|p| p.recip()).sum();
        close("MRR", i, m.mrr, reciprocal / positions.len() as f64)?;
    }

    for i in 0..ORACLE_INSTANCES {
        let classes = rng.random_range(2..=7);
        let n = rng.random_range(1..=30);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            })
            .collect();
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let m = action_metrics(&rows, &gold).map_err(e)?;
        let product: f64 = rows.iter().zip(&gold).map(|(r, &g)| r[g]).product();
        close("perplexity", i, m.perplexity, product.powf(-1.0 / n as f64))?;
    }

    let intents = ["DA:A", "DA:B:C", "DA:D.e"];
    let keys = ["k1", "k2"];
    let values = ["x", "y", "z w"];
    let random_frames = |rng: &mut ChaCha8Rng| -> Vec<BeliefFrame> {
        (0..rng.random_range(0..=3))
            .map(|_| {
                let slots: Vec<(&str, &str)> = (0..rng.random_range(0..=2))
                    .map(|_| (*keys.choose(rng).unwrap(), *values.choose(rng).unwrap()))
                    .collect();
                BeliefFrame::new(*intents.choose(rng).unwrap(), &slots)
            })
            .collect()
    };
    for i in 0..ORACLE_INSTANCES {
        let turns = rng.random_range(1..=6);
        let pred: Vec<Vec<BeliefFrame>> = (0..turns).map(|_| random_frames(&mut rng)).collect();
        let gold: Vec<Vec<BeliefFrame>> = (0..turns).map(|_| random_frames(&mut rng)).collect();
        for conv in [SlotConvention::Pooled, SlotConvention::IntentScoped] {
            let m = belief_metrics(&pred, &gold, conv);
            let (mut ic, mut sc) = (Counts::default(), Counts::default());
            for (p, g) in pred.iter().zip(&gold) {
                let it = |fs: &[BeliefFrame]| fs.iter().map(|f| f.intent.clone()).collect::<Vec<_>>();
                let st = |fs: &[BeliefFrame]| {
                    fs.iter()
                        .flat_map(|f| {
                            f.slots.iter().map(move |(k, v)| {
                                let owner = if conv == SlotConvention::IntentScoped { f.intent.clone() } else { String::new() };
                                (owner, k.clone(), v.clone())
                            })
                        })
                        .collect::<Vec<_>>()
                };
                ic += oracle_counts(&it(p), &it(g));
                sc += oracle_counts(&st(p), &st(g));
            }
            close("intent F1", i, m.intent_f1, oracle_f1(ic))?;
            close("slot F1", i, m.slot_f1, oracle_f1(sc))?;
            close("F1 of counts", i, f1(sc), oracle_f1(sc))?;
        }
        let flags = |rng: &mut ChaCha8Rng| AttributeLabel::Multi((0..7).map(|_| rng.random_bool(0.3)).collect());
        let p: Vec<AttributeLabel> = (0..turns).map(|_| flags(&mut rng)).collect();
        let g: Vec<AttributeLabel> = (0..turns).map(|_| flags(&mut rng)).collect();
        let mut c = Counts::default();
        for (a, b) in p.iter().zip(&g) {
            let set = |l: &AttributeLabel| match l {
                AttributeLabel::Multi(f) => (0..7).filter(|&j| f[j]).collect::<Vec<usize>>(),
                AttributeLabel::Single(x) => vec![*x],
            };
            c += oracle_counts(&set(a), &set(b));
        }
        close("attribute F1", i, attribute_metrics(&p, &g).map_err(e)?.micro_f1, oracle_f1(c))?;
    }

    let hand = retrieval_metrics(&[0, 1, 3], POOL_SIZE, &RECALL_KS).map_err(e)?;
    let exact = hand.recall_at(1) == Some(1.0 / 3.0) && hand.mean_rank == 7.0 / 3.0 && hand.mrr == 7.0 / 12.0;
    if !exact {
        return Err(format!("ranks [0,1,3] gave {hand:?}"));
    }
    Ok(format!(
        "BLEU, retrieval, perplexity and F1 agree with oracles on {ORACLE_INSTANCES} instances each; hand case exact"
    ))
}

fn overfit_config() -> Config {
    let mut config = Config::default();
    config.train.lr = 3e-3;
    config.train.lm_epochs = 30;
    config.train.mt_epochs = 6;
    config.train.batch_size = 2;
    config
}

fn two_domain(seed: u64, style: SynthStyle) -> Result<(Vec<Dialogue>, Vec<Dialogue>), String> {
    Ok((
        synth_corpus_with(seed, 32, Domain::Furniture, style).map_err(|e| e.to_string())?,
        synth_corpus_with(seed, 32, Domain::Fashion, style).map_err(|e| e.to_string())?,
    ))
}

struct OverfitRun {
    corpus: Vec<Dialogue>,
    epochs: usize,
    took: Duration,
    eval: EvalOutput,
}

fn train_and_eval(config: Config, style: SynthStyle, dir: &Path) -> Result<OverfitRun, String> {
    let (furn, fash) = two_domain(7, style)?;
    let start = Instant::now();
    let run = train_to_dir(&[&furn, &fash], config, dir, None, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let corpus: Vec<Dialogue> = furn.into_iter().chain(fash).collect();
    let eval = evaluate(&run.model, &corpus, None, &EvalOptions::default()).map_err(|e| e.to_string())?;
    Ok(OverfitRun {
        epochs: run.log.len(),
        corpus,
        took,
        eval,
    })
}

fn c7_verbatim_candidate(run: &OverfitRun) -> Outcome {
    let pools = candidate_pools(&run.corpus, POOL_SIZE).map_err(|e| e.to_string())?;
    let mut ranks = Vec::new();
    for (pool, pred) in pools.iter().zip(&run.eval.predictions) {
        if (pool.dialogue_id.as_str(), pool.turn) != (pred.dialogue_id.as_str(), pred.turn) {
            return Err(format!("pool {}:{} misaligned with predictions", pool.dialogue_id, pool.turn));
        }
        if pred.response.split_whitespace().next().is_none() {
            return Err(format!("{}:{} generated an empty response", pred.dialogue_id, pred.turn));
        }
        let mut candidates: Vec<&str> = pool
            .candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| *i != pool.gt_index && c.as_str() != pred.response)
            .map(|(_, c)| c.as_str())
            .collect();
        let gt = pool.gt_index.min(candidates.len());
        candidates.insert(gt, &pred.response);
        let rank = rank_candidates(&pred.response, &candidates)[gt];
        if rank != 0 {
            return Err(format!("{}:{} verbatim candidate ranked {rank}", pred.dialogue_id, pred.turn));
        }
        ranks.push(rank);
    }
    let m = retrieval_metrics(&ranks, POOL_SIZE, &RECALL_KS).map_err(|e| e.to_string())?;
    if m.recall_at(1) != Some(1.0) || m.mrr != 1.0 {
        return Err(format!("{m:?}"));
    }
    Ok(format!("rank 0 on all {} turns; R@1 = MRR = 1", ranks.len()))
}

fn c8_schedulers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut summary = Vec::new();
    for (mt_epoch, want) in [(0usize, [1.0 / 3.0; 3]), (5, [0.0, 1.0 / 3.0, 2.0 / 3.0])] {
        let mut counts = [0usize; 3];
        for _ in 0..SAMPLER_DRAWS {
            let task = task_sampler(mt_epoch, 20, &mut rng);
            let slot = match task {
                TaskKind::ApiAction => 0,
                TaskKind::ApiAttribute => 1,
                TaskKind::Lm => 2,
            };
            counts[slot] += 1;
        }
        let freq = counts.map(|c| c as f64 / SAMPLER_DRAWS as f64);
        if freq.iter().zip(&want).any(|(f, w)| (f - w).abs() > SAMPLER_TOL) {
            return Err(format!("mt epoch {mt_epoch}: action/attribute/LM frequencies {freq:?}"));
        }
        summary.push(format!("epoch {mt_epoch} {:.3}/{:.3}/{:.3}", freq[0], freq[1], freq[2]));
    }

    let sizes = [(Domain::Furniture, 37usize), (Domain::Fashion, 23usize)];
    let sampler = DomainSampler::new(&sizes, 4).map_err(|e| e.to_string())?;
    let mut expected: Vec<(Domain, usize)> = sizes.iter().flat_map(|&(d, n)| (0..n).map(move |i| (d, i))).collect();
    expected.sort();
    for epoch in 0..COVERAGE_EPOCHS {
        let mut seen: Vec<(Domain, usize)> = sampler
            .epoch(&mut rng)
            .into_iter()
            .flat_map(|b| b.indices.into_iter().map(move |i| (b.domain, i)))
            .collect();
        seen.sort();
        if seen != expected {
            return Err(format!("epoch {epoch} did not cover every example exactly once"));
        }
    }
    Ok(format!("{}; exact coverage over {COVERAGE_EPOCHS} epochs", summary.join(", ")))
}

fn c9_adamw() -> Outcome {
    // theta, m, v after each step on f = (theta - 3)^2 / 2 from theta = 1,
    // lr 0.1, betas (0.9, 0.999), eps 1e-8, weight decay 0.01.
    const TABLE: [[f64; 3]; 3] = [
        [1.0989999995, -0.19999999999999996, 0.0040000000000000036],
        [1.1977365527636896, -0.37010000004999993, 0.0076098010019010065],
        [1.2960879477227727, -0.513316344768631, 0.010850344734143218],
    ];
    let cfg = ModelConfig {
        vocab_size: 10,
        model_dim: 8,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 4,
        ..ModelConfig::default()
    };
    let opt = AdamWConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.01,
    };
    let mut params = Parameters::zeros(&cfg);
    params.lnf_b[0] = 1.0;
    let mut state = OptimizerState::new(&params);
    for (step, row) in TABLE.iter().enumerate() {
        let mut grads = params.zeros_like();
        grads.lnf_b[0] = params.lnf_b[0] - 3.0;
        adamw_step(&mut params, &grads, &mut state, 0.1, &opt).map_err(|e| e.to_string())?;
        let got = [params.lnf_b[0], state.m.lnf_b[0], state.v.lnf_b[0]];
        if got.iter().zip(row).any(|(g, w)| (g - w).abs() > ADAMW_TOL) {
            return Err(format!("step {}: {got:?} vs {row:?}", step + 1));
        }
    }

    let mut params = Parameters::init(&cfg, 9).map_err(|e| e.to_string())?;
    let start = params.clone();
    let zero = params.zeros_like();
    let mut state = OptimizerState::new(&params);
    let (lr, steps) = (0.3, 4);
    for _ in 0..steps {
        adamw_step(&mut params, &zero, &mut state, lr, &opt).map_err(|e| e.to_string())?;
    }
    let factor = (1.0f64 - lr * opt.weight_decay).powi(steps);
    for ((name, a), (_, b)) in params.tensors().iter().zip(start.tensors()) {
        if a.iter().zip(b.iter()).any(|(x, y)| (x - y * factor).abs() > ADAMW_TOL) {
            return Err(format!("`{name}` did not shrink by (1 - lr*wd)^{steps}"));
        }
    }
    Ok("three steps match the table; zero-gradient decay is multiplicative".into())
}

fn c10_overfit(run: &OverfitRun) -> Outcome {
    let report = &run.eval.report;
    let mut problems = Vec::new();
    if run.epochs > OVERFIT_MAX_EPOCHS {
        problems.push(format!("{} epochs", run.epochs));
    }
    if run.took > OVERFIT_BUDGET {
        problems.push(format!("training took {:?}", run.took));
    }
    if report.overall.joint_accuracy < OVERFIT_JOINT {
        problems.push(format!("joint {:.4}", report.overall.joint_accuracy));
    }
    if report.overall.bleu4 < OVERFIT_BLEU {
        problems.push(format!("BLEU {:.4}", report.overall.bleu4));
    }
    for (domain, r) in &report.per_domain {
        if r.action_accuracy < OVERFIT_ACTION {
            problems.push(format!("{domain} action accuracy {:.4}", r.action_accuracy));
        }
    }
    let actions: Vec<String> = report
        .per_domain
        .iter()
        .map(|(d, r)| format!("{d} {:.3}", r.action_accuracy))
        .collect();
    let summary = format!(
        "{} epochs in {:.0?}: joint {:.3}, BLEU {:.3}, action {}",
        run.epochs,
        run.took,
        report.overall.joint_accuracy,
        report.overall.bleu4,
        actions.join(", ")
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary} ({})", problems.join("; ")))
    }
}

fn c11_ablation() -> Outcome {
    let with = tempfile::tempdir().map_err(|e| e.to_string())?;
    let without = tempfile::tempdir().map_err(|e| e.to_string())?;
    let on = train_and_eval(overfit_config(), SynthStyle::ActionConditioned, with.path())?;
    let mut config = overfit_config();
    config.serializer.features.add_action = false;
    let off = train_and_eval(config, SynthStyle::ActionConditioned, without.path())?;
    let (a, b) = (on.eval.report.overall.bleu4, off.eval.report.overall.bleu4);
    let msg = format!("BLEU {a:.3} with action tokens, {b:.3} without (drop {:.3})", a - b);
    if a - b >= ABLATION_MARGIN {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.insert(name, std::fs::read(entry.path()).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn c12_determinism() -> Outcome {
    let furn = synth_corpus(12, 6, Domain::Furniture).map_err(|e| e.to_string())?;
    let fash = synth_corpus(12, 6, Domain::Fashion).map_err(|e| e.to_string())?;
    let dev: Vec<Dialogue> = furn.iter().chain(&fash).cloned().collect();
    let mut config = Config::default();
    config.model.model_dim = 16;
    config.train.lm_epochs = 2;
    config.train.mt_epochs = 3;
    config.train.lr = 3e-3;
    let mut files = Vec::new();
    let mut reports = Vec::new();
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for dir in &dirs {
        let run = train_to_dir(&[&furn, &fash], config.clone(), dir.path(), Some(&dev), &EvalOptions::default())
            .map_err(|e| e.to_string())?;
        let pools = candidate_pools(&dev, POOL_SIZE).map_err(|e| e.to_string())?;
        let out = evaluate(&run.model, &dev, Some(&pools), &EvalOptions::default()).map_err(|e| e.to_string())?;
        reports.push(out.report.to_json().map_err(|e| e.to_string())?);
        files.push(dir_bytes(dir.path())?);
    }
    if files[0].keys().ne(files[1].keys()) {
        return Err("run directories list different files".into());
    }
    for (name, bytes) in &files[0] {
        if files[1][name] != *bytes {
            return Err(format!("`{name}` differs between runs"));
        }
    }
    if reports[0] != reports[1] {
        return Err("evaluation reports differ".into());
    }
    let checkpoints = files[0].keys().filter(|k| k.ends_with(".bin")).count();
    Ok(format!(
        "{} files ({checkpoints} checkpoints) and the report byte-identical across two runs",
        files[0].len()
    ))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("[PASS] {id:>2} {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {id:>2} {name}: {detail}");
            }
        }
    };
    report(1, "gradient check", c1_gradient_check());
    report(2, "causality", c2_causality());
    report(3, "loss masking", c3_masking());
    report(4, "serializer golden", c4_serializer_golden());
    report(5, "belief round trip", c5_belief_round_trip());
    report(6, "metric oracles", c6_metric_oracles());

    let dir = tempfile::tempdir().expect("temp dir");
    let overfit = train_and_eval(overfit_config(), SynthStyle::Templated, dir.path());
    report(
        7,
        "verbatim candidate",
        overfit.as_ref().map_err(Clone::clone).and_then(c7_verbatim_candidate),
    );
    report(8, "schedulers", c8_schedulers());
    report(9, "AdamW oracle", c9_adamw());
    report(10, "overfit", overfit.as_ref().map_err(Clone::clone).and_then(c10_overfit));
    report(11, "action-token ablation", c11_ablation());
    report(12, "determinism", c12_determinism());

    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
