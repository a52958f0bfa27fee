//! Full pipeline: pretrain, estimate margins from the pretrained codes,
//! fine-tune with the double-margin loss, compare retrieval before/after.

use deephash::eval::{rank_all, recall_at_r};
use deephash::io::{Pair, PairSet};
use deephash::rbm::RbmHyperParams;
use deephash::siamese::{estimate_margins, finetune, FinetuneConfig};
use deephash::stack::{train_stack, Architecture};
use deephash::synthetic::{gaussian_clusters, matching_pairs, split_retrieval};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = gaussian_clusters(3000, 128, 20, 0.5, 1.0, 31)?;
    let task = split_retrieval(&corpus, 300, 32)?;

    let hp = RbmHyperParams {
        learning_rate: 0.6,
        epochs: 30,
        batch_size: 100,
        seed: 3,
        ..RbmHyperParams::default()
    };
    let arch = Architecture::new(vec![128, 16])?;
    let (pretrained, _) = train_stack(&task.database, &arch, &hp)?;
    println!("pretrained {} ({} layer)", arch, pretrained.depth());

    // Labeled pairs over database rows: sampled same-cluster matching pairs
    // plus twice as many cross-cluster non-matching ones.
    let matching = matching_pairs(&task.db_labels, 1000, 33)?;
    let mut all = matching.pairs().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    while all.len() < 3 * matching.len() {
        let a = rng.random_range(0..task.db_labels.len());
        let b = rng.random_range(0..task.db_labels.len());
        if task.db_labels[a] != task.db_labels[b] {
            all.push(Pair { a, b, matching: false });
        }
    }
    let pairs = PairSet::new(all, task.database.rows())?;
    println!(
        "{} training pairs ({} matching / {} non-matching)",
        pairs.len(),
        pairs.matching_count(),
        pairs.len() - pairs.matching_count()
    );

    let margins = estimate_margins(&pretrained, &pairs, &task.database)?;
    for l in 0..pretrained.depth() {
        println!("layer {} margin m1 = m2 = {:.3}", l + 1, margins.m1()[l]);
    }

    let fc = FinetuneConfig {
        learning_rate: 1.0,
        iterations: 500,
        batch: 256,
        seed: 35,
    };
    let (tuned, log) = finetune(&pretrained, &pairs, &task.database, &margins, &fc)?;
    println!(
        "loss {:.4} -> {:.4} over {} iterations",
        log.first().unwrap().total_loss,
        log.last().unwrap().total_loss,
        log.len() - 1
    );

    let db_before = pretrained.encode(&task.database)?;
    let q_before = pretrained.encode(&task.queries)?;
    let db_after = tuned.encode(&task.database)?;
    let q_after = tuned.encode(&task.queries)?;
    let before = recall_at_r(&rank_all(&q_before, &db_before)?, &task.ground_truth, 10)?;
    let after = recall_at_r(&rank_all(&q_after, &db_after)?, &task.ground_truth, 10)?;
    println!("recall@10: {before:.3} pretrained -> {after:.3} fine-tuned");
    Ok(())
}
