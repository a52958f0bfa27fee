//! One corpus, 16-bit codes, four schemes side by side.
//!
//! LSH needs no training, ITQ rotates the PCA projection, PQ quantizes
//! subvectors and ranks by asymmetric distance, and the deep stack learns
//! its projection from the data.

use deephash::baselines::{
    itq_encode, itq_train, lsh_encode, lsh_train, pq_adc_distances, pq_encode, pq_train,
};
use deephash::eval::{mean_average_precision, rank_all, rank_by_scores, recall_at_r, Ranking};
use deephash::rbm::RbmHyperParams;
use deephash::stack::{train_stack, Architecture};
use deephash::synthetic::{gaussian_clusters, split_retrieval};

const BITS: usize = 16;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = gaussian_clusters(2000, 64, 16, 5.0, 1.0, 51)?;
    let task = split_retrieval(&corpus, 200, 52)?;
    let (db, queries) = (&task.database, &task.queries);

    let mut rows: Vec<(&str, Ranking)> = Vec::new();

    let lsh = lsh_train(db.dim(), BITS, 1)?;
    rows.push(("lsh", rank_all(&lsh_encode(&lsh, queries)?, &lsh_encode(&lsh, db)?)?));

    let (itq, _) = itq_train(db, BITS, 50, 2)?;
    rows.push(("itq", rank_all(&itq_encode(&itq, queries)?, &itq_encode(&itq, db)?)?));

    // 16 bits as 4 blocks of 4-bit centroid ids; ranking uses ADC, not Hamming.
    let pq = pq_train(db, 4, 16, 3)?;
    let codes = pq_encode(&pq, db)?;
    let scores = pq_adc_distances(&pq, queries, &codes)?;
    rows.push(("pq (adc)", rank_by_scores(&scores, db.rows())?));

    let hp = RbmHyperParams {
        epochs: 12,
        batch_size: 50,
        seed: 4,
        ..RbmHyperParams::default()
    };
    let arch = Architecture::new(vec![64, 32, BITS])?;
    let (deep, _) = train_stack(db, &arch, &hp)?;
    rows.push(("deephash", rank_all(&deep.encode(queries)?, &deep.encode(db)?)?));

    println!("{:>10} {:>10} {:>8}", "scheme", "recall@10", "map");
    for (name, ranking) in &rows {
        println!(
            "{:>10} {:>10.3} {:>8.3}",
            name,
            recall_at_r(ranking, &task.ground_truth, 10)?,
            mean_average_precision(ranking, &task.ground_truth)?
        );
    }
    Ok(())
}
