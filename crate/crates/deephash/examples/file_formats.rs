//! Tour of every on-disk format: write each artifact, read it back, and
//! confirm the round trip is exact. Binary files carry a 4-byte magic;
//! pair lists and ground truth are line-oriented text.

use std::fs;
use std::path::Path;

use deephash::baselines::{
    itq_train, load_itq, load_lsh, load_pq, load_pq_codes, lsh_train, pq_encode, pq_train,
    save_itq, save_lsh, save_pq, save_pq_codes,
};
use deephash::io::{
    expand_with_nonmatching, load_bit_matrix, load_feature_matrix, load_pairs, save_bit_matrix,
    save_feature_matrix, save_pairs,
};
use deephash::rbm::RbmHyperParams;
use deephash::stack::{load_model, save_model, train_stack, Architecture};
use deephash::synthetic::{gaussian_clusters, matching_pairs, split_retrieval};

fn describe(path: &Path) -> Result<String, Box<dyn std::error::Error>> {
    let bytes = fs::read(path)?;
    let head = if bytes.len() >= 4 && bytes[..4].iter().all(|b| b.is_ascii_graphic()) {
        format!("magic {:?}", std::str::from_utf8(&bytes[..4])?)
    } else {
        "text".to_string()
    };
    Ok(format!("{} bytes, {head}", bytes.len()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("deephash_formats_example");
    fs::create_dir_all(&dir)?;

    let corpus = gaussian_clusters(300, 32, 6, 5.0, 1.0, 61)?;
    let task = split_retrieval(&corpus, 50, 62)?;

    let features = dir.join("features.bin");
    save_feature_matrix(&features, &corpus.features)?;
    assert_eq!(load_feature_matrix(&features)?, corpus.features);
    println!("features.bin      {}", describe(&features)?);

    let hp = RbmHyperParams {
        epochs: 3,
        batch_size: 50,
        ..RbmHyperParams::default()
    };
    let (model, _) = train_stack(&corpus.features, &Architecture::new(vec![32, 8])?, &hp)?;
    let model_path = dir.join("model.bin");
    save_model(&model_path, &model)?;
    assert_eq!(load_model(&model_path)?, model);
    println!("model.bin         {} (layer records inside carry their own magic)", describe(&model_path)?);

    let codes = model.encode(&corpus.features)?;
    let codes_path = dir.join("codes.bin");
    save_bit_matrix(&codes_path, &codes)?;
    assert_eq!(load_bit_matrix(&codes_path)?, codes);
    println!("codes.bin         {}", describe(&codes_path)?);

    let matching = matching_pairs(&corpus.labels, 40, 63)?;
    let pairs = expand_with_nonmatching(&matching, corpus.features.rows(), 64)?;
    let pairs_path = dir.join("pairs.txt");
    save_pairs(&pairs_path, &pairs)?;
    assert_eq!(load_pairs(&pairs_path, corpus.features.rows())?, pairs);
    println!("pairs.txt         {} (a b label per line)", describe(&pairs_path)?);

    let gt_path = dir.join("ground_truth.txt");
    task.ground_truth.save(&gt_path)?;
    let gt = deephash::eval::GroundTruth::load(&gt_path, task.database.rows())?;
    assert_eq!(gt.queries(), task.ground_truth.queries());
    println!("ground_truth.txt  {} (relevant db indices per query line)", describe(&gt_path)?);

    let lsh = lsh_train(32, 8, 65)?;
    let lsh_path = dir.join("lsh.bin");
    save_lsh(&lsh_path, &lsh)?;
    assert_eq!(load_lsh(&lsh_path)?, lsh);
    println!("lsh.bin           {}", describe(&lsh_path)?);

    let (itq, _) = itq_train(&corpus.features, 8, 20, 66)?;
    let itq_path = dir.join("itq.bin");
    save_itq(&itq_path, &itq)?;
    assert_eq!(load_itq(&itq_path)?, itq);
    println!("itq.bin           {}", describe(&itq_path)?);

    let pq = pq_train(&corpus.features, 4, 4, 67)?;
    let pq_path = dir.join("pq.bin");
    save_pq(&pq_path, &pq)?;
    assert_eq!(load_pq(&pq_path)?, pq);
    println!("pq.bin            {}", describe(&pq_path)?);

    let pq_codes = pq_encode(&pq, &corpus.features)?;
    let pq_codes_path = dir.join("pq_codes.bin");
    save_pq_codes(&pq_codes_path, &pq_codes)?;
    assert_eq!(load_pq_codes(&pq_codes_path)?, pq_codes);
    println!("pq_codes.bin      {}", describe(&pq_codes_path)?);

    println!("\nall formats round-trip exactly (files under {})", dir.display());
    Ok(())
}
