//! Greedy layer-wise pretraining on a synthetic clustered corpus.
//!
//! Trains a 128 -> 64 -> 16 stack, prints the reconstruction error per
//! epoch, checks how balanced the finished bits are, and round-trips the
//! model through its file format.

use deephash::rbm::RbmHyperParams;
use deephash::stack::{default_architecture, load_model, save_model, train_stack, Architecture};
use deephash::synthetic::gaussian_clusters;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // The canonical depths for the full-scale feature dims.
    for bits in [1024usize, 256, 64] {
        for dim in [8192usize, 4096] {
            let arch = default_architecture(bits, dim)?;
            println!("default architecture {dim} -> {bits} bits: {arch}");
        }
    }
    println!();

    let corpus = gaussian_clusters(1500, 128, 10, 6.0, 1.0, 7)?;
    let arch = Architecture::new(vec![128, 64, 16])?;
    let hp = RbmHyperParams {
        epochs: 8,
        batch_size: 50,
        ..RbmHyperParams::default()
    };
    println!("training {arch} on 1500 items, lambda = {}", hp.lambda);
    let (model, logs) = train_stack(&corpus.features, &arch, &hp)?;

    for (l, layer_log) in logs.iter().enumerate() {
        let first = &layer_log[0];
        let last = layer_log.last().unwrap();
        println!(
            "layer {}: reconstruction error {:.4} -> {:.4}, final activations mean {:.3} in [{:.3}, {:.3}]",
            l + 1,
            first.reconstruction_error,
            last.reconstruction_error,
            last.activation_mean,
            last.activation_min,
            last.activation_max
        );
    }

    let codes = model.encode(&corpus.features)?;
    let mut low = 1.0f64;
    let mut high = 0.0f64;
    for j in 0..codes.bits() {
        let m = codes.column_mean(j);
        low = low.min(m);
        high = high.max(m);
    }
    println!("per-bit activation means span [{low:.3}, {high:.3}] (0.5 is perfectly balanced)");

    let dir = std::env::temp_dir().join("deephash_pretrain_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.bin");
    save_model(&path, &model)?;
    let loaded = load_model(&path)?;
    assert_eq!(loaded, model);
    assert_eq!(loaded.encode(&corpus.features)?, codes);
    println!(
        "model round-trips through {} ({} bytes), metadata seed = {}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        loaded.metadata()["seed"]
    );
    Ok(())
}
