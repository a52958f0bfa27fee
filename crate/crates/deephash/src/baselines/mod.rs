//! Classical hashing baselines run against the same retrieval harness:
//! random hyperplanes, iterative quantization and product quantization.
//!
//! Training works in f64; finished parameters are rounded through f32 so
//! the in-memory model equals its on-disk form exactly.

mod itq;
mod kmeans;
mod lsh;
mod pq;

pub use itq::{itq_encode, itq_train, load_itq, save_itq, ItqModel};
pub use lsh::{load_lsh, lsh_encode, lsh_train, save_lsh, LshModel};
pub use pq::{
    load_pq, load_pq_codes, pq_adc_distance, pq_adc_distances, pq_adc_lut, pq_encode, pq_train,
    save_pq, save_pq_codes, PqModel,
};

use ndarray::{Array1, Array2};

fn round1(a: Array1<f64>) -> Array1<f64> {
    a.mapv(|v| v as f32 as f64)
}

fn round2(a: Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v as f32 as f64)
}
