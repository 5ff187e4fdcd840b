//! Shared inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spanlink_core::engine::TrainingInstance;
use spanlink_core::schema::fixtures;
use spanlink_core::scoring::BinaryLinkMatrix;
use spanlink_core::synthetic::{generate, SyntheticConfig};
use spanlink_core::{build_training_set, ExtractionConfig, Model, Record, Schema, Tokenize, Tokenizer};

pub struct Workload {
    pub schema: Schema,
    pub docs: Vec<Record>,
    pub tokenizer: Tokenizer,
    pub model: Model,
    pub instances: Vec<TrainingInstance>,
    pub extraction: ExtractionConfig,
}

/// A synthetic corpus over a fixture schema with a fresh model of width `dim`.
pub fn workload(schema_doc: &str, docs: usize, dim: usize) -> Workload {
    let schema = Schema::from_json(schema_doc).expect("fixture schema parses");
    let docs = generate(&schema, &SyntheticConfig { count: docs, seed: 11, max_chains: 3, ..Default::default() });
    let names: Vec<String> = schema.enumerate_paths().into_iter().filter_map(|p| p.0.last().cloned()).collect();
    let tokenizer = Tokenizer::from_texts(
        docs.iter().map(|d| d.text.as_str()).chain(names.iter().map(String::as_str)).chain([": ,"]),
    );
    let extraction = ExtractionConfig::default();
    let instances = build_training_set(&docs, &schema, &tokenizer, &extraction).expect("synthetic data is valid");
    let model = Model::new(tokenizer.vocab_size(), dim, 2, extraction.limits.max_total, 11);
    Workload { schema, docs, tokenizer, model, instances, extraction }
}

pub fn toy_workload() -> Workload {
    workload(fixtures::TOY_RELATIONS, 50, 64)
}

/// An `n`×`n` link matrix with each bit set with probability `density`.
pub fn random_links(n: usize, density: f64, seed: u64) -> BinaryLinkMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = BinaryLinkMatrix::zeros(n);
    m.bits.mapv_inplace(|_| rng.random_bool(density));
    m
}
