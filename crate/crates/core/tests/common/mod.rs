//! Seeded synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentipipe::corpus::{Dataset, LabelScheme, LabeledExample, Language, Split};
use sentipipe::model::{EncoderKind, ModelConfig};
use sentipipe::textproc::{normalize_tweet, train_bpe, NormalizeOptions, TextPipeline};

const NEG_WORDS: &[&str] = &["awful", "terrible", "hate", "worst", "horrible", "angry"];
const NEU_WORDS: &[&str] = &["table", "report", "monday", "meeting", "weather", "train"];
const POS_WORDS: &[&str] = &["love", "great", "happy", "best", "amazing", "wonderful"];
const FILLER: &[&str] = &["the", "a", "is", "this", "so", "and", "it", "was", "today", "my"];

fn keywords(class: usize) -> &'static [&'static str] {
    [NEG_WORDS, NEU_WORDS, POS_WORDS][class]
}

fn example(id: String, text: String, label_index: usize) -> LabeledExample {
    LabeledExample {
        id,
        text,
        label_index,
    }
}

/// Balanced 3-class corpus where every example holds 1-3 keywords of its class
/// mixed with shared filler words, plus the odd mention or URL.
pub fn separable_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let class = i % 3;
            let mut words: Vec<String> = Vec::new();
            for _ in 0..rng.random_range(1..=3) {
                words.push(keywords(class).choose(&mut rng).unwrap().to_string());
            }
            for _ in 0..rng.random_range(1..=4) {
                words.push(FILLER.choose(&mut rng).unwrap().to_string());
            }
            if rng.random_bool(0.2) {
                words.push("@someone".into());
            }
            if rng.random_bool(0.1) {
                words.push("https://t.co/xyz".into());
            }
            words.shuffle(&mut rng);
            example(format!("s{seed}-{i}"), words.join(" "), class)
        })
        .collect();
    Dataset::new(LabelScheme::Sentiment3, Language::En, Split::Train, examples).unwrap()
}

/// Three classes with counts `counts`. Class 2 (`POS`) overlaps with class 1:
/// each of its four words is a positive keyword with probability 0.25 and a
/// neutral word otherwise, while neutral examples use a positive keyword with
/// probability 0.05. Negative examples are clearly separated.
pub fn overlapping_corpus(counts: [usize; 3], seed: u64, prefix: &str) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    for (class, &count) in counts.iter().enumerate() {
        for i in 0..count {
            let words: Vec<&str> = (0..4)
                .map(|_| {
                    let pool = match class {
                        0 => NEG_WORDS,
                        1 if rng.random_bool(0.05) => POS_WORDS,
                        1 => NEU_WORDS,
                        _ if rng.random_bool(0.25) => POS_WORDS,
                        _ => NEU_WORDS,
                    };
                    *pool.choose(&mut rng).unwrap()
                })
                .collect();
            examples.push(example(format!("{prefix}{class}-{i}"), words.join(" "), class));
        }
    }
    examples.shuffle(&mut rng);
    Dataset::new(LabelScheme::Sentiment3, Language::En, Split::Train, examples).unwrap()
}

pub fn pipeline_for(ds: &Dataset, vocab_size: usize) -> TextPipeline {
    let opts = NormalizeOptions::default();
    let normalized: Vec<String> = ds.texts().map(|t| normalize_tweet(t, &opts)).collect();
    TextPipeline::new(opts, train_bpe(&normalized, vocab_size).unwrap())
}

pub fn tiny_transformer(vocab_size: usize, num_classes: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderKind::Transformer,
        vocab_size,
        num_classes,
        embed_dim: 16,
        num_heads: 2,
        num_layers: 1,
        ffn_dim: 32,
        max_len: 32,
        dropout_rate: 0.0,
    }
}

pub fn bow(vocab_size: usize, num_classes: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderKind::LinearBow,
        ..tiny_transformer(vocab_size, num_classes)
    }
}

/// Writes `ds` as a headed `id<TAB>text<TAB>label` file.
pub fn write_tsv(ds: &Dataset, path: &std::path::Path) {
    let mut out = String::from("id\ttext\tlabel\n");
    for ex in ds.examples() {
        let label = ds.scheme().label(ex.label_index).unwrap();
        out.push_str(&format!("{}\t{}\t{}\n", ex.id, ex.text, label));
    }
    std::fs::write(path, out).unwrap();
}
