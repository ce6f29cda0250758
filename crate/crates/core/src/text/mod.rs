pub mod packing;
pub mod sampling;
pub mod tokenizer;
pub mod vocab;

pub use packing::{
    build_mask_and_positions, compression_ratio, pack_greedy, read_packed, write_packed, EmitReason, PackedSequence,
    Packer, PackerConfig,
};
pub use sampling::{resample, smooth_expected_counts, smoothed_sizes, SmoothingConfig, DEFAULT_ALPHA};
pub use tokenizer::{basic_split, tokenize, wordpiece};
pub use vocab::{Vocab, VocabBuilder, CLS_ID, PAD_ID, SEP_ID, UNK_ID};
