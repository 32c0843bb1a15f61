//! File formats and synthetic mixture generation.

pub mod library;
pub mod mix;
pub mod wav;

pub use library::{decode_library, encode_library, read_library, write_library};
pub use mix::{synth_mixture, MixOutput, MixSpec};
pub use wav::{read_wav, write_wav, SampleFormat};
