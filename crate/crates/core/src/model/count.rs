use std::fmt;

use super::params::TlVitParams;
use super::ModelConfig;

/// Scalar parameter counts per component.
///
/// Counting boundary: `global_encoder` and `decoder` are their transformer
/// blocks only. `local_encoder` is its transformer blocks plus the fusion
/// projection and fusion norm, which consume only local tokens.
/// Tokenizer projections and positional embeddings are reported under
/// `embeddings`, and the pixel projection under `head`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParameterCount {
    pub global_encoder: usize,
    pub local_encoder: usize,
    pub decoder: usize,
    pub embeddings: usize,
    pub head: usize,
}

impl ParameterCount {
    pub fn total(&self) -> usize {
        self.global_encoder + self.local_encoder + self.decoder + self.embeddings + self.head
    }
}

pub const COUNTING_BOUNDARY: &str = "global encoder = its transformer blocks; \
local encoder = its transformer blocks + fusion projection + fusion norm; \
decoder = its transformer blocks; embeddings = patch/sub-patch projections + positional embeddings; \
head = pixel projection";

pub fn parameter_count(config: &ModelConfig) -> ParameterCount {
    let mut count = ParameterCount {
        global_encoder: 0,
        local_encoder: 0,
        decoder: 0,
        embeddings: 0,
        head: 0,
    };
    TlVitParams::shapes(config).visit(&mut |name, _, shape| {
        let n: usize = shape.iter().product();
        let bucket = match name.split('.').next().unwrap_or_default() {
            "global" => &mut count.global_encoder,
            "local" | "fusion" | "fusion_norm" => &mut count.local_encoder,
            "decoder" => &mut count.decoder,
            "head" => &mut count.head,
            _ => &mut count.embeddings,
        };
        *bucket += n;
    });
    count
}

fn millions(n: usize) -> String {
    format!("{:.2} M", n as f64 / 1e6)
}

impl fmt::Display for ParameterCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:>14}{:>12}", "component", "parameters", "")?;
        for (name, n) in [
            ("global encoder", self.global_encoder),
            ("local encoder", self.local_encoder),
            ("decoder", self.decoder),
            ("embeddings", self.embeddings),
            ("head", self.head),
            ("total", self.total()),
        ] {
            writeln!(f, "{name:<16}{n:>14}{:>12}", millions(n))?;
        }
        write!(f, "counting boundary: {COUNTING_BOUNDARY}")
    }
}
