use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Always 1: the model consumes grayscale tiles.
    pub channels: usize,
    pub patch: usize,
    pub subpatch: usize,
    pub global_dim: usize,
    pub local_dim: usize,
    pub global_heads: usize,
    pub local_heads: usize,
    pub decoder_heads: usize,
    pub global_layers: usize,
    pub local_layers: usize,
    pub decoder_layers: usize,
    pub global_mlp_dim: usize,
    pub local_mlp_dim: usize,
    pub decoder_mlp_dim: usize,
    pub ln_eps: f64,
    /// Residual connection around the attention half of each block.
    pub attn_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 256,
            width: 256,
            channels: 1,
            patch: 16,
            subpatch: 8,
            global_dim: 768,
            local_dim: 256,
            global_heads: 8,
            local_heads: 8,
            decoder_heads: 1,
            global_layers: 6,
            local_layers: 4,
            decoder_layers: 1,
            global_mlp_dim: 2048,
            local_mlp_dim: 2048,
            decoder_mlp_dim: 256,
            ln_eps: 1e-6,
            attn_residual: true,
        }
    }
}

/// One row of the patch / sub-patch / width / depth ablation grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRow {
    pub id: usize,
    pub patch: usize,
    pub subpatch: usize,
    pub global_dim: usize,
    pub local_dim: usize,
    pub global_layers: usize,
    pub local_layers: usize,
    /// PSNR on the DIBCO 2017 hold-out reported for this row, dB.
    pub reported_psnr: f64,
}

pub const ABLATION_ROWS: [AblationRow; 5] = [
    AblationRow {
        id: 1,
        patch: 16,
        subpatch: 8,
        global_dim: 1024,
        local_dim: 256,
        global_layers: 12,
        local_layers: 4,
        reported_psnr: 20.70,
    },
    AblationRow {
        id: 2,
        patch: 16,
        subpatch: 8,
        global_dim: 768,
        local_dim: 256,
        global_layers: 6,
        local_layers: 12,
        reported_psnr: 20.54,
    },
    AblationRow {
        id: 3,
        patch: 16,
        subpatch: 8,
        global_dim: 768,
        local_dim: 256,
        global_layers: 6,
        local_layers: 4,
        reported_psnr: 20.93,
    },
    AblationRow {
        id: 4,
        patch: 16,
        subpatch: 4,
        global_dim: 256,
        local_dim: 256,
        global_layers: 6,
        local_layers: 4,
        reported_psnr: 18.25,
    },
    AblationRow {
        id: 5,
        patch: 8,
        subpatch: 4,
        global_dim: 768,
        local_dim: 768,
        global_layers: 6,
        local_layers: 4,
        reported_psnr: 18.96,
    },
];

impl AblationRow {
    pub fn lookup(id: usize) -> Result<AblationRow> {
        ABLATION_ROWS
            .iter()
            .copied()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("unknown ablation row {id} (valid: 1-5)")))
    }

    /// The default configuration with this row's grid values substituted.
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            patch: self.patch,
            subpatch: self.subpatch,
            global_dim: self.global_dim,
            local_dim: self.local_dim,
            global_layers: self.global_layers,
            local_layers: self.local_layers,
            ..ModelConfig::default()
        }
    }
}

impl ModelConfig {
    /// Smallest useful configuration, sized for finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            height: 16,
            width: 16,
            channels: 1,
            patch: 8,
            subpatch: 4,
            global_dim: 16,
            local_dim: 8,
            global_heads: 2,
            local_heads: 2,
            decoder_heads: 2,
            global_layers: 1,
            local_layers: 1,
            decoder_layers: 1,
            global_mlp_dim: 32,
            local_mlp_dim: 16,
            decoder_mlp_dim: 16,
            ln_eps: 1e-6,
            attn_residual: true,
        }
    }

    /// Same architecture on a different tile size.
    pub fn with_tile(mut self, size: usize) -> Self {
        self.height = size;
        self.width = size;
        self
    }

    pub fn n_patch(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn n_subpatch(&self) -> usize {
        let q = self.patch / self.subpatch;
        q * q
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.channels != 1 {
            return err(format!("channels must be 1, got {}", self.channels));
        }
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("patch", self.patch),
            ("subpatch", self.subpatch),
            ("global_dim", self.global_dim),
            ("local_dim", self.local_dim),
            ("global_heads", self.global_heads),
            ("local_heads", self.local_heads),
            ("decoder_heads", self.decoder_heads),
            ("global_mlp_dim", self.global_mlp_dim),
            ("local_mlp_dim", self.local_mlp_dim),
            ("decoder_mlp_dim", self.decoder_mlp_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be positive"));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return err(format!(
                "tile {}x{} is not divisible by patch {}",
                self.height, self.width, self.patch
            ));
        }
        if !self.patch.is_multiple_of(self.subpatch) || self.subpatch >= self.patch {
            return err(format!(
                "subpatch {} must be smaller than and divide patch {}",
                self.subpatch, self.patch
            ));
        }
        for (name, dim, heads) in [
            ("global_dim", self.global_dim, self.global_heads),
            ("local_dim", self.local_dim, self.local_heads),
            ("global_dim", self.global_dim, self.decoder_heads),
        ] {
            if dim % heads != 0 {
                return err(format!("{name} {dim} is not divisible by {heads} heads"));
            }
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return err(format!("ln_eps must be > 0, got {}", self.ln_eps));
        }
        Ok(())
    }

    /// Integer encoding used by checkpoints. `ln_eps` is stored as the bit
    /// pattern of its `f32` value.
    pub fn to_words(&self) -> Vec<u32> {
        [
            self.height,
            self.width,
            self.channels,
            self.patch,
            self.subpatch,
            self.global_dim,
            self.local_dim,
            self.global_heads,
            self.local_heads,
            self.decoder_heads,
            self.global_layers,
            self.local_layers,
            self.decoder_layers,
            self.global_mlp_dim,
            self.local_mlp_dim,
            self.decoder_mlp_dim,
        ]
        .iter()
        .map(|&v| v as u32)
        .chain([(self.ln_eps as f32).to_bits(), self.attn_residual as u32])
        .collect()
    }

    pub const WORDS: usize = 18;

    pub fn from_words(words: &[u32]) -> Result<Self> {
        if words.len() != Self::WORDS {
            return Err(Error::Format(format!(
                "model config has {} fields, expected {}",
                words.len(),
                Self::WORDS
            )));
        }
        let u = |i: usize| words[i] as usize;
        let config = ModelConfig {
            height: u(0),
            width: u(1),
            channels: u(2),
            patch: u(3),
            subpatch: u(4),
            global_dim: u(5),
            local_dim: u(6),
            global_heads: u(7),
            local_heads: u(8),
            decoder_heads: u(9),
            global_layers: u(10),
            local_layers: u(11),
            decoder_layers: u(12),
            global_mlp_dim: u(13),
            local_mlp_dim: u(14),
            decoder_mlp_dim: u(15),
            ln_eps: f32::from_bits(words[16]) as f64,
            attn_residual: match words[17] {
                0 => false,
                1 => true,
                v => return Err(Error::Format(format!("attn_residual flag {v}"))),
            },
        };
        Ok(config)
    }
}
