use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture description shared by every network of one experiment.
///
/// Encoders are `channels.len()` stride-2 convolution blocks followed by
/// residual blocks up to `encoder_blocks`; the last `shared_encoder_blocks`
/// of them are tied across all domains. Generators mirror this: residual
/// blocks first (the first `shared_generator_blocks` tied between the two
/// generators), then transposed-convolution blocks back to image size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub image_size: usize,
    pub image_channels: usize,
    pub channels: Vec<usize>,
    pub encoder_blocks: usize,
    pub shared_encoder_blocks: usize,
    pub generator_blocks: usize,
    pub shared_generator_blocks: usize,
    pub d_z: usize,
    pub num_classes: usize,
    pub classifier_hidden: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self::new(32, 3, vec![8, 16, 16], 2)
    }
}

impl NetSpec {
    /// Spec with one residual block per network, the encoder tail and
    /// generator head shared, and `d_z` derived from the geometry.
    pub fn new(image_size: usize, image_channels: usize, channels: Vec<usize>, num_classes: usize) -> Self {
        let depth = channels.len();
        let mut spec = Self {
            image_size,
            image_channels,
            channels,
            encoder_blocks: depth + 1,
            shared_encoder_blocks: 1,
            generator_blocks: depth + 1,
            shared_generator_blocks: 1,
            d_z: 0,
            num_classes,
            classifier_hidden: 32,
        };
        spec.d_z = spec.latent_size() * spec.latent_size() * spec.latent_channels();
        spec
    }

    pub fn latent_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    pub fn latent_channels(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_size(), self.latent_size(), self.latent_channels()]
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_size, self.image_size, self.image_channels]
    }

    pub fn image_len(&self) -> usize {
        self.image_size * self.image_size * self.image_channels
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.channels.len();
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if depth == 0 {
            return fail("channels must not be empty".into());
        }
        if self.channels.contains(&0) || self.image_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.image_size == 0 || self.image_size % (1 << depth) != 0 {
            return fail(format!(
                "image_size {} must be a positive multiple of 2^{}",
                self.image_size, depth
            ));
        }
        if self.encoder_blocks < depth {
            return fail(format!("encoder_blocks {} < {} downsampling blocks", self.encoder_blocks, depth));
        }
        if self.generator_blocks < depth {
            return fail(format!("generator_blocks {} < {} upsampling blocks", self.generator_blocks, depth));
        }
        if self.shared_encoder_blocks > self.encoder_blocks {
            return fail(format!(
                "shared_encoder_blocks {} > encoder_blocks {}",
                self.shared_encoder_blocks, self.encoder_blocks
            ));
        }
        if self.shared_generator_blocks > self.generator_blocks {
            return fail(format!(
                "shared_generator_blocks {} > generator_blocks {}",
                self.shared_generator_blocks, self.generator_blocks
            ));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} < 2", self.num_classes));
        }
        if self.classifier_hidden == 0 {
            return fail("classifier_hidden must be positive".into());
        }
        let expected = self.latent_size() * self.latent_size() * self.latent_channels();
        if self.d_z != expected {
            return fail(format!("d_z {} inconsistent with latent grid ({} expected)", self.d_z, expected));
        }
        Ok(())
    }
}
