use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::networks::{Domain, Pipelines, Side};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Closed-form stand-in for the networks: encoders and generators are
/// scalar multiples of the identity (latent size = flattened image size),
/// discriminators and the classifier are fixed affine maps. Lets the
/// objectives be evaluated on hand-computable values.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineStub {
    pub num_sources: usize,
    pub image: [usize; 3],
    /// One factor per source encoder followed by the target encoder.
    pub encoder_scale: Vec<f64>,
    pub to_target_scale: f64,
    pub to_source_scale: f64,
    /// Logit weights `[n, 1]` and bias of the source and target
    /// discriminators.
    pub disc_source: (Tensor, f64),
    pub disc_target: (Tensor, f64),
    /// `[n, classes]` weights and `[classes]` bias.
    pub classifier: (Tensor, Tensor),
}

impl AffineStub {
    /// Identity encoders and generators, discriminators fixed at 0.5 and a
    /// classifier reading the first `classes` latent entries as logits.
    pub fn identity(num_sources: usize, image: [usize; 3], classes: usize) -> Self {
        let n = image.iter().product();
        let mut w = Tensor::zeros(&[n, classes]);
        for k in 0..classes.min(n) {
            w.data_mut()[k * classes + k] = 1.0;
        }
        Self {
            num_sources,
            image,
            encoder_scale: vec![1.0; num_sources + 1],
            to_target_scale: 1.0,
            to_source_scale: 1.0,
            disc_source: (Tensor::zeros(&[n, 1]), 0.0),
            disc_target: (Tensor::zeros(&[n, 1]), 0.0),
            classifier: (w, Tensor::zeros(&[classes])),
        }
    }

    pub fn latent_len(&self) -> usize {
        self.image.iter().product()
    }
}

impl Pipelines for AffineStub {
    fn num_sources(&self) -> usize {
        self.num_sources
    }

    fn encode(&self, tape: &mut Tape, domain: Domain, x: Var) -> Result<Var> {
        self.check_domain(domain)?;
        let s = match domain {
            Domain::Source(i) => self.encoder_scale[i],
            Domain::Target => self.encoder_scale[self.num_sources],
        };
        let b = tape.value(x).batch();
        let flat = tape.reshape(x, &[b, self.latent_len()])?;
        Ok(tape.scale(flat, s))
    }

    fn decode(&self, tape: &mut Tape, side: Side, z: Var) -> Result<Var> {
        let s = match side {
            Side::Target => self.to_target_scale,
            Side::Source => self.to_source_scale,
        };
        let b = tape.value(z).batch();
        let [h, w, c] = self.image;
        let img = tape.reshape(z, &[b, h, w, c])?;
        Ok(tape.scale(img, s))
    }

    fn discriminate(&self, tape: &mut Tape, side: Side, x: Var) -> Result<Var> {
        let (w, bias) = match side {
            Side::Target => &self.disc_target,
            Side::Source => &self.disc_source,
        };
        let b = tape.value(x).batch();
        let flat = tape.reshape(x, &[b, self.latent_len()])?;
        let w = tape.input(w.clone());
        let bias = tape.input(Tensor::full(&[1], *bias));
        tape.linear(flat, w, bias)
    }

    fn classify(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let w = tape.input(self.classifier.0.clone());
        let b = tape.input(self.classifier.1.clone());
        tape.linear(z, w, b)
    }
}
