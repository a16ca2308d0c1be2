//! Adam updates restricted to the parameter groups a phase may touch.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{GroupId, ParameterGroups};
use crate::tape::Gradients;

/// Groups a phase updates and groups it must leave untouched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseMask {
    pub updatable: BTreeSet<GroupId>,
    pub frozen: BTreeSet<GroupId>,
}

impl PhaseMask {
    /// `updatable` against the full group list of a model with
    /// `num_sources` sources; everything else is frozen.
    pub fn new(updatable: &[GroupId], num_sources: usize) -> Self {
        let updatable: BTreeSet<GroupId> = updatable.iter().copied().collect();
        let frozen = GroupId::all(num_sources)
            .into_iter()
            .filter(|g| !updatable.contains(g))
            .collect();
        Self { updatable, frozen }
    }

    /// Discriminators only.
    pub fn discriminators(num_sources: usize) -> Self {
        Self::new(&[GroupId::DiscSource, GroupId::DiscTarget], num_sources)
    }

    /// Encoder of source `i`, target encoder and both generators.
    pub fn translators(source: usize, num_sources: usize) -> Self {
        Self::new(
            &[
                GroupId::SourceEncoder(source),
                GroupId::TargetEncoder,
                GroupId::GenToTarget,
                GroupId::GenToSource,
            ],
            num_sources,
        )
    }

    /// Encoder of source `i`, target encoder and the classifier.
    pub fn classifier(source: usize, num_sources: usize) -> Self {
        Self::new(
            &[GroupId::SourceEncoder(source), GroupId::TargetEncoder, GroupId::Classifier],
            num_sources,
        )
    }

    /// Storage-level mask: a storage is trainable when any of its owners is.
    /// Tied storages therefore move whenever one aliasing group is updated.
    pub fn storage_mask(&self, params: &ParameterGroups) -> Vec<bool> {
        let groups: Vec<GroupId> = self.updatable.iter().copied().collect();
        params.trainable_mask(&groups)
    }

    /// Storages that must be bitwise unchanged by this phase: everything
    /// whose owners are all frozen.
    pub fn frozen_storages(&self, params: &ParameterGroups) -> Vec<usize> {
        self.storage_mask(params)
            .iter()
            .enumerate()
            .filter(|(_, t)| !**t)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moments and step count of one storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub slots: BTreeMap<usize, AdamSlot>,
}

/// Applies one Adam step for every gradient in `grads`. Gradients of tied
/// storages arrive already summed over all aliases and are applied once.
/// Any gradient for a storage outside the mask is a contract violation and
/// nothing is updated.
pub fn optimizer_step(
    params: &mut ParameterGroups,
    grads: &Gradients,
    state: &mut AdamState,
    mask: &PhaseMask,
    config: &AdamConfig,
) -> Result<()> {
    let trainable = mask.storage_mask(params);
    if let Some((id, _)) = grads.iter().find(|(id, _)| !trainable[*id]) {
        return Err(Error::FrozenGradient(params.storage_key(id).into()));
    }
    for (id, g) in grads.iter() {
        let p = params.tensor_mut(id);
        let slot = state.slots.entry(id).or_insert_with(|| AdamSlot {
            m: alloc::vec![0.0; p.len()],
            v: alloc::vec![0.0; p.len()],
            t: 0,
        });
        slot.t += 1;
        let bc1 = 1.0 - libm::pow(config.beta1, slot.t as f64);
        let bc2 = 1.0 - libm::pow(config.beta2, slot.t as f64);
        for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut slot.m).zip(&mut slot.v) {
            *m = config.beta1 * *m + (1.0 - config.beta1) * gi;
            *v = config.beta2 * *v + (1.0 - config.beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= config.learning_rate * m_hat / (libm::sqrt(v_hat) + config.epsilon);
        }
    }
    Ok(())
}
