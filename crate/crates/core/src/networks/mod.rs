//! Encoders, generators, discriminators and the classifier, all backed by
//! one flat parameter storage with an explicit sharing registry.

mod spec;
mod stub;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tags, LatentNoise};
use crate::tape::{sigmoid, softmax, Tape, Var, DISC_EPS};
use crate::tensor::Tensor;

pub use spec::NetSpec;
pub use stub::AffineStub;

const DOWN_KERNEL: usize = 4;
const RES_KERNEL: usize = 3;

/// Which encoder a batch goes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source(usize),
    Target,
}

impl Domain {
    /// Generator that reconstructs images of this domain: sources decode
    /// through the source-style generator, the target through the
    /// target-style one.
    pub fn recon_side(self) -> Side {
        match self {
            Domain::Source(_) => Side::Source,
            Domain::Target => Side::Target,
        }
    }
}

/// Image style: `Side::Target` selects the source-to-target generator and
/// the target discriminator, `Side::Source` their counterparts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Source,
    Target,
}

/// Named parameter groups of the alternating training procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupId {
    /// Encoder of source `i` (zero based).
    SourceEncoder(usize),
    TargetEncoder,
    /// Source-to-target generator.
    GenToTarget,
    /// Target-to-source generator.
    GenToSource,
    DiscSource,
    DiscTarget,
    Classifier,
}

impl GroupId {
    pub fn name(self) -> String {
        match self {
            GroupId::SourceEncoder(i) => format!("alpha_S{}", i + 1),
            GroupId::TargetEncoder => "alpha_T".into(),
            GroupId::GenToTarget => "theta_ST".into(),
            GroupId::GenToSource => "theta_TS".into(),
            GroupId::DiscSource => "phi_S".into(),
            GroupId::DiscTarget => "phi_T".into(),
            GroupId::Classifier => "varphi".into(),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "alpha_T" => GroupId::TargetEncoder,
            "theta_ST" => GroupId::GenToTarget,
            "theta_TS" => GroupId::GenToSource,
            "phi_S" => GroupId::DiscSource,
            "phi_T" => GroupId::DiscTarget,
            "varphi" => GroupId::Classifier,
            other => {
                let i: usize = other.strip_prefix("alpha_S")?.parse().ok()?;
                GroupId::SourceEncoder(i.checked_sub(1)?)
            }
        })
    }

    /// Every group of a model with `num_sources` source encoders.
    pub fn all(num_sources: usize) -> Vec<GroupId> {
        let mut v: Vec<GroupId> = (0..num_sources).map(GroupId::SourceEncoder).collect();
        v.extend([
            GroupId::TargetEncoder,
            GroupId::GenToTarget,
            GroupId::GenToSource,
            GroupId::DiscSource,
            GroupId::DiscTarget,
            GroupId::Classifier,
        ]);
        v
    }
}

/// One tied tensor and every `(group, slot)` that reads it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasGroup {
    pub id: String,
    pub storage: usize,
    pub aliases: Vec<(GroupId, String)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingRegistry {
    pub groups: Vec<AliasGroup>,
}

#[derive(Clone, Debug, PartialEq)]
struct StorageInfo {
    key: String,
    owners: Vec<GroupId>,
}

#[derive(Clone, Debug, PartialEq)]
enum BlockKind {
    Down,
    Residual,
    Up { last: bool },
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    kind: BlockKind,
    params: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
struct Discriminator {
    blocks: Vec<Block>,
    head: [usize; 2],
}

/// All trainable tensors of one model plus the network wiring over them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGroups {
    spec: NetSpec,
    num_sources: usize,
    tensors: Vec<Tensor>,
    storages: Vec<StorageInfo>,
    slots: BTreeMap<(GroupId, String), usize>,
    registry: SharingRegistry,
    /// Index `num_sources` is the target encoder.
    encoders: Vec<Vec<Block>>,
    gen_to_target: Vec<Block>,
    gen_to_source: Vec<Block>,
    disc_source: Discriminator,
    disc_target: Discriminator,
    classifier: [usize; 4],
}

struct Builder {
    seed: u64,
    tensors: Vec<Tensor>,
    storages: Vec<StorageInfo>,
    slots: BTreeMap<(GroupId, String), usize>,
    registry: SharingRegistry,
}

impl Builder {
    fn alloc(&mut self, key: String, shape: &[usize], fan_in: usize, gain: f64) -> usize {
        let id = self.tensors.len();
        let mut t = Tensor::zeros(shape);
        if fan_in > 0 {
            let std = gain * libm::sqrt(2.0 / (1.04 * fan_in as f64));
            let mut r = rng::stream(self.seed, &[tags::INIT, id as u64]);
            for v in t.data_mut() {
                *v = std * rng::normal(&mut r);
            }
        }
        self.tensors.push(t);
        self.storages.push(StorageInfo { key, owners: Vec::new() });
        id
    }

    fn attach(&mut self, storage: usize, group: GroupId, slot: &str) {
        self.slots.insert((group, slot.into()), storage);
        let owners = &mut self.storages[storage].owners;
        if !owners.contains(&group) {
            owners.push(group);
        }
    }

    /// Allocates the tensors of one block, keyed under `prefix`.
    fn block(&mut self, prefix: &str, kind: BlockKind, cin: usize, cout: usize) -> Block {
        let params = match kind {
            BlockKind::Down => {
                let k = DOWN_KERNEL;
                vec![
                    self.alloc(format!("{prefix}/w"), &[k, k, cin, cout], k * k * cin, 1.0),
                    self.alloc(format!("{prefix}/b"), &[cout], 0, 0.0),
                ]
            }
            BlockKind::Residual => {
                let k = RES_KERNEL;
                vec![
                    self.alloc(format!("{prefix}/w1"), &[k, k, cin, cin], k * k * cin, 1.0),
                    self.alloc(format!("{prefix}/b1"), &[cin], 0, 0.0),
                    self.alloc(format!("{prefix}/w2"), &[k, k, cin, cin], k * k * cin, 0.5),
                    self.alloc(format!("{prefix}/b2"), &[cin], 0, 0.0),
                ]
            }
            BlockKind::Up { .. } => {
                let k = DOWN_KERNEL;
                // each output pixel of a stride-2 k=4 deconvolution sees 2x2 taps
                vec![
                    self.alloc(format!("{prefix}/w"), &[cin, k, k, cout], 4 * cin, 1.0),
                    self.alloc(format!("{prefix}/b"), &[cout], 0, 0.0),
                ]
            }
        };
        Block { kind, params }
    }

    fn slot_names(block: &Block, index: usize) -> Vec<String> {
        let suffixes: &[&str] = match block.kind {
            BlockKind::Residual => &["w1", "b1", "w2", "b2"],
            _ => &["w", "b"],
        };
        suffixes.iter().map(|s| format!("block{index}/{s}")).collect()
    }

    /// Builds one block for each owner, or a single tied block aliased by
    /// all of them.
    fn blocks_for(
        &mut self,
        owners: &[GroupId],
        index: usize,
        shared_id: Option<&str>,
        kind: BlockKind,
        cin: usize,
        cout: usize,
    ) -> Vec<Block> {
        match shared_id {
            Some(id) => {
                let prefix = format!("shared/{id}/block{index}");
                let block = self.block(&prefix, kind, cin, cout);
                let names = Self::slot_names(&block, index);
                for (storage, name) in block.params.iter().zip(&names) {
                    let aliases: Vec<(GroupId, String)> = owners.iter().map(|g| (*g, name.clone())).collect();
                    for g in owners {
                        self.attach(*storage, *g, name);
                    }
                    self.registry.groups.push(AliasGroup {
                        id: format!("{id}/{name}"),
                        storage: *storage,
                        aliases,
                    });
                }
                owners.iter().map(|_| block.clone()).collect()
            }
            None => owners
                .iter()
                .map(|g| {
                    let prefix = format!("{}/block{index}", g.name());
                    let block = self.block(&prefix, kind.clone(), cin, cout);
                    for (storage, name) in block.params.iter().zip(Self::slot_names(&block, index)) {
                        self.attach(*storage, *g, &name);
                    }
                    block
                })
                .collect(),
        }
    }

    fn discriminator(&mut self, group: GroupId, spec: &NetSpec) -> Discriminator {
        let mut blocks = Vec::new();
        let mut cin = spec.image_channels;
        for (j, &c) in spec.channels.iter().enumerate() {
            blocks.extend(self.blocks_for(&[group], j, None, BlockKind::Down, cin, c));
            cin = c;
        }
        let feat = spec.d_z;
        let w = self.alloc(format!("{}/head/w", group.name()), &[feat, 1], feat, 0.5);
        let b = self.alloc(format!("{}/head/b", group.name()), &[1], 0, 0.0);
        self.attach(w, group, "head/w");
        self.attach(b, group, "head/b");
        Discriminator { blocks, head: [w, b] }
    }
}

/// Builds every network for `num_sources` source domains. Initialisation
/// is a pure function of `(spec, num_sources, seed)`.
pub fn build_models(spec: &NetSpec, num_sources: usize, seed: u64) -> Result<ParameterGroups> {
    spec.validate()?;
    if num_sources == 0 {
        return Err(Error::Config("at least one source domain is required".into()));
    }
    let mut b = Builder {
        seed,
        tensors: Vec::new(),
        storages: Vec::new(),
        slots: BTreeMap::new(),
        registry: SharingRegistry::default(),
    };
    let depth = spec.channels.len();
    let latent_c = spec.latent_channels();

    let mut enc_groups: Vec<GroupId> = (0..num_sources).map(GroupId::SourceEncoder).collect();
    enc_groups.push(GroupId::TargetEncoder);
    let mut encoders: Vec<Vec<Block>> = vec![Vec::new(); num_sources + 1];
    let first_shared_enc = spec.encoder_blocks - spec.shared_encoder_blocks;
    for j in 0..spec.encoder_blocks {
        let (kind, cin, cout) = if j < depth {
            let cin = if j == 0 { spec.image_channels } else { spec.channels[j - 1] };
            (BlockKind::Down, cin, spec.channels[j])
        } else {
            (BlockKind::Residual, latent_c, latent_c)
        };
        let shared = (j >= first_shared_enc).then_some("encoder");
        for (enc, block) in encoders.iter_mut().zip(b.blocks_for(&enc_groups, j, shared, kind, cin, cout)) {
            enc.push(block);
        }
    }

    let gen_groups = [GroupId::GenToTarget, GroupId::GenToSource];
    let mut gens: [Vec<Block>; 2] = [Vec::new(), Vec::new()];
    let residual = spec.generator_blocks - depth;
    for j in 0..spec.generator_blocks {
        let (kind, cin, cout) = if j < residual {
            (BlockKind::Residual, latent_c, latent_c)
        } else {
            let u = j - residual;
            let cin = spec.channels[depth - 1 - u];
            let last = u + 1 == depth;
            let cout = if last { spec.image_channels } else { spec.channels[depth - 2 - u] };
            (BlockKind::Up { last }, cin, cout)
        };
        let shared = (j < spec.shared_generator_blocks).then_some("generator");
        for (g, block) in gens.iter_mut().zip(b.blocks_for(&gen_groups, j, shared, kind, cin, cout)) {
            g.push(block);
        }
    }
    let [gen_to_target, gen_to_source] = gens;

    let disc_source = b.discriminator(GroupId::DiscSource, spec);
    let disc_target = b.discriminator(GroupId::DiscTarget, spec);

    let h = spec.classifier_hidden;
    let c = GroupId::Classifier;
    let classifier = [
        b.alloc("varphi/fc1/w".into(), &[spec.d_z, h], spec.d_z, 1.0),
        b.alloc("varphi/fc1/b".into(), &[h], 0, 0.0),
        b.alloc("varphi/fc2/w".into(), &[h, spec.num_classes], h, 0.5),
        b.alloc("varphi/fc2/b".into(), &[spec.num_classes], 0, 0.0),
    ];
    for (id, name) in classifier.iter().zip(["fc1/w", "fc1/b", "fc2/w", "fc2/b"]) {
        b.attach(*id, c, name);
    }

    Ok(ParameterGroups {
        spec: spec.clone(),
        num_sources,
        tensors: b.tensors,
        storages: b.storages,
        slots: b.slots,
        registry: b.registry,
        encoders,
        gen_to_target,
        gen_to_source,
        disc_source,
        disc_target,
        classifier,
    })
}

/// The forward maps every objective is written against. `ParameterGroups`
/// is the real implementation; tests substitute analytic stubs.
pub trait Pipelines {
    fn num_sources(&self) -> usize;
    /// Posterior mean, shape `[batch, d_z]`.
    fn encode(&self, tape: &mut Tape, domain: Domain, x: Var) -> Result<Var>;
    /// Image batch in `[-1, 1]` styled for `side`.
    fn decode(&self, tape: &mut Tape, side: Side, z: Var) -> Result<Var>;
    /// Real-vs-fake logits, shape `[batch, 1]`.
    fn discriminate(&self, tape: &mut Tape, side: Side, x: Var) -> Result<Var>;
    /// Class logits, shape `[batch, num_classes]`.
    fn classify(&self, tape: &mut Tape, z: Var) -> Result<Var>;

    fn check_domain(&self, domain: Domain) -> Result<()> {
        match domain {
            Domain::Source(i) if i >= self.num_sources() => Err(Error::Domain {
                index: i,
                count: self.num_sources(),
            }),
            _ => Ok(()),
        }
    }
}

const MEMO_GEN_TARGET: u32 = 1 << 20;
const MEMO_GEN_SOURCE: u32 = MEMO_GEN_TARGET + 1;
const MEMO_DISC_SOURCE: u32 = MEMO_GEN_TARGET + 2;
const MEMO_DISC_TARGET: u32 = MEMO_GEN_TARGET + 3;
const MEMO_CLASSIFIER: u32 = MEMO_GEN_TARGET + 4;

fn run_block(tape: &mut Tape, block: &Block, x: Var) -> Result<Var> {
    let p: Vec<Var> = block.params.iter().map(|&id| tape.param(id)).collect();
    match block.kind {
        BlockKind::Down => {
            let y = tape.conv2d(x, p[0], p[1], 2, 1)?;
            Ok(tape.leaky_relu(y))
        }
        BlockKind::Residual => {
            let h = tape.conv2d(x, p[0], p[1], 1, 1)?;
            let h = tape.leaky_relu(h);
            let h = tape.conv2d(h, p[2], p[3], 1, 1)?;
            tape.add(x, h)
        }
        BlockKind::Up { last } => {
            let y = tape.conv_transpose2d(x, p[0], p[1], 2, 1)?;
            Ok(if last { tape.tanh(y) } else { tape.leaky_relu(y) })
        }
    }
}

fn memoized(tape: &mut Tape, key: u32, x: Var, f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<Var> {
    if let Some(v) = tape.memo(key, x) {
        return Ok(v);
    }
    let out = f(tape)?;
    tape.set_memo(key, x, out);
    Ok(out)
}

impl Pipelines for ParameterGroups {
    fn num_sources(&self) -> usize {
        self.num_sources
    }

    fn encode(&self, tape: &mut Tape, domain: Domain, x: Var) -> Result<Var> {
        self.check_domain(domain)?;
        let idx = match domain {
            Domain::Source(i) => i,
            Domain::Target => self.num_sources,
        };
        memoized(tape, idx as u32, x, |tape| {
            let mut h = x;
            for block in &self.encoders[idx] {
                h = run_block(tape, block, h)?;
            }
            let b = tape.value(h).batch();
            tape.reshape(h, &[b, self.spec.d_z])
        })
    }

    fn decode(&self, tape: &mut Tape, side: Side, z: Var) -> Result<Var> {
        let (key, blocks) = match side {
            Side::Target => (MEMO_GEN_TARGET, &self.gen_to_target),
            Side::Source => (MEMO_GEN_SOURCE, &self.gen_to_source),
        };
        memoized(tape, key, z, |tape| {
            let b = tape.value(z).batch();
            let [h, w, c] = self.spec.latent_shape();
            let mut x = tape.reshape(z, &[b, h, w, c])?;
            for block in blocks {
                x = run_block(tape, block, x)?;
            }
            Ok(x)
        })
    }

    fn discriminate(&self, tape: &mut Tape, side: Side, x: Var) -> Result<Var> {
        let (key, disc) = match side {
            Side::Target => (MEMO_DISC_TARGET, &self.disc_target),
            Side::Source => (MEMO_DISC_SOURCE, &self.disc_source),
        };
        memoized(tape, key, x, |tape| {
            let mut h = x;
            for block in &disc.blocks {
                h = run_block(tape, block, h)?;
            }
            let b = tape.value(h).batch();
            let flat = tape.reshape(h, &[b, self.spec.d_z])?;
            let (w, bias) = (tape.param(disc.head[0]), tape.param(disc.head[1]));
            tape.linear(flat, w, bias)
        })
    }

    fn classify(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        memoized(tape, MEMO_CLASSIFIER, z, |tape| {
            let p: Vec<Var> = self.classifier.iter().map(|&id| tape.param(id)).collect();
            let h = tape.linear(z, p[0], p[1])?;
            let h = tape.leaky_relu(h);
            tape.linear(h, p[2], p[3])
        })
    }
}

impl ParameterGroups {
    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn registry(&self) -> &SharingRegistry {
        &self.registry
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn storage_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn storage_key(&self, storage: usize) -> &str {
        &self.storages[storage].key
    }

    pub fn storage_owners(&self, storage: usize) -> &[GroupId] {
        &self.storages[storage].owners
    }

    pub fn storage_index(&self, key: &str) -> Option<usize> {
        self.storages.iter().position(|s| s.key == key)
    }

    pub fn tensor(&self, storage: usize) -> &Tensor {
        &self.tensors[storage]
    }

    pub fn tensor_mut(&mut self, storage: usize) -> &mut Tensor {
        &mut self.tensors[storage]
    }

    /// Resolves `(group, slot)` through the registry to its storage.
    pub fn slot(&self, group: GroupId, slot: &str) -> Option<usize> {
        self.slots.get(&(group, slot.into())).copied()
    }

    pub fn read(&self, group: GroupId, slot: &str) -> Option<&Tensor> {
        self.slot(group, slot).map(|s| &self.tensors[s])
    }

    /// Every `(slot name, storage)` of a group, shared ones included.
    pub fn group_slots(&self, group: GroupId) -> Vec<(String, usize)> {
        self.slots
            .iter()
            .filter(|((g, _), _)| *g == group)
            .map(|((_, name), s)| (name.clone(), *s))
            .collect()
    }

    /// Storages owned by `group` alone.
    pub fn private_storages(&self, group: GroupId) -> Vec<usize> {
        (0..self.storages.len())
            .filter(|&s| self.storages[s].owners == [group])
            .collect()
    }

    /// Total parameter count (each shared storage counted once).
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// L2 norm of every group, used in divergence diagnostics.
    pub fn group_norms(&self) -> Vec<(String, f64)> {
        GroupId::all(self.num_sources)
            .into_iter()
            .map(|g| {
                let sq: f64 = self.group_slots(g).iter().map(|(_, s)| self.tensors[*s].sq_norm()).sum();
                (g.name(), libm::sqrt(sq))
            })
            .collect()
    }

    /// Walks the registry and confirms that every alias resolves to the
    /// storage it names.
    pub fn check_sharing(&self) -> Result<()> {
        for group in &self.registry.groups {
            for (owner, slot) in &group.aliases {
                let resolved = self.slot(*owner, slot).map(|s| &self.tensors[s]);
                let canonical = &self.tensors[group.storage];
                match resolved {
                    Some(t) if t.data().iter().zip(canonical.data()).all(|(a, b)| a.to_bits() == b.to_bits()) => {}
                    _ => {
                        return Err(Error::Degenerate(format!(
                            "alias {}:{} diverged from {}",
                            owner.name(),
                            slot,
                            group.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Mask with `true` for storages owned by at least one of `groups`.
    pub fn trainable_mask(&self, groups: &[GroupId]) -> Vec<bool> {
        self.storages
            .iter()
            .map(|s| s.owners.iter().any(|o| groups.contains(o)))
            .collect()
    }

    fn frozen_tape_run<T>(&self, f: impl FnOnce(&mut Tape) -> Result<T>) -> Result<T> {
        let mask = vec![false; self.tensors.len()];
        let mut tape = Tape::new(&self.tensors, &mask);
        f(&mut tape)
    }

    /// Posterior means of an image batch `[B, H, W, C]`.
    pub fn encode_batch(&self, domain: Domain, x: &Tensor) -> Result<Tensor> {
        self.frozen_tape_run(|tape| {
            let xv = tape.input(x.clone());
            let z = self.encode(tape, domain, xv)?;
            Ok(tape.value(z).clone())
        })
    }

    pub fn decode_batch(&self, side: Side, z: &Tensor) -> Result<Tensor> {
        self.frozen_tape_run(|tape| {
            let zv = tape.input(z.clone());
            let x = self.decode(tape, side, zv)?;
            Ok(tape.value(x).clone())
        })
    }

    /// Probability-of-real for each image, clamped to `(eps, 1 - eps)`.
    pub fn discriminate_batch(&self, side: Side, x: &Tensor) -> Result<Vec<f64>> {
        self.frozen_tape_run(|tape| {
            let xv = tape.input(x.clone());
            let l = self.discriminate(tape, side, xv)?;
            Ok(tape
                .value(l)
                .data()
                .iter()
                .map(|&v| sigmoid(v).clamp(DISC_EPS, 1.0 - DISC_EPS))
                .collect())
        })
    }

    pub fn classify_batch(&self, z: &Tensor) -> Result<Tensor> {
        self.frozen_tape_run(|tape| {
            let zv = tape.input(z.clone());
            let l = self.classify(tape, zv)?;
            Ok(tape.value(l).clone())
        })
    }

    /// Class probabilities for target-domain images (target encoder, then
    /// classifier).
    pub fn predict_target(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode_batch(Domain::Target, x)?;
        Ok(softmax(&self.classify_batch(&z)?))
    }
}

/// `z = mean + eta` with `eta` drawn from `noise`.
pub fn sample_latent(code: &Tensor, noise: &mut dyn LatentNoise) -> Tensor {
    let mut out = noise.sample(code.shape());
    out.add_assign(code);
    out
}
