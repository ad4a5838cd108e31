//! Multi-channel vision transformer.
//!
//! Pipeline: patches → linear embedding → prepend class token → add
//! positional embedding → `L` pre-norm blocks (`z + MSA(LN(z))`, then
//! `z + MLP(LN(z))`) → layer norm of the class token → affine head.
//!
//! Two patch layouts are supported. `StripRows` cuts the image into
//! full-width bands of `P` rows, which for a 99×99 image and `P = 9` gives
//! the 11 patches used by the reference configuration. `Square` cuts
//! `P×P` tiles, `N = HW/P²` (121 for the same image).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::gaf::MultiChannelImage;

/// Spread of the Gaussian initialization for embeddings and weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum VitError {
    #[error("image {height}x{width} is not divisible into patches of size {patch}")]
    IndivisibleImage { height: usize, width: usize, patch: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid transformer config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchMode {
    StripRows,
    Square,
}

impl std::str::FromStr for PatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strip-rows" | "strip" => Ok(Self::StripRows),
            "square" => Ok(Self::Square),
            other => Err(format!("unknown patch mode `{other}` (expected strip-rows or square)")),
        }
    }
}

impl std::fmt::Display for PatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::StripRows => "strip-rows",
            Self::Square => "square",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_mode: PatchMode,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
}

impl VitConfig {
    /// Reference hyperparameters: 11 strips of 9 rows, D = 128, 4 blocks,
    /// 4 heads, MLP width 128, 4 classes.
    pub fn reference(image_size: usize, channels: usize) -> Self {
        Self {
            image_h: image_size,
            image_w: image_size,
            channels,
            patch_mode: PatchMode::StripRows,
            patch_size: 9,
            embed_dim: 128,
            depth: 4,
            heads: 4,
            mlp_dim: 128,
            num_classes: 4,
        }
    }

    pub fn validate(&self) -> Result<(), VitError> {
        if self.patch_size == 0 {
            return Err(VitError::InvalidConfig("patch size must be positive".into()));
        }
        let indivisible = match self.patch_mode {
            PatchMode::StripRows => self.image_h % self.patch_size != 0,
            PatchMode::Square => {
                self.image_h % self.patch_size != 0 || self.image_w % self.patch_size != 0
            }
        };
        if indivisible || self.image_h == 0 || self.image_w == 0 {
            return Err(VitError::IndivisibleImage {
                height: self.image_h,
                width: self.image_w,
                patch: self.patch_size,
            });
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(VitError::InvalidConfig(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.channels == 0 || self.num_classes == 0 || self.mlp_dim == 0 {
            return Err(VitError::InvalidConfig("channels, classes and MLP width must be positive".into()));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        match self.patch_mode {
            PatchMode::StripRows => self.image_h / self.patch_size,
            PatchMode::Square => (self.image_h * self.image_w) / (self.patch_size * self.patch_size),
        }
    }

    pub fn patch_dim(&self) -> usize {
        match self.patch_mode {
            PatchMode::StripRows => self.patch_size * self.image_w * self.channels,
            PatchMode::Square => self.patch_size * self.patch_size * self.channels,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Parameter handles of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub q_w: ParamId,
    pub q_b: ParamId,
    pub k_w: ParamId,
    pub k_b: ParamId,
    pub v_w: ParamId,
    pub v_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

/// Parameter handles of the whole transformer, resolved against a
/// [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct VitParams {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub class_token: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<BlockParams>,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// `(name, rows, cols, init)` for every transformer parameter, in
/// registration order.
fn layout(config: &VitConfig) -> Vec<(String, usize, usize, Init)> {
    let d = config.embed_dim;
    let mut out = vec![
        ("vit.patch_embed.w".to_string(), d, config.patch_dim(), Init::Normal),
        ("vit.patch_embed.b".to_string(), 1, d, Init::Zeros),
        ("vit.class_token".to_string(), 1, d, Init::Normal),
        ("vit.pos_embed".to_string(), config.num_patches() + 1, d, Init::Normal),
    ];
    for l in 0..config.depth {
        let p = format!("vit.block{l}");
        out.extend([
            (format!("{p}.ln1.g"), 1, d, Init::Ones),
            (format!("{p}.ln1.b"), 1, d, Init::Zeros),
            (format!("{p}.msa.q"), d, d, Init::Normal),
            (format!("{p}.msa.q_b"), 1, d, Init::Zeros),
            (format!("{p}.msa.k"), d, d, Init::Normal),
            (format!("{p}.msa.k_b"), 1, d, Init::Zeros),
            (format!("{p}.msa.v"), d, d, Init::Normal),
            (format!("{p}.msa.v_b"), 1, d, Init::Zeros),
            (format!("{p}.msa.out"), d, d, Init::Normal),
            (format!("{p}.msa.out_b"), 1, d, Init::Zeros),
            (format!("{p}.ln2.g"), 1, d, Init::Ones),
            (format!("{p}.ln2.b"), 1, d, Init::Zeros),
            (format!("{p}.mlp.fc1"), config.mlp_dim, d, Init::Normal),
            (format!("{p}.mlp.fc1_b"), 1, config.mlp_dim, Init::Zeros),
            (format!("{p}.mlp.fc2"), d, config.mlp_dim, Init::Normal),
            (format!("{p}.mlp.fc2_b"), 1, d, Init::Zeros),
        ]);
    }
    out.extend([
        ("vit.norm.g".to_string(), 1, d, Init::Ones),
        ("vit.norm.b".to_string(), 1, d, Init::Zeros),
        ("vit.head.w".to_string(), config.num_classes, d, Init::Normal),
        ("vit.head.b".to_string(), 1, config.num_classes, Init::Zeros),
    ]);
    out
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

impl VitParams {
    /// Registers freshly initialized parameters in `store`.
    pub fn register(store: &mut ParamStore, config: &VitConfig, rng: &mut impl Rng) -> Result<Self, VitError> {
        config.validate()?;
        for (name, rows, cols, init) in layout(config) {
            match init {
                Init::Normal => store.insert_normal(name, rows, cols, INIT_STD, rng),
                Init::Zeros => store.insert(name, Matrix::zeros(rows, cols)),
                Init::Ones => store.insert(name, Matrix::filled(rows, cols, 1.0)),
            };
        }
        Self::resolve(store, config)
    }

    /// Looks up every parameter by name and checks its shape.
    pub fn resolve(store: &ParamStore, config: &VitConfig) -> Result<Self, VitError> {
        config.validate()?;
        for (name, rows, cols, _) in layout(config) {
            let p = store.by_name(&name).ok_or_else(|| VitError::MissingParam(name.clone()))?;
            if p.value.shape() != (rows, cols) {
                return Err(VitError::DimensionMismatch(format!(
                    "`{name}` is {:?}, expected ({rows}, {cols})",
                    p.value.shape()
                )));
            }
        }
        let id = |n: &str| store.id(n).expect("checked above");
        let blocks = (0..config.depth)
            .map(|l| {
                let b = |s: &str| id(&format!("vit.block{l}.{s}"));
                BlockParams {
                    ln1_g: b("ln1.g"),
                    ln1_b: b("ln1.b"),
                    q_w: b("msa.q"),
                    q_b: b("msa.q_b"),
                    k_w: b("msa.k"),
                    k_b: b("msa.k_b"),
                    v_w: b("msa.v"),
                    v_b: b("msa.v_b"),
                    out_w: b("msa.out"),
                    out_b: b("msa.out_b"),
                    ln2_g: b("ln2.g"),
                    ln2_b: b("ln2.b"),
                    fc1_w: b("mlp.fc1"),
                    fc1_b: b("mlp.fc1_b"),
                    fc2_w: b("mlp.fc2"),
                    fc2_b: b("mlp.fc2_b"),
                }
            })
            .collect();
        Ok(Self {
            patch_w: id("vit.patch_embed.w"),
            patch_b: id("vit.patch_embed.b"),
            class_token: id("vit.class_token"),
            pos_embed: id("vit.pos_embed"),
            blocks,
            norm_g: id("vit.norm.g"),
            norm_b: id("vit.norm.b"),
            head_w: id("vit.head.w"),
            head_b: id("vit.head.b"),
        })
    }
}

/// `(N+1)×D` tokens; row 0 is the class token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence(pub Matrix);

/// Class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn probabilities(&self) -> Vec<f64> {
        crate::engine::softmax(&self.0)
    }
}

/// Flat-buffer gather indices mapping pixel storage to square patches,
/// each flattened in `(row, column, channel)` order.
pub fn square_patch_indices(config: &VitConfig) -> Arc<[usize]> {
    let (p, w, c) = (config.patch_size, config.image_w, config.channels);
    let per_row = w / p;
    let mut idx = Vec::with_capacity(config.image_h * w * c);
    for patch in 0..config.num_patches() {
        let (pr, pc) = (patch / per_row, patch % per_row);
        for r in 0..p {
            for col in 0..p {
                let pixel = (pr * p + r) * w + pc * p + col;
                idx.extend((0..c).map(|ch| pixel * c + ch));
            }
        }
    }
    idx.into()
}

/// Reorganizes a `(H·W)×C` pixel node into `N×patch_dim` patches.
pub fn patchify_graph(tape: &mut Tape<'_>, pixels: Var, config: &VitConfig, indices: Option<&Arc<[usize]>>) -> Var {
    let (n, dim) = (config.num_patches(), config.patch_dim());
    match config.patch_mode {
        // Strips are contiguous in (row, column, channel) storage.
        PatchMode::StripRows => tape.reshape(pixels, n, dim),
        PatchMode::Square => {
            let idx = indices.cloned().unwrap_or_else(|| square_patch_indices(config));
            tape.gather(pixels, idx, n, dim)
        }
    }
}

pub fn embed_graph(tape: &mut Tape<'_>, patches: Var, class_token: Var, pos_embed: Var, w: Var, b: Var) -> Var {
    let embedded = tape.linear(patches, w, Some(b));
    let tokens = tape.concat_rows(&[class_token, embedded]);
    tape.add(tokens, pos_embed)
}

/// `z + MSA(LN(z))`. Returns the output and each head's attention matrix.
pub fn msa_graph<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    block: &BlockParams,
    z: Var,
    heads: usize,
) -> (Var, Vec<Var>) {
    let p = |tape: &mut Tape<'a>, id| tape.param(store, id);
    let (g, b) = (p(tape, block.ln1_g), p(tape, block.ln1_b));
    let normed = tape.layer_norm(z, g, b);
    let (qw, qb) = (p(tape, block.q_w), p(tape, block.q_b));
    let (kw, kb) = (p(tape, block.k_w), p(tape, block.k_b));
    let (vw, vb) = (p(tape, block.v_w), p(tape, block.v_b));
    let q = tape.linear(normed, qw, Some(qb));
    let k = tape.linear(normed, kw, Some(kb));
    let v = tape.linear(normed, vw, Some(vb));
    let d = tape.value(z).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attns = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores);
        outs.push(tape.matmul(attn, vh));
        attns.push(attn);
    }
    let merged = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    let (ow, ob) = (p(tape, block.out_w), p(tape, block.out_b));
    let projected = tape.linear(merged, ow, Some(ob));
    (tape.add(projected, z), attns)
}

/// `z + fc2(GELU(fc1(LN(z))))`.
pub fn mlp_graph<'a>(tape: &mut Tape<'a>, store: &'a ParamStore, block: &BlockParams, z: Var) -> Var {
    let p = |tape: &mut Tape<'a>, id| tape.param(store, id);
    let (g, b) = (p(tape, block.ln2_g), p(tape, block.ln2_b));
    let normed = tape.layer_norm(z, g, b);
    let (w1, b1) = (p(tape, block.fc1_w), p(tape, block.fc1_b));
    let (w2, b2) = (p(tape, block.fc2_w), p(tape, block.fc2_b));
    let hidden = tape.linear(normed, w1, Some(b1));
    let hidden = tape.gelu(hidden);
    let out = tape.linear(hidden, w2, Some(b2));
    tape.add(out, z)
}

pub fn encode_graph<'a>(tape: &mut Tape<'a>, store: &'a ParamStore, params: &VitParams, z0: Var, heads: usize) -> Var {
    let mut z = z0;
    for block in &params.blocks {
        z = msa_graph(tape, store, block, z, heads).0;
        z = mlp_graph(tape, store, block, z);
    }
    z
}

/// Layer norm of the class token followed by the linear head; `1×K`.
pub fn classify_graph<'a>(tape: &mut Tape<'a>, store: &'a ParamStore, params: &VitParams, z: Var) -> Var {
    let cls = tape.slice_rows(z, 0, 1);
    let g = tape.param(store, params.norm_g);
    let b = tape.param(store, params.norm_b);
    let normed = tape.layer_norm(cls, g, b);
    let w = tape.param(store, params.head_w);
    let hb = tape.param(store, params.head_b);
    tape.linear(normed, w, Some(hb))
}

/// Patches → logits on a `(H·W)×C` pixel node.
pub fn vit_graph<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    params: &VitParams,
    config: &VitConfig,
    pixels: Var,
    indices: Option<&Arc<[usize]>>,
) -> Var {
    let patches = patchify_graph(tape, pixels, config, indices);
    let cls = tape.param(store, params.class_token);
    let pos = tape.param(store, params.pos_embed);
    let w = tape.param(store, params.patch_w);
    let b = tape.param(store, params.patch_b);
    let z0 = embed_graph(tape, patches, cls, pos, w, b);
    let z = encode_graph(tape, store, params, z0, config.heads);
    classify_graph(tape, store, params, z)
}

fn check_image(image: &MultiChannelImage, config: &VitConfig) -> Result<(), VitError> {
    config.validate()?;
    let expect = (config.image_h, config.image_w, config.channels);
    if image.shape() != expect {
        return Err(VitError::DimensionMismatch(format!(
            "image {:?}, config expects {expect:?}",
            image.shape()
        )));
    }
    Ok(())
}

pub fn patchify(image: &MultiChannelImage, config: &VitConfig) -> Result<Matrix, VitError> {
    check_image(image, config)?;
    let mut tape = Tape::new();
    let x = tape.constant_ref(image.pixels());
    let out = patchify_graph(&mut tape, x, config, None);
    Ok(tape.value(out).clone())
}

pub fn embed_tokens(patches: &Matrix, store: &ParamStore, params: &VitParams) -> Result<TokenSequence, VitError> {
    let w = store.value(params.patch_w);
    let pos = store.value(params.pos_embed);
    if patches.cols() != w.cols() || patches.rows() + 1 != pos.rows() {
        return Err(VitError::DimensionMismatch(format!(
            "patches {:?} vs embedding {:?} and positions {:?}",
            patches.shape(),
            w.shape(),
            pos.shape()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(patches);
    let cls = tape.param(store, params.class_token);
    let pos = tape.param(store, params.pos_embed);
    let w = tape.param(store, params.patch_w);
    let b = tape.param(store, params.patch_b);
    let out = embed_graph(&mut tape, x, cls, pos, w, b);
    Ok(TokenSequence(tape.value(out).clone()))
}

fn check_tokens(z: &TokenSequence, store: &ParamStore, block: &BlockParams, heads: usize) -> Result<(), VitError> {
    let d = store.value(block.ln1_g).cols();
    if z.0.cols() != d || heads == 0 || d % heads != 0 {
        return Err(VitError::DimensionMismatch(format!(
            "tokens of width {} for a block of width {d} with {heads} heads",
            z.0.cols()
        )));
    }
    Ok(())
}

pub fn msa_block(z: &TokenSequence, store: &ParamStore, block: &BlockParams, heads: usize) -> Result<TokenSequence, VitError> {
    check_tokens(z, store, block, heads)?;
    let mut tape = Tape::new();
    let x = tape.constant_ref(&z.0);
    let (out, _) = msa_graph(&mut tape, store, block, x, heads);
    Ok(TokenSequence(tape.value(out).clone()))
}

/// Per-head attention matrices of one block, for inspection.
pub fn attention_maps(z: &TokenSequence, store: &ParamStore, block: &BlockParams, heads: usize) -> Result<Vec<Matrix>, VitError> {
    check_tokens(z, store, block, heads)?;
    let mut tape = Tape::new();
    let x = tape.constant_ref(&z.0);
    let (_, attns) = msa_graph(&mut tape, store, block, x, heads);
    Ok(attns.into_iter().map(|a| tape.value(a).clone()).collect())
}

pub fn mlp_block(z: &TokenSequence, store: &ParamStore, block: &BlockParams) -> Result<TokenSequence, VitError> {
    check_tokens(z, store, block, 1)?;
    let mut tape = Tape::new();
    let x = tape.constant_ref(&z.0);
    let out = mlp_graph(&mut tape, store, block, x);
    Ok(TokenSequence(tape.value(out).clone()))
}

pub fn encode(z0: &TokenSequence, store: &ParamStore, params: &VitParams, heads: usize) -> Result<TokenSequence, VitError> {
    if let Some(block) = params.blocks.first() {
        check_tokens(z0, store, block, heads)?;
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(&z0.0);
    let out = encode_graph(&mut tape, store, params, x, heads);
    Ok(TokenSequence(tape.value(out).clone()))
}

pub fn classify(z: &TokenSequence, store: &ParamStore, params: &VitParams) -> Result<Logits, VitError> {
    let d = store.value(params.norm_g).cols();
    if z.0.cols() != d || z.0.rows() == 0 {
        return Err(VitError::DimensionMismatch(format!("tokens {:?} for width {d}", z.0.shape())));
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(&z.0);
    let out = classify_graph(&mut tape, store, params, x);
    Ok(Logits(tape.value(out).as_slice().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_patch_counts() {
        let strip = VitConfig::reference(99, 6);
        strip.validate().unwrap();
        assert_eq!(strip.num_patches(), 11);
        assert_eq!(strip.patch_dim(), 5346);
        let square = VitConfig {
            patch_mode: PatchMode::Square,
            ..strip
        };
        assert_eq!(square.num_patches(), 121);
        assert_eq!(square.patch_dim(), 486);
    }

    #[test]
    fn indivisible_images_are_rejected() {
        let cfg = VitConfig {
            patch_size: 10,
            ..VitConfig::reference(99, 6)
        };
        assert_eq!(
            cfg.validate(),
            Err(VitError::IndivisibleImage { height: 99, width: 99, patch: 10 })
        );
        let cfg = VitConfig {
            heads: 3,
            ..VitConfig::reference(99, 6)
        };
        assert!(matches!(cfg.validate(), Err(VitError::InvalidConfig(_))));
    }

    #[test]
    fn patch_mode_parses() {
        assert_eq!("strip-rows".parse::<PatchMode>().unwrap(), PatchMode::StripRows);
        assert_eq!("square".parse::<PatchMode>().unwrap(), PatchMode::Square);
        assert!("hex".parse::<PatchMode>().is_err());
    }

    #[test]
    fn checkpoint_names_follow_hierarchy() {
        let mut store = ParamStore::new(0);
        let cfg = VitConfig::reference(99, 6);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        VitParams::register(&mut store, &cfg, &mut rng).unwrap();
        assert!(store.by_name("vit.patch_embed.w").is_some());
        assert!(store.by_name("vit.block3.msa.q").is_some());
        assert!(store.by_name("vit.block4.msa.q").is_none());
        assert_eq!(store.by_name("vit.pos_embed").unwrap().value.shape(), (12, 128));
    }

    #[test]
    fn logits_argmax_prefers_first_on_ties() {
        assert_eq!(Logits(vec![1.0, 3.0, 3.0, 0.0]).argmax(), 1);
        let p = Logits(vec![0.0; 4]).probabilities();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }
}
