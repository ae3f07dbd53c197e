//! Parameter catalogs for the three production dual-encoder architectures.
//!
//! Each catalog enumerates every tensor of one contrastive image/text model
//! — names following the released checkpoint layout, shapes, and the kind
//! each name classifies to. The catalogs carry no weights; they exist so
//! selection sizes (bias-only, bias+normalization) can be computed and
//! checked exactly, and so cache partitioning has real fingerprints to work
//! with.
//!
//! Layout reference: the visual tower is either a modified ResNet (stem of
//! three convolutions each followed by batch norm, four bottleneck stages,
//! attention pooling) or a vision transformer (patch convolution, class
//! token, pre/post layer norms, residual blocks, projection); the text tower
//! is always a 12-block transformer with token/position embeddings, a final
//! layer norm, and a projection.

use super::{ParamInfo, ParamKind};

/// One architecture's complete tensor enumeration.
#[derive(Debug, Clone)]
pub struct EncoderCatalog {
    pub name: String,
    /// Dimensionality of the shared embedding space.
    pub embed_dim: usize,
    pub params: Vec<ParamInfo>,
}

impl EncoderCatalog {
    pub fn total_count(&self) -> usize {
        self.params.iter().map(ParamInfo::count).sum()
    }

    pub fn count_of(&self, kind: ParamKind) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == Some(kind))
            .map(ParamInfo::count)
            .sum()
    }
}

fn push(params: &mut Vec<ParamInfo>, name: String, shape: Vec<usize>) {
    params.push(ParamInfo::tagged(name, shape));
}

/// One residual attention block: self-attention with fused in-projection,
/// two layer norms, and a 4x MLP.
fn attention_block(params: &mut Vec<ParamInfo>, prefix: &str, width: usize) {
    push(params, format!("{prefix}.attn.in_proj_weight"), vec![3 * width, width]);
    push(params, format!("{prefix}.attn.in_proj_bias"), vec![3 * width]);
    push(params, format!("{prefix}.attn.out_proj.weight"), vec![width, width]);
    push(params, format!("{prefix}.attn.out_proj.bias"), vec![width]);
    push(params, format!("{prefix}.ln_1.weight"), vec![width]);
    push(params, format!("{prefix}.ln_1.bias"), vec![width]);
    push(params, format!("{prefix}.mlp.c_fc.weight"), vec![4 * width, width]);
    push(params, format!("{prefix}.mlp.c_fc.bias"), vec![4 * width]);
    push(params, format!("{prefix}.mlp.c_proj.weight"), vec![width, 4 * width]);
    push(params, format!("{prefix}.mlp.c_proj.bias"), vec![width]);
    push(params, format!("{prefix}.ln_2.weight"), vec![width]);
    push(params, format!("{prefix}.ln_2.bias"), vec![width]);
}

const TEXT_VOCAB: usize = 49408;
const TEXT_CONTEXT: usize = 77;
const TEXT_LAYERS: usize = 12;

fn text_tower(params: &mut Vec<ParamInfo>, width: usize, embed_dim: usize) {
    push(params, "token_embedding.weight".into(), vec![TEXT_VOCAB, width]);
    push(params, "positional_embedding".into(), vec![TEXT_CONTEXT, width]);
    for i in 0..TEXT_LAYERS {
        attention_block(params, &format!("transformer.resblocks.{i}"), width);
    }
    push(params, "ln_final.weight".into(), vec![width]);
    push(params, "ln_final.bias".into(), vec![width]);
    push(params, "text_projection".into(), vec![width, embed_dim]);
}

/// One bottleneck: 1x1 reduce, 3x3, 1x1 expand (x4), each with batch norm;
/// the first block of a stage also carries the downsample projection whose
/// batch norm is named by position (`downsample.1`), not by a `bn` prefix.
fn bottleneck(params: &mut Vec<ParamInfo>, prefix: &str, inplanes: usize, planes: usize, downsample: bool) {
    let expanded = planes * 4;
    push(params, format!("{prefix}.conv1.weight"), vec![planes, inplanes, 1, 1]);
    push(params, format!("{prefix}.bn1.weight"), vec![planes]);
    push(params, format!("{prefix}.bn1.bias"), vec![planes]);
    push(params, format!("{prefix}.conv2.weight"), vec![planes, planes, 3, 3]);
    push(params, format!("{prefix}.bn2.weight"), vec![planes]);
    push(params, format!("{prefix}.bn2.bias"), vec![planes]);
    push(params, format!("{prefix}.conv3.weight"), vec![expanded, planes, 1, 1]);
    push(params, format!("{prefix}.bn3.weight"), vec![expanded]);
    push(params, format!("{prefix}.bn3.bias"), vec![expanded]);
    if downsample {
        push(params, format!("{prefix}.downsample.0.weight"), vec![expanded, inplanes, 1, 1]);
        push(params, format!("{prefix}.downsample.1.weight"), vec![expanded]);
        push(params, format!("{prefix}.downsample.1.bias"), vec![expanded]);
    }
}

/// Modified ResNet visual tower: three-conv stem, four bottleneck stages,
/// attention pooling to the shared space.
fn resnet_visual(
    params: &mut Vec<ParamInfo>,
    width: usize,
    stage_blocks: [usize; 4],
    spacial_dim: usize,
    output_dim: usize,
) {
    let half = width / 2;
    push(params, "visual.conv1.weight".into(), vec![half, 3, 3, 3]);
    push(params, "visual.bn1.weight".into(), vec![half]);
    push(params, "visual.bn1.bias".into(), vec![half]);
    push(params, "visual.conv2.weight".into(), vec![half, half, 3, 3]);
    push(params, "visual.bn2.weight".into(), vec![half]);
    push(params, "visual.bn2.bias".into(), vec![half]);
    push(params, "visual.conv3.weight".into(), vec![width, half, 3, 3]);
    push(params, "visual.bn3.weight".into(), vec![width]);
    push(params, "visual.bn3.bias".into(), vec![width]);

    let mut inplanes = width;
    for (stage, &blocks) in stage_blocks.iter().enumerate() {
        let planes = width << stage;
        for block in 0..blocks {
            // every stage opens with a projection shortcut: stage 1 for the
            // channel expansion, stages 2-4 for the stride as well
            let needs_downsample = block == 0;
            bottleneck(
                params,
                &format!("visual.layer{}.{block}", stage + 1),
                inplanes,
                planes,
                needs_downsample,
            );
            inplanes = planes * 4;
        }
    }

    let embed = width * 32;
    push(
        params,
        "visual.attnpool.positional_embedding".into(),
        vec![spacial_dim * spacial_dim + 1, embed],
    );
    for proj in ["k_proj", "q_proj", "v_proj"] {
        push(params, format!("visual.attnpool.{proj}.weight"), vec![embed, embed]);
        push(params, format!("visual.attnpool.{proj}.bias"), vec![embed]);
    }
    push(params, "visual.attnpool.c_proj.weight".into(), vec![output_dim, embed]);
    push(params, "visual.attnpool.c_proj.bias".into(), vec![output_dim]);
}

/// Vision transformer visual tower.
fn vit_visual(
    params: &mut Vec<ParamInfo>,
    width: usize,
    patch: usize,
    resolution: usize,
    layers: usize,
    output_dim: usize,
) {
    let grid = resolution / patch;
    push(params, "visual.class_embedding".into(), vec![width]);
    push(params, "visual.positional_embedding".into(), vec![grid * grid + 1, width]);
    push(params, "visual.conv1.weight".into(), vec![width, 3, patch, patch]);
    push(params, "visual.ln_pre.weight".into(), vec![width]);
    push(params, "visual.ln_pre.bias".into(), vec![width]);
    for i in 0..layers {
        attention_block(params, &format!("visual.transformer.resblocks.{i}"), width);
    }
    push(params, "visual.ln_post.weight".into(), vec![width]);
    push(params, "visual.ln_post.bias".into(), vec![width]);
    push(params, "visual.proj".into(), vec![width, output_dim]);
}

/// Vision-transformer model: 16px patches at 224px, width 768, 12 layers;
/// text width 512; shared space 512.
pub fn vit_b_16() -> EncoderCatalog {
    let mut params = Vec::new();
    vit_visual(&mut params, 768, 16, 224, 12, 512);
    text_tower(&mut params, 512, 512);
    EncoderCatalog {
        name: "ViT-B/16".into(),
        embed_dim: 512,
        params,
    }
}

/// ResNet model with stages [3, 4, 23, 3] at width 64, pooled at 7x7 to a
/// 512-dimensional space; text width 512.
pub fn rn101() -> EncoderCatalog {
    let mut params = Vec::new();
    resnet_visual(&mut params, 64, [3, 4, 23, 3], 7, 512);
    text_tower(&mut params, 512, 512);
    EncoderCatalog {
        name: "RN101".into(),
        embed_dim: 512,
        params,
    }
}

/// The 16x-compute ResNet: stages [6, 8, 18, 8] at width 96, 384px input
/// pooled at 12x12 to a 768-dimensional space; text width 768.
pub fn rn50x16() -> EncoderCatalog {
    let mut params = Vec::new();
    resnet_visual(&mut params, 96, [6, 8, 18, 8], 12, 768);
    text_tower(&mut params, 768, 768);
    EncoderCatalog {
        name: "RN50x16".into(),
        embed_dim: 768,
        params,
    }
}

/// Case-insensitive lookup by the names users write in configs.
pub fn catalog_by_name(name: &str) -> Option<EncoderCatalog> {
    match name.to_lowercase().replace(['/', '_'], "-").as_str() {
        "vit-b-16" | "vitb16" | "vit-b16" => Some(vit_b_16()),
        "rn101" => Some(rn101()),
        "rn50x16" => Some(rn50x16()),
        _ => None,
    }
}

pub fn all_catalogs() -> Vec<EncoderCatalog> {
    vec![rn50x16(), vit_b_16(), rn101()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{bias_named_count, binor_count, count_by_kind};
    use std::collections::HashSet;

    #[test]
    fn selection_sizes_are_exact() {
        // (catalog, everything named bias, bias + normalization)
        let expected = [
            (rn50x16(), 209_088, 319_488),
            (vit_b_16(), 171_008, 203_776),
            (rn101(), 127_488, 189_184),
        ];
        for (catalog, bias, binor) in expected {
            assert_eq!(
                bias_named_count(&catalog.params).unwrap(),
                bias,
                "bias selection for {}",
                catalog.name
            );
            assert_eq!(
                binor_count(&catalog.params).unwrap(),
                binor,
                "bias+normalization selection for {}",
                catalog.name
            );
        }
    }

    #[test]
    fn gain_counts_follow_from_the_selections() {
        // the γ share is exactly the gap between the two selections
        assert_eq!(rn50x16().count_of(ParamKind::NormGain), 110_400);
        assert_eq!(vit_b_16().count_of(ParamKind::NormGain), 32_768);
        assert_eq!(rn101().count_of(ParamKind::NormGain), 61_696);
    }

    #[test]
    fn catalogs_are_fully_tagged_with_unique_names() {
        for catalog in all_catalogs() {
            count_by_kind(&catalog.params).expect("every entry tagged");
            let mut seen = HashSet::new();
            for p in &catalog.params {
                assert!(seen.insert(&p.name), "duplicate name {} in {}", p.name, catalog.name);
                assert!(!p.shape.is_empty(), "scalar-shaped {} in {}", p.name, catalog.name);
            }
        }
    }

    #[test]
    fn downsample_norms_split_by_name() {
        let catalog = rn101();
        let gamma = catalog
            .params
            .iter()
            .find(|p| p.name == "visual.layer2.0.downsample.1.weight")
            .unwrap();
        assert_eq!(gamma.kind, Some(ParamKind::Weight), "positional name freezes the gain");
        let beta = catalog
            .params
            .iter()
            .find(|p| p.name == "visual.layer2.0.downsample.1.bias")
            .unwrap();
        assert_eq!(beta.kind, Some(ParamKind::Bias), "the shift still matches the bias rule");
        // later blocks of a stage have no downsample path at all
        assert!(!catalog
            .params
            .iter()
            .any(|p| p.name == "visual.layer2.1.downsample.1.weight"));
    }

    #[test]
    fn spot_check_shapes() {
        let vit = vit_b_16();
        let tok = vit.params.iter().find(|p| p.name == "token_embedding.weight").unwrap();
        assert_eq!(tok.shape, vec![49408, 512]);
        let pos = vit.params.iter().find(|p| p.name == "visual.positional_embedding").unwrap();
        assert_eq!(pos.shape, vec![197, 768]);

        let big = rn50x16();
        let pool = big
            .params
            .iter()
            .find(|p| p.name == "visual.attnpool.positional_embedding")
            .unwrap();
        assert_eq!(pool.shape, vec![145, 3072]);

        let rn = rn101();
        let cproj = rn.params.iter().find(|p| p.name == "visual.attnpool.c_proj.weight").unwrap();
        assert_eq!(cproj.shape, vec![512, 2048]);
    }

    #[test]
    fn lookup_accepts_config_spellings() {
        assert_eq!(catalog_by_name("ViT-B/16").unwrap().name, "ViT-B/16");
        assert_eq!(catalog_by_name("vit-b-16").unwrap().name, "ViT-B/16");
        assert_eq!(catalog_by_name("rn101").unwrap().name, "RN101");
        assert_eq!(catalog_by_name("RN50x16").unwrap().name, "RN50x16");
        assert!(catalog_by_name("rn50").is_none());
    }
}
