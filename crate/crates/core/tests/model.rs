mod common;

use common::{random, rng};
use docbinformer::data::GrayImage;
use docbinformer::model::layers::{
    decode, embed_patches, embed_subpatches, encoder_block, fuse, local_encode, mpa,
    self_attention, BlockOptions,
};
use docbinformer::model::{
    parameter_count, patchify, stitch, subpatchify, tokenize_batch, AblationRow, ModelConfig,
    ParamKind, TlVit, TlVitParams, ABLATION_ROWS,
};
use docbinformer::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

fn random_tile(size: usize, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::new(
        size,
        size,
        (0..size * size).map(|_| r.random::<f32>()).collect(),
    )
    .unwrap()
}

fn random_params(cfg: &ModelConfig, seed: u64) -> TlVitParams<Tensor<f64>> {
    let mut r = rng(seed);
    TlVitParams::shapes(cfg).map(|_, kind, shape| {
        let t = random(shape, 0.4, &mut r);
        match kind {
            ParamKind::NormScale => t.map(|v| 1.0 + v),
            _ => t,
        }
    })
}

fn opts(heads: usize) -> BlockOptions {
    BlockOptions {
        heads,
        ln_eps: 1e-6,
        attn_residual: true,
    }
}

#[test]
fn patchify_full_tile_and_single_patch() {
    let tile = random_tile(256, 1);
    let rows = patchify::<f32>(&tile, 16).unwrap();
    assert_eq!(rows.shape(), &[256, 256]);
    let small = random_tile(16, 2);
    let one = patchify::<f32>(&small, 16).unwrap();
    assert_eq!(one.shape(), &[1, 256]);
    assert_eq!(one.data(), small.pixels());
    assert!(patchify::<f32>(&random_tile(20, 3), 16).is_err());
}

#[test]
fn stitch_inverts_patchify_bit_exactly() {
    let tile = random_tile(256, 4);
    let rows = patchify::<f32>(&tile, 16).unwrap();
    assert_eq!(stitch(&rows, 256, 256, 16).unwrap(), tile);
    let constant = Tensor::<f32>::full([16, 64], 0.25);
    let img = stitch(&constant, 32, 32, 8).unwrap();
    assert!(img.pixels().iter().all(|&v| v == 0.25));
}

#[test]
fn stitch_depends_on_patch_order() {
    let tile = random_tile(64, 5);
    let rows = patchify::<f32>(&tile, 16).unwrap();
    let n = 16;
    let width = 256;
    let mut shuffled = Vec::with_capacity(rows.numel());
    for i in (0..n).rev() {
        shuffled.extend_from_slice(&rows.data()[i * width..(i + 1) * width]);
    }
    let shuffled = Tensor::new([n, width], shuffled).unwrap();
    assert_ne!(stitch(&shuffled, 64, 64, 16).unwrap(), tile);
}

#[test]
fn subpatchify_cases() {
    let tile = random_tile(32, 6);
    let subs = subpatchify::<f32>(&tile, 16, 8).unwrap();
    assert_eq!(subs.shape(), &[4, 4, 64]);
    let same = subpatchify::<f32>(&tile, 16, 16).unwrap();
    let rows = patchify::<f32>(&tile, 16).unwrap();
    assert_eq!(same.data(), rows.data());
    for i in 0..4 {
        let mut a: Vec<u32> = rows.data()[i * 256..(i + 1) * 256]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let mut b: Vec<u32> = subs.data()[i * 256..(i + 1) * 256]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "patch {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn patch_round_trip(grid in 1usize..5, p in prop::sample::select(vec![2usize, 4, 8]), seed in any::<u64>()) {
        let tile = random_tile(grid * p, seed);
        let rows = patchify::<f64>(&tile, p).unwrap();
        prop_assert_eq!(stitch(&rows, grid * p, grid * p, p).unwrap(), tile);
    }
}

#[test]
fn embedding_degenerate_cases() {
    let cfg = ModelConfig::tiny();
    let params = random_params(&cfg, 7);
    let tile = random_tile(16, 8);
    let tape = Tape::new();
    let (raw, sub_raw) = tokenize_batch::<f64>(&tape, &cfg, &[tile]).unwrap();
    let mut p = params.bind(&tape, false);

    let zero_pe = tape.constant(Tensor::zeros(params.patch_pos.shape().to_vec()));
    let projected = embed_patches(&tape, &raw, &p.patch_embed, &zero_pe).unwrap();
    let direct = tape
        .add(
            &tape.matmul(&raw, &p.patch_embed.weight).unwrap(),
            &p.patch_embed.bias,
        )
        .unwrap();
    assert_eq!(projected.value(), direct.value());

    p.patch_embed.weight = tape.constant(Tensor::zeros(params.patch_embed.weight.shape().to_vec()));
    p.patch_embed.bias = tape.constant(Tensor::zeros(params.patch_embed.bias.shape().to_vec()));
    let pe_only = embed_patches(&tape, &raw, &p.patch_embed, &p.patch_pos).unwrap();
    assert_eq!(pe_only.shape(), &[1, 4, 16]);
    assert_eq!(pe_only.value().data(), params.patch_pos.data());

    p.subpatch_embed.weight =
        tape.constant(Tensor::zeros(params.subpatch_embed.weight.shape().to_vec()));
    p.subpatch_embed.bias =
        tape.constant(Tensor::zeros(params.subpatch_embed.bias.shape().to_vec()));
    let sub = embed_subpatches(&tape, &sub_raw, &p.subpatch_embed, &p.subpatch_pos).unwrap();
    assert_eq!(sub.shape(), &[1, 4, 4, 8]);
    for chunk in sub.value().data().chunks(params.subpatch_pos.numel()) {
        assert_eq!(chunk, params.subpatch_pos.data());
    }
}

#[test]
fn identical_patches_embed_identically() {
    let cfg = ModelConfig::tiny();
    let params = random_params(&cfg, 9);
    // Left and right halves identical.
    let base = random_tile(16, 10);
    let tile = GrayImage::from_fn(16, 16, |x, y| base.get(x % 8, y));
    let tape = Tape::new();
    let (_, sub_raw) = tokenize_batch::<f64>(&tape, &cfg, &[tile]).unwrap();
    let p = params.bind(&tape, false);
    let sub = embed_subpatches(&tape, &sub_raw, &p.subpatch_embed, &p.subpatch_pos).unwrap();
    let local = local_encode(&tape, &sub, &p.local, opts(2)).unwrap();
    let d = sub.value().data();
    let group = 4 * 8;
    assert_eq!(d[..group], d[group..2 * group]);
    let l = local.value().data();
    assert_eq!(l[..group], l[group..2 * group]);
}

#[test]
fn default_embedding_shapes() {
    let cfg = ModelConfig::default();
    let model = TlVit::<f32>::init(cfg, 0).unwrap();
    let tape = Tape::new();
    let (raw, sub_raw) = tokenize_batch(&tape, &cfg, &[random_tile(256, 11)]).unwrap();
    let p = model.params().bind(&tape, false);
    let x = embed_patches(&tape, &raw, &p.patch_embed, &p.patch_pos).unwrap();
    assert_eq!(x.shape(), &[1, 256, 768]);
    let s = embed_subpatches(&tape, &sub_raw, &p.subpatch_embed, &p.subpatch_pos).unwrap();
    assert_eq!(s.shape(), &[1, 256, 4, 256]);
    assert_eq!(cfg.global_dim / cfg.global_heads, 96);
    let local = local_encode(&tape, &s, &p.local, opts(cfg.local_heads)).unwrap();
    assert_eq!(local.shape(), &[1, 256, 4, 256]);
}

fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dk = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len())
                .map(|c| e.iter().zip(v).map(|(w, vj)| w / z * vj[c]).sum())
                .collect()
        })
        .collect()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let w = *t.shape().last().unwrap();
    t.data().chunks(w).map(|c| c.to_vec()).collect()
}

#[test]
fn attention_cases() {
    let tape = Tape::new();
    let c = |t: Tensor<f64>| tape.constant(t);

    let v1 = random(&[1, 4], 1.0, &mut rng(12));
    let out = self_attention(
        &tape,
        &c(random(&[1, 4], 1.0, &mut rng(13))),
        &c(random(&[1, 4], 1.0, &mut rng(14))),
        &c(v1.clone()),
    )
    .unwrap();
    assert_eq!(out.value(), &v1);

    let v = random(&[3, 2], 1.0, &mut rng(15));
    let zeros = Tensor::zeros([3, 4]);
    let out = self_attention(&tape, &c(zeros.clone()), &c(zeros), &c(v.clone())).unwrap();
    for col in 0..2 {
        let mean = (0..3).map(|r| v.data()[r * 2 + col]).sum::<f64>() / 3.0;
        for r in 0..3 {
            assert!((out.value().data()[r * 2 + col] - mean).abs() < 1e-12);
        }
    }

    let (q, k, v) = (
        random(&[3, 4], 1.0, &mut rng(16)),
        random(&[3, 4], 1.0, &mut rng(17)),
        random(&[3, 5], 1.0, &mut rng(18)),
    );
    let out = self_attention(&tape, &c(q.clone()), &c(k.clone()), &c(v.clone())).unwrap();
    let want = naive_attention(&rows(&q), &rows(&k), &rows(&v));
    for (a, b) in rows(out.value())
        .iter()
        .flatten()
        .zip(want.iter().flatten())
    {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_head_mpa_is_attention_then_output_projection() {
    let cfg = ModelConfig::tiny();
    let params = random_params(&cfg, 19);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let layer = &p.global[0];
    let x = tape.constant(random(&[4, 16], 1.0, &mut rng(20)));
    let got = mpa(&tape, &x, layer, 1).unwrap();
    let q = tape.matmul(&x, &layer.wq).unwrap();
    let k = tape.matmul(&x, &layer.wk).unwrap();
    let v = tape.matmul(&x, &layer.wv).unwrap();
    let want = tape
        .matmul(&self_attention(&tape, &q, &k, &v).unwrap(), &layer.wo)
        .unwrap();
    assert!(got.value().max_abs_diff(want.value()).unwrap() < 1e-12);
    assert!(mpa(&tape, &x, layer, 3).is_err());
}

#[test]
fn mpa_is_permutation_equivariant() {
    let cfg = ModelConfig::tiny();
    let params = random_params(&cfg, 21);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let x = random(&[4, 16], 1.0, &mut rng(22));
    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<f64> = perm
        .iter()
        .flat_map(|&i| x.data()[i * 16..(i + 1) * 16].to_vec())
        .collect();
    let out = mpa(&tape, &tape.constant(x), &p.global[0], 2).unwrap();
    let out_p = mpa(
        &tape,
        &tape.constant(Tensor::new([4, 16], permuted).unwrap()),
        &p.global[0],
        2,
    )
    .unwrap();
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(
            out_p.value().data()[row * 16..(row + 1) * 16],
            out.value().data()[src * 16..(src + 1) * 16],
            "row {row}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn mpa_equivariance_random_permutations(
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        seed in any::<u64>(),
    ) {
        let cfg = ModelConfig::tiny();
        let params = random_params(&cfg, seed);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let x = random(&[6, 16], 1.0, &mut rng(seed ^ 1));
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| x.data()[i * 16..(i + 1) * 16].to_vec()).collect();
        let out = mpa(&tape, &tape.constant(x), &p.global[0], 2).unwrap();
        let out_p = mpa(&tape, &tape.constant(Tensor::new([6, 16], permuted).unwrap()), &p.global[0], 2).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            prop_assert_eq!(
                &out_p.value().data()[row * 16..(row + 1) * 16],
                &out.value().data()[src * 16..(src + 1) * 16]
            );
        }
    }
}

fn zeroed_except_norm_scales(params: &TlVitParams<Tensor<f64>>) -> TlVitParams<Tensor<f64>> {
    params.map(|_, kind, t| match kind {
        ParamKind::NormScale => t.clone(),
        _ => Tensor::zeros(t.shape().to_vec()),
    })
}

#[test]
fn zero_weight_blocks_are_identity() {
    let cfg = ModelConfig::tiny();
    let params = zeroed_except_norm_scales(&random_params(&cfg, 23));
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let x = tape.constant(random(&[2, 4, 16], 1.0, &mut rng(24)));
    for residual in [true, false] {
        let o = BlockOptions {
            attn_residual: residual,
            ..opts(2)
        };
        let y = encoder_block(&tape, &x, &p.global[0], o).unwrap();
        assert_eq!(y.shape(), x.shape());
        if residual {
            assert_eq!(y.value(), x.value());
        }
    }
}

#[test]
fn zero_fusion_branch_passes_patch_tokens_through() {
    let cfg = ModelConfig::tiny();
    let mut params = random_params(&cfg, 25);
    params.fusion.weight = Tensor::zeros(params.fusion.weight.shape().to_vec());
    params.fusion.bias = Tensor::zeros(params.fusion.bias.shape().to_vec());
    params.fusion_norm.beta = Tensor::zeros(params.fusion_norm.beta.shape().to_vec());
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let patches = tape.constant(random(&[4, 16], 1.0, &mut rng(26)));
    let subs = tape.constant(random(&[4, 4, 8], 1.0, &mut rng(27)));
    let y = fuse(
        &tape,
        &patches,
        &subs,
        &p.fusion,
        &p.fusion_norm,
        cfg.ln_eps,
    )
    .unwrap();
    assert_eq!(y.value(), patches.value());
}

#[test]
fn fused_output_depends_on_subpatch_pixels() {
    let cfg = ModelConfig::tiny();
    let params = random_params(&cfg, 28);
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let sub_raw = tape.param(subpatchify::<f64>(&random_tile(16, 29), 8, 4).unwrap());
    let patches = tape.constant(random(&[4, 16], 1.0, &mut rng(30)));
    let sub = embed_subpatches(&tape, &sub_raw, &p.subpatch_embed, &p.subpatch_pos).unwrap();
    let local = local_encode(&tape, &sub, &p.local, opts(2)).unwrap();
    let y = fuse(
        &tape,
        &patches,
        &local,
        &p.fusion,
        &p.fusion_norm,
        cfg.ln_eps,
    )
    .unwrap();
    assert_eq!(y.shape(), &[4, 16]);
    let g = tape.backward(&tape.sum(&y).unwrap()).unwrap().wrt(&sub_raw);
    assert!(g.data()[0] != 0.0);
}

#[test]
fn local_encoding_is_local() {
    let cfg = ModelConfig::tiny();
    let params = random_params(&cfg, 31);
    let encode = |tile: &GrayImage| {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let (_, sub_raw) = tokenize_batch::<f64>(&tape, &cfg, std::slice::from_ref(tile)).unwrap();
        let sub = embed_subpatches(&tape, &sub_raw, &p.subpatch_embed, &p.subpatch_pos).unwrap();
        local_encode(&tape, &sub, &p.local, opts(2))
            .unwrap()
            .value()
            .clone()
    };
    let tile = random_tile(16, 32);
    let mut poked = tile.clone();
    // Patch 0 is the top-left 8x8 block.
    poked.set(3, 5, 1.0 - tile.get(3, 5));
    let (a, b) = (encode(&tile), encode(&poked));
    let group = 4 * 8;
    assert_ne!(a.data()[..group], b.data()[..group]);
    assert_eq!(a.data()[group..], b.data()[group..]);
}

#[test]
fn decoder_output_range_and_zero_head() {
    let cfg = ModelConfig::default();
    let model = TlVit::<f32>::init(cfg, 1).unwrap();
    let tape = Tape::new();
    let p = model.params().bind(&tape, false);
    let x = tape.constant(
        Tensor::<f32>::new(
            [256, 768],
            (0..256 * 768)
                .map(|i| ((i % 97) as f32 - 48.0) / 20.0)
                .collect(),
        )
        .unwrap(),
    );
    let y = decode(&tape, &x, &p.decoder, &p.head, opts(cfg.decoder_heads)).unwrap();
    assert_eq!(y.shape(), &[256, 256]);
    assert!(y.value().data().iter().all(|&v| v > 0.0 && v < 1.0));

    let small = ModelConfig::tiny();
    let mut m = TlVit::<f64>::init(small, 2).unwrap();
    let head = &mut m.params_mut().head;
    head.weight = Tensor::zeros(head.weight.shape().to_vec());
    head.bias = Tensor::zeros(head.bias.shape().to_vec());
    let out = m.predict_tile(&random_tile(16, 33)).unwrap();
    assert!(out.pixels().iter().all(|&v| v == 0.5));
}

fn audit_forward(cfg: ModelConfig) {
    let model = TlVit::<f32>::init(cfg, 3).unwrap();
    model.params().audit(&cfg).unwrap();
    let tile = random_tile(cfg.height, 34);
    let out = model.predict_tile(&tile).unwrap();
    assert_eq!((out.width(), out.height()), (tile.width(), tile.height()));
}

#[test]
fn shape_audit_default_config() {
    audit_forward(ModelConfig::default());
}

#[test]
fn shape_audit_ablation_rows() {
    for row in ABLATION_ROWS {
        audit_forward(row.config());
    }
    assert_eq!(
        AblationRow::lookup(3).unwrap().config(),
        ModelConfig::default()
    );
    assert_eq!(AblationRow::lookup(5).unwrap().config().n_patch(), 1024);
    assert!(AblationRow::lookup(6).is_err());
}

#[test]
fn audit_names_the_bad_tensor() {
    let cfg = ModelConfig::tiny();
    let mut params = random_params(&cfg, 35);
    params.local[0].wq = Tensor::zeros([3, 3]);
    let err = TlVit::new(cfg, params).unwrap_err().to_string();
    assert!(err.contains("local.0.attn.wq"), "{err}");
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig::tiny();
    let model = TlVit::<f32>::init(cfg, 4).unwrap();
    let tile = random_tile(16, 36);
    assert_eq!(
        model.predict_tile(&tile).unwrap(),
        model.predict_tile(&tile).unwrap()
    );
}

#[test]
fn whole_image_inference_handles_ragged_sizes() {
    let cfg = ModelConfig::tiny();
    let model = TlVit::<f32>::init(cfg, 5).unwrap();
    let img = GrayImage::from_fn(37, 21, |x, y| ((x * y) % 7) as f32 / 6.0);
    let out = model.binarize_image(&img, 0.5, 4).unwrap();
    assert_eq!((out.width(), out.height()), (37, 21));
}

#[test]
fn parameter_count_matches_table_within_tolerance() {
    let c = parameter_count(&ModelConfig::default());
    let within = |n: usize, target: f64| ((n as f64 - target) / target).abs() <= 0.2;
    assert!(within(c.global_encoder, 30.7e6), "{}", c.global_encoder);
    assert!(within(c.local_encoder, 6.9e6), "{}", c.local_encoder);
    assert!(c.to_string().contains("counting boundary"));
}

#[test]
fn binding_params_records_no_ops() {
    let cfg = ModelConfig::tiny();
    let model = TlVit::<f64>::init(cfg, 6).unwrap();
    let tape = Tape::new();
    let vars: TlVitParams<Var<f64>> = model.params().bind(&tape, true);
    assert_eq!(vars.len(), model.params().len());
    assert!(tape.is_empty());
}
