use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{max_relative_error, DEFAULT_TOLERANCE};
use crate::data::tokenizer::{tokenize, END, SENTINEL};

fn tiny() -> ModelConfig {
    ModelConfig {
        vision: VisionEncoderConfig {
            image_size: 8,
            patch_size: 4,
            width: 8,
            depth: 1,
            heads: 2,
            embed_dim: 6,
        },
        text: TextEncoderConfig {
            max_length: 12,
            width: 8,
            depth: 1,
            heads: 2,
            embed_dim: 6,
            ..Default::default()
        },
        dino: DinoProjectorConfig {
            hidden_dim: 10,
            bottleneck_dim: 5,
            output_dim: 7,
        },
    }
}

fn image<T: Scalar>(rng: &mut ChaCha8Rng, s: usize) -> Tensor<T> {
    Tensor::new(&[3, s, s], (0..3 * s * s).map(|_| T::from_f64(rng.gen())).collect()).unwrap()
}

#[test]
fn desk_default_sequence_length() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.vision.sequence_length(), 17);
    let model = Model::new(cfg).unwrap();
    let params = model.init_params::<f32>(0);
    assert_eq!(params.get(model.layout().vision.positions).shape(), &[17, 64]);
}

#[test]
fn invalid_configs_rejected() {
    let mut cfg = tiny();
    cfg.vision.patch_size = 3;
    assert!(Model::new(cfg).is_err());
    let mut cfg = tiny();
    cfg.text.heads = 3;
    assert!(Model::new(cfg).is_err());
    let mut cfg = tiny();
    cfg.text.embed_dim = 5;
    assert!(Model::new(cfg).is_err());
}

#[test]
fn initialization_is_pure_function_of_seed() {
    let model = Model::new(tiny()).unwrap();
    let a = model.init_params::<f32>(9);
    let b = model.init_params::<f32>(9);
    let c = model.init_params::<f32>(10);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let tau = a.temperature(model.layout());
    assert!((1.0 / tau - 14.3).abs() < 1e-4);
    model.check_params(&a).unwrap();
}

#[test]
fn image_encoding_is_deterministic_and_checks_size() {
    let model = Model::new(tiny()).unwrap();
    let params = model.init_params::<f32>(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = image::<f32>(&mut rng, 8);
    let a = model.encode_image(&params, &img).unwrap();
    let b = model.encode_image(&params, &img).unwrap();
    assert_eq!(a.shape(), &[6]);
    assert_eq!(a, b);

    let wrong = image::<f32>(&mut rng, 12);
    assert!(matches!(
        model.encode_image(&params, &wrong),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn batched_and_single_image_embeddings_agree() {
    let model = Model::new(tiny()).unwrap();
    let params = model.init_params::<f32>(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let imgs: Vec<Tensor<f32>> = (0..5).map(|_| image(&mut rng, 8)).collect();
    let all = model.embed_images(&params, &imgs, 2).unwrap();
    for (i, img) in imgs.iter().enumerate() {
        assert_eq!(all.row(i), model.encode_image(&params, img).unwrap().data());
    }
}

#[test]
fn patch_embedding_gradient_matches_finite_differences() {
    let model = Model::new(tiny()).unwrap();
    let params = model.init_params::<f64>(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let imgs = Tensor::stack(&[image::<f64>(&mut rng, 8), image(&mut rng, 8)]).unwrap();
    let mut g = Graph::new();
    let b = model.bind(&mut g, &params, true);
    let e = model.encode_images(&mut g, &b, &imgs).unwrap();
    let s = g.sum(e).unwrap();
    let lay = &model.layout().vision;
    let leaves = [b.var(lay.patch.0), b.var(lay.patch.1), b.var(lay.class_token)];
    let err = max_relative_error(&mut g, s, &leaves).unwrap();
    assert!(err <= DEFAULT_TOLERANCE, "{err}");
}

#[test]
fn text_encoding_examples() {
    let model = Model::new(tiny()).unwrap();
    let params = model.init_params::<f32>(5);
    let empty = tokenize("", 12);
    assert_eq!(empty, vec![SENTINEL, END]);
    let e = model.encode_text(&params, &empty).unwrap();
    assert!(e.all_finite());

    let a = tokenize("a large airport", 12);
    let e1 = model.encode_text(&params, &a).unwrap();
    let e2 = model.encode_text(&params, &a).unwrap();
    assert_eq!(e1, e2);

    let mut b = a.clone();
    b[3] += 1;
    let e3 = model.encode_text(&params, &b).unwrap();
    assert_ne!(e1, e3);

    let bad = vec![SENTINEL, 10_000];
    assert!(matches!(
        model.encode_text(&params, &bad),
        Err(Error::Vocabulary { id: 10_000, .. })
    ));
    let long = vec![SENTINEL; 13];
    assert!(matches!(
        model.encode_text(&params, &long),
        Err(Error::Domain { .. })
    ));
}

#[test]
fn padding_does_not_change_text_embeddings() {
    let model = Model::new(tiny()).unwrap();
    let params = model.init_params::<f32>(6);
    let seqs = vec![tokenize("ab", 12), tokenize("a much longer one", 12)];
    let batched = model.embed_texts(&params, &seqs, 2).unwrap();
    for (i, s) in seqs.iter().enumerate() {
        let single = model.encode_text(&params, s).unwrap();
        assert_eq!(batched.row(i), single.data());
    }
}

#[test]
fn text_gradients_match_finite_differences() {
    let model = Model::new(tiny()).unwrap();
    let params = model.init_params::<f64>(7);
    let seqs = vec![tokenize("hi", 12), tokenize("xyz!", 12)];
    let mut g = Graph::new();
    let b = model.bind(&mut g, &params, true);
    let e = model.encode_texts(&mut g, &b, &seqs).unwrap();
    let e = g.l2_normalize(e).unwrap();
    let e = g.gelu(e).unwrap();
    let s = g.sum(e).unwrap();
    let lay = &model.layout().text;
    let blk = &lay.blocks[0];
    let leaves = [
        b.var(lay.positions),
        b.var(blk.wq.0),
        b.var(blk.wk.0),
        b.var(blk.wv.1),
        b.var(blk.fc1.0),
        b.var(lay.ln_final.0),
        b.var(lay.proj),
    ];
    let err = max_relative_error(&mut g, s, &leaves).unwrap();
    assert!(err <= DEFAULT_TOLERANCE, "{err}");
}

#[test]
fn projector_shape_unit_bottleneck_and_scale_invariance() {
    let model = Model::new(tiny()).unwrap();
    let mut params = model.init_params::<f64>(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let emb = Tensor::new(&[6], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let logits = model.project_dino_one(&params, &emb).unwrap();
    assert_eq!(logits.shape(), &[7]);

    let mut g = Graph::new();
    let b = model.bind(&mut g, &params, false);
    let e = g.constant(emb.reshape(&[1, 6]).unwrap());
    let z = model.dino_bottleneck(&mut g, &b, e).unwrap();
    assert!((g.value(z).norm() - 1.0).abs() < 1e-6);

    // Scaling the last hidden layer scales the pre-normalization vector.
    let fc3 = model.layout().dino.fc3;
    for id in [fc3.0, fc3.1] {
        let t = params.get_mut(id);
        *t = t.map(|v| v * 10.0);
    }
    let scaled = model.project_dino_one(&params, &emb).unwrap();
    for (a, b) in logits.data().iter().zip(scaled.data()) {
        assert!((a - b).abs() < 1e-9);
    }

    let wrong = Tensor::<f64>::zeros(&[5]);
    assert!(model.project_dino_one(&params, &wrong).is_err());
}

#[test]
fn projector_gradients_through_all_layers() {
    let model = Model::new(tiny()).unwrap();
    let mut params = model.init_params::<f64>(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // At init the pre-normalization vector is tiny and finite differences
    // leave the linear regime; move it to unit scale first.
    let fc3 = model.layout().dino.fc3;
    *params.get_mut(fc3.0) = params.get(fc3.0).map(|v| v * 30.0);
    let n = params.get(fc3.1).len();
    *params.get_mut(fc3.1) = Tensor::vector((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let emb = Tensor::new(&[3, 6], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut g = Graph::new();
    let b = model.bind(&mut g, &params, true);
    let e = g.param(emb);
    let z = model.project_dino(&mut g, &b, e).unwrap();
    let p = g.softmax(z, 1, 0.1).unwrap();
    let t = g.constant(Tensor::full(&[3, 7], 1.0 / 7.0));
    let ce = g.cross_entropy_soft(t, p).unwrap();
    let s = g.mean(ce).unwrap();
    let d = &model.layout().dino;
    let leaves = [
        e,
        b.var(d.fc1.0),
        b.var(d.fc2.0),
        b.var(d.fc3.0),
        b.var(d.fc3.1),
        b.var(d.last_direction),
        b.var(d.last_scale),
    ];
    let err = max_relative_error(&mut g, s, &leaves).unwrap();
    assert!(err <= DEFAULT_TOLERANCE, "{err}");
}
