mod common;

use common::*;
use proptest::prelude::*;
use vqg_core::encoders::{image_grid, AnswerEncoder, ObjectFusion};
use vqg_core::nn::{ParamInit, ParamStore, Tape};
use vqg_core::{Error, Tensor};

fn answer_encoder(seed: u64) -> (ParamStore<f64>, AnswerEncoder) {
    let mut store = ParamStore::new();
    let enc = AnswerEncoder::new(&mut ParamInit::new(&mut store, seed), 10, 4, 3);
    (store, enc)
}

fn fusion(seed: u64) -> (ParamStore<f64>, ObjectFusion) {
    let mut store = ParamStore::new();
    let f = ObjectFusion::new(&mut ParamInit::new(&mut store, seed), 3, 5, 2, 4);
    (store, f)
}

fn fuse(store: &ParamStore<f64>, f: &ObjectFusion, feats: &Tensor<f64>, boxes: &Tensor<f64>, cats: &[usize]) -> Tensor<f64> {
    let mut t = Tape::new(store);
    let x = t.constant(feats.clone());
    let b = t.constant(boxes.clone());
    let out = f.forward(&mut t, x, b, cats).unwrap();
    t.value(out).clone()
}

#[test]
fn single_token_answer_pools_to_its_row() {
    let (store, enc) = answer_encoder(3);
    let mut t = Tape::new(&store);
    let a = enc.forward(&mut t, &[4]).unwrap();
    assert_eq!(t.shape(a.words), (1, 3));
    assert_eq!(t.value(a.words).data(), t.value(a.pooled).data());
}

#[test]
fn answer_rows_match_token_count_and_depend_on_order() {
    let (store, enc) = answer_encoder(5);
    let mut t = Tape::new(&store);
    let ab = enc.forward(&mut t, &[4, 7]).unwrap();
    let ba = enc.forward(&mut t, &[7, 4]).unwrap();
    assert_eq!(t.shape(ab.words), (2, 3));
    assert_ne!(t.value(ab.words).data(), t.value(ba.words).data());
    // same input twice is bit-identical
    let again = enc.forward(&mut t, &[4, 7]).unwrap();
    assert_eq!(t.value(ab.words).data(), t.value(again.words).data());
}

#[test]
fn zero_recurrent_weights_and_embeddings_give_zero_answer() {
    let (mut store, enc) = answer_encoder(1);
    zero_all(&mut store);
    let mut t = Tape::new(&store);
    let a = enc.forward(&mut t, &[1, 2, 3]).unwrap();
    assert!(t.value(a.words).data().iter().all(|&x| x == 0.0));
}

#[test]
fn empty_answer_is_rejected() {
    let (store, enc) = answer_encoder(1);
    let mut t = Tape::new(&store);
    assert!(matches!(enc.forward(&mut t, &[]), Err(Error::Data(_))));
}

#[test]
fn fused_objects_are_nonnegative_and_category_sensitive() {
    let (store, f) = fusion(2);
    let mut r = rng(8);
    let feats = rand_tensor(&mut r, 2, 3);
    let feats = Tensor::from_fn(2, 3, |_, j| feats.get(0, j));
    let boxes = Tensor::from_rows(&[[0.1, 0.1, 0.4, 0.5], [0.1, 0.1, 0.4, 0.5]]);
    let out = fuse(&store, &f, &feats, &boxes, &[1, 3]);
    assert!(out.data().iter().all(|&x| x >= 0.0));
    assert_ne!(out.row(0), out.row(1));
}

#[test]
fn zero_projection_gives_zero_object() {
    let (mut store, f) = fusion(2);
    let (r, c) = store.value(f.proj.w).shape();
    *store.value_mut(f.proj.w) = Tensor::zeros(r, c);
    *store.value_mut(f.proj.b.unwrap()) = Tensor::zeros(1, c);
    let out = fuse(&store, &f, &Tensor::filled(1, 3, 0.7), &Tensor::filled(1, 4, 0.3), &[0]);
    assert!(out.data().iter().all(|&x| x == 0.0));
}

#[test]
fn category_out_of_range_is_an_index_error() {
    let (store, f) = fusion(2);
    let mut t = Tape::new(&store);
    let x = t.constant(Tensor::filled(1, 3, 0.1));
    let b = t.constant(Tensor::filled(1, 4, 0.1));
    assert!(matches!(f.forward(&mut t, x, b, &[5]), Err(Error::Index { .. })));
}

#[test]
fn image_grid_mean_oracle() {
    let store = ParamStore::<f64>::new();
    let mut t = Tape::new(&store);
    let one = Tensor::<f32>::from_rows(&[[0.5, -1.0, 2.0]]);
    let (_, mean) = image_grid(&mut t, &one).unwrap();
    assert_eq!(t.value(mean).to_f64_vec(), vec![0.5, -1.0, 2.0]);

    let constant = Tensor::filled(5, 2, 0.25f32);
    let (_, mean) = image_grid(&mut t, &constant).unwrap();
    assert_all_close(&t.value(mean).to_f64_vec(), &[0.25, 0.25], 1e-12, "constant grid");

    let mut r = rng(4);
    let g = rand_tensor(&mut r, 4, 3).cast::<f32>();
    let (grid, mean) = image_grid(&mut t, &g).unwrap();
    assert_eq!(t.shape(grid), (4, 3));
    let mut oracle = [0.0f64; 3];
    for i in 0..4 {
        for (j, o) in oracle.iter_mut().enumerate() {
            *o += g.get(i, j) as f64 / 4.0;
        }
    }
    assert_all_close(&t.value(mean).to_f64_vec(), &oracle, 1e-7, "grid mean");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn object_fusion_is_permutation_equivariant(seed in 0u64..1000, t in 2usize..6, shift in 1usize..5) {
        let (store, f) = fusion(seed);
        let mut r = rng(seed + 1);
        let feats = rand_tensor(&mut r, t, 3);
        let boxes = Tensor::from_fn(t, 4, |i, j| ((i * 4 + j) % 7) as f64 / 7.0);
        let cats: Vec<usize> = (0..t).map(|i| (i * 3 + seed as usize) % 5).collect();
        let perm: Vec<usize> = (0..t).map(|i| (i + shift) % t).collect();
        let out = fuse(&store, &f, &feats, &boxes, &cats);
        let pcats: Vec<usize> = perm.iter().map(|&i| cats[i]).collect();
        let pout = fuse(&store, &f, &feats.select_rows(&perm), &boxes.select_rows(&perm), &pcats);
        let expected = out.select_rows(&perm);
        prop_assert_eq!(pout.data(), expected.data());
    }
}
