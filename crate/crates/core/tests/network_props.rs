use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cebd_core::nn::{position_encode, Bdinr, Mode, NetworkConfig};
use cebd_core::{synthesize_coded_blur, Error, ExposureCode, FrameStack, Image};

fn small(code: &str, recursion: bool) -> NetworkConfig {
    let mut c = NetworkConfig::new(code.parse().unwrap());
    c.sem_channels = 6;
    c.enc_channels = [8, 12];
    c.temporal_hidden = 16;
    c.temporal_width = 10;
    c.use_recursion = recursion;
    c
}

fn net(code: &str, recursion: bool) -> Bdinr {
    Bdinr::new(small(code, recursion), 7, DType::F64).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>(), shape, &Device::Cpu).unwrap()
}

fn zero_param(net: &Bdinr, name: &str) {
    let var = net.params().get(name).unwrap_or_else(|| panic!("no parameter {name}"));
    net.params().set(name, &var.as_tensor().zeros_like().unwrap()).unwrap();
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn shapes() {
    let n = net("11100101", true);
    let x = random(&[2, 3, 16, 20], 1);
    let se = n.spatial_embed(&x).unwrap();
    assert_eq!(se.dims(), &[2, 6, 16, 20]);
    let te = n.temporal_embed_one(&position_encode(0.5, true, 1.25, 80).unwrap()).unwrap();
    assert_eq!(te.dims(), &[1, 10]);
    let (frame, feature) = n.inrv_decode(&se, &te, &x).unwrap();
    assert_eq!(frame.dims(), x.dims());
    assert_eq!(feature.dims(), se.dims());
    assert_eq!(n.fuse_recursive(&se, &feature).unwrap().dims(), se.dims());
    assert_eq!(n.forward(&x, Mode::Train).unwrap().dims(), &[2, 8, 3, 16, 20]);
}

#[test]
fn indivisible_dims_carry_a_padding_hint() {
    let n = net("1101", false);
    let err = n.spatial_embed(&random(&[1, 3, 18, 21], 2)).unwrap_err();
    match err {
        Error::IndivisibleDims {
            padded_height,
            padded_width,
            ..
        } => assert_eq!((padded_height, padded_width), (20, 24)),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn zeroed_residuals_leave_the_head_convolution() {
    let n = net("1101", false);
    for i in 0..3 {
        zero_param(&n, &format!("sem.block{i}.conv2.weight"));
        zero_param(&n, &format!("sem.block{i}.conv2.bias"));
    }
    let x = random(&[1, 3, 12, 12], 3);
    let w = n.params().get("sem.head.weight").unwrap().as_tensor().clone();
    let b = n.params().get("sem.head.bias").unwrap().as_tensor().clone();
    let head = x
        .conv2d(&w, 1, 1, 1, 1)
        .unwrap()
        .broadcast_add(&b.reshape((1, (), 1, 1)).unwrap())
        .unwrap();
    assert!(max_diff(&n.spatial_embed(&x).unwrap(), &head) < 1e-12);
}

#[test]
fn spatial_embedding_is_translation_covariant() {
    let n = net("1101", false);
    let big = random(&[1, 3, 40, 32], 4);
    let a = big.narrow(2, 0, 32).unwrap();
    let b = big.narrow(2, 4, 32).unwrap();
    let sa = n.spatial_embed(&a).unwrap();
    let sb = n.spatial_embed(&b).unwrap();
    // seven stacked 3×3 convolutions see 7 pixels from the border
    let (m, rows) = (7, 32 - 4 - 14);
    let inner_b = sb.narrow(2, m, rows).unwrap().narrow(3, m, 32 - 2 * m).unwrap();
    let inner_a = sa.narrow(2, m + 4, rows).unwrap().narrow(3, m, 32 - 2 * m).unwrap();
    assert!(max_diff(&inner_a, &inner_b) < 1e-5);
}

#[test]
fn identity_modulation_makes_decoding_time_independent() {
    let n = net("11100101", false);
    zero_param(&n, "inrv.modulation.weight");
    zero_param(&n, "inrv.modulation.bias");
    let x = random(&[1, 3, 12, 12], 5);
    let se = n.spatial_embed(&x).unwrap();
    let ta = random(&[1, 10], 6);
    let tb = random(&[1, 10], 7);
    let (fa, _) = n.inrv_decode(&se, &ta, &x).unwrap();
    let (fb, _) = n.inrv_decode(&se, &tb, &x).unwrap();
    assert_eq!(max_diff(&fa, &fb), 0.0);
}

#[test]
fn temporal_embedding_changes_the_output() {
    let n = net("11100101", false);
    let x = random(&[1, 3, 12, 12], 8);
    let se = n.spatial_embed(&x).unwrap();
    for k in 0..10 {
        let (fa, _) = n.inrv_decode(&se, &random(&[1, 10], 100 + k), &x).unwrap();
        let (fb, _) = n.inrv_decode(&se, &random(&[1, 10], 200 + k), &x).unwrap();
        assert!(max_diff(&fa, &fb) > 0.0);
    }
}

#[test]
fn swapping_frame_indices_changes_frames() {
    let n = net("11100101", false);
    let x = random(&[1, 3, 12, 12], 9);
    let frames = n.forward_indices(&x, &[1, 5], Mode::Inference).unwrap();
    assert!(max_diff(&frames[0], &frames[1]) > 0.0);
}

#[test]
fn fusion_pass_through() {
    let n = net("1101", true);
    let cs = 6;
    let mut w = vec![0.0f64; cs * 2 * cs * 9];
    for o in 0..cs {
        w[((o * 2 * cs) + o) * 9 + 4] = 1.0;
    }
    n.params()
        .set("fusion.weight", &Tensor::from_vec(w, (cs, 2 * cs, 3, 3), &Device::Cpu).unwrap())
        .unwrap();
    zero_param(&n, "fusion.bias");
    let se = random(&[1, cs, 8, 8], 10);
    let out = n.fuse_recursive(&se, &se.zeros_like().unwrap()).unwrap();
    assert!(max_diff(&out, &se) < 1e-12);
}

#[test]
fn one_module_set_for_any_length() {
    let a = Bdinr::new(small("1101", true), 0, DType::F32).unwrap();
    let b = Bdinr::new(small("11100101", true), 0, DType::F32).unwrap();
    assert_eq!(a.param_count(), b.param_count());
}

#[test]
fn temporal_embeddings_are_distinct_at_init() {
    let n = net("1101", false);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let embs: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let pe = position_encode(rng.random::<f64>(), rng.random(), 1.25, 80).unwrap();
            n.temporal_embed_one(&pe).unwrap().flatten_all().unwrap().to_vec1().unwrap()
        })
        .collect();
    let mut min = f64::INFINITY;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let d: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b).powi(2)).sum();
            min = min.min(d.sqrt());
        }
    }
    assert!(min > 0.0);
}

#[test]
fn zero_temporal_weights_give_the_bias() {
    let n = net("1101", false);
    zero_param(&n, "tem.fc1.weight");
    zero_param(&n, "tem.fc2.weight");
    let te = n.temporal_embed_one(&position_encode(0.3, false, 1.25, 80).unwrap()).unwrap();
    let bias = n.params().get("tem.fc2.bias").unwrap().as_tensor().unsqueeze(0).unwrap();
    assert!(max_diff(&te, &bias) < 1e-15);
}

#[test]
fn without_tem_and_recursion_all_frames_coincide() {
    let mut cfg = small("11100101", false);
    cfg.use_tem = false;
    let n = Bdinr::new(cfg, 1, DType::F64).unwrap();
    let y = n.forward(&random(&[1, 3, 8, 8], 12), Mode::Inference).unwrap();
    let first = y.narrow(1, 0, 1).unwrap();
    for i in 1..8 {
        assert_eq!(max_diff(&y.narrow(1, i, 1).unwrap(), &first), 0.0);
    }
}

fn snapshot(code: &str) -> cebd_core::CodedSnapshot {
    let code: ExposureCode = code.parse().unwrap();
    let frames = (0..code.len())
        .map(|i| Image::filled(8, 8, 3, 0.1 * i as f32).unwrap())
        .collect();
    synthesize_coded_blur(&FrameStack::new(frames).unwrap(), &code).unwrap()
}

#[test]
fn decompose_modes() {
    let rec = net("11100101", true);
    let full = rec.decompose(&snapshot("11100101"), None).unwrap();
    assert_eq!(full.len(), 8);
    assert_eq!(full.frame_shape(), (8, 8, 3));
    assert!(full.frames().iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
    assert!(matches!(
        rec.decompose(&snapshot("11100101"), Some(&[3])),
        Err(Error::SelectiveOnRecursive)
    ));

    let flat = net("11100101", false);
    let one = flat.decompose(&snapshot("11100101"), Some(&[3])).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one.indices(), &[3.0 / 7.0]);
    let all = flat.decompose(&snapshot("11100101"), None).unwrap();
    assert_eq!(one.frames()[0], all.frames()[3]);

    let err = flat.decompose(&snapshot("11100101"), Some(&[9])).unwrap_err();
    assert!(err.to_string().contains("index out of range"), "{err}");
    assert!(matches!(
        flat.decompose(&snapshot("1101"), None),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn inference_is_deterministic() {
    let n = net("11100101", true);
    let s = snapshot("11100101");
    assert_eq!(n.decompose(&s, None).unwrap(), n.decompose(&s, None).unwrap());
    let again = Bdinr::new(small("11100101", true), 7, DType::F64).unwrap();
    assert_eq!(n.decompose(&s, None).unwrap(), again.decompose(&s, None).unwrap());
}
