use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srforge_core::nn::{AttnMask, Graph, Init, NnError, ParameterStore, Var};

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn input(g: &mut Graph<'_, f64>, shape: &[usize], data: Vec<f64>) -> Var {
    g.input(shape, data).unwrap()
}

#[test]
fn linear_identity_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::<f64>::new();
    let w = store.add("w", &[3, 3], Init::Zeros, &mut rng);
    let b = store.add("b", &[3], Init::Zeros, &mut rng);
    for i in 0..3 {
        store.get_mut(w).value.data_mut()[i * 3 + i] = 1.0;
    }
    store.get_mut(b).value.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
    let mut g = Graph::new(&store);
    let x_data = random(&mut rng, 6);
    let x = input(&mut g, &[2, 3], x_data.clone());
    let (wv, bv) = (g.param(w), g.param(b));
    let y = g.linear(x, wv, None).unwrap();
    assert_eq!(g.value(y), &x_data[..]);
    let z = input(&mut g, &[2, 3], vec![0.0; 6]);
    let y = g.linear(z, wv, Some(bv)).unwrap();
    assert_eq!(g.value(y), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    let bad = input(&mut g, &[2, 4], vec![0.0; 8]);
    assert!(matches!(g.linear(bad, wv, None), Err(NnError::Shape(_))));
}

#[test]
fn attention_rows_are_convex_combinations() {
    let store = ParameterStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new(&store);
    let q = input(&mut g, &[3, 5, 8], random(&mut rng, 120));
    let k = input(&mut g, &[3, 6, 8], random(&mut rng, 144));
    let ones = input(&mut g, &[3, 6, 8], vec![1.0; 144]);
    let out = g.attention(q, k, ones, 4, AttnMask::None).unwrap();
    assert!(g.value(out).iter().all(|v| (v - 1.0).abs() < 1e-6));
    let qs = input(&mut g, &[3, 6, 8], random(&mut rng, 144));
    let out = g.attention(qs, k, ones, 2, AttnMask::Causal).unwrap();
    assert!(g.value(out).iter().all(|v| (v - 1.0).abs() < 1e-6));
    assert!(g.attention(q, k, ones, 3, AttnMask::None).is_err());
}

#[test]
fn single_key_returns_its_value() {
    let store = ParameterStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new(&store);
    let q = input(&mut g, &[2, 1, 4], random(&mut rng, 8));
    let k = input(&mut g, &[2, 1, 4], random(&mut rng, 8));
    let vdata = random(&mut rng, 8);
    let v = input(&mut g, &[2, 1, 4], vdata.clone());
    let out = g.attention(q, k, v, 2, AttnMask::None).unwrap();
    for (a, b) in g.value(out).iter().zip(&vdata) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn causal_attention_ignores_later_positions() {
    let store = ParameterStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<f32> = (0..6 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let run = |data: Vec<f32>| {
        let mut g = Graph::new(&store);
        let x = g.input(&[1, 6, 8], data).unwrap();
        let out = g.attention(x, x, x, 2, AttnMask::Causal).unwrap();
        g.value(out).to_vec()
    };
    let before = run(base.clone());
    for j in 1..6 {
        let mut changed = base.clone();
        for v in &mut changed[j * 8..] {
            *v += 3.0;
        }
        let after = run(changed);
        assert_eq!(before[..j * 8], after[..j * 8], "perturbing position {j}");
        assert_ne!(before[j * 8..], after[j * 8..]);
    }
}

#[test]
fn layer_norm_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParameterStore::<f64>::new();
    let gain = store.add("g", &[16], Init::Ones, &mut rng);
    let bias = store.add("b", &[16], Init::Zeros, &mut rng);
    let mut g = Graph::new(&store);
    let (gv, bv) = (g.param(gain), g.param(bias));
    let c = input(&mut g, &[1, 16], vec![3.5; 16]);
    let y = g.layer_norm(c, gv, bv).unwrap();
    assert!(g.value(y).iter().all(|v| *v == 0.0));
    let x = input(&mut g, &[4, 16], random(&mut rng, 64).iter().map(|v| v * 10.0 + 3.0).collect());
    let y = g.layer_norm(x, gv, bv).unwrap();
    for row in g.value(y).chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn cross_entropy_spot_values() {
    let store = ParameterStore::<f64>::new();
    let mut g = Graph::new(&store);
    let uniform = input(&mut g, &[4, 20], vec![0.0; 80]);
    let targets = [3, 0, 19, 7];
    let keep = [true; 4];
    for eps in [0.0, 0.1] {
        let l = g.cross_entropy(uniform, &targets, &keep, eps).unwrap();
        assert!((g.value(l)[0] - 20f64.ln()).abs() < 1e-9);
    }
    let mut sharp = vec![0.0; 80];
    for (r, t) in targets.iter().enumerate() {
        sharp[r * 20 + t] = 60.0;
    }
    let s = input(&mut g, &[4, 20], sharp);
    let l = g.cross_entropy(s, &targets, &keep, 0.0).unwrap();
    assert!(g.value(l)[0] < 1e-20);
    assert!(matches!(
        g.cross_entropy(s, &targets, &[false; 4], 0.0),
        Err(NnError::EmptyMask)
    ));
    // masked rows do not contribute
    let l_masked = g.cross_entropy(uniform, &[3, 0, 1, 1], &[true, true, false, false], 0.0).unwrap();
    assert!((g.value(l_masked)[0] - 20f64.ln()).abs() < 1e-9);
}

#[test]
fn dropout_modes() {
    let store = ParameterStore::<f32>::new();
    let n = 1_000_000;
    let mut g = Graph::training(&store, 17);
    let x = g.input(&[n], vec![1.0; n]).unwrap();
    assert_eq!(g.dropout(x, 0.0), x);
    let y = g.dropout(x, 0.25);
    let kept = g.value(y).iter().filter(|v| **v != 0.0).count();
    let rate = kept as f64 / n as f64;
    assert!((rate - 0.75).abs() < 0.003, "keep rate {rate}");
    assert!(g.value(y).iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.75).abs() < 1e-6));

    let mut eval = Graph::new(&store);
    let x = eval.input(&[8], vec![1.0; 8]).unwrap();
    assert_eq!(eval.dropout(x, 0.9), x);
}

#[test]
fn training_graphs_are_deterministic() {
    let store = ParameterStore::<f32>::new();
    let run = || {
        let mut g = Graph::training(&store, 99);
        let x = g.input(&[1000], vec![1.0; 1000]).unwrap();
        let y = g.dropout(x, 0.5);
        g.value(y).to_vec()
    };
    assert_eq!(run(), run());
}
