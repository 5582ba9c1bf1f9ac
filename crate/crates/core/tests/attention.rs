mod support;

use proptest::prelude::*;
use rstt::attention::{
    build_shift_mask, cyclic_shift, decoder_sub_block, encoder_sub_block, multi_head_attention, multi_head_attention_probs,
    swin_decoder_block, swin_encoder_block, window_partition, window_partition_frames, window_reverse, window_reverse_frames, AttnVars,
    Ctx, KvMode,
};
use rstt::network::{ForwardOptions, QueryPlan};
use rstt::network::layout::register;
use rstt::params::{InitScheme, Initializer, ParamStore};
use rstt::{FrameQuad, ModelConfig, Rstt};
use rstt_tensor::{seeded_rng, Graph, Tensor, Var};
use support::{same_shift_region, DenseAttn};

fn random_attn(c: usize, seed: u64) -> DenseAttn {
    let mut rng = seeded_rng(seed);
    let mut draw = |n: usize| Tensor::<f64>::randn(&[n], 0.5, &mut rng).into_vec();
    DenseAttn { c, wq: draw(c * c), bq: draw(c), wk: draw(c * c), bk: draw(c), wv: draw(c * c), bv: draw(c), wo: draw(c * c), bo: draw(c) }
}

fn bind(g: &Graph<f64>, a: &DenseAttn) -> Vec<Var<f64>> {
    let c = a.c;
    [(&a.wq, true), (&a.bq, false), (&a.wk, true), (&a.bk, false), (&a.wv, true), (&a.bv, false), (&a.wo, true), (&a.bo, false)]
        .iter()
        .map(|(v, mat)| {
            let shape: &[usize] = if *mat { &[c, c] } else { &[c] };
            g.constant(Tensor::new(shape, v.to_vec()).unwrap())
        })
        .collect()
}

fn vars(v: &[Var<f64>]) -> AttnVars<'_, f64> {
    AttnVars { wq: &v[0], bq: &v[1], wk: &v[2], bk: &v[3], wv: &v[4], bv: &v[5], wo: &v[6], bo: &v[7] }
}

#[test]
fn attention_matches_dense_reference_with_bias_and_mask() {
    let (c, heads, lq, lk) = (4, 2, 6, 5);
    let a = random_attn(c, 1);
    let mut rng = seeded_rng(2);
    let q = Tensor::<f64>::randn(&[1, lq, c], 1.0, &mut rng);
    let kv = Tensor::<f64>::randn(&[1, lk, c], 1.0, &mut rng);
    let bias = Tensor::<f64>::randn(&[heads, lq, lk], 0.5, &mut rng);
    let mask = Tensor::<f64>::from_fn(&[lq, lk], |i| if (i / lk + i % lk) % 3 == 0 { -1e9 } else { 0.0 });
    let g = Graph::inference();
    let w = bind(&g, &a);
    let (out, probs) = multi_head_attention_probs(
        &g,
        &g.constant(q.clone()),
        &g.constant(kv.clone()),
        vars(&w),
        heads,
        Some(&g.constant(bias.clone())),
        Some(&g.constant(mask.clone())),
    )
    .unwrap();
    let (want_out, want_probs) = a.run(q.data(), kv.data(), heads, Some(bias.data()), Some(mask.data()));
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-12);
    assert!(close(out.value().data(), &want_out));
    assert!(close(probs.value().data(), &want_probs));
}

#[test]
fn cross_attention_with_query_as_keys_is_self_attention() {
    let (c, heads, l) = (8, 2, 6);
    let a = random_attn(c, 3);
    let x = Tensor::<f64>::randn(&[1, l, c], 1.0, &mut seeded_rng(4));
    let g = Graph::inference();
    let w = bind(&g, &a);
    let xv = g.constant(x.clone());
    let out = multi_head_attention(&g, &xv, &xv, vars(&w), heads, None, None).unwrap();
    let (want, _) = a.run(x.data(), x.data(), heads, None, None);
    assert!(out.value().data().iter().zip(&want).all(|(u, v)| (u - v).abs() < 1e-12));
}

#[test]
fn uneven_head_split_is_rejected() {
    let a = random_attn(6, 5);
    let g = Graph::inference();
    let w = bind(&g, &a);
    let x = g.constant(Tensor::zeros(&[1, 4, 6]));
    assert!(multi_head_attention(&g, &x, &x, vars(&w), 4, None, None).is_err());
}

fn param(model: &Rstt<f64>, name: &str) -> Vec<f64> {
    model.params().by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).to_f64_vec()
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let c = gamma.len();
    x.chunks(c)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            row.iter().enumerate().map(move |(i, v)| (v - mean) / (var + 1e-5).sqrt() * gamma[i] + beta[i]).collect::<Vec<_>>()
        })
        .collect()
}

fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (cin, cout) = (w.len() / b.len(), b.len());
    x.chunks(cin).flat_map(|row| (0..cout).map(move |o| b[o] + (0..cin).map(|i| row[i] * w[i * cout + o]).sum::<f64>())).collect()
}

/// Regular encoder sub-block on a grid that is exactly one temporal window,
/// computed token by token.
#[test]
fn single_window_encoder_sub_block_matches_dense_reference() {
    let cfg = ModelConfig::tiny();
    let (n, m, c, heads) = (cfg.frames, cfg.window, cfg.channels, cfg.heads);
    let model = Rstt::<f64>::with_init(cfg.clone(), 21, InitScheme::Randomized).unwrap();
    let x = Tensor::<f64>::randn(&[n, m, m, c], 1.0, &mut seeded_rng(22));
    let p = |s: &str| param(&model, &format!("enc0.block0.regular.{s}"));

    let l = n * m * m;
    let table = p("attn.bias_table");
    let span = 2 * m - 1;
    let mut bias = vec![0.0; heads * l * l];
    for i in 0..l {
        for j in 0..l {
            let (ti, yi, xi) = (i / (m * m), (i % (m * m)) / m, i % m);
            let (tj, yj, xj) = (j / (m * m), (j % (m * m)) / m, j % m);
            let row = ((ti + n - 1 - tj) * span + (yi + m - 1 - yj)) * span + (xi + m - 1 - xj);
            for h in 0..heads {
                bias[(h * l + i) * l + j] = table[row * heads + h];
            }
        }
    }
    let attn = DenseAttn {
        c,
        wq: p("attn.q.w"),
        bq: p("attn.q.b"),
        wk: p("attn.k.w"),
        bk: p("attn.k.b"),
        wv: p("attn.v.w"),
        bv: p("attn.v.b"),
        wo: p("attn.o.w"),
        bo: p("attn.o.b"),
    };
    let y = layer_norm(x.data(), &p("norm1.gamma"), &p("norm1.beta"));
    let (a, _) = attn.run(&y, &y, heads, Some(&bias), None);
    let x1: Vec<f64> = x.data().iter().zip(&a).map(|(u, v)| u + v).collect();
    let y = layer_norm(&x1, &p("norm2.gamma"), &p("norm2.beta"));
    let hidden: Vec<f64> = dense(&y, &p("mlp.fc1.w"), &p("mlp.fc1.b"))
        .into_iter()
        .map(|v| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
        .collect();
    let want: Vec<f64> = x1.iter().zip(dense(&hidden, &p("mlp.fc2.w"), &p("mlp.fc2.b"))).map(|(u, v)| u + v).collect();

    let g = Graph::inference();
    let vars = model.params().bind(&g);
    let cx = Ctx::new(&g, &vars, model.config());
    let got = encoder_sub_block(&cx, &g.constant(x), &model.ids().enc[0][0].regular).unwrap();
    let err = got.value().data().iter().zip(&want).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "max error {err}");
}

#[test]
fn shift_mask_agrees_with_region_oracle() {
    for (h, w, m) in [(8, 8, 4), (16, 8, 4), (12, 12, 6), (8, 8, 2)] {
        let s = m / 2;
        let mask = build_shift_mask(h, w, m, s, s).unwrap();
        let mut wi = 0;
        for by in 0..h / m {
            for bx in 0..w / m {
                for i in 0..m * m {
                    for j in 0..m * m {
                        let a = (by * m + i / m, bx * m + i % m);
                        let b = (by * m + j / m, bx * m + j % m);
                        assert_eq!(mask.blocked(wi, i, j), !same_shift_region(h, w, s, a, b), "{h}x{w} M={m} window {wi} pair ({i}, {j})");
                    }
                }
                wi += 1;
            }
        }
        assert_eq!(mask.distinct_patterns(), 4, "{h}x{w} M={m}");
    }
}

#[test]
fn shifted_attention_gives_blocked_pairs_negligible_weight() {
    let (h, w, m, c, heads) = (8, 8, 4, 8, 2);
    let s = m / 2;
    let a = random_attn(c, 6);
    let x = Tensor::<f64>::randn(&[1, h, w, c], 3.0, &mut seeded_rng(7));
    let mask = build_shift_mask(h, w, m, s, s).unwrap();
    let g = Graph::inference();
    let wts = bind(&g, &a);
    let rolled = cyclic_shift(&g, &g.constant(x), -(s as isize), -(s as isize)).unwrap();
    let win = window_partition(&g, &rolled, m).unwrap();
    let mv = g.constant(mask.to_tensor(1, 1));
    let (_, probs) = multi_head_attention_probs(&g, &win, &win, vars(&wts), heads, None, Some(&mv)).unwrap();
    let p = probs.value();
    let l = m * m;
    let mut blocked = 0;
    for wi in 0..mask.windows {
        for hd in 0..heads {
            for i in 0..l {
                let row = &p.data()[((wi * heads + hd) * l + i) * l..][..l];
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (j, &v) in row.iter().enumerate() {
                    if mask.blocked(wi, i, j) {
                        blocked += 1;
                        assert!(v < 1e-8, "window {wi} head {hd} pair ({i}, {j}) weight {v}");
                    }
                }
            }
        }
    }
    assert!(blocked > 0);
}

#[test]
fn zero_initialized_exits_make_blocks_identities() {
    let model = Rstt::<f64>::new(ModelConfig::tiny(), 3).unwrap();
    let g = Graph::inference();
    let vars = model.params().bind(&g);
    let cx = Ctx::new(&g, &vars, model.config());
    let mut rng = seeded_rng(8);
    let x = Tensor::<f64>::randn(&[4, 4, 4, 8], 1.0, &mut rng);
    let y = swin_encoder_block(&cx, &g.constant(x.clone()), &model.ids().enc[0][0]).unwrap();
    assert!(y.value().bit_eq(&x));
    let q = Tensor::<f64>::randn(&[7, 4, 4, 8], 1.0, &mut rng);
    let offsets: Vec<isize> = (0..7).collect();
    let z = swin_decoder_block(&cx, &g.constant(q.clone()), &g.constant(x), &model.ids().dec[0][0], &offsets, false).unwrap();
    assert!(z.value().bit_eq(&q));
}

/// With one input frame, one query frame equal to it, and the decoder's
/// weights copied into the encoder, cross-attention is self-attention.
#[test]
fn single_frame_decoder_reduces_to_encoder() {
    let cfg = ModelConfig { frames: 1, ..ModelConfig::tiny() };
    let mut store = ParamStore::<f64>::new();
    let mut init = Initializer { rng: seeded_rng(9), scheme: InitScheme::Randomized };
    let ids = register(&cfg, &mut store, &mut init).unwrap();
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with("dec0.block0.regular.")).collect();
    for name in &names {
        let t = store.by_name(name).unwrap().clone();
        let suffix = name.trim_start_matches("dec0.block0.regular.");
        if suffix.starts_with("norm_kv") {
            continue;
        }
        store.set(&format!("enc0.block0.regular.{suffix}"), t.clone()).unwrap();
        if let Some(norm) = suffix.strip_prefix("norm1") {
            store.set(&format!("dec0.block0.regular.norm_kv{norm}"), t).unwrap();
        }
    }
    let x = Tensor::<f64>::randn(&[1, 4, 4, 8], 1.0, &mut seeded_rng(10));
    let g = Graph::inference();
    let vars = store.bind(&g);
    let cx = Ctx::new(&g, &vars, &cfg);
    let xv = g.constant(x);
    let enc = encoder_sub_block(&cx, &xv, &ids.enc[0][0].regular).unwrap();
    let dec = decoder_sub_block(&cx, &xv, &xv, &ids.dec[0][0].regular, &[0], false).unwrap();
    assert!(enc.value().max_abs_diff(dec.value()) < 1e-12);
}

#[test]
fn shared_dictionary_projection_is_bit_exact() {
    let model = Rstt::<f32>::with_init(ModelConfig::tiny(), 11, InitScheme::Randomized).unwrap();
    let quad = FrameQuad::new(Tensor::uniform(&[4, 3, 16, 16], 0.0, 1.0, &mut seeded_rng(12))).unwrap();
    let shared = model.forward_with(&quad, ForwardOptions { kv_mode: KvMode::Shared, ..Default::default() }).unwrap();
    let per = model.forward_with(&quad, ForwardOptions { kv_mode: KvMode::PerQuery, ..Default::default() }).unwrap();
    assert!(shared.tensor().bit_eq(per.tensor()));
    let plan = QueryPlan::subdivided(3).unwrap();
    let a = model.forward_plan(&quad, &plan).unwrap();
    assert_eq!(a.shape(), &[10, 3, 64, 64]);
}

#[test]
fn per_frame_windows_ignore_other_frames() {
    let cfg = ModelConfig { temporal_windows: false, ..ModelConfig::tiny() };
    let model = Rstt::<f64>::with_init(cfg, 13, InitScheme::Randomized).unwrap();
    let g = Graph::inference();
    let vars = model.params().bind(&g);
    let cx = Ctx::new(&g, &vars, model.config());
    let mut rng = seeded_rng(14);
    let x = Tensor::<f64>::randn(&[4, 4, 4, 8], 1.0, &mut rng);
    let mut y = x.clone();
    let frame = 4 * 4 * 8;
    y.data_mut()[frame..].iter_mut().for_each(|v| *v += 1.0);
    let block = &model.ids().enc[0][0];
    let a = swin_encoder_block(&cx, &g.constant(x), block).unwrap();
    let b = swin_encoder_block(&cx, &g.constant(y), block).unwrap();
    assert!(a.value().data()[..frame].iter().zip(&b.value().data()[..frame]).all(|(u, v)| u == v));
}

fn grid() -> impl Strategy<Value = (usize, usize, usize, usize, usize)> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4).prop_map(|(n, by, bx, m, c)| (n, by * m, bx * m, m, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_partition_round_trips((n, h, w, m, c) in grid(), seed in any::<u64>()) {
        let x = Tensor::<f64>::randn(&[n, h, w, c], 1.0, &mut seeded_rng(seed));
        let g = Graph::inference();
        let xv = g.constant(x.clone());
        let win = window_partition(&g, &xv, m).unwrap();
        prop_assert_eq!(win.shape(), &[(h / m) * (w / m), n * m * m, c][..]);
        prop_assert!(window_reverse(&g, &win, m, n, h, w).unwrap().value().bit_eq(&x));
        let per = window_partition_frames(&g, &xv, m).unwrap();
        prop_assert!(window_reverse_frames(&g, &per, m, h, w).unwrap().value().bit_eq(&x));
    }

    #[test]
    fn cyclic_shift_round_trips((n, h, w, _m, c) in grid(), dy in -9isize..9, dx in -9isize..9, seed in any::<u64>()) {
        let x = Tensor::<f64>::randn(&[n, h, w, c], 1.0, &mut seeded_rng(seed));
        let g = Graph::inference();
        let s = cyclic_shift(&g, &g.constant(x.clone()), dy, dx).unwrap();
        let back = cyclic_shift(&g, &s, -dy, -dx).unwrap();
        prop_assert!(back.value().bit_eq(&x));
        let (y0, x0) = (dy.rem_euclid(h as isize) as usize, dx.rem_euclid(w as isize) as usize);
        prop_assert_eq!(s.value().at(&[0, y0, x0, 0]), x.at(&[0, 0, 0, 0]));
    }

    /// Without position bias, attention treats keys as a set and queries
    /// independently.
    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), rot in 1usize..6) {
        let (c, heads, l) = (4, 2, 6);
        let a = random_attn(c, seed);
        let x = Tensor::<f64>::randn(&[1, l, c], 1.0, &mut seeded_rng(seed ^ 1));
        let perm: Vec<usize> = (0..l).map(|i| (i + rot) % l).collect();
        let px = Tensor::from_fn(&[1, l, c], |i| x.data()[perm[i / c] * c + i % c]);
        let g = Graph::inference();
        let w = bind(&g, &a);
        let base = multi_head_attention(&g, &g.constant(x.clone()), &g.constant(x.clone()), vars(&w), heads, None, None).unwrap();
        let keys_moved = multi_head_attention(&g, &g.constant(x), &g.constant(px.clone()), vars(&w), heads, None, None).unwrap();
        prop_assert!(base.value().max_abs_diff(keys_moved.value()) < 1e-12);
        let both = multi_head_attention(&g, &g.constant(px.clone()), &g.constant(px), vars(&w), heads, None, None).unwrap();
        for (i, &p) in perm.iter().enumerate().take(l) {
            for k in 0..c {
                prop_assert!((both.value().data()[i * c + k] - base.value().data()[p * c + k]).abs() < 1e-12);
            }
        }
    }
}
