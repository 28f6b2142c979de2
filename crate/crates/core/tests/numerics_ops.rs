//! Per-primitive verification of the autodiff engine: every differentiable
//! op is checked against central finite differences in f64, plus the
//! documented value-level examples and error paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reslim_core::gradcheck::check_gradients;
use reslim_core::numerics::{with_flop_ledger, Graph, Padding, Tensor, Var};

/// Deterministic loss weights so the probe loss is sensitive to every output.
fn loss_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 * 0.7).sin() + 1.5) * 0.5).collect()
}

fn random_inputs(shapes: &[&[usize]], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|s| {
            let len: usize = s.iter().product();
            (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
        })
        .collect()
}

/// Checks the analytic gradient of `build` (w.r.t. every input) against
/// central finite differences with h = 1e-6.
fn fd_check(
    name: &str,
    shapes: &[&[usize]],
    seed: u64,
    tol: f64,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) {
    let inputs = random_inputs(shapes, seed);
    let flat: Vec<f64> = inputs.iter().flatten().copied().collect();

    let eval = |x: &[f64]| -> f64 {
        let mut g = Graph::new();
        let mut off = 0;
        let vars: Vec<Var> = shapes
            .iter()
            .map(|s| {
                let len: usize = s.iter().product();
                let t = Tensor::from_vec(s, x[off..off + len].to_vec());
                off += len;
                g.leaf(t, false)
            })
            .collect();
        let out = build(&mut g, &vars);
        let w = loss_weights(g.value(out).len());
        g.value(out).data().iter().zip(&w).map(|(&v, &wi)| v * wi).sum()
    };

    // Analytic gradient via backward.
    let analytic: Vec<f64> = {
        let mut g = Graph::new();
        let mut off = 0;
        let vars: Vec<Var> = shapes
            .iter()
            .map(|s| {
                let len: usize = s.iter().product();
                let t = Tensor::from_vec(s, flat[off..off + len].to_vec());
                off += len;
                g.leaf(t, true)
            })
            .collect();
        let out = build(&mut g, &vars);
        let w = loss_weights(g.value(out).len());
        let wt = g.constant(Tensor::from_vec(g.value(out).shape(), w));
        let prod = g.mul(out, wt).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();
        vars.iter()
            .flat_map(|&v| g.grad(v).expect("leaf gradient").data().to_vec())
            .collect()
    };

    let check = check_gradients(eval, &flat, &analytic, 1e-6);
    assert!(
        check.max_abs_err < tol,
        "{name}: max abs err {:.3e} (rel {:.3e} at {}) exceeds {tol:.0e}",
        check.max_abs_err,
        check.max_rel_err,
        check.worst_index
    );
}

// ---- matmul ----

#[test]
fn matmul_identity_preserves_matrix() {
    let mut g: Graph<f64> = Graph::new();
    let eye = g.constant(Tensor::from_vec(
        &[3, 3],
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    ));
    let m = g.constant(Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let out = g.matmul(eye, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_scalar_chain_rule() {
    let mut g: Graph<f64> = Graph::new();
    let a = g.leaf(Tensor::from_vec(&[1, 1], vec![2.0]), true);
    let b = g.leaf(Tensor::from_vec(&[1, 1], vec![3.0]), true);
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[6.0]);
    let loss = g.sum(out);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[3.0]);
    assert_eq!(g.grad(b).unwrap().data(), &[2.0]);
}

#[test]
fn matmul_gradients_match_finite_differences() {
    fd_check("matmul", &[&[4, 5], &[5, 3]], 11, 1e-7, |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn matmul_rejects_shape_mismatch() {
    let mut g: Graph<f64> = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 2]));
    assert!(g.matmul(a, b).is_err());
}

// ---- conv2d ----

/// Direct same-padded cross-correlation, written independently of the graph
/// implementation.
fn conv_same_oracle(
    x: &[f64],
    (c_in, h, w): (usize, usize, usize),
    k: &[f64],
    (c_out, kh, kw): (usize, usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * h * w];
    for oc in 0..c_out {
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0;
                for ic in 0..c_in {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = oy as isize + dy as isize - (kh / 2) as isize;
                            let ix = ox as isize + dx as isize - (kw / 2) as isize;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += x[(ic * h + iy as usize) * w + ix as usize]
                                * k[((oc * c_in + ic) * kh + dy) * kw + dx];
                        }
                    }
                }
                out[(oc * h + oy) * w + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_one_by_one_unit_kernel_is_identity() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let k = g.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]));
    let out = g.conv2d(x, k, Padding::Same).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn conv2d_averaging_kernel_matches_direct_oracle() {
    // Constant field: interior stays constant, borders follow the oracle.
    let c = 2.5;
    let x: Vec<f64> = vec![c; 5 * 6];
    let k = vec![1.0 / 9.0; 9];
    let oracle = conv_same_oracle(&x, (1, 5, 6), &k, (1, 3, 3));
    let mut g: Graph<f64> = Graph::new();
    let xv = g.constant(Tensor::from_vec(&[1, 5, 6], x));
    let kv = g.constant(Tensor::from_vec(&[1, 1, 3, 3], k));
    let out = g.conv2d(xv, kv, Padding::Same).unwrap();
    for (i, (&got, &want)) in g.value(out).data().iter().zip(&oracle).enumerate() {
        assert!((got - want).abs() < 1e-12, "pixel {i}: {got} vs {want}");
    }
    // Interior value is exactly the constant.
    assert!((g.value(out).at3(0, 2, 2) - c).abs() < 1e-12);
    // Border value is reduced by the zero padding.
    assert!(g.value(out).at3(0, 0, 0) < c);
}

#[test]
fn conv2d_random_matches_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..2 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..3 * 2 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let oracle = conv_same_oracle(&x, (2, 4, 5), &k, (3, 3, 3));
    let mut g: Graph<f64> = Graph::new();
    let xv = g.constant(Tensor::from_vec(&[2, 4, 5], x));
    let kv = g.constant(Tensor::from_vec(&[3, 2, 3, 3], k));
    let out = g.conv2d(xv, kv, Padding::Same).unwrap();
    for (&got, &want) in g.value(out).data().iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    fd_check("conv2d/same", &[&[2, 4, 4], &[2, 2, 3, 3]], 17, 1e-7, |g, v| {
        g.conv2d(v[0], v[1], Padding::Same).unwrap()
    });
    fd_check("conv2d/valid", &[&[1, 5, 5], &[2, 1, 3, 3]], 19, 1e-7, |g, v| {
        g.conv2d(v[0], v[1], Padding::Valid).unwrap()
    });
}

#[test]
fn conv2d_rejects_oversized_kernel_and_even_extents() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 2]));
    let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(g.conv2d(x, k, Padding::Valid).is_err());
    let k2 = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(g.conv2d(x, k2, Padding::Same).is_err());
}

// ---- bilinear upsampling ----

#[test]
fn upsample_factor_one_is_identity() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let out = g.upsample_bilinear(x, 1).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn upsample_keeps_constants() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::full(&[2, 3, 3], 5.0));
    let out = g.upsample_bilinear(x, 4).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 12, 12]);
    for &v in g.value(out).data() {
        assert!((v - 5.0).abs() < 1e-12);
    }
}

/// Independent align-corners-false interpolation oracle.
fn bilinear_oracle(x: &[f64], h: usize, w: usize, s: usize) -> Vec<f64> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; oh * ow];
    let sample = |y: isize, xx: isize| -> f64 {
        let yc = y.clamp(0, h as isize - 1) as usize;
        let xc = xx.clamp(0, w as isize - 1) as usize;
        x[yc * w + xc]
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let sy = (oy as f64 + 0.5) / s as f64 - 0.5;
            let sx = (ox as f64 + 0.5) / s as f64 - 0.5;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let wy = sy - y0;
            let wx = sx - x0;
            let v = (1.0 - wy) * (1.0 - wx) * sample(y0 as isize, x0 as isize)
                + (1.0 - wy) * wx * sample(y0 as isize, x0 as isize + 1)
                + wy * (1.0 - wx) * sample(y0 as isize + 1, x0 as isize)
                + wy * wx * sample(y0 as isize + 1, x0 as isize + 1);
            out[oy * ow + ox] = v;
        }
    }
    out
}

#[test]
fn upsample_ramp_matches_interpolation_oracle() {
    let x = vec![0.0, 1.0, 2.0, 3.0];
    let oracle = bilinear_oracle(&x, 2, 2, 2);
    let mut g: Graph<f64> = Graph::new();
    let xv = g.constant(Tensor::from_vec(&[1, 2, 2], x));
    let out = g.upsample_bilinear(xv, 2).unwrap();
    for (&got, &want) in g.value(out).data().iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn upsample_rejects_factor_zero() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 2]));
    assert!(g.upsample_bilinear(x, 0).is_err());
}

#[test]
fn upsample_gradients_match_finite_differences() {
    fd_check("upsample", &[&[2, 3, 3]], 23, 1e-7, |g, v| g.upsample_bilinear(v[0], 2).unwrap());
}

// ---- attention ----

#[test]
fn attention_single_token_returns_v_exactly() {
    let mut g: Graph<f64> = Graph::new();
    let q = g.constant(Tensor::from_vec(&[1, 3], vec![0.3, -0.7, 2.0]));
    let k = g.constant(Tensor::from_vec(&[1, 3], vec![1.0, 1.0, -1.0]));
    let v = g.constant(Tensor::from_vec(&[1, 3], vec![4.0, 5.0, 6.0]));
    let out = g.attention(q, k, v).unwrap();
    assert_eq!(g.value(out).data(), &[4.0, 5.0, 6.0]);
}

#[test]
fn attention_identical_rows_average_v() {
    let n = 4;
    let d = 2;
    let mut g: Graph<f64> = Graph::new();
    let q = g.constant(Tensor::full(&[n, d], 0.5));
    let k = g.constant(Tensor::full(&[n, d], -0.25));
    let vdata: Vec<f64> = (0..n * d).map(|i| i as f64).collect();
    let v = g.constant(Tensor::from_vec(&[n, d], vdata.clone()));
    let out = g.attention(q, k, v).unwrap();
    for i in 0..n {
        for j in 0..d {
            let mean: f64 = (0..n).map(|r| vdata[r * d + j]).sum::<f64>() / n as f64;
            assert!((g.value(out).at2(i, j) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_gradients_and_ledger() {
    let ((), ledger) = with_flop_ledger(|| {
        fd_check("attention", &[&[6, 4], &[6, 4], &[6, 4]], 29, 1e-7, |g, v| {
            g.attention(v[0], v[1], v[2]).unwrap()
        });
    });
    // fd_check runs one analytic pass with gradients; the ledger sees one
    // recorded attention per graph construction. Check the documented cost on
    // a dedicated run instead.
    assert!(ledger.attention > 0);
    let ((), one) = with_flop_ledger(|| {
        let mut g: Graph<f64> = Graph::new();
        let q = g.constant(Tensor::zeros(&[6, 4]));
        let k = g.constant(Tensor::zeros(&[6, 4]));
        let v = g.constant(Tensor::zeros(&[6, 4]));
        let _ = g.attention(q, k, v).unwrap();
    });
    assert_eq!(one.attention, 2 * 36 * 4);
}

#[test]
fn attention_rejects_zero_width_and_mismatch() {
    let mut g: Graph<f64> = Graph::new();
    let q = g.constant(Tensor::zeros(&[2, 0]));
    let k = g.constant(Tensor::zeros(&[2, 0]));
    let v = g.constant(Tensor::zeros(&[2, 0]));
    assert!(g.attention(q, k, v).is_err());
    let q = g.constant(Tensor::zeros(&[2, 3]));
    let k = g.constant(Tensor::zeros(&[3, 3]));
    let v = g.constant(Tensor::zeros(&[2, 3]));
    assert!(g.attention(q, k, v).is_err());
}

#[test]
fn attention_output_stays_in_v_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let n = rng.gen_range(2..8);
        let d = rng.gen_range(1..6);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let (qd, kd, vd) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let mut g: Graph<f64> = Graph::new();
        let q = g.constant(Tensor::from_vec(&[n, d], qd));
        let k = g.constant(Tensor::from_vec(&[n, d], kd));
        let v = g.constant(Tensor::from_vec(&[n, d], vd.clone()));
        let out = g.attention(q, k, v).unwrap();
        for j in 0..d {
            let lo = (0..n).map(|r| vd[r * d + j]).fold(f64::INFINITY, f64::min);
            let hi = (0..n).map(|r| vd[r * d + j]).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..n {
                let o = g.value(out).at2(i, j);
                assert!(o >= lo - 1e-9 && o <= hi + 1e-9, "out of hull: {o} not in [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn streaming_and_recorded_attention_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let n = 9;
    let d = 5;
    let data: Vec<f64> = (0..3 * n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let run = |requires: bool| -> Vec<f64> {
        let mut g: Graph<f64> = Graph::new();
        let q = g.leaf(Tensor::from_vec(&[n, d], data[..n * d].to_vec()), requires);
        let k = g.leaf(Tensor::from_vec(&[n, d], data[n * d..2 * n * d].to_vec()), requires);
        let v = g.leaf(Tensor::from_vec(&[n, d], data[2 * n * d..].to_vec()), requires);
        let out = g.attention(q, k, v).unwrap();
        g.value(out).data().to_vec()
    };
    let a = run(false);
    let b = run(true);
    assert_eq!(a, b);
}

// ---- softmax / elementwise / structural ----

#[test]
fn row_softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (r, c) = (7, 5);
    let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-8.0..8.0)).collect();
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::from_vec(&[r, c], data));
    let s = g.row_softmax(x).unwrap();
    for i in 0..r {
        let sum: f64 = (0..c).map(|j| g.value(s).at2(i, j)).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[test]
fn elementwise_and_structural_gradients() {
    fd_check("add", &[&[3, 4], &[3, 4]], 1, 1e-8, |g, v| g.add(v[0], v[1]).unwrap());
    fd_check("sub", &[&[3, 4], &[3, 4]], 2, 1e-8, |g, v| g.sub(v[0], v[1]).unwrap());
    fd_check("mul", &[&[3, 4], &[3, 4]], 3, 1e-7, |g, v| g.mul(v[0], v[1]).unwrap());
    fd_check("scale", &[&[2, 5]], 4, 1e-8, |g, v| g.scale(v[0], -1.75));
    fd_check("add_scalar", &[&[2, 5]], 5, 1e-8, |g, v| g.add_scalar(v[0], 0.3));
    fd_check("gelu", &[&[4, 4]], 6, 1e-6, |g, v| g.gelu(v[0]));
    fd_check("reshape", &[&[2, 6]], 7, 1e-8, |g, v| g.reshape(v[0], &[3, 4]).unwrap());
    fd_check("narrow_rows", &[&[5, 3]], 8, 1e-8, |g, v| g.narrow_rows(v[0], 1, 2).unwrap());
    fd_check("narrow_cols", &[&[3, 6]], 9, 1e-8, |g, v| g.narrow_cols(v[0], 2, 3).unwrap());
    fd_check("concat_cols", &[&[3, 2], &[3, 4]], 10, 1e-8, |g, v| {
        g.concat_cols(&[v[0], v[1]]).unwrap()
    });
    fd_check("concat_rows", &[&[2, 3], &[4, 3]], 25, 1e-8, |g, v| {
        g.concat_rows(&[v[0], v[1]]).unwrap()
    });
    fd_check("pad_edge_bottom_right", &[&[2, 3, 4]], 26, 1e-8, |g, v| {
        g.pad_edge_bottom_right(v[0], 2, 1).unwrap()
    });
    fd_check("row_softmax", &[&[4, 5]], 11, 1e-6, |g, v| g.row_softmax(v[0]).unwrap());
    fd_check("mul_col", &[&[4, 3], &[4, 1]], 12, 1e-7, |g, v| g.mul_col(v[0], v[1]).unwrap());
    fd_check("add_row_broadcast", &[&[4, 3], &[1, 3]], 13, 1e-8, |g, v| {
        g.add_row_broadcast(v[0], v[1]).unwrap()
    });
    fd_check("add_rows_by_class", &[&[5, 3], &[2, 3]], 14, 1e-8, |g, v| {
        g.add_rows_by_class(v[0], v[1], &[0, 1, 1, 0, 1]).unwrap()
    });
    fd_check("layer_norm", &[&[4, 6], &[6], &[6]], 15, 1e-6, |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
    });
    fd_check("bias_add_channel", &[&[3, 2, 4], &[3]], 16, 1e-8, |g, v| {
        g.bias_add_channel(v[0], v[1]).unwrap()
    });
    fd_check("replicate_pad", &[&[2, 3, 3]], 17, 1e-8, |g, v| g.replicate_pad(v[0], 2).unwrap());
    fd_check("crop_at", &[&[2, 5, 5]], 18, 1e-8, |g, v| g.crop_at(v[0], 1, 2, 3, 2).unwrap());
    fd_check("patchify", &[&[2, 4, 4]], 19, 1e-8, |g, v| g.patchify(v[0], 2).unwrap());
    fd_check("tokens_to_image", &[&[6, 8]], 20, 1e-8, |g, v| {
        g.tokens_to_image(v[0], 2, 3, 2, 2).unwrap()
    });
    fd_check("rows_to_image", &[&[6, 4]], 21, 1e-8, |g, v| g.rows_to_image(v[0], 2, 3).unwrap());
    fd_check("image_to_rows", &[&[4, 2, 3]], 22, 1e-8, |g, v| g.image_to_rows(v[0]).unwrap());
    fd_check("mean", &[&[3, 3]], 24, 1e-8, |g, v| g.mean(v[0]));
}

#[test]
fn patchify_then_tokens_to_image_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let data: Vec<f64> = (0..3 * 4 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::from_vec(&[3, 4, 6], data.clone()));
    let tokens = g.patchify(x, 2).unwrap();
    assert_eq!(g.value(tokens).shape(), &[6, 12]);
    let back = g.tokens_to_image(tokens, 2, 3, 3, 2).unwrap();
    assert_eq!(g.value(back).data(), data.as_slice());
}

// ---- backward bookkeeping ----

#[test]
fn backward_of_sum_is_all_ones() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.0, 4.0]), true);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_square_sum() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[1], vec![3.0]), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn repeated_backward_is_a_stale_graph_error() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(Tensor::scalar(1.0), true);
    let loss = g.scale(x, 2.0);
    g.backward(loss).unwrap();
    assert!(g.backward(loss).is_err());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2, 2]), true);
    let y = g.scale(x, 1.0);
    assert!(g.backward(y).is_err());
}

// ---- flop ledger ----

#[test]
fn ledger_counts_follow_the_cost_model() {
    let ((), ledger) = with_flop_ledger(|| {
        let mut g: Graph<f32> = Graph::new();
        let q = g.constant(Tensor::zeros(&[100, 8]));
        let k = g.constant(Tensor::zeros(&[100, 8]));
        let v = g.constant(Tensor::zeros(&[100, 8]));
        let _ = g.attention(q, k, v).unwrap();
        let a = g.constant(Tensor::zeros(&[3, 4]));
        let b = g.constant(Tensor::zeros(&[4, 7]));
        let _ = g.matmul(a, b).unwrap();
    });
    assert_eq!(ledger.attention, 160_000);
    assert_eq!(ledger.matmul, 3 * 4 * 7);
}

#[test]
fn attention_counter_is_quadratic_in_tokens() {
    let count = |n: usize| -> u64 {
        let ((), ledger) = with_flop_ledger(|| {
            let mut g: Graph<f32> = Graph::new();
            let q = g.constant(Tensor::zeros(&[n, 16]));
            let k = g.constant(Tensor::zeros(&[n, 16]));
            let v = g.constant(Tensor::zeros(&[n, 16]));
            let _ = g.attention(q, k, v).unwrap();
        });
        ledger.attention
    };
    assert_eq!(count(64), 4 * count(32));
    assert_eq!(count(128), 4 * count(64));
}
