use proptest::prelude::*;
use rbonn_core::bilinear::{
    bilinear_residual, grad_g_wrt_a, grad_g_wrt_w, grad_l_wrt_a, objective_g, Regularizer, WeightMatrixView,
};
use rbonn_core::binarize::{
    binary_conv_forward, binary_conv_raw, pack_activation, pack_bits, pack_filters, sign, xnor_popcount_dot,
    Estimator, PackedBinaryTensor, ScaleDiag, EPS_A,
};
use rbonn_core::rbonn::{
    backtrack_w, density_mask, density_threshold, drelu, drelu_rows, grad_u, l1_scale_jacobian,
    trace_backtrack_oracle, update_a, update_u, BacktrackState,
};
use rbonn_core::tensor::{conv2d, conv2d_gemm, ConvGeometry, Tensor};

/// Direct zero-padded convolution summing channel, row, column taps in that order.
fn reference_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
    let mut padded = vec![0.0; c * ph * pw];
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..wd {
                padded[(ci * ph + y + pad) * pw + xx + pad] = x.data()[(ci * h + y) * wd + xx];
            }
        }
    }
    let oh = (ph - k) / stride + 1;
    let ow = (pw - k) / stride + 1;
    Tensor::from_fn(&[co, oh, ow], |i| {
        let (o, oy, ox) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let mut acc = 0.0;
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let v = padded[(ci * ph + oy * stride + ky) * pw + ox * stride + kx];
                    acc += v * w.data()[((o * c + ci) * k + ky) * k + kx];
                }
            }
        }
        acc
    })
}

#[derive(Clone, Debug)]
struct Geo {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

fn geometry(max_c: usize, max_hw: usize) -> impl Strategy<Value = Geo> {
    (1..=max_c, 1..=8usize, 1..=max_hw, 1..=max_hw, prop::sample::select(vec![1usize, 2, 3, 5]), 1..=2usize)
        .prop_flat_map(|(c_in, c_out, h, w, k, stride)| {
            let min_pad = k.saturating_sub(h.min(w)).div_ceil(2);
            (min_pad..=k / 2 + min_pad).prop_map(move |pad| Geo {
                c_in,
                c_out,
                h,
                w,
                k,
                stride,
                pad,
            })
        })
}

fn reals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn signs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { -1.0 }), n)
}

fn geo_with_data(
    max_c: usize,
    max_hw: usize,
    values: fn(usize) -> BoxedStrategy<Vec<f64>>,
) -> impl Strategy<Value = (Geo, Vec<f64>, Vec<f64>)> {
    geometry(max_c, max_hw).prop_flat_map(move |g| {
        let nx = g.c_in * g.h * g.w;
        let nw = g.c_out * g.c_in * g.k * g.k;
        (Just(g), values(nx), values(nw))
    })
}

fn boxed_reals(n: usize) -> BoxedStrategy<Vec<f64>> {
    reals(n).boxed()
}

fn boxed_signs(n: usize) -> BoxedStrategy<Vec<f64>> {
    signs(n).boxed()
}

fn tensors(g: &Geo, x: Vec<f64>, w: Vec<f64>) -> (Tensor<f64>, Tensor<f64>) {
    (
        Tensor::new(vec![g.c_in, g.h, g.w], x).unwrap(),
        Tensor::new(vec![g.c_out, g.c_in, g.k, g.k], w).unwrap(),
    )
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv2d_matches_padded_reference((g, x, w) in geo_with_data(6, 9, boxed_reals)) {
        let (x, w) = tensors(&g, x, w);
        let got = conv2d(&x, &w, g.stride, g.pad).unwrap();
        let want = reference_conv(&x, &w, g.stride, g.pad);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert_eq!(got.data(), want.data());
    }

    #[test]
    fn conv2d_is_linear_in_input_and_weight(
        (g, x, w) in geo_with_data(5, 8, boxed_reals),
        s in -3.0..3.0f64,
    ) {
        let (x, w) = tensors(&g, x, w);
        let y = conv2d(&x, &w, g.stride, g.pad).unwrap();
        let sy = conv2d(&x.scale(s), &w, g.stride, g.pad).unwrap();
        let ys = conv2d(&x, &w.scale(s), g.stride, g.pad).unwrap();
        let x2 = x.map(|v| v * 0.5 - 0.25);
        let y2 = conv2d(&x2, &w, g.stride, g.pad).unwrap();
        let ysum = conv2d(&x.add(&x2).unwrap(), &w, g.stride, g.pad).unwrap();
        for i in 0..y.len() {
            prop_assert!(close(sy.data()[i], s * y.data()[i], 1e-12));
            prop_assert!(close(ys.data()[i], s * y.data()[i], 1e-12));
            prop_assert!(close(ysum.data()[i], y.data()[i] + y2.data()[i], 1e-12));
        }
    }

    #[test]
    fn gemm_conv_matches_direct_conv((g, x, w) in geo_with_data(6, 9, boxed_reals)) {
        let (xt, wt) = tensors(&g, x, w);
        let geo = ConvGeometry::new([g.c_in, g.h, g.w], g.c_out, g.k, g.stride, g.pad).unwrap();
        let mut col = vec![0.0; geo.patch_len() * geo.out_pixels()];
        let mut out = vec![0.0; geo.out_len()];
        conv2d_gemm(xt.data(), wt.data(), &geo, &mut col, &mut out);
        let want = conv2d(&xt, &wt, g.stride, g.pad).unwrap();
        for (a, b) in out.iter().zip(want.data()) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn packed_kernel_equals_float_conv_of_signs((g, x, w) in geo_with_data(140, 7, boxed_signs)) {
        let (xt, wt) = tensors(&g, x, w);
        let a = pack_activation(xt.data(), g.c_in, g.h, g.w);
        let f = pack_filters(&wt).unwrap();
        let (geo, raw) = binary_conv_raw(&a, &f, g.stride, g.pad).unwrap();
        let want = conv2d(&xt, &wt, g.stride, g.pad).unwrap();
        prop_assert_eq!(&[geo.c_out, geo.out_h, geo.out_w][..], want.shape());
        for (r, v) in raw.iter().zip(want.data()) {
            prop_assert_eq!(*r as f64, *v);
        }
    }

    #[test]
    fn xnor_dot_equals_float_dot(bits in (1..=4096usize).prop_flat_map(|n| (signs(n), signs(n)))) {
        let (a, b) = bits;
        let n = a.len();
        let pa = pack_bits(&Tensor::new(vec![n], a.clone()).unwrap()).unwrap();
        let pb = pack_bits(&Tensor::new(vec![n], b.clone()).unwrap()).unwrap();
        let want: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        prop_assert_eq!(xnor_popcount_dot(&pa, &pb).unwrap() as f64, want);
    }

    #[test]
    fn trace_oracle_agrees_on_random_rows(
        (rows, cols, w, a) in (1..=8usize, 1..=24usize).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(-1.0..1.0f64, r * c), prop::collection::vec(0.1..10.0f64, r))
        })
    ) {
        let view = WeightMatrixView::new(rows, cols, &w).unwrap();
        let scale = ScaleDiag::new(a).unwrap();
        let residual = bilinear_residual(view, &scale).unwrap();
        let jac = l1_scale_jacobian(view);
        let check = trace_backtrack_oracle(view, &residual, &jac).unwrap();
        prop_assert!(check.max_rel_err <= 1e-10);
        for (d, c) in check.d.iter().zip(&check.closed) {
            prop_assert_eq!(*d, -*c);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn pack_unpack_round_trip(shape in prop::collection::vec(1..=70usize, 1..=3), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let x = Tensor::from_fn(&shape, |i| if (seed.rotate_left(i as u32 % 64) ^ i as u64) & 1 == 1 { 1.0 } else { -1.0f64 });
        let p = pack_bits(&x).unwrap();
        prop_assert!(p.padding_is_canonical());
        prop_assert_eq!(p.valid_bits(), n);
        prop_assert_eq!(p.unpack::<f64>(), x);
    }

    #[test]
    fn activation_packing_follows_sign(c in 1..=130usize, h in 1..=4usize, w in 1..=4usize, seed in any::<u64>()) {
        let x: Vec<f64> = (0..c * h * w).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) % 5) as f64 - 2.0).collect();
        let p = pack_activation(&x, c, h, w);
        prop_assert!(p.padding_is_canonical());
        let unpacked: Tensor<f64> = p.unpack();
        for ch in 0..c {
            for px in 0..h * w {
                prop_assert_eq!(unpacked.data()[px * c + ch], sign(x[ch * h * w + px]));
            }
        }
    }

    #[test]
    fn estimator_factors(x in -3.0..3.0f64) {
        let ste = Estimator::Ste.factor(x);
        prop_assert_eq!(ste, if x.abs() < 1.0 { 1.0 } else { 0.0 });
        let approx = Estimator::ApproxSign.factor(x);
        prop_assert!((0.0..=2.0).contains(&approx));
        prop_assert_eq!(approx, if x.abs() < 1.0 { 2.0 - 2.0 * x.abs() } else { 0.0 });
    }

    #[test]
    fn density_mask_counts_and_order(values in prop::collection::vec(-5.0..5.0f64, 1..=64), tau in 0.0..=1.0f64) {
        let m = density_mask(&values, tau).unwrap();
        let t = density_threshold(values.len(), tau);
        prop_assert_eq!(m.threshold, t);
        prop_assert_eq!(m.count(), values.len() - t);
        for i in 0..values.len() {
            for j in 0..values.len() {
                if m.mask[i] && !m.mask[j] {
                    prop_assert!(values[i] >= values[j]);
                }
            }
        }
    }

    #[test]
    fn drelu_support_matches_row_rule(
        (rows, cols, w, a) in (1..=16usize, 1..=9usize).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), reals(r * c), prop::collection::vec(0.01..5.0f64, r))
        }),
        tau in 0.0..=1.0f64,
    ) {
        let view = WeightMatrixView::new(rows, cols, &w).unwrap();
        let scale = ScaleDiag::new(a.clone()).unwrap();
        let out = drelu(view, &scale, tau).unwrap();
        let dw = density_mask(&view.row_l1_norms(), tau).unwrap();
        let da = density_mask(&a, tau).unwrap();
        for i in 0..rows {
            let on = !dw.mask[i] && da.mask[i];
            for j in 0..cols {
                prop_assert_eq!(out[i * cols + j], if on { w[i * cols + j] } else { 0.0 });
            }
        }
        if tau == 1.0 || tau == 0.0 {
            prop_assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn updates_respect_floors(
        a in prop::collection::vec(0.0..3.0f64, 1..=12),
        seed in any::<u64>(),
        eta in 1e-6..10.0f64,
    ) {
        let n = a.len();
        let grad: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) % 97) as f64 - 48.0).collect();
        let next = update_a(&ScaleDiag::new(a.clone()).unwrap(), &grad, eta).unwrap();
        for (i, &v) in next.inv_alpha().iter().enumerate() {
            prop_assert!(v >= EPS_A);
            prop_assert_eq!(v, (a[i].max(EPS_A) - eta * grad[i]).abs().max(EPS_A));
        }
        let mut st = BacktrackState::new(n, 0.5);
        update_u(&mut st, &grad, eta).unwrap();
        prop_assert!(st.u.iter().all(|&u| u >= 0.0));
    }
}

fn fd<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn fd_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5 * analytic.abs().max(numeric.abs()).max(1.0)
}

/// Weights bounded away from zero so small perturbations never flip a sign.
fn matrix_away_from_zero() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1..=6usize, 1..=10usize).prop_flat_map(|(r, c)| {
        let entry = (0.05..1.5f64, prop::bool::ANY).prop_map(|(m, s)| if s { m } else { -m });
        (
            Just(r),
            Just(c),
            prop::collection::vec(entry, r * c),
            prop::collection::vec(0.2..4.0f64, r),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn objective_gradients_match_finite_differences(
        (rows, cols, w, a) in matrix_away_from_zero(),
        reg in prop::sample::select(vec![Regularizer::L1, Regularizer::L2]),
    ) {
        let h = 1e-6;
        let g_of = |w: &[f64], a: &[f64]| {
            objective_g(WeightMatrixView::new(rows, cols, w).unwrap(), &ScaleDiag::new(a.to_vec()).unwrap(), reg).unwrap()
        };
        let view = WeightMatrixView::new(rows, cols, &w).unwrap();
        let scale = ScaleDiag::new(a.clone()).unwrap();
        let ga = grad_g_wrt_a(view, &scale).unwrap();
        for i in 0..rows {
            let num = fd(|v| { let mut a2 = a.clone(); a2[i] = v; g_of(&w, &a2) }, a[i], h);
            prop_assert!(fd_close(ga[i], num), "dG/dA[{i}] {} vs {num}", ga[i]);
        }
        let gw = grad_g_wrt_w(view, &scale, reg).unwrap();
        for k in 0..w.len() {
            let num = fd(|v| { let mut w2 = w.clone(); w2[k] = v; g_of(&w2, &a) }, w[k], h);
            prop_assert!(fd_close(gw[k], num), "dG/dw[{k}] {} vs {num}", gw[k]);
        }
    }

    #[test]
    fn scale_gradient_matches_finite_differences(
        (g, x, w) in geo_with_data(8, 5, boxed_reals),
        lambda in 0.0..0.5f64,
        seed in any::<u64>(),
    ) {
        let (xt, wt) = tensors(&g, x, w);
        let inputs = vec![pack_activation(xt.data(), g.c_in, g.h, g.w)];
        let filters = pack_filters(&wt).unwrap();
        let geo = ConvGeometry::new([g.c_in, g.h, g.w], g.c_out, g.k, g.stride, g.pad).unwrap();
        let upstream = Tensor::from_fn(&[g.c_out, geo.out_h, geo.out_w], |i| {
            ((seed.wrapping_mul(2 * i as u64 + 1) >> 11) % 1000) as f64 / 500.0 - 1.0
        });
        let a: Vec<f64> = (0..g.c_out).map(|i| 0.5 + (i as f64) * 0.3).collect();
        let view = WeightMatrixView::of(&wt);
        let loss = |a: &[f64]| -> f64 {
            let s = ScaleDiag::new(a.to_vec()).unwrap();
            let y = binary_conv_forward(&inputs[0], &filters, &s, g.stride, g.pad).unwrap();
            let task: f64 = y.data().iter().zip(upstream.data()).map(|(p, q)| p * q).sum();
            task + lambda * objective_g(view, &s, Regularizer::L2).unwrap()
        };
        let scale = ScaleDiag::new(a.clone()).unwrap();
        let got = grad_l_wrt_a(&upstream, &inputs, &filters, &scale, view, lambda, g.stride, g.pad).unwrap();
        for i in 0..g.c_out {
            let num = fd(|v| { let mut a2 = a.clone(); a2[i] = v; loss(&a2) }, a[i], 1e-6);
            prop_assert!(fd_close(got[i], num), "dL/dA[{i}] {} vs {num}", got[i]);
        }
    }

    #[test]
    fn gain_gradient_matches_finite_differences(
        (rows, cols, w_prev, a) in matrix_away_from_zero(),
        seed in any::<u64>(),
        tau in 0.2..0.9f64,
    ) {
        let n = rows * cols;
        let val = |k: usize, salt: u64| ((seed ^ salt).wrapping_mul(k as u64 * 2 + 1) >> 13) % 1000;
        let w_vanilla = Tensor::from_fn(&[rows, cols], |k| val(k, 1) as f64 / 700.0 - 0.7);
        let lin: Vec<f64> = (0..n).map(|k| val(k, 2) as f64 / 500.0 - 1.0).collect();
        let quad: Vec<f64> = (0..n).map(|k| val(k, 3) as f64 / 1000.0 + 0.1).collect();
        let task = |w: &[f64]| -> f64 { w.iter().enumerate().map(|(k, &v)| lin[k] * v + 0.5 * quad[k] * v * v).sum() };
        let task_grad = |w: &[f64]| -> Vec<f64> { w.iter().enumerate().map(|(k, &v)| lin[k] + quad[k] * v).collect() };

        let w_prev = Tensor::new(vec![rows, cols], w_prev).unwrap();
        let scale = ScaleDiag::new(a).unwrap();
        let u: Vec<f64> = (0..rows).map(|i| 0.1 + 0.2 * i as f64).collect();
        let composite = |u: &[f64]| -> (Vec<f64>, f64) {
            let mut st = BacktrackState::new(rows, 0.0);
            st.u = u.to_vec();
            let w = backtrack_w(&w_vanilla, &w_prev, &scale, &st, tau).unwrap();
            let l = task(w.data());
            (w.into_data(), l)
        };
        let (w_t, _) = composite(&u);
        let mut state = BacktrackState::new(rows, 0.0);
        state.u = u.clone();
        state.snapshot(&w_prev, &scale);
        let got = grad_u(&task_grad(&w_t), &state, &scale, tau).unwrap();
        let selected = drelu_rows(WeightMatrixView::of(&w_prev), &scale, tau).unwrap();
        for i in 0..rows {
            let num = fd(|v| { let mut u2 = u.clone(); u2[i] = v; composite(&u2).1 }, u[i], 1e-6);
            prop_assert!(fd_close(got[i], num), "dL/dU[{i}] {} vs {num}", got[i]);
            if !selected[i] {
                prop_assert_eq!(got[i], 0.0);
            }
        }
    }
}

#[test]
fn packed_words_exceed_float_storage_ratio() {
    let w = Tensor::from_fn(&[64, 64, 3, 3], |i| if i % 3 == 0 { 1.0f32 } else { -1.0 });
    let f: PackedBinaryTensor = pack_filters(&w).unwrap();
    assert!((w.len() * 4) as f64 / f.storage_bytes() as f64 >= 16.0);
}
