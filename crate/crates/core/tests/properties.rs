use proptest::prelude::*;

use strsparse::budget::{arch_mobilenetv1, read_budget_csv, report, write_budget_csv};
use strsparse::experiments::transfer::{kept_count, magnitude_mask, magnitude_prune_to_budget};
use strsparse::tensor::{conv2d, relu, sign, Conv2dGeometry};
use strsparse::threshold::{nnz, soft_threshold, sparsity, str_forward};
use strsparse::{Granularity, StrParam, Tensor, ThresholdFn};

fn tensor(shape: &[usize]) -> impl Strategy<Value = Tensor<f64>> {
    let shape = shape.to_vec();
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0..2.0f64, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

/// Multiples of 2^-20 in [-1024, 1024]: every difference is exact in f64.
fn grid() -> impl Strategy<Value = f64> {
    (-(1i64 << 30)..=(1i64 << 30)).prop_map(|i| i as f64 / (1u64 << 20) as f64)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn soft_threshold_shrinks(w in -1e3..1e3f64, a in 0.0..1e3f64) {
        prop_assert!(soft_threshold(w, a).abs() <= w.abs());
    }

    #[test]
    fn soft_threshold_is_1_lipschitz_on_grid(w in grid(), v in grid(), a in grid().prop_map(f64::abs)) {
        prop_assert!((soft_threshold(w, a) - soft_threshold(v, a)).abs() <= (w - v).abs());
    }

    #[test]
    fn soft_threshold_is_1_lipschitz_up_to_rounding(w in -10.0..10.0f64, v in -10.0..10.0f64, a in 0.0..10.0f64) {
        // the two subtractions against alpha round independently
        let ulps = 2.0 * f64::EPSILON * w.abs().max(v.abs());
        prop_assert!((soft_threshold(w, a) - soft_threshold(v, a)).abs() <= (w - v).abs() + ulps);
    }

    #[test]
    fn soft_threshold_boundary_and_identity(w in -1e3..1e3f64) {
        prop_assert_eq!(soft_threshold(w, w.abs()), 0.0);
        prop_assert_eq!(soft_threshold(w, 0.0), w);
    }

    #[test]
    fn sign_abs_and_relu(x in -1e6..1e6f64) {
        prop_assert_eq!(sign(x) * x.abs(), x);
        prop_assert!(relu(x) >= 0.0);
    }

    #[test]
    fn sparsity_monotone_in_s(w in tensor(&[4, 6]), s in prop::collection::vec(-6.0..2.0f64, 4), j in 0usize..4, bump in 0.0..4.0f64) {
        let mut p = StrParam::new(Granularity::PerChannel, w.shape(), 0.0, ThresholdFn::sigmoid(1.0));
        p.s.data_mut().copy_from_slice(&s);
        let before = sparsity(&str_forward(&w, &p).unwrap());
        p.s.data_mut()[j] += bump;
        prop_assert!(sparsity(&str_forward(&w, &p).unwrap()) >= before);
    }

    #[test]
    fn repeated_threshold_shrinks_support(w in tensor(&[3, 5]), s in -4.0..1.0f64) {
        let p = StrParam::new(Granularity::PerLayer, w.shape(), s, ThresholdFn::sigmoid(1.0));
        let once = str_forward(&w, &p).unwrap();
        let twice = str_forward(&once, &p).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!(*b == 0.0 || *a != 0.0);
            prop_assert!(b.abs() <= a.abs());
        }
    }

    #[test]
    fn magnitude_mask_keeps_exactly_k(w in prop::collection::vec(-3.0..3.0f64, 1..60), pct in 0.0..=100.0f64) {
        let t = Tensor::vector(w);
        let k = kept_count(t.len(), pct);
        prop_assert_eq!(magnitude_mask(&t, pct).unwrap().iter().filter(|&&m| m).count(), k);
        let pruned = magnitude_prune_to_budget(&t, pct).unwrap();
        prop_assert!(nnz(&pruned) <= k);
    }

    #[test]
    fn magnitude_mask_scale_invariant(w in prop::collection::vec(-3.0..3.0f64, 1..60), pct in 0.0..=100.0f64, c in 1e-3..1e3f64) {
        let t = Tensor::vector(w);
        prop_assert_eq!(magnitude_mask(&t, pct).unwrap(), magnitude_mask(&t.scale(c), pct).unwrap());
    }

    #[test]
    fn report_is_linear_per_row(pcts in prop::collection::vec(0.0..=100.0f64, 28), i in 0usize..28) {
        let arch = arch_mobilenetv1();
        let mut full = pcts.clone();
        full.push(0.0);
        let base = report(&arch, &full).unwrap();
        full[i] = 100.0 - (100.0 - full[i]) / 2.0;
        let half = report(&arch, &full).unwrap();
        prop_assert!(close(half.rows[i].sparse_flops, base.rows[i].sparse_flops / 2.0, 1e-12));
        let row = &base.rows[i];
        prop_assert!(close(row.sparse_flops, row.dense_flops as f64 * (100.0 - row.sparsity_pct) / 100.0, 1e-15));
    }

    #[test]
    fn budget_csv_round_trips(pcts in prop::collection::vec(0.0..=100.0f64, 28)) {
        let arch = arch_mobilenetv1();
        let mut full = pcts.clone();
        full.push(0.0);
        let rep = report(&arch, &full).unwrap();
        let mut buf = Vec::new();
        write_budget_csv(&rep, &mut buf).unwrap();
        let back = read_budget_csv(std::str::from_utf8(&buf).unwrap(), "mem").unwrap();
        let names: Vec<String> = back.iter().map(|(n, _)| n.clone()).collect();
        let values: Vec<f64> = back.iter().map(|(_, v)| *v).collect();
        prop_assert_eq!(names, arch.names());
        prop_assert_eq!(values, full);
    }

    #[test]
    fn matmul_associative(
        (a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(m, k, l, n)| (tensor(&[m, k]), tensor(&[k, l]), tensor(&[l, n])))
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = a.max_abs() * b.max_abs() * c.max_abs() * 25.0;
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * scale.max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn conv2d_matches_nested_loops(
        (x, k, stride, padding) in (1usize..5, 1usize..9, 1usize..5, 1usize..4, 1usize..3, 0usize..2)
            .prop_filter("kernel fits", |&(_, hw, _, kk, _, pad)| kk <= hw + 2 * pad)
            .prop_flat_map(|(cin, hw, cout, kk, stride, pad)| (tensor(&[cin, hw, hw]), tensor(&[cout, cin, kk, kk]), Just(stride), Just(pad)))
    ) {
        let got = conv2d(&x, &k, Conv2dGeometry::new(stride, padding, 1)).unwrap();
        let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        prop_assert_eq!(got.shape(), &[cout, oh, ow][..]);
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for p in 0..kh {
                            for q in 0..kw {
                                let (r, s) = ((i * stride + p) as isize - padding as isize, (j * stride + q) as isize - padding as isize);
                                if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < w {
                                    acc += x.data()[(c * h + r as usize) * w + s as usize] * k.data()[((o * cin + c) * kh + p) * kw + q];
                                }
                            }
                        }
                    }
                    let v = got.data()[(o * oh + i) * ow + j];
                    prop_assert!((v - acc).abs() <= 1e-12 * acc.abs().max(1.0), "{} vs {}", v, acc);
                }
            }
        }
    }
}

#[test]
fn magnitude_prune_tie_rule() {
    let w = Tensor::vector(vec![3.0, -1.0, 2.0, -2.0]);
    assert_eq!(magnitude_prune_to_budget(&w, 50.0).unwrap().data(), &[3.0, 0.0, 2.0, 0.0]);
    assert_eq!(magnitude_prune_to_budget(&w, 0.0).unwrap(), w);
    assert_eq!(nnz(&magnitude_prune_to_budget(&w, 100.0).unwrap()), 0);
}
