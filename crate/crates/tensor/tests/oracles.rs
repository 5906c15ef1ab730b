//! Forward results against direct nested-loop implementations.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sgdvit_tensor::{AxisPlan, ResamplePlan, Tape, Tensor};

fn random(shape: &[usize], rng: &mut Xoshiro256PlusPlus) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize, d: usize) -> (Vec<usize>, Vec<f64>) {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = (h + 2 * p - d * (kh - 1) - 1) / s + 1;
    let ow = (wd + 2 * p - d * (kw - 1) - 1) / s + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky * d) as isize - p as isize;
                                let ix = (ox * s + kx * d) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[ni, ci, iy as usize, ix as usize]) * w.at(&[co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![n, cout, oh, ow], out)
}

/// Scatter form: every input pixel stamps the kernel onto the output.
fn naive_conv_transpose(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> (Vec<usize>, Vec<f64>) {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
    let oh = (h - 1) * s + kh - 2 * p;
    let ow = (wd - 1) * s + kw - 2 * p;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    for co in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * s + ky) as isize - p as isize;
                                let ox = (ix * s + kx) as isize - p as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    out[((ni * cout + co) * oh + oy as usize) * ow + ox as usize] +=
                                        x.at(&[ni, ci, iy, ix]) * w.at(&[ci, co, ky, kx]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (vec![n, cout, oh, ow], out)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_loops(
        cin in 1usize..4, cout in 1usize..4, h in 3usize..9, w in 3usize..9, k in 1usize..4,
        s in 1usize..3, p in 0usize..3, d in 1usize..3, seed in any::<u64>(),
    ) {
        prop_assume!(h + 2 * p > d * (k - 1) && w + 2 * p > d * (k - 1));
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let x = random(&[2, cin, h, w], &mut rng);
        let wt = random(&[cout, cin, k, k], &mut rng);
        let b = random(&[cout], &mut rng);
        let (shape, want) = naive_conv(&x, &wt, b.data(), s, p, d);
        let mut t = Tape::<f64>::new();
        let (xv, wv, bv) = (t.constant(x), t.constant(wt), t.constant(b));
        let y = t.conv2d(xv, wv, Some(bv), s, p, d).unwrap();
        prop_assert_eq!(t.shape(y), &shape[..]);
        prop_assert!(max_diff(t.data(y), &want) < 1e-12);
    }

    #[test]
    fn conv_transpose2d_matches_scatter(
        cin in 1usize..4, cout in 1usize..4, h in 2usize..7, k in 1usize..5, s in 1usize..3, p in 0usize..2, seed in any::<u64>(),
    ) {
        prop_assume!(2 * p < k + (h - 1) * s);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let x = random(&[1, cin, h, h + 1], &mut rng);
        let wt = random(&[cin, cout, k, k], &mut rng);
        let (shape, want) = naive_conv_transpose(&x, &wt, s, p);
        let mut t = Tape::<f64>::new();
        let (xv, wv) = (t.constant(x), t.constant(wt));
        let y = t.conv_transpose2d(xv, wv, None, s, p, 1).unwrap();
        prop_assert_eq!(t.shape(y), &shape[..]);
        prop_assert!(max_diff(t.data(y), &want) < 1e-12);
    }

    #[test]
    fn xcorr_matches_loops(c in 1usize..4, h in 2usize..9, tk in 1usize..4, seed in any::<u64>()) {
        prop_assume!(tk <= h);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let s = random(&[1, c, h, h + 2], &mut rng);
        let z = random(&[1, c, tk, tk], &mut rng);
        let (oh, ow) = (h - tk + 1, h + 2 - tk + 1);
        let mut want = vec![0.0; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..tk {
                        for kx in 0..tk {
                            acc += s.at(&[0, ci, oy + ky, ox + kx]) * z.at(&[0, ci, ky, kx]);
                        }
                    }
                    want[(ci * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let mut t = Tape::<f64>::new();
        let (sv, zv) = (t.constant(s), t.constant(z));
        let y = t.xcorr_depthwise(sv, zv).unwrap();
        prop_assert_eq!(t.shape(y), &[1, c, oh, ow][..]);
        prop_assert!(max_diff(t.data(y), &want) < 1e-12);
    }

    #[test]
    fn max_pool_matches_loops(c in 1usize..3, h in 3usize..12, k in 1usize..4, s in 1usize..3, seed in any::<u64>()) {
        prop_assume!(k <= h);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let x = random(&[1, c, h, h], &mut rng);
        let o = (h - k) / s + 1;
        let mut want = vec![f64::NEG_INFINITY; c * o * o];
        for ci in 0..c {
            for oy in 0..o {
                for ox in 0..o {
                    for ky in 0..k {
                        for kx in 0..k {
                            let v = x.at(&[0, ci, oy * s + ky, ox * s + kx]);
                            let slot = &mut want[(ci * o + oy) * o + ox];
                            *slot = slot.max(v);
                        }
                    }
                }
            }
        }
        let mut t = Tape::<f64>::new();
        let xv = t.constant(x);
        let y = t.max_pool2d(xv, k, s).unwrap();
        prop_assert_eq!(t.data(y), &want[..]);
    }

    #[test]
    fn resample_reproduces_affine_ramps(h in 2usize..10, w in 2usize..10, oh in 1usize..12, ow in 1usize..12,
                                        fy in 0.0f64..1.0, fx in 0.0f64..1.0) {
        // bilinear interpolation is exact on functions affine in each axis
        let f = |y: f64, x: f64| 0.5 + 2.0 * y - 0.75 * x + 0.1 * x * y;
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.push(f(y as f64, x as f64));
            }
        }
        let (y0, y1) = (fy * (h - 1) as f64, (h - 1) as f64 * (1.0 - fy * 0.5));
        let (x0, x1) = (fx * (w - 1) as f64, (w - 1) as f64);
        let plan = ResamplePlan {
            y: AxisPlan::new(h, oh, y0, y1).unwrap(),
            x: AxisPlan::new(w, ow, x0, x1).unwrap(),
        };
        let mut t = Tape::<f64>::new();
        let v = t.constant(Tensor::new([1, 1, h, w], data).unwrap());
        let r = t.resample(v, plan).unwrap();
        let pos = |i: usize, n: usize, a: f64, b: f64| if n == 1 { 0.5 * (a + b) } else { a + (b - a) * i as f64 / (n - 1) as f64 };
        for i in 0..oh {
            for j in 0..ow {
                let want = f(pos(i, oh, y0, y1), pos(j, ow, x0, x1));
                prop_assert!((t.data(r)[i * ow + j] - want).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn resize_keeps_corners() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = t.resize_bilinear(x, 3, 3).unwrap();
    assert_eq!(t.data(y), &[1.0, 1.5, 2.0, 2.0, 2.5, 3.0, 3.0, 3.5, 4.0]);
}
