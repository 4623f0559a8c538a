//! Minimal dense-tensor computation: f32 kernels, a reverse-mode tape,
//! named parameter storage with AdamW, and a binary checkpoint format.

pub mod checkpoint;
pub mod kernels;
pub mod params;
pub mod tape;

pub use params::{AdamConfig, Param, ParamStore};
pub use tape::{OpKind, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_uniform() {
        let mut t = Tape::new();
        let x = t.constant(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = t.softmax(x);
        for &v in t.value(y) {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn layer_norm_constant_input() {
        let mut t = Tape::new();
        let x = t.constant(&[3], vec![5.0, 5.0, 5.0]).unwrap();
        let y = t.layer_norm(x);
        for &v in t.value(y) {
            assert!(v.abs() < 1e-3, "constant rows normalize to ~0, got {v}");
        }
    }

    #[test]
    fn matmul_shapes() {
        let mut t = Tape::new();
        let a = t.constant(&[2, 3], vec![1.0; 6]).unwrap();
        let b = t.constant(&[3, 4], vec![1.0; 12]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 4]);
        assert!(t.value(c).iter().all(|&v| (v - 3.0).abs() < 1e-6));

        let bad = t.constant(&[4, 4], vec![0.0; 16]).unwrap();
        let err = t.matmul(a, bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let uniform = t.constant(&[4], vec![1.0; 4]).unwrap();
        let l = t.cross_entropy_single(uniform, 2).unwrap();
        assert_relative_eq!(t.value(l)[0], 4.0f32.ln(), epsilon = 1e-5);

        let peaked = t.constant(&[2], vec![10.0, -10.0]).unwrap();
        let l2 = t.cross_entropy_single(peaked, 0).unwrap();
        assert!(t.value(l2)[0] < 1e-6);

        // random logits vs an independent log-sum-exp evaluation
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits: Vec<f32> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let target = 4;
        let lse = {
            let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            m + logits.iter().map(|v| (v - m).exp()).sum::<f32>().ln()
        };
        let expected = lse - logits[target];
        let lv = t.constant(&[7], logits).unwrap();
        let l3 = t.cross_entropy_single(lv, target).unwrap();
        assert_relative_eq!(t.value(l3)[0], expected, epsilon = 1e-5);

        let out_of_range = t.cross_entropy_single(lv, 9);
        assert!(out_of_range.is_err());
    }

    #[test]
    fn binary_cross_entropy_values() {
        let mut t = Tape::new();
        let p = t.constant(&[1], vec![0.5]).unwrap();
        let l = t.binary_cross_entropy(p, &[1.0], &[1.0]).unwrap();
        assert_relative_eq!(t.value(l)[0], std::f32::consts::LN_2, epsilon = 1e-5);

        let p1 = t.constant(&[1], vec![0.999_999]).unwrap();
        let l1 = t.binary_cross_entropy(p1, &[1.0], &[1.0]).unwrap();
        assert!(t.value(l1)[0] < 1e-4);

        let p9 = t.constant(&[1], vec![0.9]).unwrap();
        let l9 = t.binary_cross_entropy(p9, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(t.value(l9)[0], -(0.1f32.ln()), epsilon = 1e-4);
    }

    #[test]
    fn backward_quadratic() {
        let mut t = Tape::new();
        let x = t.leaf(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        t.backward(loss).unwrap();
        let g = t.grad(x).unwrap();
        assert_eq!(g, &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_relu_dead_zone() {
        let mut t = Tape::new();
        let x = t.leaf(&[3], vec![-1.0, -0.5, 2.0], true).unwrap();
        let r = t.relu(x);
        let loss = t.sum_all(r);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_non_scalar_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(&[2], vec![1.0, 2.0], true).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn backward_accumulates_on_repeat() {
        let mut t = Tape::new();
        let x = t.leaf(&[2], vec![1.0, 2.0], true).unwrap();
        let s = t.sum_all(x);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0]);
    }

    /// Central finite differences on a random 3-op graph.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eval = |xv: &[f32]| -> f32 {
            let mut t = Tape::new();
            let x = t.leaf(&[2, 3], xv.to_vec(), false).unwrap();
            let wv = t.constant(&[3, 2], w.clone()).unwrap();
            let mm = t.matmul(x, wv).unwrap();
            let r = t.relu(mm);
            let l = t.mean_all(r);
            t.value(l)[0]
        };
        let mut t = Tape::new();
        let x = t.leaf(&[2, 3], base.clone(), true).unwrap();
        let wv = t.constant(&[3, 2], w.clone()).unwrap();
        let mm = t.matmul(x, wv).unwrap();
        let r = t.relu(mm);
        let l = t.mean_all(r);
        t.backward(l).unwrap();
        let grad = t.grad(x).unwrap().to_vec();
        let h = 1e-3;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-3 * fd.abs().max(grad[i].abs()).max(1e-2),
                "element {i}: fd {fd} vs ad {}",
                grad[i]
            );
        }
    }

    #[test]
    fn adam_zero_grad_no_motion() {
        let mut s = ParamStore::new();
        s.insert("p", &[2], vec![1.0, -1.0]);
        s.adam_step(&AdamConfig { weight_decay: 0.0, ..Default::default() });
        let p = s.get("p").unwrap();
        assert_eq!(p.value, vec![1.0, -1.0]);
    }

    #[test]
    fn adam_first_step_size() {
        let mut s = ParamStore::new();
        s.insert("p", &[1], vec![1.0]);
        s.get_mut("p").unwrap().grad[0] = 1.0;
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        s.adam_step(&cfg);
        // first bias-corrected step is ~lr for unit gradient
        let p = s.get("p").unwrap().value[0];
        assert_relative_eq!(p, 1.0 - 0.1, epsilon = 1e-3);
    }

    #[test]
    fn adam_descends_quadratic() {
        // loss = p^2, grad = 2p; |p| strictly decreasing for 10 steps
        let mut s = ParamStore::new();
        s.insert("p", &[1], vec![1.0]);
        let cfg = AdamConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() };
        let mut prev = 1.0f32;
        for _ in 0..10 {
            let p = s.get("p").unwrap().value[0];
            s.get_mut("p").unwrap().grad[0] = 2.0 * p;
            s.adam_step(&cfg);
            let now = s.get("p").unwrap().value[0].abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = ParamStore::new();
        s.insert_normal("decoder.block0.w", &[4, 5], 0.3, &mut rng);
        s.insert_normal("token_head.w", &[5], 1.0, &mut rng);
        s.insert("odd.bits", &[3], vec![f32::MIN_POSITIVE, -0.0, 1.5e-40]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fssc");
        checkpoint::save(&s, &path).unwrap();
        let loaded = checkpoint::load(&path).unwrap();
        for (name, p) in s.iter() {
            let q = loaded.get(name).unwrap();
            assert_eq!(p.shape, q.shape);
            assert_eq!(
                p.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                q.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn attention_causality() {
        // changing a later key/value must not affect earlier query outputs
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 8;
        let l = 4;
        let x: Vec<f32> = (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let run = |x: &[f32]| {
            let mut t = Tape::new();
            let q = t.constant(&[l, d], x.to_vec()).unwrap();
            let out = t.attention(q, q, q, 2, true, 0).unwrap();
            t.value(out).to_vec()
        };
        let base = run(&x);
        let mut perturbed = x.clone();
        for v in &mut perturbed[(l - 1) * d..] {
            *v += 1.0;
        }
        let after = run(&perturbed);
        assert_eq!(&base[..(l - 1) * d], &after[..(l - 1) * d]);
    }
}
