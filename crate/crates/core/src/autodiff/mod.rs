//! Tape-based reverse-mode differentiation and the Adam optimizer.

mod params;
mod sparse;
mod tape;

pub use params::{AdamConfig, ParamId, ParamStore};
pub use sparse::CsrMatrix;
pub use tape::{BatchStats, Tape, Var};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Result;
    use crate::tensor::{DenseTensor, LowRankSpec, Structure};

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let n = shape.iter().product();
        DenseTensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn loss_of(store: &ParamStore, f: &dyn Fn(&mut Tape, &ParamStore) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let l = f(&mut tape, store).unwrap();
        tape.value(l).data()[0]
    }

    /// Compares tape gradients with central differences on every coordinate.
    fn check(store: &mut ParamStore, f: &dyn Fn(&mut Tape, &ParamStore) -> Result<Var>) {
        let mut tape = Tape::new();
        let l = f(&mut tape, store).unwrap();
        store.zero_grads();
        tape.backward(l, store).unwrap();
        let h = 1e-5;
        let mut checked = 0;
        for id in store.clone().ids() {
            for i in 0..store.value(id).len() {
                let orig = store.value(id).data()[i];
                store.value_mut(id).data_mut()[i] = orig + h;
                let up = loss_of(store, f);
                store.value_mut(id).data_mut()[i] = orig - h;
                let down = loss_of(store, f);
                store.value_mut(id).data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = store.grad(id).data()[i];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-5 * fd.abs().max(an.abs()),
                    "{}[{i}]: analytic {an} vs numeric {fd}",
                    store.name(id)
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    /// Random weighted sum of a tensor, so every output coordinate matters.
    fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = random(tape.shape(v), &mut rng);
        let p = tape.mul_const(v, mask)?;
        Ok(tape.sum(p))
    }

    fn store_with(entries: &[(&str, &[usize])], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape) in entries {
            s.add(*name, random(shape, &mut rng)).unwrap();
        }
        s
    }

    #[test]
    fn quadratic_gradient_is_twice_param() {
        let mut s = store_with(&[("w", &[3])], 1);
        let id = s.id("w").unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&s, id);
        let l = tape.tensordot(w, w, &[0], &[0]).unwrap();
        tape.backward(l, &mut s).unwrap();
        let expected = s.value(id).scale(2.0);
        assert_eq!(s.grad(id), &expected);
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let mut s = store_with(&[("a", &[2]), ("b", &[2])], 2);
        let (a, b) = (s.id("a").unwrap(), s.id("b").unwrap());
        let mut tape = Tape::new();
        let va = tape.param(&s, a);
        let l = tape.sum(va);
        tape.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(b).data(), &[0.0, 0.0]);
        assert_eq!(s.grad(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut s = store_with(&[("a", &[2])], 3);
        let mut tape = Tape::new();
        let a = tape.param(&s, s.id("a").unwrap());
        assert!(matches!(tape.backward(a, &mut s), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut s = store_with(&[("a", &[2])], 4);
        let id = s.id("a").unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&s, id);
        let d = tape.detach(a);
        let l = tape.sum(d);
        tape.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_matmul_variants_and_bias() {
        let mut s = store_with(&[("a", &[3, 4]), ("b", &[4, 2]), ("c", &[5, 4]), ("bias", &[2])], 5);
        check(&mut s, &|t, s| {
            let (a, b, c, bias) = (
                t.param(s, s.id("a").unwrap()),
                t.param(s, s.id("b").unwrap()),
                t.param(s, s.id("c").unwrap()),
                t.param(s, s.id("bias").unwrap()),
            );
            let ab = t.matmul(a, b)?;
            let ab = t.add_trailing(ab, bias)?;
            let ac = t.matmul_nt(a, c)?;
            let x = project(t, ab, 1)?;
            let y = project(t, ac, 2)?;
            t.add(x, y)
        });
    }

    #[test]
    fn grad_tensordot_permute_reshape() {
        let mut s = store_with(&[("a", &[2, 3, 4]), ("b", &[4, 2, 3])], 6);
        check(&mut s, &|t, s| {
            let (a, b) = (t.param(s, s.id("a").unwrap()), t.param(s, s.id("b").unwrap()));
            let c = t.tensordot(a, b, &[2, 1], &[0, 2])?;
            let c = t.permute(c, &[1, 0])?;
            let c = t.reshape(c, &[4])?;
            project(t, c, 3)
        });
    }

    #[test]
    fn grad_low_rank_contractions() {
        for (k, structure) in [Structure::Dense, Structure::Tucker, Structure::Cp, Structure::Tt].into_iter().enumerate() {
            let spec = LowRankSpec::new(structure, &[2, 3], &[3, 2], None).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7 + k as u64);
            let mut s = ParamStore::new();
            let names = spec.factor_names();
            for (name, f) in names.iter().zip(spec.init_factors(&mut rng)) {
                s.add(name.clone(), f.scale(2.0)).unwrap();
            }
            s.add("x", random(&[2, 2, 3], &mut rng)).unwrap();
            check(&mut s, &|t, s| {
                let factors: Vec<Var> = names.iter().map(|n| t.param(s, s.id(n).unwrap())).collect();
                let x = t.param(s, s.id("x").unwrap());
                let y = spec.contract(t, &factors, &x)?;
                project(t, y, 4)
            });
        }
    }

    #[test]
    fn grad_relu_away_from_zero() {
        let mut s = ParamStore::new();
        s.add("x", DenseTensor::from_vec(vec![4], vec![-1.0, 0.5, 2.0, -0.3]).unwrap()).unwrap();
        check(&mut s, &|t, s| {
            let x = t.param(s, s.id("x").unwrap());
            let r = t.relu(x);
            project(t, r, 5)
        });
    }

    #[test]
    fn grad_spmm_scale_concat() {
        let mut s = store_with(&[("x", &[3, 2]), ("eps", &[1]), ("v", &[4])], 8);
        let m = Arc::new(CsrMatrix::from_triplets(2, 3, vec![(0, 0, 0.5), (0, 2, 0.5), (1, 1, 1.0)]).unwrap());
        check(&mut s, &|t, s| {
            let x = t.param(s, s.id("x").unwrap());
            let eps = t.param(s, s.id("eps").unwrap());
            let v = t.param(s, s.id("v").unwrap());
            let y = t.spmm(m.clone(), x)?;
            let z = t.scale_by(y, eps)?;
            let w = t.concat_cols(&[y, z])?;
            let w = t.scale_last_axis(w, v)?;
            let w = t.scale(w, 0.7);
            project(t, w, 6)
        });
    }

    #[test]
    fn grad_khatri_rao() {
        let mut s = store_with(&[("u", &[2, 3]), ("v", &[3, 3]), ("w", &[2, 3])], 9);
        check(&mut s, &|t, s| {
            let mats: Vec<Var> = ["u", "v", "w"].iter().map(|n| t.param(s, s.id(n).unwrap())).collect();
            let k = t.khatri_rao(&mats)?;
            project(t, k, 7)
        });
    }

    #[test]
    fn grad_conv_and_pools() {
        // Random continuous inputs make pooling maxima unique.
        let mut s = store_with(&[("x", &[2, 2, 5, 4]), ("w", &[3, 2, 3, 3]), ("b", &[3])], 10);
        check(&mut s, &|t, s| {
            let x = t.param(s, s.id("x").unwrap());
            let w = t.param(s, s.id("w").unwrap());
            let b = t.param(s, s.id("b").unwrap());
            let y = t.conv2d(x, w, b, 1)?;
            let p = t.max_pool2d(y, 2)?;
            let m = t.max_over_axis(p, 1)?;
            project(t, m, 8)
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x, w, b) = (random(&[1, 2, 4, 3], &mut rng), random(&[2, 2, 3, 3], &mut rng), random(&[2], &mut rng));
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
        let y = t.conv2d(xv, wv, bv, 1).unwrap();
        let y = t.value(y);
        assert_eq!(y.shape(), &[1, 2, 4, 3]);
        for o in 0..2 {
            for r in 0..4i64 {
                for c in 0..3i64 {
                    let mut acc = b.data()[o];
                    for ci in 0..2 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (iy, ix) = (r + ky - 1, c + kx - 1);
                                if (0..4).contains(&iy) && (0..3).contains(&ix) {
                                    acc += w.data()[((o * 2 + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.data()[(ci * 4 + iy as usize) * 3 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data()[(o * 4 + r as usize) * 3 + c as usize] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grad_batch_norm_training_mode() {
        let mut s = store_with(&[("x", &[5, 3]), ("gamma", &[3]), ("beta", &[3])], 11);
        check(&mut s, &|t, s| {
            let x = t.param(s, s.id("x").unwrap());
            let g = t.param(s, s.id("gamma").unwrap());
            let b = t.param(s, s.id("beta").unwrap());
            let (y, _) = t.batch_norm(x, g, b, 1e-5)?;
            project(t, y, 9)
        });
    }

    #[test]
    fn grad_weighted_cross_entropy() {
        let mut s = store_with(&[("z", &[4, 3])], 12);
        check(&mut s, &|t, s| {
            let z = t.param(s, s.id("z").unwrap());
            t.softmax_cross_entropy(z, &[0, 2, 1, 2], &[1.0, 0.0, 0.5, 2.0], 3.0)
        });
    }

    #[test]
    fn uniform_logits_cost_ln_two() {
        let mut t = Tape::new();
        let z = t.constant(DenseTensor::zeros(&[3, 2]));
        let l = t.softmax_cross_entropy(z, &[0, 1, 1], &[1.0; 3], 3.0).unwrap();
        assert!((t.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(t.softmax_cross_entropy(z, &[0, 2, 1], &[1.0; 3], 3.0).is_err());
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut s = store_with(&[("a", &[3, 3])], 13);
        let id = s.id("a").unwrap();
        let part = |s: &mut ParamStore, which: u8| {
            let mut t = Tape::new();
            let a = t.param(s, id);
            let r = t.relu(a);
            let x = project(&mut t, r, 1).unwrap();
            let y = project(&mut t, a, 2).unwrap();
            let l = match which {
                0 => x,
                1 => y,
                _ => t.add(x, y).unwrap(),
            };
            s.zero_grads();
            t.backward(l, s).unwrap();
            s.grad(id).clone()
        };
        let gx = part(&mut s, 0);
        let gy = part(&mut s, 1);
        let gsum = part(&mut s, 2);
        for ((a, b), c) in gx.data().iter().zip(gy.data()).zip(gsum.data()) {
            assert!((a + b - c).abs() < 1e-14);
        }
    }

    #[test]
    fn frozen_tape_records_no_gradients() {
        let mut s = store_with(&[("a", &[2])], 14);
        let id = s.id("a").unwrap();
        let mut t = Tape::frozen();
        let a = t.param(&s, id);
        let l = t.sum(a);
        t.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(id).data(), &[0.0, 0.0]);
    }
}
