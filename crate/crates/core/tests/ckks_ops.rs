use std::sync::{Arc, OnceLock};

use ciphertune::ckks::keys::{decrypt_coefficients, power_of_two_steps};
use ciphertune::ckks::serial;
use ciphertune::ckks::{decrypt_values, encrypt_values, keygen, CkksContext, Evaluator, PublicKey, SecretKey};
use ciphertune::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Fixture {
    ctx: Arc<CkksContext>,
    sk: SecretKey,
    pk: PublicKey,
    eval: Evaluator,
}

fn toy() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let ctx = Arc::new(CkksContext::from_preset("toy").unwrap());
        let (sk, pk, evk) = keygen(&ctx, 7);
        let eval = Evaluator::new(ctx.clone(), Arc::new(evk));
        Fixture { ctx, sk, pk, eval }
    })
}

fn random_vec(rng: &mut ChaCha20Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn roundtrip_at_every_level() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for level in 0..=f.ctx.max_level() {
        let v = random_vec(&mut rng, f.ctx.slots(), 1.0);
        let ct = encrypt_values(&f.ctx, &f.pk, &v, level, &mut rng).unwrap();
        assert!(max_err(&decrypt_values(&f.ctx, &f.sk, &ct), &v) < 1e-6);
    }
}

#[test]
fn encrypt_zero_noise_is_small() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let ct = encrypt_values(&f.ctx, &f.pk, &[], f.ctx.max_level(), &mut rng).unwrap();
    let coeffs = decrypt_coefficients(&f.ctx, &f.sk, &ct);
    let bound = 6.0 * 3.2 * (f.ctx.ring_degree() as f64) * 4.0;
    assert!(coeffs.iter().all(|&c| (c as f64).abs() < bound));
}

#[test]
fn add_sub_mult_square() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let n = f.ctx.slots();
    let l = f.ctx.max_level();
    let a = random_vec(&mut rng, n, 2.0);
    let b = random_vec(&mut rng, n, 2.0);
    let ca = encrypt_values(&f.ctx, &f.pk, &a, l, &mut rng).unwrap();
    let cb = encrypt_values(&f.ctx, &f.pk, &b, l, &mut rng).unwrap();
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let sq: Vec<f64> = a.iter().map(|x| x * x).collect();
    assert!(max_err(&decrypt_values(&f.ctx, &f.sk, &f.eval.add(&ca, &cb).unwrap()), &sum) < 1e-6);
    assert!(max_err(&decrypt_values(&f.ctx, &f.sk, &f.eval.sub(&ca, &cb).unwrap()), &diff) < 1e-6);
    let m = f.eval.mult(&ca, &cb).unwrap();
    assert_eq!(m.level, l - 1);
    assert_eq!(m.scale, f.ctx.canonical_scale(l - 1));
    assert!(max_err(&decrypt_values(&f.ctx, &f.sk, &m), &prod) < 1e-5);
    assert!(max_err(&decrypt_values(&f.ctx, &f.sk, &f.eval.square(&ca).unwrap()), &sq) < 1e-5);
    // mixed levels align implicitly
    let mixed = f.eval.add(&m, &ca).unwrap();
    let want: Vec<f64> = prod.iter().zip(&a).map(|(x, y)| x + y).collect();
    assert_eq!(mixed.level, l - 1);
    assert!(max_err(&decrypt_values(&f.ctx, &f.sk, &mixed), &want) < 1e-5);
}

#[test]
fn constants_and_plaintexts() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let n = f.ctx.slots();
    let a = random_vec(&mut rng, n, 1.0);
    let p = random_vec(&mut rng, n, 1.0);
    let ca = encrypt_values(&f.ctx, &f.pk, &a, 3, &mut rng).unwrap();
    let check = |ct: &ciphertune::Ciphertext, want: Vec<f64>| {
        assert!(max_err(&decrypt_values(&f.ctx, &f.sk, ct), &want) < 1e-6)
    };
    check(&f.eval.add_const(&ca, 0.75), a.iter().map(|x| x + 0.75).collect());
    check(&f.eval.mult_const(&ca, -1.5).unwrap(), a.iter().map(|x| -1.5 * x).collect());
    check(&f.eval.mult_integer(&ca, 3), a.iter().map(|x| 3.0 * x).collect());
    check(&f.eval.negate(&ca), a.iter().map(|x| -x).collect());
    check(&f.eval.add_plain(&ca, &p).unwrap(), a.iter().zip(&p).map(|(x, y)| x + y).collect());
    let mp = f.eval.mult_plain(&ca, &p).unwrap();
    assert_eq!(mp.scale, f.ctx.canonical_scale(2));
    check(&mp, a.iter().zip(&p).map(|(x, y)| x * y).collect());
}

#[test]
fn rotations_are_exact_permutations() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let n = f.ctx.slots();
    let v = random_vec(&mut rng, n, 1.0);
    let ct = encrypt_values(&f.ctx, &f.pk, &v, 2, &mut rng).unwrap();
    for step in [1i64, -1, 2, 3, 7, -5, 100, -129, n as i64 - 1, n as i64] {
        let r = f.eval.rotate(&ct, step).unwrap();
        let want: Vec<f64> = (0..n).map(|i| v[(i as i64 + step).rem_euclid(n as i64) as usize]).collect();
        assert!(max_err(&decrypt_values(&f.ctx, &f.sk, &r), &want) < 1e-6, "step {step}");
    }
    let steps = [1i64, 4, -8, 6];
    let many = f.eval.rotate_many(&ct, &steps).unwrap();
    for (r, &step) in many.iter().zip(&steps) {
        let want: Vec<f64> = (0..n).map(|i| v[(i as i64 + step).rem_euclid(n as i64) as usize]).collect();
        assert!(max_err(&decrypt_values(&f.ctx, &f.sk, r), &want) < 1e-6);
    }
}

#[test]
fn depth_exhaustion_is_reported() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let ct = encrypt_values(&f.ctx, &f.pk, &[0.5], 0, &mut rng).unwrap();
    assert!(matches!(f.eval.mult(&ct, &ct), Err(Error::DepthExhausted { .. })));
    assert!(matches!(f.eval.mult_const(&ct, 2.0), Err(Error::DepthExhausted { .. })));
    assert!(matches!(f.eval.rescale(&ct), Err(Error::DepthExhausted { .. })));
}

#[test]
fn missing_rotation_key_is_an_error() {
    let f = toy();
    let mut keys = (**f.eval.keys()).clone();
    assert!(keys.remove_rotation(f.ctx.galois_element(1)).is_some());
    let stripped = Evaluator::new(f.ctx.clone(), Arc::new(keys));
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let ct = encrypt_values(&f.ctx, &f.pk, &[1.0], 1, &mut rng).unwrap();
    assert!(matches!(stripped.rotate(&ct, 1), Err(Error::MissingRotationKey(1))));
    assert!(!stripped.can_rotate(1));
    assert!(stripped.rotate(&ct, 2).is_ok());
}

#[test]
fn keys_cover_power_of_two_steps() {
    let f = toy();
    for step in power_of_two_steps(f.ctx.slots()) {
        assert!(f.eval.keys().rotation_key(f.ctx.galois_element(step)).is_some());
    }
}

#[test]
fn keygen_is_deterministic() {
    let ctx = CkksContext::from_preset("toy").unwrap();
    let (sk1, pk1, ev1) = keygen(&ctx, 11);
    let (sk2, pk2, ev2) = keygen(&ctx, 11);
    assert_eq!(sk1, sk2);
    assert_eq!(pk1, pk2);
    assert_eq!(serial::eval_keys_to_bytes(&ctx, &ev1), serial::eval_keys_to_bytes(&ctx, &ev2));
    let (sk3, _, _) = keygen(&ctx, 12);
    assert_ne!(sk1, sk3);
}

#[test]
fn serialization_roundtrips_and_checks_digest() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let ct = encrypt_values(&f.ctx, &f.pk, &[1.0, 2.0], 2, &mut rng).unwrap();
    let bytes = serial::ciphertext_to_bytes(&f.ctx, &ct);
    assert_eq!(serial::ciphertext_from_bytes(&f.ctx, &bytes).unwrap(), ct);
    let sk_bytes = serial::secret_key_to_bytes(&f.ctx, &f.sk);
    assert_eq!(serial::secret_key_from_bytes(&f.ctx, &sk_bytes).unwrap(), f.sk);
    let pk_bytes = serial::public_key_to_bytes(&f.ctx, &f.pk);
    assert_eq!(serial::public_key_from_bytes(&f.ctx, &pk_bytes).unwrap(), f.pk);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(serial::ciphertext_from_bytes(&f.ctx, &bad), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(
        serial::ciphertext_from_bytes(&f.ctx, &bytes[..bytes.len() - 3]),
        Err(Error::Format { .. })
    ));
    let mut other = f.ctx.params().clone();
    other.security_label = "other".into();
    let other = CkksContext::new(other).unwrap();
    assert!(matches!(serial::ciphertext_from_bytes(&other, &bytes), Err(Error::DigestMismatch)));
}
