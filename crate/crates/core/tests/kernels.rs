use std::sync::{Arc, OnceLock};

use ciphertune::ckks::{keygen, keygen_with_steps, CkksContext, Evaluator, PublicKey, SecretKey};
use ciphertune::linalg::*;
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
        let (sk, pk, evk) = keygen(&ctx, 3);
        let eval = Evaluator::new(ctx.clone(), Arc::new(evk));
        Fixture { ctx, sk, pk, eval }
    })
}

/// Toy keys with a dedicated key for every rotation step.
fn toy_full() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let ctx = Arc::new(CkksContext::from_preset("toy").unwrap());
        let steps: Vec<i64> = (1..ctx.slots() as i64).collect();
        let (sk, pk, evk) = keygen_with_steps(&ctx, 3, &steps);
        let eval = Evaluator::new(ctx.clone(), Arc::new(evk));
        Fixture { ctx, sk, pk, eval }
    })
}

fn random(rng: &mut ChaCha20Rng, r: usize, c: usize) -> PlainMatrix {
    PlainMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn check_abt(f: &Fixture, m: usize, k: usize, d: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let a = random(&mut rng, m, d);
    let b = random(&mut rng, k, d);
    let stride = TileLayout::stride_for(&[d, k]);
    let level = MATMUL_DEPTH;
    let ea = encrypt_matrix(&f.ctx, &f.pk, &a, stride, level, &mut rng).unwrap();
    let eb = encrypt_matrix(&f.ctx, &f.pk, &b, stride, level, &mut rng).unwrap();
    let c = matmul_abt(&f.eval, &ea, &eb, &mut NoRefresh).unwrap();
    decrypt_matrix(&f.ctx, &f.sk, &c).max_abs_diff(&a.matmul_abt(&b).unwrap()).unwrap()
}

fn check_atb(f: &Fixture, m: usize, k: usize, d: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dm = random(&mut rng, m, k);
    let x = random(&mut rng, m, d);
    let stride = TileLayout::stride_for(&[d, k]);
    let level = MATMUL_DEPTH;
    let ed = encrypt_matrix(&f.ctx, &f.pk, &dm, stride, level, &mut rng).unwrap();
    let ex = encrypt_matrix(&f.ctx, &f.pk, &x, stride, level, &mut rng).unwrap();
    let c = matmul_atb(&f.eval, &ed, &ex, &mut NoRefresh).unwrap();
    decrypt_matrix(&f.ctx, &f.sk, &c).max_abs_diff(&dm.matmul_atb(&x).unwrap()).unwrap()
}

#[test]
fn abt_and_atb_small_shapes() {
    for f in [toy(), toy_full()] {
        for (m, k, d) in [(1, 1, 1), (3, 2, 5), (16, 16, 16), (7, 3, 16), (16, 1, 9), (2, 9, 3)] {
            assert!(check_abt(f, m, k, d, 1) < 1e-3, "abt {m} {k} {d}");
            assert!(check_atb(f, m, k, d, 1) < 1e-3, "atb {m} {k} {d}");
        }
    }
}

#[test]
fn multi_tile_products() {
    // stride 16 on 256 slots: 16 rows per tile, so 40 rows span three tiles
    for f in [toy(), toy_full()] {
        assert!(check_abt(f, 40, 3, 12, 2) < 1e-3);
        assert!(check_atb(f, 40, 3, 12, 2) < 1e-3);
    }
}

#[test]
fn low_level_inputs_refresh_or_fail() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let a = random(&mut rng, 4, 4);
    let ea = encrypt_matrix(&f.ctx, &f.pk, &a, 4, 1, &mut rng).unwrap();
    assert!(matches!(
        matmul_abt(&f.eval, &ea, &ea, &mut NoRefresh),
        Err(Error::DepthExhausted { .. })
    ));
    let mut local = LocalRefresher::new(&f.ctx, &f.sk, &f.pk, ChaCha20Rng::seed_from_u64(5));
    let c = matmul_abt(&f.eval, &ea, &ea, &mut local).unwrap();
    assert_eq!(local.count(), 1);
    let err = decrypt_matrix(&f.ctx, &f.sk, &c).max_abs_diff(&a.matmul_abt(&a).unwrap()).unwrap();
    assert!(err < 1e-3);
}

#[test]
fn shape_errors() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let a = encrypt_matrix(&f.ctx, &f.pk, &random(&mut rng, 4, 3), 4, 3, &mut rng).unwrap();
    let b = encrypt_matrix(&f.ctx, &f.pk, &random(&mut rng, 2, 4), 4, 3, &mut rng).unwrap();
    assert!(matches!(matmul_abt(&f.eval, &a, &b, &mut NoRefresh), Err(Error::Shape(_))));
    assert!(matches!(matmul_atb(&f.eval, &a, &b, &mut NoRefresh), Err(Error::Shape(_))));
    let c = encrypt_matrix(&f.ctx, &f.pk, &random(&mut rng, 4, 3), 8, 3, &mut rng).unwrap();
    assert!(matches!(mat_add(&f.eval, &a, &c), Err(Error::Shape(_))));
}

#[test]
fn matrix_container_roundtrip() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let m = encrypt_matrix(&f.ctx, &f.pk, &random(&mut rng, 20, 5), 8, 2, &mut rng).unwrap();
    let bytes = matrix_to_bytes(&f.ctx, &m);
    assert_eq!(matrix_from_bytes(&f.ctx, &bytes).unwrap(), m);
    assert!(matches!(matrix_from_bytes(&f.ctx, &bytes[..100]), Err(Error::Format { .. })));
}
