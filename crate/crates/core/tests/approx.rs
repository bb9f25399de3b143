use std::sync::{Arc, OnceLock};

use ciphertune::approx::*;
use ciphertune::ckks::{keygen, CkksContext, Evaluator, PublicKey, SecretKey};
use ciphertune::linalg::*;
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
        let (sk, pk, evk) = keygen(&ctx, 11);
        let eval = Evaluator::new(ctx.clone(), Arc::new(evk));
        Fixture { ctx, sk, pk, eval }
    })
}

impl Fixture {
    fn refresher(&self, seed: u64) -> LocalRefresher<'_> {
        LocalRefresher::new(&self.ctx, &self.sk, &self.pk, ChaCha20Rng::seed_from_u64(seed))
    }

    fn enc(&self, m: &PlainMatrix, stride: usize, seed: u64) -> EncMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        encrypt_matrix(&self.ctx, &self.pk, m, stride, self.ctx.max_level(), &mut rng).unwrap()
    }

    fn dec(&self, m: &EncMatrix) -> PlainMatrix {
        decrypt_matrix(&self.ctx, &self.sk, m)
    }

    /// Decrypts every slot of every tile.
    fn raw_slots(&self, m: &EncMatrix) -> Vec<f64> {
        m.tiles
            .iter()
            .flat_map(|t| ciphertune::ckks::decrypt_values(&self.ctx, &self.sk, t))
            .collect()
    }
}

fn grid(values: &[f64], cols: usize) -> PlainMatrix {
    let rows = values.len().div_ceil(cols);
    PlainMatrix::from_fn(rows, cols, |r, c| values.get(r * cols + c).copied().unwrap_or(0.0))
}

fn max_rel(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(g, w)| ((g - w) / w).abs())
        .fold(0.0, f64::max)
}

#[test]
fn aexp_plain_points() {
    assert!((aexp_plain(0.0, 12) - 1.0).abs() < 0.01);
    assert!((aexp_plain(1.0, 12) / 1f64.exp() - 1.0).abs() < 0.01);
}

#[test]
fn aexp_plain_improves_with_squarings() {
    let xs: Vec<f64> = (0..=1600).map(|i| -8.0 + i as f64 * 0.01).collect();
    let err = |r| xs.iter().map(|&x| (aexp_plain(x, r) / x.exp() - 1.0).abs()).fold(0.0, f64::max);
    for r in 6..14 {
        assert!(err(r + 1) < err(r), "r = {r}");
    }
    assert!(err(SoftmaxConfig::DEFAULT_SQUARINGS) < 0.01);
}

#[test]
fn ainv_plain_sweep_and_monotonicity() {
    let cfg = SoftmaxConfig::new(10);
    let (lb, ub) = cfg.inv_range;
    let xs: Vec<f64> = (0..=400).map(|i| lb * (ub / lb).powf(i as f64 / 400.0)).collect();
    let err = |c: &SoftmaxConfig| xs.iter().map(|&x| (ainv_plain(x, c) * x - 1.0).abs()).fold(0.0, f64::max);
    assert!(err(&cfg) < 1e-3);
    for n in 20..cfg.inv_iterations {
        let a = SoftmaxConfig { inv_iterations: n, ..cfg.clone() };
        let b = SoftmaxConfig { inv_iterations: n + 1, ..cfg.clone() };
        assert!(err(&b) < err(&a), "n = {n}");
    }
}

#[test]
fn softmax_oracles_agree_on_small_rows() {
    let cfg = SoftmaxConfig::new(3);
    let logits = PlainMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]).unwrap();
    let exact = softmax_rows(&logits);
    let want = [0.0900, 0.2447, 0.6652];
    for (c, w) in want.iter().enumerate() {
        assert!((exact.get(0, c) - w).abs() < 1e-4);
        assert!((exact.get(1, c) - 1.0 / 3.0).abs() < 1e-12);
    }
    let approx = asoftmax_plain(&logits, &cfg);
    assert!(approx.max_abs_diff(&exact).unwrap() < 0.01);
}

#[test]
fn cross_entropy_examples() {
    let zeros = PlainMatrix::zeros(4, 2);
    let labels = PlainMatrix::from_fn(4, 2, |r, c| (r % 2 == c) as u8 as f64);
    assert!((cross_entropy(&zeros, &labels).unwrap() - 2f64.ln()).abs() < 1e-12);

    let one = PlainMatrix::from_rows(&[vec![10.0, -10.0]]).unwrap();
    let y = PlainMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let want = (1.0 + (-20f64).exp()).ln();
    let got = cross_entropy(&one, &y).unwrap();
    assert!((got - want).abs() < 1e-15 && (got - 2.06e-9).abs() < 1e-11);

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let logits = PlainMatrix::from_fn(6, 3, |_, _| rng.random_range(-3.0..3.0));
    let labels = PlainMatrix::from_fn(6, 3, |r, c| (r % 3 == c) as u8 as f64);
    let perm = [4, 2, 0, 5, 1, 3];
    let a = cross_entropy(&logits, &labels).unwrap();
    let b = cross_entropy(&logits.select_rows(&perm), &labels.select_rows(&perm)).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert!(cross_entropy(&logits, &PlainMatrix::zeros(6, 2)).is_err());
}

#[test]
fn gamma_schedule() {
    assert_eq!(nag_gamma(0), 1.0);
    assert_eq!(nag_gamma(1), 0.0);
    assert!((nag_gamma(2) + 0.2817).abs() < 1e-4);
    let mut s = NagSchedule::default();
    let mut prev = s.lambda;
    for t in 0..200u64 {
        let g = s.advance();
        if t >= 2 {
            assert!(g < 0.0);
        }
        assert!(s.lambda > prev);
        assert!(s.lambda >= s.t as f64 / 2.0);
        prev = s.lambda;
    }
    assert_eq!(NagSchedule::at(7).gamma(), nag_gamma(7));
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for _ in 0..5 {
        let (n, d, k) = (7, 4, 3);
        let x = PlainMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y = PlainMatrix::from_fn(n, k, |r, c| (r % k == c) as u8 as f64);
        let w = PlainMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0));
        let mask = vec![1.0; n];
        let batch = Batch { x: &x, y: &y, row_mask: &mask };
        let g = gradient(&w, &batch, &SoftmaxKind::Exact).unwrap();
        let loss = |w: &PlainMatrix| cross_entropy(&x.matmul_abt(w).unwrap(), &y).unwrap();
        let h = 1e-6;
        for i in 0..k {
            for j in 0..d {
                let (mut up, mut down) = (w.clone(), w.clone());
                up.set(i, j, w.get(i, j) + h);
                down.set(i, j, w.get(i, j) - h);
                let fd = (loss(&up) - loss(&down)) / (2.0 * h);
                let an = g.get(i, j);
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }
}

#[test]
fn padded_rows_do_not_change_the_gradient() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let x = PlainMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = PlainMatrix::from_fn(5, 2, |r, c| (r % 2 == c) as u8 as f64);
    let w = PlainMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
    let real = Batch { x: &x.slice_rows(0..3), y: &y.slice_rows(0..3), row_mask: &[1.0; 3] };
    let padded = Batch { x: &x, y: &y, row_mask: &[1.0, 1.0, 1.0, 0.0, 0.0] };
    let a = gradient(&w, &real, &SoftmaxKind::Exact).unwrap();
    let b = gradient(&w, &padded, &SoftmaxKind::Exact).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
}

#[test]
fn encrypted_aexp_points_and_sweep() {
    let f = toy();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut xs = vec![0.0, 1.0];
    xs.extend((0..1000).map(|_| rng.random_range(-8.0..8.0)));
    let m = grid(&xs, 16);
    let mut rf = f.refresher(2);
    let out = aexp(&f.eval, &f.enc(&m, 16, 3), 12, &mut rf).unwrap();
    let got = f.dec(&out).into_data();
    assert!((got[0] - 1.0).abs() < 0.01);
    assert!((got[1] / 1f64.exp() - 1.0).abs() < 0.01);
    let want: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    assert!(max_rel(&got[..xs.len()], &want) < 0.01);
    assert!(rf.count() >= 3, "13 levels on a 4-level chain need refreshes");
}

#[test]
fn encrypted_ainv_points_and_sweep() {
    let f = toy();
    let cfg = SoftmaxConfig::new(3);
    let (lb, ub) = cfg.inv_range;
    let mut xs = vec![2.0, 1.0];
    xs.extend((0..=126).map(|i| lb * (ub / lb).powf(i as f64 / 126.0)));
    let m = grid(&xs, 8);
    let mut rf = f.refresher(4);
    let out = ainv(&f.eval, &f.enc(&m, 8, 5), &cfg, &mut rf).unwrap();
    let got = f.dec(&out).into_data();
    assert!((got[0] - 0.5).abs() < 1e-3);
    assert!((got[1] - 1.0).abs() < 1e-3);
    let want: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
    let err = max_rel(&got[..xs.len()], &want);
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn encrypted_asoftmax_examples() {
    let f = toy();
    let cfg = SoftmaxConfig::new(3);
    let logits = PlainMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0], vec![-8.0, 8.0, 0.5]]).unwrap();
    let mut rf = f.refresher(6);
    let em = f.enc(&logits, 4, 7);
    let out = asoftmax(&f.eval, &em, &cfg, &mut rf).unwrap();
    let got = f.dec(&out);
    assert!(got.max_abs_diff(&softmax_rows(&logits)).unwrap() < 0.01);
    for r in 0..3 {
        assert!((got.row(r).iter().sum::<f64>() - 1.0).abs() < 0.02);
    }
    // slots outside the 3x3 region stay clear
    let raw = f.raw_slots(&out);
    for (i, v) in raw.iter().enumerate() {
        let (row, col) = (i / 4, i % 4);
        if row >= 3 || col >= 3 {
            assert!(v.abs() < 1e-3, "slot {i} holds {v}");
        }
    }
}

#[test]
fn encrypted_asoftmax_random_rows() {
    let f = toy();
    let cfg = SoftmaxConfig::new(10);
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let logits = PlainMatrix::from_fn(40, 10, |_, _| rng.random_range(-8.0..8.0));
    let mut rf = f.refresher(13);
    let out = asoftmax(&f.eval, &f.enc(&logits, 16, 14), &cfg, &mut rf).unwrap();
    let got = f.dec(&out);
    assert!(got.max_abs_diff(&softmax_rows(&logits)).unwrap() < 0.01);
    assert!(got.max_abs_diff(&asoftmax_plain(&logits, &cfg)).unwrap() < 1e-3);
}

#[test]
fn asoftmax_rejects_wrong_class_count() {
    let f = toy();
    let em = f.enc(&PlainMatrix::zeros(2, 3), 4, 1);
    assert!(asoftmax(&f.eval, &em, &SoftmaxConfig::new(4), &mut NoRefresh).is_err());
}

struct StepCase {
    x: PlainMatrix,
    y: PlainMatrix,
    mask: Vec<f64>,
    w: PlainMatrix,
    v: PlainMatrix,
}

fn hand_case() -> StepCase {
    let x = PlainMatrix::from_rows(&[
        vec![0.5, -0.2],
        vec![-0.3, 0.8],
        vec![0.9, 0.1],
        vec![-0.6, -0.4],
    ])
    .unwrap();
    let y = PlainMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    StepCase { x, y, mask: vec![1.0; 4], w: PlainMatrix::zeros(2, 2), v: PlainMatrix::zeros(2, 2) }
}

fn run_encrypted(f: &Fixture, c: &StepCase, gamma: f64, alpha: f64, cfg: &SoftmaxConfig) -> NagState<PlainMatrix> {
    let stride = TileLayout::stride_for(&[c.x.cols(), c.y.cols()]);
    let (ex, ey) = (f.enc(&c.x, stride, 21), f.enc(&c.y, stride, 22));
    let state = NagState { w: f.enc(&c.w, stride, 23), v: f.enc(&c.v, stride, 24) };
    let batch = Batch { x: &ex, y: &ey, row_mask: &c.mask };
    let mut rf = f.refresher(25);
    let out = nag_step(&f.eval, state, &batch, gamma, alpha, cfg, &mut rf).unwrap();
    NagState { w: f.dec(&out.w), v: f.dec(&out.v) }
}

fn run_plain(c: &StepCase, gamma: f64, alpha: f64, kind: &SoftmaxKind) -> NagState<PlainMatrix> {
    let batch = Batch { x: &c.x, y: &c.y, row_mask: &c.mask };
    plain_nag_step(&NagState { w: c.w.clone(), v: c.v.clone() }, &batch, gamma, alpha, kind).unwrap()
}

#[test]
fn hand_sized_step_matches_plaintext() {
    let f = toy();
    let cfg = SoftmaxConfig::new(2);
    let mut c = hand_case();
    let enc = run_encrypted(f, &c, nag_gamma(0), 0.1, &cfg);
    let plain = run_plain(&c, nag_gamma(0), 0.1, &SoftmaxKind::Approx(cfg.clone()));
    assert!(enc.w.max_abs_diff(&plain.w).unwrap() < 5e-3);
    assert!(enc.v.max_abs_diff(&plain.v).unwrap() < 5e-3);

    // nonzero weights and a momentum step
    c.w = PlainMatrix::from_rows(&[vec![0.3, -0.1], vec![-0.2, 0.4]]).unwrap();
    c.v = PlainMatrix::from_rows(&[vec![0.5, 0.2], vec![-0.4, 0.1]]).unwrap();
    let g = nag_gamma(3);
    let enc = run_encrypted(f, &c, g, 0.1, &cfg);
    let plain = run_plain(&c, g, 0.1, &SoftmaxKind::Approx(cfg));
    assert!(enc.w.max_abs_diff(&plain.w).unwrap() < 5e-3);
    assert!(enc.v.max_abs_diff(&plain.v).unwrap() < 5e-3);
}

#[test]
fn zero_rate_keeps_v() {
    let f = toy();
    let mut c = hand_case();
    c.w = PlainMatrix::from_rows(&[vec![0.3, -0.1], vec![-0.2, 0.4]]).unwrap();
    c.v = PlainMatrix::from_rows(&[vec![0.5, 0.2], vec![-0.4, 0.1]]).unwrap();
    let g = nag_gamma(4);
    let out = run_encrypted(f, &c, g, 0.0, &SoftmaxConfig::new(2));
    assert!(out.w.max_abs_diff(&c.v).unwrap() < 1e-3);
    let want = c.v.scale(1.0 - g).add(&c.w.scale(g)).unwrap();
    assert!(out.v.max_abs_diff(&want).unwrap() < 1e-3);
}

#[test]
fn stationary_point_keeps_v() {
    // labels equal to the model's own predictions give a zero gradient
    let f = toy();
    let cfg = SoftmaxConfig::new(2);
    let mut c = hand_case();
    c.v = PlainMatrix::from_rows(&[vec![0.5, 0.2], vec![-0.4, 0.1]]).unwrap();
    c.y = asoftmax_plain(&c.x.matmul_abt(&c.v).unwrap(), &cfg);
    let out = run_encrypted(f, &c, 0.0, 0.5, &cfg);
    assert!(out.w.max_abs_diff(&c.v).unwrap() < 2e-3);
}

#[test]
fn step_rejects_bad_shapes() {
    let f = toy();
    let c = hand_case();
    let (ex, ey) = (f.enc(&c.x, 2, 1), f.enc(&c.y, 2, 2));
    let state = NagState { w: f.enc(&c.w, 2, 3), v: f.enc(&c.v, 2, 4) };
    let short = [1.0; 3];
    let batch = Batch { x: &ex, y: &ey, row_mask: &short };
    let cfg = SoftmaxConfig::new(2);
    assert!(nag_step(&f.eval, state, &batch, 0.0, 0.1, &cfg, &mut NoRefresh).is_err());
}
