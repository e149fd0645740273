//! Central finite differences against the reverse sweep, op by op.

use chmm_autodiff::{ConvGeom, ConvTranspose2d, GruCell, Matrix, ParamStore, Tape, Var};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

/// Checks d f / d inputs[k] for every k.
fn check<F>(inputs: &[Matrix], f: F, tol: f64)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out);
    let eval = |xs: &[Matrix]| {
        let t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|m| t.constant(m.clone())).collect();
        f(&t, &vs).item()
    };
    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]);
        for idx in 0..input.len() {
            let (r, c) = (idx / input.ncols(), idx % input.ncols());
            let mut plus = inputs.to_vec();
            plus[k][[r, c]] += h;
            let mut minus = inputs.to_vec();
            minus[k][[r, c]] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (a - numeric).abs() <= tol * (1.0 + numeric.abs()),
                "input {k} entry ({r},{c}): analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn elementwise_and_broadcast_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 3, 4);
    let row = random(&mut rng, 1, 4);
    let col = random(&mut rng, 3, 1);
    check(
        &[a, row, col],
        |_, v| {
            let x = (v[0] + v[1]) * v[2] - v[1];
            (x.tanh() + x.sigmoid() + x.softplus() + x.square().scale(0.3) + x.exp().scale(0.1))
                .sum()
        },
        1e-6,
    );
}

#[test]
fn log_and_clamp_and_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, 2, 5).mapv(|x| x.abs() + 0.5);
    check(
        &[a],
        |_, v| (v[0].ln() + v[0].sqrt() + v[0].clamp(0.0, 1.0) + (v[0] - 1.0).relu()).sum(),
        1e-5,
    );
}

#[test]
fn matmul_concat_slice_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 4, 3);
    let b = random(&mut rng, 3, 5);
    let c = random(&mut rng, 4, 2);
    check(
        &[a, b, c],
        |t, v| {
            let m = v[0].matmul(v[1]);
            let cat = t.concat(&[m, v[2]]);
            let s = cat.slice_cols(2, 6);
            s.sum_cols().square().sum() + s.mean_rows().tanh().sum() + cat.mean()
        },
        1e-6,
    );
}

#[test]
fn tile_and_group_log_mean_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&mut rng, 3, 2);
    let noise = random(&mut rng, 12, 2);
    check(
        &[a, noise],
        |_, v| (v[0].tile_rows(4) * v[1]).group_log_mean_exp(4).sum(),
        1e-6,
    );
}

#[test]
fn conv2d_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let geom = ConvGeom {
        in_channels: 2,
        out_channels: 3,
        in_h: 5,
        in_w: 5,
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let x = random(&mut rng, 2, geom.in_len());
    let w = random(&mut rng, 3, geom.patch_len());
    let b = random(&mut rng, 1, 3);
    check(
        &[x, w, b],
        |t, v| t.conv2d(v[0], v[1], v[2], geom).tanh().sum(),
        1e-6,
    );
}

#[test]
fn conv_transpose2d_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let layer = ConvTranspose2d::new(&mut store, "up", 2, 3, (3, 3), 4, 2, 1, &mut rng);
    assert_eq!(layer.out_hw(), (6, 6));
    let geom = layer.geom;
    let x = random(&mut rng, 2, 2 * 9);
    let w = random(&mut rng, 2, geom.patch_len());
    let b = random(&mut rng, 1, 3);
    check(
        &[x, w, b],
        |t, v| t.conv_transpose2d(v[0], v[1], v[2], geom).tanh().sum(),
        1e-6,
    );
}

#[test]
fn gru_cell_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let gru = GruCell::new(&mut store, "gru", 3, 4, &mut rng);
    let x = random(&mut rng, 2, 3);
    let h = random(&mut rng, 2, 4);
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let hv = tape.leaf(h.clone());
    let out = gru.forward(&tape, &store, xv, hv).square().sum();
    let grads = tape.backward(out);
    let pg = grads.params();
    assert_eq!(pg.len(), 4, "all four GRU tensors receive gradients");
    // spot-check one weight entry by finite differences
    let (id, g) = &pg[0];
    let eval = |s: &ParamStore| {
        let t = Tape::new();
        gru.forward(&t, s, t.constant(x.clone()), t.constant(h.clone()))
            .square()
            .sum()
            .item()
    };
    let hstep = 1e-6;
    let mut plus = store.clone();
    plus.get_mut(*id)[[1, 2]] += hstep;
    let mut minus = store.clone();
    minus.get_mut(*id)[[1, 2]] -= hstep;
    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * hstep);
    assert!((g[[1, 2]] - numeric).abs() < 1e-7);
}

#[test]
fn unused_leaf_has_no_gradient() {
    let tape = Tape::new();
    let a = tape.leaf(Array2::ones((2, 2)));
    let b = tape.leaf(Array2::ones((2, 2)));
    let out = a.square().sum();
    let grads = tape.backward(out);
    assert!(grads.get(b).is_none());
    assert!(grads.wrt(b).iter().all(|&x| x == 0.0));
}

proptest! {
    #[test]
    fn group_log_mean_exp_inverts_tiling(vals in proptest::collection::vec(-30.0f64..30.0, 6)) {
        let tape = Tape::new();
        let a = tape.constant(Array2::from_shape_vec((3, 2), vals.clone()).unwrap());
        let back = a.tile_rows(5).group_log_mean_exp(5).value();
        for (x, y) in back.iter().zip(&vals) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
