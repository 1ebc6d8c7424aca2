use std::collections::HashSet;

use cropseg_core::objectives::{
    cross_entropy_gradient, cross_entropy_loss, iou, lp_gradient, lp_loss, soft_dice_gradient, soft_dice_loss,
    PredictionMap, TargetMap,
};
use cropseg_core::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// (prediction, target) pairs shared by the three loss tables.
const CASES: [(&[f64], &[f64]); 8] = [
    (&[0.25, 0.5, 0.75, 1.0], &[0., 1., 1., 1.]),
    (&[0.5, 0.5], &[1., 0.]),
    (&[0.125, 0.875, 0.5], &[0., 1., 0.]),
    (&[1.0, 0.0, 0.25, 0.75], &[1., 0., 0., 1.]),
    (&[0.75, 0.75, 0.75, 0.75], &[1., 1., 1., 1.]),
    (&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[0., 0., 0., 1., 1., 1.]),
    (&[0.9, 0.05, 0.6], &[1., 0., 1.]),
    (&[0.3, 0.3, 0.3, 0.3], &[0., 0., 0., 0.]),
];

// Worked by hand with exact fractions.
const DICE: [f64; 8] = [
    1.0 / 13.0,
    1.0 / 3.0,
    9.0 / 65.0,
    1.0 / 29.0,
    1.0 / 25.0,
    91.0 / 391.0,
    23.0 / 423.0,
    1.0,
];

// Worked to 20 digits, clamping at 1e-7.
const CROSS_ENTROPY: [f64; 8] = [
    1.2685114254635121643,
    1.3862943611198906188,
    0.96020996580899055571,
    0.57536434490357185488,
    1.1507282898071237098,
    2.8054425471108594937,
    0.66747943381136751786,
    1.4266997757549295157,
];

const LP: [(f64, f64); 8] = [
    (1.0, 1.0),
    (2.0, 0.5),
    (3.0, 0.12890625),
    (1.5, 0.25),
    (2.0, 0.25),
    (2.5, 0.62717023300459068257),
    (1.0, 0.55),
    (4.0, 0.0324),
];

fn maps(x: &[f64], t: &[f64]) -> (PredictionMap, TargetMap) {
    (
        PredictionMap::new(x.len(), 1, x.to_vec()).unwrap(),
        TargetMap::new(t.len(), 1, t.to_vec()).unwrap(),
    )
}

#[test]
fn losses_match_hand_worked_values() {
    let mut checked = 0;
    for (i, &(x, t)) in CASES.iter().enumerate() {
        let (x, t) = maps(x, t);
        let d = soft_dice_loss(&x, &t).unwrap();
        assert!((d - DICE[i]).abs() < 1e-9, "dice case {i}: {d} vs {}", DICE[i]);
        let c = cross_entropy_loss(&x, &t).unwrap();
        assert!((c - CROSS_ENTROPY[i]).abs() < 1e-9, "ce case {i}: {c} vs {}", CROSS_ENTROPY[i]);
        let (p, want) = LP[i];
        let l = lp_loss(&x, &t, p).unwrap();
        assert!((l - want).abs() < 1e-9, "lp case {i}: {l} vs {want}");
        checked += 3;
    }
    assert!(checked >= 20);
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(2..40);
    let x = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let t = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
    (x, t)
}

fn assert_gradient(
    name: &str,
    x: &[f64],
    t: &[f64],
    loss: impl Fn(&PredictionMap, &TargetMap) -> f64,
    grad: &[f64],
) {
    let h = 1e-6;
    for i in 0..x.len() {
        let mut up = x.to_vec();
        up[i] += h;
        let mut down = x.to_vec();
        down[i] -= h;
        let (pu, tu) = maps(&up, t);
        let (pd, _) = maps(&down, t);
        let fd = (loss(&pu, &tu) - loss(&pd, &tu)) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs()).max(1e-6);
        assert!(
            (fd - grad[i]).abs() / scale < 1e-3,
            "{name} component {i}: analytic {} vs numeric {fd}",
            grad[i]
        );
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..50 {
        let (x, t) = random_instance(&mut rng);
        let (px, pt) = maps(&x, &t);

        let g = soft_dice_gradient(&px, &pt).unwrap();
        assert_gradient("dice", &x, &t, |a, b| soft_dice_loss(a, b).unwrap(), &g);

        let g = cross_entropy_gradient(&px, &pt).unwrap();
        assert_gradient("cross entropy", &x, &t, |a, b| cross_entropy_loss(a, b).unwrap(), &g);

        let p = [1.5, 2.0, 3.0][case % 3];
        let g = lp_gradient(&px, &pt, p).unwrap();
        assert_gradient("lp", &x, &t, |a, b| lp_loss(a, b, p).unwrap(), &g);
    }
}

fn pixel_set(m: &BinaryMask) -> HashSet<(usize, usize)> {
    let mut s = HashSet::new();
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                s.insert((x, y));
            }
        }
    }
    s
}

#[test]
fn iou_matches_set_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for _ in 0..500 {
        let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
        let (pa, pb) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let a = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(pa)).unwrap();
        let b = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(pb)).unwrap();
        let (sa, sb) = (pixel_set(&a), pixel_set(&b));
        let union = sa.union(&sb).count();
        let want = if union == 0 {
            1.0
        } else {
            sa.intersection(&sb).count() as f64 / union as f64
        };
        assert_eq!(iou(&a, &b).unwrap(), want);
    }
}

#[test]
fn shifted_hundred_pixel_masks() {
    // Two 100-pixel runs offset by one: 99 shared, 101 in the union.
    let truth = BinaryMask::from_fn(25, 8, |x, y| y * 25 + x < 100).unwrap();
    let pred = BinaryMask::from_fn(25, 8, |x, y| (1..=100).contains(&(y * 25 + x))).unwrap();
    let v = iou(&truth, &pred).unwrap();
    assert_eq!(v, 99.0 / 101.0);
    assert_eq!(format!("{v:.3}"), "0.980");
}
