//! Split-versus-unsplit fills, conservation and merge algebra on random
//! streams.

use colflow::hist::Histo1D;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn fill_all(h: &mut Histo1D, xs: &[(f64, f64)]) {
    for &(x, w) in xs {
        h.fill(x, w).unwrap();
    }
}

fn stream() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-20.0f64..120.0, -2.0f64..5.0), 0..400)
}

proptest! {
    #[test]
    fn split_fill_merged_equals_unsplit(xs in stream(), at in 0usize..400) {
        let at = at.min(xs.len());
        let proto = Histo1D::new("h", 17, 0.0, 100.0).unwrap();
        let mut whole = proto.empty_like();
        fill_all(&mut whole, &xs);
        let mut a = proto.empty_like();
        let mut b = proto.empty_like();
        fill_all(&mut a, &xs[..at]);
        fill_all(&mut b, &xs[at..]);
        a.merge(&b).unwrap();
        prop_assert_eq!(a.entries(), whole.entries());
        for i in 0..whole.sumw().len() {
            prop_assert!(rel(a.sumw()[i], whole.sumw()[i]) <= 1e-12);
            prop_assert!(rel(a.sumw2()[i], whole.sumw2()[i]) <= 1e-12);
        }
        // Conservation against an independent running sum.
        let total: f64 = xs.iter().map(|p| p.1).sum();
        prop_assert!((whole.total_weight() - total).abs() <= 1e-12 * xs.iter().map(|p| p.1.abs()).sum::<f64>().max(1.0));
    }

    #[test]
    fn integer_weights_merge_exactly_in_any_order(
        xs in prop::collection::vec((-20.0f64..120.0, 0i32..6), 0..300),
        parts in 1usize..7,
    ) {
        let pts: Vec<(f64, f64)> = xs.iter().map(|&(x, w)| (x, f64::from(w))).collect();
        let proto = Histo1D::new("h", 9, 0.0, 100.0).unwrap();
        let chunks: Vec<Histo1D> = pts
            .chunks(pts.len().div_ceil(parts).max(1))
            .map(|c| {
                let mut h = proto.empty_like();
                fill_all(&mut h, c);
                h
            })
            .collect();
        let mut fwd = proto.empty_like();
        for h in &chunks {
            fwd.merge(h).unwrap();
        }
        let mut rev = proto.empty_like();
        for h in chunks.iter().rev() {
            rev.merge(h).unwrap();
        }
        prop_assert_eq!(&fwd, &rev);
        let mut whole = proto.empty_like();
        fill_all(&mut whole, &pts);
        prop_assert_eq!(&fwd, &whole);
    }
}

#[test]
fn merge_with_empty_is_identity() {
    let mut h = Histo1D::new("h", 4, 0.0, 4.0).unwrap();
    fill_all(&mut h, &[(0.5, 1.0), (3.9, 2.0), (-1.0, 0.5), (4.0, 0.25)]);
    let merged = Histo1D::merged(&h, &h.empty_like()).unwrap();
    assert_eq!(merged, h);
    assert!(h.merge(&Histo1D::new("h", 5, 0.0, 4.0).unwrap()).is_err());
    assert!(h.merge(&Histo1D::new("g", 4, 0.0, 4.0).unwrap()).is_err());
}
