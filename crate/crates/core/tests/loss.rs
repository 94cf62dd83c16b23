use proptest::prelude::*;
use sparsedet::{
    sigmoid_ce, sigmoid_ce_grad, BBox, Matrix, Provenance, Reduction, SupervisionMatrix,
    SupervisionState,
};

fn supervision(states: Vec<SupervisionState>, rows: usize, cols: usize) -> SupervisionMatrix {
    let provenance = states
        .iter()
        .map(|s| match s {
            SupervisionState::Positive => Provenance::Matched,
            SupervisionState::Negative => Provenance::Default,
            SupervisionState::Ignore => Provenance::DescendantSkip,
        })
        .collect();
    SupervisionMatrix {
        proposals: vec![BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(); rows],
        states: Matrix::from_vec(rows, cols, states),
        provenance: Matrix::from_vec(rows, cols, provenance),
    }
}

fn state() -> impl Strategy<Value = SupervisionState> {
    prop_oneof![
        Just(SupervisionState::Positive),
        Just(SupervisionState::Negative),
        Just(SupervisionState::Ignore),
    ]
}

proptest! {
    #[test]
    fn supervised_entries_are_positive(
        cells in proptest::collection::vec((state(), -30.0f64..30.0), 12),
    ) {
        let (states, z): (Vec<_>, Vec<_>) = cells.into_iter().unzip();
        let sup = supervision(states.clone(), 3, 4);
        let out = sigmoid_ce(&Matrix::from_vec(3, 4, z), &sup, Reduction::Sum).unwrap();
        for (s, l) in states.iter().zip(out.per_entry.as_slice()) {
            if *s == SupervisionState::Ignore {
                prop_assert_eq!(*l, 0.0);
            } else {
                prop_assert!(*l > 0.0 && l.is_finite());
            }
        }
        prop_assert_eq!(out.supervised_entries, states.iter().filter(|s| **s != SupervisionState::Ignore).count());
    }

    #[test]
    fn ignore_logits_do_not_matter(
        cells in proptest::collection::vec((state(), -10.0f64..10.0, -1e3f64..1e3), 12),
    ) {
        let states: Vec<_> = cells.iter().map(|c| c.0).collect();
        let z: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let moved: Vec<f64> = cells
            .iter()
            .map(|(s, z, alt)| if *s == SupervisionState::Ignore { *alt } else { *z })
            .collect();
        let sup = supervision(states, 3, 4);
        for r in [Reduction::Sum, Reduction::MeanSupervised] {
            let a = sigmoid_ce(&Matrix::from_vec(3, 4, z.clone()), &sup, r).unwrap();
            let b = sigmoid_ce(&Matrix::from_vec(3, 4, moved.clone()), &sup, r).unwrap();
            prop_assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
    }

    #[test]
    fn gradient_matches_entry_differences(
        cells in proptest::collection::vec((state(), -10.0f64..10.0), 8),
    ) {
        let (states, z): (Vec<_>, Vec<_>) = cells.into_iter().unzip();
        let sup = supervision(states, 2, 4);
        let logits = Matrix::from_vec(2, 4, z);
        let grad = sigmoid_ce_grad(&logits, &sup, Reduction::Sum).unwrap();
        for i in 0..8 {
            let (r, c) = (i / 4, i % 4);
            let z = *logits.get(r, c);
            let (zp, zm) = (z + 1e-5, z - 1e-5);
            let mut p = logits.clone();
            *p.get_mut(r, c) = zp;
            let mut m = logits.clone();
            *m.get_mut(r, c) = zm;
            let lp = sigmoid_ce(&p, &sup, Reduction::Sum).unwrap();
            let lm = sigmoid_ce(&m, &sup, Reduction::Sum).unwrap();
            let fd = (lp.per_entry.get(r, c) - lm.per_entry.get(r, c)) / (zp - zm);
            let g = *grad.get(r, c);
            if g == 0.0 {
                prop_assert_eq!(fd, 0.0);
            } else {
                prop_assert!((g - fd).abs() / g.abs().max(fd.abs()) < 1e-6);
            }
        }
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let sup = supervision(
        vec![SupervisionState::Positive, SupervisionState::Negative, SupervisionState::Positive, SupervisionState::Negative],
        1,
        4,
    );
    let logits = Matrix::from_vec(1, 4, vec![1000.0, 1000.0, -1000.0, -1000.0]);
    let out = sigmoid_ce(&logits, &sup, Reduction::Sum).unwrap();
    assert!(out.total.is_finite());
    assert_eq!(*out.per_entry.get(0, 1), 1000.0);
    let g = sigmoid_ce_grad(&logits, &sup, Reduction::MeanSupervised).unwrap();
    assert!(g.as_slice().iter().all(|v| v.is_finite()));
}
