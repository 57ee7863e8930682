//! Segments shared by unit tests.

use nalgebra::DVector;

use crate::algebra::{k_atom, ReducedState, State};
use crate::wavecone::{lambda_direction, LambdaSegment, WaveDirection};

pub fn e(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

pub fn segment(dir: ReducedState, xi: Vec<f64>) -> LambdaSegment {
    let n = dir.n();
    LambdaSegment {
        base: State::zeros(n),
        direction: dir,
        half_length: 1.0,
        certificate: WaveDirection { xi, residual: 0.0 },
        base_margin: 1.0,
        endpoint_margins: [1.0, 1.0],
    }
}

/// Half the difference of two atoms sharing b = e3, u in {e2, e4}; kernel e1.
pub fn aligned_segment() -> LambdaSegment {
    let a = k_atom(e(4, 1), e(4, 2)).unwrap();
    let b = k_atom(e(4, 3), e(4, 2)).unwrap();
    segment(a.reduced().sub(b.reduced()).scaled(0.5), vec![1.0, 0.0, 0.0, 0.0, 0.0])
}

/// Quarter of a generic atom difference, with a time component in xi.
pub fn general_segment() -> LambdaSegment {
    let s = 0.5f64.sqrt();
    let u1 = DVector::from_vec(vec![s, s, 0.0, 0.0]);
    let b1 = e(4, 2);
    let u2 = DVector::from_vec(vec![0.0, 0.6, 0.0, 0.8]);
    let b2 = DVector::from_vec(vec![0.0, 0.0, s, s]);
    let a1 = k_atom(u1.clone(), b1.clone()).unwrap();
    let a2 = k_atom(u2.clone(), b2.clone()).unwrap();
    let dir = lambda_direction(&u1, &b1, &u2, &b2).unwrap();
    let mut seg = segment(a1.reduced().sub(a2.reduced()).scaled(0.25), dir.xi.clone());
    seg.certificate = dir;
    seg
}
