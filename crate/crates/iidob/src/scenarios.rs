//! Built-in benchmark scenarios.

use crate::model::{BarrierDef, DisturbanceSignal, Reference, Scenario, SystemModel};
use crate::{Matrix, Real, Vector};
use nalgebra::{dvector, Matrix2, Vector2};

/// The shared disturbance waveform used by both benchmarks.
fn waveform(t: Real) -> Real {
    5.0 * t.sin() + 2.0 * (2.0 * t).cos() + 4.0 * (3.0 * t).sin() + 3.0 * (4.0 * t).cos()
}

fn waveform_dot(t: Real) -> Real {
    5.0 * t.cos() - 4.0 * (2.0 * t).sin() + 12.0 * (3.0 * t).cos() - 12.0 * (4.0 * t).sin()
}

/// Planar two-state benchmark: `f = (x2, x1 x2)`, diagonal `g` with
/// `g22 = 1 + sin^2(x1)`, disturbance column `p = (x1, x2)`.
pub fn make_example1() -> Scenario {
    let model = SystemModel::new(
        2,
        2,
        1,
        Box::new(|x: &Vector| dvector![x[1], x[0] * x[1]]),
        Box::new(|x: &Vector| {
            let s = x[0].sin();
            Matrix::from_diagonal(&dvector![1.0, 1.0 + s * s])
        }),
        Box::new(|x: &Vector| Matrix::from_column_slice(2, 1, &[x[0], x[1]])),
        vec![Box::new(|_x: &Vector| Matrix::identity(2, 2))],
    );
    let disturbance = DisturbanceSignal {
        w: Box::new(|t| dvector![waveform(t)]),
        wdot: Box::new(|t| dvector![waveform_dot(t)]),
        omega0: 8.0,
        omega1: 26.0,
    };
    let reference = Reference {
        xd: Box::new(|t| dvector![2.0 * t.sin(), 2.0 * t.cos()]),
        xd_dot: Box::new(|t| dvector![2.0 * t.cos(), -2.0 * t.sin()]),
    };
    let barriers = vec![
        halfspace_barrier_2d("h1", 0, 1.0, 1.0),
        halfspace_barrier_2d("h2", 1, -1.0, 1.0),
    ];
    Scenario {
        name: "example1".into(),
        model,
        disturbance,
        x0: dvector![-0.5, -0.5],
        u0: dvector![0.0, 0.0],
        reference: Some(reference),
        barriers,
        horizon: 20.0,
        dt: 1e-3,
    }
}

/// Relative-degree-1 barrier `h = sign * x_j + offset` on a 2-state plant.
fn halfspace_barrier_2d(name: &str, j: usize, sign: Real, offset: Real) -> BarrierDef {
    let grad = move || {
        let mut g = Vector::zeros(2);
        g[j] = sign;
        g
    };
    BarrierDef {
        name: name.into(),
        iota: 1,
        h0: std::sync::Arc::new(move |x: &Vector| sign * x[j] + offset),
        grad_h0: std::sync::Arc::new(move |_x: &Vector| grad()),
        make_prev: Box::new(move |_lambdas: &[Real]| {
            (
                std::sync::Arc::new(move |x: &Vector| sign * x[j] + offset) as _,
                std::sync::Arc::new(move |_x: &Vector| grad()) as _,
            )
        }),
    }
}

// Two-link manipulator physical parameters: unit link masses and lengths,
// point masses at the link ends, gravity 9.8 m/s^2. The standard
// inertia/Coriolis/gravity expressions below follow from those choices.
const GRAV: Real = 9.8;

#[cfg_attr(not(test), allow(dead_code))] // cross-checks inertia_inv in tests
fn inertia(q2: Real) -> Matrix2<Real> {
    let c2 = q2.cos();
    Matrix2::new(3.0 + 2.0 * c2, 1.0 + c2, 1.0 + c2, 1.0)
}

fn dinertia_dq2(q2: Real) -> Matrix2<Real> {
    let s2 = q2.sin();
    Matrix2::new(-2.0 * s2, -s2, -s2, 0.0)
}

fn coriolis(q2: Real, qd: &Vector2<Real>) -> Matrix2<Real> {
    let s2 = q2.sin();
    Matrix2::new(-s2 * qd[1], -s2 * (qd[0] + qd[1]), s2 * qd[0], 0.0)
}

fn gravity(q: &Vector2<Real>) -> Vector2<Real> {
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    Vector2::new(GRAV * (2.0 * c1 + c12), GRAV * c12)
}

/// End-effector Jacobian; singular at `q2 = 0`.
fn ee_jacobian(q: &Vector2<Real>) -> Matrix2<Real> {
    let (s1, c1) = q[0].sin_cos();
    let (s12, c12) = (q[0] + q[1]).sin_cos();
    Matrix2::new(-s1 - s12, -s12, c1 + c12, c12)
}

fn ee_jacobian_dq(q: &Vector2<Real>, k: usize) -> Matrix2<Real> {
    let (s1, c1) = q[0].sin_cos();
    let (s12, c12) = (q[0] + q[1]).sin_cos();
    if k == 0 {
        Matrix2::new(-c1 - c12, -c12, -s1 - s12, -s12)
    } else {
        Matrix2::new(-c12, -c12, -s12, -s12)
    }
}

fn inertia_inv(q2: Real) -> Matrix2<Real> {
    let c2 = q2.cos();
    let det = 2.0 - c2 * c2; // always in [1, 2]
    Matrix2::new(1.0, -(1.0 + c2), -(1.0 + c2), 3.0 + 2.0 * c2) / det
}

fn split_state(x: &Vector) -> (Vector2<Real>, Vector2<Real>) {
    (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]))
}

/// Two-link planar manipulator benchmark, packed as a 4-state control-affine
/// system with the joint torques as input and an end-effector force
/// disturbance entering through the (singular at `q2 = 0`) Jacobian.
pub fn make_manipulator() -> Scenario {
    let f = Box::new(|x: &Vector| {
        let (q, qd) = split_state(x);
        let acc = inertia_inv(q[1]) * (-coriolis(q[1], &qd) * qd - gravity(&q));
        dvector![qd[0], qd[1], acc[0], acc[1]]
    });
    let g = Box::new(|x: &Vector| {
        let (q, _) = split_state(x);
        let minv = inertia_inv(q[1]);
        let mut out = Matrix::zeros(4, 2);
        out.view_mut((2, 0), (2, 2)).copy_from(&minv);
        out
    });
    let p = Box::new(|x: &Vector| {
        let (q, _) = split_state(x);
        let block = inertia_inv(q[1]) * ee_jacobian(&q).transpose();
        let mut out = Matrix::zeros(4, 2);
        out.view_mut((2, 0), (2, 2)).copy_from(&block);
        out
    });
    // d/dq_k of column i of M^{-1} J^T:
    //   -M^{-1} (dM/dq_k) M^{-1} J^T e_i + M^{-1} (dJ/dq_k)^T e_i
    let dp_col = |i: usize| -> Box<dyn Fn(&Vector) -> Matrix + Send + Sync> {
        Box::new(move |x: &Vector| {
            let (q, _) = split_state(x);
            let minv = inertia_inv(q[1]);
            let jt_col = ee_jacobian(&q).transpose().column(i).into_owned();
            let mut out = Matrix::zeros(4, 4);
            for k in 0..2 {
                let dm = if k == 1 { dinertia_dq2(q[1]) } else { Matrix2::zeros() };
                let djt_col = ee_jacobian_dq(&q, k).transpose().column(i).into_owned();
                let col = -minv * dm * minv * jt_col + minv * djt_col;
                out[(2, k)] = col[0];
                out[(3, k)] = col[1];
            }
            out
        })
    };
    let model = SystemModel::new(4, 2, 2, f, g, p, vec![dp_col(0), dp_col(1)]);

    let disturbance = DisturbanceSignal {
        w: Box::new(|t| dvector![waveform(t), waveform(t)]),
        wdot: Box::new(|t| dvector![waveform_dot(t), waveform_dot(t)]),
        omega0: 11.0,
        omega1: 37.0,
    };
    let reference = Reference {
        xd: Box::new(|t| {
            let s = 2.0 * t.sin();
            let c = 2.0 * t.cos();
            dvector![s, s, c, c]
        }),
        xd_dot: Box::new(|t| {
            let c = 2.0 * t.cos();
            let ns = -2.0 * t.sin();
            dvector![c, c, ns, ns]
        }),
    };
    let barriers = vec![
        joint_barrier("h1", 0, 1.0, 1.0),
        joint_barrier("h2", 0, -1.0, 1.5),
        joint_barrier("h3", 1, 1.0, 1.2),
        joint_barrier("h4", 1, -1.0, 1.0),
    ];
    Scenario {
        name: "manipulator".into(),
        model,
        disturbance,
        // Start on the reference (2 sin t, 2 sin t, 2 cos t, 2 cos t) at
        // t = 0 so the closed loop carries no artificial initial transient.
        x0: dvector![0.0, 0.0, 2.0, 2.0],
        u0: dvector![0.0, 0.0],
        reference: Some(reference),
        barriers,
        horizon: 10.0,
        dt: 5e-4,
    }
}

/// Relative-degree-2 joint-limit barrier `h = sign * q_j + offset`.
/// The chain function is `h1 = sign * qd_j + lambda0 (sign * q_j + offset)`.
fn joint_barrier(name: &str, j: usize, sign: Real, offset: Real) -> BarrierDef {
    BarrierDef {
        name: name.into(),
        iota: 2,
        h0: std::sync::Arc::new(move |x: &Vector| sign * x[j] + offset),
        grad_h0: std::sync::Arc::new(move |_x: &Vector| {
            let mut g = Vector::zeros(4);
            g[j] = sign;
            g
        }),
        make_prev: Box::new(move |lambdas: &[Real]| {
            let l0 = lambdas[0];
            (
                std::sync::Arc::new(move |x: &Vector| {
                    sign * x[2 + j] + l0 * (sign * x[j] + offset)
                }) as _,
                std::sync::Arc::new(move |_x: &Vector| {
                    let mut g = Vector::zeros(4);
                    g[j] = l0 * sign;
                    g[2 + j] = sign;
                    g
                }) as _,
            )
        }),
    }
}

/// Scenario lookup by name.
pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "example1" => Some(make_example1()),
        "manipulator" => Some(make_manipulator()),
        _ => None,
    }
}
