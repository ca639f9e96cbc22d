use ipsym_core::assembly::BcrsMatrix;
use ipsym_core::diff::gradient_hessian;
use ipsym_core::energy::{linear_tet_energy, strain_energy_density, MaterialModel};
use ipsym_core::expr::{ExprGraph, Matrix, Vector};
use ipsym_core::kernel::lower;
use ipsym_core::solver::cg_solve;
use proptest::prelude::*;

const REST: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
const MODELS: [MaterialModel; 3] = [MaterialModel::NeoHookean, MaterialModel::StableNeoHookean, MaterialModel::StVK];

fn det3(a: &[f64]) -> f64 {
    a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) + a[2] * (a[3] * a[7] - a[4] * a[6])
}

/// Deformation gradients near the identity with `det F > 0.3`.
fn gradient_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.3..0.3f64, 9)
        .prop_map(|d| d.iter().enumerate().map(|(k, v)| v + if k % 4 == 0 { 1.0 } else { 0.0 }).collect::<Vec<f64>>())
        .prop_filter("well conditioned", |f| det3(f) > 0.3)
}

fn unit_quaternion() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0..1.0f64)
        .prop_filter("nonzero", |q| q.iter().map(|v| v * v).sum::<f64>() > 0.1)
        .prop_map(|q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.map(|v| v / n)
        })
}

fn rotation(q: [f64; 4]) -> [f64; 9] {
    let [w, x, y, z] = q;
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

fn density(model: MaterialModel, f: &[f64]) -> f64 {
    let g = ExprGraph::new();
    let fm = Matrix::from_consts(&g, 3, 3, f).unwrap();
    let psi = strain_energy_density(model, &fm, None, g.constant(1.0), g.constant(3.0)).unwrap();
    g.eval(&[psi.id()], &|_| f64::NAN)[0]
}

/// Gradient and Hessian of a tet energy at deformed positions `x`.
fn tet_derivatives(model: MaterialModel, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g = ExprGraph::new();
    let u = g.symbol_vector("x", 0, 12).unwrap();
    let pts: Vec<Vector> = u.entries().chunks(3).map(|c| Vector::new(c.to_vec())).collect();
    let rest: Vec<Vector> = REST.iter().map(|p| Vector::from_consts(&g, p)).collect();
    let e = linear_tet_energy(&rest, &pts, |f| strain_energy_density(model, f, None, g.constant(1.0), g.constant(3.0))).unwrap();
    let b = gradient_hessian(&g, e.id(), &u.ids()).unwrap();
    let out = lower(&g, &b.output_roots(), 12).unwrap().eval(x);
    (out[1..13].to_vec(), out[13..].to_vec())
}

fn deformed(f: &[f64], t: [f64; 3]) -> Vec<f64> {
    REST.iter().flat_map(|p| (0..3).map(move |r| f[r * 3] * p[0] + f[r * 3 + 1] * p[1] + f[r * 3 + 2] * p[2] + t[r])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn densities_are_rotation_invariant(f in gradient_strategy(), q in unit_quaternion()) {
        let r = rotation(q);
        let rf: Vec<f64> = (0..9).map(|k| (0..3).map(|m| r[(k / 3) * 3 + m] * f[m * 3 + k % 3]).sum()).collect();
        for model in MODELS {
            let (a, b) = (density(model, &f), density(model, &rf));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{model:?}: {a} vs {b}");
        }
    }

    #[test]
    fn tet_hessian_is_symmetric_and_translation_free(f in gradient_strategy(), t in prop::array::uniform3(-2.0..2.0f64)) {
        let x = deformed(&f, t);
        for model in MODELS {
            let (grad, hess) = tet_derivatives(model, &x);
            let scale = hess.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..12 {
                for j in 0..12 {
                    prop_assert!((hess[i * 12 + j] - hess[j * 12 + i]).abs() <= 1e-12 * scale);
                }
            }
            // internal forces sum to zero
            for k in 0..3 {
                let s: f64 = (0..4).map(|n| grad[n * 3 + k]).sum();
                prop_assert!(s.abs() <= 1e-12 * scale, "{model:?}: net force {s}");
            }
        }
    }

    #[test]
    fn tape_replays_the_graph(vals in prop::collection::vec(0.1..3.0f64, 4)) {
        let g = ExprGraph::new();
        let v = g.symbol_vector("v", 0, 4).unwrap();
        let e = v.entries();
        let expr = (e[0] * e[1]).sin() + e[2].ln() * e[3].sqrt() - e[0] / e[3] + e[1].powi(3);
        let direct = g.eval(&[expr.id()], &|s| vals[s as usize])[0];
        let taped = lower(&g, &[expr.id()], 4).unwrap().eval(&vals)[0];
        prop_assert_eq!(direct.to_bits(), taped.to_bits());
    }

    #[test]
    fn identical_expressions_share_nodes(a in -5.0..5.0f64) {
        let g = ExprGraph::new();
        let x = g.symbol("x", 0).unwrap();
        let e1 = (x * a + 1.0).sin();
        let e2 = (x * a + 1.0).sin();
        prop_assert_eq!(e1.id(), e2.id());
    }

    #[test]
    fn cg_solves_spd_systems(entries in prop::collection::vec(-1.0..1.0f64, 36), b in prop::collection::vec(-1.0..1.0f64, 6)) {
        // A = M M^T + I
        let n = 6;
        let mut m = BcrsMatrix::from_pattern(3, n, vec![vec![0, 1], vec![0, 1]]).unwrap();
        let dense: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                (0..n).map(|l| entries[i * n + l] * entries[j * n + l]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let k = m.block_index(i / 3, j / 3).unwrap();
                m.block_mut(k)[(i % 3) * 3 + j % 3] = dense[i * n + j];
            }
        }
        let r = cg_solve(&m, &b, 1e-10, 100).unwrap();
        prop_assert!(!r.negative_curvature);
        let ax = m.mul_vec(&r.x).unwrap();
        let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(res <= 1e-9 * bn.max(1e-300));
    }
}
