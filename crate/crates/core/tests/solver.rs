use ipsym_core::bind::Problem;
use ipsym_core::energy::{damped_spring, inertia_energy, linear_tet_energy, strain_energy_density, MaterialModel};
use ipsym_core::expr::{Matrix, Vector};
use ipsym_core::solver::{minimize_newton, BackwardEuler, DofState, NewtonOptions};

const REST: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[test]
fn hanging_mass_reaches_static_extension() {
    let (m, g, k_sp, l0) = (0.2, 9.81, 4.0, 0.5);
    let mut p = Problem::new();
    let x = p.add_dof_array("x", vec![0.0, 0.0, 0.0, 0.0, 0.0, -l0], 3).unwrap();
    let xp = p.add_array("x_prev", vec![0.0; 6], 3).unwrap();
    let v = p.add_array("v", vec![0.0; 6], 3).unwrap();
    let nodes = p.add_connectivity("nodes", vec![0, 1], 1).unwrap();
    let pair = p.add_connectivity("pair", vec![0, 1], 2).unwrap();
    let dt = p.add_param("dt", 0.05);
    p.add_energy("inertia", nodes, |b| {
        let gr = Vector::from_consts(b.graph(), &[0.0, 0.0, -g]);
        let e = inertia_energy(&b.vector(x, 0)?, &b.vector(xp, 0)?, &b.vector(v, 0)?, &gr, b.runtime_scalar(dt)?, b.constant(m))?;
        b.set(e);
        Ok(())
    })
    .unwrap();
    p.add_energy("spring", pair, |b| {
        let h = b.runtime_scalar(dt)?;
        let (xa, xb) = (b.vector(x, 0)?, b.vector(x, 1)?);
        let va = xa.try_sub(&b.vector(xp, 0)?)?.scale(1.0 / h);
        let vb = xb.try_sub(&b.vector(xp, 1)?)?.scale(1.0 / h);
        let e = damped_spring(&xa, &xb, &va, &vb, b.constant(k_sp), b.constant(l0), b.constant(0.05))?;
        b.set(e);
        Ok(())
    })
    .unwrap();
    let be = BackwardEuler { sets: vec![DofState { x, x_prev: xp, v }], dt, options: NewtonOptions { grad_tol: 1e-10, ..Default::default() } };
    let fixed = [true, true, true, false, false, false];
    for _ in 0..200 {
        let r = be.step(&mut p, &fixed, &mut |_| {}).unwrap();
        assert!(r.converged, "{r:?}");
    }
    // force k_sp / l0^2 (L - l0) balances m g
    let expected = l0 + m * g * l0 * l0 / k_sp;
    let z = p.array(x)[5];
    assert!((-z - expected).abs() < 1e-6, "length {} vs {expected}", -z);
}

#[test]
fn inverted_start_regularizes_and_decreases_energy() {
    let mut p = Problem::new();
    // node 3 pushed through the opposite face
    let x = p.add_dof_array("x", [REST[0], REST[1], REST[2], [0.1, 0.1, -0.4]].concat(), 3).unwrap();
    let rest = p.add_array("rest", REST.concat(), 3).unwrap();
    let tets = p.add_connectivity("tets", vec![0, 1, 2, 3], 4).unwrap();
    p.add_energy("elastic", tets, |b| {
        let r = Matrix::identity(b.graph(), 3);
        let e = linear_tet_energy(&b.vectors(rest)?, &b.vectors(x)?, |f| {
            strain_energy_density(MaterialModel::FixedCorotated, f, Some(&r), b.constant(1.0), b.constant(10.0))
        })?;
        b.set(e);
        Ok(())
    })
    .unwrap();
    let mut u = p.gather_dofs();
    let mut fixed = vec![false; 12];
    fixed[..6].fill(true);
    let r = minimize_newton(&mut p, &mut u, &fixed, &NewtonOptions::default()).unwrap();
    assert!(r.iterations.iter().any(|it| it.tau > 0.0), "no regularization: {:?}", r.iterations);
    let energies: Vec<f64> = r.iterations.iter().map(|it| it.energy).chain([r.final_energy]).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0]), "{energies:?}");
    assert!(energies.last() < energies.first());
}

#[test]
fn stable_neo_hookean_converges_quadratically() {
    let mut p = Problem::new();
    let x0: Vec<f64> = REST.concat().iter().enumerate().map(|(i, v)| v + 0.1 * ((i * 7 % 5) as f64 / 2.0 - 1.0)).collect();
    let x = p.add_dof_array("x", x0, 3).unwrap();
    let rest = p.add_array("rest", REST.concat(), 3).unwrap();
    let tets = p.add_connectivity("tets", vec![0, 1, 2, 3], 4).unwrap();
    p.add_energy("elastic", tets, |b| {
        let e = linear_tet_energy(&b.vectors(rest)?, &b.vectors(x)?, |f| {
            strain_energy_density(MaterialModel::StableNeoHookean, f, None, b.constant(1.0), b.constant(4.0))
        })?;
        b.set(e);
        Ok(())
    })
    .unwrap();
    let mut u = p.gather_dofs();
    let mut fixed = vec![false; 12];
    fixed[..6].fill(true);
    fixed[8] = true;
    let r = minimize_newton(&mut p, &mut u, &fixed, &NewtonOptions { grad_tol: 1e-10, max_iters: 10, ..Default::default() }).unwrap();
    assert!(r.converged, "{:?}", r.iterations);
    let energies: Vec<f64> = r.iterations.iter().map(|it| it.energy).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0]));
}
