use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use srn_lna::{Reaction, ReactionNetwork};

/// 2A → B, B → 2A, A → ∅: a squared monomial next to first-order terms.
fn dimerisation() -> ReactionNetwork {
    ReactionNetwork::new(
        vec![
            Reaction::new(vec![2, 0], vec![0, 1], 0),
            Reaction::new(vec![0, 1], vec![2, 0], 1),
            Reaction::new(vec![1, 0], vec![0, 0], 2),
        ],
        2,
        1.0,
    )
    .unwrap()
}

fn networks() -> Vec<ReactionNetwork> {
    vec![ReactionNetwork::michaelis_menten(), ReactionNetwork::birth_death(), dimerisation()]
}

fn check_close(analytic: f64, fd: f64, scale: f64, what: &str) -> Result<(), TestCaseError> {
    let err = (analytic - fd).abs();
    let tol = 1e-5 * analytic.abs().max(fd.abs()) + 1e-9 * scale.max(1.0);
    prop_assert!(err <= tol, "{what}: analytic {analytic} vs fd {fd}");
    Ok(())
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central difference of a matrix-valued function along one input coordinate.
fn fd_matrix(f: impl Fn(&[f64]) -> DMatrix<f64>, x: &[f64], i: usize) -> DMatrix<f64> {
    let h = fd_step(x[i]);
    let mut up = x.to_vec();
    let mut dn = x.to_vec();
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

fn point() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(0.1f64..100.0, 4), prop::collection::vec(1e-4f64..1.0, 3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivatives_match_finite_differences((s_all, th_all) in point()) {
        for net in networks() {
            let s = &s_all[..net.species_count()];
            let th = &th_all[..net.param_count()];
            let scale = net.diffusion_matrix(s, th).amax() + net.drift(s, th).amax();
            let as_mat = |v: nalgebra::DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());

            let dv_ds = net.rate_jacobian_state(s, th);
            let dmu_ds = net.drift_jacobian_state(s, th);
            let dd_ds = net.diffusion_jacobian_state(s, th);
            for j in 0..s.len() {
                let v_fd = fd_matrix(|x| as_mat(net.reaction_rates(x, th)), s, j);
                let mu_fd = fd_matrix(|x| as_mat(net.drift(x, th)), s, j);
                let d_fd = fd_matrix(|x| net.diffusion_matrix(x, th), s, j);
                for k in 0..net.reaction_count() {
                    check_close(dv_ds[(k, j)], v_fd[(k, 0)], scale, "dv/ds")?;
                }
                for a in 0..s.len() {
                    check_close(dmu_ds[(a, j)], mu_fd[(a, 0)], scale, "dmu/ds")?;
                    for b in 0..s.len() {
                        check_close(dd_ds[j][(a, b)], d_fd[(a, b)], scale, "dD/ds")?;
                    }
                }
            }

            let dv_dth = net.rate_grad_params(s, th);
            let dmu_dth = net.drift_grad_params(s, th);
            let dd_dth = net.diffusion_grad_params(s, th);
            for n in 0..th.len() {
                let v_fd = fd_matrix(|p| as_mat(net.reaction_rates(s, p)), th, n);
                let mu_fd = fd_matrix(|p| as_mat(net.drift(s, p)), th, n);
                let d_fd = fd_matrix(|p| net.diffusion_matrix(s, p), th, n);
                for k in 0..net.reaction_count() {
                    check_close(dv_dth[(k, n)], v_fd[(k, 0)], scale, "dv/dtheta")?;
                }
                for a in 0..s.len() {
                    check_close(dmu_dth[(a, n)], mu_fd[(a, 0)], scale, "dmu/dtheta")?;
                    for b in 0..s.len() {
                        check_close(dd_dth[n][(a, b)], d_fd[(a, b)], scale, "dD/dtheta")?;
                    }
                }
            }
        }
    }

    #[test]
    fn diffusion_is_symmetric_psd((s_all, th_all) in point()) {
        for net in networks() {
            let s = &s_all[..net.species_count()];
            let th = &th_all[..net.param_count()];
            let d = net.diffusion_matrix(s, th);
            prop_assert_eq!(&d, &d.transpose());
            // rank-deficient whenever a conservation law exists, so eigenvalues rather than Cholesky
            let min = SymmetricEigen::new(d.clone()).eigenvalues.min();
            prop_assert!(min >= -1e-12 * d.amax().max(1.0), "min eigenvalue {min}");
        }
    }

    #[test]
    fn conservation_laws_annihilate_drift_and_diffusion((s, th) in point()) {
        let net = ReactionNetwork::michaelis_menten();
        let c = net.stoichiometry();
        let mu = net.drift(&s, &th);
        let d = net.diffusion_matrix(&s, &th);
        // Enzyme + Complex and Substrate + Complex + Product
        for u in [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 1.0]] {
            let u = nalgebra::DVector::from_row_slice(&u);
            prop_assert!((u.transpose() * c).amax() == 0.0);
            let tol = 1e-12 * (mu.amax() + d.amax()).max(1.0);
            prop_assert!(u.dot(&mu).abs() <= tol);
            prop_assert!((u.transpose() * &d * &u)[(0, 0)].abs() <= tol);
        }
    }
}
