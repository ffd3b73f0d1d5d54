use proptest::prelude::*;
use stochid_core::fem::{
    element_stiffness, homogenize_kubc, homogenize_subc, homogenize_subc_with, run_hfcmm, FeSystem, MacroProblem,
    Pinning, RectMesh, Support,
};
use stochid_core::linalg::Mat3;
use stochid_core::randfield::mean_compliance;

fn rel_frobenius(a: &Mat3, b: &Mat3) -> f64 {
    (*a - *b).frobenius() / b.frobenius()
}

fn spd_from(v: [f64; 6], scale: f64) -> Mat3 {
    // L Lᵀ with a positive diagonal, plus a floor
    let l = Mat3([[v[0].abs() + 0.5, 0.0, 0.0], [v[1], v[2].abs() + 0.5, 0.0], [v[3], v[4], v[5].abs() + 0.5]]);
    (l * l.transpose()).scale(scale)
}

#[test]
fn homogeneous_subc_returns_the_pointwise_compliance() {
    let mesh = RectMesh::square(32, 1e-3).unwrap();
    let s = mean_compliance(10.5e9, 4.2e9).unwrap();
    let eff = homogenize_subc(mesh, &vec![s; mesh.n_elements()]).unwrap();
    assert!(rel_frobenius(&eff.matrix, &s) < 1e-8);
    assert!(rel_frobenius(&eff.raw, &eff.raw.transpose()) < 1e-8);
    let aniso = spd_from([0.3, 0.2, -0.1, 0.05, -0.2, 0.4], 1e-10);
    let eff = homogenize_subc(mesh, &vec![aniso; mesh.n_elements()]).unwrap();
    assert!(rel_frobenius(&eff.matrix, &aniso) < 1e-8);
}

#[test]
fn linear_boundary_displacement_is_reproduced_inside() {
    let mesh = RectMesh::new(32, 24, 1e-3, 0.75e-3).unwrap();
    let s = spd_from([0.1, -0.3, 0.2, 0.1, 0.0, 0.3], 1e-10);
    let comp = vec![s; mesh.n_elements()];
    let (a, b, c, w) = (1e-3, -2e-3, 5e-4, 3e-4);
    let disp = |x: f64, y: f64| [a * x + 0.5 * c * y - w * y, 0.5 * c * x + b * y + w * x];
    let boundary = mesh.boundary_nodes();
    let constrained: Vec<usize> = boundary.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
    let prescribed: Vec<(usize, f64)> = boundary
        .iter()
        .flat_map(|&n| {
            let (x, y) = mesh.node_coords(n);
            let u = disp(x, y);
            [(2 * n, u[0]), (2 * n + 1, u[1])]
        })
        .collect();
    let sys = FeSystem::new(mesh, &comp, &constrained).unwrap();
    let sol = sys.solve(&vec![0.0; mesh.n_dofs()], &prescribed).unwrap();
    let umax = 3e-6;
    for n in 0..mesh.n_nodes() {
        let (x, y) = mesh.node_coords(n);
        let u = disp(x, y);
        assert!((sol.displacement[2 * n] - u[0]).abs() < 1e-10 * umax);
        assert!((sol.displacement[2 * n + 1] - u[1]).abs() < 1e-10 * umax);
    }
    for e in sys.element_strains(&sol.displacement) {
        assert!((e[0] - a).abs() < 1e-10 * a.abs());
        assert!((e[1] - b).abs() < 1e-10 * b.abs());
        assert!((e[2] - c).abs() < 1e-10 * c.abs());
    }
}

#[test]
fn rollers_compression_gives_uniaxial_strain() {
    let problem = MacroProblem { elements: 24, window_elements: 8, support: Support::Rollers, ..Default::default() };
    let s = mean_compliance(12e9, 3.5e9).unwrap();
    let strain = run_hfcmm(&vec![s; 576], &problem).unwrap();
    assert_eq!((strain.nx, strain.ny), (8, 8));
    let expect = s.mul_vec([0.0, -problem.load, 0.0]);
    for e in &strain.values {
        for r in 0..3 {
            assert!((e[r] - expect[r]).abs() < 1e-9 * expect[1].abs());
        }
    }
}

#[test]
fn element_stiffness_is_symmetric_psd_with_rank_five() {
    let c = mean_compliance(10e9, 4e9).unwrap().inverse().unwrap();
    let k = element_stiffness(2e-5, 1e-5, &c);
    for i in 0..8 {
        for j in 0..8 {
            assert!((k[i][j] - k[j][i]).abs() <= 1e-12 * k[i][i].abs());
        }
    }
    // bilinear pressure-free hourglass mode has positive energy
    let hour = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
    let e: f64 = (0..8).map(|i| (0..8).map(|j| hour[i] * k[i][j] * hour[j]).sum::<f64>()).sum();
    assert!(e > 0.0);
}

fn random_field(v: &[[f64; 6]]) -> Vec<Mat3> {
    v.iter().map(|r| spd_from(*r, 1e-10)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn boundary_conditions_bracket_the_effective_compliance(v in prop::collection::vec(prop::array::uniform6(-1.0..1.0f64), 36)) {
        let mesh = RectMesh::square(6, 1.0).unwrap();
        let comp = random_field(&v);
        let subc = homogenize_subc(mesh, &comp).unwrap().matrix;
        let kubc = homogenize_kubc(mesh, &comp).unwrap();
        let n = comp.len() as f64;
        let reuss = comp.iter().fold(Mat3::ZERO, |a, s| a + s.scale(1.0 / n));
        let voigt = comp.iter().fold(Mat3::ZERO, |a, s| a + s.inverse().unwrap().scale(1.0 / n)).inverse().unwrap();
        let tol = 1e-9 * reuss.frobenius();
        prop_assert!((reuss - subc).min_eigenvalue() >= -tol);
        prop_assert!((subc - kubc).min_eigenvalue() >= -tol);
        prop_assert!((kubc - voigt).min_eigenvalue() >= -tol);
        prop_assert!(subc.is_spd());
    }

    #[test]
    fn pinning_and_energy_consistency(v in prop::collection::vec(prop::array::uniform6(-1.0..1.0f64), 20)) {
        let mesh = RectMesh::new(5, 4, 1.0, 0.8).unwrap();
        let comp = random_field(&v);
        let a = homogenize_subc_with(mesh, &comp, Pinning::BottomLeft).unwrap();
        let b = homogenize_subc_with(mesh, &comp, Pinning::BottomRight).unwrap();
        prop_assert!(rel_frobenius(&a.matrix, &b.matrix) < 1e-9);
        // reciprocity of the raw columns
        prop_assert!(rel_frobenius(&a.raw, &a.raw.transpose()) < 1e-8);
        let problem = MacroProblem { side: 1.0, elements: 10, window_elements: 4, load: 1.0, support: Support::Clamped };
        let field: Vec<Mat3> = (0..100).map(|e| comp[e % comp.len()]).collect();
        let strain = run_hfcmm(&field, &problem).unwrap();
        prop_assert!(strain.values.iter().flatten().all(|x| x.is_finite()));
    }
}
