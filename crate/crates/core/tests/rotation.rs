use spurious_core::spuriousness::{random_rotation, rotation_matrix};

#[test]
fn haar_moments_at_dim_three() {
    let draws = 200;
    let mut mean = [[0.0f64; 3]; 3];
    let mut second = [[0.0f64; 3]; 3];
    for seed in 0..draws {
        let q = rotation_matrix(3, seed).unwrap();
        assert!((q.determinant() - 1.0).abs() < 1e-10);
        for r in 0..3 {
            for c in 0..3 {
                mean[r][c] += q[(r, c)] / draws as f64;
                second[r][c] += q[(r, c)].powi(2) / draws as f64;
            }
        }
    }
    // Under the Haar measure every entry has mean 0 and variance 1/3.
    for r in 0..3 {
        for c in 0..3 {
            assert!(mean[r][c].abs() < 0.15, "mean[{r}][{c}] = {}", mean[r][c]);
            assert!((second[r][c] - 1.0 / 3.0).abs() < 0.08, "second[{r}][{c}] = {}", second[r][c]);
        }
    }
}

#[test]
fn seeded_and_orthogonal() {
    let a = random_rotation(17, 3).unwrap();
    assert_eq!(a, random_rotation(17, 3).unwrap());
    assert_ne!(a.weights(), random_rotation(17, 4).unwrap().weights());
    assert!(a.orthogonality_defect() < 1e-5);
    assert!(a.bias().is_none());
    assert_eq!(a.meta()["space_id"], "rot:3");
}
