//! Matrix exponential and φ₁ on a rotation generator, checked against cos/sin.

use pbs_sens::linalg::{exp_and_phi1, mat_exp, phi1, DenseMatrix};

fn main() -> pbs_sens::Result<()> {
    for theta in [0.1, 1.0, 10.0, 40.0] {
        let g = DenseMatrix::from_rows(&[&[0.0, -theta], &[theta, 0.0]]);
        let e = mat_exp(&g)?;
        let exact = DenseMatrix::from_rows(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]]);
        println!("theta = {theta:>5}: |e^G - R(theta)|_F = {:.2e}", (&e - &exact).frobenius_norm());
    }

    // (e^X - I) X⁻¹ without a solve; X is singular here
    let x = DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
    let (_, p) = exp_and_phi1(&x)?;
    println!("phi1 of a nilpotent block: {:?}", p);

    // (I - e^{-A}) A⁻¹, the form used by the exponential sensitivity step
    let a = DenseMatrix::from_rows(&[&[-2.0, 0.5], &[0.0, -1.0]]);
    println!("(I - e^-A) A^-1 = {:?}", phi1(&a)?);
    Ok(())
}
