//! Krippendorff's alpha for nominal labels, on the four-unit worked grid and
//! on a grid with missing ratings.

use hypermod::eval::{krippendorff_alpha, AgreementReport};
use hypermod::fixtures::worked_agreement_grid;

pub fn run() -> hypermod::Result<(AgreementReport, AgreementReport)> {
    let worked = krippendorff_alpha(&worked_agreement_grid())?;
    let sparse = vec![
        vec![Some("toxic"), Some("toxic"), None],
        vec![Some("clean"), Some("clean"), Some("clean")],
        vec![Some("spam"), Some("clean"), Some("spam")],
        vec![None, Some("toxic"), Some("toxic")],
        vec![Some("clean"), None, None],
    ];
    Ok((worked, krippendorff_alpha(&sparse)?))
}

fn main() -> hypermod::Result<()> {
    let (worked, sparse) = run()?;
    println!("worked grid: alpha = {:.4} (8/15 = {:.4})", worked.alpha, 8.0 / 15.0);
    println!("  D_o = {:.4}, D_e = {:.4}", worked.observed_disagreement, worked.expected_disagreement);
    println!("sparse grid: alpha = {:.4} over {} pairable values", sparse.alpha, sparse.n);
    Ok(())
}
