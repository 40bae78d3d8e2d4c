//! CSV emission. Every real is written with 17 significant digits in
//! scientific notation, which round-trips binary doubles exactly and does
//! not depend on locale.

use std::fmt::Write as _;

use klspec::pf::TrajectoryRow;

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// `theta,phi_hat,psi`.
pub fn phi_csv(theta: impl Iterator<Item = f64>, phi: &[f64], psi: &[f64]) -> String {
    let mut out = String::from("theta,phi_hat,psi\n");
    for ((t, f), p) in theta.zip(phi).zip(psi) {
        writeln!(out, "{},{},{}", real(t), real(*f), real(*p)).expect("writing to a String");
    }
    out
}

/// `iter,J,delta_J,fp_residual,min_eig,trace_err`.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("iter,J,delta_J,fp_residual,min_eig,trace_err\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k,
            real(r.j),
            real(r.delta_j),
            real(r.fp_residual),
            real(r.min_eig),
            real(r.trace_err)
        )
        .expect("writing to a String");
    }
    out
}

/// `iter,J,delta_J,grad_norm` for the dual solver.
pub fn dual_trajectory_csv(j: &[f64], grad: &[f64]) -> String {
    let mut out = String::from("iter,J,delta_J,grad_norm\n");
    for (k, (jk, gk)) in j.iter().zip(grad).enumerate() {
        let delta = j.get(k + 1).map_or(0.0, |next| next - jk);
        writeln!(out, "{k},{},{},{}", real(*jk), real(delta), real(*gk)).expect("writing to a String");
    }
    out
}

pub struct ProbeRow {
    pub eps: f64,
    pub j_at_p: f64,
    pub j_at_perturbed: f64,
    pub escaped: bool,
}

/// `eps,J_at_P,J_at_perturbed,escaped`.
pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("eps,J_at_P,J_at_perturbed,escaped\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            real(r.eps),
            real(r.j_at_p),
            real(r.j_at_perturbed),
            r.escaped
        )
        .expect("writing to a String");
    }
    out
}

/// First row whose `J` exceeds its predecessor's by more than `slack`.
pub fn first_increase(rows: &[TrajectoryRow], slack: f64) -> Option<(usize, f64)> {
    rows.windows(2)
        .find(|w| w[1].j > w[0].j + slack)
        .map(|w| (w[1].k, w[1].j - w[0].j))
}
