#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReactionParams {
    pub reaction_rate: f64,
    pub stoichiometry: f64,
}

/// Volumetric first-order dissolution over `dt`:
/// `d eps = dt k_r c (1 - eps)`, `d c = -stoichiometry * d eps`.
///
/// Porosity is capped at 1 and concentration at 0; returns the number of cells
/// where either cap was hit.
pub fn step_dissolution(c: &mut [f64], eps: &mut [f64], p: &ReactionParams, dt: f64) -> u64 {
    let mut clamps = 0;
    for (ci, ei) in c.iter_mut().zip(eps.iter_mut()) {
        let d_eps = dt * p.reaction_rate * *ci * (1.0 - *ei);
        if d_eps <= 0.0 {
            continue;
        }
        let mut next = *ei + d_eps;
        if next > 1.0 {
            next = 1.0;
            clamps += 1;
        }
        *ei = next;
        let sink = p.stoichiometry * d_eps;
        if sink > *ci {
            *ci = 0.0;
            clamps += 1;
        } else {
            *ci -= sink;
        }
    }
    clamps
}
