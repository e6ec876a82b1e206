//! Euler propagation of the LNA moment equations and of their exact
//! parameter sensitivities.
//!
//! One substep of size `Δz` maps
//!
//! ```text
//! s̄ ← s̄ + μ(s̄) Δz
//! φ ← φ + A φ Δz
//! Ψ ← Ψ + (A Ψ + Ψ Aᵀ + D(s̄)) Δz          A = ∇_s μ at the pre-step s̄
//! ```
//!
//! and the sensitivities are the term-by-term derivative of that same map,
//! so the gradient is exact for the discretized likelihood. Every quantity is
//! assembled reaction by reaction: `A = Σ_k C_k (∇_s v_k)ᵀ` and
//! `D = Σ_k v_k C_k C_kᵀ`, which keeps the inner loops to the nonzero
//! stoichiometry and reactant entries.

use crate::error::{Error, Result};
use crate::lna::{LnaState, Sensitivities};
use crate::network::ReactionNetwork;

/// Scratch buffers reused across substeps and calls.
#[derive(Debug, Clone, Default)]
pub struct PredictWorkspace {
    // per reaction
    mono: Vec<f64>,
    rate: Vec<f64>,
    active: Vec<bool>,
    // per reactant entry, offset by `grad_off[k]`
    grad_off: Vec<usize>,
    grad: Vec<f64>,
    vs: Vec<f64>,
    dvs: Vec<f64>,
    hess_off: Vec<usize>,
    hess: Vec<f64>,
    dv: Vec<f64>,
    // per species / species²
    mu: Vec<f64>,
    phidot: Vec<f64>,
    ap: Vec<f64>,
    x: Vec<f64>,
    dmdot: Vec<f64>,
    dphidot: Vec<f64>,
    row: Vec<f64>,
    // packed upper triangle of C_k C_kᵀ per reaction, offset by `tri_off[k]`
    tri_off: Vec<usize>,
    tri: Vec<(usize, f64)>,
    d_acc: Vec<f64>,
    // dense C_k C_kᵀ, row-major, one J×J block per reaction
    outer_dense: Vec<f64>,
}

impl PredictWorkspace {
    pub fn new(net: &ReactionNetwork) -> Self {
        let mut ws = Self::default();
        ws.resize(net);
        ws
    }

    fn resize(&mut self, net: &ReactionNetwork) {
        let j = net.species_count();
        let k = net.reaction_count();
        if self.mono.len() == k && self.mu.len() == j {
            return;
        }
        self.mono = vec![0.0; k];
        self.rate = vec![0.0; k];
        self.active = vec![false; k];
        self.dv = vec![0.0; k];
        self.grad_off.clear();
        self.hess_off.clear();
        let (mut g, mut h) = (0, 0);
        for r in &net.compiled {
            self.grad_off.push(g);
            self.hess_off.push(h);
            g += r.reactants.len();
            h += r.reactants.len() * r.reactants.len();
        }
        self.grad_off.push(g);
        self.hess_off.push(h);
        self.grad = vec![0.0; g];
        self.vs = vec![0.0; g];
        self.dvs = vec![0.0; g];
        self.hess = vec![0.0; h];
        self.mu = vec![0.0; j];
        self.phidot = vec![0.0; j];
        self.dmdot = vec![0.0; j];
        self.dphidot = vec![0.0; j];
        self.row = vec![0.0; j];
        self.ap = vec![0.0; j * j];
        self.x = vec![0.0; j * j];
        self.tri_off.clear();
        self.tri.clear();
        for r in &net.compiled {
            self.tri_off.push(self.tri.len());
            for &(a, b, c) in &r.outer {
                self.tri.push((tri_index(a, b, j), c));
            }
        }
        self.tri_off.push(self.tri.len());
        self.d_acc = vec![0.0; j * (j + 1) / 2];
        self.outer_dense = vec![0.0; k * j * j];
        for (kk, r) in net.compiled.iter().enumerate() {
            let block = &mut self.outer_dense[kk * j * j..(kk + 1) * j * j];
            for &(a, b, c) in &r.outer {
                block[a * j + b] = c;
                block[b * j + a] = c;
            }
        }
    }
}

/// Position of `(a, b)`, `a ≤ b`, in a row-packed upper triangle.
fn tri_index(a: usize, b: usize, j: usize) -> usize {
    a * j - a * a.saturating_sub(1) / 2 + (b - a)
}

/// `Σ_k w_k C_k C_kᵀ` into the packed triangle `acc`.
fn accumulate_diffusion(ws_tri_off: &[usize], ws_tri: &[(usize, f64)], weights: &[f64], acc: &mut [f64]) {
    acc.fill(0.0);
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for &(t, c) in &ws_tri[ws_tri_off[k]..ws_tri_off[k + 1]] {
            acc[t] += c * w;
        }
    }
}

/// `m ← m + (X + Xᵀ + D) Δz` on a symmetric `m`, with `D` packed.
fn symmetric_step(m: &mut [f64], x: &[f64], d: &[f64], dz: f64, j: usize) {
    let mut t = 0;
    for a in 0..j {
        for b in a..j {
            let v = m[a * j + b] + (x[a * j + b] + x[b * j + a] + d[t]) * dz;
            m[a * j + b] = v;
            m[b * j + a] = v;
            t += 1;
        }
    }
}

/// Propagate `(s̄, φ, Ψ)` and optionally their sensitivities over `dt` with
/// `substeps` Euler steps, returning new values.
pub fn lna_predict(
    net: &ReactionNetwork,
    state: &LnaState,
    sens: Option<&Sensitivities>,
    theta: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<(LnaState, Option<Sensitivities>)> {
    let mut state = state.clone();
    let mut sens = sens.cloned();
    let mut ws = PredictWorkspace::new(net);
    predict_in_place(net, &mut state, sens.as_mut(), theta, dt, substeps, &mut ws)?;
    Ok((state, sens))
}

/// In-place variant of [`lna_predict`].
pub fn predict_in_place(
    net: &ReactionNetwork,
    state: &mut LnaState,
    mut sens: Option<&mut Sensitivities>,
    theta: &[f64],
    dt: f64,
    substeps: usize,
    ws: &mut PredictWorkspace,
) -> Result<()> {
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::Invalid(format!("predict needs dt > 0 and at least one substep (dt = {dt}, substeps = {substeps})")));
    }
    let j = net.species_count();
    if state.mean.len() != j || theta.len() != net.param_count() {
        return Err(Error::Dimension("LNA state or parameter length".into()));
    }
    ws.resize(net);
    let dz = dt / substeps as f64;
    let has_pert = state.pert_mean.iter().any(|&p| p != 0.0)
        || sens.as_ref().is_some_and(|s| s.d_pert.iter().any(|&p| p != 0.0));
    macro_rules! run {
        ($($n:literal)*) => {
            match j {
                $($n => {
                    for _ in 0..substeps {
                        substep_fixed::<$n>(net, state, sens.as_deref_mut(), theta, dz, has_pert, ws);
                    }
                })*
                _ => {
                    for _ in 0..substeps {
                        substep(net, state, sens.as_deref_mut(), theta, dz, has_pert, ws);
                    }
                }
            }
        };
    }
    run!(1 2 3 4 5 6 7 8);
    state.time += dt;
    let finite = state.mean.iter().chain(state.cov.iter()).all(|v| v.is_finite())
        && sens
            .as_ref()
            .is_none_or(|s| s.d_mean.iter().chain(s.d_cov.iter().flat_map(|m| m.iter())).all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite(state.time));
    }
    Ok(())
}

/// Mass-action rates and their state derivatives at `s`: `mono_k`, `v_k`,
/// `∂v_k/∂s` (`vs`), the monomial gradient (`grad`) and, with
/// sensitivities, its Hessian (`hess`). Reactions with a negative rate are
/// switched off together with their derivatives.
#[allow(clippy::too_many_arguments)]
fn rate_jets(
    net: &ReactionNetwork,
    s: &[f64],
    theta: &[f64],
    with_sens: bool,
    mono: &mut [f64],
    rate: &mut [f64],
    active: &mut [bool],
    grad_off: &[usize],
    grad: &mut [f64],
    vs: &mut [f64],
    hess_off: &[usize],
    hess: &mut [f64],
) {
    for (k, r) in net.compiled.iter().enumerate() {
        let (g0, g1) = (grad_off[k], grad_off[k + 1]);
        let m = if with_sens {
            r.monomial_jet(s, &mut grad[g0..g1], &mut hess[hess_off[k]..hess_off[k + 1]])
        } else {
            r.monomial_grad(s, &mut grad[g0..g1])
        };
        let th = theta[r.param];
        let on = th * m >= 0.0;
        active[k] = on;
        mono[k] = m;
        rate[k] = if on { th * m } else { 0.0 };
        let w = if on { th } else { 0.0 };
        for (v, &g) in vs[g0..g1].iter_mut().zip(&grad[g0..g1]) {
            *v = w * g;
        }
    }
}

type Mat<const J: usize> = [[f64; J]; J];

fn load<const J: usize>(m: &[f64]) -> Mat<J> {
    let mut out = [[0.0; J]; J];
    for (row, chunk) in out.iter_mut().zip(m.chunks_exact(J)) {
        row.copy_from_slice(chunk);
    }
    out
}

/// `out += a b`.
#[inline(always)]
fn mul_add<const J: usize>(out: &mut Mat<J>, a: &Mat<J>, b: &Mat<J>) {
    for i in 0..J {
        for k in 0..J {
            let aik = a[i][k];
            for c in 0..J {
                out[i][c] += aik * b[k][c];
            }
        }
    }
}

#[inline(always)]
fn mul_vec<const J: usize>(a: &Mat<J>, v: &[f64]) -> [f64; J] {
    let mut out = [0.0; J];
    for i in 0..J {
        for k in 0..J {
            out[i] += a[i][k] * v[k];
        }
    }
    out
}

/// `m ← m + (X + Xᵀ + D) Δz`; `m` and `d` symmetric, so is the result.
#[inline(always)]
fn symmetric_step_fixed<const J: usize>(m: &mut [f64], x: &Mat<J>, d: &Mat<J>, dz: f64) {
    for (a, chunk) in m.chunks_exact_mut(J).enumerate() {
        for b in 0..J {
            chunk[b] += (x[a][b] + x[b][a] + d[a][b]) * dz;
        }
    }
}

/// `Σ_k w_k C_k C_kᵀ` from the dense per-reaction blocks.
#[inline(always)]
fn diffusion_fixed<const J: usize>(outer_dense: &[f64], w: &[f64]) -> Mat<J> {
    let mut d = [[0.0; J]; J];
    for (block, &wk) in outer_dense.chunks_exact(J * J).zip(w) {
        for (row, src) in d.iter_mut().zip(block.chunks_exact(J)) {
            for (v, &c) in row.iter_mut().zip(src) {
                *v += c * wk;
            }
        }
    }
    d
}

/// [`substep`] for a species count known at compile time; the matrix
/// algebra runs on dense stack arrays.
fn substep_fixed<const J: usize>(
    net: &ReactionNetwork,
    state: &mut LnaState,
    sens: Option<&mut Sensitivities>,
    theta: &[f64],
    dz: f64,
    has_pert: bool,
    ws: &mut PredictWorkspace,
) {
    let with_sens = sens.is_some();
    let PredictWorkspace {
        mono,
        rate,
        active,
        grad_off,
        grad,
        vs,
        hess_off,
        hess,
        dv,
        outer_dense,
        ..
    } = ws;
    rate_jets(net, state.mean.as_slice(), theta, with_sens, mono, rate, active, grad_off, grad, vs, hess_off, hess);

    // A = Σ_k C_k (∇_s v_k)ᵀ and μ
    let mut a = [[0.0; J]; J];
    let mut mu = [0.0; J];
    for (k, r) in net.compiled.iter().enumerate() {
        let rk = rate[k];
        for &(i, ci) in &r.changes {
            mu[i] += ci * rk;
            for (&w, &(sa, _)) in vs[grad_off[k]..grad_off[k + 1]].iter().zip(&r.reactants) {
                a[i][sa] += ci * w;
            }
        }
    }
    let p: Mat<J> = load(state.cov.as_slice());
    let phi = state.pert_mean.as_slice();

    if let Some(sens) = sens {
        for l in 0..sens.d_cov.len() {
            let dm = &sens.d_mean.as_slice()[l * J..(l + 1) * J];
            let mut da = [[0.0; J]; J];
            let mut dmdot = [0.0; J];
            for (k, r) in net.compiled.iter().enumerate() {
                if !active[k] {
                    dv[k] = 0.0;
                    continue;
                }
                let (g0, g1, h0) = (grad_off[k], grad_off[k + 1], hess_off[k]);
                let nr = g1 - g0;
                let th = theta[r.param];
                let own = r.param == l;
                // total derivatives of v_k and ∇_s v_k along η_l
                let mut dvk = if own { mono[k] } else { 0.0 };
                for (ai, &(sa, _)) in r.reactants.iter().enumerate() {
                    dvk += vs[g0 + ai] * dm[sa];
                    let mut d = if own { grad[g0 + ai] } else { 0.0 };
                    for (&h, &(sb, _)) in hess[h0 + ai * nr..h0 + (ai + 1) * nr].iter().zip(&r.reactants) {
                        d += th * h * dm[sb];
                    }
                    for &(i, ci) in &r.changes {
                        da[i][sa] += ci * d;
                    }
                }
                dv[k] = dvk;
                for &(i, ci) in &r.changes {
                    dmdot[i] += ci * dvk;
                }
            }
            let dp: Mat<J> = load(sens.d_cov[l].as_slice());
            let mut x = [[0.0; J]; J];
            mul_add(&mut x, &a, &dp);
            mul_add(&mut x, &da, &p);
            let dd = diffusion_fixed::<J>(outer_dense, dv);
            symmetric_step_fixed(sens.d_cov[l].as_mut_slice(), &x, &dd, dz);
            if has_pert {
                let dphi = &sens.d_pert.as_slice()[l * J..(l + 1) * J];
                let t1 = mul_vec(&a, dphi);
                let t2 = mul_vec(&da, phi);
                for (i, v) in sens.d_pert.as_mut_slice()[l * J..(l + 1) * J].iter_mut().enumerate() {
                    *v += (t1[i] + t2[i]) * dz;
                }
            }
            for (m, &d) in sens.d_mean.as_mut_slice()[l * J..(l + 1) * J].iter_mut().zip(&dmdot) {
                *m += d * dz;
            }
        }
    }

    let mut ap = [[0.0; J]; J];
    mul_add(&mut ap, &a, &p);
    let d = diffusion_fixed::<J>(outer_dense, rate);
    if has_pert {
        let phidot = mul_vec(&a, phi);
        for (v, d) in state.pert_mean.as_mut_slice().iter_mut().zip(phidot) {
            *v += d * dz;
        }
    }
    symmetric_step_fixed(state.cov.as_mut_slice(), &ap, &d, dz);
    for (m, d) in state.mean.as_mut_slice().iter_mut().zip(mu) {
        *m += d * dz;
    }
}

fn substep(
    net: &ReactionNetwork,
    state: &mut LnaState,
    sens: Option<&mut Sensitivities>,
    theta: &[f64],
    dz: f64,
    has_pert: bool,
    ws: &mut PredictWorkspace,
) {
    let j = net.species_count();
    let jj = j * j;
    let with_sens = sens.is_some();
    let PredictWorkspace {
        mono,
        rate,
        active,
        grad_off,
        grad,
        vs,
        dvs,
        hess_off,
        hess,
        dv,
        mu,
        phidot,
        ap,
        x,
        dmdot,
        dphidot,
        row,
        tri_off,
        tri,
        d_acc,
        ..
    } = ws;
    let (mu, phidot, dmdot, dphidot, row) = (&mut mu[..j], &mut phidot[..j], &mut dmdot[..j], &mut dphidot[..j], &mut row[..j]);
    let (ap, x) = (&mut ap[..jj], &mut x[..jj]);
    let s = state.mean.as_slice();
    let p = &state.cov.as_slice()[..jj];
    let phi = state.pert_mean.as_slice();

    rate_jets(net, s, theta, with_sens, mono, rate, active, grad_off, grad, vs, hess_off, hess);

    // μ, A Ψ (row-major, ap[i * j + c]) and A φ
    mu.fill(0.0);
    ap.fill(0.0);
    phidot.fill(0.0);
    for (k, r) in net.compiled.iter().enumerate() {
        for &(i, ci) in &r.changes {
            mu[i] += ci * rate[k];
        }
        if !active[k] || r.reactants.is_empty() {
            continue;
        }
        let w = &vs[grad_off[k]..grad_off[k + 1]];
        accumulate_rows(row, w, &r.reactants, p, None, j);
        let aphi = if has_pert { dot_reactants(w, &r.reactants, phi) } else { 0.0 };
        for &(i, ci) in &r.changes {
            for (d, &v) in ap[i * j..(i + 1) * j].iter_mut().zip(row.iter()) {
                *d += ci * v;
            }
            phidot[i] += ci * aphi;
        }
    }

    if let Some(sens) = sens {
        let n_eta = sens.d_cov.len();
        for l in 0..n_eta {
            let dm = &sens.d_mean.as_slice()[l * j..(l + 1) * j];
            let dphi = &sens.d_pert.as_slice()[l * j..(l + 1) * j];
            let dp = &sens.d_cov[l].as_slice()[..jj];
            dmdot.fill(0.0);
            dphidot.fill(0.0);
            x.fill(0.0);
            for (k, r) in net.compiled.iter().enumerate() {
                if !active[k] {
                    dv[k] = 0.0;
                    continue;
                }
                let (g0, g1, h0) = (grad_off[k], grad_off[k + 1], hess_off[k]);
                let nr = g1 - g0;
                let th = theta[r.param];
                let own = r.param == l;
                // total derivative of v_k and ∇_s v_k along η_l
                let w = &vs[g0..g1];
                let mut dvk = if own { mono[k] } else { 0.0 };
                dvk += dot_reactants(w, &r.reactants, dm);
                let dw = &mut dvs[g0..g1];
                for (a, d) in dw.iter_mut().enumerate() {
                    let h = &hess[h0 + a * nr..h0 + (a + 1) * nr];
                    let own_term = if own { grad[g0 + a] } else { 0.0 };
                    *d = own_term + th * dot_reactants(h, &r.reactants, dm);
                }
                dv[k] = dvk;
                for &(i, ci) in &r.changes {
                    dmdot[i] += ci * dvk;
                }
                if nr == 0 {
                    continue;
                }
                // row_k = Σ_a vs_a dΨ[sa, :] + dvs_a Ψ[sa, :]
                let dw = &dvs[g0..g1];
                accumulate_rows(row, w, &r.reactants, dp, Some((dw, p)), j);
                let dphi_term = if has_pert {
                    dot_reactants(w, &r.reactants, dphi) + dot_reactants(dw, &r.reactants, phi)
                } else {
                    0.0
                };
                for &(i, ci) in &r.changes {
                    for (d, &v) in x[i * j..(i + 1) * j].iter_mut().zip(row.iter()) {
                        *d += ci * v;
                    }
                    dphidot[i] += ci * dphi_term;
                }
            }
            // dΨ ← dΨ + (X + Xᵀ + Σ_k dv_k C_k C_kᵀ) Δz
            accumulate_diffusion(tri_off, tri, dv, d_acc);
            symmetric_step(sens.d_cov[l].as_mut_slice(), x, d_acc, dz, j);
            for (m, &d) in sens.d_mean.as_mut_slice()[l * j..(l + 1) * j].iter_mut().zip(dmdot.iter()) {
                *m += d * dz;
            }
            if has_pert {
                for (m, &d) in sens.d_pert.as_mut_slice()[l * j..(l + 1) * j].iter_mut().zip(dphidot.iter()) {
                    *m += d * dz;
                }
            }
        }
    }

    // Ψ ← Ψ + (AΨ + ΨAᵀ + D) Δz
    accumulate_diffusion(tri_off, tri, rate, d_acc);
    symmetric_step(state.cov.as_mut_slice(), ap, d_acc, dz, j);
    for (m, &d) in state.mean.as_mut_slice().iter_mut().zip(mu.iter()) {
        *m += d * dz;
    }
    if has_pert {
        for (m, &d) in state.pert_mean.as_mut_slice().iter_mut().zip(phidot.iter()) {
            *m += d * dz;
        }
    }
}

/// `Σ_a w_a v[s_a]` over the reactant species.
#[inline]
fn dot_reactants(w: &[f64], reactants: &[(usize, u32)], v: &[f64]) -> f64 {
    w.iter().zip(reactants).map(|(&wa, &(sa, _))| wa * v[sa]).sum()
}

/// `row = Σ_a w_a m[s_a, :]`, plus `Σ_a w2_a m2[s_a, :]` when given.
#[inline]
fn accumulate_rows(
    row: &mut [f64],
    w: &[f64],
    reactants: &[(usize, u32)],
    m: &[f64],
    second: Option<(&[f64], &[f64])>,
    j: usize,
) {
    row.fill(0.0);
    for (&wa, &(sa, _)) in w.iter().zip(reactants) {
        for (r, &v) in row.iter_mut().zip(&m[sa * j..(sa + 1) * j]) {
            *r += wa * v;
        }
    }
    if let Some((w2, m2)) = second {
        for (&wa, &(sa, _)) in w2.iter().zip(reactants) {
            for (r, &v) in row.iter_mut().zip(&m2[sa * j..(sa + 1) * j]) {
                *r += wa * v;
            }
        }
    }
}
