//! Batched evaluation of the flow map network, its forward-mode `τ` tangent,
//! and reverse-mode parameter gradients of both.
//!
//! Rows of every matrix are samples. The network, per sample:
//!
//! ```text
//! g_l  = tanh(τ m_l)                       (τ normalized by τ_max)
//! z0   = g_0 ⊙ f_nu(x,t)
//! z1   = z0 + g_1 ⊙ swish(z0 ⊙ (W1 f_tau(x,t)))
//! zl   = z(l-1) + g_l ⊙ swish(W_l z(l-1))       l = 2 .. L-1
//! Φ    = x + D ⊙ (W_out z(L-1))                 D = half extent per axis
//! ```
//!
//! The tangent pass carries `ż = ∂z/∂τ` alongside `z`; the encoders do not
//! depend on `τ`, so their tangent is zero.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::activation::{swish, swish3};
use super::layout::EncoderIds;
use super::NifmModel;
use crate::lattice::{stencil, to_lattice, MAX_RANK};

/// f64 copies of the dense tensors, built once per batch evaluation.
pub(crate) struct Weights {
    pub nu_layers: Vec<Array2<f64>>,
    pub tau_layers: Vec<Array2<f64>>,
    pub gates: Vec<Array1<f64>>,
    pub residual: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn matrix(model: &NifmModel, id: usize) -> Array2<f64> {
    let info = &model.layout.tensors[id];
    let data = model.params[info.range()].iter().map(|&v| v as f64).collect();
    Array2::from_shape_vec((info.shape[0], info.shape[1]), data).unwrap()
}

fn vector(model: &NifmModel, id: usize) -> Array1<f64> {
    let info = &model.layout.tensors[id];
    model.params[info.range()].iter().map(|&v| v as f64).collect()
}

impl Weights {
    pub fn new(model: &NifmModel) -> Self {
        let l = &model.layout;
        Weights {
            nu_layers: l.nu.layers.iter().map(|&i| matrix(model, i)).collect(),
            tau_layers: l.tau.layers.iter().map(|&i| matrix(model, i)).collect(),
            gates: l.gates.iter().map(|&i| vector(model, i)).collect(),
            residual: l.residual.iter().map(|&i| matrix(model, i)).collect(),
            output: matrix(model, l.output),
        }
    }
}

/// Intermediate values of one encoder stack.
pub(crate) struct EncoderTape {
    /// Pre-activations of the hidden layers.
    pub hidden_pre: Vec<Array2<f64>>,
    /// Inputs to each dense layer (features first, then activated hidden).
    pub layer_in: Vec<Array2<f64>>,
    pub out: Array2<f64>,
}

/// All intermediate values of the dual (value + τ-tangent) pass.
pub(crate) struct FlowTape {
    pub tau_n: Vec<f64>,
    pub nu: EncoderTape,
    pub tau: EncoderTape,
    /// `W1 f_tau`.
    pub c: Array2<f64>,
    pub g: Vec<Array2<f64>>,
    pub gdot: Vec<Array2<f64>>,
    pub z: Vec<Array2<f64>>,
    pub zdot: Vec<Array2<f64>>,
    /// Per residual block (index 0 is block 1): pre-activation tangent and
    /// Swish derivatives.
    pub udot: Vec<Array2<f64>>,
    pub s: Vec<Array2<f64>>,
    pub ds: Vec<Array2<f64>>,
    pub dds: Vec<Array2<f64>>,
}

impl NifmModel {
    /// Physical-units factor applied to the output projection, per axis.
    pub(crate) fn half_extent(&self) -> Vec<f64> {
        let d = &self.norm.domain;
        (0..d.n).map(|a| 0.5 * d.extent(a)).collect()
    }

    pub(crate) fn velocity_scale(&self) -> Vec<f64> {
        self.half_extent()
            .into_iter()
            .map(|h| h / self.norm.tau_max)
            .collect()
    }

    /// Interpolated, concatenated grid features for each row.
    pub(crate) fn grid_features(&self, ids: &EncoderIds, x: ArrayView2<f64>, t: &[f64]) -> Array2<f64> {
        let fd = self.arch.feat_dim;
        let levels = ids.grids.len();
        let dom = &self.norm.domain;
        let n = dom.n;
        let mut h = Array2::zeros((x.nrows(), fd * levels));
        let mut coords = [0.0; MAX_RANK];
        for (mut row, (xr, &tr)) in h.outer_iter_mut().zip(x.outer_iter().zip(t)) {
            for (l, &gid) in ids.grids.iter().enumerate() {
                let res = &self.arch.resolutions[l];
                coords[0] = to_lattice(tr, dom.t_lo, dom.t_hi, res[0]);
                for a in 0..n {
                    coords[a + 1] = to_lattice(xr[a], dom.lo[a], dom.hi[a], res[a + 1]);
                }
                let st = stencil(res, &coords[..n + 1]);
                let base = self.layout.tensors[gid].offset;
                let out = row.slice_mut(ndarray::s![l * fd..(l + 1) * fd]);
                let out = out.into_slice().unwrap();
                for (node, w) in st.iter() {
                    let vals = &self.params[base + node * fd..base + (node + 1) * fd];
                    for (o, &v) in out.iter_mut().zip(vals) {
                        *o += w * v as f64;
                    }
                }
            }
        }
        h
    }

    /// Adds `w * adj` of each row's features into the grid gradients.
    fn scatter_grid_grads(
        &self,
        ids: &EncoderIds,
        x: ArrayView2<f64>,
        t: &[f64],
        adj: &Array2<f64>,
        grads: &mut [f64],
    ) {
        let fd = self.arch.feat_dim;
        let dom = &self.norm.domain;
        let n = dom.n;
        let mut coords = [0.0; MAX_RANK];
        for ((xr, &tr), arow) in x.outer_iter().zip(t).zip(adj.outer_iter()) {
            for (l, &gid) in ids.grids.iter().enumerate() {
                let res = &self.arch.resolutions[l];
                coords[0] = to_lattice(tr, dom.t_lo, dom.t_hi, res[0]);
                for a in 0..n {
                    coords[a + 1] = to_lattice(xr[a], dom.lo[a], dom.hi[a], res[a + 1]);
                }
                let st = stencil(res, &coords[..n + 1]);
                let base = self.layout.tensors[gid].offset;
                let a = arow.slice(ndarray::s![l * fd..(l + 1) * fd]);
                for (node, w) in st.iter() {
                    let g = &mut grads[base + node * fd..base + (node + 1) * fd];
                    for (gi, &ai) in g.iter_mut().zip(a.iter()) {
                        *gi += w * ai;
                    }
                }
            }
        }
    }

    pub(crate) fn encode(
        &self,
        ids: &EncoderIds,
        layers: &[Array2<f64>],
        x: ArrayView2<f64>,
        t: &[f64],
    ) -> EncoderTape {
        let features = self.grid_features(ids, x, t);
        let mut hidden_pre = Vec::new();
        let mut cur = features.dot(&layers[0].t());
        let mut layer_in = vec![features];
        for w in &layers[1..] {
            let act = cur.mapv(swish);
            hidden_pre.push(cur);
            cur = act.dot(&w.t());
            layer_in.push(act);
        }
        EncoderTape {
            hidden_pre,
            layer_in,
            out: cur,
        }
    }

    /// Encoder output only.
    pub(crate) fn encode_out(
        &self,
        ids: &EncoderIds,
        layers: &[Array2<f64>],
        x: ArrayView2<f64>,
        t: &[f64],
    ) -> Array2<f64> {
        let mut cur = self.grid_features(ids, x, t).dot(&layers[0].t());
        for w in &layers[1..] {
            cur = cur.mapv(swish).dot(&w.t());
        }
        cur
    }

    fn encoder_backward(
        &self,
        ids: &EncoderIds,
        layers: &[Array2<f64>],
        tape: &EncoderTape,
        x: ArrayView2<f64>,
        t: &[f64],
        adj_out: Array2<f64>,
        grads: &mut [f64],
    ) {
        let mut adj = adj_out;
        for i in (0..layers.len()).rev() {
            let gw = adj.t().dot(&tape.layer_in[i]);
            add_into(grads, self.layout.tensors[ids.layers[i]].range(), &gw);
            let mut prev = adj.dot(&layers[i]);
            if i > 0 {
                Zip::from(&mut prev)
                    .and(&tape.hidden_pre[i - 1])
                    .for_each(|p, &u| *p *= swish3(u).1);
            }
            adj = prev;
        }
        self.scatter_grid_grads(ids, x, t, &adj, grads);
    }

    /// Closed-form instantaneous velocity `D/τ_max ⊙ W_out (m0 ⊙ f_nu)` in
    /// physical units.
    pub(crate) fn velocity_rows(&self, w: &Weights, x: ArrayView2<f64>, t: &[f64]) -> Array2<f64> {
        let a = self.encode_out(&self.layout.nu, &w.nu_layers, x, t);
        self.velocity_from_features(w, &a)
    }

    fn velocity_from_features(&self, w: &Weights, a: &Array2<f64>) -> Array2<f64> {
        let q = a * &w.gates[0];
        let mut v = q.dot(&w.output.t());
        scale_columns(&mut v, &self.velocity_scale());
        v
    }

    fn normalized_tau(&self, tau: &[f64]) -> Vec<f64> {
        tau.iter().map(|&s| s / self.norm.tau_max).collect()
    }

    /// Flow map endpoints, value pass only.
    pub(crate) fn flow_rows(
        &self,
        w: &Weights,
        x: ArrayView2<f64>,
        t: &[f64],
        tau: &[f64],
    ) -> Array2<f64> {
        let tn = self.normalized_tau(tau);
        let a = self.encode_out(&self.layout.nu, &w.nu_layers, x, t);
        let b = self.encode_out(&self.layout.tau, &w.tau_layers, x, t);
        let c = b.dot(&w.residual[0].t());
        let gate = |m: &Array1<f64>| gate_matrix(&tn, m).0;
        let mut z = gate(&w.gates[0]) * &a;
        for l in 1..self.arch.depth {
            let u = if l == 1 {
                &z * &c
            } else {
                z.dot(&w.residual[l - 1].t())
            };
            let g = gate(&w.gates[l]);
            Zip::from(&mut z)
                .and(&g)
                .and(&u)
                .for_each(|zi, &gi, &ui| *zi += gi * swish(ui));
        }
        let mut delta = z.dot(&w.output.t());
        scale_columns(&mut delta, &self.half_extent());
        delta + &x
    }

    /// Dual pass: endpoints, `∂Φ/∂τ` (physical units) and the tape.
    pub(crate) fn flow_dual(
        &self,
        w: &Weights,
        x: ArrayView2<f64>,
        t: &[f64],
        tau: &[f64],
    ) -> (Array2<f64>, Array2<f64>, FlowTape) {
        let tn = self.normalized_tau(tau);
        let nu = self.encode(&self.layout.nu, &w.nu_layers, x, t);
        let taut = self.encode(&self.layout.tau, &w.tau_layers, x, t);
        let c = taut.out.dot(&w.residual[0].t());
        let depth = self.arch.depth;
        let mut g = Vec::with_capacity(depth);
        let mut gdot = Vec::with_capacity(depth);
        for m in &w.gates {
            let (gv, gd) = gate_matrix(&tn, m);
            g.push(gv);
            gdot.push(gd);
        }
        let mut z = vec![&g[0] * &nu.out];
        let mut zdot = vec![&gdot[0] * &nu.out];
        let (mut uds, mut ss, mut dss, mut ddss) = (vec![], vec![], vec![], vec![]);
        for l in 1..depth {
            let (zp, zdp) = (&z[l - 1], &zdot[l - 1]);
            let (u, ud) = if l == 1 {
                (zp * &c, zdp * &c)
            } else {
                let wt = w.residual[l - 1].t();
                (zp.dot(&wt), zdp.dot(&wt))
            };
            let mut s = Array2::zeros(u.raw_dim());
            let mut ds = Array2::zeros(u.raw_dim());
            let mut dds = Array2::zeros(u.raw_dim());
            Zip::from(&mut s)
                .and(&mut ds)
                .and(&mut dds)
                .and(&u)
                .for_each(|s, ds, dds, &ui| {
                    (*s, *ds, *dds) = swish3(ui);
                });
            let mut zn = zp.clone();
            let mut zdn = zdp.clone();
            {
                let (zi, zdi) = (slice_mut(&mut zn), slice_mut(&mut zdn));
                let (gi, gdi) = (slice(&g[l]), slice(&gdot[l]));
                let (si, dsi, udi) = (slice(&s), slice(&ds), slice(&ud));
                for i in 0..zi.len() {
                    zi[i] += gi[i] * si[i];
                    zdi[i] += gdi[i] * si[i] + gi[i] * (dsi[i] * udi[i]);
                }
            }
            z.push(zn);
            zdot.push(zdn);
            uds.push(ud);
            ss.push(s);
            dss.push(ds);
            ddss.push(dds);
        }
        let last = depth - 1;
        let mut delta = z[last].dot(&w.output.t());
        scale_columns(&mut delta, &self.half_extent());
        let pos = delta + &x;
        let mut deriv = zdot[last].dot(&w.output.t());
        scale_columns(&mut deriv, &self.velocity_scale());
        let tape = FlowTape {
            tau_n: tn,
            nu,
            tau: taut,
            c,
            g,
            gdot,
            z,
            zdot,
            udot: uds,
            s: ss,
            ds: dss,
            dds: ddss,
        };
        (pos, deriv, tape)
    }

    /// Accumulates gradients of `Σ_rows adj · ∂Φ/∂τ` into `grads`.
    pub(crate) fn tangent_backward(
        &self,
        w: &Weights,
        tape: &FlowTape,
        x: ArrayView2<f64>,
        t: &[f64],
        adj_deriv: &Array2<f64>,
        grads: &mut [f64],
    ) {
        let lay = &self.layout;
        let depth = self.arch.depth;
        let last = depth - 1;
        let mut e = adj_deriv.clone();
        scale_columns(&mut e, &self.velocity_scale());
        add_into(grads, lay.tensors[lay.output].range(), &e.t().dot(&tape.zdot[last]));
        let mut zd_adj = e.dot(&w.output);
        let mut z_adj = Array2::<f64>::zeros(zd_adj.raw_dim());
        let mut c_adj = None;
        for l in (1..depth).rev() {
            let b = l - 1;
            let (g, gd) = (&tape.g[l], &tape.gdot[l]);
            let (s, ds, dds, ud) = (&tape.s[b], &tape.ds[b], &tape.dds[b], &tape.udot[b]);
            let mut u_adj = Array2::zeros(zd_adj.raw_dim());
            let mut ud_adj = Array2::zeros(zd_adj.raw_dim());
            let mut g_adj = Array2::zeros(zd_adj.raw_dim());
            let mut gd_adj = Array2::zeros(zd_adj.raw_dim());
            // Elementwise adjoints of the block
            //   z_l = z_{l-1} + g ⊙ s
            //   ż_l = ż_{l-1} + ġ ⊙ s + g ⊙ (s' ⊙ u̇)
            {
                let (ua, uda) = (slice_mut(&mut u_adj), slice_mut(&mut ud_adj));
                let (ga, gda) = (slice_mut(&mut g_adj), slice_mut(&mut gd_adj));
                let (zda, za) = (slice(&zd_adj), slice(&z_adj));
                let (g, gd, s) = (slice(g), slice(gd), slice(s));
                let (ds, dds, ud) = (slice(ds), slice(dds), slice(ud));
                for i in 0..ua.len() {
                    let s_adj = zda[i] * gd[i] + za[i] * g[i];
                    let sd_adj = zda[i] * g[i];
                    gda[i] = zda[i] * s[i];
                    ga[i] = zda[i] * ds[i] * ud[i] + za[i] * s[i];
                    uda[i] = sd_adj * ds[i];
                    ua[i] = s_adj * ds[i] + sd_adj * dds[i] * ud[i];
                }
            }
            self.gate_grads(lay.gates[l], &w.gates[l], &tape.tau_n, g, &g_adj, &gd_adj, grads);
            if l == 1 {
                let (z0, zd0) = (&tape.z[0], &tape.zdot[0]);
                c_adj = Some(&u_adj * z0 + &ud_adj * zd0);
                z_adj += &(&u_adj * &tape.c);
                zd_adj += &(&ud_adj * &tape.c);
            } else {
                let wl = &w.residual[l - 1];
                let (zp, zdp) = (&tape.z[l - 1], &tape.zdot[l - 1]);
                let gw = u_adj.t().dot(zp) + ud_adj.t().dot(zdp);
                add_into(grads, lay.tensors[lay.residual[l - 1]].range(), &gw);
                z_adj += &u_adj.dot(wl);
                zd_adj += &ud_adj.dot(wl);
            }
        }
        // block 0: z0 = g0 ⊙ a, ż0 = ġ0 ⊙ a
        let a = &tape.nu.out;
        let a_adj = &z_adj * &tape.g[0] + &zd_adj * &tape.gdot[0];
        let g0_adj = &z_adj * a;
        let gd0_adj = &zd_adj * a;
        self.gate_grads(lay.gates[0], &w.gates[0], &tape.tau_n, &tape.g[0], &g0_adj, &gd0_adj, grads);
        if let Some(c_adj) = c_adj {
            let gw1 = c_adj.t().dot(&tape.tau.out);
            add_into(grads, lay.tensors[lay.residual[0]].range(), &gw1);
            let b_adj = c_adj.dot(&w.residual[0]);
            self.encoder_backward(&lay.tau, &w.tau_layers, &tape.tau, x, t, b_adj, grads);
        }
        self.encoder_backward(&lay.nu, &w.nu_layers, &tape.nu, x, t, a_adj, grads);
    }

    /// Gradient of the gate vector `m` given adjoints of `g = tanh(τ m)` and
    /// `ġ = m (1 - g²)`.
    #[allow(clippy::too_many_arguments)]
    fn gate_grads(
        &self,
        id: usize,
        m: &Array1<f64>,
        tau_n: &[f64],
        g: &Array2<f64>,
        g_adj: &Array2<f64>,
        gd_adj: &Array2<f64>,
        grads: &mut [f64],
    ) {
        let range = self.layout.tensors[id].range();
        let out = &mut grads[range];
        for (r, &tn) in tau_n.iter().enumerate() {
            let (gr, ga, gda) = (g.row(r), g_adj.row(r), gd_adj.row(r));
            for j in 0..m.len() {
                let sech2 = 1.0 - gr[j] * gr[j];
                out[j] += ga[j] * tn * sech2 + gda[j] * sech2 * (1.0 - 2.0 * m[j] * gr[j] * tn);
            }
        }
    }

    /// Accumulates gradients of `Σ_rows adj · v(x,t)` for the closed-form
    /// velocity network.
    pub(crate) fn velocity_backward(
        &self,
        w: &Weights,
        x: ArrayView2<f64>,
        t: &[f64],
        adj_v: &Array2<f64>,
        grads: &mut [f64],
    ) {
        let lay = &self.layout;
        let tape = self.encode(&lay.nu, &w.nu_layers, x, t);
        let mut e = adj_v.clone();
        scale_columns(&mut e, &self.velocity_scale());
        let q = &tape.out * &w.gates[0];
        add_into(grads, lay.tensors[lay.output].range(), &e.t().dot(&q));
        let q_adj = e.dot(&w.output);
        let m_grad = (&q_adj * &tape.out).sum_axis(Axis(0));
        add_into_vec(grads, lay.tensors[lay.gates[0]].range(), m_grad.iter());
        let a_adj = q_adj * &w.gates[0];
        self.encoder_backward(&lay.nu, &w.nu_layers, &tape, x, t, a_adj, grads);
    }
}

/// `tanh(τ_r m_j)` and `m_j (1 - tanh²)` per row `r` and unit `j`.
fn gate_matrix(tau_n: &[f64], m: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
    let d = m.len();
    let mut g = Array2::zeros((tau_n.len(), d));
    let mut gd = Array2::zeros((tau_n.len(), d));
    for (r, &tn) in tau_n.iter().enumerate() {
        for j in 0..d {
            let v = (tn * m[j]).tanh();
            g[[r, j]] = v;
            gd[[r, j]] = m[j] * (1.0 - v * v);
        }
    }
    (g, gd)
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn scale_columns(a: &mut Array2<f64>, scale: &[f64]) {
    for mut row in a.outer_iter_mut() {
        for (v, s) in row.iter_mut().zip(scale) {
            *v *= s;
        }
    }
}

fn add_into(grads: &mut [f64], range: std::ops::Range<usize>, g: &Array2<f64>) {
    add_into_vec(grads, range, g.iter());
}

fn add_into_vec<'a>(
    grads: &mut [f64],
    range: std::ops::Range<usize>,
    g: impl Iterator<Item = &'a f64>,
) {
    for (o, v) in grads[range].iter_mut().zip(g) {
        *o += v;
    }
}
