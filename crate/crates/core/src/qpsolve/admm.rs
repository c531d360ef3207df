use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{QpError, QpProblem, QpSettings, QpSolution, QpStatus};

const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_LOOSE: f64 = 1e-6;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Loose,
    Ineq,
    Eq,
}

fn row_kinds(l: &DVector<f64>, u: &DVector<f64>) -> Vec<RowKind> {
    l.iter()
        .zip(u.iter())
        .map(|(&lo, &hi)| {
            if lo == hi {
                RowKind::Eq
            } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                RowKind::Loose
            } else {
                RowKind::Ineq
            }
        })
        .collect()
}

fn limit_scaling(v: f64) -> f64 {
    if v < SCALE_MIN {
        1.0
    } else {
        v.min(SCALE_MAX)
    }
}

/// Solver state bound to one problem structure (`P`, `A`). Only `q` and the
/// bounds can change between solves; the KKT factorization is reused and the
/// last iterate warm-starts the next solve.
#[derive(Debug, Clone)]
pub struct QpWorkspace {
    settings: QpSettings,
    problem: QpProblem,
    // scaled data: P̄ = c·D·P·D, q̄ = c·D·q, Ā = E·A·D, l̄ = E·l, ū = E·u
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
    kinds: Vec<RowKind>,
    /// `Āᵀ·Ā` restricted to inequality, equality and free rows.
    grams: [DMatrix<f64>; 3],
    rho_base: f64,
    rho: DVector<f64>,
    kkt: Cholesky<f64, Dyn>,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

impl QpWorkspace {
    pub fn new(problem: QpProblem, settings: QpSettings) -> Result<Self, QpError> {
        problem.validate()?;
        let n = problem.n();
        let m = problem.m();
        let mut p = problem.p.clone();
        let mut a = problem.a.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        for _ in 0..settings.scaling_iters {
            let dd = DVector::from_fn(n, |j, _| {
                let mut v = p.column(j).amax();
                if m > 0 {
                    v = v.max(a.column(j).amax());
                }
                1.0 / limit_scaling(v).sqrt()
            });
            let ee = DVector::from_fn(m, |i, _| 1.0 / limit_scaling(a.row(i).amax()).sqrt());
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= dd[i] * dd[j];
                }
                for i in 0..m {
                    a[(i, j)] *= ee[i] * dd[j];
                }
            }
            d.component_mul_assign(&dd);
            e.component_mul_assign(&ee);
        }
        let mean_col = if n > 0 {
            (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64
        } else {
            1.0
        };
        let q = (&problem.q).component_mul(&d);
        let c = 1.0 / limit_scaling(mean_col.max(q.amax()));
        p *= c;
        let q = q * c;
        let l = problem.l.component_mul(&e);
        let u = problem.u.component_mul(&e);
        let kinds = row_kinds(&problem.l, &problem.u);
        let grams = grams(&a, &kinds);
        let rho_base = settings.rho;
        let rho = rho_vector(&kinds, rho_base);
        let kkt = factor(&p, &grams, rho_base, settings.sigma)?;
        Ok(Self {
            settings,
            problem,
            p,
            q,
            a,
            l,
            u,
            d,
            e,
            c,
            kinds,
            grams,
            rho_base,
            rho,
            kkt,
            x: DVector::zeros(n),
            z: DVector::zeros(m),
            y: DVector::zeros(m),
        })
    }

    pub fn problem(&self) -> &QpProblem {
        &self.problem
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn update_q(&mut self, q: &DVector<f64>) -> Result<(), QpError> {
        if q.len() != self.problem.n() {
            return Err(QpError::Dimension(format!(
                "q has {} rows, expected {}",
                q.len(),
                self.problem.n()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("q"));
        }
        self.problem.q.copy_from(q);
        self.q = q.component_mul(&self.d) * self.c;
        Ok(())
    }

    /// Replaces the bounds; refactors only if a row switches between
    /// equality, inequality and free.
    pub fn update_bounds(&mut self, l: &DVector<f64>, u: &DVector<f64>) -> Result<(), QpError> {
        self.problem.check_bounds(l, u)?;
        self.problem.l.copy_from(l);
        self.problem.u.copy_from(u);
        self.l = l.component_mul(&self.e);
        self.u = u.component_mul(&self.e);
        let kinds = row_kinds(l, u);
        if kinds != self.kinds {
            self.kinds = kinds;
            self.grams = grams(&self.a, &self.kinds);
            self.set_rho(self.rho_base)?;
        }
        Ok(())
    }

    /// Sets the starting iterate from an unscaled primal/dual pair.
    pub fn warm_start(&mut self, x: &DVector<f64>, y: &DVector<f64>) -> Result<(), QpError> {
        if x.len() != self.problem.n() || y.len() != self.problem.m() {
            return Err(QpError::Dimension("warm start".into()));
        }
        self.x = x.component_div(&self.d);
        self.y = y.component_div(&self.e) * self.c;
        self.z = &self.a * &self.x;
        for i in 0..self.z.len() {
            self.z[i] = self.z[i].max(self.l[i]).min(self.u[i]);
        }
        Ok(())
    }

    /// Current penalty parameter of inequality rows.
    pub fn rho(&self) -> f64 {
        self.rho_base
    }

    fn set_rho(&mut self, rho: f64) -> Result<(), QpError> {
        let kkt = factor(&self.p, &self.grams, rho, self.settings.sigma)?;
        self.rho_base = rho;
        self.rho = rho_vector(&self.kinds, rho);
        self.kkt = kkt;
        Ok(())
    }

    /// Zero iterate and the initial penalty parameter.
    pub fn cold_start(&mut self) {
        self.x.fill(0.0);
        self.z.fill(0.0);
        self.y.fill(0.0);
        if self.rho_base != self.settings.rho {
            let _ = self.set_rho(self.settings.rho);
        }
    }

    pub fn solve(&mut self) -> QpSolution {
        let n = self.problem.n();
        let m = self.problem.m();
        let QpSettings {
            sigma,
            alpha,
            max_iter,
            ..
        } = self.settings;
        let check_interval = self.settings.check_interval.max(1);

        let mut status = QpStatus::MaxIter;
        let mut iterations = 0;
        let mut res = Residuals::infinite();
        let mut y_prev = DVector::zeros(m);
        let mut rhs = DVector::zeros(n);
        let mut tmp = DVector::zeros(m);
        let mut zt = DVector::zeros(m);

        for k in 1..=max_iter.max(1) {
            iterations = k;
            let check = k % check_interval == 0 || k == max_iter;
            if check {
                y_prev.copy_from(&self.y);
            }
            for i in 0..m {
                tmp[i] = self.rho[i] * self.z[i] - self.y[i];
            }
            rhs.copy_from(&self.x);
            rhs *= sigma;
            rhs -= &self.q;
            rhs.gemv_tr(1.0, &self.a, &tmp, 1.0);
            self.kkt.solve_mut(&mut rhs);
            let xt = &rhs;
            zt.gemv(1.0, &self.a, xt, 0.0);

            self.x *= 1.0 - alpha;
            self.x.axpy(alpha, xt, 1.0);
            for i in 0..m {
                let zr = alpha * zt[i] + (1.0 - alpha) * self.z[i];
                let zn = (zr + self.y[i] / self.rho[i]).max(self.l[i]).min(self.u[i]);
                self.y[i] += self.rho[i] * (zr - zn);
                self.z[i] = zn;
            }

            if check {
                res = self.residuals(&self.x, &self.z, &self.y);
                if res.converged() {
                    status = QpStatus::Solved;
                    break;
                }
                if self.settings.adaptive_rho
                    && k % self.settings.adaptive_rho_interval.max(1) == 0
                {
                    self.adapt_rho(&res);
                }
                tmp.copy_from(&self.y);
                tmp -= &y_prev;
                if self.primal_infeasible(&tmp) {
                    status = QpStatus::PrimalInfeasible;
                    break;
                }
            }
        }

        let mut x = self.x.clone();
        let mut y = self.y.clone();
        let mut polished = false;
        if self.settings.polish && status != QpStatus::PrimalInfeasible {
            if let Some((xp, yp, rp)) = self.polish() {
                let better = rp.converged() || (rp.prim <= res.prim && rp.dual <= res.dual);
                if better {
                    x = xp;
                    y = yp;
                    res = rp;
                    polished = true;
                    if rp.converged() {
                        status = QpStatus::Solved;
                    }
                }
            }
        }

        let x = x.component_mul(&self.d);
        let y = y.component_mul(&self.e) / self.c;
        let objective = self.problem.objective(&x);
        QpSolution {
            x,
            y,
            status,
            iterations,
            prim_res: res.prim,
            dual_res: res.dual,
            objective,
            polished,
        }
    }

    /// Balances primal and dual residuals: `ρ ← ρ·sqrt(r̂_prim / r̂_dual)`
    /// with both residuals normalized by their scales.
    fn adapt_rho(&mut self, res: &Residuals) {
        let prim = res.prim / (res.prim_scale + 1e-10);
        let dual = res.dual / (res.dual_scale + 1e-10);
        let estimate = (self.rho_base * (prim / (dual + 1e-10)).sqrt()).clamp(RHO_MIN, RHO_MAX);
        let tol = self.settings.adaptive_rho_tolerance;
        if estimate > self.rho_base * tol || estimate < self.rho_base / tol {
            // keep the old factorization if the new one fails
            let _ = self.set_rho(estimate);
        }
    }

    /// Unscaled residuals and tolerances of a scaled iterate.
    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Residuals {
        let s = &self.settings;
        let ax = &self.a * x;
        let mut prim: f64 = 0.0;
        let mut ax_norm: f64 = 0.0;
        let mut z_norm: f64 = 0.0;
        for i in 0..ax.len() {
            let ei = self.e[i];
            prim = prim.max(((ax[i] - z[i]) / ei).abs());
            ax_norm = ax_norm.max((ax[i] / ei).abs());
            z_norm = z_norm.max((z[i] / ei).abs());
        }
        let px = &self.p * x;
        let aty = self.a.tr_mul(y);
        let mut dual: f64 = 0.0;
        let mut px_n: f64 = 0.0;
        let mut aty_n: f64 = 0.0;
        let mut q_n: f64 = 0.0;
        for j in 0..px.len() {
            let k = 1.0 / (self.c * self.d[j]);
            dual = dual.max(((px[j] + self.q[j] + aty[j]) * k).abs());
            px_n = px_n.max((px[j] * k).abs());
            aty_n = aty_n.max((aty[j] * k).abs());
            q_n = q_n.max((self.q[j] * k).abs());
        }
        let prim_scale = ax_norm.max(z_norm);
        let dual_scale = px_n.max(aty_n).max(q_n);
        Residuals {
            prim,
            dual,
            prim_scale,
            dual_scale,
            eps_prim: s.eps_abs + s.eps_rel * prim_scale,
            eps_dual: s.eps_abs + s.eps_rel * dual_scale,
        }
    }

    /// Certificate test on the dual increment `δȳ`: `Aᵀδy ≈ 0` and
    /// `uᵀ(δy)₊ + lᵀ(δy)₋ < 0`.
    fn primal_infeasible(&self, dy: &DVector<f64>) -> bool {
        let eps = self.settings.eps_prim_inf;
        let norm = dy.component_mul(&self.e).amax();
        if !(norm > 1e-30) {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let v = dy[i];
            if v > 0.0 {
                if self.u[i] == f64::INFINITY {
                    if v * self.e[i] > eps * norm {
                        return false;
                    }
                } else {
                    support += self.u[i] * v;
                }
            } else if v < 0.0 {
                if self.l[i] == f64::NEG_INFINITY {
                    if -v * self.e[i] > eps * norm {
                        return false;
                    }
                } else {
                    support += self.l[i] * v;
                }
            }
        }
        if support >= -eps * norm {
            return false;
        }
        let aty = self.a.tr_mul(dy).component_div(&self.d);
        aty.amax() <= eps * norm
    }

    /// Solves the equality-constrained problem on the guessed active set.
    fn polish(&self) -> Option<(DVector<f64>, DVector<f64>, Residuals)> {
        let n = self.problem.n();
        let mut active: Vec<(usize, f64, bool)> = Vec::new();
        for i in 0..self.problem.m() {
            match self.kinds[i] {
                RowKind::Loose => {}
                RowKind::Eq => active.push((i, self.l[i], true)),
                RowKind::Ineq => {
                    if self.z[i] - self.l[i] < -self.y[i] {
                        active.push((i, self.l[i], true));
                    } else if self.u[i] - self.z[i] < self.y[i] {
                        active.push((i, self.u[i], false));
                    }
                }
            }
        }
        let na = active.len();
        let dim = n + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for (r, &(i, _, _)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.a[(i, j)];
                kkt[(j, n + r)] = self.a[(i, j)];
            }
        }
        let mut rhs = DVector::zeros(dim);
        for j in 0..n {
            rhs[j] = -self.q[j];
        }
        for (r, &(_, b, _)) in active.iter().enumerate() {
            rhs[n + r] = b;
        }
        let delta = self.settings.polish_delta;
        let mut reg = kkt.clone();
        for j in 0..n {
            reg[(j, j)] += delta;
        }
        for r in 0..na {
            reg[(n + r, n + r)] -= delta;
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        let floor = 1e-15 * rhs.amax().max(1.0);
        for _ in 0..self.settings.polish_refine_iters {
            let r = &rhs - &kkt * &sol;
            if r.amax() <= floor {
                break;
            }
            sol += lu.solve(&r)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol.rows(0, n).into_owned();
        let mut y = DVector::zeros(self.problem.m());
        let tol = self.settings.eps_abs;
        for (r, &(i, _, lower)) in active.iter().enumerate() {
            let v = sol[n + r];
            let unscaled = v * self.e[i] / self.c;
            if self.kinds[i] == RowKind::Ineq
                && ((lower && unscaled > tol) || (!lower && unscaled < -tol))
            {
                return None;
            }
            y[i] = v;
        }
        let mut z = &self.a * &x;
        for i in 0..z.len() {
            z[i] = z[i].max(self.l[i]).min(self.u[i]);
        }
        let res = self.residuals(&x, &z, &y);
        Some((x, y, res))
    }
}

fn rho_vector(kinds: &[RowKind], rho: f64) -> DVector<f64> {
    DVector::from_iterator(
        kinds.len(),
        kinds.iter().map(|k| match k {
            RowKind::Loose => RHO_LOOSE,
            RowKind::Ineq => rho,
            RowKind::Eq => rho * RHO_EQ_FACTOR,
        }),
    )
}

fn grams(a: &DMatrix<f64>, kinds: &[RowKind]) -> [DMatrix<f64>; 3] {
    let n = a.ncols();
    let gram = |kind: RowKind| {
        let rows: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == kind).collect();
        if rows.is_empty() {
            return DMatrix::zeros(n, n);
        }
        let sub = a.select_rows(rows.iter());
        sub.tr_mul(&sub)
    };
    [gram(RowKind::Ineq), gram(RowKind::Eq), gram(RowKind::Loose)]
}

/// Cholesky factor of `P + σI + Aᵀ·diag(ρ)·A`.
fn factor(
    p: &DMatrix<f64>,
    grams: &[DMatrix<f64>; 3],
    rho: f64,
    sigma: f64,
) -> Result<Cholesky<f64, Dyn>, QpError> {
    let n = p.nrows();
    let mut k = p.clone();
    k += &grams[0] * rho + &grams[1] * (rho * RHO_EQ_FACTOR) + &grams[2] * RHO_LOOSE;
    for j in 0..n {
        k[(j, j)] += sigma;
    }
    Cholesky::new(k).ok_or(QpError::Factorization)
}

#[derive(Debug, Clone, Copy)]
struct Residuals {
    prim: f64,
    dual: f64,
    prim_scale: f64,
    dual_scale: f64,
    eps_prim: f64,
    eps_dual: f64,
}

impl Residuals {
    fn infinite() -> Self {
        Self {
            prim: f64::INFINITY,
            dual: f64::INFINITY,
            prim_scale: 0.0,
            dual_scale: 0.0,
            eps_prim: 0.0,
            eps_dual: 0.0,
        }
    }

    fn converged(&self) -> bool {
        self.prim <= self.eps_prim && self.dual <= self.eps_dual
    }
}
