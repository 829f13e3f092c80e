//! Minimal C ABI over Clarabel's DefaultSolver for problems of the form
//!
//!   minimize    q'x
//!   subject to  A x + s = b,  s in K
//!
//! where K is a product of (in this order) one zero cone, one nonnegative
//! cone and any number of PSD triangle cones. A is passed in CSC form.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use std::os::raw::{c_char, c_int, c_longlong};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
pub struct QmiestClarabelSettings {
    pub max_iter: c_int,
    pub time_limit: f64,
    pub verbose: c_int,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub tol_infeas_abs: f64,
    pub tol_infeas_rel: f64,
}

#[repr(C)]
pub struct QmiestClarabelResult {
    /// 0 solved, 1 almost solved, 2 primal infeasible, 3 dual infeasible,
    /// 4 almost primal infeasible, 5 almost dual infeasible, 6 iteration or
    /// time limit, 7 numerical error / insufficient progress, 8 setup error.
    pub status: c_int,
    pub iterations: c_int,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub status_text: [c_char; 64],
}

fn write_text(buf: &mut [c_char; 64], text: &str) {
    let bytes = text.as_bytes();
    let len = bytes.len().min(63);
    for (i, b) in bytes[..len].iter().enumerate() {
        buf[i] = *b as c_char;
    }
    buf[len] = 0;
}

fn status_code(status: SolverStatus) -> c_int {
    match status {
        SolverStatus::Solved => 0,
        SolverStatus::AlmostSolved => 1,
        SolverStatus::PrimalInfeasible => 2,
        SolverStatus::DualInfeasible => 3,
        SolverStatus::AlmostPrimalInfeasible => 4,
        SolverStatus::AlmostDualInfeasible => 5,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => 6,
        _ => 7,
    }
}

/// # Safety
/// All pointers must be valid for the lengths implied by `m`, `n`,
/// `a_colptr[n]`, and `n_psd`. Output buffers `x` (n), `z` (m), `s` (m)
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmiest_clarabel_solve(
    n: c_longlong,
    m: c_longlong,
    a_colptr: *const c_longlong,
    a_rowval: *const c_longlong,
    a_nzval: *const f64,
    b: *const f64,
    q: *const f64,
    n_zero: c_longlong,
    n_nonneg: c_longlong,
    psd_dims: *const c_longlong,
    n_psd: c_longlong,
    settings: *const QmiestClarabelSettings,
    x: *mut f64,
    z: *mut f64,
    s: *mut f64,
    result: *mut QmiestClarabelResult,
) -> c_int {
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let n = n as usize;
        let m = m as usize;
        let colptr: Vec<usize> = std::slice::from_raw_parts(a_colptr, n + 1)
            .iter()
            .map(|&v| v as usize)
            .collect();
        let nnz = colptr[n];
        let rowval: Vec<usize> = std::slice::from_raw_parts(a_rowval, nnz)
            .iter()
            .map(|&v| v as usize)
            .collect();
        let nzval = std::slice::from_raw_parts(a_nzval, nnz).to_vec();
        let a = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p = CscMatrix::<f64>::zeros((n, n));
        let b = std::slice::from_raw_parts(b, m).to_vec();
        let q = std::slice::from_raw_parts(q, n).to_vec();

        let mut cones = Vec::new();
        if n_zero > 0 {
            cones.push(SupportedConeT::ZeroConeT(n_zero as usize));
        }
        if n_nonneg > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(n_nonneg as usize));
        }
        if n_psd > 0 {
            for &d in std::slice::from_raw_parts(psd_dims, n_psd as usize) {
                cones.push(SupportedConeT::PSDTriangleConeT(d as usize));
            }
        }

        let cfg = &*settings;
        let mut stgs = DefaultSettings::<f64>::default();
        stgs.max_iter = cfg.max_iter as u32;
        stgs.time_limit = if cfg.time_limit > 0.0 { cfg.time_limit } else { f64::INFINITY };
        stgs.verbose = cfg.verbose != 0;
        stgs.tol_gap_abs = cfg.tol_gap_abs;
        stgs.tol_gap_rel = cfg.tol_gap_rel;
        stgs.tol_feas = cfg.tol_feas;
        stgs.tol_infeas_abs = cfg.tol_infeas_abs;
        stgs.tol_infeas_rel = cfg.tol_infeas_rel;

        let out = &mut *result;
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, stgs) {
            Ok(solver) => solver,
            Err(e) => {
                out.status = 8;
                out.iterations = 0;
                write_text(&mut out.status_text, &format!("{e}"));
                return 8;
            }
        };
        solver.solve();
        let sol = &solver.solution;
        std::slice::from_raw_parts_mut(x, n).copy_from_slice(&sol.x);
        std::slice::from_raw_parts_mut(z, m).copy_from_slice(&sol.z);
        std::slice::from_raw_parts_mut(s, m).copy_from_slice(&sol.s);
        out.status = status_code(sol.status);
        out.iterations = sol.iterations as c_int;
        out.primal_objective = sol.obj_val;
        out.dual_objective = sol.obj_val_dual;
        write_text(&mut out.status_text, &format!("{:?}", sol.status));
        out.status
    }));
    match outcome {
        Ok(code) => code,
        Err(_) => {
            if !result.is_null() {
                let out = &mut *result;
                out.status = 8;
                write_text(&mut out.status_text, "panic inside solver");
            }
            8
        }
    }
}
