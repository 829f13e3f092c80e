#pragma once

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct {
  int max_iter;
  double time_limit;
  int verbose;
  double tol_gap_abs;
  double tol_gap_rel;
  double tol_feas;
  double tol_infeas_abs;
  double tol_infeas_rel;
} QmiestClarabelSettings;

typedef struct {
  int status;
  int iterations;
  double primal_objective;
  double dual_objective;
  char status_text[64];
} QmiestClarabelResult;

int qmiest_clarabel_solve(long long n, long long m, const long long* a_colptr,
                          const long long* a_rowval, const double* a_nzval, const double* b,
                          const double* q, long long n_zero, long long n_nonneg,
                          const long long* psd_dims, long long n_psd,
                          const QmiestClarabelSettings* settings, double* x, double* z, double* s,
                          QmiestClarabelResult* result);

#ifdef __cplusplus
}
#endif
