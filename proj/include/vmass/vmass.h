/* C interface of the vmass shared library. Every function returns a status
   code (VMASS_OK on success); the message of the last failure on the calling
   thread is available from vmass_last_error(). */
#ifndef VMASS_H
#define VMASS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VMASS_API __declspec(dllexport)
#else
#define VMASS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Also the process exit codes of the command line tool. */
enum vmass_status {
    VMASS_OK = 0,
    VMASS_INPUT_ERROR = 2,      /* bad argument or inadmissible geometry */
    VMASS_MALFORMED_CONFIG = 3, /* problem file is not valid JSON or has wrong types */
    VMASS_INFEASIBLE = 4,       /* the load cannot be carried */
    VMASS_NON_CONVERGENCE = 5,
    VMASS_UNRESOLVED = 6,       /* grid too coarse for the requested structure */
    VMASS_INCONSISTENT = 7,     /* a cross-check between two computations failed */
    VMASS_IO = 8,
    VMASS_INTERNAL = 9
};

typedef struct vmass_problem vmass_problem;
typedef struct vmass_solution vmass_solution;

VMASS_API const char* vmass_version(void);
VMASS_API const char* vmass_last_error(void);
VMASS_API const char* vmass_status_name(int status);

/* resolution <= 0 keeps the file's domain.resolution; tol <= 0 keeps solver.tol. */
VMASS_API int vmass_problem_from_json(const char* json_text, int resolution, double tol, vmass_problem** out);
VMASS_API int vmass_problem_from_file(const char* path, int resolution, double tol, vmass_problem** out);
VMASS_API void vmass_problem_free(vmass_problem* p);
VMASS_API int vmass_problem_num_cells(const vmass_problem* p, size_t* out);

/* law: "c", "E" or "E_k" (e.g. "E_1"), evaluated at the problem's measure. */
VMASS_API int vmass_compliance(const vmass_problem* p, const char* law, double* value);

/* method: "grid" or "truss" (NULL = grid). */
VMASS_API int vmass_solve_mk(const vmass_problem* p, const char* method, vmass_solution** out);
VMASS_API void vmass_solution_free(vmass_solution* s);
VMASS_API int vmass_solution_values(const vmass_solution* s, double* I, double* primal, double* dual, double* gap);
/* Copies n = num_cells densities of the optimal mass into out. */
VMASS_API int vmass_solution_density(const vmass_solution* s, double* out, size_t n);

/* which: "j", "j_bar", "j_star", "j_bar_star", "rho", "rho0", or "j_k"/"j_k_star"
   with k given. tensor is packed (xx, yy, xy) in 2D, (xx, yy, zz, xy, xz, yz) in 3D. */
VMASS_API int vmass_integrand(int dim, double alpha, double beta, const char* which, int k, const double* tensor,
                              double* value);

typedef struct {
    const char* subcommand; /* integrand-table, compliance, solve-mk, gamma-sweep, probe */
    const char* probe;      /* seppecher, conj2, conj3, gap */
    const char* config_path;
    const char* config_json; /* used instead of config_path when not NULL */
    const char* out_dir;
    double tol;     /* <= 0: from the problem */
    int resolution; /* <= 0: from the problem */
    uint64_t seed;
    const char* method; /* solve-mk: grid or truss; NULL keeps the problem's */
    int scalar;
} vmass_run_options;

/* Runs one subcommand and writes its artifacts (and error.json on failure). */
VMASS_API int vmass_run(const vmass_run_options* options);
VMASS_API int vmass_compare(const char* dir_a, const char* dir_b, const char* out_path);
/* Text of the last vmass_compare report (JSON) on this thread. */
VMASS_API const char* vmass_last_report(void);

#ifdef __cplusplus
}
#endif

#endif
