/* Hot inner loop of the local SGD solver (softmax regression).
 *
 * Semantics mirror the pure-numpy fallback in fedcore.py: per epoch the
 * caller supplies a permutation, batches are consecutive slices of it,
 * and each step applies
 *
 *     W <- decay * W - eta * (grad_batch + lam * W) - shift
 *
 * on the bias-augmented weight matrix.  The solver stops early once a
 * non-finite entry appears (checked at epoch boundaries), which callers
 * report as divergence.  All accumulation orders are fixed, so results
 * are deterministic for fixed inputs.
 */

#define PY_SSIZE_T_CLEAN
#include <Python.h>

#include <math.h>
#include <stdint.h>
#include <stdlib.h>
#include <string.h>

static int all_finite(const double *a, Py_ssize_t n)
{
    for (Py_ssize_t i = 0; i < n; i++) {
        if (!isfinite(a[i]))
            return 0;
    }
    return 1;
}

/* sgd_logistic(Wa, Xa, y, perms, epochs, batch, eta, lam, decay, shift_or_none)
 *
 * Wa:    (C, D1) float64, writable, updated in place
 * Xa:    (n, D1) float64, features with a trailing ones column
 * y:     (n,) int64 class ids
 * perms: (epochs, n) int64, one permutation per epoch
 * shift: (C, D1) float64 or None
 */
static PyObject *
sgd_logistic(PyObject *self, PyObject *args)
{
    Py_buffer wa_buf, xa_buf, y_buf, perm_buf;
    Py_ssize_t epochs, batch;
    double eta, lam, decay;
    PyObject *shift_obj;

    if (!PyArg_ParseTuple(args, "w*y*y*y*nndddO", &wa_buf, &xa_buf, &y_buf,
                          &perm_buf, &epochs, &batch, &eta, &lam, &decay,
                          &shift_obj))
        return NULL;

    Py_buffer shift_buf = {0};
    const double *shift = NULL;
    if (shift_obj != Py_None) {
        if (PyObject_GetBuffer(shift_obj, &shift_buf, PyBUF_C_CONTIGUOUS) < 0) {
            PyBuffer_Release(&wa_buf);
            PyBuffer_Release(&xa_buf);
            PyBuffer_Release(&y_buf);
            PyBuffer_Release(&perm_buf);
            return NULL;
        }
        shift = (const double *)shift_buf.buf;
    }

    double *Wa = (double *)wa_buf.buf;
    const double *Xa = (const double *)xa_buf.buf;
    const int64_t *y = (const int64_t *)y_buf.buf;
    const int64_t *perms = (const int64_t *)perm_buf.buf;

    const Py_ssize_t n = y_buf.len / (Py_ssize_t)sizeof(int64_t);
    const Py_ssize_t d1 = xa_buf.len / (Py_ssize_t)sizeof(double) / (n > 0 ? n : 1);
    const Py_ssize_t c = wa_buf.len / (Py_ssize_t)sizeof(double) / (d1 > 0 ? d1 : 1);

    if (n <= 0 || d1 <= 0 || c <= 0 || batch <= 0 ||
        perm_buf.len < epochs * n * (Py_ssize_t)sizeof(int64_t)) {
        PyErr_SetString(PyExc_ValueError, "inconsistent buffer shapes");
        goto fail;
    }

    double *Xs = (double *)malloc((size_t)(n * d1) * sizeof(double));
    int64_t *ys = (int64_t *)malloc((size_t)n * sizeof(int64_t));
    double *z = (double *)malloc((size_t)c * sizeof(double));
    double *acc = (double *)malloc((size_t)(c * d1) * sizeof(double));
    if (!Xs || !ys || !z || !acc) {
        free(Xs); free(ys); free(z); free(acc);
        PyErr_NoMemory();
        goto fail;
    }

    for (Py_ssize_t e = 0; e < epochs; e++) {
        const int64_t *perm = perms + e * n;
        for (Py_ssize_t i = 0; i < n; i++) {
            memcpy(Xs + i * d1, Xa + perm[i] * d1, (size_t)d1 * sizeof(double));
            ys[i] = y[perm[i]];
        }
        for (Py_ssize_t s0 = 0; s0 < n; s0 += batch) {
            const Py_ssize_t bs = (s0 + batch <= n) ? batch : (n - s0);
            memset(acc, 0, (size_t)(c * d1) * sizeof(double));
            for (Py_ssize_t i = 0; i < bs; i++) {
                const double *restrict x = Xs + (s0 + i) * d1;
                double zmax = -INFINITY;
                for (Py_ssize_t j = 0; j < c; j++) {
                    const double *restrict wrow = Wa + j * d1;
                    double dot = 0.0;
                    for (Py_ssize_t d = 0; d < d1; d++)
                        dot += wrow[d] * x[d];
                    z[j] = dot;
                    if (dot > zmax)
                        zmax = dot;
                }
                double zsum = 0.0;
                for (Py_ssize_t j = 0; j < c; j++) {
                    z[j] = exp(z[j] - zmax);
                    zsum += z[j];
                }
                const double inv = 1.0 / zsum;
                const int64_t yi = ys[s0 + i];
                for (Py_ssize_t j = 0; j < c; j++) {
                    const double p = z[j] * inv - (j == yi ? 1.0 : 0.0);
                    double *restrict arow = acc + j * d1;
                    for (Py_ssize_t d = 0; d < d1; d++)
                        arow[d] += p * x[d];
                }
            }
            const double inv_bs = 1.0 / (double)bs;
            const double *restrict sh = shift;
            for (Py_ssize_t j = 0; j < c * d1; j++) {
                const double g = acc[j] * inv_bs + lam * Wa[j];
                Wa[j] = decay * Wa[j] - eta * g - (sh ? sh[j] : 0.0);
            }
        }
        if (!all_finite(Wa, c * d1))
            break;
    }

    free(Xs); free(ys); free(z); free(acc);
    if (shift)
        PyBuffer_Release(&shift_buf);
    PyBuffer_Release(&wa_buf);
    PyBuffer_Release(&xa_buf);
    PyBuffer_Release(&y_buf);
    PyBuffer_Release(&perm_buf);
    Py_RETURN_NONE;

fail:
    if (shift)
        PyBuffer_Release(&shift_buf);
    PyBuffer_Release(&wa_buf);
    PyBuffer_Release(&xa_buf);
    PyBuffer_Release(&y_buf);
    PyBuffer_Release(&perm_buf);
    return NULL;
}

static PyMethodDef SpeedupMethods[] = {
    {"sgd_logistic", sgd_logistic, METH_VARARGS,
     "In-place epoch-permuted minibatch SGD for softmax regression."},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef speedups_module = {
    PyModuleDef_HEAD_INIT, "_speedups",
    "C inner loops for the local SGD solver.", -1, SpeedupMethods,
};

PyMODINIT_FUNC
PyInit__speedups(void)
{
    return PyModule_Create(&speedups_module);
}
