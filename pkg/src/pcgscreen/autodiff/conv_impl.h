/* Register-blocked SAME-padded 1D convolution loops (GCC/Clang vector extensions).
 *
 * xp holds zero-padded input rows of length LP = L + K - 1. The (channel, lag)
 * pairs are flattened into one reduction index r = c * K + k whose input row
 * starts at xp + c * LP + k, so pointwise and wide kernels share one loop.
 * Blocks of NB accumulators reuse each loaded vector NB times.
 */
#ifndef PCGSCREEN_CONV_IMPL_H
#define PCGSCREEN_CONV_IMPL_H

#include <stddef.h>
#include <string.h>

#define PCG_NB 8

typedef float pcg_vf __attribute__((vector_size(64)));
typedef double pcg_vd __attribute__((vector_size(64)));

#define PCG_DEFINE(SUFFIX, T, V)                                                       \
enum { PCG_W_##SUFFIX = (int)(sizeof(V) / sizeof(T)) };                                \
                                                                                       \
static inline V pcg_load_##SUFFIX(const T *p) { V v; memcpy(&v, p, sizeof v); return v; } \
static inline void pcg_store_##SUFFIX(T *p, V v) { memcpy(p, &v, sizeof v); }          \
static inline T pcg_hsum_##SUFFIX(V v) {                                               \
    T s = 0;                                                                           \
    for (int j = 0; j < PCG_W_##SUFFIX; ++j) s += v[j];                                \
    return s;                                                                          \
}                                                                                      \
                                                                                       \
/* out[o, t] = sum_r w[o, r] * row_r[t] for one batch item. */                         \
static void pcg_conv_fwd_##SUFFIX(const T *restrict xp, const T *restrict w,           \
                                  T *restrict out, ptrdiff_t C, ptrdiff_t O,           \
                                  ptrdiff_t K, ptrdiff_t L)                            \
{                                                                                      \
    const ptrdiff_t LP = L + K - 1, R = C * K, VW = PCG_W_##SUFFIX;                    \
    const ptrdiff_t LV = L - L % VW;                                                   \
    ptrdiff_t o0 = 0;                                                                  \
    for (; o0 + PCG_NB <= O; o0 += PCG_NB) {                                           \
        for (ptrdiff_t t = 0; t < LV; t += VW) {                                       \
            V a0 = {0}, a1 = {0}, a2 = {0}, a3 = {0}, a4 = {0}, a5 = {0}, a6 = {0}, a7 = {0}; \
            for (ptrdiff_t r = 0; r < R; ++r) {                                        \
                const V xv = pcg_load_##SUFFIX(xp + (r / K) * LP + (r % K) + t);       \
                const T *wr = w + o0 * R + r;                                          \
                a0 += wr[0 * R] * xv; a1 += wr[1 * R] * xv;                            \
                a2 += wr[2 * R] * xv; a3 += wr[3 * R] * xv;                            \
                a4 += wr[4 * R] * xv; a5 += wr[5 * R] * xv;                            \
                a6 += wr[6 * R] * xv; a7 += wr[7 * R] * xv;                            \
            }                                                                          \
            T *ob = out + o0 * L + t;                                                  \
            pcg_store_##SUFFIX(ob + 0 * L, a0); pcg_store_##SUFFIX(ob + 1 * L, a1);    \
            pcg_store_##SUFFIX(ob + 2 * L, a2); pcg_store_##SUFFIX(ob + 3 * L, a3);    \
            pcg_store_##SUFFIX(ob + 4 * L, a4); pcg_store_##SUFFIX(ob + 5 * L, a5);    \
            pcg_store_##SUFFIX(ob + 6 * L, a6); pcg_store_##SUFFIX(ob + 7 * L, a7);    \
        }                                                                              \
    }                                                                                  \
    for (; o0 < O; ++o0) {                                                             \
        for (ptrdiff_t t = 0; t < LV; t += VW) {                                       \
            V a = {0};                                                                 \
            for (ptrdiff_t r = 0; r < R; ++r)                                          \
                a += w[o0 * R + r] * pcg_load_##SUFFIX(xp + (r / K) * LP + (r % K) + t); \
            pcg_store_##SUFFIX(out + o0 * L + t, a);                                   \
        }                                                                              \
    }                                                                                  \
    for (ptrdiff_t o = 0; o < O; ++o)                                                  \
        for (ptrdiff_t t = LV; t < L; ++t) {                                           \
            T s = 0;                                                                   \
            for (ptrdiff_t r = 0; r < R; ++r)                                          \
                s += w[o * R + r] * xp[(r / K) * LP + (r % K) + t];                    \
            out[o * L + t] = s;                                                        \
        }                                                                              \
}                                                                                      \
                                                                                       \
/* gw[o, r] += sum_t g[o, t] * row_r[t] for one batch item. */                         \
static void pcg_conv_gradw_##SUFFIX(const T *restrict xp, const T *restrict g,         \
                                    T *restrict gw, ptrdiff_t C, ptrdiff_t O,          \
                                    ptrdiff_t K, ptrdiff_t L)                          \
{                                                                                      \
    const ptrdiff_t LP = L + K - 1, R = C * K, VW = PCG_W_##SUFFIX;                    \
    const ptrdiff_t LV = L - L % VW;                                                   \
    for (ptrdiff_t o = 0; o < O; ++o) {                                                \
        const T *gr = g + o * L;                                                       \
        T *dst = gw + o * R;                                                           \
        ptrdiff_t r0 = 0;                                                              \
        for (; r0 + PCG_NB <= R; r0 += PCG_NB) {                                       \
            const T *p[PCG_NB];                                                        \
            for (int q = 0; q < PCG_NB; ++q)                                           \
                p[q] = xp + ((r0 + q) / K) * LP + ((r0 + q) % K);                      \
            V a0 = {0}, a1 = {0}, a2 = {0}, a3 = {0}, a4 = {0}, a5 = {0}, a6 = {0}, a7 = {0}; \
            for (ptrdiff_t t = 0; t < LV; t += VW) {                                   \
                const V gv = pcg_load_##SUFFIX(gr + t);                                \
                a0 += gv * pcg_load_##SUFFIX(p[0] + t);                                \
                a1 += gv * pcg_load_##SUFFIX(p[1] + t);                                \
                a2 += gv * pcg_load_##SUFFIX(p[2] + t);                                \
                a3 += gv * pcg_load_##SUFFIX(p[3] + t);                                \
                a4 += gv * pcg_load_##SUFFIX(p[4] + t);                                \
                a5 += gv * pcg_load_##SUFFIX(p[5] + t);                                \
                a6 += gv * pcg_load_##SUFFIX(p[6] + t);                                \
                a7 += gv * pcg_load_##SUFFIX(p[7] + t);                                \
            }                                                                          \
            T s[PCG_NB] = {pcg_hsum_##SUFFIX(a0), pcg_hsum_##SUFFIX(a1),               \
                           pcg_hsum_##SUFFIX(a2), pcg_hsum_##SUFFIX(a3),               \
                           pcg_hsum_##SUFFIX(a4), pcg_hsum_##SUFFIX(a5),               \
                           pcg_hsum_##SUFFIX(a6), pcg_hsum_##SUFFIX(a7)};              \
            for (int q = 0; q < PCG_NB; ++q) {                                         \
                for (ptrdiff_t t = LV; t < L; ++t) s[q] += gr[t] * p[q][t];            \
                dst[r0 + q] += s[q];                                                   \
            }                                                                          \
        }                                                                              \
        for (; r0 < R; ++r0) {                                                         \
            const T *pr = xp + (r0 / K) * LP + (r0 % K);                               \
            V a = {0};                                                                 \
            for (ptrdiff_t t = 0; t < LV; t += VW)                                     \
                a += pcg_load_##SUFFIX(gr + t) * pcg_load_##SUFFIX(pr + t);            \
            T s = pcg_hsum_##SUFFIX(a);                                                \
            for (ptrdiff_t t = LV; t < L; ++t) s += gr[t] * pr[t];                     \
            dst[r0] += s;                                                              \
        }                                                                              \
    }                                                                                  \
}

PCG_DEFINE(f32, float, pcg_vf)
PCG_DEFINE(f64, double, pcg_vd)

#endif
