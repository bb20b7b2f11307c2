// Compiled with -mavx2 -mfma. Keep this file free of standard-library
// templates shared with other translation units.

#include <immintrin.h>

#include "avx2_impl.hpp"

namespace adt::simd::avx2 {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t W = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t W = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

template <typename S>
typename S::T dot(const typename S::T* a, const typename S::T* b, std::size_t n) {
  constexpr std::size_t W = S::W;
  auto s0 = S::zero(), s1 = S::zero(), s2 = S::zero(), s3 = S::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    s0 = S::fma(S::load(a + i), S::load(b + i), s0);
    s1 = S::fma(S::load(a + i + W), S::load(b + i + W), s1);
    s2 = S::fma(S::load(a + i + 2 * W), S::load(b + i + 2 * W), s2);
    s3 = S::fma(S::load(a + i + 3 * W), S::load(b + i + 3 * W), s3);
  }
  for (; i + W <= n; i += W) s0 = S::fma(S::load(a + i), S::load(b + i), s0);
  typename S::T s = S::hsum(S::add(S::add(s0, s1), S::add(s2, s3)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename S>
void axpy(typename S::T alpha, const typename S::T* x, typename S::T* y, std::size_t n) {
  constexpr std::size_t W = S::W;
  const auto va = S::set1(alpha);
  std::size_t i = 0;
  for (; i + W <= n; i += W) S::store(y + i, S::fma(va, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// c[0:n] += a0*b0 + a1*b1 + a2*b2 + a3*b3, rows b0..b3 of length n.
template <typename S>
inline void rank4_update(typename S::T* c, const typename S::T* b0, const typename S::T* b1,
                         const typename S::T* b2, const typename S::T* b3, typename S::T a0,
                         typename S::T a1, typename S::T a2, typename S::T a3, std::size_t n) {
  constexpr std::size_t W = S::W;
  const auto v0 = S::set1(a0), v1 = S::set1(a1), v2 = S::set1(a2), v3 = S::set1(a3);
  std::size_t j = 0;
  for (; j + W <= n; j += W) {
    auto acc = S::load(c + j);
    acc = S::fma(v0, S::load(b0 + j), acc);
    acc = S::fma(v1, S::load(b1 + j), acc);
    acc = S::fma(v2, S::load(b2 + j), acc);
    acc = S::fma(v3, S::load(b3 + j), acc);
    S::store(c + j, acc);
  }
  for (; j < n; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
}

// C += op(A) * B where op(A)[i, p] = a[i * stride_i + p * stride_p].
template <typename S>
void gemm_b_rows(const typename S::T* a, std::size_t stride_i, std::size_t stride_p,
                 const typename S::T* b, typename S::T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    typename S::T* ci = c + i * n;
    const typename S::T* ai = a + i * stride_i;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      rank4_update<S>(ci, b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n,
                      ai[p * stride_p], ai[(p + 1) * stride_p], ai[(p + 2) * stride_p],
                      ai[(p + 3) * stride_p], n);
    }
    for (; p < k; ++p) axpy<S>(ai[p * stride_p], b + p * n, ci, n);
  }
}

template <typename S>
void gemm_nt(const typename S::T* a, const typename S::T* b, typename S::T* c, std::size_t m,
             std::size_t k, std::size_t n) {
  constexpr std::size_t W = S::W;
  for (std::size_t i = 0; i < m; ++i) {
    const typename S::T* ai = a + i * k;
    typename S::T* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const typename S::T* b0 = b + j * k;
      const typename S::T* b1 = b0 + k;
      const typename S::T* b2 = b1 + k;
      const typename S::T* b3 = b2 + k;
      auto s0 = S::zero(), s1 = S::zero(), s2 = S::zero(), s3 = S::zero();
      std::size_t p = 0;
      for (; p + W <= k; p += W) {
        const auto av = S::load(ai + p);
        s0 = S::fma(av, S::load(b0 + p), s0);
        s1 = S::fma(av, S::load(b1 + p), s1);
        s2 = S::fma(av, S::load(b2 + p), s2);
        s3 = S::fma(av, S::load(b3 + p), s3);
      }
      typename S::T r0 = S::hsum(s0), r1 = S::hsum(s1), r2 = S::hsum(s2), r3 = S::hsum(s3);
      for (; p < k; ++p) {
        r0 += ai[p] * b0[p];
        r1 += ai[p] * b1[p];
        r2 += ai[p] * b2[p];
        r3 += ai[p] * b3[p];
      }
      ci[j] += r0;
      ci[j + 1] += r1;
      ci[j + 2] += r2;
      ci[j + 3] += r3;
    }
    for (; j < n; ++j) ci[j] += dot<S>(ai, b + j * k, k);
  }
}

}  // namespace

float dot_f32(const float* a, const float* b, std::size_t n) { return dot<F32>(a, b, n); }
void axpy_f32(float alpha, const float* x, float* y, std::size_t n) { axpy<F32>(alpha, x, y, n); }
void gemm_nn_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_b_rows<F32>(a, k, 1, b, c, m, k, n);
}
void gemm_nt_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_nt<F32>(a, b, c, m, k, n);
}
void gemm_tn_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_b_rows<F32>(a, 1, m, b, c, m, k, n);
}

double dot_f64(const double* a, const double* b, std::size_t n) { return dot<F64>(a, b, n); }
void axpy_f64(double alpha, const double* x, double* y, std::size_t n) { axpy<F64>(alpha, x, y, n); }
void gemm_nn_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_b_rows<F64>(a, k, 1, b, c, m, k, n);
}
void gemm_nt_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_nt<F64>(a, b, c, m, k, n);
}
void gemm_tn_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_b_rows<F64>(a, 1, m, b, c, m, k, n);
}

}  // namespace adt::simd::avx2
