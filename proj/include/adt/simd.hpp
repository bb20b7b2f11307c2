#pragma once
// Dense arithmetic kernels used by the embedding trainer, the scorers and the
// transformer. Each kernel has a scalar reference implementation and, on
// x86-64, an AVX2+FMA variant. The variant is picked once per process from
// CPUID; setting ADT_SIMD=scalar in the environment forces the reference path.
//
// All matrices are dense row-major.

#include <cstddef>
#include <span>
#include <string_view>

namespace adt::simd {

template <typename T>
struct KernelTable {
  // sum_i a[i] * b[i]
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
};

enum class Backend { kScalar, kAvx2 };

const KernelTable<float>& scalar_kernels_f32();
const KernelTable<double>& scalar_kernels_f64();
// nullptr when the CPU (or the build target) lacks AVX2+FMA.
const KernelTable<float>* avx2_kernels_f32();
const KernelTable<double>* avx2_kernels_f64();

Backend active_backend();
std::string_view backend_name(Backend b);

template <typename T>
const KernelTable<T>& kernels();
template <>
const KernelTable<float>& kernels<float>();
template <>
const KernelTable<double>& kernels<double>();

template <typename T>
inline T dot(std::span<const T> a, std::span<const T> b) {
  return kernels<T>().dot(a.data(), b.data(), a.size());
}

template <typename T>
inline void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  kernels<T>().axpy(alpha, x.data(), y.data(), x.size());
}

template <typename T>
inline void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  kernels<T>().gemm_nn(a, b, c, m, k, n);
}

template <typename T>
inline void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  kernels<T>().gemm_nt(a, b, c, m, k, n);
}

template <typename T>
inline void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  kernels<T>().gemm_tn(a, b, c, m, k, n);
}

}  // namespace adt::simd
