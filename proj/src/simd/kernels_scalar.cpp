#include "adt/simd.hpp"

namespace adt::simd {
namespace {

template <typename T>
T dot_ref(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gemm_nn_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
void gemm_nt_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_ref(a + i * k, b + j * k, k);
}

template <typename T>
void gemm_tn_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
constexpr KernelTable<T> make_table() {
  return {&dot_ref<T>, &axpy_ref<T>, &gemm_nn_ref<T>, &gemm_nt_ref<T>, &gemm_tn_ref<T>};
}

constexpr KernelTable<float> kScalarF32 = make_table<float>();
constexpr KernelTable<double> kScalarF64 = make_table<double>();

}  // namespace

const KernelTable<float>& scalar_kernels_f32() { return kScalarF32; }
const KernelTable<double>& scalar_kernels_f64() { return kScalarF64; }

}  // namespace adt::simd
