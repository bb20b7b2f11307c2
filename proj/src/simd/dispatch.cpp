#include <cstdlib>
#include <string_view>

#include "adt/simd.hpp"

#if defined(ADT_HAVE_AVX2)
#include "avx2_impl.hpp"
#endif

namespace adt::simd {
namespace {

bool cpu_has_avx2() {
#if defined(ADT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

bool forced_scalar() {
  const char* env = std::getenv("ADT_SIMD");
  return env != nullptr && std::string_view(env) == "scalar";
}

Backend pick() { return (!forced_scalar() && cpu_has_avx2()) ? Backend::kAvx2 : Backend::kScalar; }

}  // namespace

const KernelTable<float>* avx2_kernels_f32() {
#if defined(ADT_HAVE_AVX2)
  static const KernelTable<float> table{&avx2::dot_f32, &avx2::axpy_f32, &avx2::gemm_nn_f32,
                                        &avx2::gemm_nt_f32, &avx2::gemm_tn_f32};
  static const bool ok = cpu_has_avx2();
  return ok ? &table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable<double>* avx2_kernels_f64() {
#if defined(ADT_HAVE_AVX2)
  static const KernelTable<double> table{&avx2::dot_f64, &avx2::axpy_f64, &avx2::gemm_nn_f64,
                                         &avx2::gemm_nt_f64, &avx2::gemm_tn_f64};
  static const bool ok = cpu_has_avx2();
  return ok ? &table : nullptr;
#else
  return nullptr;
#endif
}

Backend active_backend() {
  static const Backend b = pick();
  return b;
}

std::string_view backend_name(Backend b) { return b == Backend::kAvx2 ? "avx2" : "scalar"; }

template <>
const KernelTable<float>& kernels<float>() {
  static const KernelTable<float>& t =
      active_backend() == Backend::kAvx2 ? *avx2_kernels_f32() : scalar_kernels_f32();
  return t;
}

template <>
const KernelTable<double>& kernels<double>() {
  static const KernelTable<double>& t =
      active_backend() == Backend::kAvx2 ? *avx2_kernels_f64() : scalar_kernels_f64();
  return t;
}

}  // namespace adt::simd
