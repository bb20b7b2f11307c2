#pragma once
// Entry points of the AVX2+FMA translation unit. Only call these after
// checking CPU support.

#include <cstddef>

namespace adt::simd::avx2 {

float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void gemm_nn_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);

double dot_f64(const double* a, const double* b, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void gemm_nn_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

}  // namespace adt::simd::avx2
