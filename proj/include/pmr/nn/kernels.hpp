#pragma once

#include <cstddef>
#include <string_view>

// Dense inner loops shared by every network. Each kernel has a scalar
// reference and an AVX2/FMA variant; the variant is chosen once at runtime
// from CPUID and can be forced with PMR_SIMD=scalar|avx2.
namespace pmr::nn::kernels {

enum class Isa { Scalar, Avx2 };

struct Table {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// Y[b][o] = bias[o] + sum_i W[o][i] X[b][i]; W is out x in, row-major.
  void (*affine)(const double* W, const double* bias, const double* X, double* Y, std::size_t batch,
                 std::size_t in, std::size_t out);
  /// dX[b][i] = sum_o W[o][i] dY[b][o]
  void (*affine_backward_input)(const double* W, const double* dY, double* dX, std::size_t batch,
                                std::size_t in, std::size_t out);
  /// dW[o][i] += sum_b dY[b][o] X[b][i]; db[o] += sum_b dY[b][o]
  void (*affine_backward_params)(const double* X, const double* dY, double* dW, double* db,
                                 std::size_t batch, std::size_t in, std::size_t out);
  /// Bias-corrected adaptive-moment update over n parameters.
  void (*adam)(double* p, const double* g, double* m, double* v, std::size_t n, double lr, double beta1,
               double beta2, double eps, double bias_corr1, double bias_corr2);
};

const Table& scalar_table();
/// nullptr when the binary was built without AVX2 support.
const Table* avx2_table();

bool cpu_has_avx2();

/// The table in use; selected on first call.
const Table& active();
/// Forces a table (tests and benchmarks). Returns false if unavailable.
bool select(Isa isa);

Isa parse_isa(std::string_view name);

}  // namespace pmr::nn::kernels
