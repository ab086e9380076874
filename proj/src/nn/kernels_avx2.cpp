#include <cmath>
#include <cstdlib>
#include <string>

#include "pmr/error.hpp"
#include "pmr/nn/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define PMR_HAVE_X86 1
#include <immintrin.h>
#else
#define PMR_HAVE_X86 0
#endif

namespace pmr::nn::kernels {

#if PMR_HAVE_X86

#define PMR_AVX2 __attribute__((target("avx2,fma")))

namespace {

PMR_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

PMR_AVX2 double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

PMR_AVX2 void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four batch rows per pass so each weight vector is loaded once per block.
PMR_AVX2 void affine(const double* W, const double* bias, const double* X, double* Y, std::size_t batch,
                     std::size_t in, std::size_t out) {
  std::size_t b = 0;
  for (; b + 4 <= batch; b += 4) {
    const double* x0 = X + (b + 0) * in;
    const double* x1 = X + (b + 1) * in;
    const double* x2 = X + (b + 2) * in;
    const double* x3 = X + (b + 3) * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* w = W + o * in;
      __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
      __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
      std::size_t i = 0;
      for (; i + 4 <= in; i += 4) {
        const __m256d wv = _mm256_loadu_pd(w + i);
        a0 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(x0 + i), a0);
        a1 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(x1 + i), a1);
        a2 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(x2 + i), a2);
        a3 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(x3 + i), a3);
      }
      double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
      for (; i < in; ++i) {
        s0 += w[i] * x0[i];
        s1 += w[i] * x1[i];
        s2 += w[i] * x2[i];
        s3 += w[i] * x3[i];
      }
      Y[(b + 0) * out + o] = bias[o] + s0;
      Y[(b + 1) * out + o] = bias[o] + s1;
      Y[(b + 2) * out + o] = bias[o] + s2;
      Y[(b + 3) * out + o] = bias[o] + s3;
    }
  }
  for (; b < batch; ++b) {
    const double* x = X + b * in;
    for (std::size_t o = 0; o < out; ++o) Y[b * out + o] = bias[o] + dot(W + o * in, x, in);
  }
}

PMR_AVX2 void affine_backward_input(const double* W, const double* dY, double* dX, std::size_t batch,
                                    std::size_t in, std::size_t out) {
  for (std::size_t k = 0; k < batch * in; ++k) dX[k] = 0.0;
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = W + o * in;
    for (std::size_t b = 0; b < batch; ++b) {
      const double g = dY[b * out + o];
      if (g != 0.0) axpy(g, w, dX + b * in, in);
    }
  }
}

PMR_AVX2 void affine_backward_params(const double* X, const double* dY, double* dW, double* db,
                                     std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    double* dw = dW + o * in;
    for (std::size_t b = 0; b < batch; ++b) {
      const double g = dY[b * out + o];
      if (g == 0.0) continue;
      axpy(g, X + b * in, dw, in);
      db[o] += g;
    }
  }
}

// Plain mul/add (no FMA) so the update is bit-identical to the scalar path.
PMR_AVX2 void adam(double* p, const double* g, double* m, double* v, std::size_t n, double lr, double beta1,
                   double beta2, double eps, double bias_corr1, double bias_corr2) {
  const __m256d b1 = _mm256_set1_pd(beta1), c1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d b2 = _mm256_set1_pd(beta2), c2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d bc1 = _mm256_set1_pd(bias_corr1), bc2 = _mm256_set1_pd(bias_corr2);
  const __m256d lrv = _mm256_set1_pd(lr), epsv = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    const __m256d mv = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(c1, gv));
    const __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(_mm256_mul_pd(c2, gv), gv));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_div_pd(mv, bc1);
    const __m256d vhat = _mm256_div_pd(vv, bc2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, mhat), _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] / bias_corr1) / (std::sqrt(v[i] / bias_corr2) + eps);
  }
}

}  // namespace

const Table* avx2_table() {
  static const Table t{Isa::Avx2, "avx2", dot, axpy, affine, affine_backward_input,
                       affine_backward_params, adam};
  return &t;
}

bool cpu_has_avx2() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

#else

const Table* avx2_table() { return nullptr; }
bool cpu_has_avx2() { return false; }

#endif

namespace {

const Table* g_active = nullptr;

const Table* pick_default() {
  if (const char* env = std::getenv("PMR_SIMD")) {
    if (parse_isa(env) == Isa::Scalar) return &scalar_table();
  }
  if (cpu_has_avx2() && avx2_table()) return avx2_table();
  return &scalar_table();
}

}  // namespace

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::Scalar;
  if (name == "avx2") return Isa::Avx2;
  throw ValidationError("unknown SIMD mode '" + std::string(name) + "' (expected scalar or avx2)");
}

const Table& active() {
  if (!g_active) g_active = pick_default();
  return *g_active;
}

bool select(Isa isa) {
  if (isa == Isa::Scalar) {
    g_active = &scalar_table();
    return true;
  }
  if (cpu_has_avx2() && avx2_table()) {
    g_active = avx2_table();
    return true;
  }
  return false;
}

}  // namespace pmr::nn::kernels
