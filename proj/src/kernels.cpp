#include "pct/kernels.hpp"

#include <Eigen/Core>

namespace pct::kernels {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

long ix(std::size_t v) { return static_cast<long>(v); }

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  Map(c, ix(m), ix(n)).noalias() += ConstMap(a, ix(m), ix(k)) * ConstMap(b, ix(k), ix(n));
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  Map(c, ix(m), ix(n)).noalias() += ConstMap(a, ix(m), ix(k)) * ConstMap(b, ix(n), ix(k)).transpose();
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  Map(c, ix(k), ix(n)).noalias() += ConstMap(a, ix(m), ix(k)).transpose() * ConstMap(b, ix(m), ix(n));
}

namespace {

template <typename Visit>
void for_each_tap(const ConvGeometry& geo, Visit&& visit) {
  const std::size_t oh = geo.out_height();
  const std::size_t ow = geo.out_width();
  const auto pad = static_cast<long>(geo.padding);
  for (std::size_t c = 0; c < geo.channels; ++c) {
    for (std::size_t ky = 0; ky < geo.ksize; ++ky) {
      for (std::size_t kx = 0; kx < geo.ksize; ++kx) {
        const std::size_t row = (c * geo.ksize + ky) * geo.ksize + kx;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + ky) - pad;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * geo.stride + kx) - pad;
            const std::size_t col = row * oh * ow + oy * ow + ox;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(geo.height) || ix >= static_cast<long>(geo.width)) {
              visit(col, static_cast<std::size_t>(-1));
            } else {
              visit(col, (c * geo.height + static_cast<std::size_t>(iy)) * geo.width + static_cast<std::size_t>(ix));
            }
          }
        }
      }
    }
  }
}

}  // namespace

void im2col(const double* image, const ConvGeometry& geo, double* cols) {
  for_each_tap(geo, [&](std::size_t col, std::size_t pixel) {
    cols[col] = pixel == static_cast<std::size_t>(-1) ? 0.0 : image[pixel];
  });
}

void col2im(const double* cols, const ConvGeometry& geo, double* image) {
  for_each_tap(geo, [&](std::size_t col, std::size_t pixel) {
    if (pixel != static_cast<std::size_t>(-1)) image[pixel] += cols[col];
  });
}

}  // namespace pct::kernels
