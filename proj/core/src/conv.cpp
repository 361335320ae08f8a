#include <vector>

#include <Eigen/Core>

#include "jepa/errors.hpp"
#include "jepa/ops.hpp"

namespace jepa::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct Dims {
  std::int64_t n, cin, h, w;     // image side
  std::int64_t cout, ho, wo;     // feature-map side
  std::int64_t k;
  ConvGeometry g;
  std::int64_t patch() const { return cin * k * k; }
  std::int64_t positions() const { return ho * wo; }
};

// cols[(c*k + ki)*k + kj, oy*wo + ox] = image[c, oy*s - p + ki, ox*s - p + kj] (0 outside).
void im2col(const double* image, const Dims& d, double* cols) {
  const std::int64_t s = d.g.stride, p = d.g.padding;
  for (std::int64_t c = 0; c < d.cin; ++c) {
    for (std::int64_t ki = 0; ki < d.k; ++ki) {
      for (std::int64_t kj = 0; kj < d.k; ++kj) {
        double* row = cols + ((c * d.k + ki) * d.k + kj) * d.positions();
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * s - p + ki;
          double* out = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill_n(out, d.wo, 0.0);
            continue;
          }
          const double* in = image + (c * d.h + iy) * d.w;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * s - p + kj;
            out[ox] = (ix >= 0 && ix < d.w) ? in[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
void col2im(const double* cols, const Dims& d, double* image) {
  const std::int64_t s = d.g.stride, p = d.g.padding;
  for (std::int64_t c = 0; c < d.cin; ++c) {
    for (std::int64_t ki = 0; ki < d.k; ++ki) {
      for (std::int64_t kj = 0; kj < d.k; ++kj) {
        const double* row = cols + ((c * d.k + ki) * d.k + kj) * d.positions();
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * s - p + ki;
          if (iy < 0 || iy >= d.h) continue;
          double* out = image + (c * d.h + iy) * d.w;
          const double* in = row + oy * d.wo;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * s - p + kj;
            if (ix >= 0 && ix < d.w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

void check_rank4(const Var& v, const char* what) {
  if (v.value().rank() != 4) throw DimensionError(std::string(what) + " must be rank 4, got " + shape_str(v.shape()));
}

void check_geometry(ConvGeometry g) {
  if (g.stride < 1 || g.padding < 0) throw ConfigError("conv: stride must be >= 1 and padding >= 0");
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, ConvGeometry g) {
  const std::int64_t span = in + 2 * g.padding - kernel;
  if (span < 0) throw DimensionError("conv: kernel larger than padded input");
  return span / g.stride + 1;
}

Var conv2d(const Var& x, const Var& w, ConvGeometry g) {
  check_rank4(x, "conv2d input");
  check_rank4(w, "conv2d kernel");
  check_geometry(g);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3]) {
    throw DimensionError("conv2d: kernel " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  Dims d{xs[0], xs[1], xs[2], xs[3], ws[0], 0, 0, ws[2], g};
  d.ho = conv_out_size(d.h, d.k, g);
  d.wo = conv_out_size(d.w, d.k, g);

  Tensor out(Shape{d.n, d.cout, d.ho, d.wo});
  std::vector<double> cols(static_cast<std::size_t>(d.patch() * d.positions()));
  ConstMap kernel(w.value().ptr(), d.cout, d.patch());
  for (std::int64_t n = 0; n < d.n; ++n) {
    im2col(x.value().ptr() + n * d.cin * d.h * d.w, d, cols.data());
    MutMap(out.ptr() + n * d.cout * d.positions(), d.cout, d.positions()).noalias() =
        kernel * ConstMap(cols.data(), d.patch(), d.positions());
  }
  const std::int64_t k = d.k, h = d.h, wd = d.w;
  return make_result("conv2d", std::move(out), {x, w}, [g, k, h, wd](const Var& grad, const BackwardCtx& ctx) {
    const Var& in = ctx.input(0);
    const Var& kernel = ctx.input(1);
    return std::vector<Var>{ctx.need(0) ? conv_transpose2d(grad, kernel, g, h, wd) : Var{},
                            ctx.need(1) ? conv2d_weight(in, grad, k, g) : Var{}};
  });
}

Var conv_transpose2d(const Var& y, const Var& w, ConvGeometry g, std::int64_t out_h, std::int64_t out_w) {
  check_rank4(y, "conv_transpose2d input");
  check_rank4(w, "conv_transpose2d kernel");
  check_geometry(g);
  const Shape& ys = y.shape();
  const Shape& ws = w.shape();
  if (ws[0] != ys[1] || ws[2] != ws[3]) {
    throw DimensionError("conv_transpose2d: kernel " + shape_str(ws) + " incompatible with input " +
                         shape_str(ys));
  }
  Dims d{ys[0], ws[1], out_h, out_w, ws[0], ys[2], ys[3], ws[2], g};
  if (conv_out_size(out_h, d.k, g) != d.ho || conv_out_size(out_w, d.k, g) != d.wo) {
    throw DimensionError("conv_transpose2d: output size " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " does not map back to " + shape_str(ys));
  }

  Tensor out(Shape{d.n, d.cin, d.h, d.w});
  std::vector<double> cols(static_cast<std::size_t>(d.patch() * d.positions()));
  ConstMap kernel(w.value().ptr(), d.cout, d.patch());
  for (std::int64_t n = 0; n < d.n; ++n) {
    MutMap(cols.data(), d.patch(), d.positions()).noalias() =
        kernel.transpose() * ConstMap(y.value().ptr() + n * d.cout * d.positions(), d.cout, d.positions());
    col2im(cols.data(), d, out.ptr() + n * d.cin * d.h * d.w);
  }
  const std::int64_t k = d.k;
  return make_result("conv_transpose2d", std::move(out), {y, w}, [g, k](const Var& grad, const BackwardCtx& ctx) {
    const Var& in = ctx.input(0);
    const Var& kernel = ctx.input(1);
    return std::vector<Var>{ctx.need(0) ? conv2d(grad, kernel, g) : Var{},
                            ctx.need(1) ? conv2d_weight(grad, in, k, g) : Var{}};
  });
}

Var conv2d_weight(const Var& x, const Var& gy, std::int64_t kernel, ConvGeometry g) {
  check_rank4(x, "conv2d_weight input");
  check_rank4(gy, "conv2d_weight output gradient");
  check_geometry(g);
  const Shape& xs = x.shape();
  const Shape& gs = gy.shape();
  Dims d{xs[0], xs[1], xs[2], xs[3], gs[1], gs[2], gs[3], kernel, g};
  if (gs[0] != d.n || conv_out_size(d.h, kernel, g) != d.ho || conv_out_size(d.w, kernel, g) != d.wo) {
    throw DimensionError("conv2d_weight: " + shape_str(gs) + " is not a conv2d output of " + shape_str(xs));
  }

  Tensor out(Shape{d.cout, d.cin, kernel, kernel});
  MutMap acc(out.ptr(), d.cout, d.patch());
  std::vector<double> cols(static_cast<std::size_t>(d.patch() * d.positions()));
  for (std::int64_t n = 0; n < d.n; ++n) {
    im2col(x.value().ptr() + n * d.cin * d.h * d.w, d, cols.data());
    acc.noalias() += ConstMap(gy.value().ptr() + n * d.cout * d.positions(), d.cout, d.positions()) *
                     ConstMap(cols.data(), d.patch(), d.positions()).transpose();
  }
  const std::int64_t h = d.h, wd = d.w;
  return make_result("conv2d_weight", std::move(out), {x, gy}, [g, h, wd](const Var& grad, const BackwardCtx& ctx) {
    const Var& in = ctx.input(0);
    const Var& out_grad = ctx.input(1);
    return std::vector<Var>{ctx.need(0) ? conv_transpose2d(out_grad, grad, g, h, wd) : Var{},
                            ctx.need(1) ? conv2d(in, grad, g) : Var{}};
  });
}

}  // namespace jepa::ad
