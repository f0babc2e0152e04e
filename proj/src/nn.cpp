#include "patchrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace patchrl::nn {

namespace {

using MatCM = Eigen::MatrixXd;
using MapCM = Eigen::Map<MatCM>;
using CMapCM = Eigen::Map<const MatCM>;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

// Fills the (cin*9) x (h*w) im2col matrix for a 3x3/pad1/stride1 kernel.
std::shared_ptr<MatCM> im2col3x3(const Arr& x, Shape s) {
  auto cols = std::make_shared<MatCM>(MatCM::Zero(s.c * 9, s.h * s.w));
  for (int ci = 0; ci < s.c; ++ci) {
    const int base = ci * s.h * s.w;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int krow = ci * 9 + (dy + 1) * 3 + (dx + 1);
        for (int r = 0; r < s.h; ++r) {
          const int rr = r + dy;
          if (rr < 0 || rr >= s.h) continue;
          for (int c = 0; c < s.w; ++c) {
            const int cc = c + dx;
            if (cc < 0 || cc >= s.w) continue;
            (*cols)(krow, r * s.w + c) = x[base + rr * s.w + cc];
          }
        }
      }
    }
  }
  return cols;
}

void col2im3x3_accumulate(const MatCM& dcols, Shape s, Arr& dx) {
  for (int ci = 0; ci < s.c; ++ci) {
    const int base = ci * s.h * s.w;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx_ = -1; dx_ <= 1; ++dx_) {
        const int krow = ci * 9 + (dy + 1) * 3 + (dx_ + 1);
        for (int r = 0; r < s.h; ++r) {
          const int rr = r + dy;
          if (rr < 0 || rr >= s.h) continue;
          for (int c = 0; c < s.w; ++c) {
            const int cc = c + dx_;
            if (cc < 0 || cc >= s.w) continue;
            dx[base + rr * s.w + cc] += dcols(krow, r * s.w + c);
          }
        }
      }
    }
  }
}

}  // namespace

int Tape::emit(Arr value, Shape shape, bool needs_grad,
               std::function<void(Tape&, const Node&)> bw) {
  Node n;
  n.value = std::move(value);
  n.shape = shape;
  n.needs_grad = needs_grad;
  n.backward = needs_grad ? std::move(bw) : nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

Arr& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Arr::Zero(n.value.size());
  return n.grad;
}

int Tape::input(Arr value, Shape shape, bool needs_grad) {
  if (value.size() != shape.size()) throw std::invalid_argument("input: size mismatch");
  return emit(std::move(value), shape, needs_grad, nullptr);
}

int Tape::scalar_constant(double v) {
  Arr a(1);
  a[0] = v;
  return constant(std::move(a), {1, 1, 1});
}

int Tape::dense(int x, int weight, int bias) {
  const Shape xs = shape(x), ws = shape(weight);
  const int in = ws.h, out = ws.c;
  if (xs.size() != in) throw std::invalid_argument("dense: input size mismatch");
  CMapCM W(value(weight).data(), out, in);
  Eigen::Map<const Eigen::VectorXd> xv(value(x).data(), in);
  Eigen::VectorXd y = W * xv + Eigen::Map<const Eigen::VectorXd>(value(bias).data(), out);
  const bool ng = needs_grad(x) || needs_grad(weight) || needs_grad(bias);
  return emit(Arr(y.array()), {out, 1, 1}, ng,
              [x, weight, bias, in, out](Tape& t, const Node& n) {
                Eigen::Map<const Eigen::VectorXd> gy(n.grad.data(), out);
                CMapCM W(t.value(weight).data(), out, in);
                Eigen::Map<const Eigen::VectorXd> xv(t.value(x).data(), in);
                if (t.needs_grad(x)) {
                  Eigen::Map<Eigen::VectorXd> gx(t.grad_buf(x).data(), in);
                  gx.noalias() += W.transpose() * gy;
                }
                if (t.needs_grad(weight)) {
                  MapCM gW(t.grad_buf(weight).data(), out, in);
                  gW.noalias() += gy * xv.transpose();
                }
                if (t.needs_grad(bias)) {
                  Eigen::Map<Eigen::VectorXd> gb(t.grad_buf(bias).data(), out);
                  gb += gy;
                }
              });
}

int Tape::conv3x3(int x, int weight, int bias) {
  const Shape xs = shape(x), ws = shape(weight);
  if (ws.h != xs.c || ws.w != 9) throw std::invalid_argument("conv3x3: weight shape mismatch");
  const int cout = ws.c, hw = xs.spatial();
  auto cols = im2col3x3(value(x), xs);
  Arr out(cout * hw);
  MapRM y(out.data(), cout, hw);
  CMapCM W(value(weight).data(), cout, xs.c * 9);
  y.noalias() = W * (*cols);
  for (int ch = 0; ch < cout; ++ch) y.row(ch).array() += value(bias)[ch];
  const bool ng = needs_grad(x) || needs_grad(weight) || needs_grad(bias);
  const Shape os{cout, xs.h, xs.w};
  return emit(std::move(out), os, ng,
              [x, weight, bias, cols, xs, cout, hw](Tape& t, const Node& n) {
                CMapRM gy(n.grad.data(), cout, hw);
                if (t.needs_grad(weight)) {
                  MapCM gW(t.grad_buf(weight).data(), cout, xs.c * 9);
                  gW.noalias() += gy * cols->transpose();
                }
                if (t.needs_grad(bias)) {
                  Eigen::Map<Eigen::VectorXd> gb(t.grad_buf(bias).data(), cout);
                  gb += gy.rowwise().sum();
                }
                if (t.needs_grad(x)) {
                  CMapCM W(t.value(weight).data(), cout, xs.c * 9);
                  MatCM dcols = W.transpose() * gy;
                  col2im3x3_accumulate(dcols, xs, t.grad_buf(x));
                }
              });
}

int Tape::relu(int x) {
  Arr y = value(x).cwiseMax(0.0);
  return emit(std::move(y), shape(x), needs_grad(x), [x](Tape& t, const Node& n) {
    if (!t.needs_grad(x)) return;
    t.grad_buf(x) += n.grad * (t.value(x) > 0.0).cast<double>();
  });
}

int Tape::tanh_act(int x) {
  Arr y = value(x).tanh();
  return emit(std::move(y), shape(x), needs_grad(x), [x](Tape& t, const Node& n) {
    if (!t.needs_grad(x)) return;
    t.grad_buf(x) += n.grad * (1.0 - n.value.square());
  });
}

int Tape::avgpool2(int x) {
  const Shape xs = shape(x);
  const int oh = std::max(1, xs.h / 2), ow = std::max(1, xs.w / 2);
  const int wh = xs.h >= 2 ? 2 : 1, ww = xs.w >= 2 ? 2 : 1;
  Arr out(xs.c * oh * ow);
  const Arr& xv = value(x);
  for (int ci = 0; ci < xs.c; ++ci)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (int dr = 0; dr < wh; ++dr)
          for (int dc = 0; dc < ww; ++dc)
            acc += xv[(ci * xs.h + r * wh + dr) * xs.w + c * ww + dc];
        out[(ci * oh + r) * ow + c] = acc / (wh * ww);
      }
  return emit(std::move(out), {xs.c, oh, ow}, needs_grad(x),
              [x, xs, oh, ow, wh, ww](Tape& t, const Node& n) {
                if (!t.needs_grad(x)) return;
                Arr& gx = t.grad_buf(x);
                const double inv = 1.0 / (wh * ww);
                for (int ci = 0; ci < xs.c; ++ci)
                  for (int r = 0; r < oh; ++r)
                    for (int c = 0; c < ow; ++c) {
                      const double g = n.grad[(ci * oh + r) * ow + c] * inv;
                      for (int dr = 0; dr < wh; ++dr)
                        for (int dc = 0; dc < ww; ++dc)
                          gx[(ci * xs.h + r * wh + dr) * xs.w + c * ww + dc] += g;
                    }
              });
}

namespace {
// 1D source index/weight table for x2 bilinear upsampling.
struct Lerp1D {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight on i1; (1-w1) on i0
};
Lerp1D upsample2_table(int in, int out) {
  Lerp1D t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int j = 0; j < out; ++j) {
    double f = (j + 0.5) * scale - 0.5;
    f = std::clamp(f, 0.0, static_cast<double>(in - 1));
    t.i0[j] = static_cast<int>(std::floor(f));
    t.i1[j] = std::min(t.i0[j] + 1, in - 1);
    t.w1[j] = f - t.i0[j];
  }
  return t;
}
}  // namespace

int Tape::upsample2(int x) {
  const Shape xs = shape(x);
  const int oh = xs.h * 2, ow = xs.w * 2;
  auto ty = std::make_shared<Lerp1D>(upsample2_table(xs.h, oh));
  auto tx = std::make_shared<Lerp1D>(upsample2_table(xs.w, ow));
  Arr out(xs.c * oh * ow);
  const Arr& xv = value(x);
  for (int ci = 0; ci < xs.c; ++ci)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        const double a = xv[(ci * xs.h + ty->i0[r]) * xs.w + tx->i0[c]];
        const double b = xv[(ci * xs.h + ty->i0[r]) * xs.w + tx->i1[c]];
        const double d = xv[(ci * xs.h + ty->i1[r]) * xs.w + tx->i0[c]];
        const double e = xv[(ci * xs.h + ty->i1[r]) * xs.w + tx->i1[c]];
        const double top = (1 - tx->w1[c]) * a + tx->w1[c] * b;
        const double bot = (1 - tx->w1[c]) * d + tx->w1[c] * e;
        out[(ci * oh + r) * ow + c] = (1 - ty->w1[r]) * top + ty->w1[r] * bot;
      }
  return emit(std::move(out), {xs.c, oh, ow}, needs_grad(x),
              [x, xs, oh, ow, ty, tx](Tape& t, const Node& n) {
                if (!t.needs_grad(x)) return;
                Arr& gx = t.grad_buf(x);
                for (int ci = 0; ci < xs.c; ++ci)
                  for (int r = 0; r < oh; ++r)
                    for (int c = 0; c < ow; ++c) {
                      const double g = n.grad[(ci * oh + r) * ow + c];
                      const double wy = ty->w1[r], wx = tx->w1[c];
                      gx[(ci * xs.h + ty->i0[r]) * xs.w + tx->i0[c]] += g * (1 - wy) * (1 - wx);
                      gx[(ci * xs.h + ty->i0[r]) * xs.w + tx->i1[c]] += g * (1 - wy) * wx;
                      gx[(ci * xs.h + ty->i1[r]) * xs.w + tx->i0[c]] += g * wy * (1 - wx);
                      gx[(ci * xs.h + ty->i1[r]) * xs.w + tx->i1[c]] += g * wy * wx;
                    }
              });
}

int Tape::concat_channels(int a, int b) {
  const Shape as = shape(a), bs = shape(b);
  if (as.h != bs.h || as.w != bs.w)
    throw std::invalid_argument("concat_channels: spatial dims differ");
  Arr out(as.size() + bs.size());
  out.head(as.size()) = value(a);
  out.tail(bs.size()) = value(b);
  const bool ng = needs_grad(a) || needs_grad(b);
  return emit(std::move(out), {as.c + bs.c, as.h, as.w}, ng,
              [a, b](Tape& t, const Node& n) {
                const int na = t.value(a).size(), nb = t.value(b).size();
                if (t.needs_grad(a)) t.grad_buf(a) += n.grad.head(na);
                if (t.needs_grad(b)) t.grad_buf(b) += n.grad.tail(nb);
              });
}

int Tape::reshape(int x, Shape s) {
  if (s.size() != shape(x).size()) throw std::invalid_argument("reshape: size mismatch");
  return emit(value(x), s, needs_grad(x), [x](Tape& t, const Node& n) {
    if (t.needs_grad(x)) t.grad_buf(x) += n.grad;
  });
}

int Tape::softmax_spatial(int x) {
  const Shape xs = shape(x);
  const int hw = xs.spatial();
  Arr y(xs.size());
  for (int ci = 0; ci < xs.c; ++ci) {
    auto seg = value(x).segment(ci * hw, hw);
    const double m = seg.maxCoeff();
    Arr e = (seg - m).exp();
    y.segment(ci * hw, hw) = e / e.sum();
  }
  return emit(std::move(y), xs, needs_grad(x), [x, xs, hw](Tape& t, const Node& n) {
    if (!t.needs_grad(x)) return;
    Arr& gx = t.grad_buf(x);
    for (int ci = 0; ci < xs.c; ++ci) {
      auto yv = n.value.segment(ci * hw, hw);
      auto gv = n.grad.segment(ci * hw, hw);
      const double dot = (yv * gv).sum();
      gx.segment(ci * hw, hw) += yv * (gv - dot);
    }
  });
}

int Tape::softmax_flat(int x) {
  const double m = value(x).maxCoeff();
  Arr e = (value(x) - m).exp();
  Arr y = e / e.sum();
  return emit(std::move(y), shape(x), needs_grad(x), [x](Tape& t, const Node& n) {
    if (!t.needs_grad(x)) return;
    const double dot = (n.value * n.grad).sum();
    t.grad_buf(x) += n.value * (n.grad - dot);
  });
}

int Tape::channel_means(int x) {
  const Shape xs = shape(x);
  const int hw = xs.spatial();
  Arr y(xs.c);
  for (int ci = 0; ci < xs.c; ++ci) y[ci] = value(x).segment(ci * hw, hw).mean();
  return emit(std::move(y), {xs.c, 1, 1}, needs_grad(x), [x, xs, hw](Tape& t, const Node& n) {
    if (!t.needs_grad(x)) return;
    Arr& gx = t.grad_buf(x);
    for (int ci = 0; ci < xs.c; ++ci) gx.segment(ci * hw, hw) += n.grad[ci] / hw;
  });
}

int Tape::mean_channels(int x) {
  const Shape xs = shape(x);
  const int hw = xs.spatial();
  Arr y = Arr::Zero(hw);
  for (int ci = 0; ci < xs.c; ++ci) y += value(x).segment(ci * hw, hw);
  y /= xs.c;
  return emit(std::move(y), {1, xs.h, xs.w}, needs_grad(x), [x, xs, hw](Tape& t, const Node& n) {
    if (!t.needs_grad(x)) return;
    Arr& gx = t.grad_buf(x);
    for (int ci = 0; ci < xs.c; ++ci) gx.segment(ci * hw, hw) += n.grad / xs.c;
  });
}

int Tape::sum(int x) {
  Arr y(1);
  y[0] = value(x).sum();
  return emit(std::move(y), {1, 1, 1}, needs_grad(x), [x](Tape& t, const Node& n) {
    if (t.needs_grad(x)) t.grad_buf(x) += n.grad[0];
  });
}

int Tape::sum_squares(int x) {
  Arr y(1);
  y[0] = value(x).square().sum();
  return emit(std::move(y), {1, 1, 1}, needs_grad(x), [x](Tape& t, const Node& n) {
    if (t.needs_grad(x)) t.grad_buf(x) += 2.0 * n.grad[0] * t.value(x);
  });
}

int Tape::mean_all(int x) {
  const double inv = 1.0 / value(x).size();
  return scale(sum(x), inv);
}

int Tape::add(int a, int b) {
  if (!(shape(a) == shape(b))) throw std::invalid_argument("add: shape mismatch");
  Arr y = value(a) + value(b);
  const bool ng = needs_grad(a) || needs_grad(b);
  return emit(std::move(y), shape(a), ng, [a, b](Tape& t, const Node& n) {
    if (t.needs_grad(a)) t.grad_buf(a) += n.grad;
    if (t.needs_grad(b)) t.grad_buf(b) += n.grad;
  });
}

int Tape::mul(int a, int b) {
  if (!(shape(a) == shape(b))) throw std::invalid_argument("mul: shape mismatch");
  Arr y = value(a) * value(b);
  const bool ng = needs_grad(a) || needs_grad(b);
  return emit(std::move(y), shape(a), ng, [a, b](Tape& t, const Node& n) {
    if (t.needs_grad(a)) t.grad_buf(a) += n.grad * t.value(b);
    if (t.needs_grad(b)) t.grad_buf(b) += n.grad * t.value(a);
  });
}

int Tape::scale(int x, double k) {
  Arr y = value(x) * k;
  return emit(std::move(y), shape(x), needs_grad(x), [x, k](Tape& t, const Node& n) {
    if (t.needs_grad(x)) t.grad_buf(x) += n.grad * k;
  });
}

int Tape::add_scalar(int x, double k) {
  Arr y = value(x) + k;
  return emit(std::move(y), shape(x), needs_grad(x), [x](Tape& t, const Node& n) {
    if (t.needs_grad(x)) t.grad_buf(x) += n.grad;
  });
}

int Tape::mul_const(int x, const Arr& k) {
  if (k.size() != value(x).size()) throw std::invalid_argument("mul_const: size mismatch");
  Arr y = value(x) * k;
  Arr kc = k;
  return emit(std::move(y), shape(x), needs_grad(x),
              [x, kc = std::move(kc)](Tape& t, const Node& n) {
                if (t.needs_grad(x)) t.grad_buf(x) += n.grad * kc;
              });
}

int Tape::log_elem(int x) {
  Arr y = value(x).log();
  return emit(std::move(y), shape(x), needs_grad(x), [x](Tape& t, const Node& n) {
    if (t.needs_grad(x)) t.grad_buf(x) += n.grad / t.value(x);
  });
}

int Tape::div_by_scalar(int x, int s) {
  const double sv = value(s)[0];
  Arr y = value(x) / sv;
  const bool ng = needs_grad(x) || needs_grad(s);
  return emit(std::move(y), shape(x), ng, [x, s](Tape& t, const Node& n) {
    const double sv = t.value(s)[0];
    if (t.needs_grad(x)) t.grad_buf(x) += n.grad / sv;
    if (t.needs_grad(s)) t.grad_buf(s)[0] += -(n.grad * n.value).sum() / sv;
  });
}

int Tape::gather(int x, int index) {
  if (index < 0 || index >= value(x).size()) throw std::out_of_range("gather: bad index");
  Arr y(1);
  y[0] = value(x)[index];
  return emit(std::move(y), {1, 1, 1}, needs_grad(x), [x, index](Tape& t, const Node& n) {
    if (t.needs_grad(x)) t.grad_buf(x)[index] += n.grad[0];
  });
}

int Tape::affine_combine(const std::vector<int>& xs, const std::vector<double>& coeffs,
                         double bias) {
  if (xs.size() != coeffs.size()) throw std::invalid_argument("affine_combine: size mismatch");
  double acc = bias;
  bool ng = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += coeffs[i] * value(xs[i])[0];
    ng = ng || needs_grad(xs[i]);
  }
  Arr y(1);
  y[0] = acc;
  return emit(std::move(y), {1, 1, 1}, ng,
              [xs, coeffs](Tape& t, const Node& n) {
                for (std::size_t i = 0; i < xs.size(); ++i)
                  if (t.needs_grad(xs[i])) t.grad_buf(xs[i])[0] += coeffs[i] * n.grad[0];
              });
}

int Tape::gaussian_logpdf_sum(int mu, const Arr& a, double sigma) {
  if (a.size() != value(mu).size())
    throw std::invalid_argument("gaussian_logpdf_sum: size mismatch");
  const double var = sigma * sigma;
  const double log_norm = std::log(sigma) + 0.5 * std::log(2.0 * 3.141592653589793238462643);
  Arr diff = a - value(mu);
  Arr y(1);
  y[0] = (-(diff.square()) / (2.0 * var) - log_norm).sum();
  Arr ac = a;
  return emit(std::move(y), {1, 1, 1}, needs_grad(mu),
              [mu, ac = std::move(ac), var](Tape& t, const Node& n) {
                if (!t.needs_grad(mu)) return;
                t.grad_buf(mu) += n.grad[0] * (ac - t.value(mu)) / var;
              });
}

int Tape::cosine_vs_unit(int x, const Arr& unit) {
  if (unit.size() != value(x).size())
    throw std::invalid_argument("cosine_vs_unit: size mismatch");
  const double nx = std::max(std::sqrt(value(x).square().sum()), 1e-30);
  const double dot = (value(x) * unit).sum();
  Arr y(1);
  y[0] = dot / nx;
  Arr uc = unit;
  return emit(std::move(y), {1, 1, 1}, needs_grad(x),
              [x, uc = std::move(uc)](Tape& t, const Node& n) {
                if (!t.needs_grad(x)) return;
                const Arr& xv = t.value(x);
                const double nx = std::max(std::sqrt(xv.square().sum()), 1e-30);
                t.grad_buf(x) += n.grad[0] * (uc / nx - n.value[0] * xv / (nx * nx));
              });
}

int Tape::cosine_rows(int x, int rows) {
  const Shape rs = shape(rows);
  const int k = rs.c, d = rs.h;
  if (value(x).size() != d) throw std::invalid_argument("cosine_rows: dim mismatch");
  const Arr& xv = value(x);
  const Arr& pv = value(rows);
  const double nx = std::max(std::sqrt(xv.square().sum()), 1e-30);
  Arr y(k);
  for (int j = 0; j < k; ++j) {
    auto pj = pv.segment(j * d, d);
    const double np = std::max(std::sqrt(pj.square().sum()), 1e-30);
    y[j] = (xv * pj).sum() / (nx * np);
  }
  const bool ng = needs_grad(x) || needs_grad(rows);
  return emit(std::move(y), {k, 1, 1}, ng, [x, rows, k, d](Tape& t, const Node& n) {
    const Arr& xv = t.value(x);
    const Arr& pv = t.value(rows);
    const double nx = std::max(std::sqrt(xv.square().sum()), 1e-30);
    for (int j = 0; j < k; ++j) {
      const double g = n.grad[j];
      if (g == 0.0) continue;
      auto pj = pv.segment(j * d, d);
      const double np = std::max(std::sqrt(pj.square().sum()), 1e-30);
      const double cosv = n.value[j];
      if (t.needs_grad(x))
        t.grad_buf(x) += g * (pj / (nx * np) - cosv * xv / (nx * nx));
      if (t.needs_grad(rows))
        t.grad_buf(rows).segment(j * d, d) += g * (xv / (nx * np) - cosv * pj / (np * np));
    }
  });
}

int Tape::cross_entropy_logits(int logits, int target) {
  const Arr& z = value(logits);
  if (target < 0 || target >= z.size())
    throw std::out_of_range("cross_entropy_logits: bad target");
  const double m = z.maxCoeff();
  const double lse = m + std::log((z - m).exp().sum());
  Arr y(1);
  y[0] = lse - z[target];
  return emit(std::move(y), {1, 1, 1}, needs_grad(logits),
              [logits, target](Tape& t, const Node& n) {
                if (!t.needs_grad(logits)) return;
                const Arr& z = t.value(logits);
                const double m = z.maxCoeff();
                Arr p = (z - m).exp();
                p /= p.sum();
                p[target] -= 1.0;
                t.grad_buf(logits) += n.grad[0] * p;
              });
}

void Tape::backward(int root) {
  if (value(root).size() != 1) throw std::invalid_argument("backward: root must be scalar");
  grad_buf(root)[0] += 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n);
  }
}

}  // namespace patchrl::nn
