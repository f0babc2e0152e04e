#include <doctest.h>

#include <cmath>
#include <functional>
#include <patchrl/nn.hpp>
#include <patchrl/rng.hpp>

using namespace patchrl;
using nn::Arr;

namespace {

Arr random_arr(int n, std::uint64_t seed, double scale = 1.0) {
  Arr a(n);
  rng::Stream rs(seed);
  for (int i = 0; i < n; ++i) a[i] = rs.normal(0.0, scale);
  return a;
}

// Central finite differences of a scalar function at one coordinate.
double fd_grad(const std::function<double(const Arr&)>& f, Arr x, int idx,
               double h = 1e-5) {
  Arr xp = x, xm = x;
  xp[idx] += h;
  xm[idx] -= h;
  return (f(xp) - f(xm)) / (2.0 * h);
}

}  // namespace

TEST_CASE("dense matches finite differences for input, weight and bias") {
  const int in = 7, out = 4;
  const Arr W = random_arr(in * out, 1);
  const Arr b = random_arr(out, 2);
  const Arr x = random_arr(in, 3);

  auto loss_of = [&](const Arr& xv, const Arr& Wv, const Arr& bv) {
    nn::Tape t;
    const int xi = t.input(xv, {in, 1, 1}, false);
    const int wi = t.input(Wv, {out, in, 1}, false);
    const int bi = t.input(bv, {out, 1, 1}, false);
    return t.value(t.sum_squares(t.dense(xi, wi, bi)))[0];
  };

  nn::Tape t;
  const int xi = t.input(x, {in, 1, 1}, true);
  const int wi = t.input(W, {out, in, 1}, true);
  const int bi = t.input(b, {out, 1, 1}, true);
  t.backward(t.sum_squares(t.dense(xi, wi, bi)));

  rng::Stream rs(17);
  for (int probe = 0; probe < 6; ++probe) {
    const int ix = static_cast<int>(rs.uniform_int(0, x.size() - 1));
    CHECK(t.grad(xi)[ix] ==
          doctest::Approx(fd_grad([&](const Arr& v) { return loss_of(v, W, b); }, x, ix))
              .epsilon(1e-4));
    const int iw = static_cast<int>(rs.uniform_int(0, W.size() - 1));
    CHECK(t.grad(wi)[iw] ==
          doctest::Approx(fd_grad([&](const Arr& v) { return loss_of(x, v, b); }, W, iw))
              .epsilon(1e-4));
    const int ib = static_cast<int>(rs.uniform_int(0, b.size() - 1));
    CHECK(t.grad(bi)[ib] ==
          doctest::Approx(fd_grad([&](const Arr& v) { return loss_of(x, W, v); }, b, ib))
              .epsilon(1e-4));
  }
}

TEST_CASE("conv3x3 matches finite differences") {
  const nn::Shape xs{2, 5, 4};
  const int cout = 3;
  const Arr W = random_arr(cout * xs.c * 9, 11, 0.5);
  const Arr b = random_arr(cout, 12, 0.1);
  const Arr x = random_arr(xs.size(), 13);

  auto loss_of = [&](const Arr& xv, const Arr& Wv) {
    nn::Tape t;
    const int xi = t.input(xv, xs, false);
    const int wi = t.input(Wv, {cout, xs.c, 9}, false);
    const int bi = t.input(b, {cout, 1, 1}, false);
    return t.value(t.sum_squares(t.conv3x3(xi, wi, bi)))[0];
  };

  nn::Tape t;
  const int xi = t.input(x, xs, true);
  const int wi = t.input(W, {cout, xs.c, 9}, true);
  const int bi = t.input(b, {cout, 1, 1}, false);
  t.backward(t.sum_squares(t.conv3x3(xi, wi, bi)));

  rng::Stream rs(999);
  for (int probe = 0; probe < 6; ++probe) {
    const int ix = static_cast<int>(rs.uniform_int(0, x.size() - 1));
    const double fd = fd_grad([&](const Arr& xv) { return loss_of(xv, W); }, x, ix);
    CHECK(t.grad(xi)[ix] == doctest::Approx(fd).epsilon(1e-4));
    const int iw = static_cast<int>(rs.uniform_int(0, W.size() - 1));
    const double fdw = fd_grad([&](const Arr& Wv) { return loss_of(x, Wv); }, W, iw);
    CHECK(t.grad(wi)[iw] == doctest::Approx(fdw).epsilon(1e-4));
  }
}

TEST_CASE("pool, upsample, concat, activations match finite differences") {
  const nn::Shape xs{2, 4, 6};
  const Arr x = random_arr(xs.size(), 21);

  auto build = [&](nn::Tape& t, const Arr& xv, bool grad, int* x_id) {
    const int xi = t.input(xv, xs, grad);
    if (x_id) *x_id = xi;
    const int pooled = t.avgpool2(xi);
    const int up = t.upsample2(pooled);
    const int both = t.concat_channels(t.tanh_act(up), t.relu(xi));
    return t.sum_squares(both);
  };

  nn::Tape t;
  int xi = -1;
  t.backward(build(t, x, true, &xi));
  auto value_of = [&](const Arr& xv) {
    nn::Tape t2;
    return t2.value(build(t2, xv, false, nullptr))[0];
  };
  rng::Stream rs(31);
  for (int probe = 0; probe < 8; ++probe) {
    const int ix = static_cast<int>(rs.uniform_int(0, x.size() - 1));
    const double fd = fd_grad(value_of, x, ix);
    CHECK(t.grad(xi)[ix] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("softmax heads match finite differences") {
  const nn::Shape xs{3, 3, 3};
  const Arr x = random_arr(xs.size(), 41);
  Arr mask = (random_arr(9, 42).abs() > 0.5).cast<double>();
  if (mask.sum() == 0) mask[0] = 1.0;
  if (mask[4] == 0.0) mask[4] = 1.0;  // the gathered index must stay reachable
  const Arr draws = random_arr(3, 43, 0.3) + 0.33;

  auto build = [&](nn::Tape& t, const Arr& xv, bool grad, int* x_id) {
    const int xi = t.input(xv, xs, grad);
    if (x_id) *x_id = xi;
    const int sm = t.softmax_spatial(xi);
    const int pos = t.reshape(t.mean_channels(sm), {9, 1, 1});
    const int masked = t.mul_const(pos, mask);
    const int norm = t.div_by_scalar(masked, t.sum(masked));
    const int picked = t.log_elem(t.gather(norm, 4));
    const int mu = t.softmax_flat(t.channel_means(xi));
    const int gauss = t.gaussian_logpdf_sum(mu, draws, 0.1);
    return t.affine_combine({picked, gauss}, {1.0, 0.5}, 0.0);
  };

  nn::Tape t;
  int xi = -1;
  t.backward(build(t, x, true, &xi));
  auto value_of = [&](const Arr& xv) {
    nn::Tape t2;
    return t2.value(build(t2, xv, false, nullptr))[0];
  };
  rng::Stream rs(51);
  for (int probe = 0; probe < 8; ++probe) {
    const int ix = static_cast<int>(rs.uniform_int(0, x.size() - 1));
    const double fd = fd_grad(value_of, x, ix);
    CHECK(t.grad(xi)[ix] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("cosine and cross-entropy heads match finite differences") {
  const int d = 6, k = 4;
  Arr unit = random_arr(d, 61);
  unit /= std::sqrt(unit.square().sum());
  const Arr x = random_arr(d, 62);
  const Arr P = random_arr(k * d, 63);

  auto build = [&](nn::Tape& t, const Arr& xv, const Arr& Pv, bool grad, int* x_id,
                   int* p_id) {
    const int xi = t.input(xv, {d, 1, 1}, grad);
    const int pi = t.input(Pv, {k, d, 1}, grad);
    if (x_id) *x_id = xi;
    if (p_id) *p_id = pi;
    const int cos1 = t.cosine_vs_unit(xi, unit);
    const int cosr = t.cosine_rows(xi, pi);
    const int ce = t.cross_entropy_logits(t.scale(cosr, 8.0), 2);
    return t.affine_combine({cos1, ce}, {1.0, 1.0}, 0.0);
  };

  nn::Tape t;
  int xi = -1, pi = -1;
  t.backward(build(t, x, P, true, &xi, &pi));
  auto value_x = [&](const Arr& xv) {
    nn::Tape t2;
    return t2.value(build(t2, xv, P, false, nullptr, nullptr))[0];
  };
  auto value_p = [&](const Arr& Pv) {
    nn::Tape t2;
    return t2.value(build(t2, x, Pv, false, nullptr, nullptr))[0];
  };
  rng::Stream rs(71);
  for (int probe = 0; probe < 6; ++probe) {
    const int ix = static_cast<int>(rs.uniform_int(0, x.size() - 1));
    CHECK(t.grad(xi)[ix] == doctest::Approx(fd_grad(value_x, x, ix)).epsilon(1e-4));
    const int ip = static_cast<int>(rs.uniform_int(0, P.size() - 1));
    CHECK(t.grad(pi)[ip] == doctest::Approx(fd_grad(value_p, P, ip)).epsilon(1e-4));
  }
}

TEST_CASE("nodes without needs_grad accumulate nothing") {
  nn::Tape t;
  const int xi = t.input(random_arr(5, 81), {5, 1, 1}, false);
  const int loss = t.sum_squares(t.relu(xi));
  t.backward(loss);
  CHECK(t.grad(xi).size() == 0);
}
