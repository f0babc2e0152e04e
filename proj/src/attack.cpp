#include "patchrl/attack.hpp"

#include <algorithm>
#include <cmath>

namespace patchrl::attack {

const char* mode_name(Mode m) { return m == Mode::kDodging ? "dodging" : "impersonation"; }

Mode mode_from_name(const std::string& name) {
  if (name == "dodging") return Mode::kDodging;
  if (name == "impersonation") return Mode::kImpersonation;
  throw std::invalid_argument("unknown mode: " + name);
}

EnsembleWeights EnsembleWeights::equal(int n) {
  EnsembleWeights w;
  w.values = Eigen::VectorXd::Constant(n, 1.0 / n);
  return w;
}

EnsembleWeights EnsembleWeights::normalized(const Eigen::VectorXd& raw) {
  Eigen::VectorXd clipped = raw.cwiseMax(0.0);
  const double total = clipped.sum();
  if (!(total > 0.0))
    throw std::domain_error("EnsembleWeights: all weights clipped to zero");
  EnsembleWeights w;
  w.values = clipped / total;
  return w;
}

bool EnsembleWeights::on_simplex(double tol) const {
  if ((values.array() < 0.0).any()) return false;
  return std::abs(values.sum() - 1.0) <= tol;
}

std::vector<double> step_grid() {
  std::vector<double> g(20);
  for (int k = 0; k < 20; ++k) g[k] = 0.01 * (k + 1);
  return g;
}

namespace {

constexpr double kPixelEps = 1e-6;  // arctanh domain clamp

// Mean over the masked entries of 1/2 * (1 - tanh^2(arctanh(2v-1))). With
// t = 2v-1 the tanh/arctanh pair cancels, leaving 1/2 * (1 - t^2).
double tanh_gradient_mean(const img::Image& xt, const img::PatchMask& mask,
                          img::Image* grad_out, double coeff) {
  double acc = 0.0;
  const long entries =
      static_cast<long>(mask.spec.height) * mask.spec.width * xt.channels;
  if (entries == 0) return 0.0;
  for (int r = mask.origin_row; r < mask.origin_row + mask.spec.height; ++r) {
    for (int c = mask.origin_col; c < mask.origin_col + mask.spec.width; ++c) {
      for (int ch = 0; ch < xt.channels; ++ch) {
        const double v = std::clamp(xt.at(r, c, ch), kPixelEps, 1.0 - kPixelEps);
        const double t = 2.0 * v - 1.0;
        acc += 0.5 * (1.0 - t * t);
        if (grad_out) {
          const bool interior = xt.at(r, c, ch) > kPixelEps && xt.at(r, c, ch) < 1.0 - kPixelEps;
          if (interior) grad_out->at(r, c, ch) += coeff * (-2.0 * t) / entries;
        }
      }
    }
  }
  return acc / entries;
}

double loss_impl(const img::Image& xt, const std::string& label,
                 const Surrogates& surrogates, const EnsembleWeights& rho, Mode mode,
                 const img::PatchMask* mask, double beta, img::Image* grad_out) {
  if (static_cast<int>(surrogates.size()) != rho.values.size())
    throw std::invalid_argument("ensemble loss: weight/model count mismatch");

  nn::Tape tape;
  const bool want_grad = grad_out != nullptr;
  const nn::Shape in_shape{xt.channels, xt.height, xt.width};
  const int x_node = tape.input(models::to_chw(xt), in_shape, want_grad);

  std::vector<int> per_model;
  std::vector<double> coeffs;
  for (std::size_t i = 0; i < surrogates.size(); ++i) {
    const models::Recognizer& r = surrogates[i];
    auto it = r.gallery.entries.find(label);
    if (it == r.gallery.entries.end())
      throw std::invalid_argument("ensemble loss: identity not in surrogate gallery: " + label);
    const auto bound = r.extractor->bind(tape, false);
    const int emb = r.extractor->forward(tape, x_node, bound);
    const nn::Arr unit = it->second.array();
    const int cosv = tape.cosine_vs_unit(emb, unit);
    // confidence = (cos + 1) / 2; dodging loss 1 - f, impersonation loss f
    const int conf = tape.add_scalar(tape.scale(cosv, 0.5), 0.5);
    const int term = mode == Mode::kDodging
                         ? tape.add_scalar(tape.scale(conf, -1.0), 1.0)
                         : conf;
    per_model.push_back(term);
    coeffs.push_back(rho.values[static_cast<Eigen::Index>(i)]);
  }
  const int total = tape.affine_combine(per_model, coeffs, 0.0);
  double loss = tape.value(total)[0];

  if (want_grad) {
    tape.backward(total);
    *grad_out = models::from_chw(tape.grad(x_node), xt.height, xt.width, xt.channels);
  }
  if (beta != 0.0 && mask != nullptr)
    loss += beta * tanh_gradient_mean(xt, *mask, grad_out, beta);
  return loss;
}

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

}  // namespace

double ensemble_loss(const img::Image& xt, const std::string& label,
                     const Surrogates& surrogates, const EnsembleWeights& rho, Mode mode) {
  return loss_impl(xt, label, surrogates, rho, mode, nullptr, 0.0, nullptr);
}

double ensemble_loss_zo_reg(const img::Image& xt, const std::string& label,
                            const Surrogates& surrogates, const EnsembleWeights& rho,
                            Mode mode, const img::PatchMask& mask, double beta) {
  return loss_impl(xt, label, surrogates, rho, mode, &mask, beta, nullptr);
}

double ensemble_loss_grad(const img::Image& xt, const std::string& label,
                          const Surrogates& surrogates, const EnsembleWeights& rho,
                          Mode mode, const img::PatchMask* mask, double beta,
                          img::Image* grad_out) {
  if (grad_out) *grad_out = img::Image(xt.height, xt.width, xt.channels);
  return loss_impl(xt, label, surrogates, rho, mode, mask, beta, grad_out);
}

img::Image mifgsm_patch(const img::Image& x, const img::PatchMask& mask,
                        const EnsembleWeights& rho, const MifgsmConfig& cfg,
                        const Surrogates& surrogates) {
  if (mask.image_height != x.height || mask.image_width != x.width)
    throw std::invalid_argument("mifgsm_patch: mask dims do not match image");

  img::Image xt = x;
  img::Image momentum(x.height, x.width, x.channels);
  img::Image grad;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    ensemble_loss_grad(xt, cfg.label, surrogates, rho, cfg.mode,
                       cfg.zo_reg_beta != 0.0 ? &mask : nullptr, cfg.zo_reg_beta, &grad);
    const double l1 = grad.data.abs().sum();
    // Eq.-style L1 normalization is undefined at zero gradient; fall back to
    // the raw (effectively zero) step.
    if (l1 >= 1e-12)
      momentum.data = cfg.momentum_decay * momentum.data + grad.data / l1;
    else
      momentum.data = cfg.momentum_decay * momentum.data + grad.data;

    for (int r = mask.origin_row; r < mask.origin_row + mask.spec.height; ++r)
      for (int c = mask.origin_col; c < mask.origin_col + mask.spec.width; ++c)
        for (int ch = 0; ch < x.channels; ++ch) {
          const double step = cfg.step_size * sign_of(momentum.at(r, c, ch));
          xt.at(r, c, ch) = std::clamp(xt.at(r, c, ch) + step, 0.0, 1.0);
        }

    if (cfg.smooth && mask.spec.height > 0 && mask.spec.width > 0) {
      const img::Image patch = img::crop(xt, mask);
      xt = img::uncrop(xt, img::smooth_patch(patch), mask);
    }
  }
  return xt;
}

}  // namespace patchrl::attack
