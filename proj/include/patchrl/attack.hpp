#ifndef PATCHRL_ATTACK_HPP
#define PATCHRL_ATTACK_HPP

#include <string>
#include <vector>

#include "patchrl/image.hpp"
#include "patchrl/model.hpp"

namespace patchrl::attack {

enum class Mode { kDodging, kImpersonation };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

/// Per-surrogate mixing weights: nonnegative, summing to one.
struct EnsembleWeights {
  Eigen::VectorXd values;

  static EnsembleWeights equal(int n);
  /// Clips negatives to zero and divides by the sum.
  static EnsembleWeights normalized(const Eigen::VectorXd& raw);
  bool on_simplex(double tol = 1e-6) const;
};

/// The surrogate ensemble: each entry is a differentiable recognizer
/// (extractor + its own gallery).
using Surrogates = std::vector<models::Recognizer>;

/// The 20-value attack step grid {0.01, 0.02, ..., 0.20}.
std::vector<double> step_grid();

struct MifgsmConfig {
  double step_size = 0.1;       // grid value
  double momentum_decay = 1.0;  // standard MI-FGSM decay
  int iterations = 20;
  Mode mode = Mode::kDodging;
  std::string label;            // ground-truth y (dodging) or target (impersonation)
  bool smooth = false;          // physical smoothing pass per iteration
  double zo_reg_beta = 0.0;     // gradient-regularizer scale; 0 disables
};

/// Weighted ensemble loss: dodging sums rho_i * (1 - f_i(xt, y)),
/// impersonation sums rho_i * f_i(xt, target).
double ensemble_loss(const img::Image& xt, const std::string& label,
                     const Surrogates& surrogates, const EnsembleWeights& rho, Mode mode);

/// Ensemble loss plus the tanh-space gradient regularizer averaged over the
/// patch entries, scaled by beta. With beta = 0 this equals ensemble_loss.
double ensemble_loss_zo_reg(const img::Image& xt, const std::string& label,
                            const Surrogates& surrogates, const EnsembleWeights& rho,
                            Mode mode, const img::PatchMask& mask, double beta);

/// Loss and its gradient with respect to every pixel of xt (the image
/// gradient is taken over the full frame; callers mask it before stepping).
/// When beta > 0 the regularizer of ensemble_loss_zo_reg is included.
double ensemble_loss_grad(const img::Image& xt, const std::string& label,
                          const Surrogates& surrogates, const EnsembleWeights& rho,
                          Mode mode, const img::PatchMask* mask, double beta,
                          img::Image* grad_out);

/// Momentum iterative sign ascent on the ensemble loss, applied inside the
/// mask rectangle only. Returns the composed adversarial image; pixels
/// outside the mask are bit-identical to x.
img::Image mifgsm_patch(const img::Image& x, const img::PatchMask& mask,
                        const EnsembleWeights& rho, const MifgsmConfig& cfg,
                        const Surrogates& surrogates);

}  // namespace patchrl::attack

#endif  // PATCHRL_ATTACK_HPP
