#ifndef PATCHRL_MODEL_HPP
#define PATCHRL_MODEL_HPP

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "patchrl/image.hpp"
#include "patchrl/nn.hpp"

namespace patchrl::models {

/// Converts an H x W x C image to the CHW flat layout used by the nets.
nn::Arr to_chw(const img::Image& im);
/// Inverse of to_chw (e.g. for mapping input gradients back to image space).
img::Image from_chw(const nn::Arr& data, int height, int width, int channels);

struct LayerSpec {
  enum class Kind { Dense, Conv3x3, ReLU, Tanh, AvgPool2, Flatten };
  Kind kind;
  int out_channels = 0;  // Dense/Conv3x3 only
};

struct Architecture {
  std::string id;
  nn::Shape input;
  std::vector<LayerSpec> layers;
  int embed_dim = 0;
};

/// Known toy architectures: "mlp_small", "mlp_medium", "mlp_deep",
/// "mlp_tanh", "mlp_wide", "conv_small". Throws on unknown ids.
Architecture architecture_by_id(const std::string& id, nn::Shape input);
std::vector<std::string> known_architectures();

/// A small differentiable network mapping Image -> d-dim embedding.
/// Parameters are immutable after training; inference is const and safe to
/// share across threads.
struct FeatureExtractor {
  Architecture arch;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  std::vector<nn::Arr> params;  // weight/bias pairs in layer order

  const std::string& name() const { return arch.id; }
  int embed_dim() const { return arch.embed_dim; }

  /// Registers the parameters on a tape; `with_grad` controls whether
  /// parameter gradients are accumulated during backward.
  std::vector<int> bind(nn::Tape& tape, bool with_grad) const;
  /// Builds the forward graph from an already-registered input node.
  int forward(nn::Tape& tape, int x_node, const std::vector<int>& param_nodes) const;
};

/// Fresh randomly-initialized extractor (He/Xavier-style scaled normals).
FeatureExtractor init_extractor(const std::string& architecture_id, nn::Shape input,
                                std::uint64_t seed);

/// Embedding for one image. Deterministic given parameters and input.
Eigen::VectorXd extract(const FeatureExtractor& m, const img::Image& x);

/// Identity label -> unit-norm embedding. std::map keeps labels in
/// lexicographic order, which doubles as the identify() tie-break order.
struct Gallery {
  std::map<std::string, Eigen::VectorXd> entries;
};

struct Recognizer {
  std::shared_ptr<const FeatureExtractor> extractor;
  Gallery gallery;
};

struct Verdict {
  std::string identity;
  double confidence = 0.0;
};

/// Confidence that `r` predicts image `x` as identity `y`:
/// (cosine(extract(x), gallery[y]) + 1) / 2, in [0,1].
double score(const Recognizer& r, const img::Image& x, const std::string& y);
double score_from_embedding(const Gallery& g, const Eigen::VectorXd& embedding,
                            const std::string& y);

/// 1-to-N identification: the gallery identity with the highest cosine
/// similarity (ties broken lexicographically by label).
Verdict identify(const Recognizer& r, const img::Image& x);
Verdict identify_from_embedding(const Gallery& g, const Eigen::VectorXd& embedding);

struct QueryResult {
  Verdict verdict;
  double label_score = 0.0;  // score of the requested identity
};

/// The black-box target. Every query increments the counter by exactly one;
/// attack code must never touch the underlying extractor's gradients.
/// Queries mutate the counter and must be serialized per oracle instance.
class TargetOracle {
 public:
  explicit TargetOracle(Recognizer r) : recognizer_(std::move(r)) {}

  long query_count() const { return query_count_; }

  Verdict query(const img::Image& x) {
    ++query_count_;
    return identify(recognizer_, x);
  }

  /// One counted query returning both the top-1 verdict and the confidence
  /// for a caller-chosen identity (the shape of a commercial FR response).
  QueryResult query_scored(const img::Image& x, const std::string& label) {
    ++query_count_;
    const Eigen::VectorXd e = extract(*recognizer_.extractor, x);
    return {identify_from_embedding(recognizer_.gallery, e),
            score_from_embedding(recognizer_.gallery, e, label)};
  }

  /// Uncounted read-only access, reserved for experiment bookkeeping such
  /// as the clean-identification filter. Not part of the attack surface.
  const Recognizer& recognizer() const { return recognizer_; }

 private:
  Recognizer recognizer_;
  long query_count_ = 0;
};

struct LabeledImage {
  std::string label;
  img::Image image;
};

struct Dataset {
  int height = 0, width = 0, channels = 0;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  std::vector<img::Rect> exclusions;  // shared pasting exclusions
};

/// Per-identity gallery entry: L2-normalized mean of the identity's
/// training-image embeddings.
Gallery build_gallery(const FeatureExtractor& m, const std::vector<LabeledImage>& images);

struct TrainConfig {
  std::vector<std::string> architecture_ids;
  std::uint64_t seed = 0;
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 0.001;
  double min_accuracy = 0.95;
  double logit_scale = 10.0;  // cosine-logit temperature for cross-entropy
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Trains one toy extractor per architecture id, each on cosine-logit
/// cross-entropy, and verifies >= min_accuracy top-1 on the training set
/// through its own gallery. Throws TrainingError with diagnostics if a
/// model fails to converge within the configured epochs.
std::vector<FeatureExtractor> train_toy_models(const Dataset& dataset,
                                               const TrainConfig& config);

/// Checkpoint container: directory with manifest.json plus one raw binary
/// blob of little-endian float64 parameters per model.
void save_models(const std::string& dir, const std::vector<FeatureExtractor>& models);
std::vector<FeatureExtractor> load_models(const std::string& dir);

void save_gallery(const std::string& path, const Gallery& g);
Gallery load_gallery(const std::string& path);

}  // namespace patchrl::models

#endif  // PATCHRL_MODEL_HPP
