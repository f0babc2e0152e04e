#include "patchrl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "patchrl/params_io.hpp"
#include "patchrl/rng.hpp"

namespace patchrl::models {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

nn::Arr to_chw(const img::Image& im) {
  nn::Arr out(im.size());
  const int hw = im.height * im.width;
  for (int ch = 0; ch < im.channels; ++ch)
    for (int r = 0; r < im.height; ++r)
      for (int c = 0; c < im.width; ++c)
        out[ch * hw + r * im.width + c] = im.at(r, c, ch);
  return out;
}

img::Image from_chw(const nn::Arr& data, int height, int width, int channels) {
  img::Image im(height, width, channels);
  const int hw = height * width;
  for (int ch = 0; ch < channels; ++ch)
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        im.at(r, c, ch) = data[ch * hw + r * width + c];
  return im;
}

Architecture architecture_by_id(const std::string& id, nn::Shape input) {
  using K = LayerSpec::Kind;
  Architecture a;
  a.id = id;
  a.input = input;
  if (id == "mlp_small") {
    a.layers = {{K::Flatten}, {K::Dense, 32}, {K::ReLU}, {K::Dense, 16}};
    a.embed_dim = 16;
  } else if (id == "mlp_medium") {
    a.layers = {{K::Flatten}, {K::Dense, 48}, {K::ReLU}, {K::Dense, 24}};
    a.embed_dim = 24;
  } else if (id == "mlp_deep") {
    a.layers = {{K::Flatten}, {K::Dense, 40}, {K::ReLU}, {K::Dense, 24},
                {K::ReLU},   {K::Dense, 16}};
    a.embed_dim = 16;
  } else if (id == "mlp_tanh") {
    a.layers = {{K::Flatten}, {K::Dense, 48}, {K::Tanh}, {K::Dense, 16}};
    a.embed_dim = 16;
  } else if (id == "mlp_wide") {
    a.layers = {{K::Flatten}, {K::Dense, 64}, {K::ReLU}, {K::Dense, 24}};
    a.embed_dim = 24;
  } else if (id == "conv_small") {
    a.layers = {{K::Conv3x3, 8}, {K::ReLU},     {K::AvgPool2}, {K::AvgPool2},
                {K::Flatten},    {K::Dense, 16}};
    a.embed_dim = 16;
  } else {
    throw std::invalid_argument("unknown architecture id: " + id);
  }
  return a;
}

std::vector<std::string> known_architectures() {
  return {"mlp_small", "mlp_medium", "mlp_deep", "mlp_tanh", "mlp_wide", "conv_small"};
}

namespace {

// Walks the layer list tracking the running activation shape, calling back
// for each parameterized layer with (weight_shape, bias_shape, fan_in).
template <typename Fn>
void for_each_param_layer(const Architecture& arch, Fn&& fn) {
  nn::Shape s = arch.input;
  for (const LayerSpec& l : arch.layers) {
    switch (l.kind) {
      case LayerSpec::Kind::Dense: {
        const int in = s.size();
        fn(nn::Shape{l.out_channels, in, 1}, nn::Shape{l.out_channels, 1, 1}, in);
        s = {l.out_channels, 1, 1};
        break;
      }
      case LayerSpec::Kind::Conv3x3: {
        fn(nn::Shape{l.out_channels, s.c, 9}, nn::Shape{l.out_channels, 1, 1}, s.c * 9);
        s = {l.out_channels, s.h, s.w};
        break;
      }
      case LayerSpec::Kind::AvgPool2:
        s = {s.c, std::max(1, s.h / 2), std::max(1, s.w / 2)};
        break;
      case LayerSpec::Kind::Flatten:
        s = {s.size(), 1, 1};
        break;
      default:
        break;
    }
  }
}

}  // namespace

FeatureExtractor init_extractor(const std::string& architecture_id, nn::Shape input,
                                std::uint64_t seed) {
  FeatureExtractor m;
  m.arch = architecture_by_id(architecture_id, input);
  m.seed = seed;
  rng::Stream rs(rng::mix(seed, 0x5eedf00dULL));
  for_each_param_layer(m.arch, [&](nn::Shape w, nn::Shape b, int fan_in) {
    nn::Arr weight(w.size());
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (int i = 0; i < weight.size(); ++i) weight[i] = rs.normal(0.0, std_dev);
    m.params.push_back(std::move(weight));
    m.params.push_back(nn::Arr::Zero(b.size()));
  });
  return m;
}

std::vector<int> FeatureExtractor::bind(nn::Tape& tape, bool with_grad) const {
  std::vector<int> ids;
  std::size_t p = 0;
  for_each_param_layer(arch, [&](nn::Shape w, nn::Shape b, int) {
    ids.push_back(tape.input(params[p++], w, with_grad));
    ids.push_back(tape.input(params[p++], b, with_grad));
  });
  return ids;
}

int FeatureExtractor::forward(nn::Tape& tape, int x_node,
                              const std::vector<int>& param_nodes) const {
  int cur = x_node;
  std::size_t p = 0;
  for (const LayerSpec& l : arch.layers) {
    switch (l.kind) {
      case LayerSpec::Kind::Dense: {
        const int w = param_nodes[p], b = param_nodes[p + 1];
        p += 2;
        cur = tape.dense(cur, w, b);
        break;
      }
      case LayerSpec::Kind::Conv3x3: {
        const int w = param_nodes[p], b = param_nodes[p + 1];
        p += 2;
        cur = tape.conv3x3(cur, w, b);
        break;
      }
      case LayerSpec::Kind::ReLU:
        cur = tape.relu(cur);
        break;
      case LayerSpec::Kind::Tanh:
        cur = tape.tanh_act(cur);
        break;
      case LayerSpec::Kind::AvgPool2:
        cur = tape.avgpool2(cur);
        break;
      case LayerSpec::Kind::Flatten:
        cur = tape.reshape(cur, {tape.shape(cur).size(), 1, 1});
        break;
    }
  }
  return cur;
}

Eigen::VectorXd extract(const FeatureExtractor& m, const img::Image& x) {
  if (x.height != m.arch.input.h || x.width != m.arch.input.w ||
      x.channels != m.arch.input.c)
    throw std::invalid_argument("extract: image dims do not match extractor input");
  nn::Tape tape;
  const int xn = tape.input(to_chw(x), m.arch.input, false);
  const int emb = m.forward(tape, xn, m.bind(tape, false));
  const nn::Arr& v = tape.value(emb);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

double score_from_embedding(const Gallery& g, const Eigen::VectorXd& embedding,
                            const std::string& y) {
  auto it = g.entries.find(y);
  if (it == g.entries.end())
    throw std::invalid_argument("score: unknown identity " + y);
  const double nx = std::max(embedding.norm(), 1e-30);
  const double cosv = embedding.dot(it->second) / nx;
  return (cosv + 1.0) / 2.0;
}

double score(const Recognizer& r, const img::Image& x, const std::string& y) {
  return score_from_embedding(r.gallery, extract(*r.extractor, x), y);
}

Verdict identify_from_embedding(const Gallery& g, const Eigen::VectorXd& embedding) {
  if (g.entries.empty()) throw std::invalid_argument("identify: empty gallery");
  const double nx = std::max(embedding.norm(), 1e-30);
  Verdict best;
  double best_cos = 0.0;
  bool first = true;
  // std::map iterates labels lexicographically; strict > keeps the first of
  // any tied pair, giving the documented tie-break.
  for (const auto& [label, emb] : g.entries) {
    const double cosv = embedding.dot(emb) / nx;
    if (first || cosv > best_cos) {
      best.identity = label;
      best_cos = cosv;
      best.confidence = (cosv + 1.0) / 2.0;
      first = false;
    }
  }
  return best;
}

Verdict identify(const Recognizer& r, const img::Image& x) {
  return identify_from_embedding(r.gallery, extract(*r.extractor, x));
}

Gallery build_gallery(const FeatureExtractor& m, const std::vector<LabeledImage>& images) {
  if (images.empty()) throw std::invalid_argument("build_gallery: empty dataset");
  std::map<std::string, std::pair<Eigen::VectorXd, int>> acc;
  for (const LabeledImage& li : images) {
    Eigen::VectorXd e = extract(m, li.image);
    auto it = acc.find(li.label);
    if (it == acc.end())
      acc.emplace(li.label, std::make_pair(e, 1));
    else {
      it->second.first += e;
      it->second.second += 1;
    }
  }
  Gallery g;
  for (auto& [label, pair] : acc) {
    Eigen::VectorXd mean = pair.first / pair.second;
    const double n = std::max(mean.norm(), 1e-30);
    g.entries.emplace(label, mean / n);
  }
  return g;
}

namespace {

struct Adam {
  std::vector<nn::Arr> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(std::vector<nn::Arr>& params, const std::vector<nn::Arr>& grads, double lr) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.push_back(nn::Arr::Zero(p.size()));
        v.push_back(nn::Arr::Zero(p.size()));
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i].square();
      params[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
    }
  }
};

double train_accuracy_via_gallery(const FeatureExtractor& m,
                                  const std::vector<LabeledImage>& images) {
  Recognizer r{std::make_shared<FeatureExtractor>(m), build_gallery(m, images)};
  long hits = 0;
  for (const LabeledImage& li : images)
    if (identify(r, li.image).identity == li.label) ++hits;
  return static_cast<double>(hits) / images.size();
}

}  // namespace

std::vector<FeatureExtractor> train_toy_models(const Dataset& dataset,
                                               const TrainConfig& config) {
  const auto& train = dataset.train;
  {
    std::map<std::string, int> ids;
    for (const auto& li : train) ids[li.label]++;
    if (ids.size() < 2)
      throw std::invalid_argument("train_toy_models: need >= 2 identities");
  }
  std::vector<std::string> labels;
  {
    std::map<std::string, int> seen;
    for (const auto& li : train)
      if (seen.emplace(li.label, 1).second) labels.push_back(li.label);
    std::sort(labels.begin(), labels.end());
  }
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < labels.size(); ++i) label_index[labels[i]] = static_cast<int>(i);

  const nn::Shape input{dataset.channels, dataset.height, dataset.width};
  const int n_classes = static_cast<int>(labels.size());

  std::vector<FeatureExtractor> out;
  for (std::size_t mi = 0; mi < config.architecture_ids.size(); ++mi) {
    const std::uint64_t mseed = rng::mix(config.seed, 0xa11ce, mi);
    FeatureExtractor model =
        init_extractor(config.architecture_ids[mi], input, mseed);

    // Class prototypes used only while training; the gallery replaces them
    // afterwards.
    rng::Stream ps(rng::mix(mseed, 0x9b070));
    nn::Arr protos(n_classes * model.embed_dim());
    for (int i = 0; i < protos.size(); ++i) protos[i] = ps.normal(0.0, 1.0);

    std::vector<nn::Arr> chw;
    chw.reserve(train.size());
    for (const auto& li : train) chw.push_back(to_chw(li.image));

    Adam opt_model, opt_proto;
    rng::Stream shuffle_rs(rng::mix(mseed, 0x5affe));
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rs.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t stop =
            std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        std::vector<nn::Arr> grads(model.params.size());
        for (std::size_t g = 0; g < grads.size(); ++g)
          grads[g] = nn::Arr::Zero(model.params[g].size());
        nn::Arr proto_grad = nn::Arr::Zero(protos.size());

        for (std::size_t bi = start; bi < stop; ++bi) {
          const int idx = order[bi];
          nn::Tape tape;
          const int xn = tape.input(chw[idx], input, false);
          const auto bound = model.bind(tape, true);
          const int emb = model.forward(tape, xn, bound);
          const int proto_node =
              tape.input(protos, {n_classes, model.embed_dim(), 1}, true);
          const int cosines = tape.cosine_rows(emb, proto_node);
          const int logits = tape.scale(cosines, config.logit_scale);
          const int loss = tape.cross_entropy_logits(logits, label_index[train[idx].label]);
          tape.backward(loss);
          for (std::size_t g = 0; g < grads.size(); ++g) grads[g] += tape.grad(bound[g]);
          proto_grad += tape.grad(proto_node);
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (auto& g : grads) g *= inv;
        proto_grad *= inv;
        opt_model.step(model.params, grads, config.learning_rate);
        std::vector<nn::Arr> pv{protos};
        std::vector<nn::Arr> pg{proto_grad};
        opt_proto.step(pv, pg, config.learning_rate);
        protos = pv[0];
      }
    }

    model.train_accuracy = train_accuracy_via_gallery(model, train);
    if (model.train_accuracy < config.min_accuracy) {
      std::ostringstream msg;
      msg << "train_toy_models: model " << model.arch.id << " reached "
          << model.train_accuracy * 100.0 << "% train accuracy after " << config.epochs
          << " epochs (required " << config.min_accuracy * 100.0 << "%)";
      throw TrainingError(msg.str());
    }
    out.push_back(std::move(model));
  }
  return out;
}

void save_models(const std::string& dir, const std::vector<FeatureExtractor>& models) {
  fs::create_directories(dir);
  ordered_json manifest;
  manifest["format"] = "patchrl-models-v1";
  manifest["models"] = ordered_json::array();
  for (const auto& m : models) {
    const std::string file = m.arch.id + ".bin";
    io::write_params_bin((fs::path(dir) / file).string(), m.params);
    ordered_json e;
    e["architecture"] = m.arch.id;
    e["seed"] = m.seed;
    e["embed_dim"] = m.embed_dim();
    e["train_accuracy"] = m.train_accuracy;
    e["input"] = {{"height", m.arch.input.h},
                  {"width", m.arch.input.w},
                  {"channels", m.arch.input.c}};
    e["file"] = file;
    manifest["models"].push_back(e);
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  f << manifest.dump(2) << "\n";
}

std::vector<FeatureExtractor> load_models(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("cannot read model manifest in " + dir);
  ordered_json manifest = ordered_json::parse(f);
  std::vector<FeatureExtractor> out;
  for (const auto& e : manifest.at("models")) {
    FeatureExtractor m;
    const nn::Shape input{e.at("input").at("channels").get<int>(),
                          e.at("input").at("height").get<int>(),
                          e.at("input").at("width").get<int>()};
    m.arch = architecture_by_id(e.at("architecture").get<std::string>(), input);
    m.seed = e.at("seed").get<std::uint64_t>();
    m.train_accuracy = e.at("train_accuracy").get<double>();
    m.params = io::read_params_bin((fs::path(dir) / e.at("file").get<std::string>()).string());
    out.push_back(std::move(m));
  }
  return out;
}

void save_gallery(const std::string& path, const Gallery& g) {
  ordered_json j;
  for (const auto& [label, emb] : g.entries) {
    std::vector<double> v(emb.data(), emb.data() + emb.size());
    j[label] = v;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

Gallery load_gallery(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  ordered_json j = ordered_json::parse(f);
  Gallery g;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto v = it.value().get<std::vector<double>>();
    g.entries.emplace(it.key(),
                      Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
  }
  return g;
}

}  // namespace patchrl::models
