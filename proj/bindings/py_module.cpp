#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <patchrl/harness.hpp>
#include <patchrl/png_io.hpp>

namespace py = pybind11;
using namespace patchrl;

namespace {

img::Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3) throw std::invalid_argument("expected an (H, W, C) array");
  img::Image im(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
                static_cast<int>(arr.shape(2)));
  std::copy(arr.data(), arr.data() + im.size(), im.data.data());
  return im;
}

py::array_t<double> image_to_array(const img::Image& im) {
  py::array_t<double> arr({im.height, im.width, im.channels});
  std::copy(im.data.data(), im.data.data() + im.size(), arr.mutable_data());
  return arr;
}

std::vector<img::Rect> rects_from_list(const std::vector<std::tuple<int, int, int, int>>& v) {
  std::vector<img::Rect> rects;
  for (const auto& [row, col, h, w] : v) rects.push_back({row, col, h, w});
  return rects;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Black-box adversarial patch toolkit (C++ core)";

  m.def(
      "make_mask",
      [](int origin_col, int origin_row, int patch_h, int patch_w, int image_h,
         int image_w) {
        const auto mask =
            img::make_mask(origin_col, origin_row, {patch_h, patch_w}, image_h, image_w);
        py::array_t<std::uint8_t> a({image_h, image_w});
        std::copy(mask.a.begin(), mask.a.end(), a.mutable_data());
        return a;
      },
      py::arg("origin_col"), py::arg("origin_row"), py::arg("patch_h"),
      py::arg("patch_w"), py::arg("image_h"), py::arg("image_w"),
      "Binary pasting mask with ones on the patch rectangle.");

  m.def(
      "paste",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& xt,
         int origin_col, int origin_row, int patch_h, int patch_w) {
        const img::Image xi = image_from_array(x);
        const img::Image xti = image_from_array(xt);
        const auto mask =
            img::make_mask(origin_col, origin_row, {patch_h, patch_w}, xi.height, xi.width);
        return image_to_array(img::paste(xi, xti, mask));
      },
      py::arg("x"), py::arg("xt"), py::arg("origin_col"), py::arg("origin_row"),
      py::arg("patch_h"), py::arg("patch_w"),
      "Compose (1-A)*x + A*xt, clipped to [0,1].");

  m.def(
      "compute_valid_region",
      [](int image_h, int image_w,
         const std::vector<std::tuple<int, int, int, int>>& exclusions, int patch_h,
         int patch_w) {
        const auto region = img::compute_valid_region(image_h, image_w,
                                                      rects_from_list(exclusions),
                                                      {patch_h, patch_w});
        py::array_t<bool> a({image_h, image_w});
        for (int i = 0; i < image_h * image_w; ++i)
          a.mutable_data()[i] = region.allowed[static_cast<std::size_t>(i)] != 0;
        return a;
      },
      py::arg("image_h"), py::arg("image_w"), py::arg("exclusions"), py::arg("patch_h"),
      py::arg("patch_w"),
      "Boolean grid of allowed patch origins; exclusions are (row, col, h, w).");

  m.def(
      "smooth_patch",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& patch) {
        return image_to_array(img::smooth_patch(image_from_array(patch)));
      },
      py::arg("patch"),
      "Average-pool the patch by 2 and bilinearly upscale back to its size.");

  m.def("step_grid", &attack::step_grid, "The 20-value attack step grid.");

  m.def(
      "default_config_json",
      []() { return harness::run_config_to_json(harness::default_run_config()).dump(); },
      "Default run configuration as a JSON string.");

  m.def(
      "validate_config_json",
      [](const std::string& config_json) {
        const auto cfg =
            harness::run_config_from_json(nlohmann::ordered_json::parse(config_json));
        return harness::validate_run_config(cfg);
      },
      py::arg("config_json"), "Validation errors for a config (empty when valid).");

  m.def(
      "run_experiment_json",
      [](const std::string& config_json) {
        const auto cfg =
            harness::run_config_from_json(nlohmann::ordered_json::parse(config_json));
        const auto summary = harness::run_experiment(cfg);
        nlohmann::ordered_json out;
        out["clean_filtered"] = summary.clean_filtered;
        out["methods"] = nlohmann::ordered_json::array();
        for (const auto& ms : summary.methods) {
          nlohmann::ordered_json e;
          e["method"] = ms.method;
          e["attempted"] = ms.attempted;
          e["successes"] = ms.successes;
          e["asr"] = ms.asr;
          e["mean_nq"] = ms.mean_nq;
          e["seed_averaged_asr"] = ms.seed_averaged_asr;
          out["methods"].push_back(e);
        }
        out["records"] = nlohmann::ordered_json::array();
        for (const auto& r : summary.records)
          out["records"].push_back(harness::record_to_json(r));
        return out.dump();
      },
      py::arg("config_json"),
      "Run the configured benchmark; returns the summary (with records) as JSON.",
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "generate_dataset",
      [](const std::string& out_dir, int n_identities, int per_identity,
         int test_per_identity, int height, int width, int channels, double noise,
         std::uint64_t seed,
         const std::vector<std::tuple<int, int, int, int>>& exclusions) {
        harness::DatasetConfig dc;
        dc.n_identities = n_identities;
        dc.per_identity = per_identity;
        dc.test_per_identity = test_per_identity;
        dc.height = height;
        dc.width = width;
        dc.channels = channels;
        dc.noise = noise;
        dc.seed = seed;
        const auto ds =
            harness::generate_synthetic_dataset(dc, rects_from_list(exclusions));
        harness::save_dataset(out_dir, ds);
        return py::make_tuple(ds.train.size(), ds.test.size());
      },
      py::arg("out_dir"), py::arg("n_identities") = 10, py::arg("per_identity") = 20,
      py::arg("test_per_identity") = 5, py::arg("height") = 32, py::arg("width") = 32,
      py::arg("channels") = 3, py::arg("noise") = 0.08, py::arg("seed") = 1234,
      py::arg("exclusions") = std::vector<std::tuple<int, int, int, int>>{},
      "Generate and save the synthetic identity dataset; returns (n_train, n_test).");

  m.def(
      "load_png", [](const std::string& path) { return image_to_array(io::load_png(path)); },
      py::arg("path"));
  m.def(
      "save_png",
      [](const std::string& path,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
        io::save_png(path, image_from_array(image));
      },
      py::arg("path"), py::arg("image"));
}
