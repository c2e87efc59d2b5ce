#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "jafar/cli.hpp"
#include "jafar/io.hpp"
#include "jafar/metrics.hpp"
#include "jafar/training.hpp"

namespace py = pybind11;
using namespace jafar;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FeatureMap to_feature_map(const FloatArray& a) {
  if (a.ndim() != 3) throw py::value_error("expected a C x H x W array");
  FeatureMap f(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), f.data.begin());
  return f;
}

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(0) != 3) throw py::value_error("expected a 3 x H x W image");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

SaliencyMap to_saliency(const FloatArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected an H x W map");
  SaliencyMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

FloatArray from_planes(const std::vector<float>& data, int c, int h, int w) {
  FloatArray out({c, h, w});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

FloatArray from_feature_map(const FeatureMap& f) { return from_planes(f.data, f.channels, f.height, f.width); }

std::vector<ScorePair> to_pairs(const std::vector<std::pair<double, double>>& v) {
  std::vector<ScorePair> out;
  for (const auto& [y, o] : v) out.push_back({y, o});
  return out;
}

UpsampleRequest make_request(const FloatArray& guidance, const FloatArray& features, int out_h, int out_w) {
  return {to_image(guidance), to_feature_map(features), out_h, out_w};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Attention-based feature upsampler";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def(
      "synth_image", [](uint64_t seed, int size) {
        Rng rng(seed);
        const Image img = synth_image(rng, size);
        return from_planes(img.data, 3, img.height, img.width);
      },
      py::arg("seed"), py::arg("size"));

  m.def(
      "encode", [](const FloatArray& image, int patch, int c_out, uint64_t seed) {
        return from_feature_map(StubEncoder(EncoderConfig{patch, c_out, seed}).encode(to_image(image)));
      },
      py::arg("image"), py::arg("patch") = 4, py::arg("c_out") = 32, py::arg("seed") = 0);

  m.def(
      "feature_resize", [](const FloatArray& f, int out_h, int out_w, const std::string& mode) {
        if (mode != "bilinear" && mode != "nearest") throw py::value_error("mode must be bilinear or nearest");
        return from_feature_map(feature_resize(to_feature_map(f), out_h, out_w,
                                               mode == "bilinear" ? ResizeMode::Bilinear : ResizeMode::Nearest));
      },
      py::arg("features"), py::arg("out_h"), py::arg("out_w"), py::arg("mode") = "bilinear");

  m.def(
      "recon_score", [](const FloatArray& pred, const FloatArray& target) {
        const ReconScore s = recon_score(to_feature_map(pred), to_feature_map(target));
        return py::make_tuple(s.mean_cos, s.mean_l2);
      },
      py::arg("pred"), py::arg("target"));

  m.def("read_features", [](const std::string& path) { return from_feature_map(read_feature_file(path)); });
  m.def("write_features", [](const std::string& path, const FloatArray& f) { write_feature_file(path, to_feature_map(f)); });

  m.def("avg_drop", [](const std::vector<std::pair<double, double>>& p) { return avg_drop(to_pairs(p)); });
  m.def("avg_increase", [](const std::vector<std::pair<double, double>>& p) { return avg_increase(to_pairs(p)); });
  m.def("avg_gain", [](const std::vector<std::pair<double, double>>& p) {
    const GainResult g = avg_gain(to_pairs(p));
    return py::make_tuple(g.percent, g.skipped);
  });
  m.def("coherency", [](const FloatArray& a, const FloatArray& b) { return coherency(to_saliency(a), to_saliency(b)); });
  m.def("complexity", [](const FloatArray& a) { return complexity(to_saliency(a)); });
  m.def("adcc", &adcc, py::arg("coh"), py::arg("cplx"), py::arg("ad"));

  m.def(
      "run_cli", [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"jafar"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));

  py::class_<JafarParams>(m, "Model")
      .def_static(
          "init", [](uint64_t seed, int feature_channels, int d, int n_heads, const std::string& key_strategy) {
            Rng rng(seed);
            return init_params(rng, feature_channels, d, n_heads, parse_key_strategy(key_strategy));
          },
          py::arg("seed") = 0, py::arg("feature_channels") = 32, py::arg("d") = 64, py::arg("n_heads") = 4,
          py::arg("key_strategy") = "sft")
      .def_static("load", [](const std::string& path) { return read_checkpoint(path).params; })
      .def(
          "save", [](const JafarParams& p, const std::string& path) { write_checkpoint(path, p, RunConfig{}); },
          py::arg("path"))
      .def_property_readonly("parameter_count", &JafarParams::parameter_count)
      .def_property_readonly("key_strategy", [](const JafarParams& p) { return std::string(to_string(p.config.key_strategy)); })
      .def_property_readonly("feature_channels", [](const JafarParams& p) { return p.config.feature_channels; })
      .def(
          "upsample", [](const JafarParams& p, const FloatArray& guidance, const FloatArray& features, int out_h, int out_w,
                         int tile_rows) {
            const UpsampleRequest req = make_request(guidance, features, out_h, out_w);
            return from_feature_map(tile_rows > 0 ? upsample_tiled(p, req, tile_rows) : forward(p, req));
          },
          py::arg("guidance"), py::arg("features"), py::arg("out_h"), py::arg("out_w"), py::arg("tile_rows") = 0)
      .def(
          "attention_row", [](const JafarParams& p, const FloatArray& guidance, const FloatArray& features, int out_h,
                              int out_w, int i, int j) {
            const FeatureMap row = export_attention_row(p, make_request(guidance, features, out_h, out_w), i, j);
            FloatArray out({row.height, row.width});
            std::copy(row.data.begin(), row.data.end(), out.mutable_data());
            return out;
          },
          py::arg("guidance"), py::arg("features"), py::arg("out_h"), py::arg("out_w"), py::arg("i"), py::arg("j"));
}
