#include <sstream>

#include <nlohmann/json.hpp>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vocalbp/audio_io.hpp"
#include "vocalbp/dataset.hpp"
#include "vocalbp/error.hpp"
#include "vocalbp/features.hpp"
#include "vocalbp/pipeline.hpp"
#include "vocalbp/relieff.hpp"
#include "vocalbp/textcodec.hpp"
#include "vocalbp/training.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

PyObject* g_error_type = nullptr;

vbp::FeatureSchema schema_from(const std::string& s) {
  if (s == "base") return vbp::FeatureSchema::Base;
  if (s == "extended") return vbp::FeatureSchema::Extended;
  throw vbp::Error(vbp::ErrorCode::InvalidConfig, "schema must be \"base\" or \"extended\"");
}

vbp::PipelineConfig make_config(const std::string& config_json, const std::optional<fs::path>& workdir,
                                std::optional<std::uint64_t> seed) {
  auto c = vbp::config_from_json(nlohmann::json::parse(config_json.empty() ? "{}" : config_json));
  if (workdir) c.workdir = *workdir;
  if (seed) c.seed = *seed;
  return c;
}

py::dict feature_dict(const vbp::FeatureVector& fv) {
  py::dict values;
  for (std::size_t i = 0; i < fv.names.size(); ++i) values[py::str(fv.names[i])] = fv.values[i];
  py::dict out;
  out["schema_id"] = fv.schema_id;
  out["n_segments"] = fv.n_segments;
  out["values"] = values;
  return out;
}

}  // namespace

PYBIND11_MODULE(_vocalbp, m) {
  m.doc() = "Vocal blood-pressure pipeline: audio features, ReliefF selection, text encoder regression";

  g_error_type = PyErr_NewException("vocalbp.VbpError", PyExc_RuntimeError, nullptr);
  m.attr("VbpError") = py::handle(g_error_type);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const vbp::Error& e) {
      py::object inst = py::reinterpret_steal<py::object>(PyObject_CallFunction(g_error_type, "s", e.what()));
      inst.attr("code") = std::string(vbp::to_string(e.code()));
      PyErr_SetObject(g_error_type, inst.ptr());
    }
  });

  m.def(
      "load_wav",
      [](const fs::path& path) {
        const auto clip = vbp::load_wav(path);
        return py::make_tuple(clip.sample_rate, clip.samples, clip.source_channels);
      },
      py::arg("path"), "Returns (sample_rate, mono samples, source channel count).");

  m.def(
      "write_wav",
      [](const fs::path& path, const std::vector<double>& samples, int sample_rate) {
        vbp::write_wav(path, {samples}, sample_rate);
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate"));

  m.def(
      "extract_features",
      [](const std::vector<fs::path>& paths, const std::string& schema, std::size_t max_segments) {
        std::vector<vbp::AudioClip> clips;
        for (const auto& p : paths) clips.push_back(vbp::load_wav(p));
        vbp::ExtractionParams params;
        params.schema = schema_from(schema);
        params.max_segments = max_segments;
        return feature_dict(vbp::extract_features(clips, params));
      },
      py::arg("paths"), py::arg("schema") = "base", py::arg("max_segments") = vbp::kDefaultMaxSegments);

  m.def(
      "mfcc_12",
      [](const std::vector<double>& samples, int sample_rate) {
        const auto c = vbp::mfcc_12(vbp::Segment{samples, 0.0, 0, sample_rate});
        return std::vector<double>(c.begin(), c.end());
      },
      py::arg("samples"), py::arg("sample_rate") = 48000);

  m.def("schema_names", [](const std::string& schema, bool with_pitch) { return vbp::schema_names(schema_from(schema), with_pitch); },
        py::arg("schema") = "base", py::arg("with_pitch") = false);

  m.def(
      "relieff_weights",
      [](const vbp::Matrix& x, const std::vector<bool>& y, std::size_t k) { return vbp::relieff_weights(x, y, k).weights; },
      py::arg("x"), py::arg("y"), py::arg("k"));

  m.def("label_hypertension", &vbp::label_hypertension, py::arg("sbp"), py::arg("dbp"));

  m.def(
      "serialize_features",
      [](const std::vector<std::string>& names, const std::vector<double>& values, int decimals) {
        return vbp::serialize_features(names, values, decimals);
      },
      py::arg("names"), py::arg("values"), py::arg("decimals") = 2);

  m.def(
      "tokenize",
      [](const std::string& text, const std::vector<std::string>& feature_names, std::size_t max_len) {
        const vbp::Vocabulary vocab(feature_names);
        const auto s = vbp::tokenize(text, vocab, max_len);
        return py::make_tuple(s.input_ids, s.attention_mask, s.true_length);
      },
      py::arg("text"), py::arg("feature_names"), py::arg("max_len") = vbp::kMaxSequenceLength,
      "Returns (input_ids, attention_mask, true_length).");

  m.def(
      "mse", [](const std::vector<double>& y, const std::vector<double>& p) { return vbp::mse(y, p); }, py::arg("y"),
      py::arg("yhat"));
  m.def(
      "mae", [](const std::vector<double>& y, const std::vector<double>& p) { return vbp::mae(y, p); }, py::arg("y"),
      py::arg("yhat"));
  m.def(
      "r2", [](const std::vector<double>& y, const std::vector<double>& p) { return vbp::r2(y, p); }, py::arg("y"),
      py::arg("yhat"));

  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& config_json, const std::optional<fs::path>& workdir,
         std::optional<std::uint64_t> seed) {
        const auto c = make_config(config_json, workdir, seed);
        std::ostringstream log;
        int code = vbp::kExitConfig;
        {
          py::gil_scoped_release release;
          if (stage == "synth") code = vbp::cmd_synth(c, log);
          else if (stage == "extract") code = vbp::cmd_extract(c, log);
          else if (stage == "select") code = vbp::cmd_select(c, log);
          else if (stage == "train") code = vbp::cmd_train(c, log);
          else if (stage == "eval") code = vbp::cmd_eval(c, log);
          else if (stage == "report") code = vbp::cmd_report(c, log);
          else log << "unknown stage " << stage << "\n";
        }
        return py::make_tuple(code, log.str());
      },
      py::arg("stage"), py::arg("config_json") = "", py::arg("workdir") = py::none(), py::arg("seed") = py::none(),
      "Runs one pipeline stage; returns (exit code, log text).");

  m.def(
      "predict",
      [](const std::string& config_json, const fs::path& workdir, const std::optional<fs::path>& wav,
         const std::optional<fs::path>& features) {
        const auto c = make_config(config_json, workdir, std::nullopt);
        vbp::PredictInput in{wav, features};
        std::ostringstream out, log;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = vbp::cmd_predict(c, in, out, log);
        }
        return py::make_tuple(code, out.str(), log.str());
      },
      py::arg("config_json"), py::arg("workdir"), py::arg("wav") = py::none(), py::arg("features") = py::none(),
      "Returns (exit code, JSON text, log text).");
}
