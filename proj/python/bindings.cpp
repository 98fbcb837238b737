#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dsu/aggregator.hpp"
#include "dsu/ctc.hpp"
#include "dsu/discrete_probe.hpp"
#include "dsu/feature_store.hpp"
#include "dsu/metrics.hpp"
#include "dsu/pipeline.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/tokenproc.hpp"

namespace py = pybind11;
using namespace dsu;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const F64& a) {
  if (a.ndim() != 2) throw ArgumentError("expected a 2-D array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.values().begin());
  return m;
}

py::array_t<double> from_matrix(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

std::span<const float> frames_of(const F32& a, std::size_t& dim) {
  if (a.ndim() != 2) throw ArgumentError("frames must be an N x D array");
  dim = a.shape(1);
  return {a.data(), static_cast<std::size_t>(a.size())};
}

py::dict archive_to_py(const FeatureArchive& archive) {
  py::dict utts;
  for (const auto& u : archive.utterances) {
    py::array_t<float> a({static_cast<std::size_t>(archive.num_layers), static_cast<std::size_t>(u.num_frames),
                          static_cast<std::size_t>(archive.feature_dim)});
    std::copy(u.frames.begin(), u.frames.end(), a.mutable_data());
    utts[py::str(u.id)] = a;
  }
  return utts;
}

// {utt_id: L x T x D float32 array}, insertion order kept.
FeatureArchive archive_from_py(const py::dict& utts) {
  FeatureArchive archive;
  bool first = true;
  for (const auto& [key, value] : utts) {
    const auto a = py::cast<F32>(value);
    if (a.ndim() != 3) throw ArgumentError("each utterance must be an L x T x D array");
    if (first) {
      archive.num_layers = static_cast<std::uint32_t>(a.shape(0));
      archive.feature_dim = static_cast<std::uint32_t>(a.shape(2));
      first = false;
    }
    Utterance u;
    u.id = py::cast<std::string>(key);
    u.num_frames = static_cast<std::uint32_t>(a.shape(1));
    u.frames.assign(a.data(), a.data() + a.size());
    archive.utterances.push_back(std::move(u));
  }
  return archive;
}

}  // namespace

PYBIND11_MODULE(_dsu, m) {
  m.doc() = "Discrete speech unit pipeline";

  static py::exception<Error> base(m, "DsuError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<InfeasibleError>(m, "InfeasibleError", base.ptr());

  m.def("softmax_weights", [](const std::vector<double>& l) { return softmax_weights(l); }, py::arg("lambdas"));
  m.def(
      "layer_norm",
      [](const std::vector<double>& h, double eps) { return layer_norm(std::span<const double>(h), {}, {}, eps); },
      py::arg("h"), py::arg("eps") = kDefaultLayerNormEps);
  m.def(
      "weighted_sum",
      [](const F32& stack, const std::vector<double>& lambdas, const std::string& mode) {
        if (stack.ndim() != 3) throw ArgumentError("stack must be an L x T x D array");
        const LayerStack view{{stack.data(), static_cast<std::size_t>(stack.size())},
                              static_cast<std::size_t>(stack.shape(0)), static_cast<std::size_t>(stack.shape(1)),
                              static_cast<std::size_t>(stack.shape(2))};
        LayerWeights w;
        w.mode = parse_mode(mode);
        w.lambdas = lambdas;
        return from_matrix(weighted_sum(view, w));
      },
      py::arg("stack"), py::arg("lambdas"), py::arg("mode") = "finetuned");

  m.def(
      "ctc_loss", [](const F64& logits, const std::vector<Label>& target) { return ctc_loss(to_matrix(logits), target); },
      py::arg("logits"), py::arg("target"));
  m.def(
      "ctc_grad",
      [](const F64& logits, const std::vector<Label>& target) { return from_matrix(ctc_grad(to_matrix(logits), target)); },
      py::arg("logits"), py::arg("target"));
  m.def("greedy_decode", [](const F64& logits) { return greedy_decode(to_matrix(logits)); }, py::arg("logits"));

  m.def(
      "levenshtein",
      [](const std::string& a, const std::string& b) { return levenshtein(utf8_decode(a), utf8_decode(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "corpus_cer",
      [](const std::vector<std::pair<std::string, std::string>>& pairs) {
        std::vector<EvalPair> eval;
        for (const auto& [ref, hyp] : pairs) eval.push_back({std::to_string(eval.size()), ref, hyp});
        return corpus_cer(eval);
      },
      py::arg("pairs"), "Corpus CER in percent over (reference, hypothesis) pairs.");
  m.def("gap_report", &gap_report, py::arg("continuous_cer"), py::arg("discrete_cer"));

  py::class_<Codebook>(m, "Codebook")
      .def_readonly("k", &Codebook::k)
      .def_readonly("dim", &Codebook::dim)
      .def_property_readonly("centroids",
                             [](const Codebook& c) {
                               py::array_t<float> a({static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.dim)});
                               std::copy(c.centroids.begin(), c.centroids.end(), a.mutable_data());
                               return a;
                             })
      .def("save", [](const Codebook& c, const std::filesystem::path& p) { save_codebook(c, p); })
      .def_static("load", &load_codebook);

  m.def(
      "kmeans_train",
      [](const F32& frames, std::uint32_t k, std::uint64_t seed, std::uint32_t max_iters) {
        std::size_t dim = 0;
        const auto x = frames_of(frames, dim);
        KmeansConfig c;
        c.k = k;
        c.seed = seed;
        c.max_iters = max_iters;
        auto r = kmeans_train(x, dim, c);
        return py::make_tuple(r.codebook, r.distortion_history);
      },
      py::arg("frames"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iters") = 100,
      "Returns (codebook, distortion_history).");
  m.def(
      "assign",
      [](const F32& frames, const Codebook& cb) {
        std::size_t dim = 0;
        const auto x = frames_of(frames, dim);
        return assign(x, dim, cb);
      },
      py::arg("frames"), py::arg("codebook"));
  m.def(
      "distortion",
      [](const F32& frames, const Codebook& cb) {
        std::size_t dim = 0;
        const auto x = frames_of(frames, dim);
        return distortion(x, dim, cb);
      },
      py::arg("frames"), py::arg("codebook"));

  m.def("dedup", [](const std::vector<Token>& u) { return dedup(u); }, py::arg("units"));
  py::class_<BpeModel>(m, "BpeModel")
      .def_property_readonly("base_vocab_size", &BpeModel::base_vocab_size)
      .def_property_readonly("vocab_size", &BpeModel::vocab_size)
      .def_property_readonly("max_span", &BpeModel::max_span)
      .def_property_readonly("merges",
                             [](const BpeModel& b) {
                               std::vector<std::tuple<Token, Token, Token>> out;
                               for (const auto& mg : b.merges()) out.emplace_back(mg.left, mg.right, mg.token);
                               return out;
                             })
      .def("save", [](const BpeModel& b, const std::filesystem::path& p) { save_bpe(b, p); })
      .def_static("load", &load_bpe);
  m.def(
      "bpe_train",
      [](const std::vector<std::vector<Token>>& c, std::size_t base_vocab, std::size_t merges) {
        return bpe_train(c, base_vocab, merges);
      },
      py::arg("corpus"), py::arg("base_vocab_size"), py::arg("num_merges"));
  m.def(
      "bpe_encode", [](const std::vector<Token>& u, const BpeModel& b) { return bpe_encode(u, b); }, py::arg("units"),
      py::arg("model"));
  m.def(
      "bpe_decode", [](const std::vector<Token>& t, const BpeModel& b) { return bpe_decode(t, b); }, py::arg("tokens"),
      py::arg("model"));
  m.def(
      "bitrate",
      [](const std::vector<std::vector<Token>>& c, std::size_t v, double s) { return bitrate(c, v, s); },
      py::arg("corpus"), py::arg("vocab_size"), py::arg("total_seconds"));

  m.def(
      "synth_generate",
      [](std::uint32_t num_utts, std::uint32_t num_layers, std::uint32_t planted_layer, std::uint32_t feature_dim,
         std::uint32_t num_classes, double noise_sigma, std::uint64_t seed) {
        SynthSpec spec;
        spec.num_utts = num_utts;
        spec.num_layers = num_layers;
        spec.planted_layer = planted_layer;
        spec.feature_dim = feature_dim;
        spec.num_classes = num_classes;
        spec.noise_sigma = noise_sigma;
        spec.seed = seed;
        const auto c = synth_generate(spec);
        return py::make_tuple(archive_to_py(c.archive), c.transcripts);
      },
      py::arg("num_utts") = 200, py::arg("num_layers") = 4, py::arg("planted_layer") = 2,
      py::arg("feature_dim") = 16, py::arg("num_classes") = 8, py::arg("noise_sigma") = 0.1, py::arg("seed") = 0,
      "Returns ({utt_id: L x T x D array}, {utt_id: transcript}).");
  m.def(
      "load_archive", [](const std::filesystem::path& p) { return archive_to_py(load_archive(p)); }, py::arg("path"));
  m.def(
      "save_archive", [](const py::dict& utts, const std::filesystem::path& p) { save_archive(archive_from_py(utts), p); },
      py::arg("utterances"), py::arg("path"));

  m.def(
      "export_weight_csv",
      [](const std::vector<double>& lambdas, const std::string& mode) {
        LayerWeights w;
        w.mode = parse_mode(mode);
        w.lambdas = lambdas;
        std::ostringstream out;
        export_weight_csv(w, out);
        return out.str();
      },
      py::arg("lambdas"), py::arg("mode") = "finetuned");

  m.def(
      "run_pipeline",
      [](const std::filesystem::path& out_dir, const std::map<std::string, std::string>& settings) {
        PipelineConfig cfg;
        for (const auto& [k, v] : settings) cfg.set(k, v);
        cfg.out_dir = out_dir;
        RunReport report;
        {
          py::gil_scoped_release release;
          report = run_pipeline(cfg);
        }
        py::dict out;
        for (const auto& [k, v] : report.key_values()) out[py::str(k)] = v;
        return out;
      },
      py::arg("out_dir"), py::arg("settings") = std::map<std::string, std::string>{},
      "Runs both stages and returns the report as {key: value} strings.");
}
