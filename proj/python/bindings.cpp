#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "zstal/bundle.hpp"
#include "zstal/config.hpp"
#include "zstal/error.hpp"
#include "zstal/gradcheck.hpp"
#include "zstal/guidance.hpp"
#include "zstal/localizer.hpp"
#include "zstal/metrics.hpp"
#include "zstal/synth.hpp"

namespace py = pybind11;
using namespace zstal;

namespace {

using GtTuple = std::tuple<std::string, double, double, std::string>;

std::vector<Segment> to_segments(const std::vector<GtTuple>& gts) {
  std::vector<Segment> out;
  out.reserve(gts.size());
  for (const auto& [video, a, b, label] : gts) out.push_back({video, a, b, label});
  return out;
}

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kInvalidArgument, "expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

py::dict report_dict(const EvalReport& r) {
  py::dict per_class;
  for (const ClassRow& row : r.classes) per_class[py::str(row.label)] = row.ap;
  py::dict d;
  d["thresholds"] = r.thresholds;
  d["map"] = r.map;
  d["average_map"] = r.average_map;
  d["per_class"] = per_class;
  d["top1"] = r.top1;
  d["top5"] = r.top5;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core: bundles, localization, clustering and evaluation.";

  static py::exception<Error> error(m, "Error", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  py::class_<Proposal>(m, "Proposal")
      .def(py::init<std::string, double, double, std::string, double>(), py::arg("video_id"),
           py::arg("t_start"), py::arg("t_end"), py::arg("label"), py::arg("score"))
      .def_readwrite("video_id", &Proposal::video_id)
      .def_readwrite("t_start", &Proposal::t_start)
      .def_readwrite("t_end", &Proposal::t_end)
      .def_readwrite("label", &Proposal::label)
      .def_readwrite("score", &Proposal::score)
      .def("__eq__", [](const Proposal& a, const Proposal& b) { return a == b; })
      .def("__repr__", [](const Proposal& p) {
        return "Proposal(" + p.video_id + ", " + std::to_string(p.t_start) + ", " +
               std::to_string(p.t_end) + ", " + p.label + ", " + std::to_string(p.score) + ")";
      });

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("k_actions", &RunConfig::k_actions)
      .def_readwrite("alpha", &RunConfig::alpha)
      .def_readwrite("gamma", &RunConfig::gamma)
      .def_readwrite("lambda_tmp", &RunConfig::lambda_tmp)
      .def_readwrite("steps_T", &RunConfig::steps_T)
      .def_readwrite("learning_rate", &RunConfig::learning_rate)
      .def_readwrite("s_clusters", &RunConfig::s_clusters)
      .def_readwrite("k_triplets", &RunConfig::k_triplets)
      .def_readwrite("percentile_p", &RunConfig::percentile_p)
      .def_readwrite("nms_tiou", &RunConfig::nms_tiou)
      .def_readwrite("seed", &RunConfig::seed)
      .def("set", &RunConfig::set, py::arg("key"), py::arg("value"))
      .def("check", &RunConfig::check)
      .def("to_text", &RunConfig::to_text);

  py::class_<VideoBundle>(m, "Bundle")
      .def_readonly("video_id", &VideoBundle::video_id)
      .def_readonly("fps", &VideoBundle::fps)
      .def_readonly("frame_times", &VideoBundle::frame_times)
      .def_property_readonly("frame_count", &VideoBundle::frame_count)
      .def_property_readonly("class_ids",
                             [](const VideoBundle& b) {
                               std::vector<std::string> ids;
                               for (const TextItem* t : b.classes()) ids.push_back(t->id);
                               return ids;
                             })
      .def_property_readonly("annotations",
                             [](const VideoBundle& b) {
                               std::vector<GtTuple> out;
                               if (!b.annotations) return out;
                               for (const Annotation& a : *b.annotations) {
                                 out.emplace_back(b.video_id, a.t_start, a.t_end, a.class_label);
                               }
                               return out;
                             })
      .def("violations",
           [](const VideoBundle& b) {
             std::vector<std::string> out;
             for (const Violation& v : validate_bundle(b)) out.push_back(v.describe());
             return out;
           })
      .def("save", [](const VideoBundle& b, const std::filesystem::path& dir) {
        save_bundle(b, dir);
      });

  m.def("load_bundle", &load_bundle, py::arg("path"));

  m.def(
      "synth_bundle",
      [](std::uint64_t seed, std::size_t frames, std::size_t classes, double noise,
         const std::string& video_id) {
        return synth_bundle(seed, random_scenario(seed, frames, classes, noise, video_id));
      },
      py::arg("seed") = 0, py::arg("frames") = 200, py::arg("classes") = 4,
      py::arg("noise") = 0.1, py::arg("video_id") = "synth");

  m.def(
      "localize",
      [](const VideoBundle& b, const RunConfig& cfg) {
        LocalizeResult r;
        {
          py::gil_scoped_release release;
          r = localize(b, cfg);
        }
        std::vector<std::string> ranked;
        for (std::size_t i : r.ranking.ranked) ranked.push_back(r.ranking.class_ids[i]);
        py::dict d;
        d["proposals"] = r.proposals;
        d["ranking"] = ranked;
        d["final_scores"] = [&] {
          py::dict s;
          for (const ScoreTrace& t : r.traces) s[py::str(t.class_id)] = t.final_scores;
          return s;
        }();
        return d;
      },
      py::arg("bundle"), py::arg("config") = RunConfig{});

  m.def("tiou", [](double a0, double a1, double b0, double b1) { return tiou({a0, a1}, {b0, b1}); });

  m.def(
      "average_precision",
      [](const std::vector<Proposal>& preds, const std::vector<GtTuple>& gts, double threshold) {
        return average_precision(preds, to_segments(gts), threshold);
      },
      py::arg("preds"), py::arg("gts"), py::arg("threshold"));

  m.def(
      "map_report",
      [](const std::vector<Proposal>& preds, const std::vector<GtTuple>& gts,
         const std::string& preset) {
        return report_dict(map_report(preds, to_segments(gts), thresholds_preset(preset)));
      },
      py::arg("preds"), py::arg("gts"), py::arg("preset") = "thumos");

  m.def("thresholds_preset", &thresholds_preset, py::arg("name"));
  m.def("nms", &nms, py::arg("proposals"), py::arg("tiou_threshold"));

  m.def(
      "cluster_triplets",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& embeddings,
         const std::vector<std::string>& ids, int s_clusters, std::uint64_t seed) {
        const TripletSummary s = cluster_triplets(to_tensor(embeddings), ids, s_clusters, seed);
        py::dict d;
        d["representative_ids"] = s.representative_ids;
        d["assignment"] = s.assignment;
        d["inertia_history"] = s.inertia_history;
        return d;
      },
      py::arg("embeddings"), py::arg("ids"), py::arg("s_clusters") = 20, py::arg("seed") = 0);

  m.def(
      "ambiguity_scan",
      [](const std::vector<std::string>& captions,
         const std::optional<std::vector<std::string>>& lexicon) {
        const AmbiguityReport r =
            ambiguity_scan(captions, lexicon ? *lexicon : default_ambiguity_lexicon());
        py::dict d;
        d["total"] = r.total_captions;
        d["flagged"] = r.flagged_captions;
        d["fraction"] = r.fraction;
        d["matched_terms"] = r.matched_terms;
        return d;
      },
      py::arg("captions"), py::arg("lexicon") = std::nullopt);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t instances) {
        GradCheckOptions opts;
        opts.seed = seed;
        opts.instances = instances;
        py::dict d;
        for (const GradCheckResult& r : run_gradcheck(opts)) {
          d[py::str(r.name)] = py::make_tuple(r.passed, r.max_relative_error);
        }
        return d;
      },
      py::arg("seed") = 0, py::arg("instances") = 50);
}
