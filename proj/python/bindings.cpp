#include "tokenforce/analytic.hpp"
#include "tokenforce/configfile.hpp"
#include "tokenforce/harness.hpp"
#include "tokenforce/oracle.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

namespace py = pybind11;
using namespace tokenforce;
using nlohmann::json;

namespace {

json to_json(const py::handle& obj) {
  if (obj.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
  if (py::isinstance<py::int_>(obj)) return obj.cast<std::int64_t>();
  if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
  if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
  if (py::isinstance<py::list>(obj) || py::isinstance<py::tuple>(obj)) {
    json arr = json::array();
    for (const py::handle& item : obj) arr.push_back(to_json(item));
    return arr;
  }
  if (py::isinstance<py::dict>(obj)) {
    json out = json::object();
    for (const auto& item : obj.cast<py::dict>()) {
      out[item.first.cast<std::string>()] = to_json(item.second);
    }
    return out;
  }
  throw py::type_error("unsupported config value type");
}

py::dict outcome_to_dict(const AttackOutcome& out) {
  py::dict d;
  d["method"] = out.method;
  d["seed"] = out.seed;
  d["best_suffix"] = out.best_suffix;
  d["best_loss"] = out.best_loss;
  d["flops_used"] = out.flops_used;
  d["steps"] = out.steps;
  py::list trace;
  for (const TracePoint& p : out.trace) {
    trace.append(py::make_tuple(p.flops, p.best_loss));
  }
  d["trace"] = trace;
  return d;
}

SearchSpace make_space(const LanguageModel& model, bool restricted) {
  return restricted ? SearchSpace::excluding_controls(model.vocab())
                    : SearchSpace::full_vocab(model.vocab());
}

}  // namespace

PYBIND11_MODULE(_tokenforce, m) {
  m.doc() = "token-forcing attack toolkit bindings";

  py::class_<VocabSpec>(m, "VocabSpec")
      .def(py::init<int, TokenSeq, int>(), py::arg("size"),
           py::arg("control_ids") = TokenSeq{}, py::arg("embedding_dim") = 32)
      .def_readonly("size", &VocabSpec::size)
      .def_readonly("control_ids", &VocabSpec::control_ids)
      .def_readonly("embedding_dim", &VocabSpec::embedding_dim);

  py::class_<ToyArch>(m, "ToyArch")
      .def(py::init([](int layers, int heads, const VocabSpec& vocab,
                       int max_seq) {
             ToyArch arch;
             arch.layers = layers;
             arch.heads = heads;
             arch.vocab = vocab;
             arch.max_seq = max_seq;
             return arch;
           }),
           py::arg("layers") = 2, py::arg("heads") = 2, py::arg("vocab"),
           py::arg("max_seq") = 256)
      .def_readonly("layers", &ToyArch::layers)
      .def_readonly("heads", &ToyArch::heads)
      .def_readonly("max_seq", &ToyArch::max_seq);

  py::class_<LanguageModel, std::shared_ptr<LanguageModel>>(m, "LanguageModel")
      .def_property_readonly("vocab_size", &LanguageModel::vocab_size)
      .def_property_readonly("embed_dim", &LanguageModel::embed_dim)
      .def_property_readonly("nonembed_params",
                             &LanguageModel::nonembed_params)
      .def("embedding_matrix", &LanguageModel::embedding_matrix,
           py::return_value_policy::copy)
      .def("forward_logits",
           [](const LanguageModel& self, const TokenSeq& tokens) {
             return self.forward_logits(tokens);
           })
      .def("greedy_decode",
           [](const LanguageModel& self, const TokenSeq& prefix, int n) {
             return greedy_decode(self, prefix, n);
           })
      .def("backward_embed",
           [](const LanguageModel& self, const TokenSeq& full,
              int suffix_begin, int suffix_end, const TokenSeq& target,
              int target_start, double gamma) {
             return backward_embed(self, full, suffix_begin, suffix_end,
                                   target, target_start, GradTap(gamma));
           },
           py::arg("full"), py::arg("suffix_begin"), py::arg("suffix_end"),
           py::arg("target"), py::arg("target_start"), py::arg("gamma") = 1.0)
      .def("backward_onehot",
           [](const LanguageModel& self, const TokenSeq& full,
              int suffix_begin, int suffix_end, const TokenSeq& target,
              int target_start, double gamma) {
             return backward_onehot(self, full, suffix_begin, suffix_end,
                                    target, target_start, GradTap(gamma));
           },
           py::arg("full"), py::arg("suffix_begin"), py::arg("suffix_end"),
           py::arg("target"), py::arg("target_start"), py::arg("gamma") = 1.0);

  py::class_<ToyLM, LanguageModel, std::shared_ptr<ToyLM>>(m, "ToyLM");
  py::class_<AnalyticLM, LanguageModel, std::shared_ptr<AnalyticLM>>(
      m, "AnalyticLM");

  m.def("build_model", &build_model, py::arg("arch"), py::arg("seed"));
  m.def("make_uniform_lm", &make_uniform_lm, py::arg("vocab_size"),
        py::arg("control_ids") = TokenSeq{});
  m.def("make_pointer_lm", &make_pointer_lm, py::arg("vocab_size"),
        py::arg("bonus"), py::arg("control_ids") = TokenSeq{});
  m.def("make_copy_lm", &make_copy_lm, py::arg("vocab_size"), py::arg("bonus"),
        py::arg("control_ids") = TokenSeq{});

  py::class_<ContextTemplate>(m, "ContextTemplate")
      .def(py::init([](const std::vector<std::pair<std::string, TokenSeq>>&
                           segments,
                       int suffix_slot, int suffix_len) {
             ContextTemplate tmpl;
             for (const auto& [role, tokens] : segments) {
               tmpl.segments.push_back({role, tokens});
             }
             tmpl.suffix_slot = suffix_slot;
             tmpl.suffix_len = suffix_len;
             return tmpl;
           }),
           py::arg("segments") =
               std::vector<std::pair<std::string, TokenSeq>>{},
           py::arg("suffix_slot") = 0, py::arg("suffix_len") = 1)
      .def_readonly("suffix_slot", &ContextTemplate::suffix_slot)
      .def_readonly("suffix_len", &ContextTemplate::suffix_len);

  py::class_<TargetSpec>(m, "TargetSpec")
      .def(py::init([](std::string id, TokenSeq tokens) {
             return TargetSpec{std::move(id), std::move(tokens)};
           }),
           py::arg("id"), py::arg("tokens"))
      .def_readonly("id", &TargetSpec::id)
      .def_readonly("tokens", &TargetSpec::tokens);

  m.def("sample_targets",
        [](const VocabSpec& vocab, int t_len, int count, std::uint64_t seed) {
          return sample_targets(vocab, t_len, count, seed);
        });

  m.def("token_forcing_loss",
        [](const LanguageModel& model, const ContextTemplate& tmpl,
           const TokenSeq& suffix, const TargetSpec& target, bool restricted) {
          const SearchSpace space = make_space(model, restricted);
          LossBreakdown out =
              token_forcing_loss(model, tmpl, suffix, target, &space);
          return py::make_tuple(out.mean, out.per_position);
        },
        py::arg("model"), py::arg("template"), py::arg("suffix"),
        py::arg("target"), py::arg("restricted") = false);

  m.def("greedy_success",
        [](const LanguageModel& model, const ContextTemplate& tmpl,
           const TokenSeq& suffix, const TargetSpec& target) {
          return greedy_success(model, tmpl, suffix, target);
        });

  m.def("assemble",
        [](const ContextTemplate& tmpl, const TokenSeq& suffix) {
          AssembledContext ctx = assemble(tmpl, suffix);
          return py::make_tuple(ctx.full,
                                py::make_tuple(ctx.suffix_begin,
                                               ctx.suffix_end),
                                ctx.target_start);
        });

  m.def("cost_forward", &cost_forward, py::arg("n_nonembed"),
        py::arg("tokens"), py::arg("batch") = 1);
  m.def("cost_backward", &cost_backward, py::arg("n_nonembed"),
        py::arg("tokens"), py::arg("batch") = 1);

  m.def("method_ids", []() { return method_ids(); });

  m.def("run_attack",
        [](const LanguageModel& model, const ContextTemplate& tmpl,
           const TargetSpec& target, const std::string& method,
           const py::dict& params, std::int64_t budget, std::uint64_t seed,
           bool restricted) {
          const AttackConfig cfg = attack_config_from_json(method,
                                                           to_json(params));
          const SearchSpace space = make_space(model, restricted);
          FlopMeter meter(model.nonembed_params(), budget);
          AttackProblem problem{model, tmpl, target, space};
          return outcome_to_dict(run_attack(problem, cfg, meter, seed));
        },
        py::arg("model"), py::arg("template"), py::arg("target"),
        py::arg("method"), py::arg("params") = py::dict(),
        py::arg("budget"), py::arg("seed") = 0, py::arg("restricted") = false);

  m.def("exhaustive_best",
        [](const LanguageModel& model, const ContextTemplate& tmpl,
           const TargetSpec& target, std::int64_t cap, bool restricted) {
          const SearchSpace space = make_space(model, restricted);
          ExhaustiveResult res =
              exhaustive_best(model, tmpl, target, space, cap);
          py::dict d;
          d["suffix"] = res.suffix;
          d["loss"] = res.loss;
          d["evaluations"] = res.evaluations;
          return d;
        },
        py::arg("model"), py::arg("template"), py::arg("target"),
        py::arg("cap") = 1'000'000, py::arg("restricted") = false);

  m.def("finite_diff_grad",
        [](const LanguageModel& model, const TokenSeq& full, int suffix_begin,
           int suffix_end, const TokenSeq& target, int target_start,
           double step) {
          return finite_diff_grad(model, full, suffix_begin, suffix_end,
                                  target, target_start, step);
        },
        py::arg("model"), py::arg("full"), py::arg("suffix_begin"),
        py::arg("suffix_end"), py::arg("target"), py::arg("target_start"),
        py::arg("step") = 1e-5);

  m.def("max_relative_error", &max_relative_error, py::arg("a"), py::arg("b"),
        py::arg("tiny") = 1e-8);

  m.def("independent_loss",
        [](const LanguageModel& model, const TokenSeq& full, int target_start,
           int target_len) {
          return independent_loss(model, full, target_start, target_len);
        });
}
