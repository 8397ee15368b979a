#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dmark/cli.hpp"
#include "dmark/errors.hpp"
#include "dmark/harness.hpp"

namespace py = pybind11;
using namespace dmark;

namespace {

std::vector<TokenId> members(const TokenBitset& set) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.test(i)) out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

py::dict report_dict(const DetectionReport& r) {
  py::dict d;
  d["n"] = r.n;
  d["green_count"] = r.green_count;
  d["z"] = r.z;
  d["green_flags"] = r.green_flags;
  d["backward_green_count"] = r.backward_green_count;
  if (r.threshold) {
    d["threshold"] = *r.threshold;
    d["is_watermarked"] = r.is_watermarked;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_dmark, m) {
  m.doc() = "Green-list watermarking for a toy masked-diffusion decoder";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_MemoryError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_RuntimeError);

  py::class_<WatermarkKey>(m, "WatermarkKey")
      .def(py::init<std::uint64_t, double, double, int>(), py::arg("seed"), py::arg("gamma"),
           py::arg("delta"), py::arg("scheme_version") = kCurrentSchemeVersion)
      .def_property_readonly("seed", &WatermarkKey::seed)
      .def_property_readonly("gamma", &WatermarkKey::gamma)
      .def_property_readonly("delta", &WatermarkKey::delta)
      .def_property_readonly("green_cutoff", &WatermarkKey::green_cutoff)
      .def("fingerprint", [](const WatermarkKey& k) { return fingerprint_hex(k.fingerprint()); })
      .def("with_delta", &WatermarkKey::with_delta)
      .def("__eq__", [](const WatermarkKey& a, const WatermarkKey& b) { return a == b; })
      .def("__repr__", [](const WatermarkKey& k) {
        std::ostringstream ss;
        write_key(ss, k);
        return "WatermarkKey(" + ss.str() + ")";
      });

  m.def("hash_context_raw", &hash_context_raw, py::arg("seed"), py::arg("prev"));
  m.def("score_bits", &score_bits, py::arg("context_hash"), py::arg("v"));
  m.def("uniform_score", &uniform_score, py::arg("context_hash"), py::arg("v"));
  m.def("is_green", &is_green, py::arg("key"), py::arg("prev"), py::arg("v"));
  m.def(
      "green_set",
      [](const WatermarkKey& key, TokenId prev, std::size_t vocab_size) {
        return members(green_set(key, prev, vocab_size));
      },
      py::arg("key"), py::arg("prev"), py::arg("vocab_size"));

  py::class_<GreenMatrix>(m, "GreenMatrix")
      .def_static("build", &GreenMatrix::build, py::arg("key"), py::arg("vocab_size"),
                  py::arg("budget_bytes") = kDefaultMatrixBudgetBytes, py::arg("threads") = 1,
                  py::call_guard<py::gil_scoped_release>())
      .def_static("make_virtual", &GreenMatrix::make_virtual, py::arg("key"),
                  py::arg("vocab_size"))
      .def_static("load", &GreenMatrix::load, py::arg("path"), py::arg("key"))
      .def("save", &GreenMatrix::save, py::arg("path"))
      .def_property_readonly("vocab_size", &GreenMatrix::vocab_size)
      .def_property_readonly("materialized", &GreenMatrix::materialized)
      .def("contains", &GreenMatrix::contains, py::arg("prev"), py::arg("next"))
      .def("forward_green",
           [](const GreenMatrix& g, TokenId prev) { return members(g.forward_green(prev)); })
      .def("backward_green",
           [](const GreenMatrix& g, TokenId next) { return members(g.backward_green(next)); });

  py::class_<ToyModelSpec>(m, "ToyModelSpec")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ToyModelSpec::vocab_size)
      .def_readwrite("seed", &ToyModelSpec::seed)
      .def_readwrite("backward_weight", &ToyModelSpec::backward_weight)
      .def_readwrite("unigram_scale", &ToyModelSpec::unigram_scale)
      .def_readwrite("common_tokens", &ToyModelSpec::common_tokens)
      .def_readwrite("common_boost", &ToyModelSpec::common_boost)
      .def_readwrite("bigram_scale", &ToyModelSpec::bigram_scale)
      .def_readwrite("flat_fraction", &ToyModelSpec::flat_fraction)
      .def_readwrite("successors", &ToyModelSpec::successors)
      .def_readwrite("successor_boost", &ToyModelSpec::successor_boost);

  py::class_<ToyLM>(m, "ToyLM")
      .def(py::init<std::size_t, double, std::vector<double>, std::vector<double>>(),
           py::arg("vocab_size"), py::arg("backward_weight"), py::arg("unigram"),
           py::arg("bigram"))
      .def_static("random", &ToyLM::random, py::arg("spec"))
      .def_property_readonly("vocab_size", &ToyLM::vocab_size)
      .def(
          "context_logits",
          [](const ToyLM& lm, std::optional<TokenId> left, std::optional<TokenId> right) {
            std::vector<double> row(lm.vocab_size());
            lm.context_logits(left, right, row);
            return row;
          },
          py::arg("left") = py::none(), py::arg("right") = py::none());

  py::class_<DecodeSchedule>(m, "DecodeSchedule")
      .def(py::init([](std::size_t length, std::size_t steps, std::size_t block_size) {
             DecodeSchedule s{length, steps, block_size == 0 ? length : block_size};
             s.validate();
             return s;
           }),
           py::arg("length"), py::arg("steps"), py::arg("block_size") = 0)
      .def_readonly("length", &DecodeSchedule::length)
      .def_readonly("steps", &DecodeSchedule::steps)
      .def_readonly("block_size", &DecodeSchedule::block_size)
      .def("tokens_per_step", &DecodeSchedule::tokens_per_step);

  m.def("strategy_names", [] {
    std::vector<std::string> out;
    for (Strategy s : kAllStrategies) out.emplace_back(strategy_name(s));
    return out;
  });

  m.def(
      "decode",
      [](const ToyLM& model, const std::vector<TokenId>& prompt, const DecodeSchedule& schedule,
         double temperature, std::uint64_t seed, std::optional<std::string> strategy,
         std::optional<WatermarkKey> key) {
        Sampler sampler(temperature, seed);
        if (!strategy) return decode(model, prompt, schedule, sampler);
        if (!key) throw ConfigError("a strategy needs a key");
        const GreenMatrix matrix = GreenMatrix::build(*key, model.vocab_size());
        const StrategyBias bias(parse_strategy(*strategy), *key, matrix);
        return decode(model, prompt, schedule, sampler, &bias);
      },
      py::arg("model"), py::arg("prompt"), py::arg("schedule"), py::arg("temperature") = 1.0,
      py::arg("seed") = 0, py::arg("strategy") = py::none(), py::arg("key") = py::none(),
      py::call_guard<py::gil_scoped_release>());

  m.def("z_score", &z_score, py::arg("green_count"), py::arg("n"), py::arg("gamma"));
  m.def(
      "score",
      [](const WatermarkKey& key, const GreenMatrix& matrix, const std::vector<TokenId>& tokens,
         std::optional<TokenId> prompt_tail) {
        return report_dict(score(key, matrix, tokens, prompt_tail));
      },
      py::arg("key"), py::arg("matrix"), py::arg("tokens"), py::arg("prompt_tail") = py::none());
  m.def(
      "calibrate",
      [](const std::vector<double>& null_z, const std::vector<double>& fprs) {
        const Calibration cal = calibrate(null_z, fprs);
        py::dict d;
        d["thresholds"] = cal.thresholds;
        d["warnings"] = cal.warnings;
        return d;
      },
      py::arg("null_z"), py::arg("fprs") = kDefaultFprs);
  m.def(
      "evaluate",
      [](const std::vector<double>& watermarked_z, const std::vector<double>& null_z,
         const std::vector<double>& fprs) {
        return evaluate(watermarked_z, calibrate(null_z, fprs));
      },
      py::arg("watermarked_z"), py::arg("null_z"), py::arg("fprs") = kDefaultFprs);

  m.def(
      "apply_attack",
      [](const std::string& kind, double rate, const std::vector<TokenId>& tokens,
         std::size_t vocab_size, std::uint64_t seed) {
        AttackSpec spec;
        spec.kind = parse_attack(kind);
        spec.rate = rate;
        spec.rng_seed = seed;
        return apply_attack(spec, tokens, vocab_size).tokens;
      },
      py::arg("kind"), py::arg("rate"), py::arg("tokens"), py::arg("vocab_size"),
      py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one dmark command; returns (exit_code, stdout, stderr).");
}
