#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ppr/cli.hpp"
#include "ppr/corpus.hpp"
#include "ppr/error.hpp"
#include "ppr/metrics.hpp"
#include "ppr/retrieval.hpp"
#include "ppr/rewrite.hpp"
#include "ppr/service.hpp"
#include "ppr/text.hpp"

namespace py = pybind11;
using namespace ppr;

namespace {

const UserHistory& user_history(const Corpus& corpus, const std::string& user_id) {
  const UserHistory* h = corpus.find_user(user_id);
  if (!h) throw NotFoundError("unknown user: " + user_id);
  return *h;
}

}  // namespace

PYBIND11_MODULE(_ppr, m) {
  m.doc() = "Personalized prompt rewriting core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DuplicateError>(m, "DuplicateError", base.ptr());
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_KeyError);
  py::register_exception<ProviderError>(m, "ProviderError", base.ptr());

  m.def("tokenize", &tokenize, py::arg("text"));
  m.def(
      "rouge_l", [](const std::string& c, const std::string& r, double beta) { return rouge_l(c, r, beta); },
      py::arg("candidate"), py::arg("reference"), py::arg("beta") = 5.0);
  m.def(
      "shorten",
      [](const std::string& prompt, const std::string& scale) { return shorten(prompt, parse_shorten_scale(scale)); },
      py::arg("prompt"), py::arg("scale") = "short_sentence");

  py::class_<Corpus>(m, "Corpus")
      .def_static(
          "load",
          [](const std::string& path, std::size_t min_images, std::size_t min_distinct) {
            return ingest_jsonl(path, {min_images, min_distinct}).corpus;
          },
          py::arg("path"), py::arg("min_images") = 0, py::arg("min_distinct") = 0)
      .def("user_ids",
           [](const Corpus& c) {
             std::vector<std::string> ids;
             for (const auto& [id, _] : c.users()) ids.push_back(id);
             return ids;
           })
      .def("record_count", &Corpus::record_count)
      .def("__len__", &Corpus::user_count)
      .def(
          "history",
          [](const Corpus& c, const std::string& user_id) {
            std::vector<std::pair<std::string, std::string>> out;
            for (const auto& r : user_history(c, user_id).records) out.emplace_back(r.record_id, r.prompt_text);
            return out;
          },
          py::arg("user_id"));

  m.def(
      "split_manifest", [](const Corpus& c, std::uint64_t seed) { return split_manifest(split(c, seed)).dump(); },
      py::arg("corpus"), py::arg("seed"));

  py::class_<RetrievalResult>(m, "RetrievalResult")
      .def_readonly("record_id", &RetrievalResult::record_id)
      .def_readonly("prompt", &RetrievalResult::prompt_text)
      .def_readonly("score", &RetrievalResult::score)
      .def_readonly("rank", &RetrievalResult::rank)
      .def("__repr__", [](const RetrievalResult& r) {
        return "RetrievalResult(" + r.record_id + ", " + std::to_string(r.score) + ")";
      });

  m.def(
      "retrieve",
      [](const Corpus& c, const std::string& user_id, const std::string& query, const std::string& method,
         std::size_t k, const std::set<std::string>& exclude) {
        MockTextEmbedder embed;
        return retrieve(user_history(c, user_id), query, parse_retrieval_method(method), k, exclude, &embed);
      },
      py::arg("corpus"), py::arg("user_id"), py::arg("query"), py::arg("method") = "ebr", py::arg("k") = 3,
      py::arg("exclude") = std::set<std::string>{});

  m.def(
      "keywords",
      [](const Corpus& c, long n, bool drop_stopwords) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& kw : top_keywords(c, n, drop_stopwords ? &Lexicon::builtin().stopwords() : nullptr))
          out.emplace_back(kw.term, kw.weight);
        return out;
      },
      py::arg("corpus"), py::arg("n") = 250, py::arg("drop_stopwords") = true);

  py::class_<RewrittenPrompt>(m, "RewrittenPrompt")
      .def_readonly("text", &RewrittenPrompt::text)
      .def_property_readonly("mode", [](const RewrittenPrompt& r) { return r.mode.label(); })
      .def_readonly("retrieved", &RewrittenPrompt::retrieved)
      .def_readonly("demos_used", &RewrittenPrompt::demos_used)
      .def_readonly("word_count", &RewrittenPrompt::word_count)
      .def_readonly("over_limit", &RewrittenPrompt::over_limit)
      .def_readonly("fell_back_to_general", &RewrittenPrompt::fell_back_to_general)
      .def_readonly("request", &RewrittenPrompt::request);

  m.def(
      "rewrite",
      [](const Corpus& c, const std::string& user_id, const std::string& prompt, const std::string& mode,
         std::size_t k, std::uint64_t seed) {
        Rewriter rw(make_mock_providers());
        RewriteOptions o;
        o.k = k;
        o.seed = seed;
        return rw.rewrite(user_history(c, user_id), prompt, RewriteMode::parse(mode), o);
      },
      py::arg("corpus"), py::arg("user_id"), py::arg("prompt"), py::arg("mode") = "personalized:ebr:1",
      py::arg("k") = 3, py::arg("seed") = 0);

  m.def(
      "assign_arm",
      [](const std::string& user_id, const std::string& request_id, std::uint64_t seed) {
        return std::string(to_string(assign_arm(user_id, request_id, seed)));
      },
      py::arg("user_id"), py::arg("request_id"), py::arg("experiment_seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"ppr"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
