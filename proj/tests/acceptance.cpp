// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "ppr/corpus.hpp"
#include "ppr/eval.hpp"
#include "ppr/metrics.hpp"
#include "ppr/retrieval.hpp"
#include "ppr/rewrite.hpp"
#include "ppr/service.hpp"
#include "ppr/synth.hpp"
#include "ppr/util.hpp"

using namespace ppr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kSrc = PPR_SOURCE_DIR;
const std::string kCli = PPR_CLI_PATH;

struct Outcome {
  bool ok = true;
  std::string detail;
};

#define REQUIRE(cond, msg)          \
  do {                              \
    if (!(cond)) return {false, msg}; \
  } while (0)

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ppr_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int sh(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

std::string slurp(const fs::path& p) { return fs::exists(p) ? read_file(p.string()) : std::string("<missing>"); }

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

UserHistory synthetic_user(std::size_t records, std::uint64_t seed) {
  synth::Options o;
  o.users = 1;
  o.min_records = records;
  o.max_records = records;
  o.seed = seed;
  return synth::to_corpus(synth::histories(o)).users().begin()->second;
}

class TableText : public TextEmbedder {
 public:
  std::map<std::string, std::vector<double>> table;

 protected:
  EmbeddingVector do_embed_text(std::string_view t) override { return {table.at(std::string(t))}; }
};

class TableImage : public ImageEmbedder {
 public:
  std::map<std::string, std::vector<double>> table;

 protected:
  EmbeddingVector do_embed_image(const ImageRef& r) override { return {table.at(r.image_id)}; }
};

// ---------------------------------------------------------------------------

Outcome rouge_oracle() {
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    auto gen = [&] {
      TokenStream t(uniform_below(rng, 41));
      for (auto& s : t) s = "w" + std::to_string(uniform_below(rng, 8));
      return t;
    };
    auto a = gen(), b = gen();
    if (rouge_l_tokens(a, b) != oracle::rouge_l(a, b, 5.0)) return {false, "mismatch on pair " + std::to_string(i)};
  }
  double worked = rouge_l("the cat", "the cat sat");
  REQUIRE(std::abs(worked - 52.0 / 77.0) <= 1e-12, "worked case " + std::to_string(worked));
  return {true, "1000 pairs exact, worked case 52/77"};
}

Outcome bm25_oracle() {
  auto h = synthetic_user(50, 21);
  std::vector<std::vector<std::string>> docs;
  std::vector<std::string> vocab;
  for (const auto& r : h.records) {
    docs.push_back(tokenize(r.prompt_text));
    vocab.insert(vocab.end(), docs.back().begin(), docs.back().end());
  }
  vocab.push_back("unseenterm");
  auto idx = SparseIndex::build(h);
  Rng rng(22);
  double worst = 0;
  for (int q = 0; q < 100; ++q) {
    std::string query;
    for (std::size_t i = 0, n = 1 + uniform_below(rng, 8); i < n; ++i)
      query += (i ? " " : "") + vocab[uniform_below(rng, vocab.size())];
    auto qt = tokenize(query);
    std::vector<double> scores;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      scores.push_back(oracle::bm25(docs, qt, d));
      worst = std::max(worst, std::abs(bm25_score(idx, qt, h.records[d].record_id) - scores.back()));
    }
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
      auto got = retrieve(h, query, RetrievalMethod::BM25, k);
      auto want = oracle::rank_all(h, scores, k);
      REQUIRE(got.size() == want.size(), "size mismatch for query " + std::to_string(q));
      for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE(got[i].record_id == want[i].id, "order mismatch for query " + std::to_string(q));
    }
  }
  REQUIRE(worst <= 1e-9, "max score error " + std::to_string(worst));
  char buf[96];
  std::snprintf(buf, sizeof buf, "100 queries, max error %.2e", worst);
  return {true, buf};
}

Outcome dense_exact() {
  MockTextEmbedder emb;
  Rng rng(33);
  for (int q = 0; q < 100; ++q) {
    auto h = synthetic_user(200, 300 + q % 5);
    const auto& target = h.records[uniform_below(rng, h.size())];
    std::string query = q % 2 ? target.prompt_text : "a " + tokenize(target.prompt_text).back() + " at night";
    auto qv = emb.embed_text(query);
    std::vector<double> scores;
    for (const auto& r : h.records) scores.push_back(oracle::cos(qv.values, emb.embed_text(r.prompt_text).values));
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
      auto got = retrieve(h, query, RetrievalMethod::EBR, k, {}, &emb);
      auto want = oracle::rank_all(h, scores, k);
      REQUIRE(got.size() == want.size(), "size mismatch for query " + std::to_string(q));
      for (std::size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got[i].record_id == want[i].id, "order mismatch for query " + std::to_string(q));
        REQUIRE(std::abs(got[i].score - want[i].score) <= 1e-9, "score mismatch for query " + std::to_string(q));
      }
    }
    if (q % 2) {
      auto top = retrieve(h, query, RetrievalMethod::EBR, 1, {}, &emb);
      REQUIRE(std::abs(top[0].score - 1.0) <= 1e-6, "identical prompt scored " + std::to_string(top[0].score));
      REQUIRE(h.find(top[0].record_id)->prompt_text == query, "identical prompt not ranked first");
    }
  }
  return {true, "100 queries over 200-record histories"};
}

Outcome pms_properties() {
  Rng rng(44);
  auto ref = [](const std::string& id) { return ImageRef{id, "loc/" + id, "", false}; };
  for (int inst = 0; inst < 1000; ++inst) {
    TableText text;
    TableImage image;
    std::vector<PmsPair> pairs;
    const std::size_t dim = 2 + uniform_below(rng, 15), n = 1 + uniform_below(rng, 10);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> a(dim), b(dim);
      for (auto& x : a) x = 2 * unit(rng) - 1;
      for (auto& x : b) x = 2 * unit(rng) - 1;
      std::string id = "g" + std::to_string(i), p = "p" + std::to_string(i);
      image.table[id] = a;
      text.table[p] = b;
      pairs.push_back({ref(id), UserPreference{"u" + std::to_string(i), {p}, {}}});
      sum += std::max(oracle::cos(a, b), 0.0);
    }
    double v = pms(pairs, image, text);
    REQUIRE(v >= 0.0 && v <= 2.5, "out of range: " + std::to_string(v));
    REQUIRE(std::abs(v - 2.5 * sum / n) <= 1e-12, "oracle mismatch on instance " + std::to_string(inst));
  }

  TableText text;
  TableImage image;
  std::vector<double> e{0.3, -0.4, 0.5, 0.1};
  std::vector<PmsPair> same, neg;
  for (int i = 0; i < 5; ++i) {
    std::string id = "g" + std::to_string(i), p = "p" + std::to_string(i);
    image.table[id] = e;
    text.table[p] = e;
    same.push_back({ref(id), UserPreference{"u", {p}, {}}});
    std::string nid = "n" + std::to_string(i), np = "q" + std::to_string(i);
    image.table[nid] = {1.0, 0.0, 0.0, 0.0};
    text.table[np] = i % 2 ? std::vector<double>{0.0, 1.0, 0.0, 0.0} : std::vector<double>{-1.0, 0.2, 0.0, 0.0};
    neg.push_back({ref(nid), UserPreference{"u", {np}, {}}});
  }
  double all_same = pms(same, image, text);
  REQUIRE(all_same == 2.5, "identical embeddings gave " + std::to_string(all_same));
  REQUIRE(pms(neg, image, text) == 0.0, "nonpositive cosines did not give 0");

  image.table["a"] = {0.8, 0.6};
  image.table["b"] = {-0.2, std::sqrt(1 - 0.04)};
  text.table["pa"] = {1, 0};
  double two = pms({{ref("a"), {"u1", {"pa"}, {}}}, {ref("b"), {"u2", {"pa"}, {}}}}, image, text);
  REQUIRE(std::abs(two - 1.0) <= 1e-9, "two-user case gave " + std::to_string(two));
  return {true, "1000 instances in range, extremes exact, two-user case 1.0"};
}

Outcome split_invariants() {
  auto corpus = synth::to_corpus(synth::dataset_scale_histories(5));
  auto a = split(corpus, 9);
  auto b = split(corpus, 9);
  REQUIRE(a.test.size() == 3115, "users " + std::to_string(a.test.size()));
  REQUIRE(a.test_size() == 6230, "test samples " + std::to_string(a.test_size()));
  for (const auto& [u, recs] : a.test) REQUIRE(recs.size() == 2, "user " + u + " has " + std::to_string(recs.size()));
  REQUIRE(a.test_size() + a.train_size() == corpus.record_count(), "train + test != corpus");
  for (const auto& [u, recs] : a.train) {
    auto held = a.test_ids(u);
    for (const auto& r : recs) REQUIRE(!held.count(r.record_id), "record in both halves: " + r.record_id);
  }
  REQUIRE(split_manifest(a).dump() == split_manifest(b).dump(), "manifests differ for one seed");
  REQUIRE(split_manifest(a).dump() != split_manifest(split(corpus, 10)).dump(), "seed has no effect");

  // Same through the CLI on disk.
  auto dir = scratch("split");
  {
    std::ostringstream s;
    export_jsonl(corpus, s);
    write_file((dir / "corpus.jsonl").string(), s.str());
  }
  for (const char* name : {"one.json", "two.json"})
    REQUIRE(sh(kCli + " split --seed 9 --corpus " + (dir / "corpus.jsonl").string() + " --output " +
               (dir / name).string()) == 0,
            "ppr split failed");
  REQUIRE(slurp(dir / "one.json") == slurp(dir / "two.json"), "CLI manifests differ");
  return {true, "3115 users, 6230 test samples, disjoint, byte-identical"};
}

// Shared by leakage and determinism: eval + sweep + ablate through the CLI.
struct EvalRuns {
  fs::path dir;
  bool ok = false;
  std::string error;
};

const EvalRuns& eval_runs() {
  static EvalRuns runs = [] {
    EvalRuns r;
    r.dir = scratch("eval");
    const std::string manifest = (r.dir / "split.json").string();
    if (sh(kCli + " split --seed 7 --corpus " + kSrc + "/data/synthetic_50users.jsonl --output " + manifest) != 0) {
      r.error = "ppr split failed";
      return r;
    }
    for (const auto& [name, workers] : std::vector<std::pair<std::string, int>>{{"w1a", 1}, {"w1b", 1}, {"w8", 8}}) {
      std::string common = " --config " + kSrc + "/eval.toml --split " + manifest + " --workers " +
                           std::to_string(workers) + " --out " + (r.dir / name).string();
      if (sh(kCli + " eval --sweep" + common) != 0 || sh(kCli + " ablate" + common) != 0) {
        r.error = "eval/ablate failed for " + name;
        return r;
      }
    }
    r.ok = true;
    return r;
  }();
  return runs;
}

Outcome leakage() {
  const auto& runs = eval_runs();
  REQUIRE(runs.ok, runs.error);
  auto manifest = json::parse(slurp(runs.dir / "split.json"));
  std::map<std::string, std::set<std::string>> held;
  for (const auto& [u, ids] : manifest.at("test").items())
    for (const auto& id : ids) held[u].insert(id.get<std::string>());
  std::size_t samples = 0, retrieved = 0;
  for (const char* log : {"report_samples.jsonl", "scales_samples.jsonl", "ablations_samples.jsonl"}) {
    for (const auto& s : jsonl(runs.dir / "w1a" / log)) {
      ++samples;
      const auto& h = held[s.at("user_id").get<std::string>()];
      for (const auto& id : s.at("retrieved_ids")) {
        ++retrieved;
        REQUIRE(!h.count(id.get<std::string>()), "held-out id retrieved: " + id.get<std::string>());
      }
    }
  }
  REQUIRE(samples > 0 && retrieved > 0, "empty sample logs");
  return {true, std::to_string(samples) + " samples, " + std::to_string(retrieved) + " retrieved ids, 0 leaked"};
}

Outcome personalization_gain() {
  auto corpus = synth::to_corpus(synth::style_oracle_histories(25, 3));
  auto sp = split(corpus, 3);
  Rewriter rw(make_mock_providers());
  EvalConfig cfg;
  cfg.methods = {RewriteMode::passthrough(), RewriteMode::personalized(RetrievalMethod::EBR, 1)};
  cfg.k = 3;
  cfg.seed = 3;
  cfg.workers = 4;
  auto run = Evaluator(rw, cfg).run_offline(corpus, sp);
  std::map<std::string, std::map<std::string, json>> by;
  for (const auto& s : run.sample_log) by[s.at("record_id")][s.at("method")] = s.at("metrics");
  std::size_t n = 0, rouge_wins = 0, pms_wins = 0;
  for (const auto& [id, m] : by) {
    const auto& p = m.at("passthrough");
    const auto& q = m.at("personalized:ebr:1");
    ++n;
    rouge_wins += q.at("rouge_l").get<double>() > p.at("rouge_l").get<double>();
    pms_wins += q.at("pms").get<double>() > p.at("pms").get<double>();
  }
  REQUIRE(n == sp.test_size(), "sample count " + std::to_string(n));
  std::string detail = "ROUGE-L higher on " + std::to_string(rouge_wins) + "/" + std::to_string(n) +
                       ", PMS higher on " + std::to_string(pms_wins) + "/" + std::to_string(n);
  REQUIRE(rouge_wins == n, detail);
  REQUIRE(pms_wins * 100 >= 95 * n, detail);
  return {true, detail};
}

Outcome template_bytes() {
  const std::vector<std::pair<std::string, const std::string Templates::*>> files{
      {"context_independent", &Templates::context_independent},
      {"in_context", &Templates::in_context},
      {"general", &Templates::general},
      {"preference", &Templates::preference}};
  auto shipped = Templates::load_dir(kSrc + "/templates");
  for (const auto& [name, field] : files) {
    std::string golden = slurp(kSrc + "/tests/golden/" + name + ".txt");
    REQUIRE(slurp(kSrc + "/templates/" + name + ".txt") == golden, name + ".txt differs from golden");
    std::string parsed = Templates::parse_template_file(golden);
    REQUIRE(Templates::builtin().*field == parsed, "built-in " + name + " differs from golden");
    REQUIRE(shipped.*field == parsed, "loaded " + name + " differs from golden");
  }

  // Rendering keeps every literal segment of the template, in order.
  const auto& demos = builtin_demo_pool();
  std::vector<std::string> hist{"neon city at night", "a cat, oil painting"};
  auto literal_in_order = [](const std::string& tmpl, const std::string& rendered) {
    std::size_t from = 0, pos = 0;
    while (pos <= tmpl.size()) {
      std::size_t open = tmpl.find('{', pos);
      std::string lit = tmpl.substr(pos, open == std::string::npos ? std::string::npos : open - pos);
      std::size_t at = rendered.find(lit, from);
      if (at == std::string::npos) return false;
      from = at + lit.size();
      if (open == std::string::npos) break;
      pos = tmpl.find('}', open) + 1;
    }
    return true;
  };
  const auto& t = Templates::builtin();
  REQUIRE(literal_in_order(t.context_independent, build_ctx_independent_prompt(hist, "a dog")),
          "context-independent rendering");
  REQUIRE(literal_in_order(t.in_context, build_icl_prompt({demos.front()}, hist, "a dog")),
          "in-context rendering");
  REQUIRE(literal_in_order(t.general, build_general_prompt("a dog")), "general rendering");
  REQUIRE(literal_in_order(t.preference, build_preference_prompt(hist)), "preference rendering");
  return {true, "4 templates match golden files"};
}

Outcome ablation_shape() {
  const auto& runs = eval_runs();
  REQUIRE(runs.ok, runs.error);
  auto rows = parse_json_report(json::parse(slurp(runs.dir / "w1a" / "ablations.json")));
  std::vector<std::tuple<std::string, std::size_t, int>> got, want;
  for (const auto& r : rows) got.emplace_back(r.retriever, r.k, r.shots);
  for (std::size_t k : {1u, 3u, 5u, 7u}) want.emplace_back("ebr", k, 1);
  for (const char* r : {"bm25", "ebr"})
    for (int s : {1, 3, 5}) want.emplace_back(r, 3, s);
  REQUIRE(got == want, "unexpected ablation rows (" + std::to_string(rows.size()) + ")");
  return {true, "4 top-k rows + 6 retriever x shot rows"};
}

Outcome e2e_determinism() {
  const auto& runs = eval_runs();
  REQUIRE(runs.ok, runs.error);
  std::size_t compared = 0;
  for (const char* stem : {"report", "scales", "ablations"}) {
    for (const char* ext : {".csv", ".json", ".md", "_samples.jsonl"}) {
      std::string f = std::string(stem) + ext;
      auto base = slurp(runs.dir / "w1a" / f);
      REQUIRE(base != "<missing>", f + " missing");
      REQUIRE(base == slurp(runs.dir / "w1b" / f), f + " differs between identical runs");
      REQUIRE(base == slurp(runs.dir / "w8" / f), f + " differs with --workers 8");
      ++compared;
    }
  }
  return {true, std::to_string(compared) + " files byte-identical across 3 runs (workers 1, 1, 8)"};
}

Outcome ab_accounting() {
  AbLedger ledger;
  auto gen = [](const std::string& id, Arm arm) {
    GenerationEntry g;
    g.image_id = id;
    g.user_id = "u";
    g.request_id = id;
    g.prompt = g.rewritten = "p";
    g.arm = arm;
    return g;
  };
  for (int i = 0; i < 433; ++i) ledger.record_generation(gen("o" + std::to_string(i), Arm::Original));
  for (int i = 0; i < 472; ++i) ledger.record_generation(gen("p" + std::to_string(i), Arm::Personalized));
  Rng rng(55);
  std::size_t so = 0, sp = 0;
  for (int i = 0; i < 433; ++i) {
    bool save = unit(rng) < 0.46;
    so += save;
    ledger.record_feedback("o" + std::to_string(i), save ? FeedbackAction::Save : FeedbackAction::Delete, i);
  }
  for (int i = 0; i < 472; ++i) {
    if (unit(rng) < 0.1) continue;  // no feedback
    bool save = unit(rng) < 0.6;
    sp += save;
    ledger.record_feedback("p" + std::to_string(i), save ? FeedbackAction::Save : FeedbackAction::Delete, i);
  }
  auto r = ledger.report();
  const double ro = static_cast<double>(so) / 433.0, rp = static_cast<double>(sp) / 472.0;
  REQUIRE(r.original.images_generated == 433 && r.personalized.images_generated == 472, "generation counts");
  REQUIRE(std::abs(r.original.save_rate - ro) <= 1e-12, "original rate");
  REQUIRE(std::abs(r.personalized.save_rate - rp) <= 1e-12, "personalized rate");
  REQUIRE(r.absolute_diff && std::abs(*r.absolute_diff - (rp - ro)) <= 1e-12, "absolute difference");
  REQUIRE(r.relative_improvement && std::abs(*r.relative_improvement - (rp - ro) / ro) <= 1e-12,
          "relative improvement");

  std::size_t personalized = 0;
  for (int i = 0; i < 10000; ++i)
    personalized += assign_arm("user-" + std::to_string(i % 97), "req-" + std::to_string(i), 2024) == Arm::Personalized;
  const double share = personalized / 10000.0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "rates %.4f / %.4f, personalized share %.4f", ro, rp, share);
  REQUIRE(std::abs(share - 0.5) <= 0.02, buf);
  return {true, buf};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
    double limit_s;  // 0 = none
  };
  const std::vector<Criterion> criteria{
      {"rouge_l_oracle", rouge_oracle, 5},
      {"bm25_oracle", bm25_oracle, 5},
      {"dense_retrieval_exact", dense_exact, 0},
      {"pms_properties", pms_properties, 0},
      {"split_invariants", split_invariants, 0},
      {"leakage_freedom", leakage, 0},
      {"personalization_gain", personalization_gain, 60},
      {"template_byte_exact", template_bytes, 0},
      {"ablation_grid_shape", ablation_shape, 0},
      {"e2e_determinism", e2e_determinism, 0},
      {"ab_accounting", ab_accounting, 0},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.ok && c.limit_s > 0 && secs >= c.limit_s) o = {false, o.detail + "; over time limit"};
    failed += !o.ok;
    std::printf("%s %s: %s (%.2f s)\n", o.ok ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
