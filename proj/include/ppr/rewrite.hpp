#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppr/corpus.hpp"
#include "ppr/providers.hpp"
#include "ppr/retrieval.hpp"

namespace ppr {

/// Rewriter instructions with `{R_t}`, `{x_t}`, `{E}` and `{Q_t}` placeholders.
struct Templates {
  std::string context_independent;
  std::string in_context;
  std::string general;
  std::string preference;

  static const Templates& builtin();
  /// Reads context_independent.txt, in_context.txt, general.txt and
  /// preference.txt from `dir`. Leading lines starting with "# " are
  /// treated as file comments; one trailing newline is dropped.
  static Templates load_dir(const std::string& dir);
  static std::string parse_template_file(std::string_view content);
};

/// One hand-written rewriting demonstration.
struct DemoExample {
  std::string id;
  std::vector<std::string> histories;  // exactly 3
  std::string input_prompt;
  std::string rewritten_prompt;
};

void validate(const DemoExample& demo);

/// JSON array of {"id"?, "histories": [3 strings], "input_prompt", "rewritten_prompt"}.
std::vector<DemoExample> parse_demo_pool(const nlohmann::json& j);
std::vector<DemoExample> load_demo_pool(const std::string& path);
/// Five illustrative examples written for this project.
const std::vector<DemoExample>& builtin_demo_pool();

/// "1. first\n2. second\n3. third"
std::string render_numbered(const std::vector<std::string>& items);
/// Rendered `{E}` block: one "Example i:" section per demo, each starting on a new line.
std::string render_demos(const std::vector<DemoExample>& demos);

/// Throws ValidationError when `retrieved` is empty or `current` is blank.
std::string build_ctx_independent_prompt(const std::vector<std::string>& retrieved, std::string_view current,
                                         const Templates& templates = Templates::builtin());
/// Throws ValidationError when `demos` is empty.
std::string build_icl_prompt(const std::vector<DemoExample>& demos, const std::vector<std::string>& retrieved,
                             std::string_view current, const Templates& templates = Templates::builtin());
std::string build_general_prompt(std::string_view current, const Templates& templates = Templates::builtin());
std::string build_preference_prompt(const std::vector<std::string>& history_prompts,
                                    const Templates& templates = Templates::builtin());

/// Samples `shots` demos uniformly (seeded) and orders them by descending
/// cosine between the demo input and `current`.
std::vector<DemoExample> select_demos(const std::vector<DemoExample>& pool, std::string_view current,
                                      std::size_t shots, TextEmbedder& embed, std::uint64_t seed);

struct RewriteMode {
  enum class Kind { Passthrough, GeneralPR, PersonalizedPR };

  Kind kind = Kind::PersonalizedPR;
  RetrievalMethod retriever = RetrievalMethod::EBR;
  int icl_shots = 1;  // 0 = context-independent

  static RewriteMode passthrough() { return {Kind::Passthrough, RetrievalMethod::EBR, 0}; }
  static RewriteMode general() { return {Kind::GeneralPR, RetrievalMethod::EBR, 0}; }
  static RewriteMode personalized(RetrievalMethod r = RetrievalMethod::EBR, int shots = 1) {
    return {Kind::PersonalizedPR, r, shots};
  }

  /// "passthrough", "general", "personalized:ebr:1", ...
  std::string label() const;
  static RewriteMode parse(std::string_view label);

  bool operator==(const RewriteMode&) const = default;
};

struct RewriteOptions {
  std::size_t k = 3;
  std::set<std::string> exclude;
  std::uint64_t seed = 0;
};

struct RewrittenPrompt {
  std::string text;
  RewriteMode mode;
  std::vector<std::string> retrieved;
  std::vector<std::string> demos_used;
  std::size_t word_count = 0;
  bool over_limit = false;       // word_count > 70
  bool fell_back_to_general = false;
  bool truncated = false;        // chat reply hit the length cap
  std::string request;           // exact text sent to the chat model
};

constexpr std::size_t kRewriteWordLimit = 70;

struct UserPreference {
  std::string user_id;
  std::vector<std::string> phrases;  // 1..5
  std::vector<std::string> source_sample;
};

/// Phrases joined with ", ".
std::string render_preference(const UserPreference& preference);

/// Splits a chat reply on commas, trims, drops empties, keeps the first 5.
std::vector<std::string> parse_preference_phrases(std::string_view reply);

class Rewriter {
 public:
  explicit Rewriter(ProviderSet providers, std::vector<DemoExample> demo_pool = builtin_demo_pool(),
                    Templates templates = Templates::builtin());

  /// Passthrough returns `current`; GeneralPR uses the general template;
  /// PersonalizedPR retrieves from `history` (minus options.exclude) and
  /// falls back to GeneralPR when nothing is retrievable. Provider failures
  /// are rethrown as ProviderError prefixed with the mode label.
  RewrittenPrompt rewrite(const UserHistory& history, std::string_view current, const RewriteMode& mode,
                          const RewriteOptions& options = {}) const;

  /// Samples min(50, |history|) prompts and asks the chat model for at most
  /// five preference phrases.
  UserPreference summarize_preference(const UserHistory& history, std::uint64_t seed) const;

  const ProviderSet& providers() const { return providers_; }
  const std::vector<DemoExample>& demo_pool() const { return demo_pool_; }
  const Templates& templates() const { return templates_; }

 private:
  ProviderSet providers_;
  std::vector<DemoExample> demo_pool_;
  Templates templates_;
};

constexpr std::size_t kPreferenceSampleSize = 50;

}  // namespace ppr
